#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod data;
pub mod density;
pub mod dlm;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod ldf;
pub mod pipeline;
pub mod rng;
pub mod smc;
pub mod synthesis;

pub use agents::{AgentBank, AgentForecast, AgentRun, AgentSpec, Predictor, Variable};
pub use data::{MacroSeries, Quarter};
pub use density::{Density, StudentT, TMixture};
pub use dlm::{DiscountConfig, DlmMoments, DlmPrior};
pub use error::{Error, Result};
pub use gibbs::{ChainConfig, GibbsSampler, XPath};
pub use ldf::{DiscountGrid, LdplLedger, WeightFn};
pub use pipeline::{DbpsRun, DbpsSettings, GibbsRun};
pub use rng::Stream;
pub use smc::{ParticleCloud, Resampling, SmcConfig};
pub use synthesis::SynthesisConfig;
