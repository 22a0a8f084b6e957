//! Run configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bpsynth_core::agents::{default_agents, AgentSpec, Predictor};
use bpsynth_core::data::{ingest_quarterly, ingest_series_files};
use bpsynth_core::ldf::{preset_gamma1_grid, DiscountGrid, WeightFn};
use bpsynth_core::{ChainConfig, DbpsSettings, DiscountConfig, DlmMoments, MacroSeries, Resampling, SynthesisConfig};
use nalgebra::DVector;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataSection,
    pub periods: Periods,
    #[serde(default)]
    pub agents: Vec<AgentSection>,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub smc: SmcSection,
    #[serde(default)]
    pub gibbs: GibbsSection,
    #[serde(default)]
    pub ldf: LdfSection,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Quarterly file with columns `date,y,u,r`.
    pub path: Option<PathBuf>,
    /// Separate `date,value` files, monthly or quarterly.
    pub y_path: Option<PathBuf>,
    pub u_path: Option<PathBuf>,
    pub r_path: Option<PathBuf>,
}

/// One-based period ends: agents alone through `learn1_end`, synthesis
/// learning through `learn2_end`, evaluation through `eval_end`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Periods {
    pub learn1_end: usize,
    pub learn2_end: usize,
    pub eval_end: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub name: String,
    pub predictors: Vec<String>,
    #[serde(default)]
    pub m0: f64,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "two")]
    pub n0: f64,
    #[serde(default = "agent_s0")]
    pub s0: f64,
    #[serde(default = "beta_default")]
    pub beta: f64,
    #[serde(default = "delta_default")]
    pub delta: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn agent_s0() -> f64 {
    0.01
}
fn beta_default() -> f64 {
    0.99
}
fn delta_default() -> f64 {
    0.95
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    /// Prior mean; defaults to `(0, 1/K, ..., 1/K)`.
    pub m0: Option<Vec<f64>>,
    pub c0: f64,
    pub n0: f64,
    pub s0: f64,
    pub beta: f64,
    pub delta: f64,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        SynthesisSection {
            m0: None,
            c0: 1.0,
            n0: 10.0,
            s0: 0.002,
            beta: 0.99,
            delta: 0.95,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcSection {
    pub particles: usize,
    /// ESS threshold `C`; omit to disable interventions.
    pub ess_threshold: Option<f64>,
    #[serde(default)]
    pub resampling: ResamplingName,
    #[serde(default)]
    pub adaptive: bool,
}

impl Default for SmcSection {
    fn default() -> Self {
        SmcSection {
            particles: 10_000,
            ess_threshold: Some(500.0),
            resampling: ResamplingName::Multinomial,
            adaptive: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingName {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSection {
    pub chain: usize,
    /// Defaults to `chain / 10`.
    pub burn_in: Option<usize>,
    /// Score every `stride`-th evaluation step in the repeated baseline.
    #[serde(default = "stride_default")]
    pub stride: usize,
}

fn stride_default() -> usize {
    1
}

impl Default for GibbsSection {
    fn default() -> Self {
        GibbsSection {
            chain: 10_000,
            burn_in: None,
            stride: 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdfSection {
    /// `"paper-S"` or a list of `[beta, delta]` pairs.
    pub grid: GridSpec,
    pub gamma: f64,
    pub weights: Vec<String>,
    /// `"paper-gamma1"` or a list of values.
    pub gamma1: Gamma1Spec,
    pub gamma2: f64,
    /// Two-layer variants, e.g. `["ss", "sa", "as", "aa"]`.
    pub two_layer: Vec<String>,
    /// Overrides the filter's ESS threshold for the grid pipelines.
    pub ess_threshold: Option<f64>,
}

impl Default for LdfSection {
    fn default() -> Self {
        LdfSection {
            grid: GridSpec::Preset("paper-S".into()),
            gamma: 0.98,
            weights: vec!["a".into(), "s".into()],
            gamma1: Gamma1Spec::Preset("paper-gamma1".into()),
            gamma2: 0.98,
            two_layer: vec!["ss".into(), "sa".into(), "as".into(), "aa".into()],
            ess_threshold: Some(700.0),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GridSpec {
    Preset(String),
    Pairs(Vec<[f64; 2]>),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Gamma1Spec {
    Preset(String),
    Values(Vec<f64>),
}

impl GridSpec {
    /// Parses a command-line grid: a preset name or `b:d,b:d,...`.
    pub fn parse_flag(s: &str) -> Result<Self> {
        if s.contains(':') {
            let pairs = s
                .split(',')
                .map(|p| {
                    let (b, d) = p
                        .split_once(':')
                        .with_context(|| format!("grid pair {p:?} is not beta:delta"))?;
                    Ok([b.trim().parse()?, d.trim().parse()?])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GridSpec::Pairs(pairs))
        } else {
            Ok(GridSpec::Preset(s.to_string()))
        }
    }

    pub fn resolve(&self) -> Result<DiscountGrid> {
        match self {
            GridSpec::Preset(name) if name == "paper-S" => Ok(DiscountGrid::preset_s()),
            GridSpec::Preset(name) => bail!("ldf.grid: unknown preset {name:?} (known: paper-S)"),
            GridSpec::Pairs(p) => {
                let pairs: Vec<(f64, f64)> = p.iter().map(|[b, d]| (*b, *d)).collect();
                DiscountGrid::from_pairs(&pairs).context("ldf.grid")
            }
        }
    }
}

impl Gamma1Spec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            Gamma1Spec::Preset(name) if name == "paper-gamma1" => Ok(preset_gamma1_grid()),
            Gamma1Spec::Preset(name) => bail!("ldf.gamma1: unknown preset {name:?} (known: paper-gamma1)"),
            Gamma1Spec::Values(v) if v.is_empty() => bail!("ldf.gamma1: empty list"),
            Gamma1Spec::Values(v) => {
                if let Some(g) = v.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
                    bail!("ldf.gamma1: value {g} outside (0, 1]");
                }
                Ok(v.clone())
            }
        }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub chain: Option<usize>,
    pub ess_threshold: Option<f64>,
    pub grid: Option<GridSpec>,
    pub gamma: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    /// Reads a config file. Relative data and output paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.path,
            &mut cfg.data.y_path,
            &mut cfg.data.u_path,
            &mut cfg.data.r_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.particles {
            self.smc.particles = v;
        }
        if let Some(v) = o.chain {
            self.gibbs.chain = v;
        }
        if let Some(v) = o.ess_threshold {
            self.smc.ess_threshold = Some(v);
        }
        if let Some(v) = &o.grid {
            self.ldf.grid = v.clone();
        }
        if let Some(v) = o.gamma {
            self.ldf.gamma = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
    }

    /// Checks every invariant that does not need the data file.
    pub fn validate(&self) -> Result<()> {
        let p = &self.periods;
        if p.learn1_end == 0 {
            bail!("periods.learn1_end: must be >= 1");
        }
        if p.learn1_end >= p.learn2_end {
            bail!(
                "periods.learn1_end ({}) must be < periods.learn2_end ({})",
                p.learn1_end,
                p.learn2_end
            );
        }
        if let Some(e) = p.eval_end {
            if p.learn2_end >= e {
                bail!("periods.learn2_end ({}) must be < periods.eval_end ({e})", p.learn2_end);
            }
        }
        if self.smc.particles < 2 {
            bail!("smc.particles: must be >= 2, got {}", self.smc.particles);
        }
        for (name, c) in [
            ("smc.ess_threshold", self.smc.ess_threshold),
            ("ldf.ess_threshold", self.ldf.ess_threshold),
        ] {
            if let Some(c) = c {
                if !(1.0..=self.smc.particles as f64).contains(&c) {
                    bail!(
                        "{name}: must lie in [1, smc.particles = {}], got {c}",
                        self.smc.particles
                    );
                }
            }
        }
        if self.gibbs.chain == 0 {
            bail!("gibbs.chain: must be >= 1");
        }
        if self.gibbs.stride == 0 {
            bail!("gibbs.stride: must be >= 1");
        }
        for (name, g) in [("ldf.gamma", self.ldf.gamma), ("ldf.gamma2", self.ldf.gamma2)] {
            if !(g > 0.0 && g <= 1.0) {
                bail!("{name}: must lie in (0, 1], got {g}");
            }
        }
        self.ldf.grid.resolve()?;
        self.ldf.gamma1.resolve()?;
        self.weight_fns()?;
        self.two_layer_variants()?;
        let d = &self.data;
        let split = [&d.y_path, &d.u_path, &d.r_path].iter().filter(|p| p.is_some()).count();
        match (&d.path, split) {
            (Some(_), 0) | (None, 3) => {}
            (Some(_), _) => bail!("data: give either data.path or data.y_path/u_path/r_path, not both"),
            (None, _) => bail!("data.path: missing (or give all of y_path, u_path, r_path)"),
        }
        self.agent_specs()?;
        Ok(())
    }

    pub fn weight_fns(&self) -> Result<Vec<WeightFn>> {
        self.ldf
            .weights
            .iter()
            .map(|w| w.parse::<WeightFn>().map_err(|e| anyhow::anyhow!("ldf.weights: {e}")))
            .collect()
    }

    pub fn two_layer_variants(&self) -> Result<Vec<(WeightFn, WeightFn)>> {
        self.ldf
            .two_layer
            .iter()
            .map(|v| {
                let mut chars = v.chars().map(|c| c.to_string().parse::<WeightFn>());
                match (chars.next(), chars.next(), chars.next()) {
                    (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                    _ => bail!("ldf.two_layer: {v:?} is not one of ss, sa, as, aa"),
                }
            })
            .collect()
    }

    pub fn agent_specs(&self) -> Result<Vec<AgentSpec>> {
        if self.agents.is_empty() {
            return Ok(default_agents());
        }
        self.agents
            .iter()
            .map(|a| {
                let predictors = a
                    .predictors
                    .iter()
                    .map(|p| p.parse::<Predictor>())
                    .collect::<bpsynth_core::Result<Vec<_>>>()
                    .with_context(|| format!("agents.{}.predictors", a.name))?;
                let p = predictors.len() + 1;
                let init = DlmMoments::isotropic(DVector::from_element(p, a.m0), a.c0, a.n0, a.s0)
                    .with_context(|| format!("agents.{}: prior", a.name))?;
                let discount =
                    DiscountConfig::new(a.beta, a.delta).with_context(|| format!("agents.{}: discount", a.name))?;
                AgentSpec::new(a.name.clone(), predictors, init, discount).with_context(|| format!("agents.{}", a.name))
            })
            .collect()
    }

    pub fn synthesis(&self, k: usize) -> Result<SynthesisConfig> {
        let s = &self.synthesis;
        let m = match &s.m0 {
            Some(m) if m.len() != k + 1 => bail!("synthesis.m0: expected {} values, got {}", k + 1, m.len()),
            Some(m) => DVector::from_vec(m.clone()),
            None => {
                let mut m = DVector::from_element(k + 1, 1.0 / k as f64);
                m[0] = 0.0;
                m
            }
        };
        let init = DlmMoments::isotropic(m, s.c0, s.n0, s.s0).context("synthesis: prior")?;
        let discount = DiscountConfig::new(s.beta, s.delta).context("synthesis: discount")?;
        Ok(SynthesisConfig::new(init, discount)?)
    }

    pub fn chain(&self) -> ChainConfig {
        match self.gibbs.burn_in {
            Some(b) => ChainConfig::with_burn_in(self.gibbs.chain, b),
            None => ChainConfig::new(self.gibbs.chain),
        }
    }

    pub fn dbps_settings(&self, ess_threshold: Option<f64>) -> DbpsSettings {
        let mut s = DbpsSettings::new(self.smc.particles, ess_threshold, self.chain());
        s.smc.resampling = match self.smc.resampling {
            ResamplingName::Multinomial => Resampling::Multinomial,
            ResamplingName::Systematic => Resampling::Systematic,
        };
        s.smc.adaptive = self.smc.adaptive;
        s
    }

    pub fn load_data(&self) -> Result<MacroSeries> {
        let series = match (&self.data.path, &self.data.y_path, &self.data.u_path, &self.data.r_path) {
            (Some(p), ..) => ingest_quarterly(p)?,
            (None, Some(y), Some(u), Some(r)) => ingest_series_files(y, u, r)?,
            _ => bail!("data.path: missing"),
        };
        let end = self.periods.eval_end.unwrap_or(series.len());
        if end > series.len() {
            bail!("periods.eval_end ({end}) exceeds the series length ({})", series.len());
        }
        if self.periods.learn2_end >= end {
            bail!(
                "periods.learn2_end ({}) must be < series end ({end})",
                self.periods.learn2_end
            );
        }
        Ok(series.truncate(end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [data]
        path = "x.csv"
        [periods]
        learn1_end = 65
        learn2_end = 116
    "#;

    #[test]
    fn defaults_are_the_study_settings() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.smc.particles, 10_000);
        assert_eq!(c.smc.ess_threshold, Some(500.0));
        assert_eq!(c.gibbs.chain, 10_000);
        assert_eq!(c.ldf.gamma, 0.98);
        assert_eq!(c.ldf.grid.resolve().unwrap().len(), 35);
        assert_eq!(c.ldf.gamma1.resolve().unwrap().len(), 15);
        assert_eq!(c.agent_specs().unwrap().len(), 4);
        let s = c.synthesis(4).unwrap();
        assert_eq!(s, SynthesisConfig::default_prior(4));
    }

    fn err(extra: &str) -> String {
        let c = match RunConfig::from_toml(&format!("{MINIMAL}\n{extra}")) {
            Ok(c) => c,
            Err(e) => return e.to_string(),
        };
        c.validate().unwrap_err().to_string()
    }

    #[test]
    fn validation_names_the_field() {
        assert!(err("[smc]\nparticles = 1").contains("smc.particles"));
        assert!(err("[smc]\nparticles = 100\ness_threshold = 101.0").contains("smc.ess_threshold"));
        assert!(err("[smc]\nparticles = 100\ness_threshold = 0.5").contains("smc.ess_threshold"));
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.periods.learn2_end = 60;
        assert!(c.validate().unwrap_err().to_string().contains("periods.learn1_end"));
        c.periods.learn2_end = 116;
        c.periods.eval_end = Some(100);
        assert!(c.validate().unwrap_err().to_string().contains("periods.learn2_end"));
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.ldf.gamma = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("ldf.gamma"));
        c.ldf.gamma = 0.98;
        c.ldf.grid = GridSpec::Preset("nope".into());
        assert!(c.validate().unwrap_err().to_string().contains("ldf.grid"));
        assert!(err("[gibbs]\nchain = 0").contains("gibbs.chain"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\nbogus = 1")).is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            particles: Some(50),
            ess_threshold: Some(5.0),
            grid: Some(GridSpec::parse_flag("0.99:0.95,0.9:0.9").unwrap()),
            ..Default::default()
        });
        assert_eq!((c.seed, c.smc.particles, c.smc.ess_threshold), (9, 50, Some(5.0)));
        assert_eq!(c.ldf.grid.resolve().unwrap().len(), 2);
    }

    #[test]
    fn custom_agents() {
        let c = RunConfig::from_toml(&format!(
            "{MINIMAL}\n[[agents]]\nname = \"A\"\npredictors = [\"y1\", \"u2\"]\n[[agents]]\nname = \"B\"\npredictors = [\"r1\"]\nbeta = 0.9"
        ))
        .unwrap();
        let specs = c.agent_specs().unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].max_lag(), 2);
        assert_eq!(specs[1].discount.beta(), 0.9);
        let bad = RunConfig::from_toml(&format!("{MINIMAL}\n[[agents]]\nname = \"A\"\npredictors = [\"q1\"]")).unwrap();
        assert!(bad.validate().unwrap_err().to_string().contains("agents.A"));
    }
}
