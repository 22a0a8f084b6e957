//! Subcommand implementations. Each writes its tables under the configured
//! output directory and returns a short summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bpsynth_core::agents::{run_agents, AgentForecast, AgentRun};
use bpsynth_core::eval::{emit_traces, ForecastRecord, Traces, DEFAULT_PROBS};
use bpsynth_core::ldf::{run_ldf_bps, run_two_layer_ldf, LdfBpsRun, WeightFn};
use bpsynth_core::pipeline::{estimate_mcmc_time, run_dbps, run_repeated_gibbs, strided_steps, DbpsRun, GibbsRun};
use bpsynth_core::{MacroSeries, Stream};

use crate::config::RunConfig;

/// Data, agent forecasts and the synthesis window.
pub struct Prepared {
    pub data: MacroSeries,
    pub agents: AgentRun,
    /// First synthesis index (zero-based).
    pub t0: usize,
    /// First evaluation index (zero-based).
    pub eval_start: usize,
    pub end: usize,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.load_data()?;
        let specs = cfg.agent_specs()?;
        let agents = run_agents(specs, &data)?;
        let t0 = cfg.periods.learn1_end;
        if agents.start > t0 {
            bail!(
                "periods.learn1_end ({}) leaves too little history for agent lags ({})",
                cfg.periods.learn1_end,
                agents.start
            );
        }
        Ok(Prepared {
            end: data.len(),
            eval_start: cfg.periods.learn2_end,
            agents,
            data,
            t0,
        })
    }

    pub fn ys(&self) -> &[f64] {
        &self.data.y[self.t0..self.end]
    }

    pub fn forecasts(&self) -> &[AgentForecast] {
        let s = self.agents.start;
        &self.agents.forecasts[self.t0 - s..self.end - s]
    }

    /// Window offset of the first evaluation step.
    pub fn eval_offset(&self) -> usize {
        self.eval_start - self.t0
    }

    fn record(&self, i: usize, log_scores: Vec<f64>, q: &[f64], ess: Option<f64>, intervened: bool) -> ForecastRecord {
        let idx = self.t0 + i;
        ForecastRecord {
            t: idx + 1,
            date: self.data.dates()[idx].to_string(),
            y: self.data.y[idx],
            log_scores,
            quantiles: [q[0], q[1], q[2]],
            ess,
            intervened,
        }
    }

    fn date(&self, i: usize) -> String {
        self.data.dates()[self.t0 + i].to_string()
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn write_table(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("writing {}", path.display()))?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

/// Root stream of the synthesis pipelines; the plain filter is pipeline 0.
pub fn dbps_stream(seed: u64) -> Stream {
    Stream::new(seed).named("dbps")
}

pub struct FilterOutput {
    pub run: DbpsRun,
    pub traces: PathBuf,
}

pub fn cmd_filter(cfg: &RunConfig) -> Result<FilterOutput> {
    let prep = Prepared::load(cfg)?;
    let k = prep.agents.k();
    let synth = cfg.synthesis(k)?;
    let run = run_dbps(
        prep.ys(),
        prep.forecasts(),
        &synth,
        cfg.dbps_settings(cfg.smc.ess_threshold),
        dbps_stream(cfg.seed).child(0),
        Some(&DEFAULT_PROBS),
    )?;
    let dir = out_dir(cfg)?;
    let mut methods = vec!["dbps".to_string()];
    methods.extend(prep.agents.names.iter().cloned());
    let records = (0..prep.ys().len())
        .map(|i| {
            let mut scores = vec![run.log_scores[i]];
            scores.extend_from_slice(prep.agents.log_scores_at(prep.t0 + i));
            prep.record(i, scores, &run.quantiles[i], Some(run.ess[i]), run.intervened[i])
        })
        .collect();
    let traces = dir.join("filter_traces.csv");
    emit_traces(&Traces { methods, records }, &traces)?;
    write_table(
        &dir.join("filter_interventions.csv"),
        "t,date,ess,chain_size",
        run.interventions.iter().map(|e| {
            format!(
                "{},{},{},{}",
                prep.t0 + e.step + 1,
                prep.date(e.step),
                e.ess,
                e.chain_size
            )
        }),
    )?;
    let mut int_secs = vec![0.0; run.log_scores.len()];
    for e in &run.interventions {
        int_secs[e.step] = e.seconds;
    }
    write_table(
        &dir.join("filter_timing.csv"),
        "t,step_seconds,intervention_seconds",
        (0..run.log_scores.len()).map(|i| format!("{},{},{}", prep.t0 + i + 1, run.step_seconds[i], int_secs[i])),
    )?;
    Ok(FilterOutput { run, traces })
}

pub struct GibbsOutput {
    pub run: GibbsRun,
    pub traces: PathBuf,
}

pub fn cmd_gibbs(cfg: &RunConfig) -> Result<GibbsOutput> {
    let prep = Prepared::load(cfg)?;
    let synth = cfg.synthesis(prep.agents.k())?;
    let steps = strided_steps(prep.eval_offset(), prep.ys().len(), cfg.gibbs.stride);
    let run = run_repeated_gibbs(
        prep.ys(),
        prep.forecasts(),
        &synth,
        cfg.chain(),
        &steps,
        Stream::new(cfg.seed).named("gibbs"),
        Some(&DEFAULT_PROBS),
    )?;
    let dir = out_dir(cfg)?;
    let records = run
        .steps
        .iter()
        .enumerate()
        .map(|(j, &i)| prep.record(i, vec![run.log_scores[j]], &run.quantiles[j], None, false))
        .collect();
    let traces = dir.join("gibbs_traces.csv");
    emit_traces(
        &Traces {
            methods: vec!["gibbs".into()],
            records,
        },
        &traces,
    )?;
    write_table(
        &dir.join("gibbs_timing.csv"),
        "t,step_seconds",
        run.steps
            .iter()
            .zip(&run.step_seconds)
            .map(|(i, s)| format!("{},{s}", prep.t0 + i + 1)),
    )?;
    Ok(GibbsOutput { run, traces })
}

pub struct LdfOutput {
    pub bps: LdfBpsRun,
    pub files: Vec<PathBuf>,
}

pub fn cmd_ldf(cfg: &RunConfig) -> Result<LdfOutput> {
    let prep = Prepared::load(cfg)?;
    let synth = cfg.synthesis(prep.agents.k())?;
    let grid = cfg.ldf.grid.resolve()?;
    let fns = cfg.weight_fns()?;
    let threshold = cfg.ldf.ess_threshold.or(cfg.smc.ess_threshold);
    let bps = run_ldf_bps(
        prep.ys(),
        prep.forecasts(),
        &synth,
        &grid,
        cfg.ldf.gamma,
        &fns,
        cfg.dbps_settings(threshold),
        dbps_stream(cfg.seed),
        Some(&DEFAULT_PROBS),
    )?;
    let dir = out_dir(cfg)?;
    let mut files = Vec::new();
    for (f, trace) in &bps.traces {
        let name = format!("ldf_b_{}", f.letter());
        let records = (0..trace.log_scores.len())
            .map(|i| prep.record(i, vec![trace.log_scores[i]], &trace.quantiles[i], None, false))
            .collect();
        let path = dir.join(format!("{name}_traces.csv"));
        emit_traces(
            &Traces {
                methods: vec![name],
                records,
            },
            &path,
        )?;
        files.push(path);
    }
    if let Some(sel) = bps
        .selected_pairs(WeightFn::Argmax)
        .or_else(|| bps.traces.first().and_then(|(f, _)| bps.selected_pairs(*f)))
    {
        let path = dir.join("ldf_selected.csv");
        write_table(
            &path,
            "t,date,beta,delta",
            sel.iter()
                .enumerate()
                .map(|(i, d)| format!("{},{},{},{}", prep.t0 + i + 1, prep.date(i), d.beta(), d.delta())),
        )?;
        files.push(path);
    }
    let gamma1 = cfg.ldf.gamma1.resolve()?;
    for (a, b) in cfg.two_layer_variants()? {
        let name = format!("ldf_{}{}", a.letter(), b.letter());
        let out = run_two_layer_ldf(
            prep.ys(),
            prep.forecasts(),
            &gamma1,
            cfg.ldf.gamma2,
            a,
            b,
            Some(&DEFAULT_PROBS),
        )?;
        let records = (0..out.log_scores.len())
            .map(|i| prep.record(i, vec![out.log_scores[i]], &out.quantiles[i], None, false))
            .collect();
        let path = dir.join(format!("{name}_traces.csv"));
        emit_traces(
            &Traces {
                methods: vec![name],
                records,
            },
            &path,
        )?;
        files.push(path);
    }
    Ok(LdfOutput { bps, files })
}

/// Mean filtering-step time from a `filter_timing.csv`.
pub fn mean_step_seconds(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, line) in text.lines().enumerate().skip(1) {
        let cell = line
            .split(',')
            .nth(1)
            .with_context(|| format!("{}:{}: missing step_seconds", path.display(), i + 1))?;
        total += cell
            .parse::<f64>()
            .with_context(|| format!("{}:{}: step_seconds", path.display(), i + 1))?;
        n += 1;
    }
    if n == 0 {
        bail!("{}: no timing rows", path.display());
    }
    Ok(total / n as f64)
}

/// Projected repeated-MCMC time at the last evaluation step.
pub fn cmd_estimate_time(cfg: &RunConfig, t_end: Option<usize>, step_seconds: Option<f64>) -> Result<f64> {
    let step = match step_seconds {
        Some(s) => s,
        None => mean_step_seconds(&cfg.out.join("filter_timing.csv"))
            .context("no --step-seconds given; run `filter` first or pass it")?,
    };
    let t_end = match (t_end, cfg.periods.eval_end) {
        (Some(t), _) | (None, Some(t)) => t,
        (None, None) => cfg.load_data()?.len(),
    };
    Ok(estimate_mcmc_time(
        t_end,
        cfg.periods.learn1_end + 1,
        cfg.gibbs.chain,
        cfg.smc.particles,
        step,
    )?)
}
