//! Declarative experiments: a JSON config names an environment, a list of
//! agents and a list of seeds; running it writes one trace per
//! `(agent, seed)`, one aggregate per agent and a manifest.
//!
//! Output layout under `out`:
//!
//! ```text
//! manifest.json
//! traces/<agent>_seed<k>.csv
//! aggregate/<agent>.csv        x column, then <col>_mean, <col>_std
//! verify_report.{json,txt}     verify mode only
//! stackelberg_bias.csv         verify mode only
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    run_dp, run_sample_agent, DpActorRule, DpAgentConfig, DpCriticRule, SampleAgentConfig, SampleAlgorithm,
};
use crate::envs::{random_mdp, FourRoomSpec};
use crate::error::{Error, Result};
use crate::mdp::{optimal_objective, TabularMdp};
use crate::trace::TrainingTrace;
use crate::verify::{measure_stackelberg_bias, verify_all, BatchSize, BiasConfig, InstanceFamily, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dp,
    Sample,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    /// The built-in layout unless `spec` gives a FourRoom JSON document.
    Fourroom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<serde_json::Value>,
    },
    Random {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        seed: u64,
        #[serde(default = "unit")]
        reward_scale: f64,
    },
    /// A serialized `TabularMdp`.
    File { path: PathBuf },
}

fn unit() -> f64 {
    1.0
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Fourroom { spec: None }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            EnvConfig::Fourroom { spec: None } => FourRoomSpec::default().to_mdp(),
            EnvConfig::Fourroom { spec: Some(v) } => FourRoomSpec::from_json(&v.to_string())?.to_mdp(),
            EnvConfig::Random {
                n_states,
                n_actions,
                gamma,
                seed,
                reward_scale,
            } => {
                let dim = n_states.checked_mul(*n_actions).unwrap_or(usize::MAX);
                if *n_states == 0 || *n_actions == 0 || *n_states > 512 || dim > 4096 {
                    return Err(Error::InvalidConfig(
                        "random env needs 1..=512 states and at most 4096 state-action pairs".into(),
                    ));
                }
                if !(0.0..1.0).contains(gamma) || !reward_scale.is_finite() || *reward_scale < 0.0 {
                    return Err(Error::InvalidConfig("random env needs gamma in [0,1) and a finite reward_scale".into()));
                }
                Ok(random_mdp(*n_states, *n_actions, *seed, *reward_scale, *gamma))
            }
            EnvConfig::File { path } => TabularMdp::from_json(&fs::read_to_string(path)?),
        }
    }
}

/// One agent: a name (used in file names) and exactly one of the two
/// config kinds, matching the experiment mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpAgentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleAgentConfig>,
}

impl AgentEntry {
    pub fn dp(name: &str, config: DpAgentConfig) -> Self {
        Self {
            name: Some(name.into()),
            dp: Some(config),
            sample: None,
        }
    }

    pub fn sample(name: &str, config: SampleAgentConfig) -> Self {
        Self {
            name: Some(name.into()),
            dp: None,
            sample: Some(config),
        }
    }

    /// Explicit name, else one derived from the config.
    pub fn resolved_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let tag = |v: serde_json::Value| v.as_str().unwrap_or("agent").to_string();
        match (&self.dp, &self.sample) {
            (Some(c), _) => format!(
                "{}+{}",
                tag(serde_json::to_value(c.actor_rule).unwrap_or_default()),
                tag(serde_json::to_value(c.critic_rule).unwrap_or_default())
            ),
            (None, Some(c)) => tag(serde_json::to_value(c.algorithm).unwrap_or_default()),
            (None, None) => "agent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    #[serde(default)]
    pub family: InstanceFamily,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed_start: u64,
    #[serde(default = "hundred")]
    pub seed_end: u64,
    #[serde(default)]
    pub bias: BiasConfig,
    #[serde(default = "default_bias_sizes")]
    pub bias_batch_sizes: Vec<BatchSize>,
    /// Instances (from the family) on which the bias table is measured.
    #[serde(default = "default_bias_instances")]
    pub bias_instances: Vec<u64>,
}

fn hundred() -> u64 {
    100
}

fn default_bias_sizes() -> Vec<BatchSize> {
    vec![
        BatchSize::Sampled(30),
        BatchSize::Sampled(300),
        BatchSize::Sampled(3000),
        BatchSize::Exhaustive,
    ]
}

fn default_bias_instances() -> Vec<u64> {
    (0..5).collect()
}

impl Default for VerifySettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agents: Vec<AgentEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySettings>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// The four sample-based agents with default hyperparameters on
    /// FourRoom, seeds 0–2.
    pub fn default_sample() -> Self {
        Self {
            mode: Mode::Sample,
            env: EnvConfig::default(),
            agents: SampleAlgorithm::ALL
                .iter()
                .map(|&a| AgentEntry {
                    name: None,
                    dp: None,
                    sample: Some(SampleAgentConfig::new(a)),
                })
                .collect(),
            seeds: default_seeds(),
            out: None,
            verify: None,
        }
    }

    /// Exact PG plus Actor_o/Actor_g with both critic rules, on FourRoom.
    pub fn default_dp() -> Self {
        let (br, td) = (DpCriticRule::BellmanResidualFull, DpCriticRule::TemporalDifferenceSemi);
        let pairs = [
            (DpActorRule::Pg, br),
            (DpActorRule::Pg, td),
            (DpActorRule::ActorO, br),
            (DpActorRule::ActorO, td),
            (DpActorRule::ActorG, br),
            (DpActorRule::ActorG, td),
        ];
        Self {
            mode: Mode::Dp,
            env: EnvConfig::default(),
            agents: pairs
                .iter()
                .map(|&(a, c)| AgentEntry {
                    name: None,
                    dp: Some(DpAgentConfig::new(a, c)),
                    sample: None,
                })
                .collect(),
            seeds: default_seeds(),
            out: None,
            verify: None,
        }
    }

    pub fn default_verify() -> Self {
        Self {
            mode: Mode::Verify,
            env: EnvConfig::default(),
            agents: vec![],
            seeds: vec![0],
            out: None,
            verify: Some(VerifySettings::default()),
        }
    }

    /// Checks everything that can be checked without running an agent:
    /// seeds, agent names and configs, and that the environment builds.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self.mode {
            Mode::Verify => {
                let v = self.verify.clone().unwrap_or_default();
                v.family.validate()?;
                if v.seed_end <= v.seed_start {
                    return bad("verify seed range is empty".into());
                }
                if !v.bias.eta.is_finite() || v.bias.eta <= 0.0 || v.bias.repetitions == 0 {
                    return bad("bias measurement needs eta > 0 and repetitions > 0".into());
                }
                return Ok(());
            }
            Mode::Dp | Mode::Sample => {}
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.agents.is_empty() {
            return bad("at least one agent is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for agent in &self.agents {
            let name = agent.resolved_name();
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.'))
                || name.starts_with('.')
            {
                return bad(format!("agent name {name:?} must be [A-Za-z0-9_+.-] and not start with '.'"));
            }
            if !names.insert(name.clone()) {
                return bad(format!("duplicate agent name {name:?}"));
            }
            match (self.mode, &agent.dp, &agent.sample) {
                (Mode::Dp, Some(c), None) => c.validate()?,
                (Mode::Sample, None, Some(c)) => c.validate()?,
                _ => return bad(format!("agent {name:?} must carry exactly one config matching the mode")),
            }
        }
        self.env.build()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    /// Optimal `J*` of the environment (value iteration), for thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_star: Option<f64>,
    pub traces: Vec<String>,
    pub aggregates: Vec<String>,
    #[serde(default)]
    pub verification_passed: Option<bool>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
    /// `false` only when a verify run has failing checks.
    pub passed: bool,
}

pub fn trace_file_name(agent: &str, seed: u64) -> String {
    format!("{agent}_seed{seed}.csv")
}

/// Runs the experiment. The config is validated before anything is
/// written. `jobs` bounds the worker threads (`None`: rayon's default).
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, jobs: Option<usize>) -> Result<RunOutcome> {
    config.validate()?;
    let mut resolved = config.clone();
    resolved.out = None;
    for a in &mut resolved.agents {
        a.name = Some(a.resolved_name());
    }
    if resolved.mode == Mode::Verify && resolved.verify.is_none() {
        resolved.verify = Some(VerifySettings::default());
    }
    fs::create_dir_all(out_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::InvalidConfig("jobs must be positive".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| match resolved.mode {
        Mode::Verify => run_verify(&resolved, out_dir),
        Mode::Dp | Mode::Sample => run_agents(&resolved, out_dir),
    })?;
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&outcome.manifest).expect("manifest serialises") + "\n",
    )?;
    Ok(outcome)
}

fn run_agents(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let mdp = config.env.build()?;
    let traces_dir = out_dir.join("traces");
    let agg_dir = out_dir.join("aggregate");
    fs::create_dir_all(&traces_dir)?;
    fs::create_dir_all(&agg_dir)?;

    let jobs: Vec<(usize, u64)> = (0..config.agents.len())
        .flat_map(|a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<TrainingTrace> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let agent = &config.agents[a];
            let trace = match (&agent.dp, &agent.sample) {
                (Some(c), _) => run_dp(&mdp, c, seed)?,
                (None, Some(c)) => run_sample_agent(&mdp, c, seed)?,
                (None, None) => unreachable!("validated"),
            };
            trace.save(&traces_dir.join(trace_file_name(&agent.resolved_name(), seed)))?;
            Ok(trace)
        })
        .collect::<Result<_>>()?;

    let mut trace_files = Vec::new();
    let mut aggregate_files = Vec::new();
    for (a, agent) in config.agents.iter().enumerate() {
        let name = agent.resolved_name();
        let per_seed: Vec<&TrainingTrace> = jobs
            .iter()
            .zip(&results)
            .filter(|((i, _), _)| *i == a)
            .map(|(_, t)| t)
            .collect();
        for &seed in &config.seeds {
            trace_files.push(format!("traces/{}", trace_file_name(&name, seed)));
        }
        let agg = aggregate(&per_seed)?;
        let file = format!("aggregate/{name}.csv");
        agg.save(&out_dir.join(&file))?;
        aggregate_files.push(file);
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        j_star: Some(optimal_objective(&mdp.with_gamma(effective_gamma(config, &mdp))?)),
        traces: trace_files,
        aggregates: aggregate_files,
        verification_passed: None,
    };
    Ok(RunOutcome {
        manifest,
        out_dir: out_dir.to_path_buf(),
        passed: true,
    })
}

/// Sample agents may override the environment's discount; `J*` is reported
/// for the first agent's discount.
fn effective_gamma(config: &ExperimentConfig, mdp: &TabularMdp) -> f64 {
    config
        .agents
        .iter()
        .find_map(|a| a.sample.as_ref().map(|c| c.gamma))
        .unwrap_or(mdp.gamma())
}

fn run_verify(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let v = config.verify.clone().unwrap_or_default();
    let report = verify_all(&v.family, &v.tolerances, v.seed_start..v.seed_end)?;
    fs::write(out_dir.join("verify_report.json"), report.to_json() + "\n")?;
    fs::write(out_dir.join("verify_report.txt"), report.to_text())?;

    let mut bias = TrainingTrace::new(&["instance", "batch_size", "gap", "upsilon_delta_norm"]);
    for &seed in &v.bias_instances {
        let inst = v.family.instance(seed)?;
        let rows = measure_stackelberg_bias(&inst.mdp, &inst.policy, &inst.critic, &v.bias_batch_sizes, &v.bias)?;
        for r in rows {
            let size = match r.batch_size {
                BatchSize::Exhaustive => None,
                BatchSize::Sampled(n) => Some(n as f64),
            };
            bias.push(vec![Some(seed as f64), size, Some(r.gap), Some(r.upsilon_delta_norm)]);
        }
    }
    bias.save(&out_dir.join("stackelberg_bias.csv"))?;

    let passed = report.passed();
    Ok(RunOutcome {
        manifest: Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            j_star: None,
            traces: vec![],
            aggregates: vec!["stackelberg_bias.csv".into()],
            verification_passed: Some(passed),
        },
        out_dir: out_dir.to_path_buf(),
        passed,
    })
}

/// Per-row mean and population standard deviation across seeds. The first
/// column is the shared x axis and is copied; a statistic is missing when
/// any seed lacks the value.
pub fn aggregate(traces: &[&TrainingTrace]) -> Result<TrainingTrace> {
    let first = traces.first().ok_or_else(|| Error::SchemaMismatch("no traces to aggregate".into()))?;
    let cols = first.columns();
    for t in traces {
        if t.columns() != cols {
            return Err(Error::SchemaMismatch("traces have different columns".into()));
        }
        if t.len() != first.len() {
            return Err(Error::SchemaMismatch("traces have different lengths".into()));
        }
    }
    let mut header = vec![cols[0].clone()];
    for c in &cols[1..] {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    let mut out = TrainingTrace::new(&header);
    let n = traces.len() as f64;
    for r in 0..first.len() {
        let mut row = vec![first.rows()[r][0]];
        for c in 1..cols.len() {
            let values: Option<Vec<f64>> = traces.iter().map(|t| t.rows()[r][c]).collect();
            match values {
                Some(v) => {
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    row.push(Some(mean));
                    row.push(Some(var.sqrt()));
                }
                None => {
                    row.push(None);
                    row.push(None);
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Reference for steps-to-threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdReference {
    /// `fraction × J*`.
    Optimal(f64),
    /// `fraction ×` each trace's own final value.
    OwnFinal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: String,
    pub seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
    /// Mean over seeds of the first x value at which the metric reaches the
    /// threshold; `None` when some seed never reaches it.
    pub steps_to_threshold: Option<f64>,
    pub seeds_reaching_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub metric: String,
    pub x_column: String,
    pub threshold_fraction: f64,
    pub agents: Vec<AgentSummary>,
    /// Pairwise comparisons of final means, `(a, relation, b)` with relation
    /// `>`, `<` or `=`.
    pub ordering: Vec<(String, String, String)>,
}

impl Summary {
    pub fn agent(&self, name: &str) -> Option<&AgentSummary> {
        self.agents.iter().find(|a| a.agent == name)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>5} {:>12} {:>12} {:>16}",
            "agent",
            "seeds",
            format!("final {}", self.metric),
            "std",
            format!("{} to {:.0}%", self.x_column, 100.0 * self.threshold_fraction)
        );
        for a in &self.agents {
            let steps = match a.steps_to_threshold {
                Some(s) => format!("{s:.1}"),
                None => format!("never ({}/{})", a.seeds_reaching_threshold, a.seeds),
            };
            let _ = writeln!(
                out,
                "{:<28} {:>5} {:>12.6} {:>12.6} {:>16}",
                a.agent, a.seeds, a.final_mean, a.final_std, steps
            );
        }
        for (a, rel, b) in &self.ordering {
            let _ = writeln!(out, "{a} {rel} {b}");
        }
        out
    }
}

/// Agent name from a `<agent>_seed<k>.csv` file name.
pub fn agent_from_file_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let (agent, seed) = stem.rsplit_once("_seed")?;
    seed.parse::<u64>().ok()?;
    Some(agent.to_string())
}

/// Final-value statistics, steps-to-threshold and the pairwise ordering.
/// All traces must share one schema; the metric is `exact_J` with x axis
/// `env_steps` when present, else `J` over `iteration`.
pub fn summarize(traces: &[(String, TrainingTrace)], fraction: f64, reference: ThresholdReference) -> Result<Summary> {
    let (_, first) = traces.first().ok_or_else(|| Error::SchemaMismatch("no traces".into()))?;
    if traces.iter().any(|(_, t)| t.columns() != first.columns()) {
        return Err(Error::SchemaMismatch("traces have different columns".into()));
    }
    let (metric, x) = if first.column_index("exact_J").is_some() && first.column_index("env_steps").is_some() {
        ("exact_J", "env_steps")
    } else if first.column_index("J").is_some() && first.column_index("iteration").is_some() {
        ("J", "iteration")
    } else {
        return Err(Error::SchemaMismatch("traces carry neither exact_J/env_steps nor J/iteration".into()));
    };

    let mut grouped: BTreeMap<&str, Vec<&TrainingTrace>> = BTreeMap::new();
    for (agent, t) in traces {
        if t.is_empty() {
            return Err(Error::SchemaMismatch(format!("empty trace for {agent}")));
        }
        grouped.entry(agent).or_default().push(t);
    }

    let mut agents = Vec::new();
    for (agent, ts) in grouped {
        let mut finals = Vec::new();
        let mut steps = Vec::new();
        for t in &ts {
            let ys = t.values(metric)?;
            let xs = t.values(x)?;
            let last = *ys.last().expect("non-empty");
            finals.push(last);
            let target = match reference {
                ThresholdReference::Optimal(j_star) => fraction * j_star,
                ThresholdReference::OwnFinal => fraction * last,
            };
            if let Some(i) = ys.iter().position(|&y| y >= target) {
                steps.push(xs[i]);
            }
        }
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let std = (finals.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n).sqrt();
        agents.push(AgentSummary {
            agent: agent.to_string(),
            seeds: ts.len(),
            final_mean: mean,
            final_std: std,
            steps_to_threshold: (steps.len() == ts.len()).then(|| steps.iter().sum::<f64>() / n),
            seeds_reaching_threshold: steps.len(),
        });
    }

    let mut ordering = Vec::new();
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            let (a, b) = (&agents[i], &agents[j]);
            let rel = if a.final_mean == b.final_mean {
                "="
            } else if a.final_mean > b.final_mean {
                ">"
            } else {
                "<"
            };
            ordering.push((a.agent.clone(), rel.to_string(), b.agent.clone()));
        }
    }
    Ok(Summary {
        metric: metric.to_string(),
        x_column: x.to_string(),
        threshold_fraction: fraction,
        agents,
        ordering,
    })
}

/// Named per-seed traces, as read back from disk.
pub type NamedTraces = Vec<(String, TrainingTrace)>;

/// Loads `(agent, trace)` pairs from files named `<agent>_seed<k>.csv`, or
/// from the `traces/` directory of a run; also returns `J*` from the run's
/// manifest when one is found.
pub fn load_traces(paths: &[PathBuf]) -> Result<(NamedTraces, Option<f64>)> {
    let mut files = Vec::new();
    let mut j_star = None;
    for p in paths {
        if p.is_dir() {
            let manifest = p.join("manifest.json");
            if manifest.exists() {
                let m: Manifest = serde_json::from_str(&fs::read_to_string(&manifest)?)?;
                j_star = j_star.or(m.j_star);
            }
            let dir = if p.join("traces").is_dir() { p.join("traces") } else { p.clone() };
            let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|e| e.extension().is_some_and(|x| x == "csv"));
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    let mut out = Vec::new();
    for f in files {
        let agent = agent_from_file_name(&f)
            .ok_or_else(|| Error::SchemaMismatch(format!("{} is not named <agent>_seed<k>.csv", f.display())))?;
        out.push((agent, TrainingTrace::load(&f)?));
    }
    if out.is_empty() {
        return Err(Error::SchemaMismatch("no trace files found".into()));
    }
    Ok((out, j_star))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(cols: &[&str], rows: &[&[f64]]) -> TrainingTrace {
        let mut t = TrainingTrace::new(cols);
        for r in rows {
            t.push(r.iter().map(|&x| Some(x)).collect());
        }
        t
    }

    fn dp_trace(j: &[f64]) -> TrainingTrace {
        let mut t = TrainingTrace::new(&crate::trace::DP_COLUMNS);
        for (i, &x) in j.iter().enumerate() {
            t.push(vec![Some(i as f64), Some(x), Some(x), None]);
        }
        t
    }

    fn tiny_sample_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_sample();
        cfg.env = EnvConfig::Random {
            n_states: 3,
            n_actions: 2,
            gamma: 0.9,
            seed: 4,
            reward_scale: 1.0,
        };
        for a in &mut cfg.agents {
            let c = a.sample.as_mut().unwrap();
            c.episodes = 5;
            c.episode_length = 20;
            c.batch_size = 10;
        }
        cfg
    }

    #[test]
    fn constant_trace_summary() {
        let s = summarize(&[("a".into(), dp_trace(&[2.0, 2.0, 2.0]))], 0.9, ThresholdReference::OwnFinal).unwrap();
        assert_eq!(s.agents[0].final_mean, 2.0);
        assert_eq!(s.agents[0].final_std, 0.0);
        assert_eq!(s.agents[0].steps_to_threshold, Some(0.0));
    }

    #[test]
    fn tie_is_reported() {
        let s = summarize(
            &[("a".into(), dp_trace(&[0.0, 1.0])), ("b".into(), dp_trace(&[1.0, 1.0]))],
            0.9,
            ThresholdReference::OwnFinal,
        )
        .unwrap();
        assert_eq!(s.agent("a").unwrap().final_mean, 1.0);
        assert_eq!(s.agent("b").unwrap().final_mean, 1.0);
        assert_eq!(s.ordering, vec![("a".into(), "=".into(), "b".into())]);
        assert_eq!(s.agent("a").unwrap().steps_to_threshold, Some(1.0));
        assert_eq!(s.agent("b").unwrap().steps_to_threshold, Some(0.0));
    }

    #[test]
    fn threshold_against_optimum_can_be_missed() {
        let s = summarize(&[("a".into(), dp_trace(&[0.1, 0.5]))], 0.9, ThresholdReference::Optimal(1.0)).unwrap();
        assert_eq!(s.agents[0].steps_to_threshold, None);
        assert_eq!(s.agents[0].seeds_reaching_threshold, 0);
        assert!(s.to_text().contains("never (0/1)"));
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let other = trace(&["iteration", "J"], &[&[0.0, 1.0]]);
        assert!(matches!(
            summarize(&[("a".into(), dp_trace(&[1.0])), ("b".into(), other)], 0.9, ThresholdReference::OwnFinal),
            Err(Error::SchemaMismatch(_))
        ));
        let unknown = trace(&["x", "y"], &[&[0.0, 1.0]]);
        assert!(summarize(&[("a".into(), unknown)], 0.9, ThresholdReference::OwnFinal).is_err());
    }

    #[test]
    fn aggregate_uses_population_std() {
        let a = trace(&["episode", "v"], &[&[0.0, 1.0], &[1.0, 2.0]]);
        let b = trace(&["episode", "v"], &[&[0.0, 3.0], &[1.0, 2.0]]);
        let agg = aggregate(&[&a, &b]).unwrap();
        assert_eq!(agg.columns(), &["episode", "v_mean", "v_std"]);
        assert_eq!(agg.rows()[0], vec![Some(0.0), Some(2.0), Some(1.0)]);
        assert_eq!(agg.rows()[1], vec![Some(1.0), Some(2.0), Some(0.0)]);
        let short = trace(&["episode", "v"], &[&[0.0, 3.0]]);
        assert!(aggregate(&[&a, &short]).is_err());
    }

    #[test]
    fn file_names_parse() {
        assert_eq!(agent_from_file_name(Path::new("x/ResAC_seed2.csv")).as_deref(), Some("ResAC"));
        assert_eq!(agent_from_file_name(Path::new("PG+BR_seed_seed10.csv")).as_deref(), Some("PG+BR_seed"));
        assert_eq!(agent_from_file_name(Path::new("nope.csv")), None);
    }

    #[test]
    fn default_configs_validate_and_carry_the_table_values() {
        for cfg in [
            ExperimentConfig::default_sample(),
            ExperimentConfig::default_dp(),
            ExperimentConfig::default_verify(),
        ] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
        let json = ExperimentConfig::default_sample().to_json();
        for needle in [
            "\"gamma\": 0.9",
            "\"actor_lr\": 0.01",
            "\"critic_lr\": 0.02",
            "\"batch_size\": 300",
            "\"eta\": 0.5",
        ] {
            assert!(json.contains(needle), "{needle} missing");
        }
    }

    #[test]
    fn oversized_random_env_is_rejected_without_overflow() {
        let env = EnvConfig::Random {
            n_states: usize::MAX,
            n_actions: 2,
            gamma: 0.9,
            seed: 0,
            reward_scale: 1.0,
        };
        assert!(env.build().is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::default_sample();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default_sample();
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default_sample();
        c.agents[1].name = Some("ActorO".into());
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default_sample();
        c.agents[0].name = Some("../x".into());
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default_dp();
        c.mode = Mode::Sample;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"mode":"dp","bogus":1}"#).is_err());
    }

    #[test]
    fn run_writes_the_file_contract_and_is_deterministic() {
        let cfg = tiny_sample_config();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let out = run_experiment(&cfg, &a, Some(2)).unwrap();
        run_experiment(&cfg, &b, Some(1)).unwrap();
        assert_eq!(out.manifest.traces.len(), 12);
        assert_eq!(out.manifest.aggregates.len(), 4);
        for f in out.manifest.traces.iter().chain(&out.manifest.aggregates) {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());

        // Aggregates are recomputable from the per-seed files.
        let (traces, j_star) = load_traces(std::slice::from_ref(&a)).unwrap();
        assert!(j_star.is_some());
        let resac: Vec<&TrainingTrace> = traces.iter().filter(|(n, _)| n == "ResAC").map(|(_, t)| t).collect();
        assert_eq!(resac.len(), 3);
        let agg = TrainingTrace::load(&a.join("aggregate/ResAC.csv")).unwrap();
        assert_eq!(aggregate(&resac).unwrap(), agg);
    }

    #[test]
    fn verify_mode_writes_report_and_bias_table() {
        let mut cfg = ExperimentConfig::default_verify();
        let v = cfg.verify.as_mut().unwrap();
        v.seed_end = 6;
        v.bias.repetitions = 2;
        v.bias_instances = vec![0];
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&cfg, dir.path(), None).unwrap();
        assert!(out.passed);
        assert!(dir.path().join("verify_report.json").exists());
        let bias = TrainingTrace::load(&dir.path().join("stackelberg_bias.csv")).unwrap();
        assert_eq!(bias.len(), 4);

        cfg.verify.as_mut().unwrap().tolerances = Tolerances::uniform(0.0);
        let out = run_experiment(&cfg, dir.path(), None).unwrap();
        assert!(!out.passed);
        assert_eq!(out.manifest.verification_passed, Some(false));
    }
}
