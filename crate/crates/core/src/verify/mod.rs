//! Certification harness: every closed-form identity and every closed form
//! versus its oracle, over a seeded family of random instances.

pub mod oracle;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::sample::{stack_actor_update, stack_direction};
use crate::batch::{Batch, StateBatch};
use crate::envs::{random_critic, random_mdp, random_policy};
use crate::error::{Error, Result};
use crate::gradients::{
    gap_corrections, grad_actor_g, grad_actor_o, grad_policy_exact, grad_res_actor, stationary_derivative,
};
use crate::mdp::{
    actor_objective, policy_objective, residual, solve_q_values, solve_res_q_values, solve_stationary, TabularMdp,
};
use crate::policy::{CriticTable, ResCriticTable, SoftmaxPolicy};
use crate::rng::{rng_for, stream};
use crate::stackelberg::{stackelberg_gradient_full, stackelberg_gradient_regularized, stackelberg_gradient_semi};

/// Generator for the random instances: instance `k` of a seed range takes
/// the `k`-th combination of sizes and discounts, cycling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFamily {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub gammas: Vec<f64>,
    #[serde(default = "unit")]
    pub reward_scale: f64,
    #[serde(default = "unit")]
    pub policy_scale: f64,
    #[serde(default = "unit")]
    pub critic_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for InstanceFamily {
    fn default() -> Self {
        Self {
            states: vec![2, 3, 4, 6],
            actions: vec![2, 3],
            gammas: vec![0.5, 0.9, 0.99],
            reward_scale: 1.0,
            policy_scale: 1.0,
            critic_scale: 1.0,
        }
    }
}

/// One `(MDP, policy, critic)` triple.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub mdp: TabularMdp,
    pub policy: SoftmaxPolicy,
    pub critic: CriticTable,
}

impl InstanceFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.states.is_empty() || self.actions.is_empty() || self.gammas.is_empty() {
            return bad("instance family needs at least one size and one discount");
        }
        if self.states.iter().chain(&self.actions).any(|&n| n == 0 || n > 64) {
            return bad("state and action counts must be in 1..=64");
        }
        if self.gammas.iter().any(|g| !(0.0..1.0).contains(g)) {
            return bad("discounts must lie in [0, 1)");
        }
        for x in [self.reward_scale, self.policy_scale, self.critic_scale] {
            if !x.is_finite() || x < 0.0 {
                return bad("scales must be finite and nonnegative");
            }
        }
        Ok(())
    }

    pub fn instance(&self, seed: u64) -> Result<Instance> {
        self.validate()?;
        let k = seed as usize;
        let (ns, na) = (self.states.len(), self.actions.len());
        let n_s = self.states[k % ns];
        let n_a = self.actions[(k / ns) % na];
        let gamma = self.gammas[(k / (ns * na)) % self.gammas.len()];
        let mdp = random_mdp(n_s, n_a, seed, self.reward_scale, gamma);
        Ok(Instance {
            seed,
            policy: random_policy(n_s, n_a, seed, self.policy_scale),
            critic: random_critic(n_s * n_a, seed, self.critic_scale),
            mdp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Identities among closed forms.
    pub closed_form: f64,
    /// Closed forms against finite differences or series (relative).
    pub finite_difference: f64,
    /// Stackelberg gradients against exact PG.
    pub stackelberg: f64,
    /// Regularized Stackelberg at large η against `∂θJπ`.
    pub eta_limit: f64,
    /// The scalar objective gap.
    pub scalar_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            closed_form: 1e-9,
            finite_difference: 1e-4,
            stackelberg: 1e-8,
            eta_limit: 1e-6,
            scalar_gap: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            closed_form: tol,
            finite_difference: tol,
            stackelberg: tol,
            eta_limit: tol,
            scalar_gap: tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `‖a − b‖∞`.
    Absolute,
    /// `‖a − b‖∞ / max(‖b‖∞, 1e-3)`.
    Relative,
}

/// The regularization used by the large-η limit check.
pub const ETA_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tol {
    Closed,
    Fd,
    Stack,
    EtaLimit,
    Scalar,
}

struct CheckDef {
    name: &'static str,
    metric: Metric,
    tol: Tol,
}

const fn def(name: &'static str, metric: Metric, tol: Tol) -> CheckDef {
    CheckDef { name, metric, tol }
}

use Metric::{Absolute as Abs, Relative as Rel};

/// Registered checks, in report order.
const CHECKS: [CheckDef; 16] = [
    def("occupancy_vs_series", Abs, Tol::Closed),
    def("q_values_vs_series", Rel, Tol::Closed),
    def("upsilon_vs_fd", Rel, Tol::Fd),
    def("pg_vs_fd", Rel, Tol::Fd),
    def("actor_o_vs_fd", Rel, Tol::Fd),
    def("gap_full_closed", Abs, Tol::Closed),
    def("gap_full_vs_fd", Rel, Tol::Fd),
    def("gap_upsilon_closed", Abs, Tol::Closed),
    def("gap_upsilon_vs_fd", Rel, Tol::Fd),
    def("actor_chain_closed", Abs, Tol::Closed),
    def("scalar_gap", Abs, Tol::Scalar),
    def("stackelberg_full_equals_pg", Abs, Tol::Stack),
    def("stackelberg_semi_equals_pg", Abs, Tol::Stack),
    def("stackelberg_eta_limit", Abs, Tol::EtaLimit),
    def("res_ac_direction_equals_pg", Abs, Tol::Closed),
    def("res_critic_closes_bias", Abs, Tol::Closed),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub metric: Metric,
    pub instances_run: usize,
    pub max_error: f64,
    /// Seed attaining `max_error`.
    pub worst_seed: Option<u64>,
    pub tolerance: f64,
    pub pass: bool,
    /// First error raised by the code under test, if any; such instances
    /// count as failures.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed_start: u64,
    pub seed_end: u64,
    pub family: InstanceFamily,
    pub tolerances: Tolerances,
    pub checks: Vec<CheckResult>,
    pub wall_time_secs: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "seeds {}..{}  ({:.2}s)",
            self.seed_start, self.seed_end, self.wall_time_secs
        );
        for c in &self.checks {
            let _ = write!(
                out,
                "{} {:<28} n={:<4} max_err={:.3e} tol={:.0e} ({:?})",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.instances_run,
                c.max_error,
                c.tolerance,
                c.metric,
            );
            if let Some(e) = &c.error {
                let _ = write!(out, " error: {e}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{}", if self.passed() { "ALL PASS" } else { "FAILURES" });
        out
    }
}

fn abs_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Thm. 2 check for a given Υ, exposed so callers can feed in a corrupted
/// matrix as a negative control.
pub fn upsilon_vs_fd(mdp: &TabularMdp, policy: &SoftmaxPolicy, upsilon: &DMatrix<f64>) -> f64 {
    oracle::relative_error(upsilon, &oracle::upsilon_fd(mdp, policy))
}

/// Errors of every registered check on one instance, in `CHECKS` order.
pub fn instance_errors(inst: &Instance) -> Vec<std::result::Result<f64, String>> {
    let (mdp, pi, phi) = (&inst.mdp, &inst.policy, &inst.critic);
    type Lazy<'a> = Box<dyn Fn() -> Result<f64> + 'a>;
    let checks: Vec<Lazy> = vec![
        Box::new(|| Ok(abs_err(&solve_stationary(mdp, pi)?.joint, &oracle::occupancy_series(mdp, pi)))),
        Box::new(|| Ok(oracle::relative_error_vec(&solve_q_values(mdp, pi)?, &oracle::q_series(mdp, pi)))),
        Box::new(|| Ok(upsilon_vs_fd(mdp, pi, &stationary_derivative(mdp, pi)?))),
        Box::new(|| {
            let fd = oracle::fd_gradient(pi, |p| oracle::objective(mdp, p));
            Ok(oracle::relative_error_vec(&grad_policy_exact(mdp, pi)?, &fd))
        }),
        Box::new(|| {
            let fd = oracle::fd_gradient(pi, |p| oracle::actor_objective(mdp, p, phi));
            Ok(oracle::relative_error_vec(&grad_actor_o(mdp, pi, phi), &fd))
        }),
        Box::new(|| {
            let gap = grad_policy_exact(mdp, pi)? - grad_actor_o(mdp, pi, phi);
            Ok(abs_err(&gap, &gap_corrections(mdp, pi, phi)?.full))
        }),
        Box::new(|| {
            let gap = grad_policy_exact(mdp, pi)? - grad_actor_o(mdp, pi, phi);
            let fd = oracle::fd_gradient(pi, |p| oracle::scalar_gap(mdp, p, phi));
            Ok(oracle::relative_error_vec(&gap, &fd))
        }),
        Box::new(|| {
            let gap = grad_policy_exact(mdp, pi)? - grad_actor_g(mdp, pi, phi)?;
            let delta = residual(mdp, pi, phi);
            Ok(abs_err(&gap, &(stationary_derivative(mdp, pi)? * delta)))
        }),
        Box::new(|| {
            let gap = grad_policy_exact(mdp, pi)? - grad_actor_g(mdp, pi, phi)?;
            let fd = oracle::upsilon_fd(mdp, pi) * oracle::residual(mdp, pi, phi);
            Ok(oracle::relative_error_vec(&gap, &fd))
        }),
        Box::new(|| {
            let chain = grad_actor_g(mdp, pi, phi)? - grad_actor_o(mdp, pi, phi);
            Ok(abs_err(&chain, &gap_corrections(mdp, pi, phi)?.dprime))
        }),
        Box::new(|| {
            let d = solve_stationary(mdp, pi)?;
            let lhs = policy_objective(mdp, pi)? - actor_objective(mdp, pi, phi);
            Ok((lhs - d.joint.dot(&residual(mdp, pi, phi))).abs())
        }),
        Box::new(|| Ok(abs_err(&stackelberg_gradient_full(mdp, pi, phi)?, &grad_policy_exact(mdp, pi)?))),
        Box::new(|| Ok(abs_err(&stackelberg_gradient_semi(mdp, pi, phi)?, &grad_policy_exact(mdp, pi)?))),
        Box::new(|| {
            let d = solve_stationary(mdp, pi)?;
            let g = stackelberg_gradient_regularized(mdp, pi, phi, ETA_LIMIT, &d.joint)?;
            Ok(abs_err(&g, &grad_actor_o(mdp, pi, phi)))
        }),
        Box::new(|| {
            let w = ResCriticTable::new(solve_res_q_values(mdp, pi, &residual(mdp, pi, phi))?);
            let direction = grad_actor_g(mdp, pi, phi)? + grad_res_actor(mdp, pi, &w)?;
            Ok(abs_err(&direction, &grad_policy_exact(mdp, pi)?))
        }),
        Box::new(|| {
            let w = solve_res_q_values(mdp, pi, &residual(mdp, pi, phi))?;
            Ok(abs_err(&(&phi.values + w), &solve_q_values(mdp, pi)?))
        }),
    ];
    debug_assert_eq!(checks.len(), CHECKS.len());
    checks
        .iter()
        .map(|f| match f() {
            Ok(e) if e.is_nan() => Err("NaN error".to_string()),
            Ok(e) => Ok(e),
            Err(e) => Err(e.to_string()),
        })
        .collect()
}

/// Runs every registered check on the seeds `seed_range`, in parallel over
/// instances. The report is assembled in seed order so it is deterministic
/// apart from `wall_time_secs`.
pub fn verify_all(
    family: &InstanceFamily,
    tolerances: &Tolerances,
    seed_range: std::ops::Range<u64>,
) -> Result<VerificationReport> {
    family.validate()?;
    let start = Instant::now();
    let instances: Vec<Instance> = seed_range
        .clone()
        .map(|s| family.instance(s))
        .collect::<Result<_>>()?;
    let per_instance: Vec<Vec<std::result::Result<f64, String>>> =
        instances.par_iter().map(instance_errors).collect();

    let checks = CHECKS
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let tolerance = match c.tol {
                Tol::Closed => tolerances.closed_form,
                Tol::Fd => tolerances.finite_difference,
                Tol::Stack => tolerances.stackelberg,
                Tol::EtaLimit => tolerances.eta_limit,
                Tol::Scalar => tolerances.scalar_gap,
            };
            let mut max_error = 0.0f64;
            let mut worst_seed = None;
            let mut error = None;
            for (inst, errs) in instances.iter().zip(&per_instance) {
                match &errs[k] {
                    Ok(e) => {
                        if worst_seed.is_none() || *e > max_error {
                            max_error = *e;
                            worst_seed = Some(inst.seed);
                        }
                    }
                    Err(msg) => {
                        max_error = f64::INFINITY;
                        worst_seed = Some(inst.seed);
                        error.get_or_insert_with(|| format!("seed {}: {msg}", inst.seed));
                    }
                }
            }
            CheckResult {
                name: c.name.to_string(),
                metric: c.metric,
                instances_run: instances.len(),
                max_error,
                worst_seed,
                tolerance,
                pass: error.is_none() && max_error <= tolerance,
                error,
            }
        })
        .collect();

    Ok(VerificationReport {
        seed_start: seed_range.start,
        seed_end: seed_range.end,
        family: family.clone(),
        tolerances: *tolerances,
        checks,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Batch used for one row of the bias table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    /// Every state-action pair weighted by `d_θ` and every next state by
    /// `P`, evaluated at `η = 0`.
    Exhaustive,
    /// `n` transitions drawn on-policy (and `n` initial states), at the
    /// configured `η`.
    Sampled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub eta: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            repetitions: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub batch_size: BatchSize,
    /// `‖Stack-AC update − ∇θJ‖₂`, averaged over repetitions.
    pub gap: f64,
    /// `‖Υδ‖₂`, the part of the true gradient the frozen estimator never
    /// sees.
    pub upsilon_delta_norm: f64,
}

/// Distance between the sampled Stack-AC update and the exact policy
/// gradient. The exhaustive row isolates the structural bias: at `η = 0` the
/// update collapses to Actor_g, so its gap is exactly `‖Υδ‖`, which does
/// not shrink with more data.
pub fn measure_stackelberg_bias(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    batch_sizes: &[BatchSize],
    config: &BiasConfig,
) -> Result<Vec<BiasRow>> {
    let pg = grad_policy_exact(mdp, policy)?;
    let d = solve_stationary(mdp, policy)?;
    let ud = stationary_derivative(mdp, policy)? * residual(mdp, policy, critic);
    let gamma = mdp.gamma();
    let mut rng = rng_for(config.seed, stream::BATCH);
    batch_sizes
        .iter()
        .map(|&size| {
            let gap = match size {
                BatchSize::Exhaustive => {
                    let batch = Batch::exhaustive(mdp, policy, &d.joint)?;
                    let actor_term = grad_actor_o(mdp, policy, critic);
                    let update = stack_direction(actor_term, &batch, policy, critic, gamma, 0.0)?;
                    (update.direction - &pg).norm()
                }
                BatchSize::Sampled(n) => {
                    if config.repetitions == 0 {
                        return Err(Error::InvalidConfig("repetitions must be positive".into()));
                    }
                    let mut total = 0.0;
                    for _ in 0..config.repetitions {
                        let batch_d = Batch::sample_on_policy(mdp, policy, &d.joint, n, &mut rng)?;
                        let batch_o = StateBatch::sample_initial(mdp, n, &mut rng)?;
                        let update =
                            stack_actor_update(&batch_o, &batch_d, policy, critic, gamma, config.eta, &mut rng)?;
                        total += (update.direction - &pg).norm();
                    }
                    total / config.repetitions as f64
                }
            };
            Ok(BiasRow {
                batch_size: size,
                gap,
                upsilon_delta_norm: ud.norm(),
            })
        })
        .collect()
}
