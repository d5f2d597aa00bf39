//! Penalized planning: per-step reward shaping `r - mu * impact`, exact
//! solves, mu sweeps and behavior classification.
//!
//! Impact under the initial-inaction baseline depends on elapsed time, so
//! the planner solves over time layers `(state, min(t, L - 1))`, where `L` is
//! the number of steps until the inaction world stops changing. The last
//! layer is an ordinary discounted MDP; earlier layers are one backup each.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineKind, BaselineSpec};
use crate::env::CompiledEnv;
use crate::error::{Error, Result};
use crate::mdp::{sample_trajectory, Mdp, Policy, Trajectory};
use crate::measures::{ImpactEvaluator, MeasureKind, MeasureSpec};
use crate::solvers::{value_iteration, TaskReward, ValueResult};

/// Default "effective" threshold: any strictly positive task return.
pub const DEFAULT_TASK_THRESHOLD: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub mu: f64,
    pub measure: MeasureSpec,
    pub baseline: BaselineSpec,
}

impl PenaltyConfig {
    pub fn new(mu: f64, measure: MeasureSpec, baseline: BaselineSpec) -> Result<Self> {
        check_mu(mu)?;
        Ok(Self { mu, measure, baseline })
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu must be finite and non-negative, got {mu}")));
    }
    Ok(())
}

/// Everything about an episode except the penalty: dynamics, task, where
/// the episode starts and what the annotations say.
#[derive(Debug, Clone, Copy)]
pub struct PlanningProblem<'a> {
    pub mdp: &'a Mdp,
    pub task: &'a TaskReward,
    /// The `s0` that initial baselines refer to.
    pub origin: usize,
    /// Where this episode (or phase) begins.
    pub start: usize,
    /// Time already elapsed since `origin` when the phase begins.
    pub start_time: usize,
    pub horizon: usize,
    pub side_effect: Option<&'a [bool]>,
    pub features: Option<&'a [Vec<f64>]>,
    pub tol: f64,
}

impl<'a> PlanningProblem<'a> {
    pub fn new(mdp: &'a Mdp, task: &'a TaskReward, start: usize, horizon: usize) -> Self {
        Self {
            mdp,
            task,
            origin: start,
            start,
            start_time: 0,
            horizon,
            side_effect: None,
            features: None,
            tol: 1e-8,
        }
    }

    pub fn from_env(env: &'a CompiledEnv) -> Self {
        Self {
            side_effect: Some(&env.annotations.side_effect),
            features: Some(&env.annotations.feature_table),
            ..Self::new(&env.mdp, &env.task, env.start, env.env.horizon)
        }
    }

    /// Continues an episode from `start` after `elapsed` steps, keeping the
    /// original `s0` for the baselines.
    pub fn phase(self, start: usize, elapsed: usize) -> Self {
        Self {
            start,
            start_time: self.start_time + elapsed,
            ..self
        }
    }
}

/// `impact[layer][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactTable {
    layers: Vec<Vec<Vec<f64>>>,
}

impl ImpactTable {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, k: usize) -> &[Vec<f64>] {
        &self.layers[k.min(self.layers.len() - 1)]
    }

    /// Impact of `a` in `s`, `k` steps into the phase.
    pub fn get(&self, k: usize, s: usize, a: usize) -> f64 {
        self.layer(k)[s][a]
    }
}

fn time_dependent(measure: &MeasureSpec, baseline: &BaselineSpec) -> bool {
    baseline.kind == BaselineKind::InitialInaction
        && !matches!(
            measure.kind,
            MeasureKind::Aup | MeasureKind::UtilityFact | MeasureKind::Undetectability
        )
}

/// Every per-step impact the planner can need.
pub fn impact_table(problem: &PlanningProblem, measure: &MeasureSpec, baseline: &BaselineSpec) -> Result<ImpactTable> {
    let mdp = problem.mdp;
    let eval = ImpactEvaluator::new(mdp, measure.clone(), *baseline, problem.origin)?;
    let n_layers = if time_dependent(measure, baseline) {
        let t0 = problem.start_time;
        let cap = t0 + problem.horizon;
        let mut t = t0;
        while t < cap && eval.inaction_at(t).max_abs_diff(&eval.inaction_at(t + 1)) > 1e-12 {
            t += 1;
        }
        t - t0 + 1
    } else {
        1
    };
    let layers = (0..n_layers)
        .map(|k| {
            let t = problem.start_time + k;
            (0..mdp.n_states())
                .into_par_iter()
                .map(|s| {
                    (0..mdp.n_actions())
                        .map(|a| {
                            eval.action_impact(s, a, t)
                                .map(|r| r.value)
                                .and_then(|v| {
                                    if v.is_finite() {
                                        Ok(v)
                                    } else {
                                        Err(Error::InvalidParameter(format!("impact {v} is not finite")))
                                    }
                                })
                                .map_err(|e| Error::AtStateAction {
                                    state: s,
                                    action: a,
                                    source: Box::new(e),
                                })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImpactTable { layers })
}

fn shape_rewards(task: &TaskReward, table: &ImpactTable, mu: f64) -> Vec<TaskReward> {
    table
        .layers
        .iter()
        .map(|layer| {
            TaskReward::new(
                task.table()
                    .iter()
                    .zip(layer)
                    .map(|(r, p)| r.iter().zip(p).map(|(r, p)| r - mu * p).collect())
                    .collect(),
            )
        })
        .collect()
}

/// `r'(s, a) = r(s, a) - mu * impact(s, a)`, one table per time layer.
pub fn penalized_reward(problem: &PlanningProblem, cfg: &PenaltyConfig) -> Result<Vec<TaskReward>> {
    check_mu(cfg.mu)?;
    let table = impact_table(problem, &cfg.measure, &cfg.baseline)?;
    Ok(shape_rewards(problem.task, &table, cfg.mu))
}

/// Greedy policy per time layer; the last layer repeats forever.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredPolicy {
    pub layers: Vec<Vec<usize>>,
}

impl LayeredPolicy {
    pub fn stationary(&self) -> Option<&[usize]> {
        (self.layers.len() == 1).then(|| self.layers[0].as_slice())
    }

    /// Hex SHA-256 of the action table.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for layer in &self.layers {
            h.update((layer.len() as u64).to_le_bytes());
            for &a in layer {
                h.update((a as u64).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

impl Policy for LayeredPolicy {
    fn action(&self, state: usize, t: usize) -> usize {
        self.layers[t.min(self.layers.len() - 1)][state]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSolution {
    pub policy: LayeredPolicy,
    /// One value result per layer.
    pub values: Vec<ValueResult>,
}

fn solve_layers(mdp: &Mdp, rewards: &[TaskReward], tol: f64) -> Result<PenalizedSolution> {
    let last = rewards.last().ok_or(Error::EmptyInput("reward layers"))?;
    let mut values = vec![value_iteration(mdp, last, tol)?];
    for r in rewards.iter().rev().skip(1) {
        let next = &values.last().expect("seeded").v;
        let q: Vec<Vec<f64>> = (0..mdp.n_states())
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| {
                        r.get(s, a)
                            + mdp.gamma()
                                * mdp.successors(s, a).iter().map(|&(j, p)| p * next[j]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let v = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        values.push(ValueResult {
            v,
            q,
            residual: 0.0,
            iterations: 1,
            residuals: Vec::new(),
        });
    }
    values.reverse();
    let noop = mdp.noop();
    let policy = LayeredPolicy {
        layers: values.iter().map(|v| v.greedy_policy(noop)).collect(),
    };
    Ok(PenalizedSolution { policy, values })
}

/// Exact optimum of the shaped reward with no-op-preferring ties.
pub fn solve_penalized(problem: &PlanningProblem, cfg: &PenaltyConfig) -> Result<PenalizedSolution> {
    let rewards = penalized_reward(problem, cfg)?;
    solve_layers(problem.mdp, &rewards, problem.tol)
}

/// Solves with a precomputed impact table (the table does not depend on mu).
pub fn solve_with_table(problem: &PlanningProblem, table: &ImpactTable, mu: f64) -> Result<PenalizedSolution> {
    check_mu(mu)?;
    solve_layers(problem.mdp, &shape_rewards(problem.task, table, mu), problem.tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    SafeEffective,
    SafeIneffective,
    HarmfulEffective,
    HarmfulIneffective,
}

impl Behavior {
    pub fn from_flags(harmful: bool, effective: bool) -> Self {
        match (harmful, effective) {
            (false, true) => Behavior::SafeEffective,
            (false, false) => Behavior::SafeIneffective,
            (true, true) => Behavior::HarmfulEffective,
            (true, false) => Behavior::HarmfulIneffective,
        }
    }

    pub fn is_harmful(self) -> bool {
        matches!(self, Behavior::HarmfulEffective | Behavior::HarmfulIneffective)
    }

    pub fn is_effective(self) -> bool {
        matches!(self, Behavior::SafeEffective | Behavior::HarmfulEffective)
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Behavior::SafeEffective => "safe_effective",
            Behavior::SafeIneffective => "safe_ineffective",
            Behavior::HarmfulEffective => "harmful_effective",
            Behavior::HarmfulIneffective => "harmful_ineffective",
        })
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe_effective" => Ok(Behavior::SafeEffective),
            "safe_ineffective" => Ok(Behavior::SafeIneffective),
            "harmful_effective" => Ok(Behavior::HarmfulEffective),
            "harmful_ineffective" => Ok(Behavior::HarmfulIneffective),
            other => Err(Error::InvalidParameter(format!("unknown behavior '{other}'"))),
        }
    }
}

pub fn task_return(trajectory: &Trajectory, task: &TaskReward) -> f64 {
    trajectory
        .states
        .iter()
        .zip(&trajectory.actions)
        .map(|(&s, &a)| task.get(s, a))
        .sum()
}

/// Effective iff the episode's task return reaches `threshold`; harmful iff
/// the side-effect annotation holds at any visited state.
pub fn classify_behavior(trajectory: &Trajectory, task: &TaskReward, side_effect: &[bool], threshold: f64) -> Behavior {
    let harmful = trajectory.states.iter().any(|&s| side_effect[s]);
    Behavior::from_flags(harmful, task_return(trajectory, task) >= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub task_return: f64,
    pub total_impact: f64,
    /// Episode impact under feature divergence with the same baseline.
    pub audit_impact: Option<f64>,
    pub behavior: Option<Behavior>,
    pub policy_hash: String,
    pub error: Option<String>,
    pub trajectory: Option<Trajectory>,
}

impl SweepRow {
    fn failed(mu: f64, e: &Error) -> Self {
        Self {
            mu,
            task_return: f64::NAN,
            total_impact: f64::NAN,
            audit_impact: None,
            behavior: None,
            policy_hash: String::new(),
            error: Some(e.to_string()),
            trajectory: None,
        }
    }

    pub fn is_safe_effective(&self) -> bool {
        self.behavior == Some(Behavior::SafeEffective)
    }
}

fn episode_impact(table: &ImpactTable, traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .zip(&traj.actions)
        .enumerate()
        .map(|(k, (&s, &a))| table.get(k, s, a))
        .sum()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("mu grid"));
    }
    for &mu in grid {
        check_mu(mu)?;
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("mu grid must be ascending".into()));
    }
    Ok(())
}

/// Solves once per mu and reports one row each, ascending in mu. Rows are
/// computed from the largest mu down, in parallel; a failure becomes an
/// error row rather than aborting the sweep.
pub fn mu_sweep(
    problem: &PlanningProblem,
    measure: &MeasureSpec,
    baseline: &BaselineSpec,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    check_grid(grid)?;
    let table = impact_table(problem, measure, baseline);
    let audit = problem.features.map(|phi| {
        let mut fd = MeasureSpec::new(MeasureKind::FeatureDivergence);
        fd.features = phi.to_vec();
        impact_table(problem, &fd, baseline)
    });
    let table = match table {
        Ok(t) => t,
        Err(e) => return Ok(grid.iter().map(|&mu| SweepRow::failed(mu, &e)).collect()),
    };
    let mut rows: Vec<SweepRow> = grid
        .par_iter()
        .rev()
        .map(|&mu| match solve_with_table(problem, &table, mu) {
            Err(e) => SweepRow::failed(mu, &e),
            Ok(sol) => {
                let traj = sample_trajectory(problem.mdp, &sol.policy, problem.start, problem.horizon, seed);
                let ret = task_return(&traj, problem.task);
                SweepRow {
                    mu,
                    task_return: ret,
                    total_impact: episode_impact(&table, &traj),
                    audit_impact: match &audit {
                        Some(Ok(t)) => Some(episode_impact(t, &traj)),
                        _ => None,
                    },
                    behavior: problem
                        .side_effect
                        .map(|se| classify_behavior(&traj, problem.task, se, DEFAULT_TASK_THRESHOLD)),
                    policy_hash: sol.policy.hash(),
                    error: None,
                    trajectory: Some(traj),
                }
            }
        })
        .collect();
    rows.reverse();
    Ok(rows)
}

/// Maximal runs of consecutive safe-and-effective rows, as `(low, high)` mu.
pub fn find_safe_effective_range(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for row in rows {
        if row.is_safe_effective() {
            open = Some(match open {
                Some((lo, _)) => (lo, row.mu),
                None => (row.mu, row.mu),
            });
        } else if let Some(iv) = open.take() {
            out.push(iv);
        }
    }
    out.extend(open);
    out
}

/// `n` points from `lo` to `hi`, log- or linearly spaced.
pub fn mu_grid(lo: f64, hi: f64, n: usize, log: bool) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyInput("mu grid"));
    }
    if !(lo >= 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("bad mu range {lo}:{hi}")));
    }
    if log && lo <= 0.0 {
        return Err(Error::InvalidParameter("log grid needs a positive lower end".into()));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            if i == n - 1 {
                hi
            } else if log {
                (lo.ln() + f * (hi.ln() - lo.ln())).exp()
            } else {
                lo + f * (hi - lo)
            }
        })
        .collect())
}

/// Discounted task value and discounted impact of a stationary policy from
/// `start`, each by exact policy evaluation.
pub fn policy_point(problem: &PlanningProblem, table: &ImpactTable, policy: &[usize]) -> (f64, f64) {
    let layer = table.layer(0);
    let v = crate::solvers::evaluate_policy(problem.mdp, policy, |s, a| problem.task.get(s, a));
    let p = crate::solvers::evaluate_policy(problem.mdp, policy, |s, a| layer[s][a]);
    (v[problem.start], p[problem.start])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{enumerate_policies, evaluate_policy};

    // 0 --a1--> 1 (reward 1, irreversible), noop stays
    fn lock() -> (Mdp, TaskReward) {
        let m = Mdp::deterministic(&[vec![0, 1], vec![1, 1]], 0, 0.9).unwrap();
        let mut r = TaskReward::zeros(2, 2);
        r.set(0, 1, 1.0);
        (m, r)
    }

    fn rr() -> MeasureSpec {
        MeasureSpec::new(MeasureKind::RelativeReachability)
    }

    #[test]
    fn zero_mu_leaves_task_reward() {
        let (m, r) = lock();
        let p = PlanningProblem::new(&m, &r, 0, 5);
        let cfg = PenaltyConfig::new(0.0, rr(), BaselineSpec::stepwise(1).unwrap()).unwrap();
        assert_eq!(penalized_reward(&p, &cfg).unwrap(), vec![r.clone()]);
    }

    #[test]
    fn stepwise_noop_column_untouched() {
        let (m, r) = lock();
        let p = PlanningProblem::new(&m, &r, 0, 5);
        let cfg = PenaltyConfig::new(3.0, rr(), BaselineSpec::stepwise(2).unwrap()).unwrap();
        let shaped = penalized_reward(&p, &cfg).unwrap();
        for s in 0..2 {
            assert_eq!(shaped[0].get(s, 0), r.get(s, 0));
        }
        assert!(shaped[0].get(0, 1) < 1.0);
    }

    #[test]
    fn negative_mu_rejected() {
        assert!(PenaltyConfig::new(-1.0, rr(), BaselineSpec::initial_state()).is_err());
    }

    #[test]
    fn mu_zero_matches_enumeration() {
        let (m, r) = lock();
        let p = PlanningProblem::new(&m, &r, 0, 5);
        let cfg = PenaltyConfig::new(0.0, rr(), BaselineSpec::stepwise(1).unwrap()).unwrap();
        let sol = solve_penalized(&p, &cfg).unwrap();
        let best = enumerate_policies(&m, 100)
            .unwrap()
            .map(|pi| evaluate_policy(&m, &pi, |s, a| r.get(s, a))[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.values[0].v[0] - best).abs() < 1e-6);
        assert_eq!(sol.policy.stationary().unwrap()[0], 1);
    }

    #[test]
    fn huge_mu_gives_inaction() {
        let (m, r) = lock();
        let p = PlanningProblem::new(&m, &r, 0, 5);
        let cfg = PenaltyConfig::new(1e6, rr(), BaselineSpec::stepwise(1).unwrap()).unwrap();
        let sol = solve_penalized(&p, &cfg).unwrap();
        assert_eq!(sol.policy.stationary().unwrap(), &[0, 0]);
    }

    #[test]
    fn inaction_baseline_layers_until_stable() {
        // conveyor 0 -> 1 -> 2 under noop; the inaction world settles after 2 steps
        let m = Mdp::deterministic(&[vec![1, 0], vec![2, 1], vec![2, 2]], 0, 0.9).unwrap();
        let r = TaskReward::zeros(3, 2);
        let p = PlanningProblem::new(&m, &r, 0, 10);
        let t = impact_table(&p, &rr(), &BaselineSpec::initial_inaction()).unwrap();
        assert_eq!(t.n_layers(), 3);
        let t = impact_table(&p, &rr(), &BaselineSpec::initial_state()).unwrap();
        assert_eq!(t.n_layers(), 1);
    }

    #[test]
    fn layered_solver_matches_vi_on_one_layer() {
        let (m, r) = lock();
        let sol = solve_layers(&m, &[r.clone()], 1e-10).unwrap();
        let vi = value_iteration(&m, &r, 1e-10).unwrap();
        assert_eq!(sol.values[0], vi);
        // two identical layers agree with the stationary answer up to tol
        let sol2 = solve_layers(&m, &[r.clone(), r.clone()], 1e-10).unwrap();
        assert!((sol2.values[0].v[0] - vi.v[0]).abs() < 1e-9);
    }

    fn row(mu: f64, b: Behavior) -> SweepRow {
        SweepRow {
            behavior: Some(b),
            ..SweepRow::failed(mu, &Error::EmptyInput("x"))
        }
    }

    #[test]
    fn safe_effective_ranges() {
        use Behavior::*;
        assert!(find_safe_effective_range(&[row(0.0, HarmfulEffective)]).is_empty());
        let rows = [row(1.0, SafeEffective), row(2.0, SafeEffective), row(3.0, HarmfulEffective)];
        assert_eq!(find_safe_effective_range(&rows), vec![(1.0, 2.0)]);
        let rows = [row(1.0, SafeEffective), row(2.0, SafeIneffective), row(3.0, SafeEffective)];
        assert_eq!(find_safe_effective_range(&rows), vec![(1.0, 1.0), (3.0, 3.0)]);
    }

    #[test]
    fn classify_quadrants() {
        let (_, r) = lock();
        let traj = Trajectory {
            states: vec![0, 1],
            actions: vec![1],
            seed: 0,
        };
        assert_eq!(classify_behavior(&traj, &r, &[false, false], DEFAULT_TASK_THRESHOLD), Behavior::SafeEffective);
        assert_eq!(classify_behavior(&traj, &r, &[false, true], DEFAULT_TASK_THRESHOLD), Behavior::HarmfulEffective);
        let idle = Trajectory {
            states: vec![0, 0],
            actions: vec![0],
            seed: 0,
        };
        assert_eq!(classify_behavior(&idle, &r, &[false, true], DEFAULT_TASK_THRESHOLD), Behavior::SafeIneffective);
    }

    #[test]
    fn grids() {
        let g = mu_grid(0.01, 100.0, 5, true).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[2] - 1.0).abs() < 1e-12);
        assert_eq!(g[4], 100.0);
        assert_eq!(mu_grid(0.0, 1.0, 3, false).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(mu_grid(0.0, 1.0, 3, true).is_err());
        assert!(check_grid(&[1.0, 0.5]).is_err());
        assert!(check_grid(&[]).is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let (m, r) = lock();
        let p = PlanningProblem::new(&m, &r, 0, 5);
        let b = BaselineSpec::stepwise(1).unwrap();
        let a = mu_sweep(&p, &rr(), &b, &[0.0, 1e6], 7).unwrap();
        let again = mu_sweep(&p, &rr(), &b, &[0.0, 1e6], 7).unwrap();
        assert_eq!(a, again);
        assert_eq!(a[0].mu, 0.0);
        assert_eq!(a[0].task_return, 1.0);
        assert_eq!(a[1].task_return, 0.0);
        assert_ne!(a[0].policy_hash, a[1].policy_hash);
    }
}
