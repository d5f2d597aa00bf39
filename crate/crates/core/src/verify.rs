//! The acceptance suite: oracle and property checks runnable from the CLI
//! (`impactlab verify`) and from the `acceptance` test target.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{rollout_pair, BaselineSpec};
use crate::env::{build_named_env, compile_to_mdp, CompiledEnv, GridworldEnv, ENV_NAMES, INTERACT};
use crate::experiment::{run, RawConfig};
use crate::mdp::{inaction_pushforward, sample_trajectory, Mdp, StateDist};
use crate::measures::{
    aup_from_q, aux_q_tables, max_norm_distance, relative_feature_penalty, relative_reachability_with,
    unreachability_with, value_difference_from_values, value_difference_with, ImpactEvaluator, ImpactResult,
    MeasureKind, MeasureSpec, Shape,
};
use crate::planner::{
    find_safe_effective_range, impact_table, mu_grid, mu_sweep, policy_point, solve_with_table, Behavior,
    PlanningProblem,
};
use crate::solvers::{
    enumerate_policies, evaluate_policy, reachability_values, value_iteration, ReachabilityMatrix, TaskReward,
};

/// Deliberate defects for checking that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Relative reachability with the sign of the difference flipped.
    FlipRelativeReachability,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Run only criteria whose name contains this text (or whose number equals it).
    pub filter: Option<String>,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

pub const CRITERIA: [(usize, &str, u64); 8] = [
    (1, "oracle-equivalence", 30),
    (2, "family-collapse", 60),
    (3, "bounds-identities", 60),
    (4, "telescoping", 60),
    (5, "baseline-pathologies", 40),
    (6, "subagent-bypass", 10),
    (7, "scalarization-soundness", 60),
    (8, "determinism", 60),
];

/// Calibrated attainable-utility penalty of the direct vase smash in
/// `subagent_workshop`, frozen as a regression value.
pub const SUBAGENT_DIRECT_AUP: f64 = 0.101453;
pub const SUBAGENT_AUP_RATIO_MAX: f64 = 0.1;
pub const SUBAGENT_FD_RATIO_MAX: f64 = 2.0;

pub fn selected(filter: Option<&str>) -> Vec<usize> {
    CRITERIA
        .iter()
        .filter(|(id, name, _)| match filter {
            None => true,
            Some(f) => name.contains(f) || f == id.to_string(),
        })
        .map(|(id, _, _)| *id)
        .collect()
}

pub fn verify(opts: &VerifyOptions) -> Vec<CriterionResult> {
    selected(opts.filter.as_deref())
        .into_iter()
        .map(|id| run_criterion(id, opts.fault))
        .collect()
}

pub fn run_criterion(id: usize, fault: Option<Fault>) -> CriterionResult {
    let (_, name, budget) = CRITERIA[id - 1];
    let start = Instant::now();
    let outcome = match id {
        1 => oracle_equivalence(),
        2 => family_collapse(fault),
        3 => bounds_and_identities(),
        4 => telescoping(),
        5 => baseline_pathologies(),
        6 => subagent_bypass(),
        7 => scalarization_soundness(),
        8 => determinism(),
        _ => Err(format!("no criterion {id}")),
    };
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if passed && elapsed > Duration::from_secs(budget) {
        passed = false;
        detail = format!("{detail}; took {elapsed:.1?}, budget {budget}s");
    }
    CriterionResult {
        id,
        name,
        passed,
        detail,
        elapsed,
    }
}

pub fn format_report(results: &[CriterionResult]) -> String {
    results
        .iter()
        .map(|r| {
            format!(
                "[{}] {} {:<24} {:>8.2?}  {}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.id,
                r.name,
                r.elapsed,
                r.detail
            )
        })
        .collect()
}

/// A random MDP with `n` states and `a` actions; action 0 is the no-op.
/// Rows have between one and three successors.
pub fn random_mdp(rng: &mut impl Rng, n: usize, a: usize, gamma: f64, deterministic: bool) -> Mdp {
    let transition = (0..n)
        .map(|_| {
            (0..a)
                .map(|_| {
                    let mut row = vec![0.0; n];
                    let k = if deterministic { 1 } else { rng.gen_range(1..=3.min(n)) };
                    for _ in 0..k {
                        row[rng.gen_range(0..n)] += rng.gen_range(0.1..1.0);
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                    row
                })
                .collect()
        })
        .collect();
    Mdp::new(transition, 0, gamma).expect("random rows are normalized")
}

pub fn random_reward(rng: &mut impl Rng, n: usize, a: usize) -> TaskReward {
    TaskReward::new((0..n).map(|_| (0..a).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
}

fn random_dist(rng: &mut impl Rng, n: usize) -> StateDist {
    let mut p: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
    p[rng.gen_range(0..n)] += 0.5;
    let total: f64 = p.iter().sum();
    StateDist::new(p.into_iter().map(|x| x / total).collect()).expect("normalized")
}

fn oracle_equivalence() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.gen_range(1..=5);
        let a = rng.gen_range(1..=3);
        let mdp = random_mdp(&mut rng, n, a, 0.9, false);
        let r = random_reward(&mut rng, n, a);
        let vi = value_iteration(&mdp, &r, 1e-9).map_err(|e| e.to_string())?;
        let mut best = vec![f64::NEG_INFINITY; n];
        for pi in enumerate_policies(&mdp, 1_000).map_err(|e| e.to_string())? {
            let v = evaluate_policy(&mdp, &pi, |s, a| r.get(s, a));
            for s in 0..n {
                best[s] = best[s].max(v[s]);
            }
        }
        let gap = vi.v.iter().zip(&best).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!("case {case}: value iteration off by {gap:e}"));
        }
    }
    Ok(format!("100 MDPs, max |V_vi - V_enum| = {worst:.1e}"))
}

fn family_collapse(fault: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_rr, mut worst_aup): (f64, f64) = (0.0, 0.0);
    for case in 0..100 {
        let n = rng.gen_range(2..=6);
        let a = rng.gen_range(2..=3);
        let det = rng.gen_bool(0.3);
        let mdp = random_mdp(&mut rng, n, a, 0.9, det);
        let reach = ReachabilityMatrix::compute(&mdp, 1e-12).map_err(|e| e.to_string())?;
        // value functions of the reach rewards, one target at a time
        let values: Vec<Vec<f64>> = (0..n)
            .map(|y| reachability_values(&mdp, y, 1e-12).map(|(v, _)| v))
            .collect::<crate::Result<_>>()
            .map_err(|e| e.to_string())?;
        let weights = vec![1.0 / n as f64; n];
        for _ in 0..4 {
            let (x, b) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
            let rr = match fault {
                Some(Fault::FlipRelativeReachability) => relative_reachability_with(&reach, &b, &x),
                None => relative_reachability_with(&reach, &x, &b),
            };
            let vd = value_difference_with(&values, Shape::Relu, &weights, &x, &b).map_err(|e| e.to_string())?;
            let gap = (rr.value - vd.value).abs();
            worst_rr = worst_rr.max(gap);
            if gap > 1e-9 {
                return Err(format!("case {case}: relative reachability {} vs value difference {}", rr.value, vd.value));
            }
        }
        let aux: Vec<TaskReward> = (0..3).map(|_| random_reward(&mut rng, n, a)).collect();
        let q = aux_q_tables(&mdp, &aux, 1e-12).map_err(|e| e.to_string())?;
        for s in 0..n {
            let noop_q: Vec<f64> = q.iter().map(|qi| qi[s][0]).collect();
            let denom: f64 = noop_q.iter().map(|v| v.abs()).sum();
            if denom == 0.0 {
                continue;
            }
            for act in 0..a {
                let acted_q: Vec<f64> = q.iter().map(|qi| qi[s][act]).collect();
                let numer = value_difference_from_values(Shape::Abs, &[1.0; 3], &noop_q, &acted_q)
                    .map_err(|e| e.to_string())?
                    .value;
                let aup = aup_from_q(&q, 0, s, act).map_err(|e| e.to_string())?.value * denom;
                let gap = (numer - aup).abs();
                worst_aup = worst_aup.max(gap);
                if gap > 1e-9 {
                    return Err(format!("case {case}: AUP numerator {aup} vs abs value difference {numer}"));
                }
            }
        }
    }
    Ok(format!("100 MDPs, max gap {worst_rr:.1e} (relu/RR), {worst_aup:.1e} (abs/AUP)"))
}

fn identical_arm_zero(spec: &MeasureSpec, mdp: &Mdp, d: &StateDist) -> crate::Result<f64> {
    let eval = ImpactEvaluator::new(mdp, spec.clone(), BaselineSpec::initial_state(), 0)?;
    match spec.kind {
        MeasureKind::Aup => Ok(aup_from_q(&aux_q_tables(mdp, &spec.aux_rewards, spec.tol)?, 0, 0, 0)?.value),
        MeasureKind::RelativeFeaturePenalty => {
            let p = relative_feature_penalty(&spec.features, max_norm_distance, &[0, 1], &[0, 1], mdp.gamma())?;
            Ok(p.iter().map(|x| x.abs()).sum())
        }
        _ => eval.compare(d, d).map(|r| r.value),
    }
}

fn random_spec(kind: MeasureKind, rng: &mut impl Rng, n: usize, a: usize) -> MeasureSpec {
    let mut m = MeasureSpec::new(kind);
    m.features = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    m.aux_rewards = (0..2)
        .map(|_| TaskReward::new((0..n).map(|_| (0..a).map(|_| rng.gen_range(0.1..1.0)).collect()).collect()))
        .collect();
    m.vd_rewards = m.aux_rewards.iter().cloned().map(crate::measures::RewardFn::Table).collect();
    m.vd_weights = vec![0.5, 0.5];
    m.shape = Shape::Abs;
    m.utilities = (0..2).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    m.facts = vec![vec![true; n]];
    m.events = vec![(0..n).map(|s| s % 2 == 0).collect()];
    m.terminal = (0..n).map(|_| rng.gen_bool(0.2)).collect();
    m
}

fn bounds_and_identities() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..50 {
        let n = rng.gen_range(2..=6);
        let a = rng.gen_range(2..=3);
        let mdp = random_mdp(&mut rng, n, a, 0.9, false);
        let reach = ReachabilityMatrix::compute(&mdp, 1e-12).map_err(|e| e.to_string())?;
        let (x, b) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
        let ur = unreachability_with(&reach, &x, &b).value;
        if !(-1e-12..=1.0 + 1e-12).contains(&ur) {
            return Err(format!("case {case}: unreachability {ur} outside [0, 1]"));
        }
        for kind in MeasureKind::ALL {
            let spec = random_spec(kind, &mut rng, n, a);
            let v = identical_arm_zero(&spec, &mdp, &x).map_err(|e| format!("{kind}: {e}"))?;
            if v.abs() > 1e-12 {
                return Err(format!("case {case}: {kind} is {v} on identical arms"));
            }
        }
    }
    let mut checked = 0usize;
    for name in ENV_NAMES {
        let env = compiled(name)?;
        for kind in MeasureKind::ALL {
            for tau in [1, 3] {
                let spec = MeasureSpec::from_env(kind, &env, tau);
                let eval = ImpactEvaluator::new(&env.mdp, spec, BaselineSpec::stepwise(tau).unwrap(), env.start)
                    .map_err(|e| format!("{name}/{kind}: {e}"))?;
                for s in 0..env.n_states() {
                    let v = eval.action_impact(s, env.mdp.noop(), 0).map_err(|e| format!("{name}/{kind}: {e}"))?;
                    checked += 1;
                    if v.value != 0.0 {
                        return Err(format!("{name}/{kind} tau={tau}: no-op impact {} at state {s}", v.value));
                    }
                }
            }
        }
    }
    Ok(format!(
        "unreachability in [0,1] and zero on identical arms for 9 kinds on 50 MDPs; {checked} stepwise no-op impacts all 0"
    ))
}

fn telescoping() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.gen_range(2..=8);
        let a = rng.gen_range(2..=4);
        let gamma = rng.gen_range(0.5..0.99);
        let mdp = random_mdp(&mut rng, n, a, gamma, true);
        let phi: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let horizon = rng.gen_range(1..=12);
        let s0 = rng.gen_range(0..n);
        let choices: Vec<usize> = (0..horizon).map(|_| rng.gen_range(0..a)).collect();
        let traj = sample_trajectory(&mdp, &|_s: usize, t: usize| choices[t], s0, horizon, case);
        let base = sample_trajectory(&mdp, &|_s: usize, _t: usize| 0, s0, horizon, case);
        let p = relative_feature_penalty(&phi, max_norm_distance, &traj.states, &base.states, gamma)
            .map_err(|e| e.to_string())?;
        let total: f64 = p.iter().enumerate().map(|(t, x)| gamma.powi(t as i32) * x).sum();
        let d = |t: usize| max_norm_distance(&phi[traj.states[t]], &phi[base.states[t]]);
        let expected = gamma.powi(horizon as i32) * d(horizon) - d(0);
        let gap = (total - expected).abs();
        worst = worst.max(gap);
        if gap > 1e-9 {
            return Err(format!("case {case}: sum {total} vs {expected}"));
        }
    }
    Ok(format!("50 trajectories, max gap {worst:.1e}"))
}

fn compiled(name: &str) -> std::result::Result<CompiledEnv, String> {
    build_named_env(name)
        .and_then(|e| compile_to_mdp(&e))
        .map_err(|e| format!("{name}: {e}"))
}

fn side_effect_term(env: &CompiledEnv, text: &str) -> std::result::Result<Vec<bool>, String> {
    env.annotations
        .side_effect_terms
        .iter()
        .find(|(t, _)| t == text)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| format!("{}: no side effect '{text}'", env.env.name))
}

fn timed<T>(budget: u64, label: &str, f: impl FnOnce() -> std::result::Result<T, String>) -> std::result::Result<T, String> {
    let start = Instant::now();
    let out = f()?;
    if start.elapsed() > Duration::from_secs(budget) {
        return Err(format!("{label} took {:.1?}", start.elapsed()));
    }
    Ok(out)
}

/// Sushi belt under the initial-state baseline: with a large penalty the
/// agent takes the sushi off the belt.
pub fn sushi_interference() -> std::result::Result<String, String> {
    let env = compiled("sushi_belt")?;
    let removed = side_effect_term(&env, "object_removed(0)")?;
    let problem = PlanningProblem::from_env(&env);
    let measure = MeasureSpec::from_env(MeasureKind::FeatureDivergence, &env, 1);
    let rows = mu_sweep(&problem, &measure, &BaselineSpec::initial_state(), &[0.0, 10.0], 0).map_err(|e| e.to_string())?;
    let (free, penalized) = (&rows[0], &rows[1]);
    let traj = penalized.trajectory.as_ref().ok_or("no trajectory")?;
    let interfered = traj.states.iter().any(|&s| removed[s]);
    let free_interfered = free.trajectory.as_ref().is_some_and(|t| t.states.iter().any(|&s| removed[s]));
    if interfered && !free_interfered && penalized.behavior.is_some_and(Behavior::is_harmful) {
        Ok(format!("mu=10: {}, sushi removed", penalized.behavior.unwrap()))
    } else {
        Err(format!(
            "expected interference at mu=10, got {:?} (removed: {interfered}; unpenalized removed: {free_interfered})",
            penalized.behavior
        ))
    }
}

/// Vase belt after the rescue: under initial inaction the penalized agent
/// puts the vase back on the belt; under stepwise inaction it does not.
pub fn vase_offsetting() -> std::result::Result<String, String> {
    let env = compiled("vase_belt")?;
    let gone = side_effect_term(&env, "object_gone(0)")?;
    // wait one step, then push the vase off the belt
    let rescued = env.follow(env.start, &[0, 2]);
    if !env.annotations.goal[rescued] || gone[rescued] {
        return Err(format!("rescue did not work: {}", env.describe(rescued)));
    }
    let problem = PlanningProblem::from_env(&env).phase(rescued, 2);
    let measure = MeasureSpec::from_env(MeasureKind::FeatureDivergence, &env, 1);
    let broke = |baseline: BaselineSpec| -> std::result::Result<bool, String> {
        let rows = mu_sweep(&problem, &measure, &baseline, &[1.0], 0).map_err(|e| e.to_string())?;
        Ok(rows[0].trajectory.as_ref().is_some_and(|t| gone[t.last_state()]))
    };
    let inaction = broke(BaselineSpec::initial_inaction())?;
    let stepwise = broke(BaselineSpec::stepwise(1).unwrap())?;
    if inaction && !stepwise {
        Ok("offsetting flagged under initial inaction, absent under stepwise".into())
    } else {
        Err(format!("vase broken after rescue: initial inaction {inaction}, stepwise {stepwise}"))
    }
}

/// Car on the curve, one cell before the crash barrier: steering off the
/// belt is safe, while the inaction rollout rides the belt into the crash.
pub fn car_rollout() -> std::result::Result<String, String> {
    let env = compiled("car_curve")?;
    let s = (0..env.n_states())
        .find(|&s| env.config(s).agent == (1, 4))
        .ok_or("no state with the car at (1, 4)")?;
    let (acted, baseline) = rollout_pair(&env.mdp, s, 2, 3).map_err(|e| e.to_string())?;
    let crashed = &env.annotations.side_effect;
    let base_crash = baseline.mass_where(|x| crashed[x]);
    let acted_crash = acted.mass_where(|x| crashed[x]);
    if base_crash == 1.0 && acted_crash == 0.0 {
        Ok("tau=3 inaction arm crashes, steering arm does not".into())
    } else {
        Err(format!("crash probability: baseline {base_crash}, acted {acted_crash}"))
    }
}

/// Box corner with relative reachability and stepwise inaction over a
/// 20-point log grid.
pub fn box_safe_range() -> std::result::Result<String, String> {
    let env = compiled("box_corner")?;
    let problem = PlanningProblem::from_env(&env);
    let measure = MeasureSpec::from_env(MeasureKind::RelativeReachability, &env, 1);
    let grid = mu_grid(1e-3, 1e3, 20, true).map_err(|e| e.to_string())?;
    let rows = mu_sweep(&problem, &measure, &BaselineSpec::stepwise(1).unwrap(), &grid, 0).map_err(|e| e.to_string())?;
    let ranges = find_safe_effective_range(&rows);
    match ranges.first() {
        Some(&(lo, hi)) => Ok(format!("safe and effective for mu in [{lo:.3}, {hi:.3}]")),
        None => Err("no safe and effective mu on the grid".into()),
    }
}

fn baseline_pathologies() -> std::result::Result<String, String> {
    let parts = [
        ("interference", timed(10, "sushi", sushi_interference)),
        ("offsetting", timed(10, "vase", vase_offsetting)),
        ("delayed", timed(10, "car", car_rollout)),
        ("box", timed(10, "box", box_safe_range)),
    ];
    let mut details = Vec::new();
    let mut failed = false;
    for (label, r) in parts {
        match r {
            Ok(d) => details.push(format!("{label}: {d}")),
            Err(d) => {
                failed = true;
                details.push(format!("{label} FAILED: {d}"));
            }
        }
    }
    let text = details.join("; ");
    if failed {
        Err(text)
    } else {
        Ok(text)
    }
}

/// `(assemble, direct)` impacts at the kit in `subagent_workshop`.
pub fn subagent_impacts(kind: MeasureKind) -> crate::Result<(ImpactResult, ImpactResult)> {
    let env = compile_to_mdp(&build_named_env("subagent_workshop")?)?;
    let on_kit = env.follow(env.start, &[4]);
    let spec = MeasureSpec::from_env(kind, &env, 1);
    let eval = ImpactEvaluator::new(&env.mdp, spec, BaselineSpec::stepwise(1)?, env.start)?;
    Ok((eval.action_impact(on_kit, INTERACT, 1)?, eval.action_impact(on_kit, 4, 1)?))
}

fn subagent_bypass() -> std::result::Result<String, String> {
    let (aup_a, aup_d) = subagent_impacts(MeasureKind::Aup).map_err(|e| e.to_string())?;
    let (fd_a, fd_d) = subagent_impacts(MeasureKind::FeatureDivergence).map_err(|e| e.to_string())?;
    let aup_ok = aup_d.value > 0.0 && aup_a.value <= SUBAGENT_AUP_RATIO_MAX * aup_d.value;
    let (lo, hi) = (fd_a.value.min(fd_d.value), fd_a.value.max(fd_d.value));
    let fd_ok = lo > 0.0 && hi <= SUBAGENT_FD_RATIO_MAX * lo;
    let detail = format!(
        "AUP assemble {:.6} vs direct {:.6}; feature divergence {:.3} vs {:.3}",
        aup_a.value, aup_d.value, fd_a.value, fd_d.value
    );
    if aup_ok && fd_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// A corridor with a vase between the agent and the goal.
pub fn tiny_vase_corridor() -> GridworldEnv {
    GridworldEnv::from_text(
        "impactlab-env 1\nname tiny_vase_corridor\nlayout-version 1\ndescription vase between agent and goal\n\
         horizon 6\ngamma 0.9\ngrid 3 5\n#####\n#A.G#\n#####\nobject vase 1 2\nside-effect object_gone(0)\n\
         feature vase_broken 1 object_gone(0)\nend\n",
    )
    .expect("valid built-in text")
}

fn dominated_by(p: (f64, f64), q: (f64, f64), eps: f64) -> bool {
    q.0 >= p.0 - eps && q.1 <= p.1 + eps && (q.0 > p.0 + eps || q.1 < p.1 - eps)
}

fn check_sound(problem: &PlanningProblem, measure: &MeasureSpec, grid: &[f64]) -> std::result::Result<usize, String> {
    let baseline = BaselineSpec::stepwise(1).unwrap();
    let table = impact_table(problem, measure, &baseline).map_err(|e| e.to_string())?;
    let cloud: Vec<(f64, f64)> = enumerate_policies(problem.mdp, 2_000_000)
        .map_err(|e| e.to_string())?
        .map(|p| policy_point(problem, &table, &p))
        .collect();
    for &mu in grid {
        let sol = solve_with_table(problem, &table, mu).map_err(|e| e.to_string())?;
        let pi = sol.policy.stationary().ok_or("non-stationary policy")?;
        let point = policy_point(problem, &table, pi);
        if let Some(q) = cloud.iter().find(|&&q| dominated_by(point, q, 1e-7)) {
            return Err(format!("mu={mu}: solved point {point:?} dominated by {q:?}"));
        }
    }
    Ok(cloud.len())
}

fn scalarization_soundness() -> std::result::Result<String, String> {
    let grid = [0.01, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..30 {
        let n = rng.gen_range(2..=5);
        let a = rng.gen_range(2..=3);
        let det = rng.gen_bool(0.5);
        let mdp = random_mdp(&mut rng, n, a, 0.9, det);
        let task = random_reward(&mut rng, n, a);
        let mut problem = PlanningProblem::new(&mdp, &task, rng.gen_range(0..n), 10);
        problem.tol = 1e-11;
        let measure = MeasureSpec::new(MeasureKind::RelativeReachability);
        check_sound(&problem, &measure, &grid).map_err(|e| format!("random case {case}: {e}"))?;
    }
    let env = compile_to_mdp(&tiny_vase_corridor()).map_err(|e| e.to_string())?;
    let mut problem = PlanningProblem::from_env(&env);
    problem.tol = 1e-11;
    let mut policies = 0;
    for kind in [MeasureKind::RelativeReachability, MeasureKind::FeatureDivergence] {
        let measure = MeasureSpec::from_env(kind, &env, 1);
        policies += check_sound(&problem, &measure, &grid).map_err(|e| format!("tiny corridor {kind}: {e}"))?;
    }
    Ok(format!(
        "30 random MDPs and a {}-state corridor ({policies} corridor policies): every solved point non-dominated",
        env.n_states()
    ))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    std::env::temp_dir().join(format!("impactlab-{tag}-{}-{nanos}", std::process::id()))
}

fn determinism() -> std::result::Result<String, String> {
    let mut outputs = Vec::new();
    for i in 0..2 {
        let dir = scratch_dir(&format!("det{i}"));
        let mut raw = RawConfig::default();
        raw.env.name = Some("vase_belt".into());
        raw.baseline.kind = Some("initial-inaction".into());
        raw.measure.kind = Some("relative-reachability".into());
        raw.planner.mu_grid = Some("0.01:100:8log".into());
        raw.run.seed = Some(42);
        raw.run.out = Some(dir.clone());
        let cfg = raw.resolve().map_err(|e| e.to_string())?;
        let report = run(&cfg).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for name in ["sweep.csv", "sweep.svg"] {
            files.push(std::fs::read(dir.join(name)).map_err(|e| e.to_string())?);
        }
        let _ = std::fs::remove_dir_all(&dir);
        outputs.push((files, report.rows.len()));
    }
    if outputs[0].0 == outputs[1].0 {
        Ok(format!("two runs, {} rows each, byte-identical sweep.csv and sweep.svg", outputs[0].1))
    } else {
        Err("sweep output differs between identical runs".into())
    }
}

/// Inaction world `k` steps after `s0`.
pub fn inaction_world(env: &CompiledEnv, k: usize) -> StateDist {
    inaction_pushforward(&env.mdp, &StateDist::point(env.n_states(), env.start), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_selects() {
        assert_eq!(selected(Some("telescoping")), vec![4]);
        assert_eq!(selected(Some("2")), vec![2]);
        assert_eq!(selected(None).len(), 8);
        assert!(selected(Some("nothing")).is_empty());
    }

    #[test]
    fn tiny_corridor_is_small() {
        let env = compile_to_mdp(&tiny_vase_corridor()).unwrap();
        assert!(env.n_states() <= 12, "{}", env.n_states());
    }

    #[test]
    fn flipped_relative_reachability_breaks_collapse() {
        assert!(family_collapse(Some(Fault::FlipRelativeReachability)).is_err());
    }
}
