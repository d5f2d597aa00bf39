//! Impact measures.
//!
//! State-contrast measures compare an acted world with a baseline world,
//! both given as distributions. Expectations over a pair of distributions
//! use the maximal coupling: mass the arms have in common is paired state
//! with itself, and the remainder is paired independently. Point masses and
//! disjoint arms therefore behave as independent draws, while identical
//! arms always score zero.
//!
//! Action-contrast measures (attainable utility, utility/fact and
//! undetectability) compare taking `a` against the no-op from the same state
//! and therefore ignore the baseline kind.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use crate::baselines::{rollout_pair, BaselineKind, BaselineSpec};
use crate::env::CompiledEnv;
use crate::error::{Error, Result};
use crate::mdp::{inaction_pushforward, propagate, Mdp, StateDist};
use crate::solvers::{
    discount_pow, value_iteration, ReachabilityMatrix, StepMatrix, TaskReward,
};

/// How an [`ImpactResult`]'s breakdown combines into its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Max,
    OneMinusSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactResult {
    pub value: f64,
    /// Per feature, per auxiliary reward, per target state or per input,
    /// depending on the measure.
    pub breakdown: Vec<f64>,
    pub aggregation: Aggregation,
    /// Index of the maximizing component for max-aggregated measures.
    pub argmax: Option<usize>,
}

impl ImpactResult {
    fn sum(breakdown: Vec<f64>) -> Self {
        Self {
            value: breakdown.iter().sum(),
            breakdown,
            aggregation: Aggregation::Sum,
            argmax: None,
        }
    }

    fn max(breakdown: Vec<f64>) -> Self {
        let (argmax, value) = breakdown
            .iter()
            .copied()
            .enumerate()
            .fold((None, 0.0), |(bi, bv), (i, v)| {
                if bi.is_none() || v > bv {
                    (Some(i), v)
                } else {
                    (bi, bv)
                }
            });
        Self {
            value,
            breakdown,
            aggregation: Aggregation::Max,
            argmax,
        }
    }

    /// Recomputes the value from the breakdown.
    pub fn aggregate(&self) -> f64 {
        match self.aggregation {
            Aggregation::Sum => self.breakdown.iter().sum(),
            Aggregation::Max => self.breakdown.iter().copied().fold(0.0, f64::max),
            Aggregation::OneMinusSum => 1.0 - self.breakdown.iter().sum::<f64>(),
        }
    }

    pub fn zero() -> Self {
        Self::sum(vec![])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Relu,
    Abs,
}

impl Shape {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Shape::Relu => x.max(0.0),
            Shape::Abs => x.abs(),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Shape::Relu),
            "abs" => Ok(Shape::Abs),
            other => Err(Error::Config(format!("unknown shape '{other}' (relu or abs)"))),
        }
    }
}

/// A reward whose optimal value function enters a value-difference measure.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardFn {
    Table(TaskReward),
    /// Indicator of reaching a state, with accumulation ending there.
    Reach(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasureKind {
    FeatureDivergence,
    Aup,
    Unreachability,
    RelativeReachability,
    ValueDifference,
    FutureTasks,
    RelativeFeaturePenalty,
    UtilityFact,
    Undetectability,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 9] = [
        MeasureKind::FeatureDivergence,
        MeasureKind::Aup,
        MeasureKind::Unreachability,
        MeasureKind::RelativeReachability,
        MeasureKind::ValueDifference,
        MeasureKind::FutureTasks,
        MeasureKind::RelativeFeaturePenalty,
        MeasureKind::UtilityFact,
        MeasureKind::Undetectability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::FeatureDivergence => "feature-divergence",
            MeasureKind::Aup => "aup",
            MeasureKind::Unreachability => "unreachability",
            MeasureKind::RelativeReachability => "relative-reachability",
            MeasureKind::ValueDifference => "value-difference",
            MeasureKind::FutureTasks => "future-tasks",
            MeasureKind::RelativeFeaturePenalty => "relative-feature-penalty",
            MeasureKind::UtilityFact => "utility-fact",
            MeasureKind::Undetectability => "undetectability",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown measure '{s}'")))
    }
}

/// Measure selection plus every parameter any kind may need. Only the
/// fields the chosen kind reads must be populated; see [`MeasureSpec::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    /// `features[s]` is the feature vector of state `s`.
    pub features: Vec<Vec<f64>>,
    /// Auxiliary rewards for attainable utility.
    pub aux_rewards: Vec<TaskReward>,
    /// Reward set for value difference.
    pub vd_rewards: Vec<RewardFn>,
    pub vd_weights: Vec<f64>,
    pub shape: Shape,
    /// Utility functions over horizon-end states.
    pub utilities: Vec<Vec<f64>>,
    /// Facts conditioned on, as indicator vectors over horizon-end states.
    pub facts: Vec<Vec<bool>>,
    /// Events whose probability should not reveal the action.
    pub events: Vec<Vec<bool>>,
    /// Terminal flags for the future-tasks normalizer; all non-terminal when empty.
    pub terminal: Vec<bool>,
    /// Look-ahead for utility/fact and undetectability.
    pub horizon: usize,
    pub tol: f64,
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind) -> Self {
        Self {
            kind,
            features: Vec::new(),
            aux_rewards: Vec::new(),
            vd_rewards: Vec::new(),
            vd_weights: Vec::new(),
            shape: Shape::Relu,
            utilities: Vec::new(),
            facts: Vec::new(),
            events: Vec::new(),
            terminal: Vec::new(),
            horizon: 1,
            tol: 1e-10,
        }
    }

    /// Relative reachability as a value difference: relu, `1/|S|`, one
    /// reach reward per state.
    pub fn reachability_value_difference(n_states: usize) -> Self {
        let mut m = Self::new(MeasureKind::ValueDifference);
        m.shape = Shape::Relu;
        m.vd_rewards = (0..n_states).map(RewardFn::Reach).collect();
        m.vd_weights = vec![1.0 / n_states as f64; n_states];
        m
    }

    /// Defaults drawn from an environment's annotations: its feature table,
    /// its auxiliary rewards (also the value-difference set, abs-shaped with
    /// weights `1/N`), features as utilities, the trivial fact, side effects
    /// and the goal as events, and frozen states as terminal.
    pub fn from_env(kind: MeasureKind, env: &CompiledEnv, horizon: usize) -> Self {
        let a = &env.annotations;
        let mut m = Self::new(kind);
        m.features = a.feature_table.clone();
        m.aux_rewards = env.aux_rewards();
        m.vd_rewards = m.aux_rewards.iter().cloned().map(RewardFn::Table).collect();
        m.vd_weights = vec![1.0 / m.vd_rewards.len().max(1) as f64; m.vd_rewards.len()];
        m.shape = Shape::Abs;
        let n_features = a.feature_names.len();
        m.utilities = (0..n_features)
            .map(|i| a.feature_table.iter().map(|row| row[i]).collect())
            .collect();
        m.facts = vec![vec![true; env.n_states()]];
        m.events = a.side_effect_terms.iter().map(|(_, v)| v.clone()).collect();
        m.events.push(a.goal.clone());
        m.terminal = a.terminal.clone();
        m.horizon = horizon.max(1);
        m
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        let n = mdp.n_states();
        match self.kind {
            MeasureKind::FeatureDivergence | MeasureKind::RelativeFeaturePenalty => {
                check_features(&self.features, n)?;
            }
            MeasureKind::Aup => {
                if self.aux_rewards.is_empty() {
                    return Err(Error::MissingParameter("auxiliary reward set"));
                }
            }
            MeasureKind::ValueDifference => {
                if self.vd_rewards.is_empty() {
                    return Err(Error::MissingParameter("value-difference reward set"));
                }
                if self.vd_weights.len() != self.vd_rewards.len() {
                    return Err(Error::LengthMismatch(format!(
                        "{} weights for {} rewards",
                        self.vd_weights.len(),
                        self.vd_rewards.len()
                    )));
                }
                if self.vd_weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::InvalidParameter("weights must be non-negative".into()));
                }
            }
            MeasureKind::FutureTasks => {
                if !self.terminal.is_empty() && self.terminal.len() != n {
                    return Err(Error::LengthMismatch("terminal flags".into()));
                }
            }
            MeasureKind::UtilityFact => {
                if self.utilities.is_empty() {
                    return Err(Error::MissingParameter("utility set"));
                }
                if self.facts.is_empty() {
                    return Err(Error::MissingParameter("fact set"));
                }
                if self.utilities.iter().any(|u| u.len() != n) || self.facts.iter().any(|f| f.len() != n) {
                    return Err(Error::LengthMismatch("utilities/facts must cover every state".into()));
                }
            }
            MeasureKind::Undetectability => {
                if self.events.is_empty() {
                    return Err(Error::MissingParameter("event set"));
                }
                if self.events.iter().any(|g| g.len() != n) {
                    return Err(Error::LengthMismatch("events must cover every state".into()));
                }
            }
            MeasureKind::Unreachability | MeasureKind::RelativeReachability => {}
        }
        if matches!(self.kind, MeasureKind::UtilityFact | MeasureKind::Undetectability) && self.horizon == 0 {
            return Err(Error::InvalidParameter("look-ahead horizon must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_features(phi: &[Vec<f64>], n: usize) -> Result<()> {
    if phi.len() < n {
        return Err(Error::LengthMismatch(format!(
            "feature table has {} rows for {n} states",
            phi.len()
        )));
    }
    let width = phi.first().map_or(0, Vec::len);
    if phi.iter().any(|r| r.len() != width) {
        return Err(Error::LengthMismatch("feature rows differ in width".into()));
    }
    Ok(())
}

/// Calls `f(x, y, w)` for every pair of the maximal coupling of `acted`
/// and `baseline`.
fn coupled(acted: &StateDist, baseline: &StateDist, mut f: impl FnMut(usize, usize, f64)) {
    let (p, q) = (acted.probs(), baseline.probs());
    let mut shared = 0.0;
    for (s, (a, b)) in p.iter().zip(q).enumerate() {
        let o = a.min(*b);
        if o > 0.0 {
            f(s, s, o);
            shared += o;
        }
    }
    let rest = 1.0 - shared;
    if rest <= 1e-15 {
        return;
    }
    for (x, a) in p.iter().enumerate() {
        let rx = a - a.min(q[x]);
        if rx <= 0.0 {
            continue;
        }
        for (y, b) in q.iter().enumerate() {
            let ry = b - b.min(p[y]);
            if ry > 0.0 {
                f(x, y, rx * ry / rest);
            }
        }
    }
}

fn max_norm(a: &[f64], b: &[f64]) -> (usize, f64) {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) })
}

/// `E[||phi(s) - phi(s_b)||_inf]`. Each pair's distance is credited to its
/// (first) maximizing feature, so the breakdown sums to the value.
pub fn feature_divergence(phi: &[Vec<f64>], acted: &StateDist, baseline: &StateDist) -> Result<ImpactResult> {
    let need = acted.len().max(baseline.len());
    check_features(phi, need)?;
    let width = phi.first().map_or(0, Vec::len);
    let mut breakdown = vec![0.0; width];
    coupled(acted, baseline, |x, y, w| {
        let (i, d) = max_norm(&phi[x], &phi[y]);
        if d > 0.0 {
            breakdown[i] += w * d;
        }
    });
    Ok(ImpactResult::sum(breakdown))
}

/// Max-norm distance between feature vectors.
pub fn max_norm_distance(a: &[f64], b: &[f64]) -> f64 {
    max_norm(a, b).1
}

/// Optimal Q-tables for each auxiliary reward.
pub fn aux_q_tables(mdp: &Mdp, rewards: &[TaskReward], tol: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    rewards
        .iter()
        .map(|r| value_iteration(mdp, r, tol).map(|v| v.q))
        .collect()
}

/// Attainable-utility penalty from precomputed Q-tables:
/// `sum_i |Q_i(s,a) - Q_i(s,noop)| / sum_i |Q_i(s,noop)|`.
pub fn aup_from_q(q: &[Vec<Vec<f64>>], noop: usize, s: usize, a: usize) -> Result<ImpactResult> {
    if q.is_empty() {
        return Err(Error::MissingParameter("auxiliary reward set"));
    }
    let denom: f64 = q.iter().map(|qi| qi[s][noop].abs()).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateNormalization { state: s });
    }
    let breakdown = q
        .iter()
        .map(|qi| (qi[s][a] - qi[s][noop]).abs() / denom)
        .collect();
    Ok(ImpactResult::sum(breakdown))
}

pub fn aup_penalty(mdp: &Mdp, aux: &[TaskReward], s: usize, a: usize, tol: f64) -> Result<ImpactResult> {
    mdp.check_state(s)?;
    mdp.check_action(a)?;
    let q = aux_q_tables(mdp, aux, tol)?;
    aup_from_q(&q, mdp.noop(), s, a)
}

pub fn unreachability_with(reach: &ReachabilityMatrix, acted: &StateDist, baseline: &StateDist) -> ImpactResult {
    let mut v = 0.0;
    coupled(acted, baseline, |x, y, w| v += w * (1.0 - reach.get(x, y)));
    ImpactResult::sum(vec![v])
}

/// `E[1 - R(s; s_b)]`.
pub fn unreachability(mdp: &Mdp, acted: &StateDist, baseline: &StateDist, tol: f64) -> Result<ImpactResult> {
    Ok(unreachability_with(&ReachabilityMatrix::compute(mdp, tol)?, acted, baseline))
}

pub fn relative_reachability_with(reach: &ReachabilityMatrix, acted: &StateDist, baseline: &StateDist) -> ImpactResult {
    let n = reach.n_states();
    let mut breakdown = vec![0.0; n];
    coupled(acted, baseline, |x, y, w| {
        let (rx, ry) = (reach.row(x), reach.row(y));
        for s in 0..n {
            let d = ry[s] - rx[s];
            if d > 0.0 {
                breakdown[s] += w * d / n as f64;
            }
        }
    });
    ImpactResult::sum(breakdown)
}

/// `(1/|S|) sum_s max(R(s_b; s) - R(s; s), 0)`, per-target breakdown.
pub fn relative_reachability(mdp: &Mdp, acted: &StateDist, baseline: &StateDist, tol: f64) -> Result<ImpactResult> {
    Ok(relative_reachability_with(&ReachabilityMatrix::compute(mdp, tol)?, acted, baseline))
}

/// State values for each reward of a value-difference set.
pub fn reward_values(mdp: &Mdp, rewards: &[RewardFn], reach: Option<&ReachabilityMatrix>, tol: f64) -> Result<Vec<Vec<f64>>> {
    let mut owned = None;
    rewards
        .iter()
        .map(|r| match r {
            RewardFn::Table(t) => value_iteration(mdp, t, tol).map(|v| v.v),
            RewardFn::Reach(y) => {
                mdp.check_state(*y)?;
                let m = match reach {
                    Some(m) => m,
                    None => owned.get_or_insert(ReachabilityMatrix::compute(mdp, tol)?),
                };
                Ok((0..mdp.n_states()).map(|x| m.get(x, *y)).collect())
            }
        })
        .collect()
}

/// `sum_r w_r f(V_r(baseline) - V_r(acted))` from value vectors indexed by reward.
pub fn value_difference_from_values(shape: Shape, weights: &[f64], baseline: &[f64], acted: &[f64]) -> Result<ImpactResult> {
    if weights.len() != baseline.len() || weights.len() != acted.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights, {} baseline values, {} acted values",
            weights.len(),
            baseline.len(),
            acted.len()
        )));
    }
    Ok(ImpactResult::sum(
        weights
            .iter()
            .zip(baseline.iter().zip(acted))
            .map(|(w, (b, a))| w * shape.apply(b - a))
            .collect(),
    ))
}

/// Value difference lifted to distributions; `values[r][s]` is `V_r(s)`.
pub fn value_difference_with(
    values: &[Vec<f64>],
    shape: Shape,
    weights: &[f64],
    acted: &StateDist,
    baseline: &StateDist,
) -> Result<ImpactResult> {
    if weights.len() != values.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights for {} rewards",
            weights.len(),
            values.len()
        )));
    }
    let mut breakdown = vec![0.0; values.len()];
    coupled(acted, baseline, |x, y, w| {
        for (r, v) in values.iter().enumerate() {
            breakdown[r] += w * weights[r] * shape.apply(v[y] - v[x]);
        }
    });
    Ok(ImpactResult::sum(breakdown))
}

pub fn value_difference(
    mdp: &Mdp,
    shape: Shape,
    weights: &[f64],
    rewards: &[RewardFn],
    acted: &StateDist,
    baseline: &StateDist,
    tol: f64,
) -> Result<ImpactResult> {
    if weights.len() != rewards.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights for {} rewards",
            weights.len(),
            rewards.len()
        )));
    }
    let values = reward_values(mdp, rewards, None, tol)?;
    value_difference_with(&values, shape, weights, acted, baseline)
}

/// Future-tasks measure for a pair of states, exactly as written:
/// `1 - D/|S| sum_s gamma^{max(N_s(x) - N_s(b), 0)} gamma^{N_s(b)}` with
/// `D = 1` for terminal `x` and `1 - gamma` otherwise. Breakdown holds the
/// per-target terms; aggregation is one minus their sum.
pub fn future_tasks_with(steps: &StepMatrix, gamma: f64, n: usize, acted: usize, baseline: usize, terminal: bool) -> ImpactResult {
    let d = if terminal { 1.0 } else { 1.0 - gamma };
    let breakdown = (0..n)
        .map(|s| {
            let (nx, nb) = (steps.get(acted, s), steps.get(baseline, s));
            d / n as f64 * discount_pow(gamma, nx.max(nb))
        })
        .collect::<Vec<_>>();
    ImpactResult {
        value: 1.0 - breakdown.iter().sum::<f64>(),
        breakdown,
        aggregation: Aggregation::OneMinusSum,
        argmax: None,
    }
}

pub fn future_tasks(mdp: &Mdp, acted: usize, baseline: usize, terminal: bool) -> Result<ImpactResult> {
    mdp.check_state(acted)?;
    mdp.check_state(baseline)?;
    let steps = StepMatrix::compute(mdp);
    Ok(future_tasks_with(&steps, mdp.gamma(), mdp.n_states(), acted, baseline, terminal))
}

/// Future tasks measured against the baseline's own score,
/// `d_FT(x, b) - d_FT(b, b)`, lifted to distributions. Non-negative, and
/// zero when the arms coincide.
pub fn future_tasks_relative(
    steps: &StepMatrix,
    gamma: f64,
    acted: &StateDist,
    baseline: &StateDist,
    terminal: &[bool],
) -> ImpactResult {
    let n = acted.len();
    let mut breakdown = vec![0.0; n];
    coupled(acted, baseline, |x, y, w| {
        let d = if terminal.get(x).copied().unwrap_or(false) { 1.0 } else { 1.0 - gamma };
        for (s, slot) in breakdown.iter_mut().enumerate() {
            let nb = steps.get(y, s);
            let nx = steps.get(x, s);
            let term = discount_pow(gamma, nb) - discount_pow(gamma, nx.max(nb));
            *slot += w * d / n as f64 * term;
        }
    });
    ImpactResult::sum(breakdown)
}

/// Per-step relative feature penalties along a trajectory and its baseline
/// trajectory: `gamma d(phi(s_{t+1}), phi(b_{t+1})) - d(phi(s_t), phi(b_t))`.
pub fn relative_feature_penalty(
    phi: &[Vec<f64>],
    distance: impl Fn(&[f64], &[f64]) -> f64,
    trajectory: &[usize],
    baseline: &[usize],
    gamma: f64,
) -> Result<Vec<f64>> {
    if trajectory.len() != baseline.len() {
        return Err(Error::LengthMismatch(format!(
            "trajectory has {} states, baseline {}",
            trajectory.len(),
            baseline.len()
        )));
    }
    let d = |t: usize| -> Result<f64> {
        let (s, b) = (trajectory[t], baseline[t]);
        let (fs, fb) = (phi.get(s), phi.get(b));
        match (fs, fb) {
            (Some(fs), Some(fb)) => Ok(distance(fs, fb)),
            _ => Err(Error::LengthMismatch(format!("no feature row for state {}", s.max(b)))),
        }
    };
    (0..trajectory.len().saturating_sub(1))
        .map(|t| Ok(gamma * d(t + 1)? - d(t)?))
        .collect()
}

fn conditional_mean(dist: &StateDist, u: &[f64], fact: &[bool], idx: usize, arm: &'static str) -> Result<f64> {
    let mass = dist.mass_where(|s| fact[s]);
    if mass <= 0.0 {
        return Err(Error::ZeroProbabilityFact { fact: idx, arm });
    }
    let num: f64 = dist.support().filter(|(s, _)| fact[*s]).map(|(s, p)| p * u[s]).sum();
    Ok(num / mass)
}

/// Utility/fact measure on precomputed arms. Breakdown is indexed by
/// `u * |facts| + f`.
pub fn utility_fact_on_arms(utilities: &[Vec<f64>], facts: &[Vec<bool>], acted: &StateDist, noop: &StateDist) -> Result<ImpactResult> {
    if utilities.is_empty() || facts.is_empty() {
        return Err(Error::EmptyInput("utility and fact sets"));
    }
    let mut breakdown = Vec::with_capacity(utilities.len() * facts.len());
    for u in utilities {
        for (fi, f) in facts.iter().enumerate() {
            let ea = conditional_mean(acted, u, f, fi, "action")?;
            let en = conditional_mean(noop, u, f, fi, "no-op")?;
            breakdown.push((ea - en).abs());
        }
    }
    Ok(ImpactResult::max(breakdown))
}

/// `max_{u, f} |E[u | f, a] - E[u | f, noop]|` over states `horizon` steps ahead.
pub fn utility_fact_measure(
    mdp: &Mdp,
    utilities: &[Vec<f64>],
    facts: &[Vec<bool>],
    s: usize,
    a: usize,
    horizon: usize,
) -> Result<ImpactResult> {
    let (acted, noop) = rollout_pair(mdp, s, a, horizon)?;
    utility_fact_on_arms(utilities, facts, &acted, &noop)
}

pub fn undetectability_on_arms(events: &[Vec<bool>], acted: &StateDist, noop: &StateDist) -> Result<ImpactResult> {
    if events.is_empty() {
        return Err(Error::EmptyInput("event set"));
    }
    Ok(ImpactResult::max(
        events
            .iter()
            .map(|g| (acted.mass_where(|s| g[s]) - noop.mass_where(|s| g[s])).abs())
            .collect(),
    ))
}

/// `max_g |P(g | a, b) - P(g | noop, b)|` with the exact model standing in
/// for the agent's estimate of the ideal predictor.
pub fn undetectability_measure(mdp: &Mdp, events: &[Vec<bool>], background: usize, a: usize, horizon: usize) -> Result<ImpactResult> {
    let (acted, noop) = rollout_pair(mdp, background, a, horizon)?;
    undetectability_on_arms(events, &acted, &noop)
}

/// Conservative combination of several people's impact judgements.
pub fn aggregate_max(results: &[ImpactResult]) -> Result<ImpactResult> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no impact values to aggregate"));
    }
    Ok(ImpactResult::max(results.iter().map(|r| r.value).collect()))
}

/// Precomputed model quantities for repeated impact queries against one
/// MDP, measure and baseline.
#[derive(Debug)]
pub struct ImpactEvaluator<'a> {
    mdp: &'a Mdp,
    spec: MeasureSpec,
    baseline: BaselineSpec,
    origin: usize,
    reach: Option<ReachabilityMatrix>,
    steps: Option<StepMatrix>,
    aux_q: Vec<Vec<Vec<f64>>>,
    vd_values: Vec<Vec<f64>>,
    inaction: Mutex<Vec<StateDist>>,
}

impl<'a> ImpactEvaluator<'a> {
    /// `origin` is the `s0` the initial-state and initial-inaction baselines
    /// refer to.
    pub fn new(mdp: &'a Mdp, spec: MeasureSpec, baseline: BaselineSpec, origin: usize) -> Result<Self> {
        spec.validate(mdp)?;
        mdp.check_state(origin)?;
        let needs_reach = match spec.kind {
            MeasureKind::Unreachability | MeasureKind::RelativeReachability => true,
            MeasureKind::ValueDifference => spec.vd_rewards.iter().any(|r| matches!(r, RewardFn::Reach(_))),
            _ => false,
        };
        let reach = if needs_reach {
            Some(ReachabilityMatrix::compute(mdp, spec.tol)?)
        } else {
            None
        };
        let steps = (spec.kind == MeasureKind::FutureTasks).then(|| StepMatrix::compute(mdp));
        let aux_q = if spec.kind == MeasureKind::Aup {
            aux_q_tables(mdp, &spec.aux_rewards, spec.tol)?
        } else {
            Vec::new()
        };
        let vd_values = if spec.kind == MeasureKind::ValueDifference {
            reward_values(mdp, &spec.vd_rewards, reach.as_ref(), spec.tol)?
        } else {
            Vec::new()
        };
        Ok(Self {
            mdp,
            spec,
            baseline,
            origin,
            reach,
            steps,
            aux_q,
            vd_values,
            inaction: Mutex::new(vec![StateDist::point(mdp.n_states(), origin)]),
        })
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn baseline(&self) -> &BaselineSpec {
        &self.baseline
    }

    pub fn mdp(&self) -> &Mdp {
        self.mdp
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    /// `T_noop^t(s0)`, memoized.
    pub fn inaction_at(&self, t: usize) -> StateDist {
        let mut cache = self.inaction.lock().expect("inaction cache poisoned");
        while cache.len() <= t {
            let last = cache.last().expect("cache seeded with s0").clone();
            cache.push(inaction_pushforward(self.mdp, &last, 1));
        }
        cache[t].clone()
    }

    /// Acted and baseline worlds after taking `a` in `s` at time `t`.
    pub fn arms(&self, s: usize, a: usize, t: usize) -> Result<(StateDist, StateDist)> {
        let n = self.mdp.n_states();
        match self.baseline.kind {
            BaselineKind::StepwiseInaction => rollout_pair(self.mdp, s, a, self.baseline.rollout_horizon),
            BaselineKind::InitialState => Ok((
                propagate(self.mdp, &StateDist::point(n, s), a)?,
                StateDist::point(n, self.origin),
            )),
            BaselineKind::InitialInaction => Ok((
                propagate(self.mdp, &StateDist::point(n, s), a)?,
                self.inaction_at(t + 1),
            )),
        }
    }

    /// Baseline world at time `t` paired with the current state `s`.
    fn current_baseline(&self, s: usize, t: usize) -> StateDist {
        let n = self.mdp.n_states();
        match self.baseline.kind {
            BaselineKind::StepwiseInaction => StateDist::point(n, s),
            BaselineKind::InitialState => StateDist::point(n, self.origin),
            BaselineKind::InitialInaction => self.inaction_at(t),
        }
    }

    /// Scores one state-contrast measure on a pair of worlds.
    pub fn compare(&self, acted: &StateDist, baseline: &StateDist) -> Result<ImpactResult> {
        let spec = &self.spec;
        match spec.kind {
            MeasureKind::FeatureDivergence | MeasureKind::RelativeFeaturePenalty => {
                feature_divergence(&spec.features, acted, baseline)
            }
            MeasureKind::Unreachability => Ok(unreachability_with(self.reach_matrix(), acted, baseline)),
            MeasureKind::RelativeReachability => {
                Ok(relative_reachability_with(self.reach_matrix(), acted, baseline))
            }
            MeasureKind::ValueDifference => {
                value_difference_with(&self.vd_values, spec.shape, &spec.vd_weights, acted, baseline)
            }
            MeasureKind::FutureTasks => Ok(future_tasks_relative(
                self.steps.as_ref().expect("step matrix built for future tasks"),
                self.mdp.gamma(),
                acted,
                baseline,
                &spec.terminal,
            )),
            MeasureKind::Aup => Err(Error::InvalidParameter(
                "attainable utility compares actions, not worlds".into(),
            )),
            MeasureKind::UtilityFact => utility_fact_on_arms(&spec.utilities, &spec.facts, acted, baseline),
            MeasureKind::Undetectability => undetectability_on_arms(&spec.events, acted, baseline),
        }
    }

    fn reach_matrix(&self) -> &ReachabilityMatrix {
        self.reach.as_ref().expect("reachability matrix built for this measure")
    }

    /// Impact of taking `a` in `s` at episode time `t`.
    pub fn action_impact(&self, s: usize, a: usize, t: usize) -> Result<ImpactResult> {
        self.mdp.check_state(s)?;
        self.mdp.check_action(a)?;
        let spec = &self.spec;
        match spec.kind {
            MeasureKind::Aup => aup_from_q(&self.aux_q, self.mdp.noop(), s, a),
            MeasureKind::UtilityFact | MeasureKind::Undetectability => {
                let (acted, noop) = rollout_pair(self.mdp, s, a, spec.horizon)?;
                self.compare(&acted, &noop)
            }
            MeasureKind::RelativeFeaturePenalty => {
                let (acted, base) = self.arms(s, a, t)?;
                let next = feature_divergence(&spec.features, &acted, &base)?.value;
                let here = StateDist::point(self.mdp.n_states(), s);
                let prev = feature_divergence(&spec.features, &here, &self.current_baseline(s, t))?.value;
                Ok(ImpactResult::sum(vec![self.mdp.gamma() * next, -prev]))
            }
            _ => {
                let (acted, base) = self.arms(s, a, t)?;
                self.compare(&acted, &base)
            }
        }
    }
}

/// One-off impact query; builds an [`ImpactEvaluator`] internally.
pub fn action_impact(
    measure: &MeasureSpec,
    baseline: &BaselineSpec,
    mdp: &Mdp,
    origin: usize,
    t: usize,
    s: usize,
    a: usize,
) -> Result<ImpactResult> {
    ImpactEvaluator::new(mdp, measure.clone(), *baseline, origin)?.action_impact(s, a, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_lock(gamma: f64) -> Mdp {
        // state 0: noop stays, action 1 jumps to absorbing state 1
        Mdp::deterministic(&[vec![0, 1], vec![1, 1]], 0, gamma).unwrap()
    }

    #[test]
    fn feature_divergence_cases() {
        let phi = vec![vec![0.0], vec![4.0], vec![0.0]];
        let p = |s| StateDist::point(3, s);
        assert_eq!(feature_divergence(&phi, &p(0), &p(0)).unwrap().value, 0.0);
        assert_eq!(feature_divergence(&phi, &p(1), &p(0)).unwrap().value, 4.0);
        let half = StateDist::new(vec![0.5, 0.5, 0.0]).unwrap();
        let r = feature_divergence(&phi, &half, &p(2)).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.aggregate(), r.value);
        assert!(feature_divergence(&phi[..1], &p(0), &p(0)).is_err());
    }

    #[test]
    fn coupling_marginals_and_identity() {
        let a = StateDist::new(vec![0.5, 0.3, 0.2, 0.0]).unwrap();
        let b = StateDist::new(vec![0.1, 0.3, 0.0, 0.6]).unwrap();
        let (mut pa, mut pb, mut off_diag) = (vec![0.0; 4], vec![0.0; 4], 0.0);
        coupled(&a, &b, |x, y, w| {
            pa[x] += w;
            pb[y] += w;
            if x != y {
                off_diag += w;
            }
        });
        for s in 0..4 {
            assert!((pa[s] - a.probs()[s]).abs() < 1e-12);
            assert!((pb[s] - b.probs()[s]).abs() < 1e-12);
        }
        // total variation distance
        assert!((off_diag - 0.6).abs() < 1e-12);
        let phi = vec![vec![0.0], vec![1.0], vec![5.0], vec![2.0]];
        assert_eq!(feature_divergence(&phi, &a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn aup_closed_form() {
        // reward 1 for being in state 0; action 1 leaves it forever
        let g = 0.9;
        let m = two_state_lock(g);
        let r = TaskReward::from_state_reward(&[1.0, 0.0], 2);
        let q_noop = 1.0 / (1.0 - g);
        let q_leave = 1.0;
        let expected = (q_leave - q_noop).abs() / q_noop;
        let got = aup_penalty(&m, &[r.clone()], 0, 1, 1e-12).unwrap().value;
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert_eq!(aup_penalty(&m, &[r.clone()], 0, 0, 1e-12).unwrap().value, 0.0);
        let dup = aup_penalty(&m, &[r.clone(), r], 0, 1, 1e-12).unwrap().value;
        assert!((dup - expected).abs() < 1e-9);
    }

    #[test]
    fn aup_zero_denominator_is_an_error() {
        let m = two_state_lock(0.9);
        let zero = TaskReward::zeros(2, 2);
        assert!(matches!(
            aup_penalty(&m, &[zero], 0, 1, 1e-9),
            Err(Error::DegenerateNormalization { state: 0 })
        ));
    }

    #[test]
    fn unreachability_cases() {
        let g = 0.8;
        // 0 -> 1 -> 2 chain under action 1; 2 absorbing
        let m = Mdp::deterministic(&[vec![0, 1], vec![1, 2], vec![2, 2]], 0, g).unwrap();
        let p = |s| StateDist::point(3, s);
        assert_eq!(unreachability(&m, &p(1), &p(1), 1e-12).unwrap().value, 0.0);
        assert!((unreachability(&m, &p(2), &p(0), 1e-12).unwrap().value - 1.0).abs() < 1e-12);
        let k2 = unreachability(&m, &p(0), &p(2), 1e-12).unwrap().value;
        assert!((k2 - (1.0 - g * g)).abs() < 1e-9);
    }

    #[test]
    fn relative_reachability_two_state() {
        let g = 0.9;
        let m = two_state_lock(g);
        let p = |s| StateDist::point(2, s);
        assert_eq!(relative_reachability(&m, &p(0), &p(0), 1e-12).unwrap().value, 0.0);
        // acted in 1 loses state 0 (baseline R = 1) and keeps 1 (both ~)
        // baseline 0 reaches 1 with gamma, acted 1 reaches 1 with 1: clipped
        let r = relative_reachability(&m, &p(1), &p(0), 1e-12).unwrap();
        assert!((r.value - 0.5).abs() < 1e-9, "{}", r.value);
        // the gain of state 0 is clipped; only the slower route to 1 counts
        let back = relative_reachability(&m, &p(0), &p(1), 1e-12).unwrap();
        assert_eq!(back.breakdown[0], 0.0);
        assert!((back.value - (1.0 - g) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn relative_reachability_destroyed_access() {
        // baseline state 0 can reach 1 in one step (R = gamma); acted state 2
        // is a sink that reaches neither
        let g = 0.7;
        let m = Mdp::deterministic(&[vec![0, 1], vec![1, 1]], 0, g).unwrap();
        let p = |s| StateDist::point(2, s);
        // acted = 1 (cannot return to 0), baseline = 0
        let r = relative_reachability(&m, &p(1), &p(0), 1e-12).unwrap();
        // term for target 0: R(0;0) - R(1;0) = 1; target 1: gamma - 1 < 0
        assert!((r.breakdown[0] - 0.5).abs() < 1e-12);
        assert_eq!(r.breakdown[1], 0.0);
    }

    #[test]
    fn value_difference_shapes() {
        let g = 0.9;
        // action 1 moves from 0 to rewarding state 1 (a pure gain)
        let m = Mdp::deterministic(&[vec![0, 1], vec![1, 0]], 0, g).unwrap();
        let r = RewardFn::Table(TaskReward::from_state_reward(&[0.0, 1.0], 2));
        let p = |s| StateDist::point(2, s);
        let relu = value_difference(&m, Shape::Relu, &[1.0], &[r.clone()], &p(1), &p(0), 1e-10).unwrap();
        let abs = value_difference(&m, Shape::Abs, &[1.0], &[r.clone()], &p(1), &p(0), 1e-10).unwrap();
        assert_eq!(relu.value, 0.0);
        assert!(abs.value > 0.0);
        assert!(matches!(
            value_difference(&m, Shape::Abs, &[1.0, 1.0], &[r], &p(1), &p(0), 1e-10),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn future_tasks_single_state() {
        let m = Mdp::deterministic(&[vec![0]], 0, 0.9).unwrap();
        assert_eq!(future_tasks(&m, 0, 0, true).unwrap().value, 0.0);
    }

    #[test]
    fn future_tasks_chain_by_hand() {
        // chain 0 -> 1 -> 2 -> 2; acted at 0 is one step behind baseline at 1
        let g: f64 = 0.5;
        let m = Mdp::deterministic(&[vec![1], vec![2], vec![2]], 0, g).unwrap();
        // N(0) = [0,1,2], N(1) = [inf,0,1]
        // targets: s=0: max(0,inf) -> 0; s=1: max(1,0)=1 -> g; s=2: max(2,1)=2 -> g^2
        let d = 1.0 - g;
        let expected = 1.0 - d / 3.0 * (0.0 + g + g * g);
        let r = future_tasks(&m, 0, 1, false).unwrap();
        assert!((r.value - expected).abs() < 1e-12);
        assert_eq!(r.aggregate(), r.value);
    }

    #[test]
    fn future_tasks_unreachable_target_contributes_nothing() {
        let m = Mdp::deterministic(&[vec![0], vec![1]], 0, 0.9).unwrap();
        let r = future_tasks(&m, 0, 0, true).unwrap();
        assert_eq!(r.breakdown[1], 0.0);
    }

    #[test]
    fn relative_feature_penalty_cases() {
        let phi = vec![vec![0.0], vec![1.0], vec![3.0]];
        let same = relative_feature_penalty(&phi, max_norm_distance, &[0, 1, 2], &[0, 1, 2], 0.9).unwrap();
        assert!(same.iter().all(|p| *p == 0.0));
        let one = relative_feature_penalty(&phi, max_norm_distance, &[0, 2], &[0, 1], 0.9).unwrap();
        assert_eq!(one, vec![0.9 * 2.0]);
        assert!(relative_feature_penalty(&phi, max_norm_distance, &[0], &[0, 1], 0.9).is_err());
    }

    #[test]
    fn utility_fact_cases() {
        let p = 0.3;
        let m = Mdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![1.0 - p, p]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
            0,
            0.9,
        )
        .unwrap();
        let anything = vec![vec![true, true]];
        let constant = vec![vec![2.0, 2.0]];
        assert_eq!(utility_fact_measure(&m, &constant, &anything, 0, 1, 1).unwrap().value, 0.0);
        let ind = vec![vec![0.0, 1.0]];
        assert_eq!(utility_fact_measure(&m, &ind, &anything, 0, 0, 1).unwrap().value, 0.0);
        let r = utility_fact_measure(&m, &ind, &anything, 0, 1, 1).unwrap();
        assert!((r.value - p).abs() < 1e-12);
        assert_eq!(r.argmax, Some(0));
        let only_one = vec![vec![false, true]];
        assert!(matches!(
            utility_fact_measure(&m, &ind, &only_one, 0, 0, 1),
            Err(Error::ZeroProbabilityFact { .. })
        ));
    }

    #[test]
    fn undetectability_cases() {
        let m = two_state_lock(0.9);
        let certain = vec![vec![true, true]];
        assert_eq!(undetectability_measure(&m, &certain, 0, 1, 2).unwrap().value, 0.0);
        let in1 = vec![vec![false, true]];
        assert_eq!(undetectability_measure(&m, &in1, 0, 0, 2).unwrap().value, 0.0);
        assert_eq!(undetectability_measure(&m, &in1, 0, 1, 2).unwrap().value, 1.0);
    }

    #[test]
    fn aggregate_max_cases() {
        let r = |v: f64| ImpactResult::sum(vec![v]);
        assert_eq!(aggregate_max(&[r(0.4), r(0.4)]).unwrap().value, 0.4);
        assert_eq!(aggregate_max(&[r(0.0), r(0.25)]).unwrap().value, 0.25);
        let three = aggregate_max(&[r(0.1), r(0.7), r(0.3)]).unwrap();
        assert_eq!(three.value, 0.7);
        assert_eq!(three.argmax, Some(1));
        assert!(aggregate_max(&[]).is_err());
    }

    #[test]
    fn kind_names_parse_back() {
        for k in MeasureKind::ALL {
            assert_eq!(k.name().parse::<MeasureKind>().unwrap(), k);
        }
        assert!("nope".parse::<MeasureKind>().is_err());
    }
}
