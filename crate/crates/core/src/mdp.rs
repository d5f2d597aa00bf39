//! Finite MDP substrate: dense transition tables, exact distribution
//! propagation and seeded trajectory sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance used when validating probability vectors.
pub const PROB_TOL: f64 = 1e-9;

/// A finite MDP without a built-in reward. Rewards are supplied per analysis.
///
/// `transition[s][a]` is a dense probability vector over next states.
/// The sparse support of every row is cached at construction so that the
/// solvers do not pay for zero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    noop: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    support: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Mdp {
    /// Builds an MDP and checks every invariant.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, noop: usize, gamma: f64) -> Result<Self> {
        let mdp = Self::new_unchecked(transition, noop, gamma);
        let violations = validate_mdp(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(violations))
        }
    }

    /// Builds an MDP without validation. Use [`validate_mdp`] to inspect it.
    pub fn new_unchecked(transition: Vec<Vec<Vec<f64>>>, noop: usize, gamma: f64) -> Self {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        let support = transition
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(_, &p)| p > 0.0)
                            .map(|(j, &p)| (j, p))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            n_states,
            n_actions,
            noop,
            gamma,
            transition,
            support,
        }
    }

    /// Deterministic MDP from a successor table `next[s][a]`.
    pub fn deterministic(next: &[Vec<usize>], noop: usize, gamma: f64) -> Result<Self> {
        let n = next.len();
        let table = next
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&t| {
                        let mut v = vec![0.0; n];
                        if t < n {
                            v[t] = 1.0;
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        Self::new(table, noop, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn noop(&self) -> usize {
        self.noop
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &[Vec<Vec<f64>>] {
        &self.transition
    }

    /// Transition row for `(state, action)`.
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        &self.transition[state][action]
    }

    /// Non-zero entries of the transition row for `(state, action)`.
    pub fn successors(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.support[state][action]
    }

    /// Same dynamics with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.transition.clone(), self.noop, gamma)
    }

    pub fn is_deterministic(&self) -> bool {
        self.support.iter().flatten().all(|succ| succ.len() == 1)
    }

    pub(crate) fn check_state(&self, state: usize) -> Result<()> {
        if state < self.n_states {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                state,
                n_states: self.n_states,
            })
        }
    }

    pub(crate) fn check_action(&self, action: usize) -> Result<()> {
        if action < self.n_actions {
            Ok(())
        } else {
            Err(Error::ActionOutOfRange {
                action,
                n_actions: self.n_actions,
            })
        }
    }
}

/// Returns one message per violated invariant; empty when the MDP is well formed.
pub fn validate_mdp(mdp: &Mdp) -> Vec<String> {
    let mut out = Vec::new();
    if mdp.n_states == 0 {
        out.push("no states".to_string());
    }
    if mdp.n_actions == 0 {
        out.push("no actions".to_string());
    }
    if mdp.noop >= mdp.n_actions {
        out.push(format!(
            "noop action {} out of range (n_actions = {})",
            mdp.noop, mdp.n_actions
        ));
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        out.push(format!("gamma out of range: {} not in (0,1)", mdp.gamma));
    }
    for (s, rows) in mdp.transition.iter().enumerate() {
        if rows.len() != mdp.n_actions {
            out.push(format!(
                "state {s}: {} actions, expected {}",
                rows.len(),
                mdp.n_actions
            ));
            continue;
        }
        for (a, row) in rows.iter().enumerate() {
            if row.len() != mdp.n_states {
                out.push(format!(
                    "row (state {s}, action {a}): length {} != {}",
                    row.len(),
                    mdp.n_states
                ));
                continue;
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                out.push(format!("row (state {s}, action {a}): negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(format!("row (state {s}, action {a}): sums to {sum}, not 1"));
            }
        }
    }
    out
}

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDist {
    probs: Vec<f64>,
}

impl StateDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < -PROB_TOL || *p > 1.0 + PROB_TOL) {
            return Err(Error::InvalidDistribution(
                "entries must lie in [0,1]".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn point(n_states: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n_states];
        probs[state] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Non-zero entries in index order.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| (s, p))
    }

    /// The state carrying all the mass, if the distribution is a point mass.
    pub fn as_point(&self) -> Option<usize> {
        let mut it = self.support();
        match (it.next(), it.next()) {
            (Some((s, p)), None) if (p - 1.0).abs() <= PROB_TOL => Some(s),
            _ => None,
        }
    }

    /// Probability of a set of states given as a predicate.
    pub fn mass_where(&self, pred: impl Fn(usize) -> bool) -> f64 {
        self.support().filter(|(s, _)| pred(*s)).map(|(_, p)| p).sum()
    }

    pub fn max_abs_diff(&self, other: &StateDist) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One application of `T_action` to a distribution.
pub fn propagate(mdp: &Mdp, dist: &StateDist, action: usize) -> Result<StateDist> {
    mdp.check_action(action)?;
    if dist.len() != mdp.n_states() {
        return Err(Error::InvalidDistribution(format!(
            "length {} != n_states {}",
            dist.len(),
            mdp.n_states()
        )));
    }
    let mut out = vec![0.0; mdp.n_states()];
    for (s, p) in dist.support() {
        for &(next, q) in mdp.successors(s, action) {
            out[next] += p * q;
        }
    }
    Ok(StateDist { probs: out })
}

/// `k`-fold application of the no-op transition.
pub fn inaction_pushforward(mdp: &Mdp, dist: &StateDist, k: usize) -> StateDist {
    let mut cur = dist.clone();
    for _ in 0..k {
        cur = propagate(mdp, &cur, mdp.noop()).expect("noop is validated at construction");
    }
    cur
}

/// A (possibly time-dependent) deterministic policy.
pub trait Policy {
    fn action(&self, state: usize, t: usize) -> usize;
}

impl Policy for [usize] {
    fn action(&self, state: usize, _t: usize) -> usize {
        self[state]
    }
}

impl Policy for Vec<usize> {
    fn action(&self, state: usize, _t: usize) -> usize {
        self[state]
    }
}

impl<F: Fn(usize, usize) -> usize> Policy for F {
    fn action(&self, state: usize, t: usize) -> usize {
        self(state, t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn last_state(&self) -> usize {
        *self.states.last().expect("trajectory has at least one state")
    }
}

/// Samples `horizon` steps from `s0`. Transitions with a single successor
/// consume no randomness, so deterministic MDPs give seed-independent output.
pub fn sample_trajectory<P: Policy + ?Sized>(
    mdp: &Mdp,
    policy: &P,
    s0: usize,
    horizon: usize,
    seed: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    states.push(s0);
    let mut s = s0;
    for t in 0..horizon {
        let a = policy.action(s, t);
        let succ = mdp.successors(s, a);
        let next = if succ.len() == 1 {
            succ[0].0
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = succ.last().map(|x| x.0).unwrap_or(s);
            for &(j, p) in succ {
                acc += p;
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            chosen
        };
        actions.push(a);
        states.push(next);
        s = next;
    }
    Trajectory {
        states,
        actions,
        seed,
    }
}
