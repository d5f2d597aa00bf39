//! Counterfactual comparison worlds.
//!
//! Three constructions, all returned as distributions over states:
//!
//! * `InitialState`: the world as it was at `s0`, forever.
//! * `InitialInaction`: `T_noop^t(s0)`, the world had the agent never acted.
//!   It ignores everything that happened after `s0`, which is exactly what
//!   invites offsetting: the agent is paid to undo its own past effects.
//! * `StepwiseInaction`: branch at the current state and let both arms roll
//!   forward `tau` steps, one after taking the action and one under no-op.
//!   `tau` equal to the remaining episode gives full future inaction.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mdp::{inaction_pushforward, propagate, Mdp, Policy, StateDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    InitialState,
    InitialInaction,
    StepwiseInaction,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::InitialState,
        BaselineKind::InitialInaction,
        BaselineKind::StepwiseInaction,
    ];
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::InitialState => "initial-state",
            BaselineKind::InitialInaction => "initial-inaction",
            BaselineKind::StepwiseInaction => "stepwise",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial-state" => Ok(BaselineKind::InitialState),
            "initial-inaction" => Ok(BaselineKind::InitialInaction),
            "stepwise" | "stepwise-inaction" => Ok(BaselineKind::StepwiseInaction),
            other => Err(Error::Config(format!(
                "unknown baseline '{other}' (expected initial-state, initial-inaction or stepwise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    /// Inaction rollout length `tau`, used by `StepwiseInaction`.
    pub rollout_horizon: usize,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind, rollout_horizon: usize) -> Result<Self> {
        if kind == BaselineKind::StepwiseInaction && rollout_horizon == 0 {
            return Err(Error::InvalidParameter(
                "stepwise inaction needs a rollout horizon of at least 1".into(),
            ));
        }
        Ok(Self {
            kind,
            rollout_horizon,
        })
    }

    pub fn initial_state() -> Self {
        Self {
            kind: BaselineKind::InitialState,
            rollout_horizon: 1,
        }
    }

    pub fn initial_inaction() -> Self {
        Self {
            kind: BaselineKind::InitialInaction,
            rollout_horizon: 1,
        }
    }

    pub fn stepwise(tau: usize) -> Result<Self> {
        Self::new(BaselineKind::StepwiseInaction, tau)
    }

    /// Whether the baseline depends on more than `s0`: elapsed time for
    /// initial inaction, the current state for stepwise inaction.
    pub fn history_required(&self) -> bool {
        self.kind != BaselineKind::InitialState
    }
}

/// Baseline world at time `t` for an episode that started in `s0` and is
/// currently in `current`.
pub fn baseline_dist(spec: &BaselineSpec, mdp: &Mdp, s0: usize, t: usize, current: usize) -> StateDist {
    let n = mdp.n_states();
    match spec.kind {
        BaselineKind::InitialState => StateDist::point(n, s0),
        BaselineKind::InitialInaction => inaction_pushforward(mdp, &StateDist::point(n, s0), t),
        BaselineKind::StepwiseInaction => StateDist::point(n, current),
    }
}

/// `(T_noop^{tau-1}(T(s_t, a_t)), T_noop^tau(s_t))`.
pub fn rollout_pair(mdp: &Mdp, s_t: usize, a_t: usize, tau: usize) -> Result<(StateDist, StateDist)> {
    if tau == 0 {
        return Err(Error::InvalidParameter("rollout horizon must be at least 1".into()));
    }
    mdp.check_state(s_t)?;
    let here = StateDist::point(mdp.n_states(), s_t);
    let acted = inaction_pushforward(mdp, &propagate(mdp, &here, a_t)?, tau - 1);
    let baseline = inaction_pushforward(mdp, &here, tau);
    Ok((acted, baseline))
}

/// Like [`rollout_pair`] but the acted arm follows `policy` for all `tau`
/// steps instead of one action followed by no-ops.
pub fn rollout_pair_with_policy<P: Policy + ?Sized>(
    mdp: &Mdp,
    s_t: usize,
    policy: &P,
    tau: usize,
) -> Result<(StateDist, StateDist)> {
    if tau == 0 {
        return Err(Error::InvalidParameter("rollout horizon must be at least 1".into()));
    }
    mdp.check_state(s_t)?;
    let here = StateDist::point(mdp.n_states(), s_t);
    let mut acted = here.clone();
    for k in 0..tau {
        let mut next = vec![0.0; mdp.n_states()];
        for (s, p) in acted.support() {
            for &(j, q) in mdp.successors(s, policy.action(s, k)) {
                next[j] += p * q;
            }
        }
        acted = StateDist::new(next)?;
    }
    let baseline = inaction_pushforward(mdp, &here, tau);
    Ok((acted, baseline))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conveyor3() -> Mdp {
        Mdp::deterministic(&[vec![1, 0], vec![2, 1], vec![2, 2]], 0, 0.9).unwrap()
    }

    #[test]
    fn initial_state_ignores_time() {
        let m = conveyor3();
        let spec = BaselineSpec::initial_state();
        for t in 0..4 {
            assert_eq!(baseline_dist(&spec, &m, 0, t, 2).as_point(), Some(0));
        }
    }

    #[test]
    fn initial_inaction_cases() {
        let m = conveyor3();
        let spec = BaselineSpec::initial_inaction();
        assert_eq!(
            baseline_dist(&spec, &m, 0, 0, 1),
            baseline_dist(&BaselineSpec::initial_state(), &m, 0, 0, 1)
        );
        assert_eq!(baseline_dist(&spec, &m, 0, 2, 0).as_point(), Some(2));
    }

    #[test]
    fn stepwise_needs_positive_tau() {
        assert!(BaselineSpec::stepwise(0).is_err());
        assert!(BaselineSpec::stepwise(1).unwrap().history_required());
        assert!(!BaselineSpec::initial_state().history_required());
    }

    #[test]
    fn rollout_pair_cases() {
        let m = conveyor3();
        for tau in 1..4 {
            let (a, b) = rollout_pair(&m, 0, 0, tau).unwrap();
            assert_eq!(a, b);
        }
        let (a, b) = rollout_pair(&m, 0, 1, 1).unwrap();
        assert_eq!(a.probs(), m.row(0, 1));
        assert_eq!(b.probs(), m.row(0, 0));
        assert!(rollout_pair(&m, 0, 1, 0).is_err());
    }

    #[test]
    fn policy_rollout_matches_single_action_form() {
        let m = conveyor3();
        let one_then_noop = |_s: usize, k: usize| if k == 0 { 1 } else { 0 };
        for tau in 1..4 {
            assert_eq!(
                rollout_pair_with_policy(&m, 0, &one_then_noop, tau).unwrap(),
                rollout_pair(&m, 0, 1, tau).unwrap()
            );
        }
    }
}
