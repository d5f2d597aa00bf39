//! Exact dynamic programming over finite MDPs: optimal values, reachability,
//! support-graph step counts, policy enumeration and Pareto filtering.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::Mdp;

/// Sentinel for "no path" in step-count tables.
pub const UNREACHABLE: usize = usize::MAX;

/// Default cap on the number of policies [`enumerate_policies`] will yield.
pub const DEFAULT_POLICY_CAP: u64 = 10_000_000;

const MAX_SWEEPS: usize = 200_000;

/// Two Q-values closer than this count as tied during greedy extraction.
pub const TIE_EPS: f64 = 1e-10;

/// `gamma^steps`, with `gamma^UNREACHABLE = 0`.
pub fn discount_pow(gamma: f64, steps: usize) -> f64 {
    if steps == UNREACHABLE {
        0.0
    } else {
        gamma.powi(steps as i32)
    }
}

/// Reward table over `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReward {
    table: Vec<Vec<f64>>,
}

impl TaskReward {
    pub fn new(table: Vec<Vec<f64>>) -> Self {
        Self { table }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            table: vec![vec![0.0; n_actions]; n_states],
        }
    }

    /// Embeds a state-only reward by ignoring the action.
    pub fn from_state_reward(values: &[f64], n_actions: usize) -> Self {
        Self {
            table: values.iter().map(|&r| vec![r; n_actions]).collect(),
        }
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.table[state][action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.table[state][action] = value;
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn max_abs(&self) -> f64 {
        self.table
            .iter()
            .flatten()
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.table.len() != mdp.n_states()
            || self.table.iter().any(|r| r.len() != mdp.n_actions())
        {
            return Err(Error::LengthMismatch(format!(
                "reward table is not {}x{}",
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        for (s, row) in self.table.iter().enumerate() {
            if let Some(a) = row.iter().position(|r| !r.is_finite()) {
                return Err(Error::NonFiniteReward {
                    state: s,
                    action: a,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueResult {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change of `v` after each sweep.
    pub residuals: Vec<f64>,
}

impl ValueResult {
    pub fn greedy_policy(&self, noop: usize) -> Vec<usize> {
        self.q.iter().map(|row| greedy_action(row, noop)).collect()
    }
}

/// Argmax with ties resolved toward `noop`, then toward the lowest index.
pub fn greedy_action(q: &[f64], noop: usize) -> usize {
    let mut best = noop;
    for (a, &v) in q.iter().enumerate() {
        if v > q[best] + TIE_EPS {
            best = a;
        }
    }
    // a later action may have beaten noop by more than TIE_EPS while an
    // earlier one is tied with it
    let top = q[best];
    if top - q[noop] <= TIE_EPS {
        return noop;
    }
    q.iter().position(|&v| top - v <= TIE_EPS).unwrap_or(best)
}

/// Optimal values for a reward table. Sweeps from `v = 0` until the
/// sup-norm residual drops to `tol * (1 - gamma) / 2`, which bounds the
/// distance to the true fixed point by `tol`.
pub fn value_iteration(mdp: &Mdp, reward: &TaskReward, tol: f64) -> Result<ValueResult> {
    if !(tol > 0.0) {
        return Err(Error::BadTolerance(tol));
    }
    reward.check(mdp)?;
    let gamma = mdp.gamma();
    let stop = tol * (1.0 - gamma) / 2.0;
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    loop {
        let q = bellman_q(mdp, reward, &v);
        let next: Vec<f64> = q.iter().map(|row| max_of(row)).collect();
        let residual = sup_diff(&next, &v);
        v = next;
        residuals.push(residual);
        if residual <= stop {
            break;
        }
        if residuals.len() >= MAX_SWEEPS {
            return Err(Error::NotConverged {
                tol,
                iterations: residuals.len(),
            });
        }
    }
    let q = bellman_q(mdp, reward, &v);
    let v: Vec<f64> = q.iter().map(|row| max_of(row)).collect();
    Ok(ValueResult {
        v,
        q,
        residual: *residuals.last().unwrap_or(&0.0),
        iterations: residuals.len(),
        residuals,
    })
}

fn bellman_q(mdp: &Mdp, reward: &TaskReward, v: &[f64]) -> Vec<Vec<f64>> {
    let gamma = mdp.gamma();
    (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| {
                    let ev: f64 = mdp.successors(s, a).iter().map(|&(j, p)| p * v[j]).sum();
                    reward.get(s, a) + gamma * ev
                })
                .collect()
        })
        .collect()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Optimal values of the indicator reward for `target` when reaching the
/// target ends accumulation: `V(x) = max_pi E[gamma^N]`.
///
/// Returns `(v, q)` where `q[x][a]` is the value of taking `a` first.
pub fn reachability_values(mdp: &Mdp, target: usize, tol: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !(tol > 0.0) {
        return Err(Error::BadTolerance(tol));
    }
    mdp.check_state(target)?;
    let gamma = mdp.gamma();
    let stop = tol * (1.0 - gamma) / 2.0;
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    v[target] = 1.0;
    let q_of = |v: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|x| {
                (0..mdp.n_actions())
                    .map(|a| {
                        if x == target {
                            1.0
                        } else {
                            gamma
                                * mdp
                                    .successors(x, a)
                                    .iter()
                                    .map(|&(j, p)| p * v[j])
                                    .sum::<f64>()
                        }
                    })
                    .collect()
            })
            .collect()
    };
    for sweep in 0.. {
        let q = q_of(&v);
        let next: Vec<f64> = q.iter().map(|row| max_of(row)).collect();
        let residual = sup_diff(&next, &v);
        v = next;
        if residual <= stop {
            break;
        }
        if sweep >= MAX_SWEEPS {
            return Err(Error::NotConverged {
                tol,
                iterations: sweep,
            });
        }
    }
    let q = q_of(&v);
    Ok((v, q))
}

/// `R(x; y)`: discounted first-hitting reachability of `y` from `x`.
pub fn reachability(mdp: &Mdp, x: usize, y: usize, tol: f64) -> Result<f64> {
    mdp.check_state(x)?;
    if x == y {
        return Ok(1.0);
    }
    Ok(reachability_values(mdp, y, tol)?.0[x])
}

/// All-pairs reachability `R(x; y)`, stored row-major by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityMatrix {
    n: usize,
    r: Vec<f64>,
}

impl ReachabilityMatrix {
    /// Runs the reachability recursion for every target at once.
    pub fn compute(mdp: &Mdp, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::BadTolerance(tol));
        }
        let n = mdp.n_states();
        let gamma = mdp.gamma();
        let stop = tol * (1.0 - gamma) / 2.0;
        let mut r = vec![0.0; n * n];
        for x in 0..n {
            r[x * n + x] = 1.0;
        }
        for sweep in 0.. {
            let rows: Vec<(Vec<f64>, f64)> = (0..n)
                .into_par_iter()
                .map(|x| {
                    let mut best = vec![0.0f64; n];
                    let mut acc = vec![0.0f64; n];
                    for a in 0..mdp.n_actions() {
                        acc.iter_mut().for_each(|v| *v = 0.0);
                        for &(j, p) in mdp.successors(x, a) {
                            let src = &r[j * n..(j + 1) * n];
                            for (dst, s) in acc.iter_mut().zip(src) {
                                *dst += p * s;
                            }
                        }
                        for (b, v) in best.iter_mut().zip(&acc) {
                            let cand = gamma * v;
                            if cand > *b {
                                *b = cand;
                            }
                        }
                    }
                    best[x] = 1.0;
                    let change = best
                        .iter()
                        .zip(&r[x * n..(x + 1) * n])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    (best, change)
                })
                .collect();
            let mut residual = 0.0f64;
            for (x, (row, change)) in rows.into_iter().enumerate() {
                r[x * n..(x + 1) * n].copy_from_slice(&row);
                residual = residual.max(change);
            }
            if residual <= stop {
                break;
            }
            if sweep >= MAX_SWEEPS {
                return Err(Error::NotConverged {
                    tol,
                    iterations: sweep,
                });
            }
        }
        Ok(Self { n, r })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.r[from * self.n + to]
    }

    /// `R(from; ·)` for every target.
    pub fn row(&self, from: usize) -> &[f64] {
        &self.r[from * self.n..(from + 1) * self.n]
    }
}

/// Breadth-first step counts over the support graph; unreachable states get
/// [`UNREACHABLE`].
pub fn min_steps(mdp: &Mdp, from: usize) -> Vec<usize> {
    let n = mdp.n_states();
    let mut dist = vec![UNREACHABLE; n];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        for a in 0..mdp.n_actions() {
            for &(j, _) in mdp.successors(s, a) {
                if dist[j] == UNREACHABLE {
                    dist[j] = dist[s] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist
}

/// Step counts from every state, row-major by source.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrix {
    n: usize,
    steps: Vec<usize>,
}

impl StepMatrix {
    pub fn compute(mdp: &Mdp) -> Self {
        let n = mdp.n_states();
        let rows: Vec<Vec<usize>> = (0..n).into_par_iter().map(|s| min_steps(mdp, s)).collect();
        Self {
            n,
            steps: rows.into_iter().flatten().collect(),
        }
    }

    pub fn get(&self, from: usize, to: usize) -> usize {
        self.steps[from * self.n + to]
    }
}

/// Lexicographic stream over all deterministic stationary policies.
#[derive(Debug, Clone)]
pub struct PolicyEnumerator {
    n_actions: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for PolicyEnumerator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut i = succ.len();
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            succ[i] += 1;
            if succ[i] < self.n_actions {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(current)
    }
}

/// All `n_actions^n_states` deterministic stationary policies, refusing
/// when the count exceeds `cap`.
pub fn enumerate_policies(mdp: &Mdp, cap: u64) -> Result<PolicyEnumerator> {
    let needed = (mdp.n_actions() as f64).powi(mdp.n_states() as i32);
    if needed > cap as f64 {
        return Err(Error::EnumerationCap { needed, cap });
    }
    Ok(PolicyEnumerator {
        n_actions: mdp.n_actions(),
        next: Some(vec![0; mdp.n_states()]),
    })
}

/// Exact discounted value of a stationary policy for the per-step reward
/// `reward(s, a)`, by solving `(I - gamma P) v = r` directly.
pub fn evaluate_policy(mdp: &Mdp, policy: &[usize], reward: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let act = policy[s];
        for &(j, p) in mdp.successors(s, act) {
            a[(s, j)] -= gamma * p;
        }
        b[s] = reward(s, act);
    }
    // I - gamma P is strictly diagonally dominant for gamma < 1
    let x = a.lu().solve(&b).expect("I - gamma P is nonsingular");
    x.iter().copied().collect()
}

/// Indices of the non-dominated `(value, impact)` points, ordered by value
/// descending, then impact ascending, then index.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let dominates = |p: (f64, f64), q: (f64, f64)| {
        p.0 >= q.0 && p.1 <= q.1 && (p.0 > q.0 || p.1 < q.1)
    };
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| !points.iter().any(|&p| dominates(p, points[i])))
        .collect();
    keep.sort_by(|&i, &j| {
        points[j]
            .0
            .total_cmp(&points[i].0)
            .then(points[i].1.total_cmp(&points[j].1))
            .then(i.cmp(&j))
    });
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_series() {
        let m = Mdp::deterministic(&[vec![0]], 0, 0.9).unwrap();
        let r = TaskReward::new(vec![vec![1.0]]);
        let res = value_iteration(&m, &r, 1e-8).unwrap();
        assert!((res.v[0] - 10.0).abs() <= 1e-8);
        assert!(res.residual <= 1e-8);
    }

    #[test]
    fn zero_reward_zero_value() {
        let m = Mdp::deterministic(&[vec![1, 0], vec![0, 1]], 0, 0.9).unwrap();
        let res = value_iteration(&m, &TaskReward::zeros(2, 2), 1e-6).unwrap();
        assert_eq!(res.v, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_reward_rejected() {
        let m = Mdp::deterministic(&[vec![0]], 0, 0.9).unwrap();
        let r = TaskReward::new(vec![vec![f64::NAN]]);
        assert!(matches!(
            value_iteration(&m, &r, 1e-6),
            Err(Error::NonFiniteReward { .. })
        ));
    }

    #[test]
    fn reachability_basics() {
        // 0 -> 1 -> 2 -> 2, and 3 isolated
        let m = Mdp::deterministic(&[vec![1], vec![2], vec![2], vec![3]], 0, 0.8).unwrap();
        assert_eq!(reachability(&m, 1, 1, 1e-12).unwrap(), 1.0);
        assert_eq!(reachability(&m, 0, 3, 1e-12).unwrap(), 0.0);
        assert!((reachability(&m, 0, 2, 1e-12).unwrap() - 0.64).abs() < 1e-12);
        let rm = ReachabilityMatrix::compute(&m, 1e-12).unwrap();
        assert!((rm.get(0, 2) - 0.64).abs() < 1e-12);
        assert_eq!(rm.get(2, 0), 0.0);
    }

    #[test]
    fn min_steps_cases() {
        let cycle = Mdp::deterministic(&[vec![1, 3], vec![2, 0], vec![3, 1], vec![0, 2]], 0, 0.9)
            .unwrap();
        assert_eq!(min_steps(&cycle, 0), vec![0, 1, 2, 1]);
        let iso = Mdp::deterministic(&[vec![0], vec![1]], 0, 0.9).unwrap();
        assert_eq!(min_steps(&iso, 0), vec![0, UNREACHABLE]);
    }

    #[test]
    fn enumeration_counts_and_order() {
        let m = |s: usize, a: usize| Mdp::deterministic(&vec![vec![0; a]; s], 0, 0.9).unwrap();
        assert_eq!(enumerate_policies(&m(2, 2), 100).unwrap().count(), 4);
        let all: Vec<_> = enumerate_policies(&m(3, 2), 100).unwrap().collect();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 0, 1]);
        assert_eq!(all[7], vec![1, 1, 1]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
        assert_eq!(enumerate_policies(&m(1, 5), 100).unwrap().count(), 5);
        assert!(matches!(
            enumerate_policies(&m(3, 5), 100),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn pareto_cases() {
        assert_eq!(pareto_frontier(&[(1.0, 1.0)]), vec![0]);
        assert_eq!(pareto_frontier(&[(1.0, 1.0), (1.0, 2.0)]), vec![0]);
        let pts = [(3.0, 5.0), (2.0, 1.0), (1.0, 0.0), (2.5, 4.0)];
        // (2.5, 4) survives: only (3, 5) has more value, and it has more impact
        assert_eq!(pareto_frontier(&pts), vec![0, 3, 1, 2]);
    }

    #[test]
    fn greedy_prefers_noop_on_ties() {
        assert_eq!(greedy_action(&[1.0, 1.0, 0.5], 0), 0);
        assert_eq!(greedy_action(&[1.0, 2.0, 2.0], 0), 1);
        assert_eq!(greedy_action(&[0.0, 1.0, 1.0 + 1e-12], 0), 1);
    }
}
