use impactlab::baselines::BaselineSpec;
use impactlab::env::{build_named_env, compile_to_mdp, CompiledEnv, ENV_NAMES, NOOP};
use impactlab::measures::{action_impact, MeasureKind, MeasureSpec};
use impactlab::planner::{find_safe_effective_range, mu_sweep, Behavior, PlanningProblem};

fn compiled(name: &str) -> CompiledEnv {
    compile_to_mdp(&build_named_env(name).unwrap()).unwrap()
}

fn sweep(env: &CompiledEnv, kind: MeasureKind, baseline: BaselineSpec, grid: &[f64]) -> Vec<Option<Behavior>> {
    let problem = PlanningProblem::from_env(env);
    let spec = MeasureSpec::from_env(kind, env, 1);
    mu_sweep(&problem, &spec, &baseline, grid, 0)
        .unwrap()
        .into_iter()
        .map(|r| {
            assert!(r.error.is_none(), "{:?}", r.error);
            r.behavior
        })
        .collect()
}

#[test]
fn box_corner_extremes() {
    let env = compiled("box_corner");
    let b = sweep(&env, MeasureKind::RelativeReachability, BaselineSpec::stepwise(1).unwrap(), &[0.0, 1e6]);
    assert_eq!(b, vec![Some(Behavior::HarmfulEffective), Some(Behavior::SafeIneffective)]);
}

#[test]
fn huge_penalty_means_doing_nothing() {
    let baseline = BaselineSpec::stepwise(1).unwrap();
    for name in ENV_NAMES {
        let env = compiled(name);
        let problem = PlanningProblem::from_env(&env);
        let spec = MeasureSpec::from_env(MeasureKind::RelativeReachability, &env, 1);
        let rows = mu_sweep(&problem, &spec, &baseline, &[1e6], 3).unwrap();
        let traj = rows[0].trajectory.as_ref().unwrap();
        assert!(traj.actions.iter().all(|&a| a == NOOP), "{name}: {:?}", traj.actions);
    }
}

#[test]
fn vase_rescue_is_safe_and_effective_in_the_middle() {
    let env = compiled("vase_belt");
    let b = sweep(&env, MeasureKind::RelativeReachability, BaselineSpec::stepwise(1).unwrap(), &[0.1, 1.0, 10.0]);
    assert!(b.iter().all(|&x| x == Some(Behavior::SafeEffective)), "{b:?}");
}

#[test]
fn box_corner_has_a_safe_window() {
    let env = compiled("box_corner");
    let problem = PlanningProblem::from_env(&env);
    let spec = MeasureSpec::from_env(MeasureKind::RelativeReachability, &env, 1);
    let grid = impactlab::planner::mu_grid(0.001, 1000.0, 20, true).unwrap();
    let rows = mu_sweep(&problem, &spec, &BaselineSpec::stepwise(1).unwrap(), &grid, 0).unwrap();
    let ranges = find_safe_effective_range(&rows);
    assert_eq!(ranges.len(), 1, "{ranges:?}");
    let (lo, hi) = ranges[0];
    assert!(lo > 1.0 && hi < 100.0, "{lo}..{hi}");
}

#[test]
fn cornering_costs_more_than_pushing_aside() {
    let env = compiled("box_corner");
    let spec = MeasureSpec::from_env(MeasureKind::RelativeReachability, &env, 1);
    let baseline = BaselineSpec::stepwise(1).unwrap();
    // box sits directly below the agent; down pushes it into the corner
    let corner = action_impact(&spec, &baseline, &env.mdp, env.start, 0, env.start, 2).unwrap();
    // left, down puts the agent beside the box; right pushes it into the open
    let beside = env.follow(env.start, &[3, 2]);
    let aside = action_impact(&spec, &baseline, &env.mdp, env.start, 2, beside, 4).unwrap();
    assert!(env.annotations.side_effect[env.follow(env.start, &[2])]);
    assert!(!env.annotations.side_effect[env.follow(beside, &[4])]);
    assert!(corner.value > aside.value, "corner {} vs aside {}", corner.value, aside.value);
    assert!(aside.value > 0.0);
}
