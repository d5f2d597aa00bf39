use std::collections::VecDeque;

use impactlab::baselines::BaselineSpec;
use impactlab::env::{build_named_env, compile_to_mdp, load_env, save_env, CompiledEnv, ENV_NAMES, NOOP};
use impactlab::measures::{action_impact, MeasureKind, MeasureSpec};
use impactlab::verify::{subagent_impacts, SUBAGENT_DIRECT_AUP};

fn compiled(name: &str) -> CompiledEnv {
    compile_to_mdp(&build_named_env(name).unwrap()).unwrap()
}

/// Fewest steps from the start to a goal state, optionally avoiding side-effect states.
fn steps_to_goal(env: &CompiledEnv, avoid_side_effects: bool) -> Option<usize> {
    let n = env.n_states();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::from([env.start]);
    dist[env.start] = 0;
    while let Some(s) = queue.pop_front() {
        if env.annotations.goal[s] {
            return Some(dist[s]);
        }
        for a in 0..env.mdp.n_actions() {
            for &(t, _) in env.mdp.successors(s, a) {
                if avoid_side_effects && env.annotations.side_effect[t] {
                    continue;
                }
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
    }
    None
}

#[test]
fn every_builtin_has_a_reachable_goal() {
    for name in ENV_NAMES {
        let env = compiled(name);
        assert!(steps_to_goal(&env, false).is_some(), "{name}: goal unreachable");
        assert!(env.task.max_abs() > 0.0, "{name}: no task reward");
    }
}

#[test]
fn cornering_the_box_is_the_shortcut() {
    let env = compiled("box_corner");
    let fast = steps_to_goal(&env, false).unwrap();
    let safe = steps_to_goal(&env, true).unwrap();
    assert!(fast < safe, "harmful {fast} vs safe {safe}");
}

#[test]
fn every_builtin_can_finish_without_side_effects() {
    for name in ENV_NAMES {
        let env = compiled(name);
        assert!(steps_to_goal(&env, true).is_some(), "{name}");
    }
}

#[test]
fn idle_car_crashes() {
    let env = compiled("car_curve");
    let mut s = env.start;
    // one step onto the moving road, then do nothing
    s = env.follow(s, &[4]);
    let end = env.follow(s, &vec![NOOP; env.env.horizon]);
    assert!(env.annotations.side_effect[end], "{}", env.describe(end));
    assert!(env.annotations.terminal[end]);
}

#[test]
fn compilation_is_deterministic() {
    for name in ENV_NAMES {
        let a = compiled(name);
        let b = compiled(name);
        assert_eq!(a.n_states(), b.n_states());
        assert_eq!(a.start, b.start);
        assert_eq!(a.mdp.transition(), b.mdp.transition(), "{name}");
        assert_eq!(a.annotations, b.annotations, "{name}");
        assert_eq!(a.task.table(), b.task.table());
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in ENV_NAMES {
        let env = build_named_env(name).unwrap();
        let path = dir.path().join(format!("{name}.env"));
        save_env(&env, &path).unwrap();
        let back = load_env(&path).unwrap();
        assert_eq!(env, back, "{name}");
        let (a, b) = (compile_to_mdp(&env).unwrap(), compile_to_mdp(&back).unwrap());
        assert_eq!(a.mdp.transition(), b.mdp.transition());
    }
}

#[test]
fn loading_garbage_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.env");
    std::fs::write(&path, "impactlab-env 1\nname x\ngrid 2 2\n#A\n").unwrap();
    assert!(load_env(&path).is_err());
    assert!(load_env(dir.path().join("missing.env")).is_err());
    assert!(build_named_env("no_such_env").is_err());
}

#[test]
fn subagent_direct_break_regression() {
    let (assemble, direct) = subagent_impacts(MeasureKind::Aup).unwrap();
    assert!((direct.value - SUBAGENT_DIRECT_AUP).abs() < 1e-6, "{}", direct.value);
    assert!(assemble.value < direct.value);
}

#[test]
fn noop_from_start_is_free_under_stepwise() {
    for name in ENV_NAMES {
        let env = compiled(name);
        for kind in [MeasureKind::RelativeReachability, MeasureKind::FeatureDivergence, MeasureKind::Aup] {
            let spec = MeasureSpec::from_env(kind, &env, 1);
            let r = action_impact(&spec, &BaselineSpec::stepwise(1).unwrap(), &env.mdp, env.start, 0, env.start, NOOP)
                .unwrap();
            assert!(r.value.abs() < 1e-12, "{name} {kind}: {}", r.value);
        }
    }
}
