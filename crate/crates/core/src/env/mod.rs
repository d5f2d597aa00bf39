//! Gridworld environments: layouts, the text file format, and compilation
//! to tabular MDPs with per-state annotations.

mod builtin;
mod compile;
mod grid;
mod predicate;

pub use builtin::{build_named_env, pathology, DEFAULT_GAMMA, DEFAULT_HORIZON, ENV_NAMES, LAYOUT_VERSION};
pub use compile::{
    action_name, compile_to_mdp, compile_with_cap, CompiledEnv, Config, EnvAnnotations,
    DEFAULT_STATE_CAP, INTERACT, NOOP,
};
pub use grid::{
    load_env, save_env, Dir, FeatureDef, GridworldEnv, ObjectKind, ObjectSpec, Terrain,
    FORMAT_VERSION,
};
pub use predicate::Predicate;
