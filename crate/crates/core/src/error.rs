use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {}", .0.join("; "))]
    InvalidMdp(Vec<String>),

    #[error("state {state} out of range (n_states = {n_states})")]
    StateOutOfRange { state: usize, n_states: usize },

    #[error("action {action} out of range (n_actions = {n_actions})")]
    ActionOutOfRange { action: usize, n_actions: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("non-finite reward at (state {state}, action {action})")]
    NonFiniteReward { state: usize, action: usize },

    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),

    #[error("value iteration did not reach tolerance {tol} within {iterations} sweeps")]
    NotConverged { tol: f64, iterations: usize },

    #[error("policy enumeration needs {needed} policies, cap is {cap}")]
    EnumerationCap { needed: f64, cap: u64 },

    #[error("unknown environment '{0}'")]
    UnknownEnv(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported environment file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid environment: {0}")]
    InvalidEnv(String),

    #[error("state space exceeds cap of {cap} states")]
    StateSpaceTooLarge { cap: usize },

    #[error("degenerate normalization at state {state}: sum of |Q(s, noop)| is zero")]
    DegenerateNormalization { state: usize },

    #[error("fact {fact} has zero probability under the {arm} arm")]
    ZeroProbabilityFact { fact: usize, arm: &'static str },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("missing measure parameter: {0}")]
    MissingParameter(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("impact at (state {state}, action {action}): {source}")]
    AtStateAction {
        state: usize,
        action: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
