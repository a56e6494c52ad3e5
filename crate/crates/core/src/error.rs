use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("absorbing state reached at t = {time}")]
    AbsorbedState { time: f64 },

    #[error("all {0} replicates were absorbed at t = 0")]
    AllAbsorbed(usize),

    #[error("reaction {reaction} fired with zero propensity")]
    ZeroFiredPropensity { reaction: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("state space is truncated; reaction {reaction} leaves the enumerated set")]
    TruncatedSpace { reaction: usize },

    #[error("fast reactions have full row rank; every state is in one fast class")]
    NoSlowInvariants,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("generator is reducible ({} communicating classes)", .classes.len())]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("{vanishing} singular values vanish; expected exactly one")]
    RankDeficiencyUnexpected { vanishing: usize },

    #[error("integration failed: {0}")]
    IntegrationFailure(String),

    #[error("macro process absorbed at t = {time}")]
    MacroAbsorbed { time: f64 },

    #[error("slow reaction {reaction} fired with zero averaged propensity")]
    ZeroMacroPropensity { reaction: usize },

    #[error("network is not linear: {0}")]
    NonlinearNetwork(String),

    #[error("dimension {dim} exceeds the cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
