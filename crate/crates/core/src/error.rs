use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("incomplete pipeline: {0}")]
    IncompletePipeline(&'static str),

    #[error("register address out of range: {0}")]
    AddressOutOfRange(String),

    #[error("fault cycle {cycle} outside program of {total_cycles} cycles")]
    FaultCycle { cycle: u64, total_cycles: u64 },

    #[error("injection at cycle {fault_cycle} requested but pipeline is at cycle {state_cycle}")]
    InjectionTiming { fault_cycle: u64, state_cycle: u64 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn layer(layer: usize, msg: impl Into<String>) -> Self {
        Error::Layer {
            layer,
            msg: msg.into(),
        }
    }
}
