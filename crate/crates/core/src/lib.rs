//! Cycle-accurate simulation of a weight-stationary int8 systolic-array
//! accelerator with single-bit-flip fault injection.

pub mod campaign;
pub mod datapath;
pub mod error;
pub mod fault;
pub mod fixture;
pub mod lowering;
pub mod model;
pub mod model_io;
pub mod quant;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod stats;
pub mod tensor;

pub use datapath::{GroupClass, PipelineState, RegisterGroup, SaConfig};
pub use error::{Error, Result};
pub use fault::{classify, FaultSpec, Outcome, OutcomeKind, RegisterAddress};
pub use model::{LayerSpec, ModelSpec};
pub use quant::{Lut, Shift};
pub use scheduler::{compile, reference_inference, run_golden, CycleProgram};
pub use tensor::{QuantTensor, TensorI32, TensorI8};
