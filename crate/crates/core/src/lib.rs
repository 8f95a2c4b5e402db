pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod train;
