pub mod adapters;
pub mod backbone;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod tokenizer;
pub mod motion;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod tensor;
