pub mod datagen;
pub mod features;
pub mod tensor;
pub mod baselines;
pub mod model;
pub mod eval;
pub mod analysis;
pub mod config;
pub mod serve;
pub mod pipeline;
