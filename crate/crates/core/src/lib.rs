pub mod dataset;
pub mod envs;
pub mod harness;
pub mod llm_backend;
pub mod neighbors;
pub mod operators;
pub mod prompting;
pub mod regression;
pub mod seed;
