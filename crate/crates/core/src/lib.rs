pub mod baselines;
pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod finetune;
pub mod history;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod stats;
pub mod textprep;
