pub mod chem;
pub mod diffusion;
pub mod fingerprint;
pub mod hash;
pub mod metrics;
pub mod pipeline;
pub mod rerank;
pub mod sas;
pub mod selftrain;
