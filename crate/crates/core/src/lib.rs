pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod formats;
pub mod head;
pub mod imprint;
pub mod report;
pub mod rng;
pub mod synth;
