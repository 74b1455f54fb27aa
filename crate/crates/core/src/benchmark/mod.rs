//! Synthetic task generation, tabular objectives and experiment driver.

pub mod experiment;
pub mod tabular;
pub mod taskgen;
