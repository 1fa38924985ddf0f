//! Analysis toolkit for testing whether field-stratified count distributions
//! (readerships, citations) collapse onto a common form once each stratum is
//! divided by its own mean.

pub mod corpus;
pub mod css;
pub mod distfit;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod rescale;
pub mod synth;
pub mod topz;

pub use corpus::{Group, GroupKey, GroupStats, Metric, PublicationRecord};
