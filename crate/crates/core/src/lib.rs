//! Batch harness that grades the clarity of game tutorial frames: a
//! vision-language model answers developer-authored questions about each
//! frame, the answers are scored against the expected answers with ROUGE
//! and an embedding-based semantic metric, calibrated thresholds turn the
//! scores into pass / needs-revision / fail verdicts, and cross-version
//! analyses summarize where a tutorial improved or still confuses.

pub mod analysis;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod fixtures;
pub mod gateway;
pub mod metrics;
pub mod report;
pub mod scores;
pub mod verdicts;
