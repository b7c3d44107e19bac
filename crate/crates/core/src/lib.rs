pub mod data;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod perm;
pub mod report;
pub mod seed;
pub mod shuffle;
pub mod sim;
pub mod workflow;
