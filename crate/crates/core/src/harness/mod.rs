//! Seeded Monte Carlo sweeps: configuration, per-frame simulation, error
//! counting and CSV/metadata output.

pub mod config;
pub mod output;
pub mod seed;
pub mod sim;
pub mod stats;

pub use config::{ChannelMode, CodedConfig, SimConfig};
pub use output::{config_hash, csv_string, meta_json, meta_path, write_csv, write_outputs};
pub use seed::derive_frame_seed;
pub use sim::{run_sweep, Counts, PointResult, Simulator, SweepResult, SweepRow};
pub use stats::{binomial_sigma, rate, wilson_interval, Z95};
