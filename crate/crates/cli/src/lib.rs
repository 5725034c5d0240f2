//! Experiment driver for the device-edge speculative decoding simulator.
//!
//! A TOML [`ExperimentConfig`] describes the synthetic model pair, draft
//! shapes, truncation grid, link and timing parameters. [`run_campaign`]
//! executes the mass, acceptance, speedup and theory campaigns and
//! [`write_outputs`] stores them as CSV tables plus a text summary.

pub mod campaign;
pub mod config;
pub mod output;
pub mod plot;

pub use campaign::{run_campaign, run_theory, with_jobs, CampaignReport, CheckClass, CheckOutcome};
pub use config::{ConfigError, ExperimentConfig};
pub use output::write_outputs;
pub use plot::emit_plot_data;
