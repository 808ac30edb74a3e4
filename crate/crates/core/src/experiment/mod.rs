//! Config-driven experiment runs, presets and self-check suites.

mod config;
mod oracle;
mod presets;
mod run;

pub use config::*;
pub use oracle::*;
pub use presets::{linspace, preset, preset_names, PRESETS};
pub use run::*;
