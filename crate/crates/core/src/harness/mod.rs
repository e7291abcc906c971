//! Experiment orchestration behind the `gaclab` binary: configuration,
//! presets, the per-command runners, and plot-data emission.

pub mod config;
pub mod plotdata;
pub mod presets;
pub mod run;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use config::ExperimentConfig;
pub use plotdata::{collect_plotdata, emit_plotdata, PlotRow};
pub use presets::{preset, preset_text, PRESETS};
pub use run::{dpo_tabular, fitcheck, gradcheck, prop1, tabular_mdp, train, ComparisonRow, FitRow, TrainOutput};

/// Writes `bytes` to `path` through a temporary file in the same directory
/// that is renamed into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
