pub mod boundcheck;
pub mod forecast;
pub mod metrics;
pub mod policyeval;
pub mod sensitivity;
pub mod train;

use std::path::{Path, PathBuf};

use dicl_core::trajdata::{load_dataset, DataFormat, Dataset, Manifest};
use dicl_core::{DiclError, Result};

pub(crate) fn open_dataset(path: &Path, manifest: Option<&PathBuf>) -> Result<Dataset> {
    let manifest = manifest.map(|p| Manifest::from_file(p)).transpose()?;
    let ds = load_dataset(path, DataFormat::from_path(path), manifest.as_ref())?;
    if ds.is_empty() || ds.total_steps() == 0 {
        return Err(DiclError::schema(format!(
            "dataset {} has no trajectories",
            path.display()
        )));
    }
    Ok(ds)
}
