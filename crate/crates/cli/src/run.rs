//! Run-directory lifecycle: artifacts are written into a hidden staging
//! directory and promoted to the requested output directory with a single
//! rename only after every step succeeds. A failed run's partial artifacts
//! are moved to `<out>.failed` for inspection instead of being left in
//! place, so the target path either holds a complete run or nothing.

use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug)]
pub struct RunDir {
    staging: PathBuf,
    target: PathBuf,
}

impl RunDir {
    /// Prepares staging for a run that will land at `target`. Refuses to
    /// clobber an existing target.
    pub fn create(target: &Path) -> Result<Self, CliError> {
        if target.exists() {
            return Err(CliError::Config(format!(
                "output directory '{}' already exists; choose a fresh path or remove it",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| {
                CliError::Config(format!(
                    "output path '{}' has no directory name",
                    target.display()
                ))
            })?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)
            .map_err(|e| CliError::Data(format!("cannot create '{}': {e}", parent.display())))?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| {
                CliError::Data(format!(
                    "cannot clear stale staging '{}': {e}",
                    staging.display()
                ))
            })?;
        }
        std::fs::create_dir_all(&staging)
            .map_err(|e| CliError::Data(format!("cannot create '{}': {e}", staging.display())))?;
        Ok(RunDir {
            staging,
            target: target.to_path_buf(),
        })
    }

    pub fn staging(&self) -> &Path {
        &self.staging
    }

    /// Promotes the finished staging directory to the target path.
    pub fn commit(self) -> Result<PathBuf, CliError> {
        std::fs::rename(&self.staging, &self.target).map_err(|e| {
            CliError::Data(format!(
                "cannot promote run to '{}': {e}",
                self.target.display()
            ))
        })?;
        Ok(self.target)
    }

    /// Moves partial artifacts aside after a failure; returns the quarantine
    /// path so the error message can point at it.
    pub fn quarantine(self) -> Option<PathBuf> {
        let failed = self.target.with_file_name(format!(
            "{}.failed",
            self.target.file_name()?.to_string_lossy()
        ));
        if failed.exists() {
            std::fs::remove_dir_all(&failed).ok()?;
        }
        std::fs::rename(&self.staging, &failed).ok()?;
        Some(failed)
    }
}
