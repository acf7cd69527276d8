//! Run directory bookkeeping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Files written into a run directory, tracked for the MANIFEST.
pub struct RunDir {
    root: PathBuf,
    files: Vec<(String, &'static str)>,
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, role: &'static str, bytes: &[u8]) -> Result<(), CliError> {
        write_file(&self.root.join(name), bytes)?;
        self.record(name, role);
        Ok(())
    }

    /// Registers a file that was written elsewhere (e.g. by a worker).
    pub fn record(&mut self, name: &str, role: &'static str) {
        self.files.push((name.to_string(), role));
    }

    /// Writes `MANIFEST` last; `complete` is false when the run aborted.
    pub fn finish(self, verb: &str, config_hash: &str, complete: bool) -> Result<(), CliError> {
        let mut m = String::new();
        let _ = writeln!(m, "verb: {verb}");
        let _ = writeln!(m, "status: {}", if complete { "complete" } else { "incomplete" });
        let _ = writeln!(m, "config_hash: {config_hash}");
        let _ = writeln!(m, "files:");
        for (name, role) in &self.files {
            let _ = writeln!(m, "{name} {role}");
        }
        write_file(&self.root.join("MANIFEST"), m.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn sample_name(chain: usize) -> String {
    format!("sample_{chain:04}.pgm")
}
