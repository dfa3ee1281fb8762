use anyhow::{Context, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Exclusive ownership of a checkpoint directory for the lifetime of a
/// training run. Creation fails if another process already holds the lock;
/// the file is removed on drop (a crash can leave it behind, in which case
/// the error message tells the user what to delete).
#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        let mut file = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "another training run owns {} (delete {} if that run is gone)",
                    dir.display(),
                    path.display()
                )
            })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
