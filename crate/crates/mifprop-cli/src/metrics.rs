use anyhow::{Context, Result};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

pub const HEADER: &str = "# mifprop metrics v1\niteration,train_loss,train_acc,test_acc\n";

/// Append-only CSV metrics log with a versioned header. Number formatting
/// is fixed so identical runs produce byte-identical files.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates the log (with header) or reopens it for appending on resume.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let fresh = !append || !path.exists();
        let file = if fresh {
            OpenOptions::new().create(true).write(true).truncate(true).open(path)
        } else {
            OpenOptions::new().append(true).open(path)
        }
        .with_context(|| format!("opening metrics log {}", path.display()))?;
        let mut out = BufWriter::new(file);
        if fresh {
            out.write_all(HEADER.as_bytes())?;
        }
        Ok(Self { out })
    }

    pub fn row(
        &mut self,
        iteration: u64,
        train_loss: f64,
        train_acc: f64,
        test_acc: f64,
    ) -> Result<()> {
        writeln!(
            self.out,
            "{iteration},{train_loss:.9e},{train_acc:.4},{test_acc:.4}"
        )?;
        self.out.flush()?;
        Ok(())
    }
}
