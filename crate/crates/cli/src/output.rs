//! Artifact writing. Every file is rendered in memory, written next to its
//! destination and renamed into place so readers never see a partial file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Output directory for one command run.
#[derive(Clone, Debug)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Renders with `render` into a buffer, then atomically replaces `name`.
    pub fn write_with<F>(&self, name: &str, render: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> ncsn::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.path(name);
        write_atomic(&path, &buf)?;
        Ok(path)
    }

    /// Writes a CSV from a header and rows of already formatted fields.
    pub fn write_csv<R, I>(&self, name: &str, header: &[&str], rows: R) -> CliResult<PathBuf>
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = String>,
    {
        self.write_with(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush()?;
            Ok(())
        })
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Shortest round-trip formatting, so CSV values reload bit-exactly.
pub fn num(v: f64) -> String {
    v.to_string()
}
