//! Staged output: files are written into a hidden directory next to the
//! destination and moved into place only when the whole command succeeds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::TempDir;

use crate::{CliError, CliResult};

pub struct Staging {
    dest: PathBuf,
    dir: TempDir,
    files: Vec<String>,
}

impl Staging {
    pub fn new(dest: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dest).map_err(|e| CliError::io(dest, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".fsvar-partial-")
            .tempdir_in(dest)
            .map_err(|e| CliError::io(dest, e))?;
        Ok(Staging {
            dest: dest.to_path_buf(),
            dir,
            files: Vec::new(),
        })
    }

    /// Writes `name` through `body`.
    pub fn write<F>(&mut self, name: &str, body: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.path().join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(self.dest.join(name), e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, |w| writeln!(w, "{text}"))
    }

    /// Moves every staged file into the destination directory.
    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let from = self.dir.path().join(name);
            let to = self.dest.join(name);
            std::fs::rename(&from, &to).map_err(|e| CliError::io(&to, e))?;
            out.push(to);
        }
        Ok(out)
    }
}
