//! Output directory handling. Every file a run writes goes through here.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{io_err, Result};

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(io_err(format!("creating output directory {}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        std::fs::create_dir_all(&p).map_err(io_err(format!("creating {}", p.display())))?;
        Ok(p)
    }

    pub fn create_file(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).map_err(io_err(format!("creating {}", p.display())))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_ndjson<S: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = S>) -> Result<()> {
        let mut w = self.create_file(name)?;
        fracpe::io::write_ndjson(&mut w, rows)?;
        w.flush().map_err(io_err(format!("writing {name}")))
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(io_err(format!("writing {}", p.display())))
    }

    /// Write through a temporary file so a crash never leaves a torn file.
    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.path(&format!("{name}.tmp"));
        std::fs::write(&tmp, bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
        let p = self.path(name);
        std::fs::rename(&tmp, &p).map_err(io_err(format!("renaming {}", p.display())))
    }
}
