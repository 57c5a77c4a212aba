//! CSV output with an optional leading `#` metadata line.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub struct Writer {
    inner: csv::Writer<File>,
    path: PathBuf,
}

impl Writer {
    pub fn create(path: &Path, comment: Option<&str>) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        if let Some(c) = comment {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            inner: csv::Writer::from_writer(file),
            path: path.to_owned(),
        })
    }

    pub fn record<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| self.csv_error(e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn csv_error(&self, e: csv::Error) -> Error {
        Error::Csv {
            path: self.path.clone(),
            message: e.to_string(),
        }
    }
}
