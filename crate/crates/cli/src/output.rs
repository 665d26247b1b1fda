//! In-memory tables, written only once the whole command has succeeded.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// `{:.16e}`: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Default)]
pub struct OutputSet {
    prefix: String,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new(prefix: &str) -> Self {
        Self {
            prefix: prefix.to_string(),
            files: Vec::new(),
        }
    }

    pub fn add_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory csv");
        for row in rows {
            w.write_record(row).expect("in-memory csv");
        }
        let bytes = w.into_inner().expect("in-memory csv");
        self.files.push((format!("{}{name}", self.prefix), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("json report");
        bytes.push(b'\n');
        self.files.push((format!("{}{name}", self.prefix), bytes));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file through a temporary in `dir` and renames it into place.
    pub fn commit(&self, dir: &Path) -> Result<(), CliError> {
        let io = |context: String| move |source| CliError::Io { context, source };
        std::fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .map_err(io(format!("temporary file in {}", dir.display())))?;
            tmp.write_all(bytes)
                .map_err(io(format!("writing {}", target.display())))?;
            tmp.persist(&target).map_err(|e| CliError::Io {
                context: format!("renaming into {}", target.display()),
                source: e.error,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn commit_writes_prefixed_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new("x_");
        out.add_csv("t.csv", &["a".into()], &[vec!["1".into()]]);
        out.commit(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("x_t.csv")).unwrap();
        assert_eq!(text, "a\n1\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
