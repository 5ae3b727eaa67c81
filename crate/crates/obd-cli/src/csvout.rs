//! CSV emission with a provenance comment line.
//!
//! Every file starts with `# config_hash=<hex> seed=<seed>` followed by the
//! header row. Nothing time-dependent is written, so identical runs produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use crate::HarnessError;

pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(config_hash: u64, seed: u64, header: &[&str]) -> Self {
        let mut buf = format!("# config_hash={config_hash:016x} seed={seed}\n");
        buf.push_str(&header.join(","));
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &self.buf)?;
        Ok(())
    }
}

/// Shortest-round-trip decimal rendering, the same as `format!("{v}")`.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_and_rows() {
        let mut csv = Csv::new(0xabc, 7, &["a", "b"]);
        csv.row(&[fmt(1.5), fmt(-0.25)]);
        let text = csv.as_str();
        assert!(text.starts_with("# config_hash=0000000000000abc seed=7\n"));
        assert!(text.contains("a,b\n"));
        assert!(text.ends_with("1.5,-0.25\n"));
    }
}
