use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Identifies the run that produced a file.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, stamp: &Stamp, body: &T) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        config_hash: &'a str,
        seed: u64,
        #[serde(flatten)]
        body: &'a T,
    }
    let doc = Doc { config_hash: &stamp.config_hash, seed: stamp.seed, body };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join(name), text).map_err(|e| CliError::Io(format!("{name}: {e}")))
}

/// CSV with a `# config_hash=... seed=...` first line. Numbers are written in
/// their shortest round-trip form.
pub fn write_csv(dir: &Path, name: &str, stamp: &Stamp, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{name}: {e}"));
    let mut file = File::create(dir.join(name)).map_err(io)?;
    writeln!(file, "# config_hash={} seed={}", stamp.config_hash, stamp.seed).map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::Io(format!("{name}: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
