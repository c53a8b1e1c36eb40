//! Artifact writing: a `# ` header block, RFC-4180 CSV bodies and atomic
//! replacement of the target file.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance written at the top of every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Provenance {
            version: format!("ipslab {VERSION}"),
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            seed,
        }
    }

    fn header(&self, what: &str) -> String {
        format!(
            "# {}\n# artifact {what}\n# config_sha256 {}\n# seed {}\n",
            self.version, self.config_sha256, self.seed
        )
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// CSV text with the provenance header block.
pub fn csv_text(prov: &Provenance, what: &str, header: &[String], rows: &[Vec<String>]) -> std::io::Result<Vec<u8>> {
    let mut out = prov.header(what).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_csv(path: &Path, prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let what = path.file_name().and_then(|s| s.to_str()).unwrap_or("csv");
    write_atomic(path, &csv_text(prov, what, header, rows)?)
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

/// JSON object `{provenance, result}`; field order follows the types.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(&Wrapped {
        provenance: prov,
        result: value,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Shortest round-trip decimal form; non-finite values as `inf`, `-inf`, `nan`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

/// Reads a CSV artifact, skipping the header block.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), csv::Error> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let prov = Provenance::new("x = 1", 9);
        let header = vec!["t".to_string(), "note".to_string()];
        let rows = vec![vec![num(0.1), "has, comma".into()], vec![num(f64::NEG_INFINITY), "\"q\"".into()]];
        write_csv(&p, &prov, &header, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# ipslab "));
        assert!(text.contains("# seed 9\n"));
        assert!(text.contains("\"has, comma\""));
        let (h, r) = read_csv(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(r, rows);
        assert_eq!(prov.config_sha256.len(), 64);
    }

    #[test]
    fn numbers() {
        assert_eq!(num(1.0), "1.0");
        assert_eq!(num(-0.549306), "-0.549306");
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(1e-300).parse::<f64>().unwrap(), 1e-300);
    }
}
