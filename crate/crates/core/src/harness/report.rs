use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::io::write_atomic;
use crate::error::{Error, Result};

/// Hex SHA-256 of a file's bytes.
pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// JSON report written next to every command's artifact.
#[derive(Debug, Serialize)]
pub struct RunReport<T: Serialize> {
    pub command: String,
    pub version: &'static str,
    pub created_unix: u64,
    /// The fully resolved settings the command ran with.
    pub config: serde_json::Value,
    /// Input path -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub result: T,
}

impl<T: Serialize> RunReport<T> {
    pub fn new(command: &str, config: &impl Serialize, result: T) -> Result<Self> {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(RunReport {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            created_unix,
            config: serde_json::to_value(config).map_err(|e| Error::format("report config", e.to_string()))?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            result,
        })
    }

    pub fn input(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: impl AsRef<Path>) -> Self {
        self.outputs.push(path.as_ref().display().to_string());
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path, self)
    }
}

pub fn save_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        std::io::Write::write_all(w, b"\n")
    })
}

/// `<path>.report.json`
pub fn report_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            hash_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(matches!(hash_file(dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn report_contents() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"abc").unwrap();
        let r = RunReport::new("eval", &serde_json::json!({"seed": 3}), 1.5)
            .unwrap()
            .input(&input)
            .unwrap()
            .output("out.json");
        let path = dir.path().join("r.json");
        r.save(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["config"]["seed"], 3);
        assert_eq!(v["result"], 1.5);
        assert_eq!(v["inputs"][input.display().to_string()].as_str().unwrap().len(), 64);
        assert_eq!(report_path(Path::new("a/b.json")), Path::new("a/b.json.report.json"));
    }
}
