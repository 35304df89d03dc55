//! Result files and the run manifest.
//!
//! Every file is written to a temporary name and renamed into place, so a reader never sees
//! a half-written result. JSON reports carry the config digest as a top-level field, CSV files
//! as a leading `# digest=` comment line, binary files in their header.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub passed: bool,
}

pub struct Output {
    dir: PathBuf,
    digest: String,
    files: Vec<FileEntry>,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl Output {
    pub fn new(dir: PathBuf, digest: String) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Output {
            dir,
            digest,
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    /// `{"digest": …, <fields of body>}`; `body` must serialize to an object.
    pub fn json(&mut self, name: &str, body: &impl Serialize) -> std::io::Result<()> {
        let mut v = serde_json::to_value(body).map_err(std::io::Error::other)?;
        let obj = v.as_object_mut().expect("report bodies are objects");
        obj.insert("digest".into(), Value::String(self.digest.clone()));
        let mut text = serde_json::to_string_pretty(&v).map_err(std::io::Error::other)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut text = format!("# digest={}\n{}\n", self.digest, header.join(","));
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        self.put(name, text.as_bytes())
    }

    pub fn binary(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.put(name, bytes)
    }

    /// Writes `<command>.manifest.json` last. Timestamps make it the one file that differs between reruns.
    pub fn manifest(
        &self,
        command: &str,
        started: &str,
        status: &str,
        suites: &[SuiteEntry],
        error: Option<&str>,
    ) -> std::io::Result<()> {
        let v = json!({
            "digest": self.digest,
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "started": started,
            "finished": now(),
            "status": status,
            "suites": suites,
            "files": self.files,
            "error": error,
        });
        let mut text = serde_json::to_string_pretty(&v).map_err(std::io::Error::other)?;
        text.push('\n');
        write_atomic(&self.dir.join(format!("{command}.manifest.json")), text.as_bytes())
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
