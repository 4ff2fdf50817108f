//! Output plumbing: the main artifact goes to stdout or `--out`; with
//! `--out` a manifest describing the run is written beside it.
//!
//! The artifact never contains wall-clock data, so reruns with the same
//! seed produce identical bytes; timing lives only in the manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use epr2_core::decomposition::Verdict;

use crate::args::{Cli, Global};

pub const MANIFEST_SCHEMA: &str = "epr2-manifest/1";

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    schema: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<String>,
    data: &'a T,
}

pub struct Emitter {
    out: Option<PathBuf>,
    body: Option<Vec<u8>>,
}

impl Emitter {
    pub fn new(g: &Global) -> Self {
        Self {
            out: g.out.clone(),
            body: None,
        }
    }

    fn manifest_path(&self) -> Option<PathBuf> {
        self.out.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    }

    /// File name of the manifest, as referenced from the artifact.
    pub fn manifest_name(&self) -> Option<String> {
        self.manifest_path()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
    }

    /// JSON artifact `{schema, manifest?, data}`.
    pub fn json<T: Serialize>(&mut self, schema: &str, data: &T) -> Result<()> {
        let tagged = Tagged {
            schema,
            manifest: self.manifest_name(),
            data,
        };
        self.json_value(serde_json::to_value(&tagged)?)
    }

    /// JSON artifact that carries its own `schema` field.
    pub fn json_flat<T: Serialize>(&mut self, data: &T) -> Result<()> {
        let mut v = serde_json::to_value(data)?;
        if let (Some(name), Value::Object(map)) = (self.manifest_name(), &mut v) {
            map.insert("manifest".into(), Value::String(name));
        }
        self.json_value(v)
    }

    fn json_value(&mut self, v: Value) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(&v)?;
        buf.push(b'\n');
        self.raw(buf)
    }

    pub fn raw(&mut self, bytes: Vec<u8>) -> Result<()> {
        self.body = Some(bytes);
        Ok(())
    }

    /// Write the artifact, and the manifest when writing to a file. All
    /// output happens here, once.
    pub fn finish(self, manifest: &RunManifest) -> Result<()> {
        let mpath = self.manifest_path();
        let body = self.body.unwrap_or_default();
        match &self.out {
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(&body)?;
                stdout.flush()?;
            }
            Some(path) => {
                std::fs::write(path, &body).with_context(|| format!("writing {}", path.display()))?;
                let mpath = mpath.expect("out is set");
                let mut m = manifest.clone();
                m.output = Some(path.display().to_string());
                let mut text = serde_json::to_vec_pretty(&m)?;
                text.push(b'\n');
                std::fs::write(&mpath, text).with_context(|| format!("writing {}", mpath.display()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: String,
    /// The parsed command line.
    pub config: Value,
    pub seed: u64,
    pub version: &'static str,
    pub parallel: bool,
    pub wall_time_s: f64,
    pub verdicts: BTreeMap<String, Verdict>,
    pub verdict: Option<Verdict>,
    pub extra: BTreeMap<String, Value>,
    pub output: Option<String>,
}

impl RunManifest {
    pub fn new(cli: &Cli) -> Self {
        let config = serde_json::to_value(cli).unwrap_or(Value::Null);
        // "verify", or "two-lambda check-density" for nested subcommands
        let mut command = Vec::new();
        let mut node = &config["command"];
        loop {
            match node {
                Value::Object(m) if m.len() == 1 => {
                    let (k, v) = m.iter().next().expect("one entry");
                    command.push(k.clone());
                    if k != "two-lambda" {
                        break;
                    }
                    node = v;
                }
                Value::String(s) => {
                    command.push(s.clone());
                    break;
                }
                _ => break,
            }
        }
        let command = command.join(" ");
        Self {
            schema: MANIFEST_SCHEMA,
            command,
            config,
            seed: cli.global.seed,
            version: env!("CARGO_PKG_VERSION"),
            parallel: cli.global.exec().is_parallel(),
            wall_time_s: 0.0,
            verdicts: BTreeMap::new(),
            verdict: None,
            extra: BTreeMap::new(),
            output: None,
        }
    }

    pub fn verdict(&mut self, check: &str, v: Verdict) {
        self.verdicts.insert(check.to_string(), v);
    }

    pub fn set<T: Serialize>(&mut self, key: &str, v: T) {
        if let Ok(v) = serde_json::to_value(v) {
            self.extra.insert(key.to_string(), v);
        }
    }

    pub fn finish(&mut self, wall_time_s: f64, verdict: Verdict) {
        self.wall_time_s = wall_time_s;
        self.verdict = Some(verdict);
    }
}
