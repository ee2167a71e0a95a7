//! Output files. Every file carries the tool version, the config hash and
//! the master seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL: &str = "subharmonic";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

/// Writes into the run directory and remembers what it wrote.
pub struct Sink {
    dir: PathBuf,
    pretty: bool,
    pub meta: Meta,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(config: &RunConfig, command: &str) -> Result<Self, CliError> {
        let dir = config.output.directory.clone();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            pretty: config.output.pretty_json,
            meta: Meta {
                tool: TOOL,
                version: VERSION,
                command: command.to_string(),
                config_sha256: config.hash(),
                seed: config.seed,
            },
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn to_json<T: Serialize>(&self, value: &T) -> Result<Vec<u8>, CliError> {
        let mut v = if self.pretty {
            serde_json::to_vec_pretty(value)?
        } else {
            serde_json::to_vec(value)?
        };
        v.push(b'\n');
        Ok(v)
    }

    /// `{"meta": ..., "result": ...}`.
    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<(), CliError> {
        let bytes = self.to_json(&Document {
            meta: &self.meta,
            result,
        })?;
        let mut w = self.create(name)?;
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    /// The effective configuration, exactly as parsed.
    pub fn config_echo(&mut self, config: &RunConfig) -> Result<(), CliError> {
        let bytes = self.to_json(config)?;
        let mut w = self.create("config.json")?;
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    /// CSV with a leading `#` line holding the metadata.
    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), CliError> {
        let m = &self.meta;
        let header = format!(
            "# {} {} command={} config_sha256={} seed={}\n",
            m.tool, m.version, m.command, m.config_sha256, m.seed
        );
        let mut w = self.create(name)?;
        w.write_all(header.as_bytes())?;
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    }
}

/// Skip `#` lines and parse the rest as CSV.
pub fn read_csv<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>, CliError> {
    let text = fs::read_to_string(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
