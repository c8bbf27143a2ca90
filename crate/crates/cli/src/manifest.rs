//! Run manifests: the fully resolved invocation of a command, checksums of
//! its inputs and the files it produced. A manifest alone is enough to run
//! the command again.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ncct::config::{Mode, Precision, TrainConfig};
use ncct::Error;
use serde::{Deserialize, Serialize};

pub const TOOL: &str = "ncct";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Sym,
    Asym,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Sym => "sym",
            NoiseKind::Asym => "asym",
        }
    }
}

/// Every command with all defaults and config files already applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    GenData {
        classes: usize,
        per_class: usize,
        size: usize,
        variation: f64,
        split: String,
        seed: u64,
        out: PathBuf,
    },
    InjectNoise {
        input: PathBuf,
        kind: NoiseKind,
        rate: f64,
        /// Pairs table text for asymmetric noise.
        pairs: Option<String>,
        seed: u64,
        out: PathBuf,
    },
    Train {
        train: PathBuf,
        test: PathBuf,
        config: TrainConfig,
        out: PathBuf,
    },
    Eval {
        checkpoint: PathBuf,
        test: PathBuf,
        precision: Precision,
        out: Option<PathBuf>,
    },
    SweepK {
        train: PathBuf,
        test: PathBuf,
        config: TrainConfig,
        ks: Vec<usize>,
        modes: Vec<Mode>,
        kind: NoiseKind,
        rates: Vec<f64>,
        pairs: Option<String>,
        out: PathBuf,
    },
    Report {
        metrics: PathBuf,
        checkpoint: PathBuf,
        test: PathBuf,
        sweep: Option<PathBuf>,
        precision: Precision,
        out: PathBuf,
    },
}

impl Invocation {
    /// Files the command reads.
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Invocation::GenData { .. } => vec![],
            Invocation::InjectNoise { input, .. } => vec![input.clone()],
            Invocation::Train { train, test, .. } | Invocation::SweepK { train, test, .. } => {
                vec![train.clone(), test.clone()]
            }
            Invocation::Eval {
                checkpoint, test, ..
            } => vec![checkpoint.clone(), test.clone()],
            Invocation::Report {
                metrics,
                checkpoint,
                test,
                sweep,
                ..
            } => {
                let mut v = vec![metrics.clone(), checkpoint.clone(), test.clone()];
                v.extend(sweep.clone());
                v
            }
        }
    }

    /// Where the manifest goes: inside the output directory for commands
    /// that write one, next to the output file otherwise.
    pub fn manifest_path(&self) -> Option<PathBuf> {
        match self {
            Invocation::GenData { out, .. } | Invocation::InjectNoise { out, .. } => {
                let mut s = out.as_os_str().to_owned();
                s.push(".run.json");
                Some(PathBuf::from(s))
            }
            Invocation::Train { out, .. }
            | Invocation::SweepK { out, .. }
            | Invocation::Report { out, .. } => Some(out.join("manifest.json")),
            Invocation::Eval { out, .. } => out.as_ref().map(|o| o.join("manifest.json")),
        }
    }

    /// The same invocation writing somewhere else.
    pub fn redirect(&mut self, new_out: PathBuf) {
        match self {
            Invocation::GenData { out, .. }
            | Invocation::InjectNoise { out, .. }
            | Invocation::Train { out, .. }
            | Invocation::SweepK { out, .. }
            | Invocation::Report { out, .. } => *out = new_out,
            Invocation::Eval { out, .. } => *out = Some(new_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    /// CRC32 as 8 lowercase hex digits.
    pub crc32: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, Error> {
        let data = fs::read(path).map_err(|e| io_error(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            bytes: data.len() as u64,
            crc32: format!("{:08x}", crc32fast::hash(&data)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
    pub invocation: Invocation,
    /// Canonical `key = value` text of the effective training config, for
    /// commands that train.
    pub config_text: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            what: "run manifest",
            detail: format!("{}: {e}", path.display()),
        })
    }

    /// Fails if any recorded input no longer matches its checksum.
    pub fn verify_inputs(&self) -> Result<(), Error> {
        for d in &self.inputs {
            let now = FileDigest::of(&d.path)?;
            if now.crc32 != d.crc32 || now.bytes != d.bytes {
                return Err(Error::Checksum {
                    what: "manifest input",
                    stored: u32::from_str_radix(&d.crc32, 16).unwrap_or(0),
                    computed: u32::from_str_radix(&now.crc32, 16).unwrap_or(0),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invocation_json_round_trip() {
        let inv = Invocation::SweepK {
            train: "a.ncds".into(),
            test: "b.ncds".into(),
            config: TrainConfig::default(),
            ks: vec![1, 2],
            modes: vec![Mode::Ncct, Mode::PcOnly],
            kind: NoiseKind::Sym,
            rates: vec![0.1, 0.6],
            pairs: None,
            out: "sweep".into(),
        };
        let json = serde_json::to_string(&inv).unwrap();
        assert!(json.contains(r#""command":"sweep-k""#));
        assert_eq!(serde_json::from_str::<Invocation>(&json).unwrap(), inv);
    }

    #[test]
    fn manifest_locations() {
        let g = Invocation::GenData {
            classes: 7,
            per_class: 1,
            size: 8,
            variation: 0.0,
            split: "train".into(),
            seed: 1,
            out: "d/toy.ncds".into(),
        };
        assert_eq!(g.manifest_path().unwrap(), PathBuf::from("d/toy.ncds.run.json"));
        let mut e = Invocation::Eval {
            checkpoint: "m.ncpt".into(),
            test: "t.ncds".into(),
            precision: Precision::F32,
            out: None,
        };
        assert!(e.manifest_path().is_none());
        e.redirect("o".into());
        assert_eq!(e.manifest_path().unwrap(), PathBuf::from("o/manifest.json"));
    }

    #[test]
    fn verify_detects_changed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        fs::write(&p, b"abc").unwrap();
        let m = RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            argv: vec![],
            invocation: Invocation::Eval {
                checkpoint: p.clone(),
                test: p.clone(),
                precision: Precision::F64,
                out: None,
            },
            config_text: None,
            inputs: vec![FileDigest::of(&p).unwrap()],
            outputs: vec![],
            started_at: 0,
            finished_at: 0,
        };
        m.verify_inputs().unwrap();
        let mp = dir.path().join("m.json");
        m.save(&mp).unwrap();
        assert_eq!(RunManifest::load(&mp).unwrap(), m);
        fs::write(&p, b"abd").unwrap();
        assert!(matches!(m.verify_inputs(), Err(Error::Checksum { .. })));
    }
}
