//! Resolved run configurations, content hashing and seed lists.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use airl_core::data::{gen_circle, gen_circle_hard, load_rmnist_lite, read_sequence, CircleParams, DomainSequence, RmnistOptions};
use airl_core::eval::Protocol;
use airl_core::model::AirlConfig;
use airl_core::training::{Method, TrainConfig};
use airl_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex digits of the config digest used in run directory names.
pub const HASH_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Train,
    Eval,
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunKind::Train => "train",
            RunKind::Eval => "eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Circle { params: CircleParams },
    CircleHard { params: CircleParams },
    Rmnist { dir: PathBuf, options: RmnistOptions },
    /// A sequence CSV with its sidecar; the digest pins the file contents.
    File { path: PathBuf, sha256: String },
}

impl DataSpec {
    pub fn load(&self) -> airl_core::Result<DomainSequence> {
        match self {
            DataSpec::Circle { params } => gen_circle(params),
            DataSpec::CircleHard { params } => gen_circle_hard(params),
            DataSpec::Rmnist { dir, options } => load_rmnist_lite(dir, options),
            DataSpec::File { path, sha256 } => {
                let now = file_digest(path)?;
                if &now != sha256 {
                    return Err(Error::Format(format!("{} changed since the run was configured", path.display())));
                }
                read_sequence(path)
            }
        }
    }

    /// Column label in summary tables.
    pub fn label(&self) -> String {
        match self {
            DataSpec::Circle { .. } => "Circle".into(),
            DataSpec::CircleHard { .. } => "Circle-Hard".into(),
            DataSpec::Rmnist { .. } => "RMNIST".into(),
            DataSpec::File { path, .. } => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        }
    }
}

pub fn file_digest(path: &Path) -> airl_core::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub protocol: Protocol,
    pub k: usize,
}

/// Everything that determines the outputs of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: RunKind,
    pub method: Method,
    pub seed: u64,
    pub data: DataSpec,
    /// Number of source domains; `None` keeps the first half.
    pub sources: Option<usize>,
    pub model: AirlConfig,
    pub train: TrainConfig,
    pub eval: Option<EvalSpec>,
}

impl RunConfig {
    /// Compact JSON with object keys in sorted order.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn digest(&self) -> String {
        let full = hex::encode(Sha256::digest(self.canonical_json().as_bytes()));
        full[..HASH_LEN].to_string()
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}-{}", self.kind, self.method, self.digest())
    }

    pub fn load_data(&self) -> airl_core::Result<DomainSequence> {
        let seq = self.data.load()?;
        match self.sources {
            Some(t) => seq.with_t_source(t),
            None => Ok(seq),
        }
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Optional `--config` file: model and training settings that flags override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<AirlConfig>,
    pub train: Option<TrainConfig>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())).into())
    }
}

/// Seeds given as `3`, `0..4` (inclusive) or `0,2,7`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("invalid seed list {s:?}; use N, A..B or A,B,C");
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            return Ok(Seeds((a..=b).collect()));
        }
        let seeds: Vec<u64> = s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let mut seen = seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != seeds.len() {
            return Err(format!("duplicate seed in {s:?}"));
        }
        Ok(Seeds(seeds))
    }
}

/// Methods by name; `ablation:<variant>` selects the matching ablation.
pub fn parse_method(s: &str) -> Result<Method, String> {
    let name = s.strip_prefix("ablation:").unwrap_or(s);
    let method: Method = name.parse().map_err(|e: Error| e.to_string())?;
    if s.starts_with("ablation:") && !matches!(method, Method::NoLstm | Method::NoTrans | Method::NoInv) {
        return Err(format!("{name} is not an ablation; use no_lstm, no_trans or no_inv"));
    }
    Ok(method)
}

/// Comma-separated method names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Methods(pub Vec<Method>);

impl FromStr for Methods {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let methods: Vec<Method> = s.split(',').map(|m| parse_method(m.trim())).collect::<Result<_, _>>()?;
        let mut seen = methods.clone();
        seen.sort_by_key(|m| m.name());
        seen.dedup();
        if seen.len() != methods.len() {
            return Err(format!("duplicate method in {s:?}"));
        }
        Ok(Methods(methods))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> RunConfig {
        RunConfig {
            kind: RunKind::Train,
            method: Method::Airl,
            seed: 0,
            data: DataSpec::Circle { params: CircleParams::default() },
            sources: None,
            model: AirlConfig::new(2, 2),
            train: TrainConfig::default(),
            eval: None,
        }
    }

    #[test]
    fn seeds_forms() {
        assert_eq!("0..4".parse::<Seeds>().unwrap().0, vec![0, 1, 2, 3, 4]);
        assert_eq!("0..=2".parse::<Seeds>().unwrap().0, vec![0, 1, 2]);
        assert_eq!("7".parse::<Seeds>().unwrap().0, vec![7]);
        assert_eq!("3, 1".parse::<Seeds>().unwrap().0, vec![3, 1]);
        assert!("4..1".parse::<Seeds>().is_err());
        assert!("1,1".parse::<Seeds>().is_err());
        assert!("x".parse::<Seeds>().is_err());
    }

    #[test]
    fn methods_and_ablations() {
        assert_eq!(parse_method("ablation:no_inv").unwrap(), Method::NoInv);
        assert_eq!(parse_method("erm").unwrap(), Method::Erm);
        assert!(parse_method("ablation:erm").is_err());
        assert!(parse_method("svm").is_err());
        assert_eq!("airl,erm".parse::<Methods>().unwrap().0, vec![Method::Airl, Method::Erm]);
        assert!("airl,airl".parse::<Methods>().is_err());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let c = config();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.canonical_json(), c.canonical_json());
        let mut value = serde_json::to_value(&c).unwrap();
        value["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(value).is_err());
        let mut value = serde_json::to_value(&c).unwrap();
        value["train"]["momentum"] = serde_json::json!(0.9);
        assert!(serde_json::from_value::<RunConfig>(value).is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let a = config();
        let mut b = config();
        b.seed = 1;
        let mut c = config();
        c.train.alpha = 0.5;
        assert_eq!(a.digest(), config().digest());
        assert_eq!(a.digest().len(), HASH_LEN);
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert!(a.dir_name().starts_with("train-airl-"));
    }
}
