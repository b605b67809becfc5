//! On-disk dataset format.
//!
//! A sequence is stored as `<name>.csv` with header `domain,y,x1,...,xd`
//! (1-based domain index, integer label, features printed in shortest
//! round-trip form) next to `<name>.json`, a [`SequenceSidecar`] holding the
//! metadata and the ground-truth map matrices.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DomainSequence, GroundTruthMap, LabeledDataset, SequenceMetadata};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SEQUENCE_FORMAT: &str = "airl-domain-sequence";
pub const SEQUENCE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSidecar {
    pub format: String,
    pub version: u32,
    pub metadata: SequenceMetadata,
    pub t_source: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub domain_sizes: Vec<usize>,
    pub mappings: Option<Vec<GroundTruthMap>>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_sequence(seq: &DomainSequence, csv_path: &Path) -> Result<()> {
    let dim = seq.feature_dim();
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["domain".to_string(), "y".to_string()];
    header.extend((1..=dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(dim + 2);
    for d in seq.domains() {
        for (r, &y) in d.labels().iter().enumerate() {
            record.clear();
            record.push(d.domain_index.to_string());
            record.push(y.to_string());
            record.extend(d.features().row_slice(r).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;

    let sidecar = SequenceSidecar {
        format: SEQUENCE_FORMAT.into(),
        version: SEQUENCE_VERSION,
        metadata: seq.metadata.clone(),
        t_source: seq.t_source(),
        n_classes: seq.n_classes(),
        feature_dim: dim,
        domain_sizes: seq.domains().iter().map(LabeledDataset::len).collect(),
        mappings: seq.mappings().map(<[_]>::to_vec),
    };
    fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_sequence(csv_path: &Path) -> Result<DomainSequence> {
    let sidecar: SequenceSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
    if sidecar.format != SEQUENCE_FORMAT {
        return Err(Error::format(format!("unknown dataset format {:?}", sidecar.format)));
    }
    if sidecar.version != SEQUENCE_VERSION {
        return Err(Error::format(format!("unsupported dataset version {}", sidecar.version)));
    }
    let dim = sidecar.feature_dim;
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut expected = vec!["domain".to_string(), "y".to_string()];
    expected.extend((1..=dim).map(|j| format!("x{j}")));
    if header != expected {
        return Err(Error::format(format!("unexpected header {header:?}")));
    }

    let n_domains = sidecar.domain_sizes.len();
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); n_domains];
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); n_domains];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::format(format!("row {}: {what}", line + 2));
        let t: usize = rec[0].parse().map_err(|_| bad("bad domain index"))?;
        if t == 0 || t > n_domains {
            return Err(bad("domain index out of range"));
        }
        labels[t - 1].push(rec[1].parse().map_err(|_| bad("bad label"))?);
        for j in 0..dim {
            feats[t - 1].push(rec[j + 2].parse().map_err(|_| bad("bad feature value"))?);
        }
    }

    let mut domains = Vec::with_capacity(n_domains);
    for (i, (x, y)) in feats.into_iter().zip(labels).enumerate() {
        if y.len() != sidecar.domain_sizes[i] {
            return Err(Error::format(format!(
                "domain {} has {} rows, sidecar says {}",
                i + 1,
                y.len(),
                sidecar.domain_sizes[i]
            )));
        }
        let n = y.len();
        let t = Tensor::new(vec![n, dim], x).map_err(|e| Error::format(e.to_string()))?;
        domains.push(LabeledDataset::new(t, y, sidecar.n_classes, i + 1).map_err(|e| Error::format(e.to_string()))?);
    }
    DomainSequence::new(domains, sidecar.t_source, sidecar.mappings, sidecar.metadata)
        .map_err(|e| Error::format(e.to_string()))
}
