//! Rotated-digit sequence built from an uncompressed IDX digit archive
//! (`train-images-idx3-ubyte` and `train-labels-idx1-ubyte` in one directory).
//! Images are rotated per domain, block-averaged to a small grid and flattened.

use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DomainSequence, GroundTruthMap, LabeledDataset, SequenceMetadata};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const LABELS_FILE: &str = "train-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmnistOptions {
    pub n_domains: usize,
    pub step_deg: f64,
    pub downsample_to: usize,
    pub n_per_domain: usize,
    pub seed: u64,
}

impl Default for RmnistOptions {
    fn default() -> Self {
        Self {
            n_domains: 30,
            step_deg: 6.0,
            downsample_to: 7,
            n_per_domain: 1000,
            seed: 0,
        }
    }
}

struct Archive {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format("IDX header truncated"))
}

fn read_archive(dir: &Path) -> Result<Archive> {
    let img = fs::read(dir.join(IMAGES_FILE))?;
    let lab = fs::read(dir.join(LABELS_FILE))?;
    if be_u32(&img, 0)? != 0x0803 {
        return Err(Error::format("image file is not an IDX3 u8 array"));
    }
    if be_u32(&lab, 0)? != 0x0801 {
        return Err(Error::format("label file is not an IDX1 u8 array"));
    }
    let n = be_u32(&img, 4)? as usize;
    let rows = be_u32(&img, 8)? as usize;
    let cols = be_u32(&img, 12)? as usize;
    if be_u32(&lab, 4)? as usize != n {
        return Err(Error::format("image and label counts differ"));
    }
    if n == 0 || rows == 0 || cols == 0 || img.len() != 16 + n * rows * cols || lab.len() != 8 + n {
        return Err(Error::format("IDX payload size does not match its header"));
    }
    if lab[8..].iter().any(|&y| y > 9) {
        return Err(Error::format("digit label above 9"));
    }
    Ok(Archive {
        rows,
        cols,
        pixels: img[16..].to_vec(),
        labels: lab[8..].to_vec(),
    })
}

/// Counter-clockwise rotation about the image center with bilinear sampling;
/// pixels falling outside the source read as 0.
pub fn rotate_image(img: &[f64], rows: usize, cols: usize, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return img.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let px = |r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= rows as isize || q >= cols as isize {
            0.0
        } else {
            img[r as usize * cols + q as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for q in 0..cols {
            // image rows grow downward, so flip y to rotate counter-clockwise on screen
            let (x, y) = (q as f64 - cx, cy - r as f64);
            let (sx, sy) = (c * x + s * y, -s * x + c * y);
            let (fq, fr) = (sx + cx, cy - sy);
            let (q0, r0) = (fq.floor(), fr.floor());
            let (dq, dr) = (fq - q0, fr - r0);
            let (q0, r0) = (q0 as isize, r0 as isize);
            out[r * cols + q] = (1.0 - dr) * ((1.0 - dq) * px(r0, q0) + dq * px(r0, q0 + 1))
                + dr * ((1.0 - dq) * px(r0 + 1, q0) + dq * px(r0 + 1, q0 + 1));
        }
    }
    out
}

fn downsample(img: &[f64], rows: usize, cols: usize, to: usize) -> Vec<f64> {
    let mut out = vec![0.0; to * to];
    for i in 0..to {
        let (r0, r1) = (i * rows / to, ((i + 1) * rows / to).max(i * rows / to + 1));
        for j in 0..to {
            let (c0, c1) = (j * cols / to, ((j + 1) * cols / to).max(j * cols / to + 1));
            let mut acc = 0.0;
            for r in r0..r1 {
                for q in c0..c1 {
                    acc += img[r * cols + q];
                }
            }
            out[i * to + j] = acc / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

pub fn load_rmnist_lite(dir: &Path, opts: &RmnistOptions) -> Result<DomainSequence> {
    if opts.n_domains < 2 || opts.n_per_domain == 0 || opts.downsample_to == 0 {
        return Err(Error::param("need at least 2 domains, 1 image per domain and a positive grid"));
    }
    let arc = read_archive(dir)?;
    let total = arc.labels.len();
    if opts.n_per_domain > total {
        return Err(Error::param(format!("{} images per domain requested, archive has {total}", opts.n_per_domain)));
    }
    if opts.downsample_to > arc.rows.min(arc.cols) {
        return Err(Error::param("downsample grid larger than the images"));
    }
    let (h, w) = (arc.rows, arc.cols);
    let k = opts.downsample_to;
    let mut domains = Vec::with_capacity(opts.n_domains);
    for t in 1..=opts.n_domains {
        let deg = opts.step_deg * (t - 1) as f64;
        let mut rng = rng::seeded(opts.seed.wrapping_add(t as u64));
        let picks = index::sample(&mut rng, total, opts.n_per_domain);
        let mut data = Vec::with_capacity(opts.n_per_domain * k * k);
        let mut labels = Vec::with_capacity(opts.n_per_domain);
        for i in picks.iter() {
            let img: Vec<f64> = arc.pixels[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&p| p as f64 / 255.0)
                .collect();
            data.extend(downsample(&rotate_image(&img, h, w, deg), h, w, k));
            labels.push(arc.labels[i] as usize);
        }
        domains.push(LabeledDataset::new(
            Tensor::new(vec![opts.n_per_domain, k * k], data)?,
            labels,
            10,
            t,
        )?);
    }
    let maps = vec![GroundTruthMap::rotation(opts.step_deg.to_radians()); opts.n_domains - 1];
    let metadata = SequenceMetadata {
        generator: "rmnist_lite".into(),
        seed: opts.seed,
        params: json!(opts),
    };
    DomainSequence::new(domains, opts.n_domains / 2, Some(maps), metadata)
}
