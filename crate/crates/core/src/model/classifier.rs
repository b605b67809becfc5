use serde::{Deserialize, Serialize};

use super::AirlConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two-layer classifier `affine -> relu -> affine` with explicit tensors.
///
/// Weights are stored `in x out`, so logits are `relu(z W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Flat classifier parameters in the order hidden weights (row-major
/// `d x hidden`), hidden bias, output weights (`hidden x n_output`), output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierVec {
    pub flat: Vec<f64>,
}

impl ClassifierVec {
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn as_row(&self) -> Tensor {
        Tensor::row(&self.flat)
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self { flat: t.data().to_vec() }
    }
}

/// Offsets of the four blocks inside a classifier vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierLayout {
    pub d: usize,
    pub hidden: usize,
    pub n_output: usize,
}

impl ClassifierLayout {
    pub fn of(cfg: &AirlConfig) -> Self {
        Self {
            d: cfg.repr_dim,
            hidden: cfg.classifier_hidden,
            n_output: cfg.n_output(),
        }
    }

    pub fn len(&self) -> usize {
        self.d * self.hidden + self.hidden + self.hidden * self.n_output + self.n_output
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(offset, length)` of w1, b1, w2, b2.
    pub fn blocks(&self) -> [(usize, usize); 4] {
        let w1 = self.d * self.hidden;
        let b1 = self.hidden;
        let w2 = self.hidden * self.n_output;
        let b2 = self.n_output;
        [(0, w1), (w1, b1), (w1 + b1, w2), (w1 + b1 + w2, b2)]
    }
}

pub fn vectorize_classifier(h: &Classifier) -> ClassifierVec {
    let mut flat = Vec::with_capacity(h.w1.len() + h.b1.len() + h.w2.len() + h.b2.len());
    for t in [&h.w1, &h.b1, &h.w2, &h.b2] {
        flat.extend_from_slice(t.data());
    }
    ClassifierVec { flat }
}

pub fn devectorize_classifier(v: &ClassifierVec, cfg: &AirlConfig) -> Result<Classifier> {
    let lay = ClassifierLayout::of(cfg);
    if v.len() != lay.len() {
        return Err(Error::dim(
            "devectorize_classifier",
            format!("vector of length {} for layout of length {}", v.len(), lay.len()),
        ));
    }
    let [w1, b1, w2, b2] = lay.blocks();
    let part = |(o, l): (usize, usize)| v.flat[o..o + l].to_vec();
    Ok(Classifier {
        w1: Tensor::new(vec![lay.d, lay.hidden], part(w1))?,
        b1: Tensor::new(vec![1, lay.hidden], part(b1))?,
        w2: Tensor::new(vec![lay.hidden, lay.n_output], part(w2))?,
        b2: Tensor::new(vec![1, lay.n_output], part(b2))?,
    })
}
