//! Positive-pair masks.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// How samples of one category pair up as positives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    /// Every same-category pair is positive.
    Cluster,
    /// Only the self pair is positive.
    Individual,
}

/// Binary positive-pair matrix between anchors (rows) and a contrast set
/// (columns). Column `j < rows` is the anchor `j` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl MaskMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn positives(&self, i: usize) -> usize {
        self.row(i).iter().map(|&b| b as usize).sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| f64::from(b)).collect();
        Tensor::new(&[self.rows, self.cols], data).expect("mask dimensions are positive")
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidTensor(alloc::format!("label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Square mask over one batch. Labels are `0` for real, `1` for fake; the
/// default `(Cluster, Individual)` pairing is real-with-real plus every
/// fake with itself.
pub fn build_mask(labels: &[u8], real: MaskStrategy, fake: MaskStrategy) -> Result<MaskMatrix> {
    build_mask_against(labels, labels, real, fake)
}

/// Mask of `anchors` against `contrast`, where `contrast` starts with the
/// anchors themselves (in order) followed by other samples.
pub fn build_mask_against(
    anchors: &[u8],
    contrast: &[u8],
    real: MaskStrategy,
    fake: MaskStrategy,
) -> Result<MaskMatrix> {
    if anchors.is_empty() {
        return Err(Error::EmptyInput("mask labels"));
    }
    if contrast.len() < anchors.len() || contrast[..anchors.len()] != *anchors {
        return Err(Error::InvalidTensor(
            "contrast labels must begin with the anchor labels".into(),
        ));
    }
    check_labels(contrast)?;
    let (rows, cols) = (anchors.len(), contrast.len());
    let mut bits = Vec::with_capacity(rows * cols);
    for (i, &yi) in anchors.iter().enumerate() {
        let strategy = if yi == 0 { real } else { fake };
        for (j, &yj) in contrast.iter().enumerate() {
            let positive = i == j || (yi == yj && strategy == MaskStrategy::Cluster);
            bits.push(u8::from(positive));
        }
    }
    Ok(MaskMatrix { rows, cols, bits })
}
