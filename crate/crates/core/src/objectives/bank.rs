//! FIFO memory bank of detached image features.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    width: usize,
    entries: VecDeque<(Vec<f64>, u8)>,
}

impl MemoryBank {
    pub fn new(capacity: usize, width: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory bank capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            width,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the rows of `features` (copied, so no gradient link remains),
    /// evicting the oldest entries beyond capacity.
    pub fn push(&mut self, features: &Tensor, labels: &[u8]) -> Result<()> {
        if features.rank() != 2 || features.shape()[1] != self.width || features.rows() != labels.len() {
            return Err(Error::InvalidTensor(format!(
                "bank expects [{} x {}] features, got {:?}",
                labels.len(),
                self.width,
                features.shape()
            )));
        }
        for (i, &y) in labels.iter().enumerate() {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((features.row(i).to_vec(), y));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|(_, y)| *y).collect()
    }

    /// Stored features, oldest first, or `None` when empty.
    pub fn features(&self) -> Option<Tensor> {
        if self.entries.is_empty() {
            return None;
        }
        let data = self.entries.iter().flat_map(|(f, _)| f.iter().copied()).collect();
        Some(Tensor::new(&[self.entries.len(), self.width], data).expect("bank rows share a width"))
    }
}
