//! Block-structured vectors over a product space `H = H_1 x ... x H_N`.
//!
//! Every iterate, agent payload and operator argument in this crate is a
//! [`BlockVector`]: a flat `Vec<f64>` together with a shared [`BlockPartition`]
//! describing how coordinates are split among agents.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of the coordinate space into `N >= 1` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockPartition {
    pub fn new(dims: Vec<usize>) -> Result<Arc<Self>> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter("partition needs at least one block".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("every block must have dimension >= 1".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0usize;
        for &d in &dims {
            offsets.push(total);
            total += d;
        }
        Ok(Arc::new(Self { dims, offsets, total }))
    }

    /// `n_blocks` blocks of identical dimension `block_dim`.
    pub fn uniform(n_blocks: usize, block_dim: usize) -> Result<Arc<Self>> {
        Self::new(vec![block_dim; n_blocks])
    }

    /// Single block covering the whole space.
    pub fn flat(dim: usize) -> Result<Arc<Self>> {
        Self::new(vec![dim])
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn block_dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    pub fn block_range(&self, i: usize) -> Range<usize> {
        let start = self.offsets[i];
        start..start + self.dims[i]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
}

/// Element of the product space; owns its coordinates, shares its partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    partition: Arc<BlockPartition>,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(partition: Arc<BlockPartition>, data: Vec<f64>) -> Result<Self> {
        if data.len() != partition.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: partition.total_dim(),
                got: data.len(),
            });
        }
        Ok(Self { partition, data })
    }

    pub fn zeros(partition: Arc<BlockPartition>) -> Self {
        let n = partition.total_dim();
        Self { partition, data: vec![0.0; n] }
    }

    pub fn from_fn(partition: Arc<BlockPartition>, f: impl FnMut(usize) -> f64) -> Self {
        let n = partition.total_dim();
        Self { partition, data: (0..n).map(f).collect() }
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Coordinates of block `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.partition.block_range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.partition.block_range(i);
        &mut self.data[r]
    }

    pub fn set_block(&mut self, i: usize, values: &[f64]) -> Result<()> {
        let r = self.partition.block_range(i);
        if values.len() != r.len() {
            return Err(Error::DimensionMismatch { expected: r.len(), got: values.len() });
        }
        self.data[r].copy_from_slice(values);
        Ok(())
    }

    /// Checks that `other` lives in the same partitioned space.
    pub fn conforms(&self, other: &BlockVector) -> bool {
        Arc::ptr_eq(&self.partition, &other.partition) || self.partition == other.partition
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &BlockVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &BlockVector) -> BlockVector {
        debug_assert_eq!(self.dim(), other.dim());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { partition: self.partition.clone(), data }
    }

    pub fn add(&self, other: &BlockVector) -> BlockVector {
        debug_assert_eq!(self.dim(), other.dim());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { partition: self.partition.clone(), data }
    }

    pub fn distance(&self, other: &BlockVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Euclidean norm of a raw slice; small helper shared by block-level code.
pub fn slice_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
