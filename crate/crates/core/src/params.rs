//! Flat parameter storage, named block partitions and block-mean reduction.
//!
//! Every model in the lab is a single `f64` vector. Tensors and Hessian-aligned
//! blocks are views onto half-open index ranges of that vector, described by a
//! [`BlockPartition`]. Second moments travel between clients and server only as
//! [`BlockMeans`]: one scalar per block.

use std::ops::{Deref, Range};
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Model parameters (or any per-coordinate quantity of the same shape).
///
/// Entries are always finite: constructors and arithmetic helpers reject NaN
/// and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        Self::from_vec(vec![value; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let v = ParamVector(values);
        v.check_finite("parameter vector")?;
        Ok(v)
    }

    /// Builds a vector by applying `f` elementwise to two equal-length vectors.
    pub fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_len(other.len())?;
        Self::from_vec(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_vec(self.0.iter().map(|&a| f(a)).collect())
    }

    pub fn add(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map(|a| a * s)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_len(other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_len(other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn ensure_len(&self, expected: usize) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: self.0.len(),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.0.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Summation strategy for reductions over clients and block elements.
///
/// Both variants accumulate strictly in ascending index order, so results do
/// not depend on how the work was scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summation {
    #[default]
    Sequential,
    /// Kahan-Babuska (Neumaier) compensated summation.
    Compensated,
}

impl Summation {
    pub fn sum<I: IntoIterator<Item = f64>>(self, values: I) -> f64 {
        match self {
            Summation::Sequential => values.into_iter().fold(0.0, |acc, x| acc + x),
            Summation::Compensated => {
                let mut sum = 0.0_f64;
                let mut comp = 0.0_f64;
                for x in values {
                    let t = sum + x;
                    if sum.abs() >= x.abs() {
                        comp += (sum - t) + x;
                    } else {
                        comp += (x - t) + sum;
                    }
                    sum = t;
                }
                sum + comp
            }
        }
    }
}

/// A named half-open range of parameter indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub range: Range<usize>,
}

impl Block {
    pub fn new(name: impl Into<String>, range: Range<usize>) -> Self {
        Block {
            name: name.into(),
            range,
        }
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Serializable `{name, start, end}` record used by run configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// Ordered list of non-empty blocks forming a disjoint cover of `[0, d)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Block>,
    dim: usize,
}

impl BlockPartition {
    /// Validates that `blocks` are non-empty, pairwise disjoint and cover
    /// `[0, dim)` exactly. Block order is preserved as given.
    pub fn new(blocks: Vec<Block>, dim: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        if let Some(b) = blocks.iter().find(|b| b.is_empty()) {
            return Err(Error::InvalidPartition(format!(
                "block '{}' is empty ({}..{})",
                b.name, b.range.start, b.range.end
            )));
        }
        let mut order: Vec<&Block> = blocks.iter().collect();
        order.sort_by_key(|b| b.range.start);
        let mut next = 0;
        for b in order {
            if b.range.start != next {
                let what = if b.range.start < next { "overlaps" } else { "leaves a gap before" };
                return Err(Error::InvalidPartition(format!(
                    "block '{}' {} index {}",
                    b.name, what, b.range.start.min(next)
                )));
            }
            next = b.range.end;
        }
        if next != dim {
            return Err(Error::InvalidPartition(format!(
                "blocks cover [0, {next}) but the parameter dimension is {dim}"
            )));
        }
        Ok(BlockPartition { blocks, dim })
    }

    pub fn from_specs(specs: &[BlockSpec], dim: usize) -> Result<Self> {
        let blocks = specs
            .iter()
            .map(|s| {
                if s.end < s.start {
                    Err(Error::InvalidPartition(format!(
                        "block '{}' has end {} < start {}",
                        s.name, s.end, s.start
                    )))
                } else {
                    Ok(Block::new(s.name.clone(), s.start..s.end))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, dim)
    }

    pub fn to_specs(&self) -> Vec<BlockSpec> {
        self.blocks
            .iter()
            .map(|b| BlockSpec {
                name: b.name.clone(),
                start: b.range.start,
                end: b.range.end,
            })
            .collect()
    }

    /// B = 1: a single global mean.
    pub fn global(dim: usize) -> Result<Self> {
        Self::new(vec![Block::new("all", 0..dim)], dim)
    }

    /// B = d: every coordinate is its own block (full-vector aggregation).
    pub fn singleton(dim: usize) -> Result<Self> {
        Self::new((0..dim).map(|j| Block::new(format!("p.{j}"), j..j + 1)).collect(), dim)
    }

    /// `count` contiguous blocks whose sizes differ by at most one.
    pub fn equal(dim: usize, count: usize) -> Result<Self> {
        if count == 0 || count > dim {
            return Err(Error::InvalidPartition(format!(
                "cannot split dimension {dim} into {count} non-empty blocks"
            )));
        }
        let base = dim / count;
        let extra = dim % count;
        let mut start = 0;
        let blocks = (0..count)
            .map(|b| {
                let len = base + usize::from(b < extra);
                let block = Block::new(format!("b.{b}"), start..start + len);
                start += len;
                block
            })
            .collect();
        Self::new(blocks, dim)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// One mean per block of the partition that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMeans {
    means: Vec<f64>,
    partition: Arc<BlockPartition>,
}

impl BlockMeans {
    pub fn new(means: Vec<f64>, partition: Arc<BlockPartition>) -> Result<Self> {
        if means.len() != partition.num_blocks() {
            return Err(Error::LengthMismatch {
                expected: partition.num_blocks(),
                found: means.len(),
            });
        }
        if !means.iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite("block means".into()));
        }
        Ok(BlockMeans { means, partition })
    }

    pub fn zeros(partition: Arc<BlockPartition>) -> Self {
        BlockMeans {
            means: vec![0.0; partition.num_blocks()],
            partition,
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }
}

/// Arithmetic mean of `v` over each block of `p`, summed sequentially.
pub fn block_mean(v: &ParamVector, p: &Arc<BlockPartition>) -> Result<BlockMeans> {
    block_mean_with(v, p, Summation::Sequential)
}

/// Block means with an explicit summation strategy.
///
/// Each mean is computed as `v[start] + sum(v[j] - v[start]) / n`, which is
/// exact for constant blocks; that makes `block_mean` an exact left inverse of
/// [`expand_block_means`].
pub fn block_mean_with(
    v: &ParamVector,
    p: &Arc<BlockPartition>,
    summation: Summation,
) -> Result<BlockMeans> {
    if v.len() != p.dim() {
        return Err(Error::InvalidPartition(format!(
            "partition covers dimension {} but the vector has length {}",
            p.dim(),
            v.len()
        )));
    }
    let means = p
        .blocks()
        .iter()
        .map(|b| {
            let slice = &v[b.range.clone()];
            let pivot = slice[0];
            pivot + summation.sum(slice.iter().map(|&x| x - pivot)) / slice.len() as f64
        })
        .collect();
    BlockMeans::new(means, Arc::clone(p))
}

/// Broadcasts each block mean across its block.
pub fn expand_block_means(m: &BlockMeans) -> ParamVector {
    let mut out = vec![0.0; m.partition.dim()];
    for (block, &mean) in m.partition.blocks().iter().zip(&m.means) {
        out[block.range.clone()].fill(mean);
    }
    ParamVector(out)
}

/// What a derived random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    ClientSampling,
    Gradient,
    TaskInit,
    DataPartition,
    Simulation,
}

impl Purpose {
    pub fn tag(self) -> &'static str {
        match self {
            Purpose::ClientSampling => "client-sampling",
            Purpose::Gradient => "gradient",
            Purpose::TaskInit => "task-init",
            Purpose::DataPartition => "data-partition",
            Purpose::Simulation => "simulation",
        }
    }
}

/// Stream label used for server-side draws.
pub const SERVER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        SeedSpec { master_seed }
    }

    pub fn rng(&self, round: u64, client: u64, purpose: Purpose) -> ChaCha8Rng {
        derive_rng(self, round, client, purpose)
    }
}

/// Random stream for `(master_seed, round, client, purpose)`.
///
/// The ChaCha seed is the SHA-256 digest of the tuple, so the stream depends on
/// nothing but the tuple: not on thread scheduling nor on which other streams
/// were drawn before.
pub fn derive_rng(seed: &SeedSpec, round: u64, client: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"fedopt-lab/stream/v1");
    hasher.update(seed.master_seed.to_le_bytes());
    hasher.update(round.to_le_bytes());
    hasher.update(client.to_le_bytes());
    hasher.update(purpose.tag().as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
