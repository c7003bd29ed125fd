//! Block partitions derived from tensor metadata.
//!
//! Transformer parameters are split along the axis on which their Hessian is
//! (approximately) block diagonal: embeddings and output heads by token,
//! query/key by attention head, value/projection/MLP weights by output neuron.
//! Everything else, and every tensor of a non-Transformer model, is one block.
//!
//! Tensors are stored row-major with the split axis leading, so every block is
//! a contiguous index range.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Block, BlockPartition, BlockSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Embed,
    Output,
    Query,
    Key,
    Value,
    AttnProj,
    Mlp,
    Other,
}

/// Name, kind, shape and split counts of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Attention heads (query / key / value).
    pub heads: Option<usize>,
    /// Output neurons (value / attn_proj / mlp).
    pub out_neurons: Option<usize>,
    /// Tokens (embed / output).
    pub tokens: Option<usize>,
}

impl TensorMeta {
    pub fn new(name: impl Into<String>, kind: TensorKind, shape: &[usize]) -> Self {
        TensorMeta {
            name: name.into(),
            kind,
            shape: shape.to_vec(),
            heads: None,
            out_neurons: None,
            tokens: None,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = Some(heads);
        self
    }

    pub fn with_out_neurons(mut self, n: usize) -> Self {
        self.out_neurons = Some(n);
        self
    }

    pub fn with_tokens(mut self, n: usize) -> Self {
        self.tokens = Some(n);
        self
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Partition rule selectable from a run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PartitionRule {
    /// Hessian-aligned Transformer rule.
    Transformer {
        #[serde(default)]
        value_single_block: bool,
    },
    /// One block per tensor.
    #[default]
    PerTensor,
    /// B = d.
    Singleton,
    /// B = 1.
    Global,
    /// `blocks` contiguous blocks of near-equal size.
    Equal { blocks: usize },
    Explicit { blocks: Vec<BlockSpec> },
}

impl PartitionRule {
    pub fn build(&self, metas: &[TensorMeta], dim: usize) -> Result<BlockPartition> {
        let p = match self {
            PartitionRule::Transformer { value_single_block } => {
                partition_transformer_with(metas, *value_single_block)?
            }
            PartitionRule::PerTensor => partition_default(metas)?,
            PartitionRule::Singleton => BlockPartition::singleton(dim)?,
            PartitionRule::Global => BlockPartition::global(dim)?,
            PartitionRule::Equal { blocks } => BlockPartition::equal(dim, *blocks)?,
            PartitionRule::Explicit { blocks } => BlockPartition::from_specs(blocks, dim)?,
        };
        if p.dim() != dim {
            return Err(Error::InvalidPartition(format!(
                "tensor layout covers {} parameters but the model has {dim}",
                p.dim()
            )));
        }
        Ok(p)
    }
}

fn layout_ranges(metas: &[TensorMeta]) -> Result<(Vec<Range<usize>>, usize)> {
    let mut start = 0;
    let mut ranges = Vec::with_capacity(metas.len());
    for meta in metas {
        let n = meta.numel();
        if n == 0 {
            return Err(Error::InvalidPartition(format!("tensor '{}' is empty", meta.name)));
        }
        ranges.push(start..start + n);
        start += n;
    }
    Ok((ranges, start))
}

fn split_even(meta: &TensorMeta, range: Range<usize>, parts: Option<usize>, what: &str) -> Result<Vec<Block>> {
    let parts = parts.ok_or_else(|| {
        Error::Config(format!("tensor '{}' ({:?}) needs a '{what}' count", meta.name, meta.kind))
    })?;
    let n = range.len();
    if parts == 0 || !n.is_multiple_of(parts) {
        return Err(Error::Config(format!(
            "{what} count {parts} does not divide the {n} parameters of tensor '{}'",
            meta.name
        )));
    }
    let size = n / parts;
    Ok((0..parts)
        .map(|i| {
            let s = range.start + i * size;
            Block::new(format!("{}.{i}", meta.name), s..s + size)
        })
        .collect())
}

/// Transformer rule with value split by output neurons.
pub fn partition_transformer(metas: &[TensorMeta]) -> Result<BlockPartition> {
    partition_transformer_with(metas, false)
}

/// Transformer rule; `value_single_block` keeps every value tensor whole.
pub fn partition_transformer_with(metas: &[TensorMeta], value_single_block: bool) -> Result<BlockPartition> {
    let (ranges, dim) = layout_ranges(metas)?;
    let mut blocks = Vec::new();
    for (meta, range) in metas.iter().zip(ranges) {
        match meta.kind {
            TensorKind::Embed | TensorKind::Output => {
                blocks.extend(split_even(meta, range, meta.tokens, "tokens")?)
            }
            TensorKind::Query | TensorKind::Key => {
                blocks.extend(split_even(meta, range, meta.heads, "heads")?)
            }
            TensorKind::Value if value_single_block => blocks.push(Block::new(meta.name.clone(), range)),
            TensorKind::Value | TensorKind::AttnProj | TensorKind::Mlp => {
                blocks.extend(split_even(meta, range, meta.out_neurons, "out_neurons")?)
            }
            TensorKind::Other => blocks.push(Block::new(meta.name.clone(), range)),
        }
    }
    BlockPartition::new(blocks, dim)
}

/// One block per named tensor.
pub fn partition_default(metas: &[TensorMeta]) -> Result<BlockPartition> {
    let (ranges, dim) = layout_ranges(metas)?;
    let blocks = metas
        .iter()
        .zip(ranges)
        .map(|(m, r)| Block::new(m.name.clone(), r))
        .collect();
    BlockPartition::new(blocks, dim)
}
