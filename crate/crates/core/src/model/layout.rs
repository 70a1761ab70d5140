use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a block in a [`BlockLayout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub usize);

impl BlockId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named blocks of unknowns laid out contiguously in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockLayout {
    names: Vec<String>,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    lookup: HashMap<String, BlockId>,
    total: usize,
}

impl BlockLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a layout from `(name, size)` pairs.
    pub fn from_blocks<S: Into<String>>(
        blocks: impl IntoIterator<Item = (S, usize)>,
    ) -> Result<Self> {
        let mut layout = Self::new();
        for (name, size) in blocks {
            layout.push(name, size)?;
        }
        Ok(layout)
    }

    /// Appends a block and returns its id.
    pub fn push(&mut self, name: impl Into<String>, size: usize) -> Result<BlockId> {
        let name = name.into();
        if size == 0 {
            return Err(Error::InvalidModel(format!("block `{name}` has size 0")));
        }
        if self.lookup.contains_key(&name) {
            return Err(Error::InvalidModel(format!(
                "duplicate block name `{name}`"
            )));
        }
        let id = BlockId(self.names.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.sizes.push(size);
        self.offsets.push(self.total);
        self.total += size;
        Ok(id)
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar unknowns.
    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        (0..self.len()).map(BlockId)
    }

    pub fn contains(&self, b: BlockId) -> bool {
        b.0 < self.len()
    }

    pub fn size(&self, b: BlockId) -> usize {
        self.sizes[b.0]
    }

    pub fn offset(&self, b: BlockId) -> usize {
        self.offsets[b.0]
    }

    pub fn range(&self, b: BlockId) -> Range<usize> {
        self.offsets[b.0]..self.offsets[b.0] + self.sizes[b.0]
    }

    pub fn name(&self, b: BlockId) -> &str {
        &self.names[b.0]
    }

    pub fn id(&self, name: &str) -> Result<BlockId> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    /// Flat position of entry `offset` of block `b`.
    pub fn flat_index(&self, b: BlockId, offset: usize) -> Result<usize> {
        if !self.contains(b) {
            return Err(Error::BlockOutOfRange(b.0));
        }
        if offset >= self.sizes[b.0] {
            return Err(Error::DimensionMismatch {
                expected: self.sizes[b.0],
                got: offset + 1,
                context: format!("offset into block `{}`", self.names[b.0]),
            });
        }
        Ok(self.offsets[b.0] + offset)
    }

    pub fn check_block(&self, b: BlockId) -> Result<()> {
        if self.contains(b) {
            Ok(())
        } else {
            Err(Error::BlockOutOfRange(b.0))
        }
    }
}
