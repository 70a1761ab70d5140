use crate::error::{Error, Result};

use super::layout::{BlockId, BlockLayout};

/// Linear form `v ↦ <v, x_i>` over one block, stored sparsely.
///
/// Entries are sorted by index with zeros removed, so two forms compare
/// equal exactly when their dense vectors do.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn dense(v: &[f64]) -> Self {
        let entries = v
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(k, &a)| (k, a))
            .collect();
        Self {
            dim: v.len(),
            entries,
        }
    }

    /// Builds a form from `(index, value)` pairs; repeated indices are summed.
    pub fn sparse(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut e: Vec<(usize, f64)> = entries.into_iter().collect();
        if let Some(&(k, _)) = e.iter().find(|(k, _)| *k >= dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: k + 1,
                context: "sparse linear form index".into(),
            });
        }
        e.sort_by_key(|(k, _)| *k);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(e.len());
        for (k, v) in e {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => merged.push((k, v)),
            }
        }
        merged.retain(|(_, v)| *v != 0.0);
        Ok(Self {
            dim,
            entries: merged,
        })
    }

    /// `value * e_index`.
    pub fn unit(dim: usize, index: usize, value: f64) -> Self {
        assert!(index < dim, "unit form index {index} out of range {dim}");
        let entries = if value != 0.0 {
            vec![(index, value)]
        } else {
            Vec::new()
        };
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(k, a) in &self.entries {
            v[k] = a;
        }
        v
    }

    #[inline]
    pub fn dot(&self, xi: &[f64]) -> f64 {
        self.entries.iter().map(|&(k, a)| a * xi[k]).sum()
    }

    pub fn scale(&mut self, c: f64) {
        for e in &mut self.entries {
            e.1 *= c;
        }
        self.entries.retain(|(_, v)| *v != 0.0);
    }
}

/// One monomial: `coeff * Π <v_s, x_s>` with at most one form per block.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTerm {
    pub coeff: f64,
    pub factors: Vec<(BlockId, LinearForm)>,
}

impl ResidualTerm {
    /// Checked constructor; rejects a block appearing twice.
    pub fn new(coeff: f64, factors: Vec<(BlockId, LinearForm)>) -> Result<Self> {
        for (k, (b, _)) in factors.iter().enumerate() {
            if factors[..k].iter().any(|(c, _)| c == b) {
                return Err(Error::InvalidModel(format!(
                    "degree 2 in block {}: a term may reference each block once",
                    b.0
                )));
            }
        }
        Ok(Self { coeff, factors })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            coeff: c,
            factors: Vec::new(),
        }
    }

    pub fn linear(coeff: f64, block: BlockId, form: LinearForm) -> Self {
        Self {
            coeff,
            factors: vec![(block, form)],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn form(&self, b: BlockId) -> Option<&LinearForm> {
        self.factors.iter().find(|(c, _)| *c == b).map(|(_, f)| f)
    }

    pub fn value(&self, layout: &BlockLayout, x: &[f64]) -> f64 {
        let mut v = self.coeff;
        for (b, f) in &self.factors {
            v *= f.dot(&x[layout.range(*b)]);
        }
        v
    }
}

/// Sum of monomials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MultiaffineExpr {
    pub terms: Vec<ResidualTerm>,
}

impl MultiaffineExpr {
    pub fn new(terms: Vec<ResidualTerm>) -> Self {
        Self { terms }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![ResidualTerm::constant(c)],
        }
    }

    pub fn push(&mut self, t: ResidualTerm) -> &mut Self {
        self.terms.push(t);
        self
    }

    pub fn with(mut self, t: ResidualTerm) -> Self {
        self.terms.push(t);
        self
    }

    /// True if no term depends on any block.
    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.is_constant() || t.factors.iter().all(|(_, f)| f.nnz() == 0))
    }

    pub fn eval(&self, layout: &BlockLayout, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(layout, x)).sum()
    }

    /// Blocks referenced by at least one term, ascending and deduplicated.
    pub fn blocks(&self) -> Vec<BlockId> {
        let mut b: Vec<BlockId> = self
            .terms
            .iter()
            .flat_map(|t| {
                t.factors
                    .iter()
                    .filter(|(_, f)| f.nnz() > 0)
                    .map(|(b, _)| *b)
            })
            .collect();
        b.sort();
        b.dedup();
        b
    }

    /// Coefficients `(f, c)` such that the expression equals `<f, x_i> - c`
    /// with every other block held at `x`. `f` is accumulated into `row`.
    pub fn linearize_into(
        &self,
        layout: &BlockLayout,
        x: &[f64],
        block: BlockId,
        row: &mut [f64],
    ) -> f64 {
        let mut c = 0.0;
        for t in &self.terms {
            let mut scale = t.coeff;
            let mut own: Option<&LinearForm> = None;
            for (b, f) in &t.factors {
                if *b == block {
                    own = Some(f);
                } else {
                    scale *= f.dot(&x[layout.range(*b)]);
                }
            }
            match own {
                Some(f) => {
                    if scale != 0.0 {
                        for &(k, a) in f.entries() {
                            row[k] += scale * a;
                        }
                    }
                }
                None => c -= scale,
            }
        }
        c
    }
}
