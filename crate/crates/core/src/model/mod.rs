//! Block layouts, multiaffine residual expressions and their per-block
//! linearization.

mod expr;
mod io;
mod layout;

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::densities::{default_qbar, Density};
use crate::error::{Error, Result};

pub use expr::{LinearForm, MultiaffineExpr, ResidualTerm};
pub use io::{model_from_json, model_to_json, ProblemDocument};
pub use layout::{BlockId, BlockLayout};

/// A residual expression paired with its density.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub expr: MultiaffineExpr,
    pub density: Density,
    pub label: Option<String>,
}

impl Factor {
    pub fn new(expr: MultiaffineExpr, density: Density) -> Self {
        Self {
            expr,
            density,
            label: None,
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// Block layout plus residual factors; `qbar` bounds every GND exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiaffineModel {
    pub layout: BlockLayout,
    pub factors: Vec<Factor>,
    pub qbar: u32,
}

impl MultiaffineModel {
    /// Validated constructor. `qbar = None` selects the smallest admissible value.
    pub fn new(layout: BlockLayout, factors: Vec<Factor>, qbar: Option<u32>) -> Result<Self> {
        let qbar = qbar.unwrap_or_else(|| default_qbar(factors.iter().map(|f| &f.density)));
        let model = Self {
            layout,
            factors,
            qbar,
        };
        validate_model(&model).into_result()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn all_gnd(&self) -> bool {
        self.factors
            .iter()
            .all(|f| f.density.is_gnd() || f.density.is_flat())
    }

    /// For each block, the factors whose expressions depend on it (flat
    /// priors excluded).
    pub fn block_incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.layout.len()];
        for (h, f) in self.factors.iter().enumerate() {
            if f.density.is_flat() {
                continue;
            }
            for b in f.expr.blocks() {
                if b.0 < inc.len() {
                    inc[b.0].push(h);
                }
            }
        }
        inc
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
                context: "iterate length".into(),
            });
        }
        Ok(())
    }

    /// Block `b` of `x`.
    pub fn block<'a>(&self, x: &'a DVector<f64>, b: BlockId) -> &'a [f64] {
        &x.as_slice()[self.layout.range(b)]
    }
}

/// One violation found by [`validate_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub factor: Option<usize>,
    pub term: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.factor, self.term) {
            (Some(h), Some(m)) => write!(f, "factor {h}, term {m}: {}", self.message),
            (Some(h), None) => write!(f, "factor {h}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self.to_string()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks multiaffinity, dimensions, densities and `qbar`. Never fails; all
/// problems are collected into the report.
pub fn validate_model(model: &MultiaffineModel) -> ValidationReport {
    let mut out = Vec::new();
    let layout = &model.layout;
    for (h, factor) in model.factors.iter().enumerate() {
        if let Err(e) = factor.density.validate() {
            out.push(Violation {
                factor: Some(h),
                term: None,
                message: e.to_string(),
            });
        }
        for (m, term) in factor.expr.terms.iter().enumerate() {
            let mut push = |message: String| {
                out.push(Violation {
                    factor: Some(h),
                    term: Some(m),
                    message,
                })
            };
            if !term.coeff.is_finite() {
                push(format!("non-finite coefficient {}", term.coeff));
            }
            for (k, (b, form)) in term.factors.iter().enumerate() {
                if !layout.contains(*b) {
                    push(format!("undeclared block {}", b.0));
                    continue;
                }
                if term.factors[..k].iter().any(|(c, _)| c == b) {
                    continue;
                }
                let degree = term.factors.iter().filter(|(c, _)| c == b).count();
                if degree > 1 {
                    push(format!("degree {degree} in block {}", layout.name(*b)));
                }
                if form.dim() != layout.size(*b) {
                    push(format!(
                        "linear form on block {} has length {}, block size is {}",
                        layout.name(*b),
                        form.dim(),
                        layout.size(*b)
                    ));
                }
                if form.entries().iter().any(|(_, v)| !v.is_finite()) {
                    push(format!(
                        "non-finite entry in linear form on block {}",
                        layout.name(*b)
                    ));
                }
            }
        }
    }
    let required = default_qbar(model.factors.iter().map(|f| &f.density));
    let max_q = model
        .factors
        .iter()
        .filter_map(|f| f.density.gnd_exponent())
        .fold(0.0_f64, f64::max);
    if model.qbar < required || (model.qbar as f64) < max_q {
        out.push(Violation {
            factor: None,
            term: None,
            message: format!(
                "qbar = {} is below the largest GND exponent {max_q}",
                model.qbar
            ),
        });
    }
    ValidationReport { violations: out }
}

/// `r_h(x)` for every factor.
pub fn eval_residuals(model: &MultiaffineModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_point(x)?;
    let xs = x.as_slice();
    Ok(DVector::from_iterator(
        model.factors.len(),
        model.factors.iter().map(|f| f.expr.eval(&model.layout, xs)),
    ))
}

/// `(F, C)` for one block: `F x_i - C` reproduces the residuals of the
/// factors listed in `rows`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedSystem {
    pub block: BlockId,
    pub f: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Factor index of each row.
    pub rows: Vec<usize>,
}

impl LinearizedSystem {
    pub fn residual(&self, xi: &[f64]) -> DVector<f64> {
        &self.f * DVector::from_column_slice(xi) - &self.c
    }
}

/// Linearization of all non-degenerate factors around `x` in block `i`.
pub fn linearize_block(
    model: &MultiaffineModel,
    x: &DVector<f64>,
    i: BlockId,
) -> Result<LinearizedSystem> {
    model.check_point(x)?;
    model.layout.check_block(i)?;
    let mut rows = Vec::with_capacity(model.factors.len());
    for (h, f) in model.factors.iter().enumerate() {
        if f.expr.is_constant() {
            warn!(
                "factor {h}{} does not depend on any block; dropped from the linearization",
                f.label
                    .as_deref()
                    .map(|l| format!(" ({l})"))
                    .unwrap_or_default()
            );
        } else {
            rows.push(h);
        }
    }
    Ok(linearize_rows(model, x, i, &rows))
}

/// Linearization restricted to the given factor rows. Inputs are assumed valid.
pub fn linearize_rows(
    model: &MultiaffineModel,
    x: &DVector<f64>,
    i: BlockId,
    rows: &[usize],
) -> LinearizedSystem {
    let ni = model.layout.size(i);
    let mut f = DMatrix::zeros(rows.len(), ni);
    let mut c = DVector::zeros(rows.len());
    let mut buf = vec![0.0; ni];
    for (r, &h) in rows.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        c[r] = model.factors[h]
            .expr
            .linearize_into(&model.layout, x.as_slice(), i, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            f[(r, k)] = *v;
        }
    }
    LinearizedSystem {
        block: i,
        f,
        c,
        rows: rows.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(b: usize) -> (BlockId, LinearForm) {
        (BlockId(b), LinearForm::dense(&[1.0]))
    }

    /// g = x1 x2 x3 + x1 - x3 + 1 over three scalar blocks.
    fn example_model() -> MultiaffineModel {
        let layout = BlockLayout::from_blocks([("x1", 1), ("x2", 1), ("x3", 1)]).unwrap();
        let expr = MultiaffineExpr::new(vec![
            ResidualTerm::new(1.0, vec![scalar(0), scalar(1), scalar(2)]).unwrap(),
            ResidualTerm::new(1.0, vec![scalar(0)]).unwrap(),
            ResidualTerm::new(-1.0, vec![scalar(2)]).unwrap(),
            ResidualTerm::constant(1.0),
        ]);
        MultiaffineModel::new(layout, vec![Factor::new(expr, Density::gaussian())], None).unwrap()
    }

    #[test]
    fn validate_examples() {
        let model = example_model();
        assert!(validate_model(&model).is_ok());

        let mut bad = model.clone();
        bad.factors[0].expr.terms.push(ResidualTerm {
            coeff: 1.0,
            factors: vec![scalar(1), scalar(1)],
        });
        let report = validate_model(&bad);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].factor, Some(0));
        assert_eq!(report.violations[0].term, Some(4));
        assert!(
            report.to_string().contains("degree 2 in block x2"),
            "{report}"
        );

        let constant = MultiaffineModel {
            layout: BlockLayout::from_blocks([("x", 1)]).unwrap(),
            factors: vec![Factor::new(
                MultiaffineExpr::constant(1.0),
                Density::gaussian(),
            )],
            qbar: 2,
        };
        assert!(validate_model(&constant).is_ok());
    }

    #[test]
    fn validate_reports_dims_and_qbar() {
        let layout = BlockLayout::from_blocks([("a", 2)]).unwrap();
        let expr = MultiaffineExpr::new(vec![ResidualTerm::linear(
            1.0,
            BlockId(0),
            LinearForm::dense(&[1.0]),
        )]);
        let model = MultiaffineModel {
            layout,
            factors: vec![Factor::new(expr, Density::StandardGnd { q: 2.5 })],
            qbar: 2,
        };
        let report = validate_model(&model);
        assert_eq!(report.violations.len(), 2, "{report}");
    }

    #[test]
    fn eval_examples() {
        let model = example_model();
        let r = eval_residuals(&model, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(r[0], 5.0);
        let r0 = eval_residuals(&model, &DVector::zeros(3)).unwrap();
        assert_eq!(r0[0], 1.0);
        assert!(eval_residuals(&model, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn linearize_examples() {
        let model = example_model();
        let x = DVector::from_vec(vec![0.0, 2.0, 3.0]);
        let sys = linearize_block(&model, &x, BlockId(0)).unwrap();
        assert_eq!(sys.f[(0, 0)], 7.0);
        assert_eq!(sys.c[0], 2.0);

        let x = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let sys = linearize_block(&model, &x, BlockId(2)).unwrap();
        assert_eq!(sys.f[(0, 0)], 1.0);
        assert_eq!(sys.c[0], -2.0);

        assert!(linearize_block(&model, &x, BlockId(7)).is_err());
    }

    #[test]
    fn linear_model_linearization() {
        // r = A x - b over blocks of sizes 2 and 1
        let a = [[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]];
        let b = [1.0, -2.0];
        let layout = BlockLayout::from_blocks([("u", 2), ("v", 1)]).unwrap();
        let factors = (0..2)
            .map(|h| {
                let expr = MultiaffineExpr::new(vec![
                    ResidualTerm::linear(1.0, BlockId(0), LinearForm::dense(&a[h][..2])),
                    ResidualTerm::linear(1.0, BlockId(1), LinearForm::dense(&a[h][2..])),
                    ResidualTerm::constant(-b[h]),
                ]);
                Factor::new(expr, Density::gaussian())
            })
            .collect();
        let model = MultiaffineModel::new(layout, factors, None).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7, 2.0]);
        let sys = linearize_block(&model, &x, BlockId(0)).unwrap();
        for h in 0..2 {
            assert_eq!(sys.f[(h, 0)], a[h][0]);
            assert_eq!(sys.f[(h, 1)], a[h][1]);
            assert_relative_eq!(sys.c[h], b[h] - a[h][2] * 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn degenerate_factor_dropped() {
        let layout = BlockLayout::from_blocks([("x", 1)]).unwrap();
        let factors = vec![
            Factor::new(MultiaffineExpr::constant(4.0), Density::laplace()),
            Factor::new(
                MultiaffineExpr::new(vec![ResidualTerm::linear(
                    1.0,
                    BlockId(0),
                    LinearForm::dense(&[1.0]),
                )]),
                Density::gaussian(),
            ),
        ];
        let model = MultiaffineModel::new(layout, factors, None).unwrap();
        let sys = linearize_block(&model, &DVector::zeros(1), BlockId(0)).unwrap();
        assert_eq!(sys.rows, vec![1]);
    }

    pub(crate) fn random_model(rng: &mut ChaCha8Rng) -> MultiaffineModel {
        let nb = rng.random_range(1..=4);
        let layout =
            BlockLayout::from_blocks((0..nb).map(|b| (format!("b{b}"), rng.random_range(1..=3))))
                .unwrap();
        let m = rng.random_range(1..=6);
        let factors = (0..m)
            .map(|_| {
                let nterms = rng.random_range(1..=4);
                let terms = (0..nterms)
                    .map(|_| {
                        let mut blocks: Vec<usize> = (0..nb).collect();
                        let k = rng.random_range(0..=nb.min(3));
                        let mut factors = Vec::new();
                        for _ in 0..k {
                            let b = blocks.swap_remove(rng.random_range(0..blocks.len()));
                            let v: Vec<f64> = (0..layout.size(BlockId(b)))
                                .map(|_| rng.random_range(-1.0..1.0))
                                .collect();
                            factors.push((BlockId(b), LinearForm::dense(&v)));
                        }
                        ResidualTerm::new(rng.random_range(-2.0..2.0), factors).unwrap()
                    })
                    .collect();
                Factor::new(MultiaffineExpr::new(terms), Density::gaussian())
            })
            .collect();
        MultiaffineModel::new(layout, factors, None).unwrap()
    }

    proptest! {
        #[test]
        fn reconstruction_and_affinity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng);
            let n = model.dim();
            let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let r = eval_residuals(&model, &x).unwrap();
            let scale = 1.0 + r.amax();
            for b in model.layout.ids() {
                let sys = linearize_rows(&model, &x, b, &(0..model.num_factors()).collect::<Vec<_>>());
                let rec = sys.residual(model.block(&x, b));
                prop_assert!((rec - &r).amax() <= 1e-10 * scale);

                let range = model.layout.range(b);
                let with = |vals: &[f64]| {
                    let mut y = x.clone();
                    y.as_mut_slice()[range.clone()].copy_from_slice(vals);
                    eval_residuals(&model, &y).unwrap()
                };
                let a: Vec<f64> = range.clone().map(|_| rng.random_range(-2.0..2.0)).collect();
                let c: Vec<f64> = range.clone().map(|_| rng.random_range(-2.0..2.0)).collect();
                let ac: Vec<f64> = a.iter().zip(&c).map(|(p, q)| p + q).collect();
                let zero = vec![0.0; range.len()];
                let lhs = with(&ac) + with(&zero);
                let rhs = with(&a) + with(&c);
                let tol = 1e-10 * (1.0 + lhs.amax().max(rhs.amax()));
                prop_assert!((lhs - rhs).amax() <= tol);
            }
            prop_assert!(validate_model(&model).is_ok());
        }
    }
}
