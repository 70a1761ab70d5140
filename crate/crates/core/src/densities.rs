//! Residual densities, modified residuals and reweighting.
//!
//! Every non-flat density has its mode at zero, so `log(p(0) / p(y)) >= 0`.
//! Generalized normal densities are handled through their *canonical
//! residual* `z = r / kappa`, chosen so that `-log(p(r) / p(0)) = |z|^q`.
//! For the standard GND `p(y) ∝ exp(-q |y|^q)` this gives
//! `kappa = q^(-1/q)`, and a GND scaled by `s` has `kappa = s q^(-1/q)`.
//! Weights, the smoothed surrogate and the termination objective are all
//! evaluated on `z`, which keeps them mutually consistent when factors use
//! different exponents.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEFFS[0];
    let t = x + LANCZOS_G + 0.5;
    for (k, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `log p(y)` of the standard generalized normal density
/// `p(y) = q^((1+q)/q) / (2 Γ(1/q)) exp(-q |y|^q)`.
pub fn gnd_log_density(q: f64, y: f64) -> Result<f64> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidDensity(format!(
            "GND exponent must be > 0, got {q}"
        )));
    }
    Ok(gnd_log_norm(q) - q * y.abs().powf(q))
}

fn gnd_log_norm(q: f64) -> f64 {
    (1.0 + q) / q * q.ln() - std::f64::consts::LN_2 - ln_gamma(1.0 / q)
}

/// Sign with `sgn(0) = +1`.
#[inline]
pub fn sgn(r: f64) -> f64 {
    if r < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Smoothed residual `sgn(r) (r^2 + alpha)^(1/qbar)`.
#[inline]
pub fn modified_residual(r: f64, alpha: f64, qbar: u32) -> f64 {
    sgn(r) * (r * r + alpha).powf(1.0 / qbar as f64)
}

/// User-supplied zero-mode density.
#[derive(Clone)]
pub struct CustomDensity {
    pub name: String,
    /// `y -> log(p(0) / p(y))`, must be nonnegative.
    pub neg_log_ratio: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// `-log p(0)`.
    pub neg_log_p0: f64,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("name", &self.name)
            .field("neg_log_p0", &self.neg_log_p0)
            .finish_non_exhaustive()
    }
}

/// Density of a scalar residual.
#[derive(Debug, Clone)]
pub enum Density {
    /// `p(y) ∝ exp(-q |y|^q)`.
    StandardGnd {
        q: f64,
    },
    /// Density of `y / scale` under the standard GND.
    ScaledGnd {
        q: f64,
        scale: f64,
    },
    /// `p(y) ∝ exp(-rate_pos max(y,0) - rate_neg max(-y,0))`.
    AsymmetricLaplace {
        rate_pos: f64,
        rate_neg: f64,
    },
    /// Non-informative prior; contributes nothing to the objective.
    Flat,
    Custom(CustomDensity),
}

impl PartialEq for Density {
    fn eq(&self, other: &Self) -> bool {
        use Density::*;
        match (self, other) {
            (StandardGnd { q: a }, StandardGnd { q: b }) => a == b,
            (ScaledGnd { q: a, scale: s }, ScaledGnd { q: b, scale: t }) => a == b && s == t,
            (
                AsymmetricLaplace {
                    rate_pos: a,
                    rate_neg: b,
                },
                AsymmetricLaplace {
                    rate_pos: c,
                    rate_neg: d,
                },
            ) => a == c && b == d,
            (Flat, Flat) => true,
            (Custom(a), Custom(b)) => Arc::ptr_eq(&a.neg_log_ratio, &b.neg_log_ratio),
            _ => false,
        }
    }
}

impl Density {
    pub fn gaussian() -> Self {
        Density::StandardGnd { q: 2.0 }
    }

    pub fn laplace() -> Self {
        Density::StandardGnd { q: 1.0 }
    }

    /// GND whose negative log-density is `c |y|^q` for the given `c > 0`.
    pub fn gnd_with_rate(q: f64, c: f64) -> Self {
        // q |y/s|^q = c |y|^q  =>  s = (q / c)^(1/q)
        Density::ScaledGnd {
            q,
            scale: (q / c).powf(1.0 / q),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match self {
            Density::StandardGnd { q } if !pos(*q) => Err(Error::InvalidDensity(format!(
                "GND exponent must be > 0, got {q}"
            ))),
            Density::ScaledGnd { q, scale } if !pos(*q) || !pos(*scale) => {
                Err(Error::InvalidDensity(format!(
                    "scaled GND needs q > 0 and scale > 0, got q = {q}, scale = {scale}"
                )))
            }
            Density::AsymmetricLaplace { rate_pos, rate_neg }
                if !pos(*rate_pos) || !pos(*rate_neg) =>
            {
                Err(Error::InvalidDensity(format!(
                    "asymmetric Laplace rates must be > 0, got {rate_pos}, {rate_neg}"
                )))
            }
            Density::Custom(c) if !c.neg_log_p0.is_finite() => Err(Error::InvalidDensity(format!(
                "custom density `{}` has non-finite -log p(0)",
                c.name
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Density::Flat)
    }

    /// Exponent of a GND density, `None` for the other kinds.
    pub fn gnd_exponent(&self) -> Option<f64> {
        match self {
            Density::StandardGnd { q } | Density::ScaledGnd { q, .. } => Some(*q),
            _ => None,
        }
    }

    pub fn is_gnd(&self) -> bool {
        self.gnd_exponent().is_some()
    }

    /// Scale `kappa` of the canonical residual `z = r / kappa`; 1 for non-GND densities.
    pub fn canonical_scale(&self) -> f64 {
        match self {
            Density::StandardGnd { q } => q.powf(-1.0 / q),
            Density::ScaledGnd { q, scale } => scale * q.powf(-1.0 / q),
            _ => 1.0,
        }
    }

    /// `log(p(0) / p(y))`.
    pub fn neg_log_ratio(&self, y: f64) -> Result<f64> {
        match self {
            Density::StandardGnd { q } => Ok(q * y.abs().powf(*q)),
            Density::ScaledGnd { q, scale } => Ok(q * (y / scale).abs().powf(*q)),
            Density::AsymmetricLaplace { rate_pos, rate_neg } => {
                Ok(rate_pos * y.max(0.0) + rate_neg * (-y).max(0.0))
            }
            Density::Flat => Err(Error::NonInformative),
            Density::Custom(c) => {
                let v = (c.neg_log_ratio)(y);
                if v >= 0.0 {
                    Ok(v)
                } else {
                    Err(Error::ModeViolation { y, value: v })
                }
            }
        }
    }

    /// `-log p(0)`; zero for flat priors.
    pub fn neg_log_p0(&self) -> f64 {
        match self {
            Density::StandardGnd { q } => -gnd_log_norm(*q),
            Density::ScaledGnd { q, scale } => scale.ln() - gnd_log_norm(*q),
            Density::AsymmetricLaplace { rate_pos, rate_neg } => {
                (1.0 / rate_pos + 1.0 / rate_neg).ln()
            }
            Density::Flat => 0.0,
            Density::Custom(c) => c.neg_log_p0,
        }
    }

    /// `-log p(y)`; zero for flat priors.
    pub fn neg_log_density(&self, y: f64) -> Result<f64> {
        if self.is_flat() {
            return Ok(0.0);
        }
        Ok(self.neg_log_p0() + self.neg_log_ratio(y)?)
    }

    /// Smoothed penalty of a residual, excluding `-log p(0)`.
    ///
    /// GND: `(z^2 + alpha)^(q/qbar)` on the canonical residual. Other
    /// densities: `log(p(0)/p(rho))` at the modified residual of `r`.
    pub fn surrogate(&self, r: f64, alpha: f64, qbar: u32) -> Result<f64> {
        match self.gnd_exponent() {
            Some(q) => {
                let z = r / self.canonical_scale();
                Ok((z * z + alpha).powf(q / qbar as f64))
            }
            None if self.is_flat() => Ok(0.0),
            None => self.neg_log_ratio(modified_residual(r, alpha, qbar)),
        }
    }

    /// Weight of the raw residual row `r` in the block least-squares update.
    ///
    /// For GND factors this is `q (z^2 + alpha)^(q/qbar - 1) / kappa^2`, i.e.
    /// the closed-form GND weight evaluated on the canonical residual and
    /// mapped back to the raw row. Other densities use
    /// [`weight`] at the modified residual of `r`.
    pub fn row_weight(&self, r: f64, alpha: f64, qbar: u32) -> Result<f64> {
        match self.gnd_exponent() {
            Some(q) => {
                let kappa = self.canonical_scale();
                let z = r / kappa;
                Ok(q * (z * z + alpha).powf(q / qbar as f64 - 1.0) / (kappa * kappa))
            }
            None => weight(self, modified_residual(r, alpha, qbar), qbar),
        }
    }
}

/// Reweighting scalar `log(p(0)/p(rho)) / |rho|^qbar`.
pub fn weight(d: &Density, rho_hat: f64, qbar: u32) -> Result<f64> {
    if rho_hat == 0.0 {
        return Err(Error::InvalidConfig(
            "modified residual is zero; alpha must be > 0".into(),
        ));
    }
    let num = d.neg_log_ratio(rho_hat)?;
    Ok(num / rho_hat.abs().powi(qbar as i32))
}

/// Smallest integer upper bound on the GND exponents of a set of densities (at least 1).
pub fn default_qbar<'a>(densities: impl IntoIterator<Item = &'a Density>) -> u32 {
    let qmax = densities
        .into_iter()
        .filter_map(Density::gnd_exponent)
        .fold(0.0_f64, f64::max);
    (qmax.ceil() as u32).max(1)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum DensityRepr {
    Gnd {
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    AsymLaplace {
        rate_pos: f64,
        rate_neg: f64,
    },
    Flat,
}

impl Serialize for Density {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Density::StandardGnd { q } => DensityRepr::Gnd { q: *q, scale: None },
            Density::ScaledGnd { q, scale } => DensityRepr::Gnd {
                q: *q,
                scale: Some(*scale),
            },
            Density::AsymmetricLaplace { rate_pos, rate_neg } => DensityRepr::AsymLaplace {
                rate_pos: *rate_pos,
                rate_neg: *rate_neg,
            },
            Density::Flat => DensityRepr::Flat,
            Density::Custom(c) => {
                return Err(serde::ser::Error::custom(format!(
                    "custom density `{}` cannot be serialized",
                    c.name
                )))
            }
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let d = match DensityRepr::deserialize(deserializer)? {
            DensityRepr::Gnd { q, scale: None } => Density::StandardGnd { q },
            DensityRepr::Gnd {
                q,
                scale: Some(scale),
            } => Density::ScaledGnd { q, scale },
            DensityRepr::AsymLaplace { rate_pos, rate_neg } => {
                Density::AsymmetricLaplace { rate_pos, rate_neg }
            }
            DensityRepr::Flat => Density::Flat,
        };
        d.validate().map_err(serde::de::Error::custom)?;
        Ok(d)
    }
}
