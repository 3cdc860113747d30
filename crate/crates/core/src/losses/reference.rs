//! Reference distributions around a ground-truth height, with the scale
//! solved so that the bin centered on the truth holds the mode probability.

use heightbins_tensor::special::{erf, erfc, ierf};
use heightbins_tensor::TensorError;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::head::containing_bin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Laplace,
    Uniform,
    Delta,
    None,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Gaussian,
        Family::Laplace,
        Family::Uniform,
        Family::Delta,
        Family::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Laplace => "laplace",
            Family::Uniform => "uniform",
            Family::Delta => "delta",
            Family::None => "none",
        }
    }
}

fn check_width(op: &'static str, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(TensorError::contract(op, format!("bin width {delta} must be positive")).into());
    }
    Ok(())
}

fn check_open(op: &'static str, p_m: f64) -> Result<()> {
    if !(p_m > 0.0 && p_m < 1.0) {
        return Err(TensorError::domain(op, format!("mode probability {p_m} outside (0, 1)")).into());
    }
    Ok(())
}

/// `σ = Δ / (2√2 · ierf(P_m))`.
pub fn solve_gaussian_sigma(p_m: f64, delta: f64) -> Result<f64> {
    check_width("solve_gaussian_sigma", delta)?;
    check_open("solve_gaussian_sigma", p_m)?;
    Ok(delta / (2.0 * std::f64::consts::SQRT_2 * ierf(p_m)?))
}

/// `b = −Δ / (2 ln(1 − P_m))`.
pub fn solve_laplace_b(p_m: f64, delta: f64) -> Result<f64> {
    check_width("solve_laplace_b", delta)?;
    check_open("solve_laplace_b", p_m)?;
    Ok(-delta / (2.0 * (-p_m).ln_1p()))
}

/// `w = Δ / P_m`, bounds `h̃ ∓ w/2`.
pub fn solve_uniform_bounds(p_m: f64, delta: f64, h: f64) -> Result<(f64, f64)> {
    check_width("solve_uniform_bounds", delta)?;
    if !(p_m > 0.0 && p_m <= 1.0) {
        return Err(TensorError::domain(
            "solve_uniform_bounds",
            format!("mode probability {p_m} outside (0, 1]"),
        )
        .into());
    }
    let w = delta / p_m;
    Ok((h - w / 2.0, h + w / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceDistribution {
    Gaussian { mean: f64, sigma: f64 },
    Laplace { loc: f64, scale: f64 },
    Uniform { a: f64, b: f64 },
    Delta { at: f64 },
    None,
}

impl ReferenceDistribution {
    /// Distribution of `family` located at `h` whose centered bin of width
    /// `delta` carries mass `p_m`.
    pub fn solve(family: Family, h: f64, p_m: f64, delta: f64) -> Result<Self> {
        Ok(match family {
            Family::Gaussian => ReferenceDistribution::Gaussian {
                mean: h,
                sigma: solve_gaussian_sigma(p_m, delta)?,
            },
            Family::Laplace => ReferenceDistribution::Laplace {
                loc: h,
                scale: solve_laplace_b(p_m, delta)?,
            },
            Family::Uniform => {
                let (a, b) = solve_uniform_bounds(p_m, delta, h)?;
                ReferenceDistribution::Uniform { a, b }
            }
            Family::Delta => ReferenceDistribution::Delta { at: h },
            Family::None => ReferenceDistribution::None,
        })
    }

    pub fn family(&self) -> Family {
        match self {
            ReferenceDistribution::Gaussian { .. } => Family::Gaussian,
            ReferenceDistribution::Laplace { .. } => Family::Laplace,
            ReferenceDistribution::Uniform { .. } => Family::Uniform,
            ReferenceDistribution::Delta { .. } => Family::Delta,
            ReferenceDistribution::None => Family::None,
        }
    }

    /// Cumulative distribution function. `None` has no mass anywhere.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ReferenceDistribution::Gaussian { mean, sigma } => {
                0.5 * erfc(-(x - mean) / (sigma * std::f64::consts::SQRT_2))
            }
            ReferenceDistribution::Laplace { loc, scale } => {
                if x < loc {
                    0.5 * ((x - loc) / scale).exp()
                } else {
                    1.0 - 0.5 * (-(x - loc) / scale).exp()
                }
            }
            ReferenceDistribution::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            ReferenceDistribution::Delta { at } => {
                if x >= at {
                    1.0
                } else {
                    0.0
                }
            }
            ReferenceDistribution::None => 0.0,
        }
    }

    /// Mass on `[lo, hi]`, evaluated on whichever side of the location keeps
    /// the difference free of cancellation.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        match *self {
            ReferenceDistribution::Gaussian { mean, sigma } => {
                let s = sigma * std::f64::consts::SQRT_2;
                let (zl, zh) = ((lo - mean) / s, (hi - mean) / s);
                let m = if zl >= 0.0 {
                    0.5 * (erfc(zl) - erfc(zh))
                } else if zh <= 0.0 {
                    0.5 * (erfc(-zh) - erfc(-zl))
                } else {
                    0.5 * (erf(zh) - erf(zl))
                };
                m.max(0.0)
            }
            ReferenceDistribution::Laplace { loc, scale } => {
                let m = if lo >= loc {
                    0.5 * ((-(lo - loc) / scale).exp() - (-(hi - loc) / scale).exp())
                } else if hi <= loc {
                    0.5 * (((hi - loc) / scale).exp() - ((lo - loc) / scale).exp())
                } else {
                    1.0 - 0.5 * (-(hi - loc) / scale).exp() - 0.5 * ((lo - loc) / scale).exp()
                };
                m.max(0.0)
            }
            ReferenceDistribution::Uniform { a, b } => {
                let overlap = hi.min(b) - lo.max(a);
                if overlap > 0.0 {
                    overlap / (b - a)
                } else {
                    0.0
                }
            }
            ReferenceDistribution::Delta { at } => {
                if at > lo && at <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            ReferenceDistribution::None => 0.0,
        }
    }

    /// Per-bin masses over `edges`; mass outside `[b_0, b_N]` is dropped.
    /// A delta sits in the bin [`containing_bin`] picks.
    pub fn bin_probabilities(&self, edges: &[f64]) -> Vec<f64> {
        let n = edges.len() - 1;
        match *self {
            ReferenceDistribution::Delta { at } => {
                let mut out = vec![0.0; n];
                if at >= edges[0] && at <= edges[n] {
                    out[containing_bin(edges, at)] = 1.0;
                }
                out
            }
            _ => edges.windows(2).map(|e| self.mass(e[0], e[1])).collect(),
        }
    }
}
