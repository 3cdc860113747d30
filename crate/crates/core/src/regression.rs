//! Continuous heights as the probability-weighted mean of bin centers.

use heightbins_tensor::{Graph, TensorError, Var};

use crate::error::Result;

/// Largest tolerated deviation of a pixel's probability sum from one.
pub const NORMALIZATION_TOL: f64 = 1e-4;

/// `H[h, w] = Σ_i P[i, h, w] · c_i` for `P: [N, H, W]`, `centers: [N]`.
pub fn predict_heights(g: &Graph, p: Var, centers: Var) -> Result<Var> {
    let s = g.shape(p);
    let cs = g.shape(centers);
    if s.len() != 3 || cs != [s[0]] {
        return Err(TensorError::shapes("predict_heights", &s, &cs).into());
    }
    let (n, hw) = (s[0], s[1] * s[2]);
    {
        let v = g.value_ref(p);
        for j in 0..hw {
            let sum: f64 = (0..n).map(|i| v[i * hw + j]).sum();
            if !sum.is_finite() {
                return Err(TensorError::domain(
                    "predict_heights",
                    format!("non-finite probabilities at pixel {j}"),
                )
                .into());
            }
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(TensorError::contract(
                    "predict_heights",
                    format!("probabilities at pixel {j} sum to {sum}"),
                )
                .into());
            }
        }
    }
    let flat = g.reshape(p, &[n, hw])?;
    let row = g.reshape(centers, &[1, n])?;
    let h = g.matmul(row, flat)?;
    Ok(g.reshape(h, &[1, s[1], s[2]])?)
}
