//! Central finite-difference comparison against the reverse pass.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the elementwise relative error, so gradients that
/// are zero up to rounding are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;

/// Result of comparing one input's analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCheck {
    pub input: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Elementwise relative error `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences, for every input in `inputs`.
///
/// `max_per_input` limits how many elements of each input are perturbed;
/// when set, elements are taken at an even stride.
pub fn check<F>(
    inputs: &[Tensor],
    step: f64,
    max_per_input: Option<usize>,
    f: F,
) -> Result<Vec<InputCheck>>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();
    drop(g);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t)).collect();
        let out = f(&g, &vars)?;
        Ok(g.item(out))
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let n = t.len();
        let stride = match max_per_input {
            Some(cap) if cap > 0 && n > cap => n.div_ceil(cap),
            _ => 1,
        };
        let mut best = InputCheck {
            input: i,
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in (0..n).step_by(stride) {
            let orig = t.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i][j];
            let err = relative_error(a, numeric);
            best.checked += 1;
            if err > best.max_rel_error || !err.is_finite() {
                best.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                best.worst_index = j;
                best.analytic = a;
                best.numeric = numeric;
            }
        }
        report.push(best);
    }
    Ok(report)
}

/// Largest relative error across a report.
pub fn worst(report: &[InputCheck]) -> f64 {
    report
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max)
}

/// One primitive's finite-difference outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&Graph, &[Var]) -> Result<Var>>);

fn random(rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    use rand::Rng;
    let n = crate::tensor::numel(&shape);
    // keep clear of the kinks of abs/relu/clamp at zero
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn positive(rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let mut t = random(rng, shape);
    t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
    t
}

/// Reduces `y` to a scalar through a fixed random projection so that every
/// output element carries a distinct upstream gradient.
fn project(g: &Graph, y: Var, seed: u64) -> Result<Var> {
    use rand::{Rng, SeedableRng};
    let shape = g.shape(y);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w: Vec<f64> = (0..crate::tensor::numel(&shape))
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let w = g.constant_from(shape, w)?;
    Ok(g.sum(g.mul(y, w)?))
}

fn cases(seed: u64) -> Vec<Case> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let m34 = || vec![3, 4];
    let mut out: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($inp:expr),*], $f:expr) => {
            out.push(($name, vec![$($inp),*], Box::new($f)))
        };
    }
    case!("add", [random(r, m34()), random(r, vec![4])], |g, v| {
        project(g, g.add(v[0], v[1])?, 1)
    });
    case!("sub", [random(r, m34()), random(r, vec![3, 1])], |g, v| {
        project(g, g.sub(v[0], v[1])?, 2)
    });
    case!("mul", [random(r, m34()), random(r, m34())], |g, v| {
        project(g, g.mul(v[0], v[1])?, 3)
    });
    case!("div", [random(r, m34()), positive(r, vec![1, 4])], |g, v| {
        project(g, g.div(v[0], v[1])?, 4)
    });
    case!("add_scalar", [random(r, m34())], |g, v| {
        project(g, g.add_scalar(v[0], 0.7), 5)
    });
    case!("mul_scalar", [random(r, m34())], |g, v| {
        project(g, g.mul_scalar(v[0], -1.3), 6)
    });
    case!("matmul", [random(r, m34()), random(r, vec![4, 2])], |g, v| {
        project(g, g.matmul(v[0], v[1])?, 7)
    });
    case!(
        "matmul_batched",
        [random(r, vec![2, 3, 4]), random(r, vec![2, 4, 3])],
        |g, v| project(g, g.matmul(v[0], v[1])?, 8)
    );
    case!(
        "conv2d_3x3",
        [random(r, vec![2, 5, 5]), random(r, vec![3, 2, 3, 3]), random(r, vec![3])],
        |g, v| project(g, g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?, 9)
    );
    case!(
        "conv2d_3x3_stride2",
        [random(r, vec![2, 6, 6]), random(r, vec![3, 2, 3, 3]), random(r, vec![3])],
        |g, v| project(g, g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?, 10)
    );
    case!(
        "conv2d_1x1",
        [random(r, vec![3, 4, 4]), random(r, vec![2, 3, 1, 1]), random(r, vec![2])],
        |g, v| project(g, g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?, 11)
    );
    case!(
        "conv2d_patchify",
        [random(r, vec![2, 4, 4]), random(r, vec![3, 2, 2, 2])],
        |g, v| project(g, g.conv2d(v[0], v[1], None, 2, 0)?, 12)
    );
    case!("reshape", [random(r, m34())], |g, v| {
        project(g, g.reshape(v[0], &[2, 6])?, 13)
    });
    case!("transpose", [random(r, m34())], |g, v| {
        project(g, g.transpose(v[0])?, 14)
    });
    case!("permute", [random(r, vec![2, 3, 4])], |g, v| {
        project(g, g.permute(v[0], &[2, 0, 1])?, 15)
    });
    case!("concat", [random(r, m34()), random(r, vec![3, 2])], |g, v| {
        project(g, g.concat(&[v[0], v[1]], 1)?, 16)
    });
    case!("slice", [random(r, m34())], |g, v| {
        project(g, g.slice(v[0], 1, 1, 3)?, 17)
    });
    case!("sum_axis", [random(r, m34())], |g, v| {
        project(g, g.sum_axis(v[0], 0)?, 18)
    });
    case!("mean_axis", [random(r, m34())], |g, v| {
        project(g, g.mean_axis(v[0], 1)?, 19)
    });
    case!("sum", [random(r, m34())], |g, v| Ok(g.sum(g.square(v[0]))));
    case!("mean", [random(r, m34())], |g, v| Ok(g.mean(g.square(v[0]))));
    case!("exp", [random(r, m34())], |g, v| project(g, g.exp(v[0]), 20));
    case!("log", [positive(r, m34())], |g, v| project(g, g.log(v[0])?, 21));
    case!("sqrt", [positive(r, m34())], |g, v| {
        project(g, g.sqrt(v[0])?, 22)
    });
    case!("abs", [random(r, m34())], |g, v| project(g, g.abs(v[0]), 23));
    case!("relu", [random(r, m34())], |g, v| project(g, g.relu(v[0]), 24));
    case!("gelu", [random(r, m34())], |g, v| project(g, g.gelu(v[0]), 25));
    case!("sigmoid", [random(r, m34())], |g, v| {
        project(g, g.sigmoid(v[0]), 26)
    });
    case!("softmax_rows", [random(r, m34())], |g, v| {
        project(g, g.softmax(v[0], 1)?, 27)
    });
    case!("softmax_cols", [random(r, m34())], |g, v| {
        project(g, g.softmax(v[0], 0)?, 28)
    });
    case!("layer_norm", [random(r, m34())], |g, v| {
        project(g, g.layer_norm(v[0], 1e-5)?, 29)
    });
    case!("erf", [random(r, m34())], |g, v| project(g, g.erf(v[0]), 30));
    case!("cumsum", [random(r, m34())], |g, v| {
        project(g, g.cumsum(v[0], 1)?, 31)
    });
    case!("clamp_min", [random(r, m34())], |g, v| {
        project(g, g.clamp_min(v[0], 0.0), 32)
    });
    case!("select", [random(r, m34()), random(r, m34())], |g, v| {
        let mask: Vec<bool> = (0..12).map(|i| (i * 7) % 3 == 0).collect();
        project(g, g.select(&mask, v[0], v[1])?, 33)
    });
    case!("gather", [random(r, m34())], |g, v| {
        project(g, g.gather(v[0], &[0, 5, 5, 11, 3])?, 34)
    });
    case!("upsample2x", [random(r, vec![2, 2, 3])], |g, v| {
        project(g, g.upsample2x(v[0])?, 35)
    });
    out
}

/// Runs every primitive against central differences with inputs drawn from
/// `seed`. The comparison uses [`FD_STEP`] and [`relative_error`].
pub fn primitive_suite(seed: u64) -> Result<Vec<PrimitiveCheck>> {
    cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check(&inputs, FD_STEP, None, f)?;
            Ok(PrimitiveCheck {
                name,
                max_rel_error: worst(&report),
            })
        })
        .collect()
}
