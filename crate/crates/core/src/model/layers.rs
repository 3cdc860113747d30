//! Parameterised building blocks. Each layer stores the ids of its tensors in
//! a shared [`Params`] store and is applied to the matching bound `Var`s.

use heightbins_tensor::{Graph, ParamId, Params, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub(crate) struct Init<'a> {
    pub params: &'a mut Params,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<ParamId> {
        let t = Tensor::uniform(shape, -bound, bound, self.rng);
        Ok(self.params.insert(name, t)?)
    }

    pub fn fill(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        Ok(self.params.insert(name, Tensor::full(shape, value))?)
    }

    /// Convolution with He-uniform kernel, zero bias.
    pub fn conv(
        &mut self,
        name: &str,
        out: usize,
        inp: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv> {
        let bound = (6.0 / (inp * k * k) as f64).sqrt();
        self.conv_with_bound(name, out, inp, k, stride, padding, bound)
    }

    /// 1×1 projection initialised like a dense layer (±1/√fan_in).
    pub fn pointwise(&mut self, name: &str, out: usize, inp: usize) -> Result<Conv> {
        let bound = 1.0 / (inp as f64).sqrt();
        self.conv_with_bound(name, out, inp, 1, 1, 0, bound)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_with_bound(
        &mut self,
        name: &str,
        out: usize,
        inp: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bound: f64,
    ) -> Result<Conv> {
        Ok(Conv {
            weight: self.uniform(&format!("{name}.w"), vec![out, inp, k, k], bound)?,
            bias: self.fill(&format!("{name}.b"), vec![out], 0.0)?,
            stride,
            padding,
        })
    }

    pub fn linear(&mut self, name: &str, inp: usize, out: usize) -> Result<Linear> {
        let bound = 1.0 / (inp as f64).sqrt();
        Ok(Linear {
            weight: self.uniform(&format!("{name}.w"), vec![inp, out], bound)?,
            bias: self.fill(&format!("{name}.b"), vec![out], 0.0)?,
        })
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.fill(&format!("{name}.g"), vec![dim], 1.0)?,
            shift: self.fill(&format!("{name}.b"), vec![dim], 0.0)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn apply(&self, g: &Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.conv2d(
            x,
            p[self.weight.0],
            Some(p[self.bias.0]),
            self.stride,
            self.padding,
        )?)
    }
}

/// Row-vector dense layer: `[T, in] → [T, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn apply(&self, g: &Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.weight.0])?;
        Ok(g.add(y, p[self.bias.0])?)
    }
}

/// Layer normalisation over the last axis with learned gain and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub fn apply(&self, g: &Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.layer_norm(x, 1e-5)?;
        let y = g.mul(y, p[self.gain.0])?;
        Ok(g.add(y, p[self.shift.0])?)
    }
}
