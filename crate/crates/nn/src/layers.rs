use rand_chacha::ChaCha8Rng;

use crate::conv::ConvGeom;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::{shape_err, Result, Scalar};

fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// `y = x W + b` with `W: [in, out]`, applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            w: ps.add_uniform(format!("{name}.w"), &[inputs, outputs], fan_in_bound(inputs) / 2f64.sqrt(), rng),
            b: ps.add_zeros(format!("{name}.b"), &[outputs]),
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// 2-D convolution over `[N, Cin, H, W]` (or `[Cin, H, W]`) inputs.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            w: ps.add_uniform(format!("{name}.w"), &[cout, cin, kernel, kernel], fan_in_bound(fan_in), rng),
            b: ps.add_zeros(format!("{name}.b"), &[cout]),
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (batch, c, h, w) = match s.as_slice() {
            [c, h, w] => (None, *c, *h, *w),
            [n, c, h, w] => (Some(*n), *c, *h, *w),
            _ => return shape_err(format!("conv2d input {s:?}")),
        };
        if c != self.cin {
            return shape_err(format!("conv2d expects {} channels, got {c}", self.cin));
        }
        let geom = ConvGeom {
            cin: self.cin,
            cout: self.cout,
            d: 1,
            h,
            w,
            kd: 1,
            kh: self.kernel,
            kw: self.kernel,
            stride: [1, self.stride, self.stride],
            pad: [0, self.pad, self.pad],
        };
        let [_, oh, ow] = geom.out_dims()?;
        let out_shape = match batch {
            Some(n) => vec![n, self.cout, oh, ow],
            None => vec![self.cout, oh, ow],
        };
        let (wv, bv) = (g.param(self.w), g.param(self.b));
        g.conv(x, wv, Some(bv), geom, batch.unwrap_or(1), &out_shape)
    }
}

/// 3-D convolution over `[Cin, D, H, W]` inputs, unit stride.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3d {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        pad: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(&kernel);
        Self {
            w: ps.add_uniform(format!("{name}.w"), &shape, fan_in_bound(fan_in), rng),
            b: ps.add_zeros(format!("{name}.b"), &[cout]),
            cin,
            cout,
            kernel,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let [c, d, h, w] = s.as_slice() else {
            return shape_err(format!("conv3d input {s:?}"));
        };
        if *c != self.cin {
            return shape_err(format!("conv3d expects {} channels, got {c}", self.cin));
        }
        let geom = ConvGeom {
            cin: self.cin,
            cout: self.cout,
            d: *d,
            h: *h,
            w: *w,
            kd: self.kernel[0],
            kh: self.kernel[1],
            kw: self.kernel[2],
            stride: [1, 1, 1],
            pad: self.pad,
        };
        let [od, oh, ow] = geom.out_dims()?;
        let (wv, bv) = (g.param(self.w), g.param(self.b));
        g.conv(x, wv, Some(bv), geom, 1, &[self.cout, od, oh, ow])
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            table: ps.add_uniform(format!("{name}.table"), &[vocab, dim], 1.0, rng),
            vocab,
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}

pub struct AttentionOutput {
    /// Output projection of the attended values; absent without value projections.
    pub output: Option<Var>,
    /// Attention weights averaged over heads, `[L, L]`.
    pub weights: Var,
    pub head_weights: Vec<Var>,
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Option<Linear>,
    pub o: Option<Linear>,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        dim: usize,
        heads: usize,
        with_values: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return shape_err(format!("dimension {dim} not divisible by {heads} heads"));
        }
        let q = Linear::new(ps, &format!("{name}.q"), dim, dim, rng);
        let k = Linear::new(ps, &format!("{name}.k"), dim, dim, rng);
        let (v, o) = if with_values {
            (
                Some(Linear::new(ps, &format!("{name}.v"), dim, dim, rng)),
                Some(Linear::new(ps, &format!("{name}.o"), dim, dim, rng)),
            )
        } else {
            (None, None)
        };
        Ok(Self { q, k, v, o, dim, heads })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<AttentionOutput> {
        let s = g.shape(x).to_vec();
        if s.len() != 2 || s[1] != self.dim {
            return shape_err(format!("attention input {s:?}, expected [L, {}]", self.dim));
        }
        let dh = self.dim / self.heads;
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = match &self.v {
            Some(l) => Some(l.forward(g, x)?),
            None => None,
        };
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut head_weights = Vec::with_capacity(self.heads);
        let mut head_out = Vec::new();
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let scores = g.matmul_t(qh, false, kh, true)?;
            let scores = g.scale(scores, scale);
            let a = g.softmax_rows(scores, key_mask)?;
            if let Some(v) = v {
                let vh = g.slice_cols(v, h * dh, dh)?;
                head_out.push(g.matmul(a, vh)?);
            }
            head_weights.push(a);
        }
        let mut weights = head_weights[0];
        for &a in &head_weights[1..] {
            weights = g.add(weights, a)?;
        }
        let weights = if self.heads > 1 {
            g.scale(weights, T::from_f64(1.0 / self.heads as f64))
        } else {
            weights
        };
        let output = match &self.o {
            Some(o) => {
                let cat = g.concat_cols(&head_out)?;
                Some(o.forward(g, cat)?)
            }
            None => None,
        };
        Ok(AttentionOutput {
            output,
            weights,
            head_weights,
        })
    }
}
