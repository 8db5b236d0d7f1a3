//! Finite-difference gradient checks for every layer, at small 64-bit sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{grad_check, GradCheckReport};
use crate::layers::{Conv2d, Conv3d, Embedding, Linear, MultiHeadAttention};
use crate::tensor::Result;
use crate::{Graph, ParamSet, Tensor, Var};

const H: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Weighted sum so every output element gets a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph<'_, f64>, v: Var, seed: u64) -> Result<Var> {
    let n = g.value(v).len();
    let flat = g.reshape(v, &[n])?;
    let w = g.input(random(&[n], &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.mul(flat, w)?;
    Ok(g.sum(p))
}

fn check(name: &'static str, tolerance: f64, ps: &ParamSet<f64>, f: impl Fn(&mut Graph<'_, f64>) -> Result<Var>) -> Result<LayerCheck> {
    Ok(LayerCheck {
        name,
        tolerance,
        report: grad_check(ps, f, H, usize::MAX)?,
    })
}

fn linear() -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    let lin = Linear::new(&mut ps, "lin", 5, 3, &mut rng);
    let x = random(&[4, 5], &mut rng);
    check("linear", 1e-7, &ps, |g| {
        let xv = g.input(x.clone());
        let y = lin.forward(g, xv)?;
        weighted_sum(g, y, 2)
    })
}

fn conv2d() -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::new();
    let conv = Conv2d::new(&mut ps, "c", 3, 4, 3, 2, 1, &mut rng);
    let x = ps.add("x", random(&[2, 3, 9, 8], &mut rng));
    check("conv2d+relu", 1e-4, &ps, |g| {
        let xv = g.param(x);
        let y = conv.forward(g, xv)?;
        let y = g.relu(y);
        weighted_sum(g, y, 3)
    })
}

fn conv3d() -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    let conv = Conv3d::new(&mut ps, "c3", 2, 3, [3, 3, 3], [0, 1, 1], &mut rng);
    let x = ps.add("x", random(&[2, 3, 5, 4], &mut rng));
    check("conv3d", 1e-4, &ps, |g| {
        let xv = g.param(x);
        let y = conv.forward(g, xv)?;
        weighted_sum(g, y, 4)
    })
}

fn attention() -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    let att = MultiHeadAttention::new(&mut ps, "att", 8, 2, true, &mut rng)?;
    let x = ps.add("x", random(&[5, 8], &mut rng));
    let mask = [true, true, true, false, true];
    check("attention", 1e-4, &ps, |g| {
        let xv = g.param(x);
        let out = att.forward(g, xv, Some(&mask))?;
        let ctx = g.matmul(out.weights, xv)?;
        let a = weighted_sum(g, out.output.expect("projected output"), 5)?;
        let b = weighted_sum(g, ctx, 6)?;
        g.add(a, b)
    })
}

fn shape_ops() -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::new();
    let a = ps.add("a", random(&[2, 3, 4], &mut rng));
    let b = ps.add("b", random(&[6, 4], &mut rng));
    let emb = Embedding::new(&mut ps, "emb", 5, 4, &mut rng);
    check("shape ops", 1e-4, &ps, |g| {
        let av = g.param(a);
        let p = g.permute3(av, [1, 2, 0])?;
        let p = g.reshape(p, &[6, 4])?;
        let bv = g.param(b);
        let e = emb.forward(g, &[3, 1, 3])?;
        let cat = g.concat_rows(&[p, bv, e])?;
        let s = g.slice_rows(cat, 2, 10)?;
        let c1 = g.slice_cols(s, 1, 2)?;
        let c2 = g.slice_cols(s, 0, 1)?;
        let cc = g.concat_cols(&[c1, c2])?;
        let sm = g.softmax_rows(cc, None)?;
        let t = g.matmul_t(sm, true, cc, false)?;
        let sg = g.sigmoid(t);
        let sc = g.scale(sg, 1.7);
        let up = g.reshape(sc, &[1, 3, 3])?;
        let up = g.upsample2(up)?;
        weighted_sum(g, up, 7)
    })
}

fn transposed_matmul() -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ps = ParamSet::new();
    let a = ps.add("a", random(&[3, 4], &mut rng));
    let b = ps.add("b", random(&[5, 3], &mut rng));
    let cases: [(&'static str, bool, bool); 3] = [("matmul a·bT", false, true), ("matmul aT·b", true, false), ("matmul aT·bT", true, true)];
    cases
        .into_iter()
        .map(|(name, ta, tb)| {
            check(name, 1e-6, &ps, |g| {
                let (av, bv) = (g.param(a), g.param(b));
                let y = match (ta, tb) {
                    (false, true) => g.matmul_t(av, false, av, true)?,
                    (true, false) => g.matmul_t(av, true, av, false)?,
                    _ => g.matmul_t(av, true, bv, true)?,
                };
                weighted_sum(g, y, 9)
            })
        })
        .collect()
}

fn combo_loss() -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = ParamSet::new();
    let x = ps.add("logits", random(&[8, 8], &mut rng));
    let gt: Vec<f64> = (0..64).map(|_| rng.gen_bool(0.4) as u8 as f64).collect();
    check("combo loss", 1e-4, &ps, |g| {
        let xv = g.param(x);
        let scaled = g.scale(xv, 3.0);
        g.combo_loss(scaled, &gt)
    })
}

/// Runs every per-layer check.
pub fn layer_checks() -> Result<Vec<LayerCheck>> {
    let mut out = vec![linear()?, conv2d()?, conv3d()?, attention()?, shape_ops()?];
    out.extend(transposed_matmul()?);
    out.push(combo_loss()?);
    Ok(out)
}
