//! Reverse-mode autodiff tape. One graph per sample; parameters are read
//! from a borrowed `ParamSet` and their gradients returned as `ParamGrads`.

use crate::conv::ConvGeom;
use crate::loss::{combo_loss_logits, LossConfig};
use crate::params::{ParamGrads, ParamId, ParamSet};
use crate::tensor::{matmul_into, shape_err, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Reshape(Var),
    Permute3(Var, [usize; 3]),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, batch: usize },
    Upsample2(Var),
    Embedding(Var, Vec<usize>),
    Sum(Var),
    Combo(Var, Vec<T>),
}

enum Value<T> {
    Own(Tensor<T>),
    Param(usize),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    loss_cfg: LossConfig,
}

fn cols_of(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            loss_cfg: LossConfig::default(),
        }
    }

    pub fn with_loss(params: &'p ParamSet<T>, loss_cfg: LossConfig) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            loss_cfg,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Own(t) => t,
            Value::Param(id) => &self.params.entries[*id].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Own(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id.0),
            op: Op::Param(id.0),
        });
        Var(self.nodes.len() - 1)
    }

    /// `a[m,k] * b[k,n]`, with either operand optionally transposed.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return shape_err(format!("matmul needs 2-d operands, got {sa:?} and {sb:?}"));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return shape_err(format!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(m, k, n, &self.value(a).data, ta, &self.value(b).data, tb, &mut out, false);
        Ok(self.push(
            Tensor { shape: vec![m, n], data: out },
            Op::MatMul { a, b, ta, tb, m, k, n },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return shape_err(format!("elementwise {:?} vs {:?}", ta.shape, tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of `a` (last dimension `n`).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = cols_of(&ta.shape);
        if tb.len() != n {
            return shape_err(format!("row bias {:?} vs {:?}", tb.shape, ta.shape));
        }
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data[i % n])
            .collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddRow(a, b)))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|&x| f(x)).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, op)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    /// Softmax over the last dimension. Columns with `key_mask[j] == false`
    /// receive zero weight.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        let n = cols_of(&t.shape);
        if let Some(m) = key_mask {
            if m.len() != n {
                return shape_err(format!("key mask length {} vs {n} columns", m.len()));
            }
        }
        let mut data = t.data.clone();
        for row in data.chunks_mut(n) {
            let live = |j: usize| key_mask.map_or(true, |m| m[j]);
            let mx = (0..n)
                .filter(|&j| live(j))
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if live(j) { (*v - mx).exp() } else { T::zero() };
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let shape = t.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Softmax(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", t.shape));
        }
        let data = t.data.clone();
        Ok(self.push(
            Tensor {
                shape: shape.to_vec(),
                data,
            },
            Op::Reshape(a),
        ))
    }

    /// Reorders the axes of a rank-3 tensor: output axis `i` is input axis `perm[i]`.
    pub fn permute3(&mut self, a: Var, perm: [usize; 3]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 3 {
            return shape_err(format!("permute3 needs rank 3, got {:?}", t.shape));
        }
        let mut sorted = perm;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return shape_err(format!("invalid permutation {perm:?}"));
        }
        let s = [t.shape[0], t.shape[1], t.shape[2]];
        let os = [s[perm[0]], s[perm[1]], s[perm[2]]];
        let mut data = vec![T::zero(); t.len()];
        for i0 in 0..s[0] {
            for i1 in 0..s[1] {
                for i2 in 0..s[2] {
                    let idx = [i0, i1, i2];
                    let o = (idx[perm[0]] * os[1] + idx[perm[1]]) * os[2] + idx[perm[2]];
                    data[o] = t.data[(i0 * s[1] + i1) * s[2] + i2];
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: os.to_vec(),
                data,
            },
            Op::Permute3(a, perm),
        ))
    }

    /// Stacks 2-d tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = cols_of(self.shape(parts[0]));
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.shape[1] != n {
                return shape_err(format!("concat_rows part {:?} vs {n} columns", t.shape));
            }
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, n],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start + len > t.shape[0] {
            return shape_err(format!("slice rows {start}..{} of {:?}", start + len, t.shape));
        }
        let n = t.shape[1];
        let data = t.data[start * n..(start + len) * n].to_vec();
        Ok(self.push(
            Tensor {
                shape: vec![len, n],
                data,
            },
            Op::SliceRows(a, start),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != m {
                return shape_err(format!("concat_cols part {s:?} vs {m} rows"));
            }
            widths.push(s[1]);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![T::zero(); m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.value(p).data;
            for r in 0..m {
                data[r * n + off..r * n + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start + len > t.shape[1] {
            return shape_err(format!("slice cols {start}..{} of {:?}", start + len, t.shape));
        }
        let (m, n) = (t.shape[0], t.shape[1]);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&t.data[r * n + start..r * n + start + len]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![m, len],
                data,
            },
            Op::SliceCols(a, start),
        ))
    }

    /// Cross-correlation over a batch of `batch` samples laid out back to back.
    /// `w` is `[cout, cin, kd, kh, kw]` (any shape with that element count).
    pub fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        out_shape: &[usize],
    ) -> Result<Var> {
        geom.out_dims()?;
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.len() != batch * geom.in_len() {
            return shape_err(format!("conv input {:?} vs geometry {geom:?} x{batch}", tx.shape));
        }
        if tw.len() != geom.cout * geom.k() {
            return shape_err(format!("conv weight {:?} vs geometry {geom:?}", tw.shape));
        }
        if let Some(b) = b {
            if self.value(b).len() != geom.cout {
                return shape_err("conv bias length");
            }
        }
        if out_shape.iter().product::<usize>() != batch * geom.out_len() {
            return shape_err(format!("conv output shape {out_shape:?}"));
        }
        let mut out = vec![T::zero(); batch * geom.out_len()];
        let bias = b.map(|b| self.value(b).data.as_slice());
        for n in 0..batch {
            geom.forward(
                &tx.data[n * geom.in_len()..(n + 1) * geom.in_len()],
                &tw.data,
                bias,
                &mut out[n * geom.out_len()..(n + 1) * geom.out_len()],
            );
        }
        Ok(self.push(
            Tensor {
                shape: out_shape.to_vec(),
                data: out,
            },
            Op::Conv { x, w, b, geom, batch },
        ))
    }

    /// Nearest-neighbour x2 upsampling of the last two dimensions.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() < 2 {
            return shape_err("upsample needs rank >= 2");
        }
        let r = t.rank();
        let (h, w) = (t.shape[r - 2], t.shape[r - 1]);
        let planes = t.len() / (h * w);
        let mut data = vec![T::zero(); t.len() * 4];
        for p in 0..planes {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    data[(p * 2 * h + y) * 2 * w + x] = t.data[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let mut shape = t.shape.clone();
        shape[r - 2] *= 2;
        shape[r - 1] *= 2;
        Ok(self.push(Tensor { shape, data }, Op::Upsample2(a)))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return shape_err("embedding table must be 2-d");
        }
        let (v, c) = (t.shape[0], t.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= v {
                return shape_err(format!("token id {i} outside vocabulary of {v}"));
            }
            data.extend_from_slice(&t.data[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), c],
                data,
            },
            Op::Embedding(table, ids.to_vec()),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Combo loss of `logits` against binary `target` values.
    pub fn combo_loss(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != target.len() {
            return shape_err(format!("loss target {} vs logits {:?}", target.len(), t.shape));
        }
        let x: Vec<f64> = t.data.iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = target.iter().map(|v| v.as_f64()).collect();
        let (loss, _) = combo_loss_logits(&x, &y, &self.loss_cfg);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::Combo(logits, target.to_vec()),
        ))
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> ParamGrads<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Vec<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.value(root).len()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let out = self.value(Var(i));
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(pid) => add_into(&mut pgrads[*pid], &g),
                Op::MatMul { a, b, ta, tb, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    // d(op(a)) = g * op(b)^T, stored back in a's layout.
                    {
                        let da = slot(&mut grads, *a, m * k);
                        if *ta {
                            matmul_into(k, n, m, vb, *tb, &g, true, da, true);
                        } else {
                            matmul_into(m, n, k, &g, false, vb, !*tb, da, true);
                        }
                    }
                    let db = slot(&mut grads, *b, k * n);
                    if *tb {
                        matmul_into(n, m, k, &g, true, va, *ta, db, true);
                    } else {
                        matmul_into(k, m, n, va, !*ta, &g, false, db, true);
                    }
                }
                Op::Add(a, b) => {
                    add_slice(slot(&mut grads, *a, g.len()), &g);
                    add_slice(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    let da = slot(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        da[j] = da[j] + g[j] * vb[j];
                    }
                    let db = slot(&mut grads, *b, g.len());
                    for j in 0..g.len() {
                        db[j] = db[j] + g[j] * va[j];
                    }
                }
                Op::AddRow(a, b) => {
                    add_slice(slot(&mut grads, *a, g.len()), &g);
                    let n = self.value(*b).len();
                    let db = slot(&mut grads, *b, n);
                    for (j, &v) in g.iter().enumerate() {
                        db[j % n] = db[j % n] + v;
                    }
                }
                Op::Scale(a, k) => {
                    let da = slot(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        da[j] = da[j] + g[j] * *k;
                    }
                }
                Op::Relu(a) => {
                    let va = &self.value(*a).data;
                    let da = slot(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        if va[j] > T::zero() {
                            da[j] = da[j] + g[j];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let da = slot(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        let y = out.data[j];
                        da[j] = da[j] + g[j] * y * (T::one() - y);
                    }
                }
                Op::Softmax(a) => {
                    let n = cols_of(&out.shape);
                    let da = slot(&mut grads, *a, g.len());
                    for r in 0..g.len() / n {
                        let (y, gy) = (&out.data[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot = y.iter().zip(gy).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                        for j in 0..n {
                            da[r * n + j] = da[r * n + j] + y[j] * (gy[j] - dot);
                        }
                    }
                }
                Op::Reshape(a) => add_slice(slot(&mut grads, *a, g.len()), &g),
                Op::Permute3(a, perm) => {
                    let s = &self.value(*a).shape;
                    let s = [s[0], s[1], s[2]];
                    let os = [s[perm[0]], s[perm[1]], s[perm[2]]];
                    let da = slot(&mut grads, *a, g.len());
                    for i0 in 0..s[0] {
                        for i1 in 0..s[1] {
                            for i2 in 0..s[2] {
                                let idx = [i0, i1, i2];
                                let o = (idx[perm[0]] * os[1] + idx[perm[1]]) * os[2] + idx[perm[2]];
                                let j = (i0 * s[1] + i1) * s[2] + i2;
                                da[j] = da[j] + g[o];
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_slice(slot(&mut grads, p, len), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let n = ta.shape[1];
                    let da = slot(&mut grads, *a, ta.len());
                    add_slice(&mut da[start * n..start * n + g.len()], &g);
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = (out.shape[0], out.shape[1]);
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).shape[1];
                        let dp = slot(&mut grads, p, m * w);
                        for r in 0..m {
                            add_slice(&mut dp[r * w..(r + 1) * w], &g[r * n + off..r * n + off + w]);
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let (m, n) = (ta.shape[0], ta.shape[1]);
                    let w = out.shape[1];
                    let da = slot(&mut grads, *a, m * n);
                    for r in 0..m {
                        add_slice(&mut da[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                    }
                }
                Op::Conv { x, w, b, geom, batch } => {
                    let (vx, vw) = (&self.value(*x).data, &self.value(*w).data);
                    let (il, ol) = (geom.in_len(), geom.out_len());
                    let mut dw = vec![T::zero(); vw.len()];
                    let mut db = b.map(|_| vec![T::zero(); geom.cout]);
                    let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                    let mut dx = need_dx.then(|| vec![T::zero(); vx.len()]);
                    for n in 0..*batch {
                        geom.backward(
                            &vx[n * il..(n + 1) * il],
                            vw,
                            &g[n * ol..(n + 1) * ol],
                            dx.as_mut().map(|d| &mut d[n * il..(n + 1) * il]),
                            Some(&mut dw),
                            db.as_deref_mut(),
                        );
                    }
                    if let Some(dx) = dx {
                        add_slice(slot(&mut grads, *x, vx.len()), &dx);
                    }
                    add_slice(slot(&mut grads, *w, vw.len()), &dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        add_slice(slot(&mut grads, *b, geom.cout), &db);
                    }
                }
                Op::Upsample2(a) => {
                    let ta = self.value(*a);
                    let r = ta.rank();
                    let (h, w) = (ta.shape[r - 2], ta.shape[r - 1]);
                    let da = slot(&mut grads, *a, ta.len());
                    for p in 0..ta.len() / (h * w) {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                let j = (p * h + y / 2) * w + x / 2;
                                da[j] = da[j] + g[(p * 2 * h + y) * 2 * w + x];
                            }
                        }
                    }
                }
                Op::Embedding(table, ids) => {
                    let tt = self.value(*table);
                    let c = tt.shape[1];
                    let dt = slot(&mut grads, *table, tt.len());
                    for (r, &id) in ids.iter().enumerate() {
                        add_slice(&mut dt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    let da = slot(&mut grads, *a, len);
                    for v in da.iter_mut() {
                        *v = *v + g[0];
                    }
                }
                Op::Combo(a, target) => {
                    let x: Vec<f64> = self.value(*a).data.iter().map(|v| v.as_f64()).collect();
                    let y: Vec<f64> = target.iter().map(|v| v.as_f64()).collect();
                    let (_, dl) = combo_loss_logits(&x, &y, &self.loss_cfg);
                    let da = slot(&mut grads, *a, dl.len());
                    for (d, v) in da.iter_mut().zip(dl) {
                        *d = *d + g[0] * T::from_f64(v);
                    }
                }
            }
        }
        ParamGrads { grads: pgrads }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_slice<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn add_into<T: Scalar>(dst: &mut Option<Vec<T>>, src: &[T]) {
    match dst {
        Some(d) => add_slice(d, src),
        None => *dst = Some(src.to_vec()),
    }
}
