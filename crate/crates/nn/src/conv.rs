//! Convolution kernels via im2col, shared by the 2-D and 3-D layers.

use crate::tensor::{matmul_into, shape_err, Result, Scalar};

/// Geometry of a single-sample 3-D cross-correlation. 2-D convolution is the
/// special case `d = kd = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn out_dims(&self) -> Result<[usize; 3]> {
        let one = |n: usize, k: usize, s: usize, p: usize| {
            if s == 0 || n + 2 * p < k {
                None
            } else {
                Some((n + 2 * p - k) / s + 1)
            }
        };
        match (
            one(self.d, self.kd, self.stride[0], self.pad[0]),
            one(self.h, self.kh, self.stride[1], self.pad[1]),
            one(self.w, self.kw, self.stride[2], self.pad[2]),
        ) {
            (Some(a), Some(b), Some(c)) => Ok([a, b, c]),
            _ => shape_err(format!("kernel does not fit input: {self:?}")),
        }
    }

    pub fn k(&self) -> usize {
        self.cin * self.kd * self.kh * self.kw
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.d * self.h * self.w
    }

    pub fn p(&self) -> usize {
        let [a, b, c] = self.out_dims().expect("validated geometry");
        a * b * c
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.p()
    }

    /// Calls `f(row, col, input index)` for every in-bounds im2col entry.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [od, oh, ow] = self.out_dims().expect("validated geometry");
        let p = od * oh * ow;
        let mut row = 0;
        for ci in 0..self.cin {
            for a in 0..self.kd {
                for b in 0..self.kh {
                    for c in 0..self.kw {
                        for z in 0..od {
                            let iz = (z * self.stride[0] + a) as isize - self.pad[0] as isize;
                            if iz < 0 || iz >= self.d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * self.stride[1] + b) as isize - self.pad[1] as isize;
                                if iy < 0 || iy >= self.h as isize {
                                    continue;
                                }
                                let base = ((ci * self.d + iz as usize) * self.h + iy as usize) * self.w;
                                let col0 = (z * oh + y) * ow;
                                for x in 0..ow {
                                    let ix = (x * self.stride[2] + c) as isize - self.pad[2] as isize;
                                    if ix < 0 || ix >= self.w as isize {
                                        continue;
                                    }
                                    f(row, col0 + x, base + ix as usize);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        debug_assert_eq!(row * p, self.k() * p);
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let p = self.p();
        let mut cols = vec![T::zero(); self.k() * p];
        self.for_each_tap(|r, c, i| cols[r * p + c] = x[i]);
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.p();
        self.for_each_tap(|r, c, i| dx[i] = dx[i] + cols[r * p + c]);
    }

    /// `out[cout, P] = w[cout, K] * cols + bias`.
    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
        let cols = self.im2col(x);
        let p = self.p();
        matmul_into(self.cout, self.k(), p, w, false, &cols, false, out, false);
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                for v in &mut out[o * p..(o + 1) * p] {
                    *v = *v + bv;
                }
            }
        }
    }

    /// Accumulates input, weight and bias gradients.
    pub fn backward<T: Scalar>(
        &self,
        x: &[T],
        w: &[T],
        dout: &[T],
        dx: Option<&mut [T]>,
        dw: Option<&mut [T]>,
        db: Option<&mut [T]>,
    ) {
        let p = self.p();
        let k = self.k();
        if let Some(dw) = dw {
            let cols = self.im2col(x);
            matmul_into(self.cout, p, k, dout, false, &cols, true, dw, true);
        }
        if let Some(db) = db {
            for (o, g) in db.iter_mut().enumerate() {
                *g = dout[o * p..(o + 1) * p].iter().fold(*g, |acc, &v| acc + v);
            }
        }
        if let Some(dx) = dx {
            let mut dcols = vec![T::zero(); k * p];
            matmul_into(k, self.cout, p, w, true, dout, false, &mut dcols, false);
            self.col2im(&dcols, dx);
        }
    }
}
