//! Dense kernels shared by forward and backward passes.
//!
//! All reductions run in a fixed order so results do not depend on the rayon
//! schedule.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `[m, k] x [k, n] -> [m, n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if n == 0 {
        return out;
    }
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `a^T x g` with `a: [m, k]`, `g: [m, n]` -> `[k, n]`
pub fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    let row = |(p, out_row): (usize, &mut [f64])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    };
    if n == 0 {
        return out;
    }
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `g x b^T` with `g: [m, n]`, `b: [k, n]` -> `[m, k]`
pub fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    let row = |(i, out_row): (usize, &mut [f64])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    };
    if k == 0 {
        return out;
    }
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.chunks_mut(k).enumerate().for_each(row);
    }
    out
}

/// Geometry of a square-kernel 2-D convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let mut cols = vec![0.0; self.col_rows() * self.col_cols()];
        for c in 0..self.in_ch {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let dst = &mut cols[r * oh * ow..(r + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            dst[oy * ow + ox] = plane[iy as usize * self.width + ix as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        for c in 0..self.in_ch {
            let plane = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let src = &cols[r * oh * ow..(r + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            plane[iy as usize * self.width + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * g.col_cols();
    let mut out = vec![0.0; g.batch * out_len];
    out.par_chunks_mut(out_len.max(1))
        .enumerate()
        .for_each(|(b, dst)| {
            let cols = g.im2col(&x[b * in_len..(b + 1) * in_len]);
            let y = matmul(w, &cols, g.out_ch, g.col_rows(), g.col_cols());
            for (o, plane) in dst.chunks_mut(g.col_cols()).enumerate() {
                for (d, v) in plane.iter_mut().zip(&y[o * g.col_cols()..(o + 1) * g.col_cols()]) {
                    *d = v + bias[o];
                }
            }
        });
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * g.col_cols();
    let per_example: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..g.batch)
        .into_par_iter()
        .map(|b| {
            let cols = g.im2col(&x[b * in_len..(b + 1) * in_len]);
            let gb = &grad_out[b * out_len..(b + 1) * out_len];
            let dw = matmul_a_bt(gb, &cols, g.out_ch, g.col_cols(), g.col_rows());
            let db: Vec<f64> = gb.chunks(g.col_cols()).map(|p| p.iter().sum()).collect();
            let dcols = matmul_at_b(w, gb, g.out_ch, g.col_rows(), g.col_cols());
            let mut dx = vec![0.0; in_len];
            g.col2im(&dcols, &mut dx);
            (dx, dw, db)
        })
        .collect();
    let mut d_input = Vec::with_capacity(g.batch * in_len);
    let mut d_weight = vec![0.0; w.len()];
    let mut d_bias = vec![0.0; g.out_ch];
    for (dx, dw, db) in per_example {
        d_input.extend(dx);
        for (a, v) in d_weight.iter_mut().zip(dw) {
            *a += v;
        }
        for (a, v) in d_bias.iter_mut().zip(db) {
            *a += v;
        }
    }
    (d_input, d_weight, d_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] x [5 6; 7 8]
        let c = matmul(&[1., 2., 3., 4.], &[5., 6., 7., 8.], 2, 2, 2);
        assert_eq!(c, vec![19., 22., 43., 50.]);
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = [1., 2., 3., 4., 5., 6.]; // [3, 2]
        let g = [1., 0., 2., 1., 0., 3.]; // [3, 2]
        let at = [1., 3., 5., 2., 4., 6.]; // [2, 3]
        assert_eq!(matmul_at_b(&a, &g, 3, 2, 2), matmul(&at, &g, 2, 3, 2));
        let gt = [1., 2., 0., 0., 1., 3.]; // g^T [2, 3]
        assert_eq!(matmul_a_bt(&a, &g, 3, 2, 3), matmul(&a, &gt, 3, 2, 3));
    }

    #[test]
    fn conv_matches_direct_loops() {
        let geom = ConvGeom {
            batch: 2,
            in_ch: 2,
            height: 5,
            width: 4,
            out_ch: 3,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let bias = [0.5, -1.0, 2.0];
        let out = conv2d_forward(&geom, &x, &w, &bias);
        let (oh, ow) = (geom.out_height(), geom.out_width());
        assert_eq!((oh, ow), (3, 2));
        for b in 0..2 {
            for o in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[o];
                        for c in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || iy >= 5 || ix < 0 || ix >= 4 {
                                        continue;
                                    }
                                    acc += w[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x[((b * 2 + c) * 5 + iy as usize) * 4 + ix as usize];
                                }
                            }
                        }
                        let got = out[((b * 3 + o) * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
