//! Stride-1 zero-padded 2D convolution kernels over NCHW buffers.
//!
//! Every output element is reduced in a fixed sequential order, and work is
//! split only across independent output planes, so results are bit-identical
//! with or without the `parallel` feature.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.ph + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pw + 1 - self.kw
    }

    /// Output columns `xo` for which `xo + j - pw` lands inside the input row.
    fn col_range(&self, j: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(j);
        let hi = (self.w + self.pw).saturating_sub(j).min(self.out_w());
        (lo, hi.max(lo))
    }

    /// Input row hit by output row `yo` under kernel row `i`, if any.
    fn in_row(&self, yo: usize, i: usize) -> Option<usize> {
        let yi = (yo + i).checked_sub(self.ph)?;
        (yi < self.h).then_some(yi)
    }
}

fn for_each_plane<F>(buf: &mut [f64], plane: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if plane == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        buf.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, chunk)| f(idx, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, chunk)| f(idx, chunk));
    }
}

pub(crate) fn forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.n * g.k * ho * wo];
    for_each_plane(&mut out, ho * wo, |idx, plane| {
        let (n, k) = (idx / g.k, idx % g.k);
        plane.fill(bias[k]);
        for c in 0..g.c {
            let src = &input[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = kernel[((k * g.c + c) * g.kh + i) * g.kw + j];
                    let (lo, hi) = g.col_range(j);
                    for yo in 0..ho {
                        let Some(yi) = g.in_row(yo, i) else { continue };
                        let dst = &mut plane[yo * wo + lo..yo * wo + hi];
                        let row = &src[yi * g.w + lo + j - g.pw..][..hi - lo];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn backward_input(g: &ConvGeom, grad_out: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut gin = vec![0.0; g.n * g.c * g.h * g.w];
    for_each_plane(&mut gin, g.h * g.w, |idx, plane| {
        let (n, c) = (idx / g.c, idx % g.c);
        for k in 0..g.k {
            let go = &grad_out[(n * g.k + k) * ho * wo..][..ho * wo];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = kernel[((k * g.c + c) * g.kh + i) * g.kw + j];
                    let (lo, hi) = g.col_range(j);
                    for yo in 0..ho {
                        let Some(yi) = g.in_row(yo, i) else { continue };
                        let dst = &mut plane[yi * g.w + lo + j - g.pw..][..hi - lo];
                        let row = &go[yo * wo + lo..yo * wo + hi];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    gin
}

/// Dot product with four fixed-order partial sums, so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

pub(crate) fn backward_kernel(g: &ConvGeom, grad_out: &[f64], input: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let per_k = g.c * g.kh * g.kw;
    let mut gk = vec![0.0; g.k * per_k];
    for_each_plane(&mut gk, per_k, |k, block| {
        for n in 0..g.n {
            let go = &grad_out[(n * g.k + k) * ho * wo..][..ho * wo];
            for c in 0..g.c {
                let src = &input[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let (lo, hi) = g.col_range(j);
                        let mut acc = 0.0;
                        for yo in 0..ho {
                            let Some(yi) = g.in_row(yo, i) else { continue };
                            let row = &src[yi * g.w + lo + j - g.pw..][..hi - lo];
                            let gr = &go[yo * wo + lo..yo * wo + hi];
                            acc += dot(gr, row);
                        }
                        block[(c * g.kh + i) * g.kw + j] += acc;
                    }
                }
            }
        }
    });
    gk
}

pub(crate) fn backward_bias(g: &ConvGeom, grad_out: &[f64]) -> Vec<f64> {
    let plane = g.out_h() * g.out_w();
    let mut gb = vec![0.0; g.k];
    for n in 0..g.n {
        for (k, b) in gb.iter_mut().enumerate() {
            *b += grad_out[(n * g.k + k) * plane..][..plane].iter().sum::<f64>();
        }
    }
    gb
}
