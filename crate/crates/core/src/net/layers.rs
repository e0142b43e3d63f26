//! Direct 2D convolution with zero padding `k/2`, forward and backward.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Offset of the weights in the flat parameter vector.
    pub weight_offset: usize,
    /// Offset of the biases in the flat parameter vector.
    pub bias_offset: usize,
}

impl Conv2d {
    pub fn param_count(cin: usize, cout: usize, kernel: usize) -> usize {
        cout * cin * kernel * kernel + cout
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    /// Valid `[lo, hi)` output positions for kernel tap `k` along an input of
    /// length `n` producing `n_out` outputs.
    #[inline]
    fn valid_range(&self, tap: usize, n: usize, n_out: usize) -> (usize, usize) {
        let pad = self.pad();
        let lo = if tap >= pad {
            0
        } else {
            (pad - tap).div_ceil(self.stride)
        };
        let hi = if n + pad > tap {
            ((n - 1 + pad - tap) / self.stride + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// `input`: `cin × h × w`; returns `cout × ho × wo`.
    pub fn forward<S: Scalar>(&self, params: &[S], input: &[S], h: usize, w: usize) -> Vec<S> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let (k, s, pad) = (self.kernel, self.stride, self.pad());
        let weights = &params[self.weight_offset..self.weight_offset + self.cout * self.cin * k * k];
        let bias = &params[self.bias_offset..self.bias_offset + self.cout];
        let mut out = vec![S::zero(); self.cout * ho * wo];
        for (co, plane) in out.chunks_exact_mut(ho * wo).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..self.cin {
                let inp = &input[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let (oy0, oy1) = self.valid_range(ky, h, ho);
                    for kx in 0..k {
                        let wv = weights[((co * self.cin + ci) * k + ky) * k + kx];
                        let (ox0, ox1) = self.valid_range(kx, w, wo);
                        if ox1 <= ox0 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - pad;
                            let row_in = &inp[iy * w..(iy + 1) * w];
                            let row_out = &mut plane[oy * wo + ox0..oy * wo + ox1];
                            let ix0 = ox0 * s + kx - pad;
                            if s == 1 {
                                for (o, &x) in row_out.iter_mut().zip(&row_in[ix0..]) {
                                    *o += wv * x;
                                }
                            } else {
                                for (j, o) in row_out.iter_mut().enumerate() {
                                    *o += wv * row_in[ix0 + j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// gradient with respect to `input` when `need_input_grad`.
    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        input: &[S],
        h: usize,
        w: usize,
        grad_out: &[S],
        grad_params: &mut [S],
        need_input_grad: bool,
    ) -> Option<Vec<S>> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let (k, s, pad) = (self.kernel, self.stride, self.pad());
        let nw = self.cout * self.cin * k * k;
        let mut grad_in = need_input_grad.then(|| vec![S::zero(); self.cin * h * w]);
        for co in 0..self.cout {
            let go = &grad_out[co * ho * wo..(co + 1) * ho * wo];
            grad_params[self.bias_offset + co] += go.iter().copied().sum::<S>();
            for ci in 0..self.cin {
                let inp = &input[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let (oy0, oy1) = self.valid_range(ky, h, ho);
                    for kx in 0..k {
                        let widx = ((co * self.cin + ci) * k + ky) * k + kx;
                        let wv = params[self.weight_offset + widx];
                        let (ox0, ox1) = self.valid_range(kx, w, wo);
                        if ox1 <= ox0 {
                            continue;
                        }
                        let ix0 = ox0 * s + kx - pad;
                        let mut gw = S::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - pad;
                            let g_row = &go[oy * wo + ox0..oy * wo + ox1];
                            let row_in = &inp[iy * w..(iy + 1) * w];
                            if s == 1 {
                                for (&g, &x) in g_row.iter().zip(&row_in[ix0..]) {
                                    gw += g * x;
                                }
                            } else {
                                for (j, &g) in g_row.iter().enumerate() {
                                    gw += g * row_in[ix0 + j * s];
                                }
                            }
                            if let Some(gi) = grad_in.as_mut() {
                                let gi_row = &mut gi[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                                if s == 1 {
                                    for (d, &g) in gi_row[ix0..].iter_mut().zip(g_row) {
                                        *d += wv * g;
                                    }
                                } else {
                                    for (j, &g) in g_row.iter().enumerate() {
                                        gi_row[ix0 + j * s] += wv * g;
                                    }
                                }
                            }
                        }
                        grad_params[self.weight_offset + widx] += gw;
                    }
                }
            }
        }
        debug_assert!(self.weight_offset + nw <= grad_params.len());
        grad_in
    }
}
