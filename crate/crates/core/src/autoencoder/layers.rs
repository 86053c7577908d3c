//! Forward and backward kernels for the fixed layer set.
//!
//! Tensors are flat row-major `[channel][row][col]` slices. A [`ConvGeom`]
//! always describes the downsampling direction (large map to small map); the
//! transposed convolution reuses the same geometry as the exact adjoint, so
//! a decoder layer restores precisely the shape its encoder twin consumed.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub big_c: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_c: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    /// Strided "same" geometry: the output side is `ceil(side / stride)`
    /// and zero padding is split with the smaller half in front.
    pub fn same(
        big_c: usize,
        big_h: usize,
        big_w: usize,
        small_c: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let small_h = big_h.div_ceil(stride);
        let small_w = big_w.div_ceil(stride);
        let pad =
            |big: usize, small: usize| ((small - 1) * stride + kernel).saturating_sub(big) / 2;
        Self {
            big_c,
            big_h,
            big_w,
            small_c,
            small_h,
            small_w,
            kernel,
            stride,
            pad_h: pad(big_h, small_h),
            pad_w: pad(big_w, small_w),
        }
    }

    pub fn big_len(&self) -> usize {
        self.big_c * self.big_h * self.big_w
    }

    pub fn small_len(&self) -> usize {
        self.small_c * self.small_h * self.small_w
    }

    /// Weights are stored `[small_c][big_c][k][k]` for both directions.
    pub fn weight_len(&self) -> usize {
        self.small_c * self.big_c * self.kernel * self.kernel
    }

    /// Visits every (small cell, big cell, weight) triple the geometry links.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        for o in 0..self.small_c {
            for i in 0..self.small_h {
                for j in 0..self.small_w {
                    let small_idx = (o * self.small_h + i) * self.small_w + j;
                    for c in 0..self.big_c {
                        for ki in 0..k {
                            let y = (i * self.stride + ki) as isize - self.pad_h as isize;
                            if y < 0 || y as usize >= self.big_h {
                                continue;
                            }
                            for kj in 0..k {
                                let x = (j * self.stride + kj) as isize - self.pad_w as isize;
                                if x < 0 || x as usize >= self.big_w {
                                    continue;
                                }
                                let big_idx =
                                    (c * self.big_h + y as usize) * self.big_w + x as usize;
                                let w_idx = ((o * self.big_c + c) * k + ki) * k + kj;
                                f(small_idx, big_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Strided convolution, big map to small map.
    pub fn conv_forward(&self, w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
        let plane = self.small_h * self.small_w;
        for (o, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[o]);
        }
        self.for_each_tap(|s, g, wi| out[s] += w[wi] * input[g]);
    }

    /// Gradients of [`ConvGeom::conv_forward`]; accumulates into `dw`, `db`
    /// and, when given, `dinput`.
    pub fn conv_backward(
        &self,
        w: &[f64],
        input: &[f64],
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        mut dinput: Option<&mut [f64]>,
    ) {
        let plane = self.small_h * self.small_w;
        for (o, chunk) in dout.chunks(plane).enumerate() {
            db[o] += chunk.iter().sum::<f64>();
        }
        self.for_each_tap(|s, g, wi| {
            dw[wi] += dout[s] * input[g];
            if let Some(di) = dinput.as_deref_mut() {
                di[g] += w[wi] * dout[s];
            }
        });
    }

    /// Transposed convolution, small map to big map.
    pub fn tconv_forward(&self, w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
        let plane = self.big_h * self.big_w;
        for (c, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[c]);
        }
        self.for_each_tap(|s, g, wi| out[g] += w[wi] * input[s]);
    }

    pub fn tconv_backward(
        &self,
        w: &[f64],
        input: &[f64],
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        mut dinput: Option<&mut [f64]>,
    ) {
        let plane = self.big_h * self.big_w;
        for (c, chunk) in dout.chunks(plane).enumerate() {
            db[c] += chunk.iter().sum::<f64>();
        }
        self.for_each_tap(|s, g, wi| {
            dw[wi] += dout[g] * input[s];
            if let Some(di) = dinput.as_deref_mut() {
                di[s] += w[wi] * dout[g];
            }
        });
    }
}

/// `out = W·input + b` with `W` stored `[out][in]`.
pub fn dense_forward(w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
    }
}

pub fn dense_backward(
    w: &[f64],
    input: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let n_in = input.len();
    for (o, &g) in dout.iter().enumerate() {
        db[o] += g;
        for (dwi, x) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
            *dwi += g * x;
        }
    }
    if let Some(di) = dinput {
        for (i, d) in di.iter_mut().enumerate() {
            *d += dout
                .iter()
                .enumerate()
                .map(|(o, g)| w[o * n_in + i] * g)
                .sum::<f64>();
        }
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes the gradient where the post-activation output was clipped.
pub fn relu_backward_inplace(activated: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
