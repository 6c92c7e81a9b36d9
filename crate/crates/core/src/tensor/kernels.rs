//! Raw loops behind the graph operations. Inputs are assumed validated.

use super::Real;

/// Geometry of a square-kernel sliding window over a `[C,H,W]` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Window {
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfolds `x` into a `[C·k·k, Ho·Wo]` column matrix; out-of-image taps are 0.
pub(crate) fn im2col<T: Real>(x: &[T], g: &Window) -> Vec<T> {
    let (k, s, p) = (g.kernel, g.stride as isize, g.pad as isize);
    let cols = g.cols();
    let mut out = vec![T::zero(); g.rows() * cols];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.out_height {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps into `x`.
pub(crate) fn col2im<T: Real>(cols_data: &[T], g: &Window, x: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride as isize, g.pad as isize);
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols_data[row * cols..(row + 1) * cols];
                for oy in 0..g.out_height {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping average pooling with a `wh × ww` window.
pub(crate) fn avg_pool<T: Real>(x: &[T], c: usize, h: usize, w: usize, wh: usize, ww: usize) -> Vec<T> {
    let (ho, wo) = (h / wh, w / ww);
    let scale = T::one() / T::from_usize(wh * ww).unwrap();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..wh {
                    let row = (ch * h + oy * wh + dy) * w + ox * ww;
                    for v in &x[row..row + ww] {
                        acc += *v;
                    }
                }
                out[(ch * ho + oy) * wo + ox] = acc * scale;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward<T: Real>(grad: &[T], c: usize, h: usize, w: usize, wh: usize, ww: usize) -> Vec<T> {
    let (ho, wo) = (h / wh, w / ww);
    let scale = T::one() / T::from_usize(wh * ww).unwrap();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + x] = grad[(ch * ho + y / wh) * wo + x / ww] * scale;
            }
        }
    }
    out
}

/// Per-channel "valid" correlation with a fixed `k × k` kernel.
pub(crate) fn depthwise_valid<T: Real>(x: &[T], c: usize, h: usize, w: usize, kernel: &[T], k: usize) -> Vec<T> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ky in 0..k {
                    let row = (ch * h + oy + ky) * w + ox;
                    let krow = &kernel[ky * k..(ky + 1) * k];
                    for (kv, xv) in krow.iter().zip(&x[row..row + k]) {
                        acc += *kv * *xv;
                    }
                }
                out[(ch * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

pub(crate) fn depthwise_valid_backward<T: Real>(
    grad: &[T],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    k: usize,
) -> Vec<T> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = grad[(ch * ho + oy) * wo + ox];
                for ky in 0..k {
                    let row = (ch * h + oy + ky) * w + ox;
                    let krow = &kernel[ky * k..(ky + 1) * k];
                    for (kv, xv) in krow.iter().zip(&mut out[row..row + k]) {
                        *xv += *kv * gv;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let g = Window {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
            out_height: 3,
            out_width: 2,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 40];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
