//! Minimal 2D convolution layer with hand-written forward and reverse
//! passes, shared by the frozen feature extractor and the restoration
//! model. Zero padding, square kernels, stride 1 or 2; output spatial dims
//! are `ceil(dim / stride)`.

use crate::parallel;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv {
    pub out_ch: usize,
    pub in_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) struct ConvGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(out_ch: usize, in_ch: usize, ksize: usize, stride: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            ksize,
            stride,
            weights: vec![0.0; out_ch * in_ch * ksize * ksize],
            bias: vec![0.0; out_ch],
        }
    }

    /// Seeded Kaiming-uniform init (relu gain); biases zero. The gain keeps
    /// activation magnitudes roughly constant through stacked relu layers.
    pub fn seeded(out_ch: usize, in_ch: usize, ksize: usize, stride: usize, seed: u64, stream: u64) -> Self {
        let mut conv = Self::zeros(out_ch, in_ch, ksize, stride);
        let rng = CounterRng::new(seed, stream);
        let bound = (6.0 / (in_ch * ksize * ksize) as f64).sqrt();
        for (i, w) in conv.weights.iter_mut().enumerate() {
            *w = rng.range_f64(i as u64, -bound, bound);
        }
        conv
    }

    #[inline]
    fn widx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + c) * self.ksize + ky) * self.ksize + kx
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.channels, self.in_ch);
        if self.stride == 1 {
            return self.forward_stride1(x);
        }
        let (oh, ow) = self.out_dims(x.height, x.width);
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        let pad = (self.ksize / 2) as isize;
        let (h, w) = (x.height as isize, x.width as isize);
        let plane = oh * ow;
        parallel::for_each_chunk(&mut out.data, plane, |o, dst| {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[o];
                    for c in 0..self.in_ch {
                        for ky in 0..self.ksize {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            for kx in 0..self.ksize {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix < 0 || ix >= w {
                                    continue;
                                }
                                acc += self.weights[self.widx(o, c, ky, kx)]
                                    * x.get(c, iy as usize, ix as usize);
                            }
                        }
                    }
                    dst[oy * ow + ox] = acc;
                }
            }
        });
        out
    }

    /// Stride-1 fast path: one shifted-row AXPY per kernel tap, which the
    /// compiler vectorizes.
    fn forward_stride1(&self, x: &Tensor) -> Tensor {
        let (h, w) = (x.height, x.width);
        let mut out = Tensor::zeros(self.out_ch, h, w);
        let pad = (self.ksize / 2) as isize;
        let plane = h * w;
        parallel::for_each_chunk(&mut out.data, plane, |o, dst| {
            let b = self.bias[o];
            if b != 0.0 {
                for v in dst.iter_mut() {
                    *v = b;
                }
            }
            for c in 0..self.in_ch {
                let xplane = &x.data[c * plane..(c + 1) * plane];
                for ky in 0..self.ksize {
                    let dy = ky as isize - pad;
                    for kx in 0..self.ksize {
                        let dx = kx as isize - pad;
                        let wgt = self.weights[self.widx(o, c, ky, kx)];
                        if wgt == 0.0 {
                            continue;
                        }
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s0 = (x0 as isize + dx) as usize;
                            let s1 = (x1 as isize + dx) as usize;
                            let dst_row = &mut dst[y * w + x0..y * w + x1];
                            let src_row = &xplane[sy * w + s0..sy * w + s1];
                            for (ov, iv) in dst_row.iter_mut().zip(src_row) {
                                *ov += wgt * iv;
                            }
                        }
                    }
                }
            }
        });
        out
    }

    /// Gradient with respect to the input only (used by the frozen
    /// extractor, whose weights never move).
    pub fn backward_input(&self, gout: &Tensor, in_h: usize, in_w: usize) -> Tensor {
        if self.stride == 1 {
            return self.backward_input_stride1(gout, in_h, in_w);
        }
        let mut gin = Tensor::zeros(self.in_ch, in_h, in_w);
        let pad = (self.ksize / 2) as isize;
        let plane = in_h * in_w;
        parallel::for_each_chunk(&mut gin.data, plane, |c, dst| {
            for o in 0..self.out_ch {
                for oy in 0..gout.height {
                    for ox in 0..gout.width {
                        let g = gout.get(o, oy, ox);
                        if g == 0.0 {
                            continue;
                        }
                        for ky in 0..self.ksize {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..self.ksize {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                dst[iy as usize * in_w + ix as usize] +=
                                    self.weights[self.widx(o, c, ky, kx)] * g;
                            }
                        }
                    }
                }
            }
        });
        gin
    }

    /// Stride-1 input gradient: a correlation with the flipped kernel,
    /// expressed as shifted-row AXPYs like the forward fast path.
    fn backward_input_stride1(&self, gout: &Tensor, in_h: usize, in_w: usize) -> Tensor {
        let (h, w) = (in_h, in_w);
        let mut gin = Tensor::zeros(self.in_ch, h, w);
        let pad = (self.ksize / 2) as isize;
        let plane = h * w;
        let gplane = gout.height * gout.width;
        parallel::for_each_chunk(&mut gin.data, plane, |c, dst| {
            for o in 0..self.out_ch {
                let gsrc = &gout.data[o * gplane..(o + 1) * gplane];
                for ky in 0..self.ksize {
                    // gin[y + dy] accumulates from gout[y]: shift by -dy.
                    let dy = pad - ky as isize;
                    for kx in 0..self.ksize {
                        let dx = pad - kx as isize;
                        let wgt = self.weights[self.widx(o, c, ky, kx)];
                        if wgt == 0.0 {
                            continue;
                        }
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s0 = (x0 as isize + dx) as usize;
                            let s1 = (x1 as isize + dx) as usize;
                            let dst_row = &mut dst[y * w + x0..y * w + x1];
                            let src_row = &gsrc[sy * w + s0..sy * w + s1];
                            for (ov, iv) in dst_row.iter_mut().zip(src_row) {
                                *ov += wgt * iv;
                            }
                        }
                    }
                }
            }
        });
        gin
    }

    /// Full reverse pass: gradients for the input, weights, and biases.
    pub fn backward(&self, x: &Tensor, gout: &Tensor) -> ConvGrads {
        let gin = self.backward_input(gout, x.height, x.width);
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.out_ch];
        let pad = (self.ksize / 2) as isize;
        let per_out = self.in_ch * self.ksize * self.ksize;
        if self.stride == 1 {
            // Each tap's weight gradient is a dot product of shifted rows.
            let (h, w) = (x.height, x.width);
            let plane = h * w;
            parallel::for_each_chunk(&mut gw, per_out, |o, dst| {
                let gplane = &gout.data[o * plane..(o + 1) * plane];
                for c in 0..self.in_ch {
                    let xplane = &x.data[c * plane..(c + 1) * plane];
                    for ky in 0..self.ksize {
                        let dy = ky as isize - pad;
                        for kx in 0..self.ksize {
                            let dx = kx as isize - pad;
                            let y0 = (-dy).max(0) as usize;
                            let y1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                            if x0 >= x1 {
                                continue;
                            }
                            let mut acc = 0.0;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let s0 = (x0 as isize + dx) as usize;
                                let s1 = (x1 as isize + dx) as usize;
                                let grow = &gplane[y * w + x0..y * w + x1];
                                let xrow = &xplane[sy * w + s0..sy * w + s1];
                                for (g, v) in grow.iter().zip(xrow) {
                                    acc += g * v;
                                }
                            }
                            dst[(c * self.ksize + ky) * self.ksize + kx] = acc;
                        }
                    }
                }
            });
        } else {
            parallel::for_each_chunk(&mut gw, per_out, |o, dst| {
                for oy in 0..gout.height {
                    for ox in 0..gout.width {
                        let g = gout.get(o, oy, ox);
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..self.in_ch {
                            for ky in 0..self.ksize {
                                let iy = (oy * self.stride + ky) as isize - pad;
                                if iy < 0 || iy >= x.height as isize {
                                    continue;
                                }
                                for kx in 0..self.ksize {
                                    let ix = (ox * self.stride + kx) as isize - pad;
                                    if ix < 0 || ix >= x.width as isize {
                                        continue;
                                    }
                                    dst[(c * self.ksize + ky) * self.ksize + kx] +=
                                        g * x.get(c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                }
            });
        }
        for o in 0..self.out_ch {
            gb[o] = gout.plane(o).iter().sum();
        }
        ConvGrads {
            input: gin,
            weights: gw,
            bias: gb,
        }
    }
}

pub(crate) fn relu(z: &Tensor) -> Tensor {
    Tensor {
        channels: z.channels,
        height: z.height,
        width: z.width,
        data: z.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// `g * relu'(z)` elementwise; the subgradient at 0 is 0.
pub(crate) fn relu_backward(z: &Tensor, g: &Tensor) -> Tensor {
    Tensor {
        channels: z.channels,
        height: z.height,
        width: z.width,
        data: z
            .data
            .iter()
            .zip(&g.data)
            .map(|(&zv, &gv)| if zv > 0.0 { gv } else { 0.0 })
            .collect(),
    }
}
