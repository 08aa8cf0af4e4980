use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::seed;

/// Channel-major (C, H, W) activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    /// RGB raster scaled to `[0, 1]`.
    pub fn from_rgb(raster: &image::RgbImage) -> Self {
        let (w, h) = (raster.width() as usize, raster.height() as usize);
        let mut t = Self::zeros(3, h, w);
        for (x, y, px) in raster.enumerate_pixels() {
            for c in 0..3 {
                t.data[c * h * w + y as usize * w + x as usize] = f64::from(px.0[c]) / 255.0;
            }
        }
        t
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Square-kernel convolution with zero "same" padding (`kernel / 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub id: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][in][ky][kx]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn he_init(id: String, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, seed: u64) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let mut rng = seed::rng_for(seed, &id);
        let weights = (0..out_channels * in_channels * kernel * kernel).map(|_| normal.sample(&mut rng)).collect();
        Self { id, in_channels, out_channels, kernel, stride, weights, bias: vec![0.0; out_channels] }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    fn out_len(&self, n: usize) -> usize {
        let pad = self.kernel / 2;
        (n + 2 * pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, input: &Tensor3) -> Tensor3 {
        assert_eq!(input.channels, self.in_channels, "{}: channel mismatch", self.id);
        let (ih, iw) = (input.height, input.width);
        let (oh, ow) = (self.out_len(ih), self.out_len(iw));
        let pad = self.kernel as isize / 2;
        let s = self.stride as isize;
        let k = self.kernel;
        let mut out = Tensor3::zeros(self.out_channels, oh, ow);
        // valid output range along one axis for kernel offset `kk`
        let valid = |kk: usize, n: usize, on: usize| -> (usize, usize) {
            let off = kk as isize - pad;
            let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
            let hi = ((n as isize - 1 - off).div_euclid(s) + 1).clamp(0, on as isize);
            (lo as usize, hi.max(lo) as usize)
        };
        for oc in 0..self.out_channels {
            let plane = &mut out.data[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = input.plane(ic);
                for ky in 0..k {
                    let (y_lo, y_hi) = valid(ky, ih, oh);
                    for kx in 0..k {
                        let w = self.weights[((oc * self.in_channels + ic) * k + ky) * k + kx];
                        let (x_lo, x_hi) = valid(kx, iw, ow);
                        for oy in y_lo..y_hi {
                            let iy = (oy as isize * s + ky as isize - pad) as usize;
                            let row = &src[iy * iw..(iy + 1) * iw];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate().take(x_hi).skip(x_lo) {
                                let ix = (ox as isize * s + kx as isize - pad) as usize;
                                *d += w * row[ix];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn relu_in_place(t: &mut Tensor3) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// 2×2 mean pooling, stride 2; an axis of length 1 is left as is.
pub fn avg_pool2(input: &Tensor3) -> Tensor3 {
    let (h, w) = (input.height, input.width);
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    let (ph, pw) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let mut out = Tensor3::zeros(input.channels, oh, ow);
    let norm = 1.0 / (ph * pw) as f64;
    for c in 0..input.channels {
        let src = input.plane(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..ph {
                    for dx in 0..pw {
                        acc += src[(oy * ph + dy) * w + ox * pw + dx];
                    }
                }
                out.data[(c * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

pub fn global_avg_pool(input: &Tensor3) -> Vec<f64> {
    let n = (input.height * input.width) as f64;
    (0..input.channels).map(|c| input.plane(c).iter().sum::<f64>() / n).collect()
}

/// Fully connected layer, `y = W x + b`, `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub id: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn he_init(id: String, inputs: usize, outputs: usize, seed: u64) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        let mut rng = seed::rng_for(seed, &id);
        let weights = (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect();
        Self { id, inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn glorot_init(id: String, inputs: usize, outputs: usize, seed: u64) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let mut rng = seed::rng_for(seed, &id);
        let weights = (0..inputs * outputs).map(|_| rng.sample(dist)).collect();
        Self { id, inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}
