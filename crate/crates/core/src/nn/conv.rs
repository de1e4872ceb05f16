use rand::Rng;

use super::{he_uniform, join, relu_backward_inplace, relu_inplace, ParamSet};
use crate::kernels::{add_into, mm_nn, mm_nt, mm_tn};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Square-kernel 2D convolution over a `C × H × W` buffer, zero padding
/// `kernel / 2`. Weights are stored `out × (in·k·k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl<T> ConvCache<T> {
    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: he_uniform(&[out_ch, fan_in], fan_in, rng),
            bias: Tensor::zeros(&[out_ch]),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride as isize;
        let n = oh * ow;
        let mut cols = vec![T::zero(); self.in_ch * k * k * n];
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride as isize;
        let n = oh * ow;
        let mut x = vec![T::zero(); self.in_ch * h * w];
        for c in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                let idx = c * h * w + iy as usize * w + ix as usize;
                                x[idx] = x[idx] + cols[row + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, ConvCache<T>) {
        debug_assert_eq!(x.len(), self.in_ch * h * w);
        let (oh, ow) = self.output_hw(h, w);
        let n = oh * ow;
        let cols = self.im2col(x, h, w, oh, ow);
        let mut y = Vec::with_capacity(self.out_ch * n);
        for &b in self.bias.data() {
            y.extend(std::iter::repeat(b).take(n));
        }
        let kk = self.in_ch * self.kernel * self.kernel;
        mm_nn(self.weight.data(), &cols, &mut y, self.out_ch, kk, n);
        (
            y,
            ConvCache {
                cols,
                in_hw: (h, w),
                out_hw: (oh, ow),
            },
        )
    }

    pub fn backward(&self, cache: &ConvCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let (h, w) = cache.in_hw;
        let (oh, ow) = cache.out_hw;
        let n = oh * ow;
        let kk = self.in_ch * self.kernel * self.kernel;
        mm_nt(dy, &cache.cols, grad.weight.data_mut(), self.out_ch, n, kk);
        for (o, g) in grad.bias.data_mut().iter_mut().enumerate() {
            *g = *g + dy[o * n..(o + 1) * n].iter().copied().sum::<T>();
        }
        let mut dcols = vec![T::zero(); kk * n];
        mm_tn(self.weight.data(), dy, &mut dcols, kk, self.out_ch, n);
        self.col2im(&dcols, h, w, oh, ow)
    }
}

impl<T: Scalar> ParamSet<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// `relu(conv2(relu(conv1(x))) + skip(x))` where `skip` is a strided 1×1
/// projection whenever the shape changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub proj: Option<Conv2d<T>>,
}

#[derive(Clone, Debug)]
pub struct ResCache<T> {
    c1: ConvCache<T>,
    a1: Vec<T>,
    c2: ConvCache<T>,
    proj: Option<ConvCache<T>>,
    out: Vec<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(in_ch, out_ch, 3, stride, rng);
        let conv2 = Conv2d::new(out_ch, out_ch, 3, 1, rng);
        let proj = (in_ch != out_ch || stride != 1).then(|| Conv2d::new(in_ch, out_ch, 1, stride, rng));
        Self { conv1, conv2, proj }
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, (usize, usize), ResCache<T>) {
        let (mut a1, c1) = self.conv1.forward(x, h, w);
        relu_inplace(&mut a1);
        let (oh, ow) = c1.out_hw;
        let (mut out, c2) = self.conv2.forward(&a1, oh, ow);
        let proj = match &self.proj {
            Some(p) => {
                let (s, pc) = p.forward(x, h, w);
                add_into(&mut out, &s);
                Some(pc)
            }
            None => {
                add_into(&mut out, x);
                None
            }
        };
        relu_inplace(&mut out);
        (
            out.clone(),
            (oh, ow),
            ResCache {
                c1,
                a1,
                c2,
                proj,
                out,
            },
        )
    }

    pub fn backward(&self, cache: &ResCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let mut d = dy.to_vec();
        relu_backward_inplace(&mut d, &cache.out);
        let mut da1 = self.conv2.backward(&cache.c2, &d, &mut grad.conv2);
        relu_backward_inplace(&mut da1, &cache.a1);
        let mut dx = self.conv1.backward(&cache.c1, &da1, &mut grad.conv1);
        match (&self.proj, &cache.proj, grad.proj.as_mut()) {
            (Some(p), Some(pc), Some(gp)) => add_into(&mut dx, &p.backward(pc, &d, gp)),
            _ => add_into(&mut dx, &d),
        }
        dx
    }
}

impl<T: Scalar> ParamSet<T> for ResBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(p) = &self.proj {
            p.visit(&join(prefix, "proj"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join(prefix, "proj"), f);
        }
    }
}

/// Adaptive average pooling `C × H × W → C × oh × ow` with bins
/// `[⌊i·H/oh⌋, ⌈(i+1)·H/oh⌉)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdaptiveAvgPool {
    pub out_h: usize,
    pub out_w: usize,
}

impl AdaptiveAvgPool {
    fn bins(n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
        (0..n_out)
            .map(|i| ((i * n_in) / n_out, ((i + 1) * n_in).div_ceil(n_out)))
            .collect()
    }

    pub fn forward<T: Scalar>(&self, x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
        if (h, w) == (self.out_h, self.out_w) {
            return x.to_vec();
        }
        let by = Self::bins(h, self.out_h);
        let bx = Self::bins(w, self.out_w);
        let mut y = Vec::with_capacity(c * self.out_h * self.out_w);
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for &(y0, y1) in &by {
                for &(x0, x1) in &bx {
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc = acc + plane[yy * w + xx];
                        }
                    }
                    y.push(acc / T::from_usize_lossy((y1 - y0) * (x1 - x0)));
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(&self, dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
        if (h, w) == (self.out_h, self.out_w) {
            return dy.to_vec();
        }
        let by = Self::bins(h, self.out_h);
        let bx = Self::bins(w, self.out_w);
        let mut dx = vec![T::zero(); c * h * w];
        let mut k = 0;
        for ch in 0..c {
            for &(y0, y1) in &by {
                for &(x0, x1) in &bx {
                    let g = dy[k] / T::from_usize_lossy((y1 - y0) * (x1 - x0));
                    k += 1;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            let idx = ch * h * w + yy * w + xx;
                            dx[idx] = dx[idx] + g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Stack of stride-2 residual stages followed by adaptive pooling to a
/// fixed output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnEncoder<T> {
    pub blocks: Vec<ResBlock<T>>,
    pub in_ch: usize,
    pub pool: AdaptiveAvgPool,
}

#[derive(Clone, Debug)]
pub struct CnnCache<T> {
    blocks: Vec<(ResCache<T>, (usize, usize))>,
    last: (usize, usize, usize),
}

impl<T: Scalar> CnnEncoder<T> {
    pub fn new<R: Rng>(in_ch: usize, stages: &[usize], out_grid: usize, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(stages.len());
        let mut c = in_ch;
        for &out in stages {
            blocks.push(ResBlock::new(c, out, 2, rng));
            c = out;
        }
        Self {
            blocks,
            in_ch,
            pool: AdaptiveAvgPool {
                out_h: out_grid,
                out_w: out_grid,
            },
        }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map(|b| b.conv1.out_ch).unwrap_or(self.in_ch)
    }

    /// Spatial size after the strided stages, before pooling.
    pub fn pre_pool_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.blocks
            .iter()
            .fold((h, w), |(h, w), b| b.conv1.output_hw(h, w))
    }

    /// Returns the pooled `C × g × g` feature map.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, CnnCache<T>) {
        let mut cur = x.to_vec();
        let (mut ch, mut cw) = (h, w);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, hw, cache) = b.forward(&cur, ch, cw);
            caches.push((cache, (ch, cw)));
            cur = out;
            (ch, cw) = hw;
        }
        let c = self.out_channels();
        let y = self.pool.forward(&cur, c, ch, cw);
        (
            y,
            CnnCache {
                blocks: caches,
                last: (c, ch, cw),
            },
        )
    }

    pub fn backward(&self, cache: &CnnCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let (c, h, w) = cache.last;
        let mut d = self.pool.backward(dy, c, h, w);
        for ((b, gb), (bc, _)) in self
            .blocks
            .iter()
            .zip(grad.blocks.iter_mut())
            .zip(cache.blocks.iter())
            .rev()
        {
            d = b.backward(bc, &d, gb);
        }
        d
    }
}

impl<T: Scalar> ParamSet<T> for CnnEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("stage{i}")), f);
        }
    }
}
