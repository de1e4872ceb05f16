use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Column-averaged attention, its token grid, and the grid upscaled to
/// image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap<T> {
    /// `Ā_j = (1/N) Σ_i A_ij`
    pub mean_attention: Vec<T>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub target_h: usize,
    pub target_w: usize,
    /// Bilinear upscale of the `grid_h × grid_w` grid, row-major.
    pub upscaled: Vec<T>,
}

impl<T: Scalar> SaliencyMap<T> {
    /// The token grid `S̄`; tokens are flattened row-major.
    pub fn grid(&self) -> &[T] {
        &self.mean_attention
    }
}

/// Builds a saliency map from an `N × N` row-stochastic attention matrix
/// over an `h × w` token grid.
pub fn saliency_from_attention<T: Scalar>(
    attention: &[T],
    h: usize,
    w: usize,
    target: (usize, usize),
) -> Result<SaliencyMap<T>> {
    let n = h * w;
    if n == 0 || attention.len() != n * n {
        return Err(shape_err(format!(
            "attention has {} entries, expected ({h}·{w})² = {}",
            attention.len(),
            n * n
        )));
    }
    let inv = T::one() / T::from_usize_lossy(n);
    let mut mean = vec![T::zero(); n];
    for row in attention.chunks(n) {
        for (m, &a) in mean.iter_mut().zip(row) {
            *m = *m + a;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv);
    let upscaled = bilinear_upscale(&mean, h, w, target.0, target.1);
    Ok(SaliencyMap {
        mean_attention: mean,
        grid_h: h,
        grid_w: w,
        target_h: target.0,
        target_w: target.1,
        upscaled,
    })
}

/// Half-pixel-centre bilinear resampling with edge clamping.
pub fn bilinear_upscale<T: Scalar>(src: &[T], h: usize, w: usize, th: usize, tw: usize) -> Vec<T> {
    let coord = |i: usize, from: usize, to: usize| {
        let x = ((i as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, (from - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(from - 1);
        (i0, i1, T::lit(x - i0 as f64))
    };
    let mut out = Vec::with_capacity(th * tw);
    for r in 0..th {
        let (r0, r1, fr) = coord(r, h, th);
        for c in 0..tw {
            let (c0, c1, fc) = coord(c, w, tw);
            let top = src[r0 * w + c0] * (T::one() - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (T::one() - fc) + src[r1 * w + c1] * fc;
            out.push(top * (T::one() - fr) + bot * fr);
        }
    }
    out
}
