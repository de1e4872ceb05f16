use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::logistic_neg;

/// One linear classifier per class, scored as `f_k(x) = w_k·x + b_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LinearSvm {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

const GRAD_TOL: f64 = 1e-6;
const MAX_NEWTON: usize = 200;

/// `½‖w‖² + (C/n) Σ_i max(0, 1 − y_i(w·x_i + b))²`, its gradient, and the
/// generalized Hessian, over `θ = (w, b)`. The bias is not regularized.
fn objective(x: &[Vec<f64>], y: &[f64], c: f64, theta: &DVector<f64>) -> f64 {
    let d = theta.len() - 1;
    let scale = c / x.len() as f64;
    let reg = 0.5 * theta.rows(0, d).norm_squared();
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let m = 1.0 - yi * (theta.rows(0, d).iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + theta[d]);
            if m > 0.0 {
                m * m
            } else {
                0.0
            }
        })
        .sum();
    reg + scale * loss
}

fn grad_hess(x: &[Vec<f64>], y: &[f64], c: f64, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = theta.len() - 1;
    let scale = c / x.len() as f64;
    let mut g = DVector::zeros(d + 1);
    let mut h = DMatrix::zeros(d + 1, d + 1);
    for k in 0..d {
        g[k] = theta[k];
        h[(k, k)] = 1.0;
    }
    let mut z = vec![0.0; d + 1];
    z[d] = 1.0;
    for (xi, &yi) in x.iter().zip(y) {
        z[..d].copy_from_slice(xi);
        let m = 1.0 - yi * z.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>();
        if m <= 0.0 {
            continue;
        }
        for a in 0..=d {
            g[a] -= 2.0 * scale * m * yi * z[a];
            for b in 0..=d {
                h[(a, b)] += 2.0 * scale * z[a] * z[b];
            }
        }
    }
    (g, h)
}

/// Binary squared-hinge SVM by Newton's method with a backtracking line
/// search, to gradient norm `1e-6`. Labels are `±1`.
pub fn fit_binary_svm(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
    let d = x.first().map(|r| r.len()).unwrap_or(0);
    let mut theta = DVector::zeros(d + 1);
    let mut f = objective(x, y, c, &theta);
    for _ in 0..MAX_NEWTON {
        let (g, mut h) = grad_hess(x, y, c, &theta);
        if g.norm() <= GRAD_TOL {
            return Ok((theta.rows(0, d).iter().copied().collect(), theta[d]));
        }
        // The bias direction is flat when no sample is inside the margin.
        h[(d, d)] += 1e-12;
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Numerical("SVM Hessian is not positive definite".into()))?
            .solve(&g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let fc = objective(x, y, c, &cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-12 {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    let (g, _) = grad_hess(x, y, c, &theta);
    if g.norm() <= GRAD_TOL * 10.0 {
        return Ok((theta.rows(0, d).iter().copied().collect(), theta[d]));
    }
    Err(Error::Numerical(format!("SVM did not converge (gradient norm {:.3e})", g.norm())))
}

fn check_features(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(|r| r.len()).ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    for (i, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(Error::Shape(format!("sample {i} has {} features, expected {d}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} has non-finite features")));
        }
    }
    Ok(d)
}

/// One-vs-rest squared-hinge SVMs for labels `0..n_classes`.
pub fn fit_svm(x: &[Vec<f64>], labels: &[usize], n_classes: usize, c: f64) -> Result<LinearSvm> {
    check_features(x)?;
    if labels.len() != x.len() {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), x.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("C={c} must be > 0")));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        counts[l] += 1;
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::InvalidInput("SVM needs at least two classes".into()));
    }
    if let Some(k) = counts.iter().position(|&n| n < 2) {
        return Err(Error::InvalidInput(format!("class {k} has fewer than two samples")));
    }
    let mut svm = LinearSvm {
        weights: Vec::with_capacity(n_classes),
        biases: Vec::with_capacity(n_classes),
    };
    for k in 0..n_classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let (w, b) = fit_binary_svm(x, &y, c)?;
        svm.weights.push(w);
        svm.biases.push(b);
    }
    Ok(svm)
}

/// Sigmoid calibration `P = 1/(1 + exp(E·f + F))` by maximum likelihood on
/// prior-smoothed targets, Newton iterations to mean gradient norm `1e-8`.
pub fn fit_calibration(scores: &[f64], positive: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite calibration score".into()));
    }
    let np = positive.iter().filter(|&&p| p).count() as f64;
    let nn = positive.len() as f64 - np;
    if np == 0.0 || nn == 0.0 {
        return Err(Error::InvalidInput(
            "calibration needs both positive and negative examples".into(),
        ));
    }
    let (tp, tn) = ((np + 1.0) / (np + 2.0), 1.0 / (nn + 2.0));
    let t: Vec<f64> = positive.iter().map(|&p| if p { tp } else { tn }).collect();
    // Negative log-likelihood with P = logistic(−(E f + F)).
    let nll = |e: f64, f0: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&s, &ti)| {
                let z = e * s + f0;
                // −[t ln P + (1−t) ln(1−P)], P = 1/(1+e^z)
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let n = scores.len() as f64;
    let (mut e, mut f0) = (0.0, ((nn + 1.0) / (np + 1.0)).ln());
    let mut val = nll(e, f0);
    for _ in 0..200 {
        let (mut g1, mut g2, mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &ti) in scores.iter().zip(&t) {
            let p = logistic_neg(e * s + f0);
            let d = ti - p;
            g1 += s * d;
            g2 += d;
            let w = p * (1.0 - p);
            h11 += s * s * w;
            h12 += s * w;
            h22 += w;
        }
        if g1.hypot(g2) <= 1e-8 * n {
            return Ok((e, f0));
        }
        let sigma = 1e-12;
        let (h11, h22) = (h11 + sigma, h22 + sigma);
        let det = h11 * h22 - h12 * h12;
        let de = -(h22 * g1 - h12 * g2) / det;
        let df = -(-h12 * g1 + h11 * g2) / det;
        let slope = g1 * de + g2 * df;
        let mut step = 1.0;
        loop {
            let (ne, nf) = (e + step * de, f0 + step * df);
            let nv = nll(ne, nf);
            if step < 1e-10 {
                // No representable descent left along the Newton direction.
                return Ok((e, f0));
            }
            if nv < val + 1e-4 * step * slope {
                e = ne;
                f0 = nf;
                val = nv;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::Numerical("calibration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_derivative_signs() {
        // Scores that strongly predict the positive class give E < 0.
        let scores: Vec<f64> = (-20..20).map(|i| i as f64 / 4.0).collect();
        let pos: Vec<bool> = scores.iter().map(|&s| s > 0.3).collect();
        let (e, _) = fit_calibration(&scores, &pos).unwrap();
        assert!(e < 0.0);
    }

    #[test]
    fn one_sided_labels_are_rejected() {
        assert!(fit_calibration(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(fit_svm(&x, &[0, 0], 2, 1.0).is_err());
    }
}
