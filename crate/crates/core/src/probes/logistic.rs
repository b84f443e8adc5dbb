use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ProbeError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// Inverse regularization strength; the penalty is `||w||^2 / 2`.
    pub c: f64,
    pub max_iters: usize,
    /// Stop when the objective gradient's max-norm falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iters: 2000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryLogistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinaryLogistic {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(x)).exp())
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.decision(x) > 0.0)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `C * sum_i log(1 + exp(-y_i (w.x_i + b))) + ||w||^2 / 2` with labels in
/// {0, 1}; the intercept is not penalized.
pub fn logistic_objective(x: &[Vec<f64>], y: &[u8], c: f64, w: &[f64], b: f64) -> f64 {
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let s = if yi == 1 { 1.0 } else { -1.0 };
            let m = b + w.iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            softplus(-s * m)
        })
        .sum();
    c * data + 0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

fn check_inputs(x: &[Vec<f64>], n_labels: usize) -> Result<usize, ProbeError> {
    if x.len() != n_labels {
        return Err(ProbeError::LengthMismatch {
            what: "labels",
            expected: x.len(),
            got: n_labels,
        });
    }
    let d = x.first().map_or(0, Vec::len);
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(ProbeError::LengthMismatch {
            what: "feature row",
            expected: d,
            got: r.len(),
        });
    }
    Ok(d)
}

/// L2-regularized binary logistic regression solved by damped Newton
/// iterations (Cholesky solves with backtracking line search), started
/// from zero.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], config: &LogisticConfig) -> Result<BinaryLogistic, ProbeError> {
    let d = check_inputs(x, y.len())?;
    fit_logistic_from(x, y, config, &vec![0.0; d], 0.0)
}

/// As [`fit_logistic`], started from `(w0, b0)`.
pub fn fit_logistic_from(
    x: &[Vec<f64>],
    y: &[u8],
    config: &LogisticConfig,
    w0: &[f64],
    b0: f64,
) -> Result<BinaryLogistic, ProbeError> {
    let d = check_inputs(x, y.len())?;
    if w0.len() != d {
        return Err(ProbeError::LengthMismatch {
            what: "initial weights",
            expected: d,
            got: w0.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(ProbeError::InvalidArgument(format!("label {bad} is not 0 or 1")));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(ProbeError::SingleClass);
    }
    if !(config.c > 0.0) {
        return Err(ProbeError::InvalidArgument(format!(
            "C = {} must be positive",
            config.c
        )));
    }
    let n = x.len();
    let c = config.c;
    // design matrix with a trailing intercept column
    let xm = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { x[i][j] });
    let yv = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
    let mut theta = DVector::from_iterator(d + 1, w0.iter().copied().chain([b0]));

    let objective = |t: &DVector<f64>| logistic_objective(x, y, c, &t.as_slice()[..d], t[d]);
    let mut f = objective(&theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        let margins = &xm * &theta;
        let p = margins.map(|m| 1.0 / (1.0 + (-m).exp()));
        let mut grad = xm.transpose() * (&p - &yv) * c;
        for j in 0..d {
            grad[j] += theta[j];
        }
        if grad.amax() < config.tol {
            converged = true;
            break;
        }
        let s = p.map(|v| v * (1.0 - v));
        let mut weighted = xm.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= s[i] * c;
        }
        let mut hess = xm.transpose() * weighted;
        for j in 0..d {
            hess[(j, j)] += 1.0;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                // saturated probabilities can leave the intercept direction flat
                hess[(d, d)] += 1e-10;
                hess.cholesky()
                    .map(|ch| ch.solve(&grad))
                    .unwrap_or_else(|| grad.clone())
            }
        };
        let slope = grad.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta - &step * alpha;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * alpha * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // no further decrease is representable
            converged = grad.amax() < config.tol.sqrt();
            break;
        }
    }
    Ok(BinaryLogistic {
        weights: theta.as_slice()[..d].to_vec(),
        intercept: theta[d],
        iterations,
        converged,
    })
}

/// One binary classifier per class, each separating it from the rest.
pub fn fit_logistic_ovr(
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    config: &LogisticConfig,
) -> Result<Vec<BinaryLogistic>, ProbeError> {
    check_inputs(x, labels.len())?;
    if n_classes < 2 {
        return Err(ProbeError::SingleClass);
    }
    (0..n_classes)
        .map(|k| {
            let y: Vec<u8> = labels.iter().map(|&l| u8::from(l == k)).collect();
            fit_logistic(x, &y, config)
        })
        .collect()
}
