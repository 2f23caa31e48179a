//! Kernel classifiers over precomputed gram matrices: exact (ridge)
//! kernel regression and a soft-margin C-SVM trained with SMO.
//!
//! Multiclass handling is one-vs-rest with argmax decoding; ties break to
//! the lowest class index.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Regression,
    Svm,
}

/// A fitted kernel predictor.
///
/// `coefficients[k]` is aligned with `support_indices`: the decision value
/// of class `k` on a test point `t` is
/// `Σ_s coefficients[k][s] · K(t, support_indices[s]) + bias[k]`.
/// For regression the coefficients are the ridge-regularized
/// `(Θ + ridge·I)⁻¹ Y` columns and every training point is a support.
/// For the SVM they are `α_i y_i` over the support vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelPredictor {
    pub kind: PredictorKind,
    pub num_classes: usize,
    pub support_indices: Vec<usize>,
    pub coefficients: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Effective ridge used by the regression solve.
    pub ridge: f64,
    /// SVM hyperparameters, if applicable.
    pub c: Option<f64>,
    pub tol: Option<f64>,
    /// False when SMO hit its sweep limit before meeting the KKT
    /// conditions; the predictor is the best iterate found.
    pub converged: bool,
}

impl KernelPredictor {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// One-hot label matrix `n × num_classes`.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), num_classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

fn cholesky_solve(
    gram: &Array2<f64>,
    targets: &Array2<f64>,
    ridge: f64,
) -> Result<Array2<f64>, SolveError> {
    let n = gram.nrows();
    if gram.ncols() != n || targets.nrows() != n {
        return Err(SolveError::ShapeMismatch(format!(
            "gram {:?} vs targets {:?}",
            gram.dim(),
            targets.dim()
        )));
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        gram[[i, j]] + if i == j { ridge } else { 0.0 }
    });
    let chol = m.cholesky().ok_or(SolveError::NotPositiveDefinite)?;
    let rhs = nalgebra::DMatrix::from_fn(n, targets.ncols(), |i, j| targets[[i, j]]);
    let sol = chol.solve(&rhs);
    Ok(Array2::from_shape_fn((n, targets.ncols()), |(i, j)| {
        sol[(i, j)]
    }))
}

/// Fits interpolating / ridge kernel regression: coefficients are
/// `(Θ + ridge·I)⁻¹ Y` per class, solved through a Cholesky factorization.
///
/// With `ridge = 0` and a factorization failure, one retry is made with the
/// fallback ridge `1e-8 · mean(diag)`; the ridge actually used is recorded
/// on the predictor.
pub fn fit_kernel_regression(
    gram_train: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    ridge: f64,
) -> Result<KernelPredictor, SolveError> {
    if ridge < 0.0 {
        return Err(SolveError::Invalid(format!("negative ridge {ridge}")));
    }
    if labels.len() != gram_train.nrows() {
        return Err(SolveError::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            gram_train.nrows()
        )));
    }
    let y = one_hot(labels, num_classes);
    let (coeffs, eff_ridge) = match cholesky_solve(gram_train, &y, ridge) {
        Ok(c) => (c, ridge),
        Err(SolveError::NotPositiveDefinite) if ridge == 0.0 => {
            let fallback = 1e-8 * gram_train.diag().mean().unwrap_or(1.0);
            (cholesky_solve(gram_train, &y, fallback)?, fallback)
        }
        Err(e) => return Err(e),
    };
    Ok(KernelPredictor {
        kind: PredictorKind::Regression,
        num_classes,
        support_indices: (0..gram_train.nrows()).collect(),
        coefficients: (0..num_classes)
            .map(|k| coeffs.column(k).to_vec())
            .collect(),
        bias: vec![0.0; num_classes],
        ridge: eff_ridge,
        c: None,
        tol: None,
        converged: true,
    })
}

/// Outcome of one binary SMO solve.
#[derive(Debug, Clone)]
pub struct BinarySvm {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub sweeps: usize,
}

/// Dual objective `Σ α_i − ½ Σ_{ij} α_i α_j y_i y_j K_ij`.
pub fn svm_dual_objective(gram: &Array2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let obj: f64 = alpha.iter().sum();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[[i, j]];
            }
        }
    }
    obj - 0.5 * quad
}

/// SMO for the binary soft-margin dual on a precomputed kernel.
///
/// Alternates full sweeps with sweeps over the unbounded multipliers
/// (working-set size 2, second index chosen by maximal |E_i − E_j|), keeps
/// an error cache, and stops when no multiplier moves in a full sweep or
/// after `max_sweeps`. Entirely deterministic: no randomized index choice.
pub fn fit_svm_binary(
    gram: &Array2<f64>,
    y: &[f64],
    c: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<BinarySvm, SolveError> {
    let n = y.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(SolveError::ShapeMismatch(format!(
            "gram {:?} for {n} labels",
            gram.dim()
        )));
    }
    if !(c > 0.0) {
        return Err(SolveError::Invalid(format!("C must be positive, got {c}")));
    }
    for (i, &yi) in y.iter().enumerate() {
        if yi != 1.0 && yi != -1.0 {
            return Err(SolveError::Invalid(format!(
                "label {i} is {yi}, expected +1/-1"
            )));
        }
    }

    let mut state = SmoState {
        gram,
        y,
        c,
        tol,
        alpha: vec![0.0; n],
        err: y.iter().map(|&yi| -yi).collect(),
        bias: 0.0,
    };

    let mut sweeps = 0;
    let mut examine_all = true;
    loop {
        let mut changed = 0usize;
        for i in 0..n {
            if !examine_all && !state.is_free(i) {
                continue;
            }
            if state.examine(i) {
                changed += 1;
            }
        }
        sweeps += 1;
        if examine_all {
            if changed == 0 {
                break; // full sweep found nothing to improve
            }
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
        if sweeps >= max_sweeps {
            break;
        }
    }

    let converged = (0..n).all(|i| !state.kkt_violated(i));
    Ok(BinarySvm {
        alpha: state.alpha,
        bias: state.bias,
        converged,
        sweeps,
    })
}

struct SmoState<'a> {
    gram: &'a Array2<f64>,
    y: &'a [f64],
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    err: Vec<f64>,
    bias: f64,
}

impl SmoState<'_> {
    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn kkt_violated(&self, i: usize) -> bool {
        let r = self.err[i] * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
    }

    fn examine(&mut self, i: usize) -> bool {
        if !self.kkt_violated(i) {
            return false;
        }
        let n = self.y.len();
        // second choice: maximal |E_i - E_j| over free multipliers
        let mut best = None;
        let mut best_gap = 0.0;
        for j in 0..n {
            if j != i && self.is_free(j) {
                let gap = (self.err[i] - self.err[j]).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(j);
                }
            }
        }
        if let Some(j) = best {
            if self.step(i, j) {
                return true;
            }
        }
        // fall back to scanning free then all, from i+1 cyclically
        for offset in 1..n {
            let j = (i + offset) % n;
            if j != i && self.is_free(j) && self.step(i, j) {
                return true;
            }
        }
        for offset in 1..n {
            let j = (i + offset) % n;
            if j != i && self.step(i, j) {
                return true;
            }
        }
        false
    }

    fn step(&mut self, i: usize, j: usize) -> bool {
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ai_old, aj_old) = (self.alpha[i], self.alpha[j]);
        let s = yi * yj;
        let (lo, hi) = if yi != yj {
            (
                (aj_old - ai_old).max(0.0),
                (self.c + aj_old - ai_old).min(self.c),
            )
        } else {
            (
                (ai_old + aj_old - self.c).max(0.0),
                (ai_old + aj_old).min(self.c),
            )
        };
        if lo >= hi {
            return false;
        }
        let (kii, kjj, kij) = (self.gram[[i, i]], self.gram[[j, j]], self.gram[[i, j]]);
        let eta = kii + kjj - 2.0 * kij;
        let ei = self.err[i];
        let ej = self.err[j];
        let mut aj = if eta > 0.0 {
            (aj_old + yj * (ei - ej) / eta).clamp(lo, hi)
        } else {
            // flat direction (possible for a PSD kernel with duplicated
            // rows): evaluate the objective at both box ends
            let f1 = yi * (ei + self.bias) - ai_old * kii - s * aj_old * kij;
            let f2 = yj * (ej + self.bias) - s * ai_old * kij - aj_old * kjj;
            let l1 = ai_old + s * (aj_old - lo);
            let h1 = ai_old + s * (aj_old - hi);
            let obj = |a1: f64, a2: f64| {
                a1 * f1 + a2 * f2 + 0.5 * a1 * a1 * kii + 0.5 * a2 * a2 * kjj + s * a1 * a2 * kij
            };
            let (lo_obj, hi_obj) = (obj(l1, lo), obj(h1, hi));
            if lo_obj < hi_obj - 1e-12 {
                lo
            } else if lo_obj > hi_obj + 1e-12 {
                hi
            } else {
                return false;
            }
        };
        if (aj - aj_old).abs() < 1e-12 * (aj + aj_old + 1e-12) {
            return false;
        }
        if aj < 1e-10 {
            aj = 0.0;
        } else if aj > self.c - 1e-10 * self.c {
            aj = self.c;
        }
        let ai = ai_old + s * (aj_old - aj);
        let (dai, daj) = (ai - ai_old, aj - aj_old);

        let b1 = self.bias - ei - yi * dai * kii - yj * daj * kij;
        let b2 = self.bias - ej - yi * dai * kij - yj * daj * kjj;
        let new_bias = if ai > 0.0 && ai < self.c {
            b1
        } else if aj > 0.0 && aj < self.c {
            b2
        } else {
            (b1 + b2) / 2.0
        };
        let db = new_bias - self.bias;

        for k in 0..self.y.len() {
            self.err[k] += yi * dai * self.gram[[i, k]] + yj * daj * self.gram[[j, k]] + db;
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        self.bias = new_bias;
        true
    }
}

/// Default SMO sweep budget: `10 · n`.
pub fn default_max_sweeps(n: usize) -> usize {
    10 * n.max(1)
}

/// Fits a one-vs-rest C-SVM. Binary problems are solved once and mirrored.
pub fn fit_svm(
    gram_train: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    c: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<KernelPredictor, SolveError> {
    let n = labels.len();
    if gram_train.nrows() != n {
        return Err(SolveError::ShapeMismatch(format!(
            "{} labels for {} rows",
            n,
            gram_train.nrows()
        )));
    }
    if num_classes < 2 {
        return Err(SolveError::Invalid("need at least two classes".into()));
    }
    let signed = |positive: usize| -> Vec<f64> {
        labels
            .iter()
            .map(|&l| if l == positive { 1.0 } else { -1.0 })
            .collect()
    };

    let mut per_class: Vec<(Vec<f64>, f64, bool)> = Vec::with_capacity(num_classes);
    if num_classes == 2 {
        let y = signed(1);
        let sol = fit_svm_binary(gram_train, &y, c, tol, max_sweeps)?;
        let coeff1: Vec<f64> = sol
            .alpha
            .iter()
            .zip(&y)
            .map(|(&a, &yi)| a * yi)
            .collect();
        let coeff0: Vec<f64> = coeff1.iter().map(|&v| -v).collect();
        per_class.push((coeff0, -sol.bias, sol.converged));
        per_class.push((coeff1, sol.bias, sol.converged));
    } else {
        for k in 0..num_classes {
            let y = signed(k);
            let sol = fit_svm_binary(gram_train, &y, c, tol, max_sweeps)?;
            let coeff: Vec<f64> = sol.alpha.iter().zip(&y).map(|(&a, &yi)| a * yi).collect();
            per_class.push((coeff, sol.bias, sol.converged));
        }
    }

    let support_indices: Vec<usize> = (0..n)
        .filter(|&i| per_class.iter().any(|(coeff, _, _)| coeff[i] != 0.0))
        .collect();
    let coefficients: Vec<Vec<f64>> = per_class
        .iter()
        .map(|(coeff, _, _)| support_indices.iter().map(|&i| coeff[i]).collect())
        .collect();
    Ok(KernelPredictor {
        kind: PredictorKind::Svm,
        num_classes,
        support_indices,
        coefficients,
        bias: per_class.iter().map(|&(_, b, _)| b).collect(),
        ridge: 0.0,
        c: Some(c),
        tol: Some(tol),
        converged: per_class.iter().all(|&(_, _, conv)| conv),
    })
}

/// Per-class decision values, `test × num_classes`.
pub fn decision_values(
    pred: &KernelPredictor,
    gram_cross: &Array2<f64>,
) -> Result<Array2<f64>, SolveError> {
    let t = gram_cross.nrows();
    let mut out = Array2::zeros((t, pred.num_classes));
    for (k, coeff) in pred.coefficients.iter().enumerate() {
        if coeff.len() != pred.support_indices.len() {
            return Err(SolveError::ShapeMismatch(
                "coefficients misaligned with support indices".into(),
            ));
        }
        for row in 0..t {
            let mut acc = pred.bias[k];
            for (s, &idx) in pred.support_indices.iter().enumerate() {
                if idx >= gram_cross.ncols() {
                    return Err(SolveError::ShapeMismatch(format!(
                        "support index {idx} outside cross-kernel width {}",
                        gram_cross.ncols()
                    )));
                }
                acc += coeff[s] * gram_cross[[row, idx]];
            }
            out[[row, k]] = acc;
        }
    }
    Ok(out)
}

/// Predicted class indices for a `test × train` cross-kernel block.
/// Ties break toward the lowest class index.
pub fn predict(pred: &KernelPredictor, gram_cross: &Array2<f64>) -> Result<Vec<usize>, SolveError> {
    let scores = decision_values(pred, gram_cross)?;
    Ok(scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}
