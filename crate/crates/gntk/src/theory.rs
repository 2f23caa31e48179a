//! Generalization-bound quantities for the single-block norm-scaled kernel.
//!
//! This module pins its own kernel configuration: one block, one
//! fully-connected layer, norm scaling (so every scaled aggregated input
//! feature `h̄_u` is unit-norm), no jumping knowledge, and the `1/(2π)`
//! closed-form constant (`c_σ = 1`). The bound constants below are stated
//! for exactly this kernel and are checked numerically, not proved.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{KernelError, SolveError};
use crate::graph::{aggregated_feature, Graph, LabeledDataset};
use crate::kernel::{gram_matrix, ArchConfig, GramMatrix, Scaling};

/// The pinned kernel configuration the bounds apply to.
pub fn theory_arch() -> ArchConfig {
    ArchConfig::new(1, 1, Scaling::Norm, false, 1.0).expect("valid fixed arch")
}

/// Gram matrix under [`theory_arch`].
pub fn theory_kernel(dataset: &LabeledDataset) -> Result<GramMatrix, KernelError> {
    gram_matrix(dataset, &theory_arch(), 0)
}

/// Unit-norm scaled aggregated input features, one row per node:
/// `h̄_u = c_u Σ_{v ∈ N(u) ∪ {u}} h_v` with `c_u` the inverse norm.
pub fn scaled_aggregated_features(g: &Graph) -> Result<Array2<f64>, KernelError> {
    let n = g.node_count();
    let d = g.feature_dim();
    if d == 0 {
        return Err(KernelError::NotFeaturized);
    }
    let mut out = Array2::zeros((n, d));
    for u in 0..n {
        let agg = aggregated_feature(g, u);
        let norm = agg.dot(&agg).sqrt();
        if norm <= 0.0 {
            return Err(KernelError::ZeroAggregatedFeature { node: u });
        }
        out.row_mut(u).assign(&(&agg / norm));
    }
    Ok(out)
}

/// Label model: `y = α₁ Σ_u (h̄_uᵀ β₁) + Σ_l α_{2l} Σ_u (h̄_uᵀ β_{2l})^{2l}`,
/// with `pairs[l-1] = (α_{2l}, β_{2l})`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticLabelSpec {
    pub alpha_1: f64,
    pub beta_1: Array1<f64>,
    pub pairs: Vec<(f64, Array1<f64>)>,
}

impl SyntheticLabelSpec {
    /// The norm bound
    /// `B = 2|α₁|‖β₁‖₂ + Σ_l √(2π)(2l−1)|α_{2l}|‖β_{2l}‖₂^{2l}`.
    pub fn bound(&self) -> f64 {
        let mut b = 2.0 * self.alpha_1.abs() * norm2(&self.beta_1);
        for (l, (alpha, beta)) in self.pairs.iter().enumerate() {
            let power = 2 * (l + 1);
            b += (2.0 * std::f64::consts::PI).sqrt()
                * (power as f64 - 1.0)
                * alpha.abs()
                * norm2(beta).powi(power as i32);
        }
        b
    }
}

fn norm2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Evaluates the label model on every graph of the dataset.
pub fn synth_labels(
    dataset: &LabeledDataset,
    spec: &SyntheticLabelSpec,
) -> Result<Vec<f64>, KernelError> {
    let d = dataset.feature_dim();
    if spec.beta_1.len() != d || spec.pairs.iter().any(|(_, b)| b.len() != d) {
        return Err(KernelError::DimensionMismatch(
            spec.beta_1.len(),
            d,
        ));
    }
    let mut out = Vec::with_capacity(dataset.len());
    for g in &dataset.graphs {
        let hbar = scaled_aggregated_features(g)?;
        let mut y = 0.0;
        for u in 0..g.node_count() {
            let row = hbar.row(u);
            y += spec.alpha_1 * row.dot(&spec.beta_1);
            for (l, (alpha, beta)) in spec.pairs.iter().enumerate() {
                let power = 2 * (l + 1) as i32;
                y += alpha * row.dot(beta).powi(power);
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// `yᵀ (Θ + ridge·I)⁻¹ y` via a Cholesky solve; the inverse is never
/// formed explicitly.
pub fn quad_form(gram: &GramMatrix, y: &[f64], ridge: f64) -> Result<f64, SolveError> {
    let n = gram.len();
    if y.len() != n {
        return Err(SolveError::ShapeMismatch(format!(
            "{} labels for {n} graphs",
            y.len()
        )));
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        gram.values()[[i, j]] + if i == j { ridge } else { 0.0 }
    });
    let chol = m.cholesky().ok_or(SolveError::NotPositiveDefinite)?;
    let rhs = nalgebra::DVector::from_row_slice(y);
    let x = chol.solve(&rhs);
    Ok(rhs.dot(&x))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem2Report {
    /// `sqrt(yᵀ Θ⁻¹ y)`.
    pub lhs: f64,
    /// The label-model norm bound `B`.
    pub rhs: f64,
    pub holds: bool,
}

/// Checks `sqrt(yᵀ Θ⁻¹ y) ≤ B + 1e-8` for labels generated by `spec`
/// under the theory kernel.
pub fn check_theorem2(
    dataset: &LabeledDataset,
    spec: &SyntheticLabelSpec,
) -> Result<Theorem2Report, SolveError> {
    let gram = theory_kernel(dataset).map_err(|e| SolveError::Invalid(e.to_string()))?;
    let y = synth_labels(dataset, spec).map_err(|e| SolveError::Invalid(e.to_string()))?;
    let lhs = quad_form(&gram, &y, 0.0)?.max(0.0).sqrt();
    let rhs = spec.bound();
    Ok(Theorem2Report {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-8,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem3Report {
    pub trace: f64,
    /// `2 n V̄²`.
    pub bound: f64,
    pub v_bar: usize,
    pub n: usize,
    pub holds: bool,
}

/// Checks the trace bound `tr(Θ) ≤ 2 n V̄²` for a theory-kernel gram.
pub fn check_theorem3(gram: &GramMatrix, dataset: &LabeledDataset) -> Theorem3Report {
    let n = dataset.len();
    let v_bar = dataset.max_node_count();
    let trace = gram.trace();
    let bound = 2.0 * n as f64 * (v_bar as f64).powi(2);
    Theorem3Report {
        trace,
        bound,
        v_bar,
        n,
        holds: trace <= bound,
    }
}

/// The population-loss bound with explicit constants for a loss bounded in
/// `[0, 1]`: `2 sqrt(yᵀΘ⁻¹y · tr(Θ)) / n + 3 sqrt(log(2/δ) / (2n))`.
pub fn theorem1_bound(gram: &GramMatrix, y: &[f64], delta: f64) -> Result<f64, SolveError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SolveError::Invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let n = gram.len() as f64;
    let quad = quad_form(gram, y, 0.0)?.max(0.0);
    let trace = gram.trace();
    Ok(2.0 * (quad * trace).sqrt() / n + 3.0 * ((2.0 / delta).ln() / (2.0 * n)).sqrt())
}

/// Everything the `bound` report needs, serializable as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub quad_form: f64,
    pub trace: f64,
    pub n: usize,
    pub v_bar: usize,
    pub delta: f64,
    /// Theorem-1 style population-loss bound at `delta`.
    pub bound_value: f64,
    /// Present when a synthetic-label spec was supplied.
    pub theorem2_lhs: Option<f64>,
    pub theorem2_rhs: Option<f64>,
    /// `2 n V̄²`.
    pub trace_bound: f64,
    pub trace_bound_holds: bool,
}

/// Builds a [`BoundReport`] for labels `y` (and optionally the label-model
/// spec that generated them).
pub fn bound_report(
    dataset: &LabeledDataset,
    gram: &GramMatrix,
    y: &[f64],
    delta: f64,
    spec: Option<&SyntheticLabelSpec>,
) -> Result<BoundReport, SolveError> {
    let quad = quad_form(gram, y, 0.0)?;
    let t3 = check_theorem3(gram, dataset);
    let bound_value = theorem1_bound(gram, y, delta)?;
    let (t2_lhs, t2_rhs) = match spec {
        Some(s) => {
            let rep = check_theorem2(dataset, s)?;
            (Some(rep.lhs), Some(rep.rhs))
        }
        None => (None, None),
    };
    Ok(BoundReport {
        quad_form: quad,
        trace: t3.trace,
        n: dataset.len(),
        v_bar: t3.v_bar,
        delta,
        bound_value,
        theorem2_lhs: t2_lhs,
        theorem2_rhs: t2_rhs,
        trace_bound: t3.bound,
        trace_bound_holds: t3.holds,
    })
}

/// Coefficient of the arcsin power series,
/// `arcsin(x) = Σ_{l≥0} (2l-1)!!/(2l)!! · x^{2l+1}/(2l+1)`, reindexed for
/// the `Θ₁` expansion: term `l ≥ 1` of
/// `x·arcsin(x) = Σ_{l≥1} (2l-3)!!/(2l-2)!! · x^{2l}/(2l-1)`.
pub fn theta1_series_coefficient(l: usize) -> f64 {
    assert!(l >= 1);
    // (2l-3)!! / (2l-2)!! with the conventions (-1)!! = 0!! = 1
    let mut num = 1.0;
    let mut den = 1.0;
    let mut k = 2 * l as i64 - 3;
    while k >= 2 {
        num *= k as f64;
        k -= 2;
    }
    let mut k = 2 * l as i64 - 2;
    while k >= 2 {
        den *= k as f64;
        k -= 2;
    }
    num / den / (2.0 * l as f64 - 1.0)
}

/// `Θ₁` entry for unit-norm inputs with inner product `lambda`:
/// `λ(π − arccos λ)/(2π) = λ/4 + λ·arcsin(λ)/(2π)`.
pub fn theta1_closed_form(lambda: f64) -> f64 {
    lambda * (std::f64::consts::PI - lambda.acos()) / (2.0 * std::f64::consts::PI)
}

/// Power-series evaluation of [`theta1_closed_form`] truncated at
/// `terms`, with an explicit geometric tail bound returned alongside.
pub fn theta1_series(lambda: f64, terms: usize) -> (f64, f64) {
    let mut acc = lambda / 4.0;
    let inv_2pi = 1.0 / (2.0 * std::f64::consts::PI);
    for l in 1..=terms {
        acc += inv_2pi * theta1_series_coefficient(l) * lambda.powi(2 * l as i32);
    }
    // coefficients decrease, so the tail is dominated by a geometric series
    // with ratio λ²
    let lam2 = (lambda * lambda).min(1.0);
    let tail = if lam2 < 1.0 {
        inv_2pi * theta1_series_coefficient(terms + 1) * lam2.powi(terms as i32 + 1)
            / (1.0 - lam2)
    } else {
        f64::INFINITY
    };
    (acc, tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{featurize, parse_dataset_str, FeatureMode};
    use crate::kernel::pair_kernel;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;
    use std::f64::consts::PI;

    fn featurized(text: &str) -> LabeledDataset {
        let ds = parse_dataset_str(text, "theory").unwrap();
        featurize(&ds, FeatureMode::Tags).unwrap()
    }

    /// Two single-node graphs whose h̄ inner product is exactly `lambda`.
    fn single_node_pair(lambda: f64) -> LabeledDataset {
        let mut ds = featurized("2\n1 0\n0 0\n1 1\n0 0\n");
        ds.graphs[0].set_features(array![[1.0, 0.0]]);
        ds.graphs[1].set_features(array![[lambda, (1.0 - lambda * lambda).sqrt()]]);
        ds
    }

    fn theory_theta(lambda: f64) -> f64 {
        // Θ = Σ⁰·Σ̇ + Σ with the c_σ = 1 closed forms
        let sig_dot = (PI - lambda.acos()) / (2.0 * PI);
        let sig = (lambda * (PI - lambda.acos()) + (1.0 - lambda * lambda).max(0.0).sqrt())
            / (2.0 * PI);
        lambda * sig_dot + sig
    }

    #[test]
    fn unit_norm_aggregated_features() {
        let ds = featurized("1\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n");
        let hbar = scaled_aggregated_features(&ds.graphs[0]).unwrap();
        for u in 0..3 {
            assert_relative_eq!(hbar.row(u).dot(&hbar.row(u)), 1.0, max_relative = 1e-12);
        }
        // theory-kernel diagonal of Σ⁰ after aggregation is 1: the
        // single-node self kernel evaluates to exactly the λ=1 case
        let ds = single_node_pair(1.0);
        let v = pair_kernel(&ds.graphs[0], &ds.graphs[0], &theory_arch()).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn single_node_theta_closed_form() {
        for lambda in [-0.9, -0.3, 0.0, 0.25, 0.5, 0.99, 1.0] {
            let ds = single_node_pair(lambda);
            let got = pair_kernel(&ds.graphs[0], &ds.graphs[1], &theory_arch()).unwrap();
            assert_relative_eq!(got, theory_theta(lambda), max_relative = 1e-10);
        }
        // λ = 1 case evaluates to 1/2 + 1/2 = 1
        assert_relative_eq!(theory_theta(1.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn quad_form_diagonal_cases() {
        let mk = |values: Array2<f64>| {
            GramMatrix::from_parts(values, theory_arch(), "t".into(), false)
        };
        let gram = mk(Array2::eye(3));
        let y = [1.0, -2.0, 0.5];
        assert_relative_eq!(
            quad_form(&gram, &y, 0.0).unwrap(),
            y.iter().map(|v| v * v).sum::<f64>(),
            max_relative = 1e-12
        );
        let gram = mk(Array2::eye(3) * 2.0);
        assert_relative_eq!(
            quad_form(&gram, &[1.0, 1.0, 1.0], 0.0).unwrap(),
            1.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn quad_form_matches_explicit_inverse() {
        // random-ish PD 5×5 built as AᵀA + I
        let a = array![
            [0.8, -0.3, 0.5, 0.1, -0.7],
            [0.2, 0.9, -0.4, 0.3, 0.6],
            [-0.5, 0.1, 0.7, -0.2, 0.4],
            [0.3, -0.6, 0.2, 0.8, -0.1],
            [0.1, 0.4, -0.3, 0.5, 0.9],
        ];
        let m = a.t().dot(&a) + Array2::<f64>::eye(5);
        let y = [0.3, -1.2, 0.7, 2.0, -0.4];
        let gram = GramMatrix::from_parts(m.clone(), theory_arch(), "t".into(), false);
        let got = quad_form(&gram, &y, 0.0).unwrap();

        let na = nalgebra::DMatrix::from_fn(5, 5, |i, j| m[[i, j]]);
        let inv = na.try_inverse().unwrap();
        let yv = nalgebra::DVector::from_row_slice(&y);
        let want = yv.dot(&(&inv * &yv));
        assert_relative_eq!(got, want, max_relative = 1e-10);
    }

    #[test]
    fn quad_form_matches_min_norm_interpolant() {
        // explicit feature-space route: Θ = ΦᵀΦ, the minimum-norm w with
        // Φᵀw = y has ‖w‖² = yᵀΘ⁻¹y; w is computed independently via SVD
        let phi = array![
            [1.0, 0.2, -0.3],
            [0.0, 1.1, 0.4],
            [0.5, -0.2, 0.9],
            [-0.3, 0.4, 0.2],
        ]; // 4-dim features, 3 data points (columns)
        let theta = phi.t().dot(&phi);
        let y = [1.0, -0.5, 0.25];
        let gram = GramMatrix::from_parts(theta, theory_arch(), "t".into(), false);
        let quad = quad_form(&gram, &y, 0.0).unwrap();

        let phi_t = nalgebra::DMatrix::from_fn(3, 4, |i, j| phi[[j, i]]);
        let svd = phi_t.svd(true, true);
        let w = svd
            .solve(&nalgebra::DVector::from_row_slice(&y), 1e-12)
            .unwrap();
        assert_relative_eq!(quad, w.dot(&w), max_relative = 1e-9);
    }

    #[test]
    fn synth_labels_linear_and_degenerate_cases() {
        let ds = featurized("2\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n1 1\n0 0\n");
        let d = ds.feature_dim();
        let mut beta1 = Array1::zeros(d);
        beta1[0] = 1.0;
        let spec = SyntheticLabelSpec {
            alpha_1: 1.0,
            beta_1: beta1.clone(),
            pairs: vec![],
        };
        let y = synth_labels(&ds, &spec).unwrap();
        let expect: f64 = {
            let hbar = scaled_aggregated_features(&ds.graphs[0]).unwrap();
            (0..3).map(|u| hbar[[u, 0]]).sum()
        };
        assert_relative_eq!(y[0], expect, max_relative = 1e-12);

        let zero = SyntheticLabelSpec {
            alpha_1: 0.0,
            beta_1: Array1::zeros(d),
            pairs: vec![(0.0, Array1::zeros(d))],
        };
        assert_eq!(synth_labels(&ds, &zero).unwrap(), vec![0.0, 0.0]);

        // single-node graph, α₂ = 1, β₂ = h̄_u: y = ‖h̄_u‖⁴ = 1
        let single = ds.subset(&[1]);
        let hbar = scaled_aggregated_features(&single.graphs[0]).unwrap();
        let spec2 = SyntheticLabelSpec {
            alpha_1: 0.0,
            beta_1: Array1::zeros(d),
            pairs: vec![(1.0, hbar.row(0).to_owned())],
        };
        let y = synth_labels(&single, &spec2).unwrap();
        assert_relative_eq!(y[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn theorem2_bound_formula_and_linear_case() {
        let ds = featurized("3\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n2 1\n0 1 1\n1 1 0\n1 0\n1 0\n");
        let d = ds.feature_dim();
        let mut beta1 = Array1::zeros(d);
        beta1[1] = 1.0;
        let spec = SyntheticLabelSpec {
            alpha_1: 1.0,
            beta_1: beta1,
            pairs: vec![],
        };
        // rhs for a linear-only unit-β spec is exactly 2
        assert_abs_diff_eq!(spec.bound(), 2.0, epsilon = 1e-12);
        let rep = check_theorem2(&ds, &spec).unwrap();
        assert!(rep.holds, "lhs={} rhs={}", rep.lhs, rep.rhs);
    }

    #[test]
    fn theorem3_trace_bound() {
        let ds = featurized("2\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n5 1\n0 1 1\n1 2 0 2\n0 2 1 3\n1 2 2 4\n0 1 3\n");
        let gram = theory_kernel(&ds).unwrap();
        let rep = check_theorem3(&gram, &ds);
        assert_eq!(rep.v_bar, 5);
        assert_eq!(rep.bound, 2.0 * 2.0 * 25.0);
        assert!(rep.holds, "trace={} bound={}", rep.trace, rep.bound);
        // single unit-feature node: Θ(G,G) = 1 ≤ 2
        let single = featurized("1\n1 0\n0 0\n");
        let gram = theory_kernel(&single).unwrap();
        let rep = check_theorem3(&gram, &single);
        assert!(rep.trace <= 2.0 && rep.holds);
    }

    #[test]
    fn theorem1_bound_arithmetic() {
        let gram = GramMatrix::from_parts(Array2::eye(100), theory_arch(), "t".into(), false);
        let y = vec![0.0; 100];
        let got = theorem1_bound(&gram, &y, 0.5).unwrap();
        assert_abs_diff_eq!(got, 3.0 * (4.0f64.ln() / 200.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.2497669, epsilon = 1e-6);
        assert!(theorem1_bound(&gram, &y, 0.0).is_err());
        assert!(theorem1_bound(&gram, &y, 1.0).is_err());
    }

    #[test]
    fn theta1_series_matches_closed_form() {
        for lambda in [-0.8, -0.5, -0.1, 0.0, 0.3, 0.6, 0.8] {
            let (series, tail) = theta1_series(lambda, 50);
            let closed = theta1_closed_form(lambda);
            assert!(
                (series - closed).abs() <= tail + 1e-10,
                "λ={lambda}: series={series} closed={closed} tail={tail}"
            );
            assert!((series - closed).abs() <= 1e-10 + tail);
        }
        // the tail bound is honest near |λ| = 1 as well
        let (series, tail) = theta1_series(0.999, 50);
        assert!((series - theta1_closed_form(0.999)).abs() <= tail + 1e-10);
    }

    #[test]
    fn bound_report_serializes() {
        let ds = featurized("2\n2 0\n0 1 1\n1 1 0\n3 1\n0 1 1\n1 2 0 2\n0 1 1\n");
        let gram = theory_kernel(&ds).unwrap();
        let y = vec![1.0, -1.0];
        let rep = bound_report(&ds, &gram, &y, 0.1, None).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n, 2);
        assert!(back.trace_bound_holds);
        assert!(back.theorem2_rhs.is_none());
    }
}
