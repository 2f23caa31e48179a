//! Brute-force validation of the analytic kernel.
//!
//! Two independent probes: Monte Carlo estimation of the Gaussian ReLU
//! expectations that the closed forms replace, and a finite-width GNN with
//! Gaussian weights whose empirical tangent kernel
//! `⟨∂f/∂θ(G), ∂f/∂θ(G')⟩` approaches the analytic value as the width
//! grows. Backpropagation is written by hand; gradients are cross-checked
//! against central finite differences in the test suites.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::OracleError;
use crate::graph::Graph;
use crate::kernel::{scaling_vector, ArchConfig};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Monte Carlo estimate of the two ReLU expectations, without the `c_σ`
/// factor.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    /// `E[σ(a)σ(b)]` and its standard error.
    pub e_sigma: f64,
    pub se_sigma: f64,
    /// `E[σ̇(a)σ̇(b)]` and its standard error.
    pub e_dot: f64,
    pub se_dot: f64,
    pub samples: usize,
}

/// Plain Monte Carlo averages of `σ(a)σ(b)` and `σ̇(a)σ̇(b)` over
/// `(a, b) ~ N(0, cov)`.
pub fn mc_relu_expectations(
    cov: [[f64; 2]; 2],
    samples: usize,
    seed: u64,
) -> Result<McEstimate, OracleError> {
    if samples == 0 {
        return Err(OracleError::Invalid("need at least one sample".into()));
    }
    let (a11, a12, a21, a22) = (cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
    if (a12 - a21).abs() > 1e-9 * (1.0 + a12.abs().max(a21.abs())) {
        return Err(OracleError::Invalid(format!(
            "covariance not symmetric: {a12} vs {a21}"
        )));
    }
    let half_trace = (a11 + a22) / 2.0;
    let disc = ((a11 - a22) / 2.0).powi(2) + a12 * a21;
    let min_eig = half_trace - disc.max(0.0).sqrt();
    if min_eig < -1e-10 {
        return Err(OracleError::NotPsd(min_eig));
    }

    // lower-triangular factor, tolerant of a semidefinite input
    let l11 = a11.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { a12 / l11 } else { 0.0 };
    let l22 = (a22 - l21 * l21).max(0.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let (mut sum_s, mut sq_s, mut sum_d, mut sq_d) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let z1: f64 = normal.sample(&mut rng);
        let z2: f64 = normal.sample(&mut rng);
        let a = l11 * z1;
        let b = l21 * z1 + l22 * z2;
        let ss = a.max(0.0) * b.max(0.0);
        let dd = if a >= 0.0 && b >= 0.0 { 1.0 } else { 0.0 };
        sum_s += ss;
        sq_s += ss * ss;
        sum_d += dd;
        sq_d += dd * dd;
    }
    let n = samples as f64;
    let mean_s = sum_s / n;
    let mean_d = sum_d / n;
    let var_s = (sq_s / n - mean_s * mean_s).max(0.0);
    let var_d = (sq_d / n - mean_d * mean_d).max(0.0);
    Ok(McEstimate {
        e_sigma: mean_s,
        se_sigma: (var_s / n).sqrt(),
        e_dot: mean_d,
        se_dot: (var_d / n).sqrt(),
        samples,
    })
}

/// A finite-width GNN at random Gaussian initialization.
///
/// Hidden layers compute `sqrt(c_σ/m) · relu(W · aggregated)` with `W`
/// entries i.i.d. standard normal; the scalar output is a linear readout
/// `v · Σ_u h_u` with standard-normal `v` (one readout per tapped block
/// when jumping knowledge is on). Under this parameterization the readout
/// gradient contributes the `+Σ` term of the kernel recursion, and the
/// empirical tangent kernel converges to the analytic one as `m → ∞`.
#[derive(Debug, Clone)]
pub struct FiniteGnn {
    arch: ArchConfig,
    width: usize,
    input_dim: usize,
    /// `num_blocks · fc_layers` matrices, block-major.
    weights: Vec<Array2<f64>>,
    /// One vector without jumping knowledge; `L + 1` vectors (input tap
    /// first) with it.
    readouts: Vec<Array1<f64>>,
}

impl FiniteGnn {
    /// Samples a network for `arch` with hidden width `m`.
    pub fn sample(arch: &ArchConfig, input_dim: usize, width: usize, seed: u64) -> Self {
        assert!(input_dim > 0 && width > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let mut draw_mat = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        };
        let mut weights = Vec::with_capacity(arch.num_blocks * arch.fc_layers);
        let mut prev = input_dim;
        for _ in 0..arch.num_blocks {
            for _ in 0..arch.fc_layers {
                weights.push(draw_mat(width, prev));
                prev = width;
            }
        }
        let mut rng2 = rng;
        let mut draw_vec =
            |len: usize| Array1::from_shape_simple_fn(len, || normal.sample(&mut rng2));
        let readouts = if arch.jumping_knowledge {
            let mut out = vec![draw_vec(input_dim)];
            out.extend((0..arch.num_blocks).map(|_| draw_vec(width)));
            out
        } else {
            vec![draw_vec(width)]
        };
        FiniteGnn {
            arch: arch.clone(),
            width,
            input_dim,
            weights,
            readouts,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn readouts(&self) -> &[Array1<f64>] {
        &self.readouts
    }

    /// Adds `delta` to one hidden weight; used by finite-difference checks.
    pub fn perturb_weight(&mut self, layer: usize, row: usize, col: usize, delta: f64) {
        self.weights[layer][[row, col]] += delta;
    }

    fn check_graph(&self, g: &Graph) -> Result<(), OracleError> {
        if g.feature_dim() != self.input_dim {
            return Err(OracleError::ShapeMismatch(format!(
                "graph feature dim {} vs network input dim {}",
                g.feature_dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Scalar network output `f(θ, G)`.
    pub fn forward(&self, g: &Graph) -> Result<f64, OracleError> {
        Ok(self.forward_pass(g)?.output)
    }

    fn forward_pass(&self, g: &Graph) -> Result<ForwardPass, OracleError> {
        self.check_graph(g)?;
        let scales = scaling_vector(g, self.arch.scaling)
            .map_err(|e| OracleError::Invalid(e.to_string()))?;
        let gain = (self.arch.c_sigma / self.width as f64).sqrt();

        let mut h = g.features().clone();
        let mut block_outputs: Vec<Array2<f64>> = Vec::new();
        if self.arch.jumping_knowledge {
            block_outputs.push(h.clone());
        }
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut masks = Vec::with_capacity(self.weights.len());
        let mut wi = 0;
        for _ in 0..self.arch.num_blocks {
            let mut b = aggregate_rows(&h, g, &scales);
            for _ in 0..self.arch.fc_layers {
                let z = b.dot(&self.weights[wi].t());
                let mask = z.mapv(|v| if v >= 0.0 { 1.0 } else { 0.0 });
                let out = z.mapv(|v| gain * v.max(0.0));
                layer_inputs.push(b);
                masks.push(mask);
                b = out;
                wi += 1;
            }
            h = b;
            if self.arch.jumping_knowledge {
                block_outputs.push(h.clone());
            }
        }
        let output = if self.arch.jumping_knowledge {
            block_outputs
                .iter()
                .zip(&self.readouts)
                .map(|(hb, v)| hb.sum_axis(ndarray::Axis(0)).dot(v))
                .sum()
        } else {
            h.sum_axis(ndarray::Axis(0)).dot(&self.readouts[0])
        };
        Ok(ForwardPass {
            output,
            layer_inputs,
            masks,
            block_outputs,
            final_hidden: h,
            scales,
        })
    }
}

struct ForwardPass {
    output: f64,
    /// Input matrix of each fully-connected layer (after aggregation or
    /// the previous layer).
    layer_inputs: Vec<Array2<f64>>,
    masks: Vec<Array2<f64>>,
    /// Tapped block outputs (jumping knowledge only; input tap first).
    block_outputs: Vec<Array2<f64>>,
    final_hidden: Array2<f64>,
    scales: Vec<f64>,
}

/// `out[u] = c_u Σ_{v ∈ N(u) ∪ {u}} rows[v]`.
fn aggregate_rows(rows: &Array2<f64>, g: &Graph, scales: &[f64]) -> Array2<f64> {
    let n = g.node_count();
    let mut out = Array2::zeros((n, rows.ncols()));
    for u in 0..n {
        let mut acc = rows.row(u).to_owned();
        for &v in g.neighbors(u) {
            acc += &rows.row(v as usize);
        }
        acc *= scales[u];
        out.row_mut(u).assign(&acc);
    }
    out
}

/// Transpose of [`aggregate_rows`]: scatters `c_u · grad[u]` back to every
/// `v ∈ N(u) ∪ {u}`.
fn aggregate_rows_transpose(grad: &Array2<f64>, g: &Graph, scales: &[f64]) -> Array2<f64> {
    let n = g.node_count();
    let mut out = Array2::zeros((n, grad.ncols()));
    for u in 0..n {
        let scaled = &grad.row(u) * scales[u];
        {
            let mut r = out.row_mut(u);
            r += &scaled;
        }
        for &v in g.neighbors(u) {
            let mut r = out.row_mut(v as usize);
            r += &scaled;
        }
    }
    out
}

/// Backward quantities needed for tangent-kernel inner products: for each
/// fully-connected layer the pre-activation gradient `∂f/∂Z` (so that
/// `∂f/∂W = dZᵀ · input`), plus the graph-level readout features.
struct BackwardPass {
    d_z: Vec<Array2<f64>>,
    readout_features: Vec<Array1<f64>>,
}

impl FiniteGnn {
    fn backward_pass(&self, g: &Graph, fwd: &ForwardPass) -> BackwardPass {
        let n = g.node_count();
        let gain = (self.arch.c_sigma / self.width as f64).sqrt();
        let layers = self.weights.len();
        let per_block = self.arch.fc_layers;

        let readout_features = if self.arch.jumping_knowledge {
            fwd.block_outputs
                .iter()
                .map(|hb| hb.sum_axis(ndarray::Axis(0)))
                .collect()
        } else {
            vec![fwd.final_hidden.sum_axis(ndarray::Axis(0))]
        };

        let tile = |v: &Array1<f64>| {
            let mut m = Array2::zeros((n, v.len()));
            for u in 0..n {
                m.row_mut(u).assign(v);
            }
            m
        };

        let mut d_z = vec![Array2::zeros((0, 0)); layers];
        let last_readout = self.readouts.last().expect("at least one readout");
        let mut d_h = tile(last_readout);
        for block in (0..self.arch.num_blocks).rev() {
            for r in (0..per_block).rev() {
                let li = block * per_block + r;
                let dz = &(&d_h * &fwd.masks[li]) * gain;
                let d_input = dz.dot(&self.weights[li]);
                d_z[li] = dz;
                d_h = d_input;
            }
            // back through the aggregation into the previous block's output
            d_h = aggregate_rows_transpose(&d_h, g, &fwd.scales);
            if self.arch.jumping_knowledge && block > 0 {
                d_h += &tile(&self.readouts[block]);
            }
        }
        BackwardPass {
            d_z,
            readout_features,
        }
    }

    /// Explicit parameter gradients `(∂f/∂W_l, ∂f/∂v_t)`; quadratic in the
    /// width, intended for small finite-difference checks.
    pub fn param_gradients(
        &self,
        g: &Graph,
    ) -> Result<(Vec<Array2<f64>>, Vec<Array1<f64>>), OracleError> {
        let fwd = self.forward_pass(g)?;
        let bwd = self.backward_pass(g, &fwd);
        let grads = bwd
            .d_z
            .iter()
            .zip(&fwd.layer_inputs)
            .map(|(dz, input)| dz.t().dot(input))
            .collect();
        Ok((grads, bwd.readout_features))
    }

    /// Inner product of the full parameter gradients at `g` and `g2`,
    /// computed without materializing per-parameter matrices.
    pub fn empirical_ntk(&self, g: &Graph, g2: &Graph) -> Result<f64, OracleError> {
        let fa = self.forward_pass(g)?;
        let fb = self.forward_pass(g2)?;
        let ba = self.backward_pass(g, &fa);
        let bb = self.backward_pass(g2, &fb);

        // readout gradients
        let mut total = 0.0;
        for (ra, rb) in ba.readout_features.iter().zip(&bb.readout_features) {
            total += ra.dot(rb);
        }
        // ⟨dZᵀA, dZ'ᵀB⟩_F = ⟨dZ dZ'ᵀ, A Bᵀ⟩_F, all n×n' matrices
        for li in 0..self.weights.len() {
            let m1 = ba.d_z[li].dot(&bb.d_z[li].t());
            let m2 = fa.layer_inputs[li].dot(&fb.layer_inputs[li].t());
            total += (&m1 * &m2).sum();
        }
        Ok(total)
    }
}

/// One row of a width-convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub width: usize,
    pub draws: usize,
    pub mean: f64,
    pub std: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

/// Mean and standard deviation of the empirical tangent kernel across
/// weight draws, per width, against the analytic kernel value.
/// Deterministic given `seed`; draws run independently.
pub fn convergence_study(
    g: &Graph,
    g2: &Graph,
    arch: &ArchConfig,
    widths: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>, OracleError> {
    if draws == 0 {
        return Err(OracleError::Invalid("need at least one draw".into()));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(OracleError::Invalid("widths must be strictly ascending".into()));
    }
    let analytic = crate::kernel::pair_kernel(g, g2, arch)
        .map_err(|e| OracleError::Invalid(e.to_string()))?;
    let input_dim = g.feature_dim();

    let mut rows = Vec::with_capacity(widths.len());
    for (wi, &width) in widths.iter().enumerate() {
        let draw_ids: Vec<usize> = (0..draws).collect();
        let run = |d: &usize| -> Result<f64, OracleError> {
            let gnn = FiniteGnn::sample(arch, input_dim, width, mix_seed(seed, wi as u64, *d as u64));
            gnn.empirical_ntk(g, g2)
        };
        #[cfg(feature = "parallel")]
        let vals: Result<Vec<f64>, OracleError> = draw_ids.par_iter().map(run).collect();
        #[cfg(not(feature = "parallel"))]
        let vals: Result<Vec<f64>, OracleError> = draw_ids.iter().map(run).collect();
        let vals = vals?;
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws as f64;
        rows.push(ConvergenceRow {
            width,
            draws,
            mean,
            std: var.sqrt(),
            analytic,
            rel_error: (mean - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}

/// CSV serialization: `width,draw_count,mean,std,analytic,rel_error`.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("width,draw_count,mean,std,analytic,rel_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.width, r.draws, r.mean, r.std, r.analytic, r.rel_error
        ));
    }
    out
}

/// splitmix64-style mixer for deriving independent per-draw seeds.
fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
