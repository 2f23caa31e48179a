//! Analytic graph neural tangent kernel.
//!
//! The kernel value for a graph pair is computed by a dynamic program that
//! mirrors the architecture of an infinitely wide GNN: per block, a
//! neighborhood aggregation of the covariance and kernel matrices, followed
//! by `R` arc-cosine transforms (the closed forms of the Gaussian ReLU
//! expectations), and finally a sum-pooling readout.
//!
//! Per-pair state is `O(n·n')`; the self-covariance diagonals each pair
//! needs are precomputed once per graph in a [`GraphProfile`].

pub mod cache;

use std::f64::consts::PI;

use ndarray::{Array1, Array2};

use crate::error::KernelError;
use crate::graph::{aggregated_feature, Graph, LabeledDataset};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Neighbor-aggregation scaling factor `c_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// `c_u = 1` (GIN-style sum aggregation).
    Sum,
    /// `c_u = 1 / (|N(u)| + 1)` (GCN-style averaging).
    Average,
    /// `c_u = ‖Σ_{v ∈ N(u) ∪ {u}} h_v‖₂⁻¹`, computed from the input
    /// features; every scaled aggregated input feature is unit-norm.
    Norm,
}

impl std::str::FromStr for Scaling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Scaling::Sum),
            "avg" | "average" => Ok(Scaling::Average),
            "norm" => Ok(Scaling::Norm),
            other => Err(format!("unknown scaling {other:?} (expected sum|avg|norm)")),
        }
    }
}

impl std::fmt::Display for Scaling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scaling::Sum => "sum",
            Scaling::Average => "avg",
            Scaling::Norm => "norm",
        })
    }
}

/// Architecture of the (infinitely wide) GNN the kernel corresponds to.
/// Fully determines the kernel function.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchConfig {
    /// Number of BLOCK operations (aggregation steps), `L ≥ 1`.
    pub num_blocks: usize,
    /// Fully-connected ReLU layers per block, `R ≥ 1`.
    pub fc_layers: usize,
    pub scaling: Scaling,
    /// Sum the per-block readouts instead of using only the last block.
    pub jumping_knowledge: bool,
    /// Activation scaling constant; 2 matches He initialization.
    pub c_sigma: f64,
}

impl ArchConfig {
    pub fn new(
        num_blocks: usize,
        fc_layers: usize,
        scaling: Scaling,
        jumping_knowledge: bool,
        c_sigma: f64,
    ) -> Result<Self, KernelError> {
        if num_blocks == 0 {
            return Err(KernelError::InvalidArch("num_blocks must be >= 1".into()));
        }
        if fc_layers == 0 {
            return Err(KernelError::InvalidArch("fc_layers must be >= 1".into()));
        }
        if !(c_sigma > 0.0) {
            return Err(KernelError::InvalidArch(format!(
                "c_sigma must be positive, got {c_sigma}"
            )));
        }
        Ok(ArchConfig {
            num_blocks,
            fc_layers,
            scaling,
            jumping_knowledge,
            c_sigma,
        })
    }

    /// Canonical text form; the cache fingerprint is a hash of this.
    pub fn canonical_string(&self) -> String {
        format!(
            "gntk-arch-v1;L={};R={};scale={};jk={};c_sigma_bits={:016x}",
            self.num_blocks,
            self.fc_layers,
            self.scaling,
            u8::from(self.jumping_knowledge),
            self.c_sigma.to_bits()
        )
    }

    /// 32-byte fingerprint of the canonical serialization.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.canonical_string().as_bytes());
        h.finalize().into()
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            num_blocks: 1,
            fc_layers: 1,
            scaling: Scaling::Sum,
            jumping_knowledge: false,
            c_sigma: 2.0,
        }
    }
}

/// Per-graph precomputation for one architecture: the self-inclusive
/// neighbor lists, the per-block aggregation scaling `c_u`, and the
/// diagonal of the self-covariance `Σ(G,G)` right after each block's
/// aggregation. The transform stages evolve those diagonals in closed form
/// (`d ← c_σ d / 2`), so only the post-aggregation diagonals are stored.
///
/// Sum and average scaling use one fixed `c_u` vector. Norm scaling
/// renormalizes at every block with the current layer's aggregated
/// representation norm (`c_u = ‖Σ_v h_v^{(ℓ-1)}‖⁻¹`, which in kernel terms
/// is the inverse root of the unscaled aggregated self-covariance
/// diagonal); at a single block this is exactly the input-feature norm,
/// and it is what makes the kernel invariant to a global rescaling of the
/// input features at any depth.
#[derive(Debug, Clone)]
pub struct GraphProfile {
    nbr_plus: Vec<Vec<u32>>,
    block_scales: Vec<Vec<f64>>,
    agg_diags: Vec<Array1<f64>>,
}

impl GraphProfile {
    /// Runs the self-covariance recursion for `g` once.
    pub fn compute(g: &Graph, arch: &ArchConfig) -> Result<Self, KernelError> {
        if g.feature_dim() == 0 {
            return Err(KernelError::NotFeaturized);
        }
        let n = g.node_count();
        let mut nbr_plus = Vec::with_capacity(n);
        for u in 0..n {
            let mut nb: Vec<u32> = Vec::with_capacity(g.degree(u) + 1);
            nb.extend_from_slice(g.neighbors(u));
            nb.push(u as u32);
            nb.sort_unstable();
            nbr_plus.push(nb);
        }
        let fixed_scale = match arch.scaling {
            Scaling::Sum => Some(vec![1.0; n]),
            Scaling::Average => Some((0..n).map(|u| 1.0 / nbr_plus[u].len() as f64).collect()),
            Scaling::Norm => None,
        };

        let feats = g.features();
        let mut sigma = feats.dot(&feats.t());
        let mut block_scales = Vec::with_capacity(arch.num_blocks);
        let mut agg_diags = Vec::with_capacity(arch.num_blocks);
        for _ in 0..arch.num_blocks {
            let scale = match &fixed_scale {
                Some(s) => s.clone(),
                None => norm_scales(&sigma, &nbr_plus)?,
            };
            sigma = aggregate_matrix_raw(&sigma, &nbr_plus, &scale, &nbr_plus, &scale);
            let diag = Array1::from_iter(sigma.diag().iter().copied());
            block_scales.push(scale);
            agg_diags.push(diag.clone());
            let mut d = diag;
            for _ in 0..arch.fc_layers {
                transform_self(&mut sigma, &d, arch.c_sigma);
                d *= arch.c_sigma / 2.0;
            }
        }
        Ok(GraphProfile {
            nbr_plus,
            block_scales,
            agg_diags,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nbr_plus.len()
    }

    /// `c_u` scaling vector applied at block `ℓ` (0-based).
    pub fn scales(&self, block: usize) -> &[f64] {
        &self.block_scales[block]
    }

    /// Self-inclusive neighborhood `N(u) ∪ {u}`, sorted.
    pub fn neighborhood(&self, u: usize) -> &[u32] {
        &self.nbr_plus[u]
    }
}

/// `c_u = (Σ_{v,v' ∈ N(u)∪{u}} sigma[v,v'])^{-1/2}`: the inverse norm of
/// the unscaled aggregated representation.
fn norm_scales(sigma: &Array2<f64>, nbr_plus: &[Vec<u32>]) -> Result<Vec<f64>, KernelError> {
    let mut out = Vec::with_capacity(nbr_plus.len());
    for (u, nbrs) in nbr_plus.iter().enumerate() {
        let mut acc = 0.0;
        for &v in nbrs {
            for &vp in nbrs {
                acc += sigma[[v as usize, vp as usize]];
            }
        }
        if acc <= 0.0 {
            return Err(KernelError::ZeroAggregatedFeature { node: u });
        }
        out.push(1.0 / acc.sqrt());
    }
    Ok(out)
}

/// The `c_u` vector of a featurized graph, from the input features (for
/// norm scaling this is the first-block vector `‖Σ_v h_v‖⁻¹`).
pub fn scaling_vector(g: &Graph, scaling: Scaling) -> Result<Vec<f64>, KernelError> {
    let n = g.node_count();
    match scaling {
        Scaling::Sum => Ok(vec![1.0; n]),
        Scaling::Average => Ok((0..n).map(|u| 1.0 / (g.degree(u) + 1) as f64).collect()),
        Scaling::Norm => {
            let mut out = Vec::with_capacity(n);
            for u in 0..n {
                let agg = aggregated_feature(g, u);
                let norm = agg.dot(&agg).sqrt();
                if norm <= 0.0 {
                    return Err(KernelError::ZeroAggregatedFeature { node: u });
                }
                out.push(1.0 / norm);
            }
            Ok(out)
        }
    }
}

/// State threaded through the dynamic program for one graph pair: the
/// covariance `Σ` and kernel `Θ` matrices plus the self-covariance
/// diagonals of both graphs at the current stage.
#[derive(Debug, Clone)]
pub struct PairState {
    pub sigma: Array2<f64>,
    pub theta: Array2<f64>,
    pub diag_g: Array1<f64>,
    pub diag_gp: Array1<f64>,
    blocks_done: usize,
}

impl PairState {
    /// Initial state: `Σ⁰ = Θ⁰ =` input covariance. The diagonals start
    /// as the squared feature norms and are replaced at each aggregation.
    pub fn initial(sigma0: Array2<f64>, diag_g: Array1<f64>, diag_gp: Array1<f64>) -> Self {
        PairState {
            theta: sigma0.clone(),
            sigma: sigma0,
            diag_g,
            diag_gp,
            blocks_done: 0,
        }
    }

    pub fn blocks_done(&self) -> usize {
        self.blocks_done
    }
}

/// Covariance matrix of the input features: entry `(u, u')` is
/// `h_u · h_{u'}`.
pub fn input_covariance(g: &Graph, g2: &Graph) -> Result<Array2<f64>, KernelError> {
    if g.feature_dim() == 0 || g2.feature_dim() == 0 {
        return Err(KernelError::NotFeaturized);
    }
    if g.feature_dim() != g2.feature_dim() {
        return Err(KernelError::DimensionMismatch(g.feature_dim(), g2.feature_dim()));
    }
    Ok(g.features().dot(&g2.features().t()))
}

/// Two-sided scaled neighborhood sum:
/// `out[u, u'] = c_u c_{u'} Σ_{v ∈ N(u) ∪ {u}} Σ_{v' ∈ N(u') ∪ {u'}} m[v, v']`.
fn aggregate_matrix_raw(
    m: &Array2<f64>,
    nbr_a: &[Vec<u32>],
    scale_a: &[f64],
    nbr_b: &[Vec<u32>],
    scale_b: &[f64],
) -> Array2<f64> {
    let (n_a, n_b) = (nbr_a.len(), nbr_b.len());
    debug_assert_eq!(m.dim(), (n_a, n_b));
    // rows of the first graph, then columns of the second
    let mut tmp = Array2::zeros((n_a, n_b));
    for u in 0..n_a {
        let mut row = tmp.row_mut(u);
        for &v in &nbr_a[u] {
            row += &m.row(v as usize);
        }
    }
    let mut out = Array2::zeros((n_a, n_b));
    for u in 0..n_a {
        let src = tmp.row(u);
        let src = src.as_slice().expect("row-major");
        let mut dst = out.row_mut(u);
        let ca = scale_a[u];
        for up in 0..n_b {
            let mut acc = 0.0;
            for &vp in &nbr_b[up] {
                acc += src[vp as usize];
            }
            dst[up] = ca * scale_b[up] * acc;
        }
    }
    out
}

/// One neighborhood-aggregation step of the pair DP. `Σ` and `Θ` are
/// aggregated over both graphs' self-inclusive neighborhoods with the
/// current block's scaling; the self-covariance diagonals are replaced by
/// the profiles' precomputed post-aggregation diagonals. The input state
/// is unmodified.
pub fn aggregate(state: &PairState, pa: &GraphProfile, pb: &GraphProfile) -> PairState {
    let block = state.blocks_done;
    debug_assert!(block < pa.agg_diags.len() && block < pb.agg_diags.len());
    let sa = &pa.block_scales[block];
    let sb = &pb.block_scales[block];
    PairState {
        sigma: aggregate_matrix_raw(&state.sigma, &pa.nbr_plus, sa, &pb.nbr_plus, sb),
        theta: aggregate_matrix_raw(&state.theta, &pa.nbr_plus, sa, &pb.nbr_plus, sb),
        diag_g: pa.agg_diags[block].clone(),
        diag_gp: pb.agg_diags[block].clone(),
        blocks_done: block + 1,
    }
}

/// ReLU expectations for unit variances and correlation `lambda`, without
/// the `c_σ` factor: `(E[σ(a)σ(b)], E[σ̇(a)σ̇(b)])`.
#[inline]
pub(crate) fn relu_moments(lambda: f64) -> (f64, f64) {
    let ac = lambda.acos();
    let e_dot = (PI - ac) / (2.0 * PI);
    let e_sigma = (lambda * (PI - ac) + (1.0 - lambda * lambda).max(0.0).sqrt()) / (2.0 * PI);
    (e_sigma, e_dot)
}

/// Entrywise arc-cosine transform of a pair state.
///
/// Per entry, with `s = sqrt(diag_g[u] · diag_gp[u'])` and
/// `λ = Σ_{uu'} / s` clamped to `[-1, 1]`:
/// `Σ ← c_σ s (λ(π − arccos λ) + sqrt(1 − λ²)) / (2π)`,
/// `Σ̇ = c_σ (π − arccos λ) / (2π)`, `Θ ← Θ Σ̇ + Σ`.
/// A zero diagonal entry takes the degenerate branch `λ = 0, s = 0`
/// (`Σ ← 0`, `Σ̇ = c_σ/4`), never a division by zero. The diagonals
/// themselves follow the exact `λ = 1` form `d ← c_σ d / 2`.
pub fn relu_transform(state: &PairState, arch: &ArchConfig) -> PairState {
    let c_sigma = arch.c_sigma;
    let (n_a, n_b) = state.sigma.dim();
    let mut sigma = state.sigma.clone();
    let mut theta = state.theta.clone();
    for u in 0..n_a {
        let du = state.diag_g[u];
        let mut srow = sigma.row_mut(u);
        let srow = srow.as_slice_mut().expect("row-major");
        let mut trow = theta.row_mut(u);
        let trow = trow.as_slice_mut().expect("row-major");
        for up in 0..n_b {
            let s = (du * state.diag_gp[up]).sqrt();
            let (new_sigma, sigma_dot) = if s > 0.0 {
                let lambda = (srow[up] / s).clamp(-1.0, 1.0);
                let (e_sigma, e_dot) = relu_moments(lambda);
                (c_sigma * s * e_sigma, c_sigma * e_dot)
            } else {
                (0.0, c_sigma * 0.25)
            };
            trow[up] = trow[up] * sigma_dot + new_sigma;
            srow[up] = new_sigma;
        }
    }
    PairState {
        sigma,
        theta,
        diag_g: &state.diag_g * (c_sigma / 2.0),
        diag_gp: &state.diag_gp * (c_sigma / 2.0),
        blocks_done: state.blocks_done,
    }
}

/// In-place transform of a self-covariance matrix with its own diagonal
/// `d`; the diagonal entries are rewritten with the exact `λ = 1` form so
/// they stay bit-identical to the closed-form diagonal recursion.
fn transform_self(sigma: &mut Array2<f64>, d: &Array1<f64>, c_sigma: f64) {
    let n = sigma.nrows();
    for u in 0..n {
        let du = d[u];
        let mut row = sigma.row_mut(u);
        let row = row.as_slice_mut().expect("row-major");
        for v in 0..n {
            if v == u {
                continue;
            }
            let s = (du * d[v]).sqrt();
            row[v] = if s > 0.0 {
                let lambda = (row[v] / s).clamp(-1.0, 1.0);
                c_sigma * s * relu_moments(lambda).0
            } else {
                0.0
            };
        }
        row[u] = c_sigma * du / 2.0;
    }
}

/// Result of one pair-kernel evaluation.
#[derive(Debug, Clone)]
pub struct PairKernelOutput {
    /// The kernel value `Θ(G, G')`.
    pub value: f64,
    /// Readout `Σ_{u,u'} [Θ^{(ℓ)}_{(R)}]_{uu'}` for `ℓ = 0..=L`. With
    /// jumping knowledge `value` is their sum, otherwise the last entry.
    pub per_block: Vec<f64>,
    /// Readout of the final covariance `Σ_{u,u'} [Σ^{(L)}_{(R)}]_{uu'}`
    /// (the infinite-width GP covariance of the graph representations).
    pub sigma_readout: f64,
}

/// Fixes an evaluation orientation for a pair so the kernel is exactly
/// symmetric: both argument orders run the identical float program.
fn pair_in_canonical_order<'a>(g: &'a Graph, g2: &'a Graph) -> (&'a Graph, &'a Graph, bool) {
    let key = |g: &Graph| {
        (
            g.node_count(),
            g.feature_dim(),
        )
    };
    match key(g).cmp(&key(g2)).then_with(|| {
        for u in 0..g.node_count() {
            let o = g.neighbors(u).cmp(g2.neighbors(u));
            if o != std::cmp::Ordering::Equal {
                return o;
            }
        }
        let fa = g.features().iter().map(|x| x.to_bits());
        let fb = g2.features().iter().map(|x| x.to_bits());
        fa.cmp(fb)
    }) {
        std::cmp::Ordering::Greater => (g2, g, true),
        _ => (g, g2, false),
    }
}

/// Analytic kernel value for a pair of graphs.
pub fn pair_kernel(g: &Graph, g2: &Graph, arch: &ArchConfig) -> Result<f64, KernelError> {
    pair_kernel_detailed(g, g2, arch).map(|o| o.value)
}

/// Like [`pair_kernel`] but also returns the per-block readouts.
pub fn pair_kernel_detailed(
    g: &Graph,
    g2: &Graph,
    arch: &ArchConfig,
) -> Result<PairKernelOutput, KernelError> {
    let (a, b, _) = pair_in_canonical_order(g, g2);
    let pa = GraphProfile::compute(a, arch)?;
    let pb = GraphProfile::compute(b, arch)?;
    pair_kernel_profiled(a, &pa, b, &pb, arch)
}

/// Pair kernel with precomputed profiles (the gram-matrix hot path).
pub fn pair_kernel_profiled(
    g: &Graph,
    pa: &GraphProfile,
    g2: &Graph,
    pb: &GraphProfile,
    arch: &ArchConfig,
) -> Result<PairKernelOutput, KernelError> {
    let (a, b, swapped) = pair_in_canonical_order(g, g2);
    let (pa, pb) = if swapped { (pb, pa) } else { (pa, pb) };

    let sigma0 = input_covariance(a, b)?;
    let sq_norm = |g: &Graph| {
        Array1::from_iter((0..g.node_count()).map(|u| g.feature_row(u).mapv(|x| x * x).sum()))
    };
    let mut state = PairState::initial(sigma0, sq_norm(a), sq_norm(b));

    let mut per_block = Vec::with_capacity(arch.num_blocks + 1);
    per_block.push(state.theta.sum());
    for _ in 0..arch.num_blocks {
        state = aggregate(&state, pa, pb);
        for _ in 0..arch.fc_layers {
            state = relu_transform(&state, arch);
        }
        per_block.push(state.theta.sum());
    }
    let value = if arch.jumping_knowledge {
        per_block.iter().sum()
    } else {
        *per_block.last().expect("num_blocks >= 1")
    };
    Ok(PairKernelOutput {
        value,
        per_block,
        sigma_readout: state.sigma.sum(),
    })
}

/// Symmetric kernel matrix over a dataset, with provenance metadata.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    values: Array2<f64>,
    arch: ArchConfig,
    dataset_name: String,
    normalized: bool,
}

impl GramMatrix {
    pub(crate) fn from_parts(
        values: Array2<f64>,
        arch: ArchConfig,
        dataset_name: String,
        normalized: bool,
    ) -> Self {
        GramMatrix {
            values,
            arch,
            dataset_name,
            normalized,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn trace(&self) -> f64 {
        self.values.diag().sum()
    }

    /// `(min, max)` eigenvalue, for PSD diagnostics.
    pub fn eigenvalue_bounds(&self) -> (f64, f64) {
        let n = self.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.values[[i, j]]);
        let eig = m.symmetric_eigen();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &e in eig.eigenvalues.iter() {
            lo = lo.min(e);
            hi = hi.max(e);
        }
        (lo, hi)
    }

    /// Submatrix for `rows × cols` index sets.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), cols.len()));
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out[[i, j]] = self.values[[r, c]];
            }
        }
        out
    }
}

/// Computes the full gram matrix: `values[i][j] = Θ(G_i, G_j)`, evaluated
/// for `i ≤ j` and mirrored. `workers = 0` uses the default thread count;
/// the result is identical for any worker count.
pub fn gram_matrix(
    dataset: &LabeledDataset,
    arch: &ArchConfig,
    workers: usize,
) -> Result<GramMatrix, KernelError> {
    #[cfg(feature = "parallel")]
    {
        if workers > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| KernelError::InvalidArch(format!("thread pool: {e}")))?;
            return pool.install(|| gram_matrix_impl(dataset, arch, true));
        }
        gram_matrix_impl(dataset, arch, true)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        gram_matrix_impl(dataset, arch, false)
    }
}

/// Single-threaded gram computation; always available, used as the
/// reference path in benchmarks and determinism tests.
pub fn gram_matrix_sequential(
    dataset: &LabeledDataset,
    arch: &ArchConfig,
) -> Result<GramMatrix, KernelError> {
    gram_matrix_impl(dataset, arch, false)
}

fn gram_matrix_impl(
    dataset: &LabeledDataset,
    arch: &ArchConfig,
    parallel: bool,
) -> Result<GramMatrix, KernelError> {
    if dataset.feature_dim() == 0 {
        return Err(KernelError::NotFeaturized);
    }
    let n = dataset.len();
    let graphs = &dataset.graphs;

    let profiles: Vec<GraphProfile> = run_map(
        parallel,
        &(0..n).collect::<Vec<_>>(),
        |&i| GraphProfile::compute(&graphs[i], arch),
    )
    .into_iter()
    .collect::<Result<_, _>>()?;

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let entries = run_map(parallel, &pairs, |&(i, j)| {
        pair_kernel_profiled(&graphs[i], &profiles[i], &graphs[j], &profiles[j], arch)
            .map(|o| o.value)
    });

    let mut values = Array2::zeros((n, n));
    for (&(i, j), v) in pairs.iter().zip(entries) {
        let v = v?;
        values[[i, j]] = v;
        values[[j, i]] = v;
    }
    Ok(GramMatrix {
        values,
        arch: arch.clone(),
        dataset_name: dataset.name().to_string(),
        normalized: false,
    })
}

#[cfg(feature = "parallel")]
fn run_map<T: Sync, U: Send>(
    parallel: bool,
    items: &[T],
    f: impl Fn(&T) -> U + Sync + Send,
) -> Vec<U> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_map<T, U>(_parallel: bool, items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Cosine normalization: `values'[i][j] = values[i][j] / sqrt(d_i d_j)`.
/// The diagonal becomes exactly 1, making the operation idempotent.
pub fn normalize_gram(m: &GramMatrix) -> Result<GramMatrix, KernelError> {
    let n = m.len();
    for i in 0..n {
        let d = m.values[[i, i]];
        if !(d > 0.0) {
            return Err(KernelError::NonPositiveDiagonal { index: i, value: d });
        }
    }
    let scale: Vec<f64> = (0..n).map(|i| m.values[[i, i]].sqrt()).collect();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            values[[i, j]] = if i == j {
                1.0
            } else {
                m.values[[i, j]] / (scale[i] * scale[j])
            };
        }
    }
    Ok(GramMatrix {
        values,
        arch: m.arch.clone(),
        dataset_name: m.dataset_name.clone(),
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{featurize, parse_dataset_str, FeatureMode};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn toy(text: &str) -> LabeledDataset {
        let ds = parse_dataset_str(text, "toy").unwrap();
        featurize(&ds, FeatureMode::Tags).unwrap()
    }

    fn arch(l: usize, r: usize, scaling: Scaling, jk: bool, cs: f64) -> ArchConfig {
        ArchConfig::new(l, r, scaling, jk, cs).unwrap()
    }

    #[test]
    fn input_covariance_one_hot() {
        // same tag -> 1, different tags -> 0
        let ds = toy("2\n2 0\n0 1 1\n1 1 0\n1 0\n0 0\n");
        let cov = input_covariance(&ds.graphs[0], &ds.graphs[1]).unwrap();
        assert_eq!(cov[[0, 0]], 1.0);
        assert_eq!(cov[[1, 0]], 0.0);
        // self covariance of feature rows is PSD (gram of X)
        let cov = input_covariance(&ds.graphs[0], &ds.graphs[0]).unwrap();
        assert_eq!(cov, ds.graphs[0].features().dot(&ds.graphs[0].features().t()));
    }

    #[test]
    fn relu_transform_closed_forms() {
        let a = arch(1, 1, Scaling::Sum, false, 2.0);
        let mk = |sigma: f64| {
            PairState::initial(
                Array2::from_elem((1, 1), sigma),
                Array1::ones(1),
                Array1::ones(1),
            )
        };
        // λ = 1, s = 1: Σ -> 1, Σ̇ = 1, Θ = Θ·1 + 1 = 2
        let st = relu_transform(&mk(1.0), &a);
        assert_relative_eq!(st.sigma[[0, 0]], 1.0, max_relative = 1e-12);
        assert_relative_eq!(st.theta[[0, 0]], 2.0, max_relative = 1e-12);
        // λ = 0: Σ -> 1/π, Σ̇ = 1/2
        let st = relu_transform(&mk(0.0), &a);
        assert_relative_eq!(st.sigma[[0, 0]], 1.0 / PI, max_relative = 1e-12);
        assert_relative_eq!(st.theta[[0, 0]], 1.0 / PI, max_relative = 1e-12);
        // λ = 0.5: Σ̇ = 2/3, Σ -> (0.5·(2π/3) + √3/2)/π
        let st = relu_transform(&mk(0.5), &a);
        let want_sigma = (0.5 * (2.0 * PI / 3.0) + 0.75f64.sqrt()) / PI;
        assert_relative_eq!(st.sigma[[0, 0]], want_sigma, max_relative = 1e-12);
        assert_abs_diff_eq!(st.sigma[[0, 0]], 0.60900, epsilon = 1e-5);
        let dot = (st.theta[[0, 0]] - st.sigma[[0, 0]]) / 0.5;
        assert_relative_eq!(dot, 2.0 / 3.0, max_relative = 1e-12);
        // degenerate diagonal: λ = 0 branch with s = 0
        let st0 = PairState::initial(
            Array2::from_elem((1, 1), 0.0),
            Array1::zeros(1),
            Array1::zeros(1),
        );
        let st = relu_transform(&st0, &a);
        assert_eq!(st.sigma[[0, 0]], 0.0);
        assert!(st.sigma[[0, 0]].is_finite() && st.theta[[0, 0]].is_finite());
    }

    #[test]
    fn aggregate_trivial_cases() {
        // single-node graphs: N(u) ∪ {u} = {u}, sum and average both keep
        // the state unchanged
        let ds = toy("2\n1 0\n0 0\n1 1\n0 0\n");
        for scaling in [Scaling::Sum, Scaling::Average] {
            let a = arch(1, 1, scaling, false, 2.0);
            let pa = GraphProfile::compute(&ds.graphs[0], &a).unwrap();
            let pb = GraphProfile::compute(&ds.graphs[1], &a).unwrap();
            let st = PairState::initial(
                Array2::from_elem((1, 1), 0.7),
                Array1::ones(1),
                Array1::ones(1),
            );
            let agg = aggregate(&st, &pa, &pb);
            assert_eq!(agg.sigma[[0, 0]], 0.7);
            assert_eq!(agg.theta[[0, 0]], 0.7);
        }
    }

    #[test]
    fn aggregate_edge_graph_identity() {
        // u–w edge, Σ = I, sum scaling: every aggregated entry is 2
        let ds = toy("1\n2 0\n0 1 1\n0 1 0\n");
        let a = arch(1, 1, Scaling::Sum, false, 2.0);
        let p = GraphProfile::compute(&ds.graphs[0], &a).unwrap();
        let st = PairState::initial(Array2::eye(2), Array1::ones(2), Array1::ones(2));
        let agg = aggregate(&st, &p, &p);
        for v in agg.sigma.iter() {
            assert_eq!(*v, 2.0);
        }
    }

    #[test]
    fn single_node_pair_kernel_hand_computed() {
        // identical one-hot features, L=1, R=1, sum, no JK, c_σ=2:
        // Σ⁰ = 1; transform gives Σ = 1, Σ̇ = 1; Θ = 1·1 + 1 = 2
        let ds = toy("2\n1 0\n0 0\n1 1\n0 0\n");
        let a = arch(1, 1, Scaling::Sum, false, 2.0);
        let v = pair_kernel(&ds.graphs[0], &ds.graphs[1], &a).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn pair_kernel_exactly_symmetric() {
        let ds = toy("2\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n4 1\n0 2 1 3\n1 2 0 2\n0 2 1 3\n1 2 0 2\n");
        for jk in [false, true] {
            let a = arch(2, 2, Scaling::Average, jk, 2.0);
            let ab = pair_kernel(&ds.graphs[0], &ds.graphs[1], &a).unwrap();
            let ba = pair_kernel(&ds.graphs[1], &ds.graphs[0], &a).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits(), "bitwise symmetry");
        }
    }

    #[test]
    fn jk_value_is_sum_of_per_block_readouts() {
        let ds = toy("2\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n2 1\n0 1 1\n1 1 0\n");
        let a = arch(3, 2, Scaling::Sum, true, 2.0);
        let out = pair_kernel_detailed(&ds.graphs[0], &ds.graphs[1], &a).unwrap();
        let sum: f64 = out.per_block.iter().sum();
        assert_eq!(out.value.to_bits(), sum.to_bits());
        assert_eq!(out.per_block.len(), a.num_blocks + 1);
    }

    #[test]
    fn gram_matches_pairwise_and_is_symmetric() {
        let ds = toy("3\n2 0\n0 1 1\n1 1 0\n3 1\n0 2 1 2\n1 1 0\n0 1 0\n1 0\n1 0\n");
        let a = arch(2, 1, Scaling::Average, false, 2.0);
        let gram = gram_matrix(&ds, &a, 0).unwrap();
        for i in 0..3 {
            assert!(gram.values()[[i, i]] > 0.0);
            for j in 0..3 {
                assert_eq!(
                    gram.values()[[i, j]].to_bits(),
                    gram.values()[[j, i]].to_bits()
                );
                let direct = pair_kernel(&ds.graphs[i], &ds.graphs[j], &a).unwrap();
                assert_eq!(gram.values()[[i, j]].to_bits(), direct.to_bits());
            }
        }
    }

    #[test]
    fn sequential_and_parallel_grams_identical() {
        let ds = toy("3\n2 0\n0 1 1\n1 1 0\n3 1\n0 2 1 2\n1 1 0\n0 1 0\n2 0\n1 1 1\n1 1 0\n");
        let a = arch(2, 2, Scaling::Sum, true, 2.0);
        let g1 = gram_matrix(&ds, &a, 2).unwrap();
        let g2 = gram_matrix_sequential(&ds, &a).unwrap();
        assert_eq!(g1.values(), g2.values());
    }

    #[test]
    fn normalize_gram_contract() {
        let values = ndarray::array![[4.0, 2.0], [2.0, 1.0]];
        let gram = GramMatrix::from_parts(values, ArchConfig::default(), "t".into(), false);
        let norm = normalize_gram(&gram).unwrap();
        // rank-1 case: all entries 1
        for v in norm.values().iter() {
            assert_eq!(*v, 1.0);
        }
        // idempotent
        let again = normalize_gram(&norm).unwrap();
        assert_eq!(norm.values(), again.values());
        // nonpositive diagonal rejected
        let bad = GramMatrix::from_parts(
            ndarray::array![[1.0, 0.0], [0.0, 0.0]],
            ArchConfig::default(),
            "t".into(),
            false,
        );
        assert!(normalize_gram(&bad).is_err());
    }

    #[test]
    fn norm_scaling_is_feature_scale_invariant() {
        let text = "2\n3 0\n0 1 1\n1 2 0 2\n0 1 1\n2 1\n1 1 1\n0 1 0\n";
        let ds = toy(text);
        let a = arch(2, 1, Scaling::Norm, false, 2.0);
        let base = pair_kernel(&ds.graphs[0], &ds.graphs[1], &a).unwrap();
        let mut scaled = ds.clone();
        for g in &mut scaled.graphs {
            let f = g.features() * 3.7;
            g.set_features(f);
        }
        let v = pair_kernel(&scaled.graphs[0], &scaled.graphs[1], &a).unwrap();
        assert_relative_eq!(v, base, max_relative = 1e-12);
    }

    #[test]
    fn zero_aggregated_feature_rejected_under_norm_scaling() {
        let mut ds = toy("1\n1 0\n0 0\n");
        ds.graphs[0].set_features(Array2::zeros((1, 2)));
        let a = arch(1, 1, Scaling::Norm, false, 2.0);
        assert!(matches!(
            GraphProfile::compute(&ds.graphs[0], &a),
            Err(KernelError::ZeroAggregatedFeature { node: 0 })
        ));
    }

    #[test]
    fn arch_fingerprint_distinguishes_configs() {
        let a = arch(2, 1, Scaling::Sum, false, 2.0);
        let b = arch(2, 1, Scaling::Sum, true, 2.0);
        let c = arch(2, 1, Scaling::Sum, false, 1.0);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint(), arch(2, 1, Scaling::Sum, false, 2.0).fingerprint());
    }
}
