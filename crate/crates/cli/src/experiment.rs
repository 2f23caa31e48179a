//! Cross-validated hyperparameter grids over cached gram matrices.
//!
//! Protocol: stratified k-fold splits; for every architecture in the grid
//! the gram matrix is computed once (or loaded from the cache); per fold,
//! the classifier hyperparameter (C, or the regression ridge) is selected
//! by that fold's validation accuracy, and the selected accuracy is the
//! fold's score. Reports label this convention (`per-fold-val-selection`)
//! so tighter protocols can attribute differences.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gntk::classifier::{default_max_sweeps, fit_kernel_regression, fit_svm, predict};
use gntk::graph::{featurize, make_folds, parse_dataset, FeatureMode, LabeledDataset};
use gntk::kernel::{cache, gram_matrix, normalize_gram, ArchConfig, GramMatrix, Scaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Svm,
    Regression,
    Both,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svm" => Ok(ClassifierKind::Svm),
            "regression" => Ok(ClassifierKind::Regression),
            "both" => Ok(ClassifierKind::Both),
            other => Err(format!(
                "unknown classifier {other:?} (expected svm|regression|both)"
            )),
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl std::str::FromStr for GridSpec {
    type Err = String;
    /// Parses `COUNT:LO:HI`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected COUNT:LO:HI, got {s:?}"));
        }
        let count = parts[0].parse().map_err(|e| format!("bad count: {e}"))?;
        let lo = parts[1].parse().map_err(|e| format!("bad lo: {e}"))?;
        let hi = parts[2].parse().map_err(|e| format!("bad hi: {e}"))?;
        Ok(GridSpec { count, lo, hi })
    }
}

/// Geometric sequence from `lo` to `hi` inclusive with `count` points.
pub fn c_grid(count: usize, lo: f64, hi: f64) -> Result<Vec<f64>, String> {
    if count < 2 {
        return Err(format!("grid needs at least 2 points, got {count}"));
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(format!("invalid grid range [{lo}, {hi}]"));
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    let mut out = Vec::with_capacity(count);
    out.push(lo);
    for i in 1..count - 1 {
        out.push(lo * ratio.powi(i as i32));
    }
    out.push(hi);
    Ok(out)
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        c_grid(self.count, self.lo, self.hi)
    }
}

/// Full experiment specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub feature_mode: FeatureMode,
    pub blocks: Vec<usize>,
    pub fc_layers: Vec<usize>,
    pub scalings: Vec<Scaling>,
    pub jk: Vec<bool>,
    pub c_sigma: f64,
    pub classifier: ClassifierKind,
    pub c_grid: GridSpec,
    pub ridge_grid: GridSpec,
    pub folds: usize,
    pub seed: u64,
    pub normalize_gram: bool,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.blocks.is_empty()
            || self.fc_layers.is_empty()
            || self.scalings.is_empty()
            || self.jk.is_empty()
        {
            return Err("architecture grid must be non-empty".into());
        }
        if self.folds < 2 {
            return Err(format!("folds must be at least 2, got {}", self.folds));
        }
        self.c_grid.values()?;
        self.ridge_grid.values()?;
        Ok(())
    }

    fn arch_grid(&self) -> Vec<ArchConfig> {
        let mut out = Vec::new();
        for &l in &self.blocks {
            for &r in &self.fc_layers {
                for &s in &self.scalings {
                    for &jk in &self.jk {
                        if let Ok(a) = ArchConfig::new(l, r, s, jk, self.c_sigma) {
                            out.push(a);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Result of one (architecture, classifier) grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigResult {
    pub blocks: usize,
    pub fc_layers: usize,
    pub scaling: Scaling,
    pub jk: bool,
    pub classifier: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_fold_accuracy: Vec<f64>,
    /// Hyperparameter (C or ridge) selected on each fold.
    pub per_fold_hyper: Vec<f64>,
    pub wall_secs: f64,
    /// Populated instead of scores when the config failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub dataset: String,
    pub num_graphs: usize,
    pub num_classes: usize,
    pub folds: usize,
    pub seed: u64,
    pub normalized_gram: bool,
    /// Hyperparameter selection convention used for the fold scores.
    pub protocol: String,
    pub configs: Vec<ConfigResult>,
}

impl CvResult {
    /// Best non-failed config by mean accuracy.
    pub fn best(&self) -> Option<&ConfigResult> {
        self.configs
            .iter()
            .filter(|c| c.error.is_none())
            .max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy))
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Content-addressed cache path: dataset bytes, feature mode, and the
/// architecture fingerprint.
fn cache_path(
    dir: &std::path::Path,
    dataset_bytes: &[u8],
    mode: FeatureMode,
    arch: &ArchConfig,
) -> PathBuf {
    let mut h = Sha256::new();
    h.update(dataset_bytes);
    h.update(match mode {
        FeatureMode::Tags => b"tags",
        FeatureMode::Degrees => b"degs",
    });
    h.update(arch.fingerprint());
    let digest = h.finalize();
    let mut name = String::with_capacity(64);
    for b in digest.iter().take(16) {
        name.push_str(&format!("{b:02x}"));
    }
    dir.join(format!("{name}.gram"))
}

/// Computes the gram matrix for `arch`, going through the cache directory
/// when one is configured. A fingerprint mismatch or unreadable file is
/// treated as a miss and the matrix is recomputed.
pub fn cached_gram(
    dataset: &LabeledDataset,
    dataset_bytes: &[u8],
    mode: FeatureMode,
    arch: &ArchConfig,
    cache_dir: Option<&std::path::Path>,
    workers: usize,
) -> anyhow::Result<GramMatrix> {
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, dataset_bytes, mode, arch);
        if path.exists() {
            match cache::read_gram(&path, arch, dataset.name()) {
                Ok(g) if g.len() == dataset.len() => return Ok(g),
                _ => {} // stale or foreign file: recompute below
            }
        }
        let gram = gram_matrix(dataset, arch, workers)?;
        std::fs::create_dir_all(dir)?;
        cache::write_gram(&path, &gram)?;
        return Ok(gram);
    }
    Ok(gram_matrix(dataset, arch, workers)?)
}

struct FoldSplit {
    train: Vec<usize>,
    val: Vec<usize>,
}

fn splits(folds: &[Vec<usize>]) -> Vec<FoldSplit> {
    (0..folds.len())
        .map(|f| {
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect();
            train.sort_unstable();
            FoldSplit {
                train,
                val: folds[f].clone(),
            }
        })
        .collect()
}

/// Per-fold hyperparameter selection for one classifier on one gram.
/// Returns (per-fold accuracy, per-fold chosen hyperparameter).
fn cv_scores(
    gram: &GramMatrix,
    labels: &[usize],
    num_classes: usize,
    splits: &[FoldSplit],
    hyper_grid: &[f64],
    svm: bool,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    let run_fold = |split: &FoldSplit| -> Result<(f64, f64), String> {
        let k_train = gram.submatrix(&split.train, &split.train);
        let k_cross = gram.submatrix(&split.val, &split.train);
        let y_train: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
        let y_val: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
        let mut best = (-1.0, hyper_grid[0]);
        for &hyper in hyper_grid {
            let guesses = if svm {
                let max_sweeps = default_max_sweeps(split.train.len());
                let pred = fit_svm(&k_train, &y_train, num_classes, hyper, 1e-3, max_sweeps)
                    .map_err(|e| e.to_string())?;
                predict(&pred, &k_cross).map_err(|e| e.to_string())?
            } else {
                let pred = fit_kernel_regression(&k_train, &y_train, num_classes, hyper)
                    .map_err(|e| e.to_string())?;
                predict(&pred, &k_cross).map_err(|e| e.to_string())?
            };
            let hits = guesses
                .iter()
                .zip(&y_val)
                .filter(|(g, y)| g == y)
                .count();
            let acc = hits as f64 / y_val.len() as f64;
            if acc > best.0 {
                best = (acc, hyper);
            }
        }
        Ok(best)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<(f64, f64), String>> = {
        use rayon::prelude::*;
        splits.par_iter().map(run_fold).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(f64, f64), String>> = splits.iter().map(run_fold).collect();

    let mut accs = Vec::with_capacity(splits.len());
    let mut hypers = Vec::with_capacity(splits.len());
    for r in results {
        let (a, h) = r?;
        accs.push(a);
        hypers.push(h);
    }
    Ok((accs, hypers))
}

/// Runs the full experiment: every architecture in the grid, cached grams,
/// per-fold hyperparameter selection, one [`ConfigResult`] per
/// (architecture, classifier). Failed configs are recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<CvResult> {
    cfg.validate().map_err(anyhow::Error::msg)?;
    let dataset_bytes = std::fs::read(&cfg.dataset)?;
    let parsed = parse_dataset(&cfg.dataset)?;
    let dataset = featurize(&parsed, cfg.feature_mode)?;
    let folds = make_folds(&dataset, cfg.folds, cfg.seed)?;
    let splits = splits(&folds);
    let labels = dataset.labels().to_vec();
    let num_classes = dataset.num_classes();

    let c_values = cfg.c_grid.values().map_err(anyhow::Error::msg)?;
    let ridge_values = cfg.ridge_grid.values().map_err(anyhow::Error::msg)?;

    let mut configs = Vec::new();
    for arch in cfg.arch_grid() {
        let started = Instant::now();
        let gram = match cached_gram(
            &dataset,
            &dataset_bytes,
            cfg.feature_mode,
            &arch,
            cfg.cache_dir.as_deref(),
            cfg.workers,
        ) {
            Ok(g) => g,
            Err(e) => {
                configs.push(failed_config(&arch, "gram", e.to_string(), started));
                continue;
            }
        };
        let gram = if cfg.normalize_gram {
            match normalize_gram(&gram) {
                Ok(g) => g,
                Err(e) => {
                    configs.push(failed_config(&arch, "gram", e.to_string(), started));
                    continue;
                }
            }
        } else {
            gram
        };

        let gram_secs = started.elapsed().as_secs_f64();

        let mut jobs: Vec<(&str, &[f64], bool)> = Vec::new();
        if matches!(cfg.classifier, ClassifierKind::Svm | ClassifierKind::Both) {
            jobs.push(("svm", &c_values, true));
        }
        if matches!(
            cfg.classifier,
            ClassifierKind::Regression | ClassifierKind::Both
        ) {
            jobs.push(("regression", &ridge_values, false));
        }
        for (job_idx, (name, grid, is_svm)) in jobs.into_iter().enumerate() {
            let t0 = Instant::now();
            // the shared gram cost is attributed to the first classifier
            let base_secs = if job_idx == 0 { gram_secs } else { 0.0 };
            match cv_scores(&gram, &labels, num_classes, &splits, grid, is_svm) {
                Ok((accs, hypers)) => {
                    let (mean, std) = mean_std(&accs);
                    configs.push(ConfigResult {
                        blocks: arch.num_blocks,
                        fc_layers: arch.fc_layers,
                        scaling: arch.scaling,
                        jk: arch.jumping_knowledge,
                        classifier: name.to_string(),
                        mean_accuracy: mean,
                        std_accuracy: std,
                        per_fold_accuracy: accs,
                        per_fold_hyper: hypers,
                        wall_secs: base_secs + t0.elapsed().as_secs_f64(),
                        error: None,
                    });
                }
                Err(e) => configs.push(failed_config(&arch, name, e, started)),
            }
        }
    }

    Ok(CvResult {
        dataset: dataset.name().to_string(),
        num_graphs: dataset.len(),
        num_classes,
        folds: cfg.folds,
        seed: cfg.seed,
        normalized_gram: cfg.normalize_gram,
        protocol: "per-fold-val-selection".to_string(),
        configs,
    })
}

fn failed_config(
    arch: &ArchConfig,
    classifier: &str,
    error: String,
    started: Instant,
) -> ConfigResult {
    ConfigResult {
        blocks: arch.num_blocks,
        fc_layers: arch.fc_layers,
        scaling: arch.scaling,
        jk: arch.jumping_knowledge,
        classifier: classifier.to_string(),
        mean_accuracy: 0.0,
        std_accuracy: 0.0,
        per_fold_accuracy: Vec::new(),
        per_fold_hyper: Vec::new(),
        wall_secs: started.elapsed().as_secs_f64(),
        error: Some(error),
    }
}

/// Train/validation accuracy of a fixed predictor on full-dataset indices;
/// used by tests and the `cv` smoke paths.
pub fn accuracy_on(
    gram: &GramMatrix,
    labels: &[usize],
    num_classes: usize,
    train: &[usize],
    eval: &[usize],
    c: f64,
) -> anyhow::Result<f64> {
    let k_train = gram.submatrix(train, train);
    let k_cross = gram.submatrix(eval, train);
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let pred = fit_svm(
        &k_train,
        &y_train,
        num_classes,
        c,
        1e-3,
        default_max_sweeps(train.len()),
    )?;
    let guesses = predict(&pred, &k_cross)?;
    let hits = eval
        .iter()
        .zip(&guesses)
        .filter(|(&i, &g)| labels[i] == g)
        .count();
    Ok(hits as f64 / eval.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn c_grid_endpoints_and_ratio() {
        assert_eq!(c_grid(2, 0.01, 10000.0).unwrap(), vec![0.01, 10000.0]);
        let g = c_grid(4, 1.0, 1000.0).unwrap();
        for (got, want) in g.iter().zip([1.0, 10.0, 100.0, 1000.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        let g = c_grid(120, 1e-2, 1e4).unwrap();
        assert_eq!(g.len(), 120);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[119], 1e4);
        let want_ratio = 10f64.powf(6.0 / 119.0);
        for w in g.windows(2) {
            assert_relative_eq!(w[1] / w[0], want_ratio, max_relative = 1e-9);
        }
        assert!(c_grid(1, 0.1, 1.0).is_err());
        assert!(c_grid(3, 1.0, 0.5).is_err());
        assert!(c_grid(3, 0.0, 1.0).is_err());
    }

    #[test]
    fn grid_spec_parses() {
        let g: GridSpec = "120:0.01:10000".parse().unwrap();
        assert_eq!(g.count, 120);
        assert_relative_eq!(g.lo, 0.01);
        assert!( "1:2".parse::<GridSpec>().is_err());
        assert!("a:b:c".parse::<GridSpec>().is_err());
    }

    #[test]
    fn mean_std_two_point() {
        let (m, s) = mean_std(&[0.8, 1.0]);
        assert_relative_eq!(m, 0.9, max_relative = 1e-12);
        assert_relative_eq!(s, 0.1, max_relative = 1e-12);
    }
}
