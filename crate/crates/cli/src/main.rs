use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gntk::graph::{featurize, parse_dataset, FeatureMode};
use gntk::kernel::{cache, normalize_gram, ArchConfig, Scaling};
use gntk::oracle::{convergence_csv, convergence_study, mc_relu_expectations};
use gntk::theory::{bound_report, theory_kernel, BoundReport};
use gntk_cli::experiment::{
    cached_gram, run_experiment, ClassifierKind, ExperimentConfig, GridSpec,
};
use gntk_cli::report::{render, Format};

#[derive(Parser)]
#[command(
    name = "gntk",
    about = "Graph neural tangent kernels: gram matrices, cross-validated classification, oracle and bound checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct ArchArgs {
    /// Number of BLOCK operations (aggregation steps).
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Fully-connected ReLU layers per block.
    #[arg(long, default_value_t = 1)]
    mlp_layers: usize,
    /// Neighbor aggregation scaling: sum | avg | norm.
    #[arg(long, default_value = "sum")]
    scale: Scaling,
    /// Sum readouts over all blocks (jumping knowledge).
    #[arg(long)]
    jk: bool,
    /// Activation scaling constant.
    #[arg(long, default_value_t = 2.0)]
    c_sigma: f64,
}

impl ArchArgs {
    fn build(&self) -> anyhow::Result<ArchConfig> {
        Ok(ArchConfig::new(
            self.blocks,
            self.mlp_layers,
            self.scale,
            self.jk,
            self.c_sigma,
        )?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or load from cache) a gram matrix and write it as a binary
    /// cache file.
    Gram {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "tags")]
        feature_mode: FeatureMode,
        #[command(flatten)]
        arch: ArchArgs,
        /// Cosine-normalize before writing the summary (the cached file
        /// stays raw).
        #[arg(long)]
        normalize_gram: bool,
        /// Reuse/populate cached gram matrices in this directory.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Output file for the binary gram cache.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated hyperparameter grid (the experiment driver).
    Cv {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "tags")]
        feature_mode: FeatureMode,
        /// Comma-separated list of block counts.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        blocks: Vec<usize>,
        /// Comma-separated list of per-block MLP depths.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        mlp_layers: Vec<usize>,
        /// Comma-separated scalings (sum | avg | norm).
        #[arg(long, value_delimiter = ',', default_value = "sum")]
        scale: Vec<Scaling>,
        /// Comma-separated jumping-knowledge values (true | false).
        #[arg(long, value_delimiter = ',', default_value = "false")]
        jk: Vec<bool>,
        #[arg(long, default_value_t = 2.0)]
        c_sigma: f64,
        /// svm | regression | both.
        #[arg(long, default_value = "svm")]
        classifier: ClassifierKind,
        /// SVM C grid as COUNT:LO:HI (log-spaced inclusive).
        #[arg(long, default_value = "120:0.01:10000")]
        c_grid: GridSpec,
        /// Regression ridge grid as COUNT:LO:HI.
        #[arg(long, default_value = "7:1e-10:0.01")]
        ridge_grid: GridSpec,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cosine-normalize gram matrices before classification.
        #[arg(long)]
        normalize_gram: bool,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// json | csv | table.
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Width-convergence study of the finite-width empirical tangent
    /// kernel against the analytic value (CSV output).
    Oracle {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "tags")]
        feature_mode: FeatureMode,
        /// Index of the first graph.
        #[arg(long, default_value_t = 0)]
        graph_a: usize,
        /// Index of the second graph.
        #[arg(long, default_value_t = 1)]
        graph_b: usize,
        #[command(flatten)]
        arch: ArchArgs,
        /// Ascending hidden widths.
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generalization-bound report for the single-block norm-scaled
    /// kernel (one row per one-vs-rest class labeling).
    Bound {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "tags")]
        feature_mode: FeatureMode,
        /// Confidence parameter of the population-loss bound.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// json | table.
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Monte Carlo check of the closed-form ReLU expectations.
    Mc {
        /// Covariance entries a11,a12,a22.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.0,1.0")]
        cov: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scaling constant applied to the closed forms for comparison.
        #[arg(long, default_value_t = 1.0)]
        c_sigma: f64,
    },
}

fn write_or_print(out: Option<&PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("configuring worker pool")?;
    }

    match cli.command {
        Command::Gram {
            dataset,
            feature_mode,
            arch,
            normalize_gram: normalize,
            cache_dir,
            out,
        } => {
            let arch = arch.build()?;
            let bytes = std::fs::read(&dataset)?;
            let ds = featurize(&parse_dataset(&dataset)?, feature_mode)?;
            let started = std::time::Instant::now();
            let gram = cached_gram(&ds, &bytes, feature_mode, &arch, cache_dir.as_deref(), 0)?;
            let elapsed = started.elapsed().as_secs_f64();
            if let Some(path) = &out {
                cache::write_gram(path, &gram)?;
            }
            let shown = if normalize {
                normalize_gram(&gram)?
            } else {
                gram
            };
            let n = shown.len();
            println!(
                "dataset {}  graphs {}  dim {}  trace {:.6e}  [{:.2}s]{}",
                shown.dataset_name(),
                n,
                ds.feature_dim(),
                shown.trace(),
                elapsed,
                out.as_ref()
                    .map(|p| format!("  -> {}", p.display()))
                    .unwrap_or_default()
            );
            Ok(())
        }
        Command::Cv {
            dataset,
            feature_mode,
            blocks,
            mlp_layers,
            scale,
            jk,
            c_sigma,
            classifier,
            c_grid,
            ridge_grid,
            folds,
            seed,
            normalize_gram,
            cache_dir,
            out,
            format,
        } => {
            let cfg = ExperimentConfig {
                dataset,
                feature_mode,
                blocks,
                fc_layers: mlp_layers,
                scalings: scale,
                jk,
                c_sigma,
                classifier,
                c_grid,
                ridge_grid,
                folds,
                seed,
                normalize_gram,
                cache_dir,
                workers: 0,
            };
            let result = run_experiment(&cfg)?;
            write_or_print(out.as_ref(), &render(&result, format))
        }
        Command::Oracle {
            dataset,
            feature_mode,
            graph_a,
            graph_b,
            arch,
            widths,
            draws,
            seed,
            out,
        } => {
            let arch = arch.build()?;
            let ds = featurize(&parse_dataset(&dataset)?, feature_mode)?;
            let get = |i: usize| {
                ds.graphs
                    .get(i)
                    .ok_or_else(|| anyhow::anyhow!("graph index {i} out of range ({} graphs)", ds.len()))
            };
            let rows = convergence_study(get(graph_a)?, get(graph_b)?, &arch, &widths, draws, seed)?;
            write_or_print(out.as_ref(), &convergence_csv(&rows))
        }
        Command::Bound {
            dataset,
            feature_mode,
            delta,
            out,
            format,
        } => {
            let ds = featurize(&parse_dataset(&dataset)?, feature_mode)?;
            let gram = theory_kernel(&ds)?;
            let mut reports: Vec<(usize, BoundReport)> = Vec::new();
            for class in 0..ds.num_classes() {
                let y: Vec<f64> = ds
                    .labels()
                    .iter()
                    .map(|&l| if l == class { 1.0 } else { -1.0 })
                    .collect();
                reports.push((class, bound_report(&ds, &gram, &y, delta, None)?));
            }
            let content = match format.as_str() {
                "json" => {
                    serde_json::to_string_pretty(
                        &reports.iter().map(|(_, r)| r).collect::<Vec<_>>(),
                    )? + "\n"
                }
                _ => {
                    let mut t = format!(
                        "dataset {}  n {}  V_bar {}  delta {}\n",
                        ds.name(),
                        ds.len(),
                        ds.max_node_count(),
                        delta
                    );
                    t.push_str(
                        "class  y'Θ⁻¹y        tr(Θ)         loss-bound    tr-bound      tr-holds\n",
                    );
                    for (class, r) in &reports {
                        t.push_str(&format!(
                            "{class:<6} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {}\n",
                            r.quad_form, r.trace, r.bound_value, r.trace_bound, r.trace_bound_holds
                        ));
                    }
                    t
                }
            };
            write_or_print(out.as_ref(), &content)
        }
        Command::Mc {
            cov,
            samples,
            seed,
            c_sigma,
        } => {
            if cov.len() != 3 {
                anyhow::bail!("--cov expects a11,a12,a22");
            }
            let (a11, a12, a22) = (cov[0], cov[1], cov[2]);
            let est = mc_relu_expectations([[a11, a12], [a12, a22]], samples, seed)?;
            let s = (a11 * a22).sqrt();
            let lambda = if s > 0.0 { (a12 / s).clamp(-1.0, 1.0) } else { 0.0 };
            let pi = std::f64::consts::PI;
            let (cf_sigma, cf_dot) = if s > 0.0 {
                (
                    c_sigma * s * (lambda * (pi - lambda.acos()) + (1.0 - lambda * lambda).max(0.0).sqrt())
                        / (2.0 * pi),
                    c_sigma * (pi - lambda.acos()) / (2.0 * pi),
                )
            } else {
                (0.0, c_sigma * 0.25)
            };
            let z = |mc: f64, cf: f64, se: f64| if se > 0.0 { (mc * c_sigma - cf) / (se * c_sigma) } else { 0.0 };
            println!("cov [[{a11}, {a12}], [{a12}, {a22}]]  samples {samples}  seed {seed}");
            println!(
                "E[σσ]: mc {:.6} ± {:.6}  closed-form {:.6}  z {:+.2}",
                est.e_sigma * c_sigma,
                est.se_sigma * c_sigma,
                cf_sigma,
                z(est.e_sigma, cf_sigma, est.se_sigma)
            );
            println!(
                "E[σ̇σ̇]: mc {:.6} ± {:.6}  closed-form {:.6}  z {:+.2}",
                est.e_dot * c_sigma,
                est.se_dot * c_sigma,
                cf_dot,
                z(est.e_dot, cf_dot, est.se_dot)
            );
            Ok(())
        }
    }
}
