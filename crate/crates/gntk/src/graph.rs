//! Graph-classification datasets: parsing, node featurization, and fold
//! assignment.
//!
//! The on-disk format is the whitespace-separated text format used by the
//! common graph classification benchmarks: the first line holds the number
//! of graphs; each graph starts with a `"n label"` line followed by `n`
//! node lines `"tag degree v_1 .. v_k"` with 0-based neighbor indices.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;

/// An immutable undirected graph with per-node feature vectors.
///
/// Adjacency lists are symmetric, sorted, and never contain self-loops;
/// operations that aggregate over `N(u) ∪ {u}` add the node itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<u32>>,
    tags: Vec<i64>,
    features: Array2<f64>,
}

impl Graph {
    /// Builds a graph from neighbor lists and raw integer node tags.
    ///
    /// Rejects self-loops, out-of-range indices, and asymmetric lists.
    /// Duplicate neighbors are collapsed.
    pub fn new(adjacency: Vec<Vec<u32>>, tags: Vec<i64>) -> Result<Self, DataError> {
        let n = adjacency.len();
        if tags.len() != n {
            return Err(DataError::Invalid(format!(
                "{} tags for {} nodes",
                tags.len(),
                n
            )));
        }
        let mut adj: Vec<Vec<u32>> = Vec::with_capacity(n);
        for (u, nbrs) in adjacency.into_iter().enumerate() {
            let mut nbrs = nbrs;
            nbrs.sort_unstable();
            nbrs.dedup();
            for &v in &nbrs {
                if v as usize >= n {
                    return Err(DataError::Invalid(format!(
                        "node {u}: neighbor index {v} out of range (node count {n})"
                    )));
                }
                if v as usize == u {
                    return Err(DataError::Invalid(format!("node {u}: self-loop")));
                }
            }
            adj.push(nbrs);
        }
        for u in 0..n {
            for &v in &adj[u] {
                if adj[v as usize].binary_search(&(u as u32)).is_err() {
                    return Err(DataError::Invalid(format!(
                        "asymmetric edge: {u} -> {v} present, {v} -> {u} missing"
                    )));
                }
            }
        }
        Ok(Graph {
            features: Array2::zeros((n, 0)),
            adjacency: adj,
            tags,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Sorted neighbors of `u`, excluding `u` itself.
    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn tags(&self) -> &[i64] {
        &self.tags
    }

    /// Node features as a `node_count × d` matrix; `d` is 0 until the
    /// owning dataset has been featurized.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub(crate) fn set_features(&mut self, features: Array2<f64>) {
        debug_assert_eq!(features.nrows(), self.node_count());
        self.features = features;
    }

    /// Feature row of node `u`.
    pub fn feature_row(&self, u: usize) -> ndarray::ArrayView1<'_, f64> {
        self.features.row(u)
    }

    /// Returns a copy with nodes relabeled by `perm` (`perm[new] = old`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new as u32;
        }
        let mut adjacency = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        let mut features = Array2::zeros((n, self.feature_dim()));
        for (new, &old) in perm.iter().enumerate() {
            let mut nbrs: Vec<u32> = self.adjacency[old].iter().map(|&v| inv[v as usize]).collect();
            nbrs.sort_unstable();
            adjacency.push(nbrs);
            tags.push(self.tags[old]);
            features.row_mut(new).assign(&self.features.row(old));
        }
        Graph {
            adjacency,
            tags,
            features,
        }
    }
}

/// How node feature vectors are derived from the raw data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// One-hot over the distinct node tags of the whole dataset.
    Tags,
    /// One-hot of the node degree over `[0, max_degree_in_dataset]`.
    Degrees,
}

impl std::str::FromStr for FeatureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tags" => Ok(FeatureMode::Tags),
            "degrees" => Ok(FeatureMode::Degrees),
            other => Err(format!("unknown feature mode {other:?} (expected tags|degrees)")),
        }
    }
}

/// A set of graphs with dense 0-based class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub graphs: Vec<Graph>,
    labels: Vec<usize>,
    num_classes: usize,
    feature_mode: Option<FeatureMode>,
    name: String,
}

impl LabeledDataset {
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self, DataError> {
        if graphs.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Ok(LabeledDataset {
            graphs,
            labels,
            num_classes,
            feature_mode: None,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_mode(&self) -> Option<FeatureMode> {
        self.feature_mode
    }

    /// Shared feature dimension, 0 if not featurized.
    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    /// Largest node count over all graphs.
    pub fn max_node_count(&self) -> usize {
        self.graphs.iter().map(Graph::node_count).max().unwrap_or(0)
    }

    /// Dataset restricted to `indices` (labels kept, classes unchanged).
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            feature_mode: self.feature_mode,
            name: self.name.clone(),
        }
    }
}

fn parse_int<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, DataError> {
    tok.parse().map_err(|_| DataError::Parse {
        line,
        msg: format!("invalid {what}: {tok:?}"),
    })
}

/// Parses a dataset file. Labels are remapped to a dense 0-based range in
/// first-appearance order; raw node tags are retained for featurization.
pub fn parse_dataset(path: impl AsRef<std::path::Path>) -> Result<LabeledDataset, DataError> {
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let text = std::fs::read_to_string(path)?;
    parse_dataset_str(&text, name)
}

/// Parses dataset text. See the module docs for the line format.
pub fn parse_dataset_str(text: &str, name: impl Into<String>) -> Result<LabeledDataset, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |what: &str| {
        lines.next().ok_or_else(|| DataError::Parse {
            line: 0,
            msg: format!("unexpected end of file, expected {what}"),
        })
    };

    let (line_no, header) = next_line("graph count")?;
    let num_graphs: usize = parse_int(header.trim(), line_no, "graph count")?;

    let mut graphs = Vec::with_capacity(num_graphs);
    let mut labels = Vec::with_capacity(num_graphs);
    let mut label_map: Vec<i64> = Vec::new();

    for _ in 0..num_graphs {
        let (line_no, header) = next_line("graph header")?;
        let mut toks = header.split_whitespace();
        let n: usize = parse_int(
            toks.next().ok_or(DataError::Parse {
                line: line_no,
                msg: "missing node count".into(),
            })?,
            line_no,
            "node count",
        )?;
        let raw_label: i64 = parse_int(
            toks.next().ok_or(DataError::Parse {
                line: line_no,
                msg: "missing graph label".into(),
            })?,
            line_no,
            "graph label",
        )?;
        if toks.next().is_some() {
            return Err(DataError::Parse {
                line: line_no,
                msg: "trailing tokens after graph header".into(),
            });
        }
        if n == 0 {
            return Err(DataError::Parse {
                line: line_no,
                msg: "graph has zero nodes".into(),
            });
        }
        let label = match label_map.iter().position(|&l| l == raw_label) {
            Some(i) => i,
            None => {
                label_map.push(raw_label);
                label_map.len() - 1
            }
        };
        labels.push(label);

        let mut adjacency: Vec<Vec<u32>> = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        let mut node_lines = Vec::with_capacity(n);
        for u in 0..n {
            let (line_no, row) = next_line("node line")?;
            node_lines.push(line_no);
            let mut toks = row.split_whitespace();
            let tag: i64 = parse_int(
                toks.next().ok_or(DataError::Parse {
                    line: line_no,
                    msg: "missing node tag".into(),
                })?,
                line_no,
                "node tag",
            )?;
            let k: usize = parse_int(
                toks.next().ok_or(DataError::Parse {
                    line: line_no,
                    msg: "missing neighbor count".into(),
                })?,
                line_no,
                "neighbor count",
            )?;
            let mut nbrs = Vec::with_capacity(k);
            for _ in 0..k {
                let v: u32 = parse_int(
                    toks.next().ok_or(DataError::Parse {
                        line: line_no,
                        msg: format!("expected {k} neighbor indices"),
                    })?,
                    line_no,
                    "neighbor index",
                )?;
                if v as usize >= n {
                    return Err(DataError::Parse {
                        line: line_no,
                        msg: format!("neighbor index {v} out of range (node count {n})"),
                    });
                }
                if v as usize == u {
                    return Err(DataError::Parse {
                        line: line_no,
                        msg: format!("self-loop on node {u}"),
                    });
                }
                nbrs.push(v);
            }
            if toks.next().is_some() {
                return Err(DataError::Parse {
                    line: line_no,
                    msg: "trailing tokens after neighbor list".into(),
                });
            }
            nbrs.sort_unstable();
            nbrs.dedup();
            tags.push(tag);
            adjacency.push(nbrs);
        }
        // symmetry check, reported against the node's own line
        for u in 0..n {
            for &v in &adjacency[u] {
                if adjacency[v as usize].binary_search(&(u as u32)).is_err() {
                    return Err(DataError::Parse {
                        line: node_lines[u],
                        msg: format!("edge {u} -> {v} has no reverse edge {v} -> {u}"),
                    });
                }
            }
        }
        graphs.push(Graph {
            features: Array2::zeros((n, 0)),
            adjacency,
            tags,
        });
    }
    if let Some((line_no, rest)) = lines.next() {
        if !rest.trim().is_empty() {
            return Err(DataError::Parse {
                line: line_no,
                msg: "trailing content after last graph".into(),
            });
        }
    }

    LabeledDataset::new(graphs, labels, name)
}

/// Serializes a dataset back to the text format accepted by
/// [`parse_dataset_str`]. Labels are written in their remapped dense form.
pub fn serialize_dataset(dataset: &LabeledDataset) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n", dataset.len()));
    for (g, &y) in dataset.graphs.iter().zip(dataset.labels()) {
        out.push_str(&format!("{} {}\n", g.node_count(), y));
        for u in 0..g.node_count() {
            out.push_str(&format!("{} {}", g.tags()[u], g.degree(u)));
            for &v in g.neighbors(u) {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Builds one-hot node features for the whole dataset.
///
/// `Tags`: one-hot over the sorted set of distinct tags in the dataset.
/// `Degrees`: one-hot of `|N(v)|` over `[0, max_degree_in_dataset]`.
/// Either way the feature dimension is shared across all graphs.
pub fn featurize(dataset: &LabeledDataset, mode: FeatureMode) -> Result<LabeledDataset, DataError> {
    let mut out = dataset.clone();
    match mode {
        FeatureMode::Tags => {
            let mut tagset: Vec<i64> = dataset
                .graphs
                .iter()
                .flat_map(|g| g.tags().iter().copied())
                .collect();
            tagset.sort_unstable();
            tagset.dedup();
            if tagset.is_empty() {
                return Err(DataError::Invalid("dataset has no node tags".into()));
            }
            let d = tagset.len();
            for g in &mut out.graphs {
                let mut feats = Array2::zeros((g.node_count(), d));
                for u in 0..g.node_count() {
                    let idx = tagset.binary_search(&g.tags()[u]).expect("tag in tagset");
                    feats[(u, idx)] = 1.0;
                }
                g.set_features(feats);
            }
        }
        FeatureMode::Degrees => {
            let max_deg = dataset
                .graphs
                .iter()
                .flat_map(|g| (0..g.node_count()).map(|u| g.degree(u)))
                .max()
                .unwrap_or(0);
            let d = max_deg + 1;
            for g in &mut out.graphs {
                let mut feats = Array2::zeros((g.node_count(), d));
                for u in 0..g.node_count() {
                    feats[(u, g.degree(u))] = 1.0;
                }
                g.set_features(feats);
            }
        }
    }
    out.feature_mode = Some(mode);
    Ok(out)
}

/// Stratified k-fold assignment: folds partition `[0, n)`, fold sizes differ
/// by at most one, per-class counts differ by at most one across folds, and
/// the result is a pure function of `(labels, k, seed)`.
pub fn make_folds(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    let n = dataset.len();
    if k < 2 {
        return Err(DataError::Invalid(format!("fold count {k} must be at least 2")));
    }
    if k > n {
        return Err(DataError::Invalid(format!(
            "fold count {k} exceeds dataset size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    // Per class: shuffle, then deal along a global round-robin counter so
    // both the per-class and the total fold sizes stay balanced.
    let mut counter = 0usize;
    for class in 0..dataset.num_classes().max(1) {
        let mut members: Vec<usize> = (0..n).filter(|&i| dataset.labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[counter % k].push(i);
            counter += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Aggregated input feature of node `u`: `Σ_{v ∈ N(u) ∪ {u}} h_v`.
pub(crate) fn aggregated_feature(g: &Graph, u: usize) -> Array1<f64> {
    let mut acc = g.features.row(u).to_owned();
    for &v in g.neighbors(u) {
        acc += &g.features.row(v as usize);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "2\n2 0\n0 1 1\n0 1 0\n1 1\n5 0\n";

    #[test]
    fn parses_minimal_two_graph_file() {
        let ds = parse_dataset_str(TINY, "tiny").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.graphs[0].node_count(), 2);
        assert_eq!(ds.graphs[1].node_count(), 1);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.graphs[1].tags(), &[5]);
    }

    #[test]
    fn rejects_asymmetric_edges() {
        // graph 0 lists edge 0 -> 1 but not 1 -> 0
        let text = "1\n2 0\n0 1 1\n0 0\n";
        let err = parse_dataset_str(text, "bad").unwrap_err();
        match err {
            DataError::Parse { line, ref msg } => {
                assert_eq!(line, 3, "error should name the offending line: {msg}");
                assert!(msg.contains("reverse"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_self_loops_and_bad_indices() {
        let with_loop = "1\n2 0\n0 2 0 1\n0 1 0\n";
        assert!(matches!(
            parse_dataset_str(with_loop, "x"),
            Err(DataError::Parse { line: 3, .. })
        ));
        let out_of_range = "1\n2 0\n0 1 5\n0 0\n";
        assert!(matches!(
            parse_dataset_str(out_of_range, "x"),
            Err(DataError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn collapses_duplicate_edges() {
        let text = "1\n2 0\n0 2 1 1\n0 1 0\n";
        let ds = parse_dataset_str(text, "dup").unwrap();
        assert_eq!(ds.graphs[0].neighbors(0), &[1]);
    }

    #[test]
    fn labels_remapped_in_first_appearance_order() {
        let text = "3\n1 7\n0 0\n1 3\n0 0\n1 7\n0 0\n";
        let ds = parse_dataset_str(text, "labels").unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }

    #[test]
    fn roundtrip_parse_serialize_parse() {
        let ds = parse_dataset_str(TINY, "tiny").unwrap();
        let text = serialize_dataset(&ds);
        let ds2 = parse_dataset_str(&text, "tiny").unwrap();
        assert_eq!(ds.graphs, ds2.graphs);
        assert_eq!(ds.labels(), ds2.labels());
    }

    #[test]
    fn tag_featurization_is_one_hot_over_dataset_tags() {
        let text = "2\n2 0\n4 1 1\n9 1 0\n1 1\n4 0\n";
        let ds = parse_dataset_str(text, "t").unwrap();
        let ds = featurize(&ds, FeatureMode::Tags).unwrap();
        assert_eq!(ds.feature_dim(), 2); // tags {4, 9}
        for g in &ds.graphs {
            for u in 0..g.node_count() {
                let row = g.feature_row(u);
                assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
                assert_eq!(row.sum(), 1.0);
            }
        }
        // both tag-4 nodes share the same one-hot index
        assert_eq!(ds.graphs[0].feature_row(0), ds.graphs[1].feature_row(0));
    }

    #[test]
    fn degree_featurization_uses_dataset_max_degree() {
        // path a-b-c plus an isolated single-node graph
        let text = "2\n3 0\n0 1 1\n0 2 0 2\n0 1 1\n1 1\n0 0\n";
        let ds = parse_dataset_str(text, "d").unwrap();
        let ds = featurize(&ds, FeatureMode::Degrees).unwrap();
        assert_eq!(ds.feature_dim(), 3); // degrees 0..=2
        let g = &ds.graphs[0];
        assert_eq!(g.feature_row(0)[1], 1.0);
        assert_eq!(g.feature_row(2)[1], 1.0);
        assert_eq!(g.feature_row(1)[2], 1.0);
        // isolated node: one-hot at index 0
        assert_eq!(ds.graphs[1].feature_row(0)[0], 1.0);
    }

    fn fold_dataset(n: usize, labels: Vec<usize>) -> LabeledDataset {
        let graphs = (0..n)
            .map(|_| Graph::new(vec![vec![]], vec![0]).unwrap())
            .collect();
        LabeledDataset::new(graphs, labels, "folds").unwrap()
    }

    #[test]
    fn folds_partition_and_balance() {
        let labels: Vec<usize> = (0..188).map(|i| usize::from(i % 3 == 0)).collect();
        let ds = fold_dataset(188, labels.clone());
        let folds = make_folds(&ds, 10, 42).unwrap();
        let mut seen = vec![false; 188];
        for fold in &folds {
            assert!(fold.len() == 18 || fold.len() == 19);
            for &i in fold {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // stratification: per-class counts differ by at most 1
        for class in 0..2 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {class} counts {counts:?}");
        }
    }

    #[test]
    fn folds_deterministic_and_singleton() {
        let ds = fold_dataset(10, vec![0; 10]);
        let a = make_folds(&ds, 10, 7).unwrap();
        let b = make_folds(&ds, 10, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.len() == 1));
        assert!(make_folds(&ds, 11, 7).is_err());
        assert!(make_folds(&ds, 1, 7).is_err());
    }

    #[test]
    fn permuted_graph_preserves_structure() {
        let text = "1\n3 0\n0 1 1\n1 2 0 2\n2 1 1\n";
        let ds = parse_dataset_str(text, "p").unwrap();
        let ds = featurize(&ds, FeatureMode::Tags).unwrap();
        let g = &ds.graphs[0];
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.degree(1), 1);
        assert_eq!(p.tags(), &[2, 0, 1]);
        assert_eq!(p.neighbors(2), &[0, 1]); // old node 1 (hub) is new node 2
    }
}
