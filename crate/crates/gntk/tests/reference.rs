//! Pinned kernel values on the MUTAG benchmark.
//!
//! The expected numbers were computed with an independent float64
//! implementation of the same recursions and cross-checked against the
//! original reference implementation of this kernel family (agreement to
//! ~5e-10 relative, limited by that implementation's float32 adjacency
//! handling). They pin the full pipeline: parsing, one-hot featurization,
//! per-graph profiles, aggregation, arc-cosine transforms, and readout.

use gntk::graph::{featurize, parse_dataset, FeatureMode};
use gntk::kernel::{pair_kernel, ArchConfig, Scaling};

fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

#[test]
fn mutag_pair_kernels_match_reference() {
    let ds = parse_dataset(data_path("MUTAG.txt")).expect("MUTAG dataset present");
    assert_eq!(ds.len(), 188);
    assert_eq!(ds.num_classes(), 2);
    let ds = featurize(&ds, FeatureMode::Tags).unwrap();
    assert_eq!(ds.feature_dim(), 7);

    #[rustfmt::skip]
    let expected: &[(usize, usize, &str, bool, usize, usize, f64)] = &[
        (3, 2, "avg", false, 0, 0, 2854.8954702215105),
        (3, 2, "avg", false, 0, 1, 2007.606292917384),
        (3, 2, "avg", false, 1, 5, 1675.9661509248535),
        (3, 2, "avg", false, 5, 17, 1845.518580340577),
        (2, 1, "sum", true, 0, 0, 187393.28490234845),
        (2, 1, "sum", true, 0, 1, 138077.11181833796),
        (2, 1, "sum", true, 1, 5, 113710.68928108698),
        (2, 1, "sum", true, 5, 17, 120893.80065926001),
        (10, 1, "avg", false, 0, 0, 4365.94180387095),
        (10, 1, "avg", false, 0, 1, 2933.1043952596247),
        (10, 1, "avg", false, 1, 5, 2506.8047936979733),
        (10, 1, "avg", false, 5, 17, 2810.659814659447),
    ];
    for &(l, r, scale, jk, i, j, want) in expected {
        let arch = ArchConfig::new(l, r, scale.parse::<Scaling>().unwrap(), jk, 2.0).unwrap();
        let got = pair_kernel(&ds.graphs[i], &ds.graphs[j], &arch).unwrap();
        let rel = (got - want).abs() / want.abs();
        assert!(
            rel <= 1e-10,
            "L={l} R={r} {scale} jk={jk} ({i},{j}): got {got}, want {want}, rel {rel:e}"
        );
    }
}
