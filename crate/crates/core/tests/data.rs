mod common;

use std::path::Path;

use admm_gcn::data::{
    append_metrics, generate_sbm, load_dataset, read_metrics, write_dataset, write_metrics, EpochMetrics, Manifest,
    RunMetrics, SbmSpec,
};
use admm_gcn::Error;
use proptest::prelude::*;

fn toy_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy"))
}

#[test]
fn toy_fixture_loads() {
    let d = load_dataset(toy_dir()).unwrap();
    assert_eq!(
        d.manifest(),
        Manifest {
            nodes: 3,
            train: 2,
            test: 1,
            classes: 2,
            features: 2
        }
    );
    assert_eq!(d.graph.edge_count(), 2);
    assert_eq!(d.train_mask.ids(), &[0, 2]);
    assert_eq!(d.features.row(1), &[0.5, 0.5]);
}

#[test]
fn dataset_round_trips_through_a_directory() {
    let d = common::sbm(3, 7, 9);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.graph.adjacency(), d.graph.adjacency());
    assert_eq!(back.features, d.features);
    assert_eq!(back.labels, d.labels);
    assert_eq!(back.train_mask.ids(), d.train_mask.ids());
    assert_eq!(back.test_mask.ids(), d.test_mask.ids());
}

fn copy_toy(dir: &Path) {
    for f in ["edges.tsv", "features.csv", "labels.csv", "split.json", "manifest.json"] {
        std::fs::copy(toy_dir().join(f), dir.join(f)).unwrap();
    }
}

#[test]
fn manifest_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    copy_toy(dir.path());
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"nodes":3,"train":2,"test":1,"classes":3,"features":2}"#,
    )
    .unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::InvalidDataset(_))));
}

#[test]
fn bad_feature_row_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    copy_toy(dir.path());
    std::fs::write(dir.path().join("features.csv"), "1,0\n0.5,x\n0,1\n").unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn overlapping_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    copy_toy(dir.path());
    std::fs::write(dir.path().join("split.json"), r#"{"train":[0,1],"test":[1]}"#).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

fn row(epoch: usize, method: &str) -> EpochMetrics {
    EpochMetrics {
        epoch,
        method: method.into(),
        train_acc: 0.25 * epoch as f64,
        test_acc: 0.5,
        loss: 1.0 / (epoch as f64 + 1.0),
        train_time_s: 0.125,
        comm_time_s: 0.0,
    }
}

#[test]
fn metrics_round_trip_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let run = RunMetrics {
        epochs: vec![row(1, "adam"), row(2, "adam")],
    };
    write_metrics(&run, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "epoch,method,train_acc,test_acc,loss,train_time_s,comm_time_s"
    );
    assert_eq!(read_metrics(&path).unwrap(), run);
    append_metrics(&[row(1, "admm_serial")], &path).unwrap();
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.epochs.len(), 3);
    assert_eq!(back.epochs[2].method, "admm_serial");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sbm_instances_are_well_formed(
        blocks in 1usize..5,
        per in 2usize..20,
        p_in in 0.3f64..1.0,
        p_out in 0.0f64..0.3,
        dim in 1usize..6,
        seed in any::<u64>(),
    ) {
        let train = per / 2;
        let spec = SbmSpec {
            communities: blocks,
            nodes_per_community: per,
            p_in,
            p_out,
            feature_dim: dim,
            signal: 1.0,
            train_per_community: train,
            seed,
        };
        let d = generate_sbm(&spec).unwrap();
        d.validate().unwrap();
        let n = blocks * per;
        prop_assert_eq!(d.graph.n(), n);
        prop_assert_eq!(d.features.shape(), (n, dim));
        prop_assert_eq!(d.train_mask.len(), blocks * train);
        prop_assert_eq!(d.train_mask.len() + d.test_mask.len(), n);
        for i in 0..n {
            prop_assert_eq!(d.labels.get(i, i / per), 1.0);
            prop_assert_eq!(d.labels.row(i).iter().sum::<f64>(), 1.0);
        }
        if p_out == 0.0 {
            prop_assert!(d.graph.edges().all(|(u, v)| u / per == v / per));
        }
        prop_assert_eq!(generate_sbm(&spec).unwrap().features, d.features);
    }
}
