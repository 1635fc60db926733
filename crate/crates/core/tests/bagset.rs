use std::collections::HashSet;

use llp::bagset::{
    compute_proportions, load_label_sidecar, load_manifest, partition_into_bags, persist_label_sidecar,
    persist_manifest, select_binary_subset, LabeledDataset,
};
use llp::datasets::resolve;
use llp::Error;
use ndarray::Array2;

fn synthetic(n: usize, k: usize) -> LabeledDataset<f32> {
    let features = Array2::from_shape_fn((n, 1), |(i, _)| i as f32);
    LabeledDataset::new("synthetic", features, vec![1], (0..n).map(|i| (i * 7) % k).collect(), k).unwrap()
}

#[test]
fn sixty_thousand_instances_make_3750_bags() {
    let data = synthetic(60_000, 10);
    let bags = partition_into_bags(&data, 16, 0).unwrap();
    assert_eq!(bags.bags.len(), 3750);
    let covered: HashSet<usize> = bags.bags.iter().flat_map(|b| b.instance_indices.iter().copied()).collect();
    assert_eq!(covered.len(), 60_000);
    for bag in &bags.bags {
        for p in bag.proportions.values() {
            let scaled = p * 16.0;
            assert!((scaled - scaled.round()).abs() < 1e-9);
        }
    }
}

#[test]
fn manifest_and_sidecar_survive_the_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(100, 3);
    let bags = partition_into_bags(&data, 32, 7).unwrap();
    assert_eq!(bags.instance_count(), 96);
    let path = dir.path().join("bags.jsonl");
    persist_manifest(&bags, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), bags);

    let again = dir.path().join("again.jsonl");
    persist_manifest(&partition_into_bags(&data, 32, 7).unwrap(), &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let labels = dir.path().join("labels.json");
    persist_label_sidecar(&data.label_sidecar(), &labels).unwrap();
    let sidecar = load_label_sidecar(&labels).unwrap();
    assert_eq!(sidecar.labels, data.labels);
    // the manifest never carries instance labels
    assert!(!std::fs::read_to_string(&path).unwrap().contains("label"));
}

#[test]
fn manifest_line_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        "{\"k\":2,\"bag_size\":2,\"seed\":0,\"source\":\"x\",\"n\":2}\n{\"id\":0,\"indices\":[0,1],\"proportions\":[0.5,0.5]}\nnot json\n",
    )
    .unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn binary_subsets_of_blobs() {
    let data = resolve::<f32>("blobs-400", None, 0).unwrap();
    let binary = select_binary_subset(&data.train, 0, 2).unwrap();
    assert_eq!(binary.k, 2);
    assert_eq!(binary.len(), data.train.labels.iter().filter(|&&l| l == 0 || l == 2).count());
    let bags = partition_into_bags(&binary, 16, 1).unwrap();
    assert!(bags.bags.iter().all(|b| b.proportions.k() == 2));

    let by_name = resolve::<f32>("blobs-400/binary-0-2", None, 0).unwrap();
    assert_eq!(by_name.train.features, binary.features);
    assert!(select_binary_subset(&data.train, 1, 1).is_err());
}

#[test]
fn proportion_examples() {
    let p = compute_proportions::<f64>(&[0, 0, 1, 2], 3).unwrap();
    assert_eq!(p.values(), &[0.5, 0.25, 0.25]);
    let p = compute_proportions::<f64>(&[1, 1, 1, 1], 2).unwrap();
    assert_eq!(p.values(), &[0.0, 1.0]);
    assert!(matches!(compute_proportions::<f64>(&[], 2), Err(Error::InvalidBag(_))));
    assert!(matches!(compute_proportions::<f64>(&[3], 2), Err(Error::LabelDomain { label: 3, k: 2 })));
}
