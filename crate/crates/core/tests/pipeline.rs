//! End-to-end behavior across modules: training, persistence, features and
//! the evaluation protocol.

use std::collections::HashSet;

use embedspread::bnn::{accuracy, train, Network, NetworkSpec, TrainConfig};
use embedspread::data::{
    load_bundle, load_idx, read_features, save_bundle, synth_ood_pair, synth_ood_pair_with, write_features,
    write_idx_images, write_idx_labels, Bundle, SynthConfig,
};
use embedspread::detectors::Scorer;
use embedspread::evaluation::{draw_split, run_experiment, run_experiment_with, ExperimentConfig};
use embedspread::features::{feature_table, FeatureConfig, FeatureSet};
use embedspread::rng;
use embedspread::Result;
use proptest::prelude::*;

fn wide_blobs() -> embedspread::data::Dataset {
    let cfg = SynthConfig { class_offset: 6.0, ..Default::default() };
    synth_ood_pair_with(2, 400, 4, &cfg).unwrap().0
}

#[test]
fn blob_training_separates_classes() {
    let data = wide_blobs();
    let spec = NetworkSpec::mlp(&[4], &[16], 2, 0.1).with_seed(1);
    let cfg = TrainConfig { epochs: 8, learning_rate: 1e-2, seed: 1, ..Default::default() };
    let out = train(Network::new(spec).unwrap(), &data, &cfg).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|h| h.mean_loss).collect();
    assert!(losses[0] >= losses[1] && losses[1] >= losses[2], "{losses:?}");
    assert_eq!(accuracy(&out.network, &data).unwrap(), 1.0);
}

#[test]
fn training_is_reproducible() {
    let data = wide_blobs();
    let run = || {
        let spec = NetworkSpec::mlp(&[4], &[8], 2, 0.2).with_seed(9);
        train(Network::new(spec).unwrap(), &data, &TrainConfig { epochs: 2, seed: 4, ..Default::default() }).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.network, b.network);
    assert_eq!(a.history, b.history);
}

#[test]
fn bundle_round_trip_preserves_mc_outputs() {
    let (id, _) = synth_ood_pair(3, 60, 5).unwrap();
    let spec = NetworkSpec::mlp(&[5], &[12, 6], 2, 0.3).with_seed(2);
    let net =
        train(Network::new(spec).unwrap(), &id, &TrainConfig { epochs: 2, ..Default::default() }).unwrap().network;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_bundle(&path, &Bundle::new(net.clone())).unwrap();
    let back = load_bundle(&path).unwrap().network;
    for i in 0..id.len() {
        let x = id.input(i);
        let a = net.mc_sample(&x, 16, &mut rng::seeded(i as u64)).unwrap();
        let b = back.mc_sample(&x, 16, &mut rng::seeded(i as u64)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn lenet_bundle_round_trip() {
    let net = Network::new(NetworkSpec::lenet5(10, 0.1).with_seed(5)).unwrap();
    assert_eq!(net.n_embeddings(), 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lenet.json");
    save_bundle(&path, &Bundle::new(net.clone())).unwrap();
    assert_eq!(load_bundle(&path).unwrap().network, net);
}

#[test]
fn feature_csv_round_trip_is_exact() {
    let (id, _) = synth_ood_pair(4, 50, 6).unwrap();
    let net = Network::new(NetworkSpec::mlp(&[6], &[10, 5], 2, 0.1).with_seed(3)).unwrap();
    let cfg = FeatureConfig { include_norms: true, ..Default::default() };
    let table = feature_table(&net, &id, &cfg).unwrap();
    assert_eq!(table.columns().len(), 3 + 2 * net.n_embeddings());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    write_features(&path, &table).unwrap();
    assert_eq!(read_features(&path).unwrap(), table);
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
    write_idx_images(&ip, 4, 5, &pixels).unwrap();
    write_idx_labels(&lp, &[2, 0, 9]).unwrap();
    let d = load_idx(&ip, &lp).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.item_shape(), &[1, 4, 5]);
    assert_eq!(d.labels(), &[2, 0, 9]);
    assert_eq!(d.raw(1)[0], pixels[20] as f64 / 255.0);
}

struct FirstColumn;

impl Scorer for FirstColumn {
    fn score(&self, x: &[f64]) -> f64 {
        x[0]
    }
}

fn tables() -> (embedspread::data::FeatureTable, embedspread::data::FeatureTable) {
    let (id, ood) = synth_ood_pair(6, 150, 5).unwrap();
    let net = Network::new(NetworkSpec::mlp(&[5], &[8], 2, 0.2).with_seed(1)).unwrap();
    let cfg = FeatureConfig { samples: 8, ..Default::default() };
    (feature_table(&net, &id, &cfg).unwrap(), feature_table(&net, &ood, &cfg).unwrap())
}

#[test]
fn oracle_detector_scores_perfect_auc() {
    let (id, ood) = tables();
    // Replace the first column by the true label so a trivial scorer is exact.
    let relabel = |t: &embedspread::data::FeatureTable, v: f64| {
        let rows = t.rows().iter().map(|r| {
            let mut r = r.clone();
            r[0] = v;
            r
        });
        embedspread::data::FeatureTable::new(t.columns().to_vec(), rows.collect(), t.labels().to_vec()).unwrap()
    };
    let (id, ood) = (relabel(&id, 0.0), relabel(&ood, 1.0));
    let cfg = ExperimentConfig { n_per_class: 30, repetitions: 4, feature_set: FeatureSet::Last, ..Default::default() };
    let fit = |_: &[Vec<f64>], _: &[usize], _: u64| -> Result<Box<dyn Scorer>> { Ok(Box::new(FirstColumn)) };
    let r = run_experiment_with(&id, &ood, None, &cfg, "oracle", fit).unwrap();
    assert_eq!(r.auc, vec![1.0; 4]);
    assert_eq!(r.recall_mean, 1.0);
}

#[test]
fn experiment_is_deterministic_and_rejects_mismatch() {
    let (id, ood) = tables();
    let cfg = ExperimentConfig { n_per_class: 20, repetitions: 3, ..Default::default() };
    let a = run_experiment(&id, &ood, None, &cfg).unwrap();
    assert_eq!(a, run_experiment(&id, &ood, None, &cfg).unwrap());
    assert!(a.importances.is_some());
    let narrow = ood.select(&ood.columns()[..3]).unwrap();
    assert!(run_experiment(&id, &narrow, None, &cfg).is_err());
}

proptest! {
    #[test]
    fn split_is_disjoint_and_complete(n_id in 2usize..80, n_ood in 1usize..80, k in 1usize..40, seed in any::<u64>()) {
        prop_assume!(k < n_id && k <= n_ood);
        let s = draw_split(n_id, n_ood, k, seed).unwrap();
        prop_assert_eq!(s.id_train.len(), k);
        prop_assert_eq!(s.ood_train.len(), k);
        let train: HashSet<_> = s.id_train.iter().collect();
        prop_assert!(s.id_test.iter().all(|i| !train.contains(i)));
        prop_assert_eq!(train.len() + s.id_test.len(), n_id);
        let ood: HashSet<_> = s.ood_train.iter().chain(&s.ood_train_rest).collect();
        prop_assert_eq!(ood.len(), n_ood);
        prop_assert_eq!(s, draw_split(n_id, n_ood, k, seed).unwrap());
    }
}
