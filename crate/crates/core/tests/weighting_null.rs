//! MAP accuracy when labels carry no information about the features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rtens_core::mixture::{accuracy_grid, GridConfig, LabeledSession};
use rtens_core::signal::{weighting_pairs, FeatureFrame, FeatureSet, CHANNELS};

fn iid_session(id: usize, rng: &mut ChaCha8Rng) -> FeatureSet {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect() };
    let frames = (90..150)
        .map(|t_s| FeatureFrame {
            t_s,
            oz_spectrum: Vec::new(),
            theta_powers: draw(CHANNELS.len()),
            alpha_plv: draw(weighting_pairs().len()),
            band_powers: BTreeMap::new(),
        })
        .collect();
    FeatureSet {
        session_id: format!("n{id:03}"),
        channel_names: CHANNELS.iter().map(|c| c.to_string()).collect(),
        oz_bin_hz: Vec::new(),
        frames,
    }
}

#[test]
fn shuffled_labels_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sets: Vec<FeatureSet> = (0..30).map(|i| iid_session(i, &mut rng)).collect();
    let mut labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    labels.shuffle(&mut rng);
    let labeled: Vec<LabeledSession> = sets
        .iter()
        .zip(&labels)
        .map(|(features, &label)| LabeledSession { label, features })
        .collect();
    let cfg = GridConfig {
        m_values: vec![1, 2],
        ..Default::default()
    };
    for cell in accuracy_grid(&labeled, &cfg).unwrap() {
        assert!(
            (cell.accuracy_mean - 1.0 / 3.0).abs() <= 0.1,
            "m = {}: accuracy {}",
            cell.m,
            cell.accuracy_mean
        );
    }
}
