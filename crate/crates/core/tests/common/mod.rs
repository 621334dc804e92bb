#![allow(dead_code)]

use rtens_core::harness::EvalSession;
use rtens_core::signal::{extract_features, FeatureConfig};
use rtens_core::synthgen::{corpus_plan, generate_session, GeneratorConfig, GroundTruth};

/// Shortest sessions the generator accepts, optionally without regime
/// excursions.
pub fn short_generator(seed: u64, excursions: bool) -> GeneratorConfig {
    let mut cfg = GeneratorConfig {
        seed,
        duration_s: 400,
        ..Default::default()
    };
    if !excursions {
        cfg.excursions.probability = 0.0;
    }
    cfg
}

pub fn featurized(cfg: &GeneratorConfig, counts: &[usize]) -> (Vec<EvalSession>, Vec<GroundTruth>) {
    let fc = FeatureConfig::default();
    corpus_plan(counts, cfg)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let (s, truth) = generate_session(a, i as u64, cfg).unwrap();
            let fs = extract_features(&s, &fc).unwrap();
            (EvalSession::new(&truth.subject_id, fs, s.events).unwrap(), truth)
        })
        .unzip()
}

pub fn planted_labels(truths: &[GroundTruth]) -> Vec<usize> {
    truths.iter().map(|t| t.archetype_id as usize - 1).collect()
}
