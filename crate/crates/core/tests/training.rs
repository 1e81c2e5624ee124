use std::sync::Arc;

use nas_core::data::synthetic_set;
use nas_core::genome::Genome;
use nas_core::network::{Decoder, Encoder, StyleNet, DEFAULT_CHANNELS};
use nas_core::objective::{
    perceptual_loss, train_candidate, train_oracle, CandidateEvaluator, ObjectiveWeights,
    PerceptualExtractor, TrainConfig, TrainingSet, ValidationSet,
};
use nas_core::rng::seeded;
use nas_core::search::Evaluator;
use nas_core::tensor::{ops, Tensor};
use nas_core::Error;

fn encoder() -> Arc<Encoder> {
    Arc::new(Encoder::seeded(&DEFAULT_CHANNELS, 2024).unwrap())
}

#[test]
fn all_zeros_genome_learns_to_reconstruct() {
    let enc = encoder();
    let train = TrainingSet::new(&enc, synthetic_set(4, 32, 32, 5, 0)).unwrap();
    let out = train_candidate(
        Genome::ZEROS,
        enc.channels(),
        &train,
        &TrainConfig::default(),
        &mut seeded(1),
    )
    .unwrap();
    assert!(out.final_loss < 0.02, "train MSE {}", out.final_loss);
}

#[test]
fn zero_steps_and_determinism() {
    let enc = encoder();
    let train = TrainingSet::new(&enc, synthetic_set(2, 16, 16, 5, 0)).unwrap();
    let g: Genome = "0100110000000000000011000000010".parse().unwrap();
    let cfg0 = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let untouched = train_candidate(g, enc.channels(), &train, &cfg0, &mut seeded(4)).unwrap();
    let fresh = Decoder::build(g, enc.channels(), &mut seeded(4)).unwrap();
    assert_eq!(untouched.decoder.param_tensors(), fresh.param_tensors());

    let cfg = TrainConfig {
        steps: 20,
        ..TrainConfig::default()
    };
    let a = train_candidate(g, enc.channels(), &train, &cfg, &mut seeded(9)).unwrap();
    let b = train_candidate(g, enc.channels(), &train, &cfg, &mut seeded(9)).unwrap();
    let bits = |d: &Decoder| {
        d.param_tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.decoder), bits(&b.decoder));
}

#[test]
fn non_finite_data_is_a_training_failure() {
    let enc = encoder();
    let mut img = synthetic_set(1, 16, 16, 5, 0).remove(0);
    let features_ok = TrainingSet::new(&enc, vec![img.clone()]).unwrap();
    img.data_mut()[7] = f64::NAN;
    // features come from the clean image, the target carries the NaN
    let bad = TrainingSet::new(&enc, vec![img]);
    let err = match bad {
        Ok(set) => train_candidate(
            Genome::ZEROS,
            enc.channels(),
            &set,
            &TrainConfig::default(),
            &mut seeded(0),
        )
        .unwrap_err(),
        Err(e) => e,
    };
    assert!(err.is_numerical(), "{err}");
    assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_)));
    drop(features_ok);
}

/// Fits one image with a fixed 3000-step budget. The genome has WCT sites
/// at the bottleneck and after stage 1, plus an additive stage-1 skip.
fn fitted_single_image() -> (StyleNet, Tensor) {
    let enc = encoder();
    let img = synthetic_set(1, 32, 32, 6, 0).remove(0);
    let train = TrainingSet::new(&enc, vec![img.clone()]).unwrap();
    let cfg = TrainConfig {
        steps: 3000,
        ..TrainConfig::default()
    };
    let g = Genome::ZEROS
        .with_bit(0, true)
        .with_bit(28, true)
        .with_bit(29, true);
    let out = train_candidate(g, enc.channels(), &train, &cfg, &mut seeded(2)).unwrap();
    assert!(out.final_loss < 1e-3, "fit MSE {}", out.final_loss);
    (StyleNet::new(enc, out.decoder, false), img)
}

#[test]
fn fitted_decoder_reproduces_its_image_and_self_style_is_near_identity() {
    let (mut net, img) = fitted_single_image();
    let recon = net.forward(&img, None).unwrap();
    let max_err = recon.max_abs_diff(&img);
    assert!(max_err < 0.15, "max pixel error {max_err}");

    net.wct_enabled = true;
    let styled = net.forward(&img, Some(&img)).unwrap();
    let gap = styled.max_abs_diff(&recon);
    assert!(gap < 0.05, "self-style deviates by {gap}");
}

#[test]
fn oracle_scores_zero_against_itself_and_evaluation_is_weighted() {
    let enc = encoder();
    let train = TrainingSet::new(&enc, synthetic_set(4, 32, 32, 8, 0)).unwrap();
    let content = synthetic_set(3, 32, 32, 8, 1);
    let style = synthetic_set(3, 32, 32, 8, 2);
    let val = ValidationSet::new(&enc, content.into_iter().zip(style).collect()).unwrap();
    let cfg = TrainConfig {
        steps: 100,
        ..TrainConfig::default()
    };
    let (oracle, _) = train_oracle(enc.clone(), &train, &cfg, &val, 3).unwrap();
    let extractor = Arc::new(PerceptualExtractor::seeded(&DEFAULT_CHANNELS, 99).unwrap());
    let weights = ObjectiveWeights::default();
    let oracle = Arc::new(oracle);
    let ev = CandidateEvaluator::new(
        enc.clone(),
        extractor,
        Arc::new(train),
        Arc::new(val),
        oracle.clone(),
        TrainConfig {
            steps: 10,
            ..TrainConfig::default()
        },
        weights,
    )
    .unwrap();
    let (e, p) = ev.score(&oracle.net).unwrap();
    assert_eq!((e, p), (0.0, 0.0));

    let g: Genome = "1000010000000000000000000000000".parse().unwrap();
    let b = ev.evaluate(g, 5);
    assert!(!b.failed);
    assert!(b.is_consistent());
    assert_eq!(b.o, 2.0 / 31.0);
    assert!(b.e > 0.0 && b.p > 0.0);

    let isolated = ev
        .with_weights(ObjectiveWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        })
        .unwrap();
    assert_eq!(isolated.evaluate(g, 5).l, 2.0 / 31.0);
}

#[test]
fn perceptual_loss_grows_along_a_fixed_direction() {
    let ex = PerceptualExtractor::seeded(&DEFAULT_CHANNELS, 7).unwrap();
    let base = synthetic_set(2, 32, 32, 11, 0);
    let dir: Vec<Tensor> = (0..2)
        .map(|i| Tensor::uniform(&[3, 32, 32], -1.0, 1.0, &mut seeded(50 + i)))
        .collect();
    let oracle_feats: Vec<Vec<Tensor>> = base.iter().map(|b| ex.features(b).unwrap()).collect();
    let mut prev = 0.0;
    for t in [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
        let outs: Vec<Tensor> = base
            .iter()
            .zip(&dir)
            .map(|(b, d)| ops::add(b, &d.map(|v| v * t)).unwrap())
            .collect();
        let p = perceptual_loss(&outs, &oracle_feats, &ex).unwrap();
        if t == 0.0 {
            assert_eq!(p, 0.0);
        } else {
            assert!(p > prev, "P({t}) = {p} not above {prev}");
        }
        prev = p;
    }
}
