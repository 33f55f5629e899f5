//! Whole-model gradients against central finite differences, and the
//! loss-blending identities.

use wuedet::data::{Batch, EncodedSentence};
use wuedet::model::{model_backward, model_forward, model_loss, AuxKind, ModelConfig, ModelGrads, ModelParams};
use wuedet::numerics::{rng_uniform, Rng};
use wuedet::optim::ParamSet;

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-6;
const WORDS: usize = 8;
const TAGS: usize = 5;

fn cfg(aux: AuxKind) -> ModelConfig {
    ModelConfig {
        word_dim: 7,
        pos_dim: 3,
        hidden: 5,
        aux_kind: aux,
        aux_classes: if aux == AuxKind::None { 0 } else { 4 },
        lambda: 0.01,
        embeddings_trainable: true,
    }
}

fn params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::zeros(cfg, WORDS, TAGS);
    let mut rng = Rng::new(seed);
    for t in p.tensors_mut() {
        *t = rng_uniform(&mut rng, t.rows(), t.cols(), 0.6).unwrap();
    }
    p
}

fn sentence(words: &[usize], tags: &[usize], errs: &[u8], aux: &[usize], source: usize) -> EncodedSentence {
    EncodedSentence {
        word_ids: words.to_vec(),
        pos_ids: tags.to_vec(),
        error_labels: errs.to_vec(),
        aux_labels: aux.to_vec(),
        gold: errs.iter().position(|&e| e == 1).map(|i| i + 1),
        source,
    }
}

fn batch(with_aux: bool) -> Batch {
    let aux = |l: &'static [usize]| if with_aux { l } else { &[][..] };
    let a = sentence(&[3, 6, 2], &[1, 4, 2], &[0, 1, 0], aux(&[3, 0, 2]), 0);
    let b = sentence(&[7, 2, 5, 5], &[2, 3, 1, 4], &[1, 0, 0, 0], aux(&[1, 1, 3, 0]), 1);
    Batch::from_encoded(&[&a, &b], 0).unwrap()
}

fn loss(p: &ModelParams, cfg: &ModelConfig, b: &Batch, lambda: f64) -> f64 {
    model_loss(&model_forward(p, cfg, b).unwrap(), b, lambda).unwrap().total
}

/// Returns (checked entries, failures described).
fn check(aux: AuxKind, lambda: f64, seed: u64) -> (usize, Vec<String>) {
    let cfg = cfg(aux);
    let b = batch(aux != AuxKind::None);
    let mut p = params(&cfg, seed);
    let cache = model_forward(&p, &cfg, &b).unwrap();
    let grads = model_backward(&p, &cfg, &cache, &b, lambda).unwrap();
    let names: Vec<String> = grads.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();

    let mut checked = 0;
    let mut failures = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        for k in 0..analytic[ti].len() {
            let orig = p.tensors()[ti].data()[k];
            p.tensors_mut()[ti].data_mut()[k] = orig + EPS;
            let up = loss(&p, &cfg, &b, lambda);
            p.tensors_mut()[ti].data_mut()[k] = orig - EPS;
            let down = loss(&p, &cfg, &b, lambda);
            p.tensors_mut()[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = analytic[ti][k];
            let diff = (a - numeric).abs();
            let rel = diff / a.abs().max(numeric.abs());
            checked += 1;
            if diff > ABS_FLOOR && rel > REL_TOL {
                failures.push(format!("{name}[{k}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    (checked, failures)
}

#[test]
fn gradients_match_finite_differences_without_aux() {
    let (n, bad) = check(AuxKind::None, 0.0, 1);
    assert!(n > 1000);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn gradients_match_finite_differences_with_pos_aux() {
    for (lambda, seed) in [(0.01, 2), (1.0, 3)] {
        let (_, bad) = check(AuxKind::PosTag, lambda, seed);
        assert!(bad.is_empty(), "lambda {lambda}: {bad:#?}");
    }
}

#[test]
fn gradients_match_finite_differences_with_log_freq_aux() {
    for (lambda, seed) in [(0.01, 4), (0.37, 5)] {
        let (_, bad) = check(AuxKind::LogFreq, lambda, seed);
        assert!(bad.is_empty(), "lambda {lambda}: {bad:#?}");
    }
}

#[test]
fn total_loss_is_error_plus_weighted_aux() {
    let mut rng = Rng::new(99);
    for aux in [AuxKind::PosTag, AuxKind::LogFreq] {
        let cfg = cfg(aux);
        let b = batch(true);
        for seed in 0..10 {
            let p = params(&cfg, seed);
            let cache = model_forward(&p, &cfg, &b).unwrap();
            let lambda = [0.0, 0.01, 1.0][rng.below(3)];
            let l = model_loss(&cache, &b, lambda).unwrap();
            assert_eq!(l.total.to_bits(), (l.error + lambda * l.aux).to_bits());
            assert!(l.aux > 0.0);
        }
    }
}

#[test]
fn zero_lambda_gradients_equal_main_task_gradients() {
    for aux in [AuxKind::PosTag, AuxKind::LogFreq] {
        let with = cfg(aux);
        let without = cfg(AuxKind::None);
        let p = params(&with, 21);
        let mut main_only = p.clone();
        main_only.aux_head = None;

        let b_aux = batch(true);
        let g = model_backward(&p, &with, &model_forward(&p, &with, &b_aux).unwrap(), &b_aux, 0.0).unwrap();
        let b = batch(false);
        let cache = model_forward(&main_only, &without, &b).unwrap();
        let g_main: ModelGrads = model_backward(&main_only, &without, &cache, &b, 0.0).unwrap();

        let shared = g_main.tensors().len();
        for ((name, a), m) in g.named_tensors().into_iter().zip(g_main.tensors()) {
            let same = a.data().iter().zip(m.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{name} differs");
        }
        for t in &g.tensors()[shared..] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }
}
