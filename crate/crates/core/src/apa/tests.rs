use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoders::is_lora_param;
use crate::numcore::gradcheck::relative_error;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn image(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[32, 32, 3], (0..32 * 32 * 3).map(|_| rng.random()).collect()).unwrap()
}

/// Model with nonzero LoRA B factors so every trainable path is live.
fn live_model(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut store = init_model(cfg, seed).unwrap();
    let names: Vec<String> = store
        .trainable_names()
        .filter(|n| n.ends_with("lora_b"))
        .map(String::from)
        .collect();
    for (i, n) in names.iter().enumerate() {
        let shape = store.get(n).unwrap().shape().to_vec();
        store.set_trainable(n, random(&shape, 100 + i as u64, 0.05)).unwrap();
    }
    store
}

#[test]
fn cues_of_constant_and_unit_rows() {
    let v = [0.25, -1.5, 3.0];
    let tap = Tensor::from_rows(&[v.to_vec(), v.to_vec(), v.to_vec()]).unwrap();
    assert_eq!(extract_cues(&tap).unwrap().data(), v);
    let tap = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(extract_cues(&tap).unwrap().data(), [0.5, 0.5]);
    assert!(extract_cues(&Tensor::vector(vec![1.0])).is_err());
}

#[test]
fn cues_match_double_loop_mean() {
    for seed in 0..5 {
        let tap = random(&[16, 64], seed, 2.0);
        let got = extract_cues(&tap).unwrap();
        for d in 0..64 {
            let mut acc = 0.0;
            for n in 0..16 {
                acc += tap.data()[n * 64 + d];
            }
            assert!((got.data()[d] - acc / 16.0).abs() < 1e-12);
        }
    }
}

fn adapter_store(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("apa.w1", w1, true).unwrap();
    s.insert("apa.b1", b1, true).unwrap();
    s.insert("apa.w2", w2, true).unwrap();
    s.insert("apa.b2", b2, true).unwrap();
    s
}

#[test]
fn adapter_zero_and_relu_kill() {
    let zhat = random(&[8], 1, 1.0);
    let zero = adapter_store(
        Tensor::zeros(&[8, 2]),
        Tensor::zeros(&[2]),
        Tensor::zeros(&[2, 8]),
        Tensor::zeros(&[8]),
    );
    assert!(adapt_cues(&zhat, &zero).unwrap().data().iter().all(|&v| v == 0.0));

    // nonnegative cues against strictly negative weights: every hidden unit is dead
    let zhat = Tensor::vector((0..8).map(|i| i as f64 * 0.3).collect());
    let b2 = random(&[8], 4, 1.0);
    let killed = adapter_store(
        Tensor::full(&[8, 2], -0.5),
        Tensor::full(&[2], -0.1),
        random(&[2, 8], 3, 1.0),
        b2.clone(),
    );
    assert_eq!(adapt_cues(&zhat, &killed).unwrap(), b2);
}

#[test]
fn adapter_matches_scalar_oracle() {
    let (d, h) = (64, 16);
    for seed in 0..5 {
        let w1 = random(&[d, h], seed, 0.3);
        let b1 = random(&[h], seed + 10, 0.3);
        let w2 = random(&[h, d], seed + 20, 0.3);
        let b2 = random(&[d], seed + 30, 0.3);
        let zhat = random(&[d], seed + 40, 1.0);
        let s = adapter_store(w1.clone(), b1.clone(), w2.clone(), b2.clone());
        let got = adapt_cues(&zhat, &s).unwrap();

        let mut hidden = vec![0.0; h];
        for (j, hj) in hidden.iter_mut().enumerate() {
            let mut a = b1.data()[j];
            for i in 0..d {
                a += w1.data()[i * h + j] * zhat.data()[i];
            }
            *hj = if a > 0.0 { a } else { 0.0 };
        }
        for k in 0..d {
            let mut o = b2.data()[k];
            for (j, hj) in hidden.iter().enumerate() {
                o += w2.data()[j * d + k] * hj;
            }
            assert!((got.data()[k] - o).abs() < 1e-12);
        }
    }
}

#[test]
fn prompt_lengths_and_order() {
    let mut cfg = ModelConfig::default();
    cfg.apa.prompts = 2;
    let store = init_model(&cfg, 5).unwrap();
    let zt = random(&[64], 9, 1.0);
    let (r, f) = build_prompts(&zt, &store, &cfg).unwrap();
    assert_eq!((r.rows(), f.rows()), (5, 6));
    let pr = store.get("prompt.real").unwrap();
    let pf = store.get("prompt.fake").unwrap();
    let cf = store.get("context.fake").unwrap();
    assert_eq!(r.row(0), pr.row(0));
    assert_eq!(r.row(2), store.get("context.real").unwrap().row(0));
    assert_eq!(f.row(1), pf.row(1));
    assert_eq!(f.row(2), zt.data());
    assert_eq!(f.row(5), cf.row(2));

    let cfg = ModelConfig::default();
    let store = init_model(&cfg, 5).unwrap();
    let (r, f) = build_prompts(&zt, &store, &cfg).unwrap();
    assert_eq!((r.rows(), f.rows()), (11, 12));
}

#[test]
fn config_bounds() {
    let mut cfg = ModelConfig::default();
    cfg.apa.cue_layer = 0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.apa.cue_layer = 5;
    assert!(cfg.validate().is_err());
    cfg.apa.cue_layer = 4;
    cfg.apa.bottleneck = 64;
    assert!(cfg.validate().is_err());
}

#[test]
fn real_anchor_is_shared_and_fake_centre_is_not() {
    let cfg = ModelConfig::default();
    let store = live_model(&cfg, 3);
    let det = Detector::new(&cfg).unwrap();
    let a = det.centres(&image(1), &store).unwrap();
    let b = det.centres(&image(2), &store).unwrap();
    assert!(a.t_r.bit_eq(&b.t_r));
    assert!(a.t_f.max_abs_diff(&b.t_f) > 0.0);
    for t in [&a.z, &a.t_r, &a.t_f] {
        assert!((t.l2_norm() - 1.0).abs() < 1e-6);
    }

    // the cached anchor equals a from-scratch evaluation of [P_r, C_r]
    let (seq_r, _) = build_prompts(&Tensor::zeros(&[64]), &store, &cfg).unwrap();
    let direct = crate::encoders::text_forward(&seq_r, &store, &cfg.encoder).unwrap();
    assert!(direct.bit_eq(&a.t_r));
}

#[test]
fn adaptive_real_prompt_depends_on_the_image() {
    let mut cfg = ModelConfig::default();
    cfg.apa.real_prompt = PromptMode::Adaptive;
    let store = live_model(&cfg, 3);
    let det = Detector::new(&cfg).unwrap();
    let a = det.centres(&image(1), &store).unwrap();
    let b = det.centres(&image(2), &store).unwrap();
    assert!(a.t_r.max_abs_diff(&b.t_r) > 0.0);

    cfg.apa.real_prompt = PromptMode::Static;
    cfg.apa.fake_prompt = PromptMode::Static;
    let det = Detector::new(&cfg).unwrap();
    let a = det.centres(&image(1), &store).unwrap();
    let b = det.centres(&image(2), &store).unwrap();
    assert!(a.t_f.bit_eq(&b.t_f));
}

#[test]
fn fake_centre_sees_only_the_cue_layer() {
    let cfg = ModelConfig::default();
    let store = live_model(&cfg, 3);
    let det = Detector::new(&cfg).unwrap();
    let anchors = det.anchors(&store).unwrap();
    let fwd = det.forward(&image(4), &store, &anchors).unwrap();
    let tap = det.tap(&fwd, 1).unwrap();
    assert!(extract_cues(tap).unwrap().bit_eq(det.cues(&fwd)));
    let zt = adapt_cues(det.cues(&fwd), &store).unwrap();
    assert!(zt.bit_eq(det.adapted(&fwd).unwrap()));
    let (_, seq_f) = build_prompts(&zt, &store, &cfg).unwrap();
    let tf = crate::encoders::text_forward(&seq_f, &store, &cfg.encoder).unwrap();
    assert!(tf.bit_eq(&fwd.centres.t_f));
    assert!(det.tap(&fwd, 5).is_err());
}

fn seeded_grads(seed: u64, z: f64, t_r: f64, t_f: f64) -> CentreGrads {
    CentreGrads {
        z: random(&[64], seed, z),
        t_r: random(&[64], seed + 1, t_r),
        t_f: random(&[64], seed + 2, t_f),
    }
}

#[test]
fn parameter_separation() {
    let cfg = ModelConfig::default();
    let store = live_model(&cfg, 8);
    let det = Detector::new(&cfg).unwrap();
    let anchors = det.anchors(&store).unwrap();
    let fwds: Vec<_> = (0..2)
        .map(|i| det.forward(&image(i), &store, &anchors).unwrap())
        .collect();

    let only_r = [seeded_grads(1, 0.0, 1.0, 0.0), seeded_grads(4, 0.0, 1.0, 0.0)];
    let g = det.backward(&store, &anchors, &fwds, &only_r).unwrap();
    assert!(g["prompt.fake"].data().iter().all(|&v| v == 0.0));
    assert!(g["apa.w1"].data().iter().all(|&v| v == 0.0));
    assert!(g["prompt.real"].l2_norm() > 0.0);

    let only_f = [seeded_grads(1, 0.0, 0.0, 1.0), seeded_grads(4, 0.0, 0.0, 1.0)];
    let g = det.backward(&store, &anchors, &fwds, &only_f).unwrap();
    assert!(g["prompt.real"].data().iter().all(|&v| v == 0.0));
    for name in ["prompt.fake", "apa.w1", "apa.b1", "apa.w2", "apa.b2"] {
        assert!(g[name].l2_norm() > 0.0, "{name}");
    }
    // the cue comes from block 1, so the adapter path reaches its LoRA too
    assert!(g["image.blocks.0.mlp.fc1.lora_a"].l2_norm() > 0.0);
    assert!(g.keys().all(|k| store.is_trainable(k)));
}

#[test]
fn detector_gradients_match_finite_differences() {
    let cfg = ModelConfig::default();
    let store = live_model(&cfg, 2);
    let det = Detector::new(&cfg).unwrap();
    let images = [image(10), image(11)];
    let probes = [seeded_grads(20, 1.0, 1.0, 1.0), seeded_grads(30, 1.0, 1.0, 1.0)];

    let objective = |s: &ParamStore| -> f64 {
        let anchors = det.anchors(s).unwrap();
        images
            .iter()
            .zip(&probes)
            .map(|(img, p)| {
                let c = det.forward(img, s, &anchors).unwrap().centres;
                c.z.dot(&p.z) + c.t_r.dot(&p.t_r) + c.t_f.dot(&p.t_f)
            })
            .sum()
    };

    let anchors = det.anchors(&store).unwrap();
    let fwds: Vec<_> = images
        .iter()
        .map(|img| det.forward(img, &store, &anchors).unwrap())
        .collect();
    let grads = det.backward(&store, &anchors, &fwds, &probes).unwrap();

    let checked = [
        "prompt.real",
        "prompt.fake",
        "apa.w1",
        "apa.b1",
        "apa.w2",
        "apa.b2",
        "image.blocks.0.mlp.fc1.lora_a",
        "image.blocks.3.mlp.fc2.lora_b",
        "text.blocks.1.mlp.fc1.lora_b",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eps = 1e-5;
    for name in checked {
        let base = store.get(name).unwrap().clone();
        let mut coords: Vec<usize> = (0..base.len()).collect();
        coords.shuffle(&mut rng);
        for &c in &coords[..3] {
            let mut s = store.clone();
            let mut t = base.clone();
            t.data_mut()[c] += eps;
            s.set_trainable(name, t.clone()).unwrap();
            let plus = objective(&s);
            t.data_mut()[c] -= 2.0 * eps;
            s.set_trainable(name, t).unwrap();
            let minus = objective(&s);
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[name].data()[c];
            let err = relative_error(analytic, numeric);
            assert!(err < 1e-4, "{name}[{c}]: {analytic} vs {numeric}");
        }
    }
    assert!(grads.keys().filter(|k| is_lora_param(k)).count() == 24);
}

fn permute_patches(img: &Tensor, order: &[usize], patch: usize) -> Tensor {
    let side = 32 / patch;
    let mut out = img.clone();
    for (dst, &src) in order.iter().enumerate() {
        let (dy, dx) = (dst / side * patch, dst % side * patch);
        let (sy, sx) = (src / side * patch, src % side * patch);
        for y in 0..patch {
            for x in 0..patch {
                for ch in 0..3 {
                    out.data_mut()[((dy + y) * 32 + dx + x) * 3 + ch] =
                        img.data()[((sy + y) * 32 + sx + x) * 3 + ch];
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn patch_order_does_not_change_the_fake_sequence(seed in 0u64..1000) {
        let cfg = ModelConfig::default();
        let store = live_model(&cfg, 1);
        let det = Detector::new(&cfg).unwrap();
        let img = image(seed);
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = permute_patches(&img, &order, 8);

        let anchors = det.anchors(&store).unwrap();
        let a = det.forward(&img, &store, &anchors).unwrap();
        let b = det.forward(&shuffled, &store, &anchors).unwrap();
        let (_, fa) = build_prompts(det.adapted(&a).unwrap(), &store, &cfg).unwrap();
        let (_, fb) = build_prompts(det.adapted(&b).unwrap(), &store, &cfg).unwrap();
        prop_assert!(fa.max_abs_diff(&fb) < 1e-12);
        prop_assert!(a.centres.t_f.max_abs_diff(&b.centres.t_f) < 1e-12);
    }
}
