//! Trains and evaluates the toy detector over several seeds, printing
//! per-family test accuracy.
//!
//! ```text
//! cargo run --release --example toy_bench -- [key=value ...]
//! ```
//!
//! Keys (defaults in brackets): `train` [64] and `test` [100] images per
//! subset, `epochs` [10], `lr` [0.1], `opt` [sgd|adam], `batch` [16],
//! `bank` [968, 0 disables], `real` and `fake` prompt modes
//! [static, adaptive], `mask_fake` [individual|cluster], `seeds` [5].

use std::collections::HashMap;
use std::time::Instant;

use hydraprompt::dataset::{eval_subsets, flatten, samples_in_memory};
use hydraprompt::synth::{generate, Counts, GenSpec};
use hydraprompt_core::pipeline::{evaluate, train, Model, TrainConfig};
use serde::de::DeserializeOwned;

fn main() {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .map(|a| match a.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => panic!("expected key=value, got `{a}`"),
        })
        .collect();
    let num = |k: &str, d: &str| -> f64 { args.get(k).map_or(d, String::as_str).parse().expect(k) };
    let word = |k: &str, d: &str| -> String { args.get(k).cloned().unwrap_or_else(|| d.to_string()) };
    fn enum_of<T: DeserializeOwned>(s: String) -> T {
        serde_json::from_value(serde_json::Value::String(s.clone())).unwrap_or_else(|_| panic!("bad value `{s}`"))
    }

    let n_train = num("train", "64") as usize;
    let spec = GenSpec {
        counts: Counts {
            real_train: n_train,
            fake_train: n_train,
            test: num("test", "100") as usize,
        },
        ..GenSpec::default()
    };
    let bank = num("bank", "968") as usize;
    let mut base = TrainConfig {
        epochs: num("epochs", "10") as usize,
        lr: num("lr", "0.1"),
        optimizer: enum_of(word("opt", "sgd")),
        batch_size: num("batch", "16") as usize,
        bank_capacity: (bank > 0).then_some(bank),
        ..TrainConfig::default()
    };
    base.model.apa.real_prompt = enum_of(word("real", "static"));
    base.model.apa.fake_prompt = enum_of(word("fake", "adaptive"));
    base.loss.mask_fake = enum_of(word("mask_fake", "individual"));
    let unseen: Vec<&str> = spec.unseen.iter().map(|f| f.trim_start_matches("fake_")).collect();

    for seed in 1..=num("seeds", "5") as u64 {
        let start = Instant::now();
        let data = generate(&spec, seed).expect("generator self-check");
        let train_set = flatten(&samples_in_memory(&data.train, 32, 32).unwrap());
        let test = eval_subsets(&samples_in_memory(&data.test, 32, 32).unwrap());
        let cfg = TrainConfig { seed, ..base.clone() };
        let ck = train(&cfg, &train_set, |_| {}).unwrap();
        let report = evaluate(&Model::from_checkpoint(&ck).unwrap(), &test).unwrap();
        let accs: Vec<String> = report.subsets.iter().map(|s| format!("{}={:.1}", s.name, s.acc)).collect();
        println!(
            "seed {seed}: mean {:.2} unseen {:.2} [{}] {:.1}s",
            report.mean_acc,
            report.mean_acc_of(&unseen).unwrap(),
            accs.join(" "),
            start.elapsed().as_secs_f64()
        );
    }
}
