//! Finite-difference check of every loss term through the whole detector.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::apa::{init_model, CentreGrads, Detector, ModelConfig};
use crate::error::Result;
use crate::numcore::gradcheck::relative_error;
use crate::numcore::{ParamStore, Tensor};
use crate::objectives::{BatchObjective, LossConfig, LossTerm, MemoryBank};
use crate::rng::{gaussian, named_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelCheckConfig {
    pub seed: u64,
    pub batch: usize,
    /// Coordinates probed per trainable tensor.
    pub coords_per_param: usize,
    pub epsilon: f64,
    /// Detached bank rows added to the image contrast set.
    pub bank_rows: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for ModelCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 8,
            coords_per_param: 2,
            epsilon: 1e-5,
            bank_rows: 8,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: LossTerm,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub probed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckReport {
    pub terms: Vec<TermCheck>,
    pub params: usize,
}

impl ModelCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.terms.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

const TERMS: [LossTerm; 6] = [
    LossTerm::ScImage,
    LossTerm::ScText,
    LossTerm::Sc,
    LossTerm::Align,
    LossTerm::Cls,
    LossTerm::Total,
];

struct Setup<'a> {
    detector: &'a Detector,
    images: &'a [Tensor],
    objective: &'a BatchObjective,
    width: usize,
}

impl Setup<'_> {
    fn outputs(&self, params: &ParamStore) -> Result<(Tensor, Tensor, Tensor, crate::apa::Anchors, Vec<crate::apa::SampleForward>)> {
        let anchors = self.detector.anchors(params)?;
        let fwds = self
            .images
            .iter()
            .map(|im| self.detector.forward(im, params, &anchors))
            .collect::<Result<Vec<_>>>()?;
        let b = fwds.len();
        let stack = |f: fn(&crate::apa::Centres) -> &Tensor| {
            let data = fwds.iter().flat_map(|w| f(&w.centres).data().iter().copied()).collect();
            Tensor::new(&[b, self.width], data)
        };
        Ok((stack(|c| &c.z)?, stack(|c| &c.t_r)?, stack(|c| &c.t_f)?, anchors, fwds))
    }

    fn term_values(&self, params: &ParamStore) -> Result<BTreeMap<LossTerm, f64>> {
        let (z, tr, tf, _, _) = self.outputs(params)?;
        self.objective.values(&z, &tr, &tf)
    }
}

/// Random images, alternating labels and nonzero LoRA `B` factors, then
/// analytic vs. central-difference gradients of each loss term.
pub fn check_model(cfg: &ModelCheckConfig) -> Result<ModelCheckReport> {
    let mut params = init_model(&cfg.model, cfg.seed)?;
    let lora_b: Vec<String> = params
        .trainable_names()
        .filter(|n| n.ends_with(".lora_b"))
        .map(String::from)
        .collect();
    for name in &lora_b {
        let shape = params.get(name).expect("listed").shape().to_vec();
        params.set_trainable(name, gaussian(cfg.seed, &alloc::format!("check.{name}"), &shape, 0.05))?;
    }

    let img = &cfg.model.encoder.image;
    let mut rng = named_rng(cfg.seed, "check.images");
    let images: Vec<Tensor> = (0..cfg.batch)
        .map(|_| {
            let n = img.image_size * img.image_size * img.channels;
            Tensor::new(&[img.image_size, img.image_size, img.channels], (0..n).map(|_| rng.random()).collect())
        })
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = (0..cfg.batch).map(|i| [0, 1, 0, 0, 1, 1, 0, 1][i % 8]).collect();

    let width = cfg.model.encoder.width;
    let detector = Detector::new(&cfg.model)?;
    let bank = if cfg.bank_rows > 0 {
        let mut bank = MemoryBank::new(cfg.bank_rows, width)?;
        let mut rows = gaussian(cfg.seed, "check.bank", &[cfg.bank_rows, width], 1.0);
        for r in 0..cfg.bank_rows {
            let norm = libm::sqrt(rows.row(r).iter().map(|v| v * v).sum::<f64>());
            rows.data_mut()[r * width..(r + 1) * width].iter_mut().for_each(|v| *v /= norm);
        }
        let bank_labels: Vec<u8> = (0..cfg.bank_rows).map(|i| (i % 2) as u8).collect();
        bank.push(&rows, &bank_labels)?;
        Some(bank)
    } else {
        None
    };
    let objective = BatchObjective::new(&labels, width, bank.as_ref(), &cfg.loss)?;
    let setup = Setup {
        detector: &detector,
        images: &images,
        objective: &objective,
        width,
    };

    let (z, tr, tf, anchors, fwds) = setup.outputs(&params)?;
    let mut analytic = BTreeMap::new();
    for term in TERMS {
        let (_, g) = objective.run_term(term, &z, &tr, &tf, 0)?;
        let row = |t: &Tensor, i: usize| Tensor::vector(t.row(i).to_vec());
        let seeds: Vec<CentreGrads> = (0..cfg.batch)
            .map(|i| CentreGrads {
                z: row(&g.z, i),
                t_r: row(&g.t_r, i),
                t_f: row(&g.t_f, i),
            })
            .collect();
        analytic.insert(term, detector.backward(&params, &anchors, &fwds, &seeds)?);
    }

    let mut checks: BTreeMap<LossTerm, TermCheck> = TERMS
        .iter()
        .map(|&t| {
            let c = TermCheck {
                term: t,
                max_rel_error: 0.0,
                worst_param: String::new(),
                probed: 0,
            };
            (t, c)
        })
        .collect();
    let names: Vec<String> = params.trainable_names().map(String::from).collect();
    let mut pick = named_rng(cfg.seed, "check.coords");
    for name in &names {
        let base = params.get(name).expect("listed").clone();
        let k = cfg.coords_per_param.min(base.len());
        for c in sample(&mut pick, base.len(), k) {
            let mut probe = params.clone();
            let mut eval_at = |delta: f64| -> Result<BTreeMap<LossTerm, f64>> {
                let mut t = base.clone();
                t.data_mut()[c] += delta;
                probe.set_trainable(name, t)?;
                setup.term_values(&probe)
            };
            let plus = eval_at(cfg.epsilon)?;
            let minus = eval_at(-cfg.epsilon)?;
            for term in TERMS {
                let numeric = (plus[&term] - minus[&term]) / (2.0 * cfg.epsilon);
                let a = analytic[&term][name].data()[c];
                let err = relative_error(a, numeric);
                let check = checks.get_mut(&term).expect("all terms present");
                check.probed += 1;
                if err >= check.max_rel_error {
                    check.max_rel_error = err;
                    check.worst_param = alloc::format!("{name}[{c}]");
                }
            }
        }
    }
    Ok(ModelCheckReport {
        terms: checks.into_values().collect(),
        params: names.len(),
    })
}
