//! The full detector: image tower, adapter and both text prompts, wired
//! into one cached per-sample graph plus one anchor graph for the static
//! categories.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{build_adapter, build_cues, build_sequence, Category, ModelConfig};
use crate::encoders::{build_image_tower, build_text_tower, patchify, tokenize};
use crate::error::{Error, Result};
use crate::numcore::{Feed, Graph, NodeId, ParamStore, Tensor, Values};

const CATEGORIES: [Category; 2] = [Category::Real, Category::Fake];

fn slot(c: Category) -> usize {
    match c {
        Category::Real => 0,
        Category::Fake => 1,
    }
}

#[derive(Clone, Debug)]
struct SampleGraph {
    graph: Graph,
    taps: Vec<NodeId>,
    cues: NodeId,
    adapted: Option<NodeId>,
    z: NodeId,
    /// Text centres of the adaptive categories.
    centres: [Option<NodeId>; 2],
}

#[derive(Clone, Debug)]
struct AnchorGraph {
    graph: Graph,
    /// Text centres of the static categories.
    centres: [Option<NodeId>; 2],
}

/// Image embedding and the two category centres of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Centres {
    pub z: Tensor,
    pub t_r: Tensor,
    pub t_f: Tensor,
}

/// Static centres for one parameter state, shared by every sample.
#[derive(Clone, Debug)]
pub struct Anchors {
    values: Option<Values>,
    centres: [Option<Tensor>; 2],
}

impl Anchors {
    /// The shared centre of `c`, or `None` when `c` is adaptive.
    pub fn centre(&self, c: Category) -> Option<&Tensor> {
        self.centres[slot(c)].as_ref()
    }
}

/// Forward values of one image, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SampleForward {
    values: Values,
    pub centres: Centres,
}

/// Loss gradients with respect to one sample's outputs.
#[derive(Clone, Debug)]
pub struct CentreGrads {
    pub z: Tensor,
    pub t_r: Tensor,
    pub t_f: Tensor,
}

#[derive(Clone, Debug)]
pub struct Detector {
    cfg: ModelConfig,
    sample: SampleGraph,
    anchor: Option<AnchorGraph>,
}

impl Detector {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ctx_rows = [
            tokenize(&cfg.apa.real_context)?.len(),
            tokenize(&cfg.apa.fake_context)?.len(),
        ];
        let enc = &cfg.encoder;

        let mut g = Graph::new();
        let patches = g.input("patches", &[enc.image.patches(), enc.image.patch_pixels()])?;
        let tower = build_image_tower(&mut g, patches, enc)?;
        let cues = build_cues(&mut g, tower.taps[cfg.apa.cue_layer - 1])?;
        let any_adaptive = CATEGORIES.iter().any(|&c| cfg.apa.mode(c).is_adaptive());
        let adapted = if any_adaptive {
            Some(build_adapter(&mut g, cues, enc.width, cfg.apa.bottleneck)?)
        } else {
            None
        };
        let mut centres = [None, None];
        for c in CATEGORIES {
            if cfg.apa.mode(c).is_adaptive() {
                let seq = build_sequence(&mut g, c, adapted, cfg, ctx_rows[slot(c)])?;
                centres[slot(c)] = Some(build_text_tower(&mut g, seq, enc)?);
            }
        }
        let sample = SampleGraph {
            graph: g,
            taps: tower.taps,
            cues,
            adapted,
            z: tower.embedding,
            centres,
        };

        let anchor = if CATEGORIES.iter().all(|&c| cfg.apa.mode(c).is_adaptive()) {
            None
        } else {
            let mut g = Graph::new();
            let mut centres = [None, None];
            for c in CATEGORIES {
                if !cfg.apa.mode(c).is_adaptive() {
                    let seq = build_sequence(&mut g, c, None, cfg, ctx_rows[slot(c)])?;
                    centres[slot(c)] = Some(build_text_tower(&mut g, seq, enc)?);
                }
            }
            Some(AnchorGraph { graph: g, centres })
        };

        Ok(Self {
            cfg: cfg.clone(),
            sample,
            anchor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Evaluates the static centres for the current parameters.
    pub fn anchors(&self, params: &ParamStore) -> Result<Anchors> {
        let Some(a) = &self.anchor else {
            return Ok(Anchors {
                values: None,
                centres: [None, None],
            });
        };
        let values = a.graph.eval(params, &Feed::new())?;
        let centres = a.centres.map(|n| n.map(|n| values.get(n).clone()));
        Ok(Anchors {
            values: Some(values),
            centres,
        })
    }

    /// Runs one `H×W×C` image through the sample graph.
    pub fn forward(&self, image: &Tensor, params: &ParamStore, anchors: &Anchors) -> Result<SampleForward> {
        let patches = patchify(image, &self.cfg.encoder.image)?;
        let feed: Feed = [("patches", &patches)].into_iter().collect();
        let values = self.sample.graph.eval(params, &feed)?;
        let centre = |c: Category| -> Result<Tensor> {
            match (self.sample.centres[slot(c)], anchors.centre(c)) {
                (Some(n), _) => Ok(values.get(n).clone()),
                (None, Some(t)) => Ok(t.clone()),
                (None, None) => Err(Error::Config(alloc::format!(
                    "anchors carry no {} centre",
                    c.key()
                ))),
            }
        };
        let centres = Centres {
            z: values.get(self.sample.z).clone(),
            t_r: centre(Category::Real)?,
            t_f: centre(Category::Fake)?,
        };
        Ok(SampleForward { values, centres })
    }

    /// `(z, T_r, T_f)` for a single image.
    pub fn centres(&self, image: &Tensor, params: &ParamStore) -> Result<Centres> {
        let anchors = self.anchors(params)?;
        Ok(self.forward(image, params, &anchors)?.centres)
    }

    /// Patch features after image block `layer` (1-based).
    pub fn tap<'a>(&self, fwd: &'a SampleForward, layer: usize) -> Result<&'a Tensor> {
        let id = layer
            .checked_sub(1)
            .and_then(|i| self.sample.taps.get(i))
            .ok_or_else(|| {
                Error::Config(alloc::format!(
                    "layer must lie in 1..={}, got {layer}",
                    self.sample.taps.len()
                ))
            })?;
        Ok(fwd.values.get(*id))
    }

    /// Mean-pooled cue vector at the configured cue layer.
    pub fn cues<'a>(&self, fwd: &'a SampleForward) -> &'a Tensor {
        fwd.values.get(self.sample.cues)
    }

    /// Adapter output, when some category is adaptive.
    pub fn adapted<'a>(&self, fwd: &'a SampleForward) -> Option<&'a Tensor> {
        self.sample.adapted.map(|n| fwd.values.get(n))
    }

    /// Gradients of every trainable parameter given per-sample output
    /// gradients. Samples are reduced in order, then the static centres.
    pub fn backward(
        &self,
        params: &ParamStore,
        anchors: &Anchors,
        fwds: &[SampleForward],
        grads: &[CentreGrads],
    ) -> Result<BTreeMap<String, Tensor>> {
        if fwds.len() != grads.len() {
            return Err(Error::InvalidTensor(alloc::format!(
                "{} forwards but {} gradient sets",
                fwds.len(),
                grads.len()
            )));
        }
        let mut total: BTreeMap<String, Tensor> = params
            .trainable_names()
            .map(|n| (String::from(n), Tensor::zeros(params.get(n).expect("listed").shape())))
            .collect();
        let mut anchor_seeds: [Option<Tensor>; 2] = [None, None];
        for (fwd, dg) in fwds.iter().zip(grads) {
            let mut seeds = alloc::vec![(self.sample.z, dg.z.clone())];
            for (c, dt) in [(Category::Real, &dg.t_r), (Category::Fake, &dg.t_f)] {
                match self.sample.centres[slot(c)] {
                    Some(n) => seeds.push((n, dt.clone())),
                    None => match &mut anchor_seeds[slot(c)] {
                        Some(acc) => acc.add_assign(dt),
                        empty => *empty = Some(dt.clone()),
                    },
                }
            }
            let g = self.sample.graph.vjp(&fwd.values, &seeds, params, &[])?;
            accumulate(&mut total, g.params);
        }
        if let (Some(a), Some(values)) = (&self.anchor, &anchors.values) {
            let seeds: Vec<(NodeId, Tensor)> = CATEGORIES
                .iter()
                .filter_map(|&c| Some((a.centres[slot(c)]?, anchor_seeds[slot(c)].take()?)))
                .collect();
            if !seeds.is_empty() {
                let g = a.graph.vjp(values, &seeds, params, &[])?;
                accumulate(&mut total, g.params);
            }
        }
        Ok(total)
    }
}

fn accumulate(total: &mut BTreeMap<String, Tensor>, part: BTreeMap<String, Tensor>) {
    for (name, g) in part {
        match total.get_mut(&name) {
            Some(acc) => acc.add_assign(&g),
            None => {
                total.insert(name, g);
            }
        }
    }
}
