//! Synthetic asymmetric-forgery images.
//!
//! Real images come from one smooth, low-frequency texture distribution.
//! Each fake family starts from a fresh real-style base and adds its own
//! procedural artifact, so fakes are scattered around a compact real class.
//! Pixels are quantized to 8 bits at generation time, so writing and
//! re-reading a pixmap is lossless.

use std::f64::consts::PI;

use hydraprompt_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealSpec {
    /// Range of the per-channel base colour.
    pub base_low: f64,
    pub base_high: f64,
    /// Plane waves summed into the texture.
    pub waves: usize,
    /// Highest wave frequency, in cycles per image side.
    pub max_cycles: f64,
    /// Amplitude of each wave.
    pub amplitude: f64,
}

impl Default for RealSpec {
    fn default() -> Self {
        Self {
            base_low: 0.4,
            base_high: 0.6,
            waves: 3,
            max_cycles: 1.5,
            amplitude: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    /// Alternating ±amplitude grid with the given cell size.
    Checkerboard { cell: usize },
    /// Plane wave with a period between the bounds (pixels), random angle.
    Sinusoid { min_period: f64, max_period: f64 },
    /// Block averaging plus a per-block quantization error in ±amplitude/2.
    Blocky { block: usize },
    /// Straight edges with decaying oscillation on both sides.
    Ringing { edges: usize, period: f64, decay: f64 },
    /// Pixels forced to black or white.
    Salt { density: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub name: String,
    pub amplitude: f64,
    pub artifact: Artifact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Counts {
    pub real_train: usize,
    pub fake_train: usize,
    /// Per subset, real and each fake family alike.
    pub test: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self {
            real_train: 200,
            fake_train: 200,
            test: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub image_size: usize,
    pub real: RealSpec,
    pub families: Vec<Family>,
    /// Families present in training.
    pub seen: Vec<String>,
    /// Families held out for testing only.
    pub unseen: Vec<String>,
    /// Every fake family's mean high-frequency energy must exceed the real
    /// mean by at least this relative margin.
    pub hf_margin: f64,
    pub counts: Counts,
}

impl Default for GenSpec {
    fn default() -> Self {
        let fam = |name: &str, amplitude, artifact| Family {
            name: name.into(),
            amplitude,
            artifact,
        };
        Self {
            image_size: 32,
            real: RealSpec::default(),
            families: vec![
                fam("checker", 0.2, Artifact::Checkerboard { cell: 1 }),
                fam("sinusoid", 0.24, Artifact::Sinusoid { min_period: 2.5, max_period: 4.0 }),
                fam("blocky", 0.3, Artifact::Blocky { block: 4 }),
                fam("ringing", 0.6, Artifact::Ringing { edges: 2, period: 2.5, decay: 3.0 }),
                fam("salt", 1.0, Artifact::Salt { density: 0.1 }),
            ],
            seen: vec!["checker".into(), "sinusoid".into(), "blocky".into()],
            unseen: vec!["ringing".into(), "salt".into()],
            hf_margin: 0.5,
            counts: Counts::default(),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.families.len() < 3 {
            return Err(Error::Config(format!(
                "need at least 3 fake families, got {}",
                self.families.len()
            )));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        let mut names: Vec<&str> = self.families.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("family names must be unique".into()));
        }
        for f in &self.families {
            if !(f.amplitude.is_finite() && f.amplitude > 0.0) {
                return Err(Error::Config(format!("family `{}` needs a positive amplitude", f.name)));
            }
            if f.name.is_empty() || !f.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return Err(Error::Config(format!("family name `{}` must be alphanumeric", f.name)));
            }
        }
        for n in self.seen.iter().chain(&self.unseen) {
            if self.family(n).is_none() {
                return Err(Error::Config(format!("unknown family `{n}`")));
            }
        }
        if self.seen.iter().any(|s| self.unseen.contains(s)) {
            return Err(Error::Config("seen and unseen families overlap".into()));
        }
        if self.seen.is_empty() {
            return Err(Error::Config("at least one family must be seen in training".into()));
        }
        let c = &self.counts;
        if c.real_train == 0 || c.fake_train == 0 || c.test == 0 {
            return Err(Error::Config("every subset needs at least one image".into()));
        }
        Ok(())
    }

    pub fn family(&self, name: &str) -> Option<&Family> {
        self.families.iter().find(|f| f.name == name)
    }
}

/// Generator whose stream depends only on `(seed, key)`.
pub fn sample_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut stream = 0xcbf2_9ce4_8422_2325u64;
    for b in key.bytes() {
        stream ^= u64::from(b);
        stream = stream.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Smooth texture: base colour plus a few low-frequency plane waves.
pub fn real_image(spec: &RealSpec, size: usize, rng: &mut impl Rng) -> Tensor {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(spec.base_low..=spec.base_high));
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..spec.waves)
        .map(|_| {
            let angle = rng.random_range(0.0..PI);
            let cycles = rng.random_range(0.25..=spec.max_cycles);
            let phase = rng.random_range(0.0..2.0 * PI);
            let gain: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
            let k = 2.0 * PI * cycles / size as f64;
            (k * angle.cos(), k * angle.sin(), phase, gain)
        })
        .collect();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            for (c, b) in base.iter().enumerate() {
                let mut v = *b;
                for (kx, ky, phase, gain) in &waves {
                    v += spec.amplitude * gain[c] * (kx * x as f64 + ky * y as f64 + phase).sin();
                }
                data.push(v);
            }
        }
    }
    Tensor::new(&[size, size, 3], data).expect("size is positive")
}

/// A real-style base with `family`'s artifact applied.
pub fn fake_image(real: &RealSpec, family: &Family, size: usize, rng: &mut impl Rng) -> Tensor {
    let mut img = real_image(real, size, rng);
    let a = family.amplitude;
    let px = img.data_mut();
    match &family.artifact {
        Artifact::Checkerboard { cell } => {
            let cell = (*cell).max(1);
            let (oy, ox) = (rng.random_range(0..2 * cell), rng.random_range(0..2 * cell));
            for y in 0..size {
                for x in 0..size {
                    let s = if ((y + oy) / cell + (x + ox) / cell) % 2 == 0 { a } else { -a };
                    px[(y * size + x) * 3..][..3].iter_mut().for_each(|v| *v += s);
                }
            }
        }
        Artifact::Sinusoid { min_period, max_period } => {
            let period = rng.random_range(*min_period..=*max_period);
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / period;
            for y in 0..size {
                for x in 0..size {
                    let s = a * (k * (angle.cos() * x as f64 + angle.sin() * y as f64) + phase).sin();
                    px[(y * size + x) * 3..][..3].iter_mut().for_each(|v| *v += s);
                }
            }
        }
        Artifact::Blocky { block } => {
            let block = (*block).max(1);
            let src = px.to_vec();
            for by in (0..size).step_by(block) {
                for bx in (0..size).step_by(block) {
                    let err = a * (rng.random::<f64>() - 0.5);
                    for c in 0..3 {
                        let (mut sum, mut n) = (0.0, 0.0);
                        for y in by..(by + block).min(size) {
                            for x in bx..(bx + block).min(size) {
                                sum += src[(y * size + x) * 3 + c];
                                n += 1.0;
                            }
                        }
                        let v = sum / n + err;
                        for y in by..(by + block).min(size) {
                            for x in bx..(bx + block).min(size) {
                                px[(y * size + x) * 3 + c] = v;
                            }
                        }
                    }
                }
            }
        }
        Artifact::Ringing { edges, period, decay } => {
            for _ in 0..*edges {
                let angle = rng.random_range(0.0..2.0 * PI);
                let (nx, ny) = (angle.cos(), angle.sin());
                let (cx, cy) = (rng.random_range(0.3..0.7) * size as f64, rng.random_range(0.3..0.7) * size as f64);
                for y in 0..size {
                    for x in 0..size {
                        let d = (x as f64 - cx) * nx + (y as f64 - cy) * ny;
                        let step = if d >= 0.0 { 0.5 * a } else { -0.5 * a };
                        let ring = a * (PI * d / period * 2.0).sin() * (-d.abs() / decay).exp();
                        px[(y * size + x) * 3..][..3].iter_mut().for_each(|v| *v += step + ring);
                    }
                }
            }
        }
        Artifact::Salt { density } => {
            for p in 0..size * size {
                if rng.random::<f64>() < *density {
                    let v = if rng.random::<bool>() { a.min(1.0) } else { 1.0 - a.min(1.0) };
                    px[p * 3..][..3].iter_mut().for_each(|c| *c = v);
                }
            }
        }
    }
    img
}

/// Clamps to `[0, 1]` and rounds to the 8-bit grid.
pub fn quantize(img: &mut Tensor) {
    for v in img.data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

/// Mean squared difference between horizontally and vertically adjacent
/// pixels, averaged over channels.
pub fn hf_energy(img: &Tensor) -> f64 {
    let s = img.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let px = img.data();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = px[(y * w + x) * c + ch];
                if x + 1 < w {
                    sum += (px[(y * w + x + 1) * c + ch] - v).powi(2);
                    n += 1;
                }
                if y + 1 < h {
                    sum += (px[((y + 1) * w + x) * c + ch] - v).powi(2);
                    n += 1;
                }
            }
        }
    }
    sum / n.max(1) as f64
}

/// One generated image.
pub fn generate_one(spec: &GenSpec, seed: u64, split: &str, subset: &str, index: usize) -> Result<Tensor> {
    let mut rng = sample_rng(seed, &format!("{split}/{subset}/{index}"));
    let mut img = match subset.strip_prefix("fake_") {
        None if subset == "real" => real_image(&spec.real, spec.image_size, &mut rng),
        Some(name) => {
            let fam = spec
                .family(name)
                .ok_or_else(|| Error::Config(format!("unknown family `{name}`")))?;
            fake_image(&spec.real, fam, spec.image_size, &mut rng)
        }
        None => return Err(Error::Config(format!("unknown subset `{subset}`"))),
    };
    quantize(&mut img);
    Ok(img)
}

/// Images of one subset of a split.
#[derive(Clone, Debug)]
pub struct GeneratedSubset {
    pub name: String,
    pub label: u8,
    pub images: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub train: Vec<GeneratedSubset>,
    pub test: Vec<GeneratedSubset>,
    /// Mean high-frequency energy per subset name, over both splits.
    pub hf_energy: Vec<(String, f64)>,
}

/// Generates both splits in memory and runs the energy self-check.
pub fn generate(spec: &GenSpec, seed: u64) -> Result<Generated> {
    spec.validate()?;
    let subset = |split: &str, name: String, label: u8, n: usize| -> Result<GeneratedSubset> {
        let images = (0..n)
            .map(|i| generate_one(spec, seed, split, &name, i))
            .collect::<Result<_>>()?;
        Ok(GeneratedSubset { name, label, images })
    };
    let mut train = vec![subset("train", "real".into(), 0, spec.counts.real_train)?];
    for f in &spec.seen {
        train.push(subset("train", format!("fake_{f}"), 1, spec.counts.fake_train)?);
    }
    let mut test = vec![subset("test", "real".into(), 0, spec.counts.test)?];
    for f in spec.seen.iter().chain(&spec.unseen) {
        test.push(subset("test", format!("fake_{f}"), 1, spec.counts.test)?);
    }

    let mut energy: Vec<(String, f64, usize)> = Vec::new();
    for s in train.iter().chain(&test) {
        let total: f64 = s.images.iter().map(hf_energy).sum();
        match energy.iter_mut().find(|e| e.0 == s.name) {
            Some(e) => {
                e.1 += total;
                e.2 += s.images.len();
            }
            None => energy.push((s.name.clone(), total, s.images.len())),
        }
    }
    let hf: Vec<(String, f64)> = energy.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect();
    let real = hf.iter().find(|e| e.0 == "real").map(|e| e.1).unwrap_or(0.0);
    for (name, e) in &hf {
        if name != "real" && *e < real * (1.0 + spec.hf_margin) {
            return Err(Error::SelfCheck(format!(
                "`{name}` high-frequency energy {e:.6} is within {:.0}% of real {real:.6}",
                100.0 * spec.hf_margin
            )));
        }
    }
    Ok(Generated {
        train,
        test,
        hf_energy: hf,
    })
}
