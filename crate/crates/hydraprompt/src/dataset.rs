//! On-disk dataset layout: `<root>/manifest.json`, `real/*.ppm` and
//! `fake_<family>/*.ppm`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hydraprompt_core::pipeline::{Sample, Subset};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppm;
use crate::preprocess::preprocess;
use crate::synth::{generate, GenSpec, Generated, GeneratedSubset};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEntry {
    /// Directory name: `real` or `fake_<family>`.
    pub name: String,
    pub label: u8,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// `train` or `test`.
    pub split: String,
    pub seed: u64,
    pub image_size: usize,
    pub subsets: Vec<SubsetEntry>,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

/// Image file name of the `index`-th image of a subset.
pub fn file_name(index: usize) -> String {
    format!("{index:05}.ppm")
}

/// Stable sample id, unique within a split.
pub fn sample_id(subset: &str, index: usize) -> String {
    format!("{subset}/{index:05}")
}

fn write_split(root: &Path, split: &str, subsets: &[GeneratedSubset], spec: &GenSpec, seed: u64) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for s in subsets {
        let dir = root.join(&s.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, img) in s.images.iter().enumerate() {
            ppm::write_image(&dir.join(file_name(i)), img)?;
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        split: split.into(),
        seed,
        image_size: spec.image_size,
        subsets: subsets
            .iter()
            .map(|s| SubsetEntry {
                name: s.name.clone(),
                label: s.label,
                count: s.images.len(),
            })
            .collect(),
        seen: spec.seen.clone(),
        unseen: spec.unseen.clone(),
    };
    let path = root.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn is_empty_dir(path: &Path) -> Result<bool> {
    match fs::read_dir(path) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Generates `<out>/train` and `<out>/test`. A non-empty `out` is refused
/// unless `force`, in which case the two split directories are replaced.
pub fn gen_dataset(out: &Path, spec: &GenSpec, seed: u64, force: bool) -> Result<Generated> {
    if out.is_file() {
        return Err(Error::Dataset(format!("{} is a file", out.display())));
    }
    if !is_empty_dir(out)? {
        if !force {
            return Err(Error::Dataset(format!(
                "{} is not empty (pass --force to overwrite)",
                out.display()
            )));
        }
        for split in ["train", "test"] {
            let dir = out.join(split);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
    }
    let data = generate(spec, seed)?;
    write_split(&out.join("train"), "train", &data.train, spec, seed)?;
    write_split(&out.join("test"), "test", &data.test, spec, seed)?;
    Ok(data)
}

/// A loaded split, subsets in manifest order.
#[derive(Clone, Debug)]
pub struct Split {
    pub manifest: Manifest,
    pub subsets: Vec<(SubsetEntry, Vec<Sample>)>,
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Dataset(format!(
            "{}: manifest version {} is not supported",
            path.display(),
            m.version
        )));
    }
    for s in &m.subsets {
        if s.label > 1 {
            return Err(Error::Dataset(format!("subset `{}` has label {}", s.name, s.label)));
        }
        let expected = if s.name == "real" { 0 } else { 1 };
        if s.label != expected || (s.name != "real" && !s.name.starts_with("fake_")) {
            return Err(Error::Dataset(format!(
                "subset `{}` with label {} does not follow the real/fake_<family> layout",
                s.name, s.label
            )));
        }
    }
    Ok(m)
}

/// Loads every image of a split, preprocessed to `crop × crop`. The number
/// of images on disk must match the manifest.
pub fn load_split(root: &Path, resize: usize, crop: usize) -> Result<Split> {
    let manifest = read_manifest(root)?;
    let mut subsets = Vec::with_capacity(manifest.subsets.len());
    for entry in &manifest.subsets {
        let dir = root.join(&entry.name);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(&dir, e)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
            .collect();
        files.sort();
        if files.len() != entry.count {
            return Err(Error::Dataset(format!(
                "{}: manifest lists {} images but {} were found",
                dir.display(),
                entry.count,
                files.len()
            )));
        }
        let mut samples = Vec::with_capacity(entry.count);
        for i in 0..entry.count {
            let path = dir.join(file_name(i));
            let img = ppm::read_image(&path)?;
            samples.push(Sample {
                id: sample_id(&entry.name, i),
                image: preprocess(&img, resize, crop)?,
                label: entry.label,
            });
        }
        subsets.push((entry.clone(), samples));
    }
    Ok(Split { manifest, subsets })
}

/// The same samples [`load_split`] would produce, straight from memory.
pub fn samples_in_memory(subsets: &[GeneratedSubset], resize: usize, crop: usize) -> Result<Vec<(SubsetEntry, Vec<Sample>)>> {
    subsets
        .iter()
        .map(|s| {
            let samples = s
                .images
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    Ok(Sample {
                        id: sample_id(&s.name, i),
                        image: preprocess(img, resize, crop)?,
                        label: s.label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let entry = SubsetEntry {
                name: s.name.clone(),
                label: s.label,
                count: s.images.len(),
            };
            Ok((entry, samples))
        })
        .collect()
}

/// All samples of a split, in manifest order.
pub fn flatten(subsets: &[(SubsetEntry, Vec<Sample>)]) -> Vec<Sample> {
    subsets.iter().flat_map(|(_, s)| s.iter().cloned()).collect()
}

/// One evaluation subset per fake family, each paired with the split's
/// real images and named after the family.
pub fn eval_subsets(subsets: &[(SubsetEntry, Vec<Sample>)]) -> Vec<Subset> {
    let real: Vec<Sample> = subsets
        .iter()
        .filter(|(e, _)| e.label == 0)
        .flat_map(|(_, s)| s.iter().cloned())
        .collect();
    subsets
        .iter()
        .filter(|(e, _)| e.label == 1)
        .map(|(e, fakes)| Subset {
            name: e.name.strip_prefix("fake_").unwrap_or(&e.name).to_string(),
            samples: real.iter().chain(fakes).cloned().collect(),
        })
        .collect()
}

/// Number of images per subset name, for summaries.
pub fn counts(subsets: &[(SubsetEntry, Vec<Sample>)]) -> BTreeMap<String, usize> {
    subsets.iter().map(|(e, s)| (e.name.clone(), s.len())).collect()
}
