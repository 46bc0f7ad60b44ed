//! Phantom corpora on disk: images, label maps and a split manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spgan_core::augbench::{SegItem, Split};
use spgan_core::datagen::{class_names, generate_phantom, PhantomSpec, Texture};
use spgan_core::labelkit::{extract_sketch, CannyThresholds, LabelMap};
use spgan_core::Image;

use crate::error::{read, write, Error, Result};
use crate::io::{load_image, load_label, save_image, save_label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    /// Paths relative to the corpus directory.
    pub image: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    /// Spec of the first item; item `i` uses seed `spec.seed + i`.
    pub spec: PhantomSpec,
    pub class_names: Vec<String>,
    pub test_fraction: f64,
    pub items: Vec<CorpusItem>,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |i| i.split == split)
    }
}

/// Number of test items: the last `⌈n·test_fraction⌉`.
pub fn test_count(n: usize, test_fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Usage(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    Ok(((n as f64 * test_fraction).ceil() as usize).min(n.saturating_sub(1)))
}

/// Write `n` phantoms under `out`. Reruns produce identical bytes.
pub fn generate_corpus(n: usize, spec: &PhantomSpec, test_fraction: f64, out: &Path) -> Result<CorpusManifest> {
    if n == 0 {
        return Err(Error::Usage("corpus size must be at least 1".into()));
    }
    spec.validate()?;
    let tests = test_count(n, test_fraction)?;
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let seed = spec.seed + i as u64;
        let (label, image) = generate_phantom(&spec.with_seed(seed))?;
        let id = format!("phantom_{i:05}");
        let image_path = format!("images/{id}.png");
        let label_path = format!("labels/{id}.png");
        save_image(&out.join(&image_path), &image)?;
        save_label(&out.join(&label_path), &label)?;
        items.push(CorpusItem {
            id,
            seed,
            split: if i + tests >= n { Split::Test } else { Split::Train },
            image: image_path,
            label: label_path,
        });
    }
    let manifest = CorpusManifest {
        spec: spec.clone(),
        class_names: class_names(spec.num_structures),
        test_fraction,
        items,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write(&out.join("manifest.json"), &bytes)?;
    Ok(manifest)
}

pub struct Corpus {
    pub manifest: CorpusManifest,
    pub pairs: Vec<(LabelMap, Image)>,
}

impl Corpus {
    /// Pairs of one split.
    pub fn split_pairs(&self, split: Split) -> Vec<(LabelMap, Image)> {
        self.manifest
            .items
            .iter()
            .zip(&self.pairs)
            .filter(|(i, _)| i.split == split)
            .map(|(_, p)| p.clone())
            .collect()
    }

    /// Items for the segmentation benchmark, with sketches extracted.
    pub fn seg_items(&self, canny: CannyThresholds) -> Result<Vec<SegItem>> {
        self.manifest
            .items
            .iter()
            .zip(&self.pairs)
            .map(|(item, (label, image))| {
                Ok(SegItem {
                    id: item.image.clone(),
                    split: item.split,
                    image: image.clone(),
                    label: label.clone(),
                    sketch: extract_sketch(image, canny.clone())?,
                })
            })
            .collect()
    }
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join("manifest.json");
    let manifest: CorpusManifest =
        serde_json::from_slice(&read(&path)?).map_err(|e| Error::format(path.display().to_string(), "manifest", e.to_string()))?;
    let mut pairs = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let label = load_label(&dir.join(&item.label))?;
        let image = load_image(&dir.join(&item.image))?;
        if label.class_names() != manifest.class_names.as_slice() {
            return Err(Error::format(item.label.clone(), "class_names", "differs from the corpus manifest"));
        }
        if (label.width(), label.height()) != (image.width(), image.height()) {
            return Err(Error::format(item.image.clone(), "width", "image and label sizes differ"));
        }
        pairs.push((label, image));
    }
    Ok(Corpus { manifest, pairs })
}

/// Phantom corpus for the segmentation benchmark when none is given:
/// 64 px, two structures, low-speckle texture, 24 training and 8 test items.
pub fn default_seg_spec() -> (usize, PhantomSpec, f64) {
    let mut spec = PhantomSpec::new(5000, 64, 2);
    spec.texture = Texture {
        grain: 1.5,
        speckle: 0.04,
        ..Texture::default()
    };
    (32, spec, 0.25)
}

/// The default benchmark corpus built in memory.
pub fn default_seg_corpus() -> Result<Corpus> {
    let (n, spec, tf) = default_seg_spec();
    let tests = test_count(n, tf)?;
    let mut items = Vec::with_capacity(n);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let seed = spec.seed + i as u64;
        pairs.push(generate_phantom(&spec.with_seed(seed))?);
        let id = format!("phantom_{i:05}");
        items.push(CorpusItem {
            image: format!("images/{id}.png"),
            label: format!("labels/{id}.png"),
            id,
            seed,
            split: if i + tests >= n { Split::Test } else { Split::Train },
        });
    }
    Ok(Corpus {
        manifest: CorpusManifest {
            class_names: class_names(spec.num_structures),
            spec,
            test_fraction: tf,
            items,
        },
        pairs,
    })
}
