//! Seeded synthetic worlds with known structure.
//!
//! Every class has a center direction, three subtype directions and shares
//! a small set of scene (background) directions with the other classes.
//! Each image shows one primary object of its class plus up to two smaller
//! objects, none overlapping. Grid patches mix the objects they cover with
//! the image's scene direction; box crops carry the object plus scene
//! leakage that grows as the box gets less clear.
//!
//! Every nuisance amplitude is proportional to `noise_sigma`, so at
//! `noise_sigma = 0` an object cell equals its class center exactly and
//! classes are perfectly separable.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AnnotatedDataset, BBox, ClassInfo, EmbeddingBundle, ImageRecord, PromptTemplate};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::index::{PatchKey, Region};
use crate::{BBoxId, ClassId, ImageId};

pub const IMAGE_WIDTH: u32 = 640;
pub const IMAGE_HEIGHT: u32 = 480;
pub const SUBTYPES: usize = 3;
pub const SCENES: usize = 6;

const GREEK: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu",
    "xi", "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// One synonym is ambiguous; the other words lean only slightly.
    #[default]
    Standard,
    /// Every word leans toward a neighbouring class while box crops are
    /// cleaner than in `Standard`.
    TextAmbiguous,
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "standard" | "a" => Ok(Self::Standard),
            "text_ambiguous" | "b" => Ok(Self::TextAmbiguous),
            other => Err(Error::InvalidConfig(format!("unknown synth mode `{other}`"))),
        }
    }
}

/// Nuisance multipliers, each applied as `noise_sigma * kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knobs {
    /// Subtype offset of an object's appearance.
    pub subtype: f64,
    /// Scene blending of an unclear object in grid patches.
    pub patch_blur: f64,
    /// Scene leakage into an unclear box crop.
    pub crop_leak: f64,
    /// Pull of an ambiguous word toward the next class.
    pub ambiguity: f64,
    /// Pull of every other word toward the next class.
    pub text_bias: f64,
    /// Scene component of every text prompt.
    pub text_scene: f64,
}

impl Knobs {
    pub fn for_mode(mode: SynthMode) -> Self {
        match mode {
            SynthMode::Standard => Self {
                subtype: 10.0,
                patch_blur: 5.0,
                crop_leak: 60.0,
                ambiguity: 12.0,
                text_scene: 4.0,
                text_bias: 3.0,
            },
            SynthMode::TextAmbiguous => Self {
                crop_leak: 10.0,
                ..Self::for_mode(SynthMode::Standard)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub images_per_class: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: SynthMode,
    #[serde(default)]
    pub knobs: Option<Knobs>,
    #[serde(default)]
    pub prompt_template: PromptTemplate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            images_per_class: 50,
            dim: 64,
            noise_sigma: 0.1,
            seed: 0,
            mode: SynthMode::Standard,
            knobs: None,
            prompt_template: PromptTemplate::default(),
        }
    }
}

impl SynthConfig {
    pub fn knobs(&self) -> Knobs {
        self.knobs.clone().unwrap_or_else(|| Knobs::for_mode(self.mode))
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.dim < 8 {
            return Err(Error::InvalidConfig(format!("dim must be >= 8, got {}", self.dim)));
        }
        if self.images_per_class == 0 {
            return Err(Error::InvalidConfig("images_per_class must be >= 1".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub class_id: ClassId,
    pub subtype: usize,
    /// In `[0, 1)`; 1 is perfectly clear.
    pub clarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Unit class centers, indexed by class id.
    pub centers: Vec<Vec<f64>>,
    pub subtype_dirs: Vec<Vec<Vec<f64>>>,
    pub scene_dirs: Vec<Vec<f64>>,
    pub scene_of: BTreeMap<ImageId, usize>,
    pub objects: BTreeMap<BBoxId, ObjectTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub dataset: AnnotatedDataset,
    pub bundle: EmbeddingBundle,
    pub truth: GroundTruth,
}

pub fn class_name(c: usize) -> String {
    GREEK.get(c).map_or_else(|| format!("class{c}"), |s| (*s).to_owned())
}

/// Word list of class `c`: canonical name, three plain synonyms and one
/// ambiguous synonym, in that order.
pub fn class_words(c: usize) -> Vec<String> {
    let name = class_name(c);
    ["", " object", " thing", "-like"]
        .iter()
        .map(|suffix| format!("{name}{suffix}"))
        .collect()
}

const AMBIGUOUS_WORD: usize = 3;

struct Basis {
    centers: Vec<Vec<f64>>,
    subtypes: Vec<Vec<Vec<f64>>>,
    scenes: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Orthonormal while the directions fit in `d`, random unit vectors after.
fn basis(rng: &mut ChaCha8Rng, n_classes: usize, d: usize) -> Basis {
    let total = n_classes * (1 + SUBTYPES) + SCENES;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(total);
    while dirs.len() < total {
        let mut v = gaussian(rng, d);
        if dirs.len() < d {
            for u in &dirs {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            if v.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
                continue;
            }
        }
        dirs.push(unit(v));
    }
    let mut it = dirs.into_iter();
    let centers = it.by_ref().take(n_classes).collect();
    let subtypes = (0..n_classes).map(|_| it.by_ref().take(SUBTYPES).collect()).collect();
    let scenes = it.collect();
    Basis { centers, subtypes, scenes }
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    out.iter_mut().zip(x).for_each(|(o, v)| *o += a * v);
}

/// Cell bounds along one axis: equal integer widths, the last cell takes the remainder.
fn cell_span(len: u32, g: u8, i: u8) -> (f64, f64) {
    let w = len / u32::from(g);
    let lo = w * u32::from(i);
    let hi = if i + 1 == g { len } else { lo + w };
    (f64::from(lo), f64::from(hi))
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn intersects(a: &BBox, b: &BBox) -> bool {
    overlap((a.x, a.x + a.w), (b.x, b.x + b.w)) > 0.0 && overlap((a.y, a.y + a.h), (b.y, b.y + b.h)) > 0.0
}

fn sample_box(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (f64, f64, f64, f64) {
    let w = (rng.random_range(lo..hi) * f64::from(IMAGE_WIDTH)).round();
    let h = (rng.random_range(lo..hi) * f64::from(IMAGE_HEIGHT)).round();
    let x = f64::from(rng.random_range(0..=IMAGE_WIDTH - w as u32));
    let y = f64::from(rng.random_range(0..=IMAGE_HEIGHT - h as u32));
    (x, y, w, h)
}

fn to_ev(v: &[f64]) -> Result<EmbeddingVector> {
    EmbeddingVector::from_f64(&unit(v.to_vec()))
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let d = config.dim;
    let sigma = config.noise_sigma;
    let knobs = config.knobs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b = basis(&mut rng, config.n_classes, d);

    let classes: Vec<ClassInfo> = (0..config.n_classes)
        .map(|c| ClassInfo::new(c as ClassId, class_name(c), class_words(c)))
        .collect();

    let mut images = Vec::new();
    let mut bboxes: Vec<BBox> = Vec::new();
    let mut scene_of = BTreeMap::new();
    let mut objects = BTreeMap::new();
    let mut bundle = EmbeddingBundle::new(d)?;
    let mut next_box: BBoxId = 1;

    let appearance = |c: usize, s: usize| {
        let mut a = b.centers[c].clone();
        axpy(&mut a, sigma * knobs.subtype, &b.subtypes[c][s]);
        a
    };

    for n in 0..config.n_classes * config.images_per_class {
        let image_id = n as ImageId + 1;
        let primary = n / config.images_per_class;
        let scene = rng.random_range(0..SCENES);
        let omega = &b.scenes[scene];

        let mut placed: Vec<(BBox, ObjectTruth)> = Vec::new();
        let (x, y, w, h) = sample_box(&mut rng, 0.25, 0.7);
        let truth = ObjectTruth {
            class_id: primary as ClassId,
            subtype: rng.random_range(0..SUBTYPES),
            clarity: rng.random::<f64>(),
        };
        placed.push((BBox { id: 0, image_id, class_id: primary as ClassId, x, y, w, h }, truth));
        for _ in 0..rng.random_range(0..=2usize) {
            let class_id = rng.random_range(0..config.n_classes) as ClassId;
            let truth = ObjectTruth {
                class_id,
                subtype: rng.random_range(0..SUBTYPES),
                clarity: rng.random::<f64>(),
            };
            for _ in 0..10 {
                let (x, y, w, h) = sample_box(&mut rng, 0.24, 0.32);
                let cand = BBox { id: 0, image_id, class_id, x, y, w, h };
                if placed.iter().all(|(p, _)| !intersects(p, &cand)) {
                    placed.push((cand, truth));
                    break;
                }
            }
        }

        // Observed object vectors: appearance blurred toward the scene.
        let mut seen_in_patch = Vec::with_capacity(placed.len());
        for (bb, t) in placed.iter_mut() {
            bb.id = next_box;
            next_box += 1;
            let a = appearance(t.class_id as usize, t.subtype);
            let blur = (sigma * knobs.patch_blur * (1.0 - t.clarity)).min(1.0);
            let mut p: Vec<f64> = a.iter().map(|v| v * (1.0 - blur)).collect();
            axpy(&mut p, blur, omega);
            seen_in_patch.push(p);

            let leak = (sigma * knobs.crop_leak * (1.0 - t.clarity)).min(1.0);
            let mut crop: Vec<f64> = a.iter().map(|v| v * (1.0 - leak)).collect();
            axpy(&mut crop, leak, omega);
            axpy(&mut crop, sigma, &gaussian(&mut rng, d));
            bundle.insert_bbox(bb.id, to_ev(&crop)?)?;
        }

        for key in PatchKey::grid_keys(image_id) {
            let Region::Grid { size, row, col } = key.region else { unreachable!() };
            let cx = cell_span(IMAGE_WIDTH, size, col);
            let cy = cell_span(IMAGE_HEIGHT, size, row);
            let area = (cx.1 - cx.0) * (cy.1 - cy.0);
            let mut v = vec![0.0; d];
            let mut covered = 0.0;
            for ((bb, _), p) in placed.iter().zip(&seen_in_patch) {
                let f = overlap(cx, (bb.x, bb.x + bb.w)) * overlap(cy, (bb.y, bb.y + bb.h)) / area;
                if f > 0.0 {
                    axpy(&mut v, f, p);
                    covered += f;
                }
            }
            axpy(&mut v, (1.0 - covered).max(0.0), omega);
            axpy(&mut v, sigma, &gaussian(&mut rng, d));
            bundle.insert_patch(key, to_ev(&v)?)?;
        }

        images.push(ImageRecord {
            id: image_id,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            file_name: Some(format!("synth_{image_id:06}.png")),
        });
        scene_of.insert(image_id, scene);
        for (bb, t) in placed {
            objects.insert(bb.id, t);
            bboxes.push(bb);
        }
    }

    for (c, class) in classes.iter().enumerate() {
        let next = (c + 1) % config.n_classes;
        for (i, word) in class.words.iter().enumerate() {
            let mut t = b.centers[c].clone();
            let ambiguous = match config.mode {
                SynthMode::Standard => i == AMBIGUOUS_WORD,
                SynthMode::TextAmbiguous => true,
            };
            let pull = if ambiguous { knobs.ambiguity } else { knobs.text_bias };
            axpy(&mut t, sigma * pull, &b.centers[next]);
            axpy(&mut t, sigma * knobs.text_scene, &b.scenes[c % SCENES]);
            bundle.insert_text(config.prompt_template.render(word), to_ev(&t)?)?;
        }
    }

    let dataset = AnnotatedDataset::new(images, bboxes, classes)?;
    Ok(SynthWorld {
        dataset,
        bundle,
        truth: GroundTruth {
            centers: b.centers,
            subtype_dirs: b.subtypes,
            scene_dirs: b.scenes,
            scene_of,
            objects,
        },
    })
}
