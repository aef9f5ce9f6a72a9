//! Seeded CT phantom generator.
//!
//! Each patient is a stack of axial slices: dark air around an elliptical
//! body (≈0.8), two dark elliptical lungs (≈0.15) whose size follows a
//! smooth profile peaking mid-stack, and Gaussian noise. Positive patients
//! additionally carry 2–5 bright lesion blobs inside the lungs on a
//! contiguous band of mid-stack slices.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::labels::{write_labels, LabelTable};
use super::svol::{write_volume, EXTENSION};
use crate::error::{Error, Result};
use crate::image::{Image, Volume};

pub const GENERATOR_VERSION: u32 = 1;
pub const TRAIN_DIR: &str = "train";
pub const VAL_DIR: &str = "val";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const AIR: f64 = 0.05;
const BODY: f64 = 0.8;
const LUNG: f64 = 0.15;
const NOISE_SD: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub min_slices: usize,
    pub max_slices: usize,
    pub image_size: usize,
    pub lesion_intensity: f64,
    pub positive_fraction: f64,
    /// Share of patients written to the validation split.
    pub val_fraction: f64,
    /// Range for the share of the stack, centred on the lung peak, that
    /// carries lesions in a positive patient.
    pub lesion_slice_fraction: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_patients: 40,
            min_slices: 60,
            max_slices: 120,
            image_size: 64,
            lesion_intensity: 0.7,
            positive_fraction: 0.5,
            val_fraction: 0.5,
            lesion_slice_fraction: (0.5, 0.7),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.image_size < 16 || self.min_slices < 16 {
            return bad(format!(
                "image_size and slice counts must be >= 16 (got image_size={}, min_slices={})",
                self.image_size, self.min_slices
            ));
        }
        if self.max_slices < self.min_slices {
            return bad("max_slices must be >= min_slices".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad(format!("positive_fraction must be in (0, 1), got {}", self.positive_fraction));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.lesion_intensity) {
            return bad("lesion_intensity must be in [0, 1]".into());
        }
        let (lo, hi) = self.lesion_slice_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("lesion_slice_fraction range ({lo}, {hi}) is invalid"));
        }
        Ok(())
    }

    pub fn n_val(&self) -> usize {
        (self.n_patients as f64 * self.val_fraction).round() as usize
    }

    pub fn n_train(&self) -> usize {
        self.n_patients - self.n_val()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    right: bool,
    /// Position in lung-relative coordinates, inside the unit disc.
    u: f64,
    v: f64,
    radius: f64,
}

/// One generated patient with its ground truth.
#[derive(Debug, Clone)]
pub struct PhantomPatient {
    pub volume: Volume,
    pub label: u8,
    /// Per-slice lung masks (row-major), for test oracles.
    pub lung_masks: Vec<Vec<bool>>,
    pub lesion_slices: Vec<usize>,
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Labels for every patient index: exactly `round(n * positive_fraction)`
/// positives, spread proportionally over the train and validation splits.
pub fn assign_labels(config: &SynthConfig) -> Vec<u8> {
    let n = config.n_patients;
    let n_pos = ((n as f64 * config.positive_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let n_val = config.n_val();
    let val_pos = ((n_val as f64 * config.positive_fraction).round() as usize).min(n_pos).min(n_val);
    let train_pos = n_pos - val_pos;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut split = |len: usize, pos: usize| {
        let mut v: Vec<u8> = (0..len).map(|i| u8::from(i < pos)).collect();
        v.shuffle(&mut rng);
        v
    };
    let mut labels = split(n - n_val, train_pos.min(n - n_val));
    labels.extend(split(n_val, val_pos));
    labels
}

pub fn patient_id(index: usize) -> String {
    format!("p{index:03}")
}

/// Generates patient `index` deterministically from `config.seed`.
pub fn generate_patient(config: &SynthConfig, index: usize, label: u8) -> Result<PhantomPatient> {
    let mut rng = patient_rng(config.seed, index);
    let size = config.image_size;
    let s = size as f64;
    let n_slices = rng.random_range(config.min_slices..=config.max_slices);
    let peak = 0.5 + rng.random_range(-0.04..=0.04);
    let lung_jitter = (rng.random_range(0.9..=1.1), rng.random_range(0.9..=1.1));
    let body = Ellipse {
        cy: s / 2.0,
        cx: s / 2.0,
        ry: 0.40 * s,
        rx: 0.45 * s,
    };

    let (blobs, band) = if label == 1 {
        let count = rng.random_range(2..=5);
        let blobs: Vec<Blob> = (0..count)
            .map(|_| {
                let r = rng.random_range(0.0..0.6f64).sqrt();
                let theta = rng.random_range(0.0..2.0 * PI);
                Blob {
                    right: rng.random_bool(0.5),
                    u: r * theta.cos(),
                    v: r * theta.sin(),
                    radius: rng.random_range(3.0..=6.0) * s / 64.0,
                }
            })
            .collect();
        let (lo, hi) = config.lesion_slice_fraction;
        let width = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        (blobs, Some((peak - width / 2.0, peak + width / 2.0)))
    } else {
        (Vec::new(), None)
    };

    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let mut slices = Vec::with_capacity(n_slices);
    let mut masks = Vec::with_capacity(n_slices);
    let mut lesion_slices = Vec::new();
    for k in 0..n_slices {
        let t = (k as f64 + 0.5) / n_slices as f64;
        let phase = ((t - peak) * PI + PI / 2.0).clamp(0.0, PI);
        let scale = 0.15 + 0.85 * phase.sin();
        let lungs = [-1.0, 1.0].map(|side| Ellipse {
            cy: s / 2.0,
            cx: s / 2.0 + side * 0.19 * s,
            ry: 0.25 * s * scale * lung_jitter.0,
            rx: 0.13 * s * scale * lung_jitter.1,
        });
        let lesioned = band.is_some_and(|(a, b)| t >= a && t <= b);
        if lesioned {
            lesion_slices.push(k);
        }

        let mut pixels = Vec::with_capacity(size * size);
        let mut mask = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let lung_side = lungs.iter().position(|e| e.contains(py, px));
                let mut v = if lung_side.is_some() {
                    LUNG
                } else if body.contains(py, px) {
                    BODY
                } else {
                    AIR
                };
                if let (true, Some(side)) = (lesioned, lung_side) {
                    let lung = &lungs[side];
                    let hit = blobs.iter().filter(|b| b.right == (side == 1)).any(|b| {
                        let by = lung.cy + b.v * lung.ry;
                        let bx = lung.cx + b.u * lung.rx;
                        (py - by).powi(2) + (px - bx).powi(2) <= b.radius * b.radius
                    });
                    if hit {
                        v = config.lesion_intensity;
                    }
                }
                mask.push(lung_side.is_some());
                pixels.push((v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
            }
        }
        slices.push(Image::new(size, size, pixels)?);
        masks.push(mask);
    }
    Ok(PhantomPatient {
        volume: Volume::new(patient_id(index), slices)?,
        label,
        lung_masks: masks,
        lesion_slices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_patients: usize,
    pub image_size: usize,
    pub positive_fraction: f64,
    pub generator_version: u32,
    pub n_train: usize,
    pub n_val: usize,
    pub min_slices: usize,
    pub max_slices: usize,
    pub lesion_intensity: f64,
    pub lesion_slice_fraction: (f64, f64),
}

/// Directories written by [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train_dir: PathBuf,
    pub val_dir: Option<PathBuf>,
    pub manifest: Manifest,
}

/// Writes `train/` (and `val/` when `val_fraction > 0`) with one SVOL file
/// per patient and a `labels.csv` each, plus `manifest.json`.
pub fn synth_generate(config: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    config.validate()?;
    let labels = assign_labels(config);
    let n_train = config.n_train();
    let train_dir = out_dir.join(TRAIN_DIR);
    let val_dir = (config.n_val() > 0).then(|| out_dir.join(VAL_DIR));

    let mut tables = (LabelTable::new(), LabelTable::new());
    for dir in std::iter::once(&train_dir).chain(val_dir.iter()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (index, &label) in labels.iter().enumerate() {
        let patient = generate_patient(config, index, label)?;
        let (dir, table) = if index < n_train {
            (&train_dir, &mut tables.0)
        } else {
            (val_dir.as_ref().expect("val split exists"), &mut tables.1)
        };
        let path = dir.join(format!("{}.{EXTENSION}", patient.volume.patient_id()));
        write_volume(&patient.volume, &path)?;
        table.insert(patient.volume.patient_id(), label)?;
    }
    write_labels(&tables.0, &train_dir.join(LABELS_FILE))?;
    if let Some(dir) = &val_dir {
        write_labels(&tables.1, &dir.join(LABELS_FILE))?;
    }

    let manifest = Manifest {
        seed: config.seed,
        n_patients: config.n_patients,
        image_size: config.image_size,
        positive_fraction: config.positive_fraction,
        generator_version: GENERATOR_VERSION,
        n_train,
        n_val: config.n_val(),
        min_slices: config.min_slices,
        max_slices: config.max_slices,
        lesion_intensity: config.lesion_intensity,
        lesion_slice_fraction: config.lesion_slice_fraction,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(SynthOutput {
        train_dir,
        val_dir,
        manifest,
    })
}
