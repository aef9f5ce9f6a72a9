//! Dataset discovery and the end-to-end patient pipeline:
//! selection → per-slice model → voting → metrics.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::labels::LabelTable;
use crate::data_io::svol::{self, EXTENSION};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::MetricsReport;
use crate::model::{self, ModelParams, DEFAULT_INPUT_SIZE};
use crate::numkernel::Tensor;
use crate::selection::{self, Mode, SelectionConfig};
use crate::voting::{self, PatientDecision, Scheme, ShaParams, DEFAULT_EXTREME_FRACTION, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientEntry {
    pub patient_id: String,
    pub path: PathBuf,
    pub label: Option<u8>,
}

/// Volume files of one directory, sorted by patient id.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub entries: Vec<PatientEntry>,
}

impl Dataset {
    /// Scans `dir` for volume files. With `labels`, every volume must be
    /// labelled and every label must have a volume.
    pub fn open(dir: &Path, labels: Option<&LabelTable>) -> Result<Self> {
        let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for item in read {
            let path = item.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXTENSION) {
                continue;
            }
            let patient_id = svol::patient_id_from_path(&path)?;
            let label = match labels {
                Some(t) => Some(t.get(&patient_id).ok_or_else(|| {
                    Error::Dataset(format!("volume {patient_id:?} has no entry in the label table"))
                })?),
                None => None,
            };
            entries.push(PatientEntry {
                patient_id,
                path,
                label,
            });
        }
        entries.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        if let Some(t) = labels {
            if let Some((id, _)) = t.iter().find(|(id, _)| !entries.iter().any(|e| e.patient_id == *id)) {
                return Err(Error::Dataset(format!("label for {id:?} has no volume in {}", dir.display())));
            }
        }
        if entries.is_empty() {
            return Err(Error::Dataset(format!("no .{EXTENSION} volumes in {}", dir.display())));
        }
        Ok(Dataset { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A patient's selected slices, resized to the model resolution.
#[derive(Debug, Clone)]
pub struct SelectedPatient {
    pub patient_id: String,
    pub label: Option<u8>,
    pub indices: Vec<usize>,
    pub inputs: Vec<Image>,
}

pub fn select_patient(entry: &PatientEntry, sel: &SelectionConfig, mode: Mode, input_size: usize) -> Result<SelectedPatient> {
    let volume = svol::read_volume(&entry.path)?;
    let picked = selection::select_slices(&volume, sel, mode)?;
    let indices = picked.iter().map(|(i, _)| *i).collect();
    let inputs = picked
        .into_iter()
        .map(|(_, img)| model::prepare_slice(img, input_size))
        .collect::<Result<_>>()?;
    Ok(SelectedPatient {
        patient_id: entry.patient_id.clone(),
        label: entry.label,
        indices,
        inputs,
    })
}

/// Loads and selects every patient; output order follows the dataset.
pub fn load_selected(dataset: &Dataset, sel: &SelectionConfig, mode: Mode) -> Result<Vec<SelectedPatient>> {
    sel.validate()?;
    dataset
        .entries
        .par_iter()
        .map(|e| select_patient(e, sel, mode, DEFAULT_INPUT_SIZE))
        .collect()
}

/// Per-slice model outputs for one patient.
#[derive(Debug, Clone)]
pub struct PatientOutputs {
    pub patient_id: String,
    pub label: Option<u8>,
    pub confidences: Vec<f64>,
    pub features: Vec<Tensor>,
}

pub fn infer_patient(patient: &SelectedPatient, params: &ModelParams) -> Result<PatientOutputs> {
    let mut confidences = Vec::with_capacity(patient.inputs.len());
    let mut features = Vec::with_capacity(patient.inputs.len());
    for img in &patient.inputs {
        let (c, f) = model::forward_slice(img, params)?;
        confidences.push(c.value());
        features.push(f);
    }
    Ok(PatientOutputs {
        patient_id: patient.patient_id.clone(),
        label: patient.label,
        confidences,
        features,
    })
}

pub fn infer_patients(patients: &[SelectedPatient], params: &ModelParams) -> Result<Vec<PatientOutputs>> {
    patients.par_iter().map(|p| infer_patient(p, params)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub threshold: f64,
    pub extreme_fraction: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            threshold: DEFAULT_THRESHOLD,
            extreme_fraction: DEFAULT_EXTREME_FRACTION,
        }
    }
}

pub fn decide(
    outputs: &PatientOutputs,
    scheme: Scheme,
    sha: Option<&ShaParams>,
    vote: &VoteConfig,
) -> Result<PatientDecision> {
    let id = &outputs.patient_id;
    match scheme {
        Scheme::Simple => voting::simple_average_vote(id, &outputs.confidences, vote.threshold),
        Scheme::Ranked => voting::ranked_vote(id, &outputs.confidences, vote.extreme_fraction, vote.threshold),
        Scheme::Learner => {
            let sha = sha.ok_or_else(|| {
                Error::InvalidArgument("learner voting needs aggregator weights (train with SHA)".into())
            })?;
            voting::learner_vote(id, &outputs.features, sha, vote.threshold)
        }
    }
}

pub fn decide_all(
    outputs: &[PatientOutputs],
    scheme: Scheme,
    sha: Option<&ShaParams>,
    vote: &VoteConfig,
) -> Result<Vec<PatientDecision>> {
    outputs.iter().map(|o| decide(o, scheme, sha, vote)).collect()
}

pub fn evaluate_outputs(
    outputs: &[PatientOutputs],
    scheme: Scheme,
    sha: Option<&ShaParams>,
    vote: &VoteConfig,
) -> Result<MetricsReport> {
    let decisions = decide_all(outputs, scheme, sha, vote)?;
    let labels = outputs
        .iter()
        .map(|o| {
            o.label
                .ok_or_else(|| Error::Dataset(format!("patient {:?} is unlabelled", o.patient_id)))
        })
        .collect::<Result<Vec<u8>>>()?;
    let scores: Vec<f64> = decisions.iter().map(|d| d.aggregate_confidence).collect();
    let preds: Vec<u8> = decisions.iter().map(|d| d.label.bit()).collect();
    MetricsReport::compute(scheme.name(), &scores, &preds, &labels)
}

/// Test-mode selection, inference and scoring of a labelled dataset.
pub fn evaluate_split(
    dataset: &Dataset,
    params: &ModelParams,
    sha: Option<&ShaParams>,
    sel: &SelectionConfig,
    scheme: Scheme,
) -> Result<MetricsReport> {
    let patients = load_selected(dataset, sel, Mode::Test)?;
    let outputs = infer_patients(&patients, params)?;
    evaluate_outputs(&outputs, scheme, sha, &VoteConfig::default())
}

pub const PREDICTIONS_CSV_HEADER: &str = "patient_id,scheme,aggregate_confidence,label";

pub fn prediction_row(d: &PatientDecision) -> String {
    format!(
        "{},{},{:.6},{}",
        d.patient_id,
        d.scheme,
        d.aggregate_confidence,
        d.label.bit()
    )
}
