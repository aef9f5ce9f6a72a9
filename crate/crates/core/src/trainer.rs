//! Per-slice BCE training of the slice model, then an optional second
//! phase fitting the attention aggregator on frozen slice features.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{self, graph, MergeWeights, ModelParams, ParamVars};
use crate::numkernel::{Tape, Tensor};
use crate::pipeline::{self, Dataset, SelectedPatient};
use crate::selection::{Mode, SelectionConfig};
use crate::voting::{self, ShaParams, ShaVars};

pub use crate::numkernel::tape::{bce_grad, bce_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    HeadOnly,
    HeadAndSha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub scheme_to_train: TrainTarget,
    pub clamp_eps: f64,
    pub sha_epochs: usize,
    pub sha_learning_rate: f64,
    /// Weight of the unattended features in the merge.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 0,
            scheme_to_train: TrainTarget::HeadAndSha,
            clamp_eps: 1e-7,
            sha_epochs: 100,
            sha_learning_rate: 3e-3,
            alpha: crate::model::DEFAULT_ALPHA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
            || !(self.sha_learning_rate >= 0.0 && self.sha_learning_rate.is_finite())
        {
            return Err(Error::InvalidArgument("learning rates must be finite and >= 0".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "clamp_eps must be in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates, one buffer pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &[&mut Tensor]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update using the gradients stored on each tensor.
pub fn optimizer_step(params: &mut [&mut Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::InvalidArgument(format!("parameter {i} has no gradient buffer")));
        }
        if p.len() != state.m[i].len() {
            return Err(Error::shape(format!("parameter {i} length"), state.m[i].len(), p.len()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad().expect("checked").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean slice BCE per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean patient BCE per aggregator epoch.
    pub sha_epoch_loss: Vec<f64>,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,mean_loss";

pub fn history_csv(losses: &[f64]) -> String {
    let mut s = format!("{HISTORY_CSV_HEADER}\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{:.9}", e + 1, l);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub sha: Option<ShaParams>,
    pub history: TrainHistory,
}

/// Loss and parameter gradients (in [`ModelParams::named_tensors`] order)
/// for one labelled slice.
pub fn slice_loss_and_grads(
    image: &Image,
    label: f64,
    params: &ModelParams,
    clamp_eps: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, true);
    let x = tape.constant(model::input_tensor(image));
    let (conf, _) = graph::forward(&mut tape, x, &vars, params.merge)?;
    let loss = tape.bce(conf, label, clamp_eps)?;
    let value = tape.value(loss)?.item()?;
    let grads = tape.backward(loss)?;
    let out = vars
        .all()
        .into_iter()
        .map(|v| grads.get(v).cloned().expect("every parameter is on the loss path"))
        .collect();
    Ok((value, out))
}

fn sha_loss_and_grads(
    features: &[Tensor],
    label: f64,
    sha: &ShaParams,
    clamp_eps: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = ShaVars::record(&mut tape, sha, true);
    let feats: Vec<_> = features.iter().map(|f| tape.constant(f.clone())).collect();
    let (out, _) = voting::sha_graph(&mut tape, &feats, &vars)?;
    let loss = tape.bce(out, label, clamp_eps)?;
    let value = tape.value(loss)?.item()?;
    let grads = tape.backward(loss)?;
    let out = vars
        .all()
        .into_iter()
        .map(|v| grads.get(v).cloned().expect("aggregator parameters reach the loss"))
        .collect();
    Ok((value, out))
}

/// Sums per-example gradients in order and stores the batch mean on each
/// parameter tensor.
fn install_mean_grads(targets: &mut [&mut Tensor], per_example: &[Vec<Tensor>]) -> Result<()> {
    let n = per_example.len() as f64;
    for (i, t) in targets.iter_mut().enumerate() {
        let mut acc = vec![0.0; t.len()];
        for ex in per_example {
            for (a, g) in acc.iter_mut().zip(ex[i].data()) {
                *a += g;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        t.zero_grad();
        t.accumulate_grad(&acc)?;
    }
    Ok(())
}

fn ensure_grad_buffers(tensors: &mut [&mut Tensor]) {
    for t in tensors.iter_mut() {
        if !t.requires_grad() {
            **t = t.detached().with_grad();
        }
    }
}

fn check_labels(patients: &[SelectedPatient]) -> Result<Vec<f64>> {
    if patients.len() < 2 {
        return Err(Error::Dataset(format!(
            "training needs at least 2 patients, got {}",
            patients.len()
        )));
    }
    let labels = patients
        .iter()
        .map(|p| {
            p.label
                .map(f64::from)
                .ok_or_else(|| Error::Dataset(format!("patient {:?} is unlabelled", p.patient_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Dataset("training data contains a single class".into()));
    }
    Ok(labels)
}

fn strip_grads(params: &mut ModelParams) {
    for t in params.tensors_mut() {
        *t = t.detached();
    }
}

/// Trains on already-selected patients (training-mode selection); the
/// aggregator, if requested, is fitted on the same selections.
pub fn train_selected(patients: &[SelectedPatient], config: &TrainConfig) -> Result<TrainOutput> {
    train_selected_with(patients, patients, config)
}

/// Like [`train_selected`], but fits the aggregator on `sha_patients`
/// (typically the same patients under test-mode selection, so the
/// aggregator sees sequences as long as at inference).
pub fn train_selected_with(
    patients: &[SelectedPatient],
    sha_patients: &[SelectedPatient],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let labels = check_labels(patients)?;
    let mut params = ModelParams::init(config.seed, MergeWeights::new(config.alpha)?);
    let mut history = TrainHistory::default();

    let slices: Vec<(&Image, f64)> = patients
        .iter()
        .zip(&labels)
        .flat_map(|(p, &l)| p.inputs.iter().map(move |img| (img, l)))
        .collect();
    if slices.is_empty() {
        return Err(Error::Dataset("no slices selected for training".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    {
        let mut tensors = params.tensors_mut();
        ensure_grad_buffers(&mut tensors);
    }
    let mut state = OptimizerState::new(&params.tensors_mut());
    let mut order: Vec<usize> = (0..slices.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| slice_loss_and_grads(slices[i].0, slices[i].1, &params, config.clamp_eps))
                .collect::<Result<_>>()?;
            let (losses, grads): (Vec<f64>, Vec<Vec<Tensor>>) = results.into_iter().unzip();
            total += losses.iter().sum::<f64>();
            let mut tensors = params.tensors_mut();
            install_mean_grads(&mut tensors, &grads)?;
            optimizer_step(&mut tensors, &mut state, config.learning_rate)?;
        }
        let mean = total / slices.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("mean training loss at epoch {}", epoch + 1)));
        }
        history.epoch_loss.push(mean);
    }
    strip_grads(&mut params);
    if params.tensors_mut().iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("model parameters after training".into()));
    }

    let sha = match config.scheme_to_train {
        TrainTarget::HeadOnly => None,
        TrainTarget::HeadAndSha => {
            let sha_labels = check_labels(sha_patients)?;
            let outputs = pipeline::infer_patients(sha_patients, &params)?;
            let features: Vec<&[Tensor]> = outputs.iter().map(|o| o.features.as_slice()).collect();
            let (sha, losses) = train_sha(&features, &sha_labels, params.channels(), config)?;
            history.sha_epoch_loss = losses;
            Some(sha)
        }
    };
    Ok(TrainOutput {
        params,
        sha,
        history,
    })
}

/// Fits the aggregator on frozen per-slice features with patient-level BCE.
pub fn train_sha(
    features: &[&[Tensor]],
    labels: &[f64],
    width: usize,
    config: &TrainConfig,
) -> Result<(ShaParams, Vec<f64>)> {
    let mut sha = ShaParams::init(width, config.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    {
        let mut tensors = sha.tensors_mut();
        ensure_grad_buffers(&mut tensors);
    }
    let mut state = OptimizerState::new(&sha.tensors_mut());
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::with_capacity(config.sha_epochs);
    for epoch in 0..config.sha_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| sha_loss_and_grads(features[i], labels[i], &sha, config.clamp_eps))
                .collect::<Result<_>>()?;
            let (losses, grads): (Vec<f64>, Vec<Vec<Tensor>>) = results.into_iter().unzip();
            total += losses.iter().sum::<f64>();
            let mut tensors = sha.tensors_mut();
            install_mean_grads(&mut tensors, &grads)?;
            optimizer_step(&mut tensors, &mut state, config.sha_learning_rate)?;
        }
        let mean = total / features.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("mean aggregator loss at epoch {}", epoch + 1)));
        }
        history.push(mean);
    }
    for t in sha.tensors_mut() {
        *t = t.detached();
    }
    Ok((sha, history))
}

/// Selects training slices from `dataset` and trains; the aggregator is
/// fitted on test-mode selections of the same patients.
pub fn train(dataset: &Dataset, config: &TrainConfig, sel: &SelectionConfig) -> Result<TrainOutput> {
    let patients = pipeline::load_selected(dataset, sel, Mode::Train)?;
    if config.scheme_to_train == TrainTarget::HeadOnly {
        return train_selected(&patients, config);
    }
    let sha_patients = pipeline::load_selected(dataset, sel, Mode::Test)?;
    train_selected_with(&patients, &sha_patients, config)
}
