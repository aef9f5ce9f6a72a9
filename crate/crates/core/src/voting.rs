//! Patient-level decisions from per-slice outputs.
//!
//! Three schemes are available: simple averaging of slice confidences,
//! ranked voting over the most extreme confidences, and a learned
//! single-head attention aggregator over pooled slice features. Every
//! threshold comparison is strict: an aggregate of exactly `t` is negative.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{Tape, Tensor, Var};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EXTREME_FRACTION: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::InvalidArgument(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    fn above(value: f64, threshold: f64) -> Self {
        if value > threshold {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Simple,
    Ranked,
    Learner,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Simple, Scheme::Ranked, Scheme::Learner];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Simple => "simple",
            Scheme::Ranked => "ranked",
            Scheme::Learner => "learner",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Scheme::Simple),
            "ranked" => Ok(Scheme::Ranked),
            "learner" => Ok(Scheme::Learner),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme {other:?} (expected simple, ranked or learner)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientDecision {
    pub patient_id: String,
    pub label: Label,
    pub scheme: Scheme,
    pub aggregate_confidence: f64,
    /// Per-slice confidences consulted; empty for the learner scheme.
    pub slice_confidences: Vec<f64>,
}

fn check_confidences(confs: &[f64]) -> Result<()> {
    if confs.is_empty() {
        return Err(Error::InvalidArgument("no slice confidences to vote on".into()));
    }
    if let Some(c) = confs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// Mean confidence against `t`.
pub fn simple_average_vote(patient_id: &str, confs: &[f64], t: f64) -> Result<PatientDecision> {
    check_confidences(confs)?;
    let avg = confs.iter().sum::<f64>() / confs.len() as f64;
    Ok(PatientDecision {
        patient_id: patient_id.to_owned(),
        label: Label::above(avg, t),
        scheme: Scheme::Simple,
        aggregate_confidence: avg,
        slice_confidences: confs.to_vec(),
    })
}

/// Number of slices taken from each end: `ceil(n * extreme_fraction)`.
pub fn extreme_count(n: usize, extreme_fraction: f64) -> usize {
    let raw = n as f64 * extreme_fraction;
    let rounded = raw.round();
    let e = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (e as usize).clamp(1, n)
}

/// The `e` highest and `e` lowest confidences (a multiset; they may overlap
/// when `n` is small), highest first.
pub fn extreme_confidences(confs: &[f64], extreme_fraction: f64) -> Vec<f64> {
    let mut sorted = confs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let e = extreme_count(sorted.len(), extreme_fraction);
    let mut out = sorted[..e].to_vec();
    out.extend_from_slice(&sorted[sorted.len() - e..]);
    out
}

/// Mean of the top and bottom `extreme_fraction` of confidences against `t`.
pub fn ranked_vote(
    patient_id: &str,
    confs: &[f64],
    extreme_fraction: f64,
    t: f64,
) -> Result<PatientDecision> {
    check_confidences(confs)?;
    if !(extreme_fraction > 0.0 && extreme_fraction <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "extreme_fraction must be in (0, 0.5], got {extreme_fraction}"
        )));
    }
    let extremes = extreme_confidences(confs, extreme_fraction);
    let avg = extremes.iter().sum::<f64>() / extremes.len() as f64;
    Ok(PatientDecision {
        patient_id: patient_id.to_owned(),
        label: Label::above(avg, t),
        scheme: Scheme::Ranked,
        aggregate_confidence: avg,
        slice_confidences: confs.to_vec(),
    })
}

/// Single-head attention aggregator over a patient's slice features.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub cls_token: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl ShaParams {
    pub fn init(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (width as f64).sqrt();
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-s..=s)).collect()).expect("init shape")
        };
        // Zero query and head: training starts from uniform attention
        // (mean pooling) and a neutral output of 0.5.
        let key = draw(&[width, width]);
        let value = draw(&[width, width]);
        let cls_token = draw(&[width]);
        ShaParams {
            query: Tensor::zeros(&[width, width]),
            key,
            value,
            cls_token,
            head_weight: Tensor::zeros(&[width, 1]),
            head_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn width(&self) -> usize {
        self.cls_token.len()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("sha.query".into(), &self.query),
            ("sha.key".into(), &self.key),
            ("sha.value".into(), &self.value),
            ("sha.cls_token".into(), &self.cls_token),
            ("sha.head.weight".into(), &self.head_weight),
            ("sha.head.bias".into(), &self.head_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.cls_token,
            &mut self.head_weight,
            &mut self.head_bias,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.width();
        let expected = ShaParams::init(c, 0);
        for ((name, got), (_, want)) in self.named_tensors().into_iter().zip(expected.named_tensors()) {
            if got.shape() != want.shape() {
                return Err(Error::InvalidShape(format!(
                    "{name} has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
            if !got.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShaVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub cls_token: Var,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl ShaVars {
    pub fn record(tape: &mut Tape, p: &ShaParams, trainable: bool) -> Self {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ShaVars {
            query: put(&p.query),
            key: put(&p.key),
            value: put(&p.value),
            cls_token: put(&p.cls_token),
            head_weight: put(&p.head_weight),
            head_bias: put(&p.head_bias),
        }
    }

    pub fn all(&self) -> [Var; 6] {
        [self.query, self.key, self.value, self.cls_token, self.head_weight, self.head_bias]
    }
}

/// Taped aggregator: returns `(output probability, attention weights of the
/// class-token row)`.
pub fn sha_graph(tape: &mut Tape, features: &[Var], p: &ShaVars) -> Result<(Var, Var)> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("learner vote needs at least one slice".into()));
    }
    let c = tape.value(p.cls_token)?.len();
    for (i, &f) in features.iter().enumerate() {
        let w = tape.value(f)?.len();
        if w != c {
            return Err(Error::shape(format!("slice {i} feature width"), c, w));
        }
    }
    let mut rows = Vec::with_capacity(features.len() + 1);
    rows.push(p.cls_token);
    rows.extend_from_slice(features);
    let x = tape.stack_rows(&rows)?;
    let q = tape.matmul(x, p.query)?;
    let k = tape.matmul(x, p.key)?;
    let v = tape.matmul(x, p.value)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (c as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let attended = tape.matmul(weights, v)?;
    let cls = tape.row(attended, 0)?;
    let cls = tape.reshape(cls, &[1, c])?;
    let logit = tape.matmul(cls, p.head_weight)?;
    let logit = tape.reshape(logit, &[1])?;
    let logit = tape.add_bias(logit, p.head_bias)?;
    let out = tape.sigmoid(logit)?;
    let cls_weights = tape.row(weights, 0)?;
    Ok((out, cls_weights))
}

/// Aggregator output in `[0, 1]` for one patient.
pub fn sha_forward(features: &[Tensor], params: &ShaParams) -> Result<f64> {
    Ok(sha_forward_with_weights(features, params)?.0)
}

/// Aggregator output together with the class token's attention weights
/// over `[cls, slice_1, ..., slice_n]`.
pub fn sha_forward_with_weights(features: &[Tensor], params: &ShaParams) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let p = ShaVars::record(&mut tape, params, false);
    let vars: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
    let (out, weights) = sha_graph(&mut tape, &vars, &p)?;
    Ok((tape.value(out)?.item()?, tape.value(weights)?.data().to_vec()))
}

/// Positive iff the aggregator output exceeds `t`.
pub fn learner_vote(
    patient_id: &str,
    features: &[Tensor],
    params: &ShaParams,
    t: f64,
) -> Result<PatientDecision> {
    let out = sha_forward(features, params)?;
    Ok(PatientDecision {
        patient_id: patient_id.to_owned(),
        label: Label::above(out, t),
        scheme: Scheme::Learner,
        aggregate_confidence: out,
        slice_confidences: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_boundary_is_negative() {
        let d = simple_average_vote("p", &[0.5, 0.5], 0.5).unwrap();
        assert_eq!(d.aggregate_confidence, 0.5);
        assert_eq!(d.label, Label::Negative);
    }

    #[test]
    fn simple_examples() {
        let d = simple_average_vote("p", &[0.9, 0.8, 0.1, 0.6], 0.5).unwrap();
        assert!((d.aggregate_confidence - 0.6).abs() < 1e-12);
        assert_eq!(d.label, Label::Positive);
        assert_eq!(simple_average_vote("p", &[0.0; 5], 0.5).unwrap().label, Label::Negative);
        assert!(simple_average_vote("p", &[], 0.5).is_err());
        assert!(simple_average_vote("p", &[1.2], 0.5).is_err());
    }

    fn forty_with(max: f64, min: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..38).map(|i| 0.35 + 0.005 * i as f64).collect();
        v.insert(7, max);
        v.insert(20, min);
        v
    }

    #[test]
    fn ranked_examples() {
        let d = ranked_vote("p", &forty_with(0.99, 0.01), 0.025, 0.5).unwrap();
        assert_eq!(d.aggregate_confidence, 0.5);
        assert_eq!(d.label, Label::Negative);

        let d = ranked_vote("p", &forty_with(0.9, 0.3), 0.025, 0.5).unwrap();
        assert!((d.aggregate_confidence - 0.6).abs() < 1e-12);
        assert_eq!(d.label, Label::Positive);

        let d = ranked_vote("p", &[0.7; 40], 0.025, 0.5).unwrap();
        assert_eq!(d.label, Label::Positive);

        assert!(ranked_vote("p", &[0.7], 0.0, 0.5).is_err());
        assert!(ranked_vote("p", &[0.7], 0.6, 0.5).is_err());
    }

    #[test]
    fn extreme_count_rounds_up() {
        assert_eq!(extreme_count(40, 0.025), 1);
        assert_eq!(extreme_count(41, 0.025), 2);
        assert_eq!(extreme_count(80, 0.025), 2);
        assert_eq!(extreme_count(1, 0.025), 1);
        assert_eq!(extreme_confidences(&[0.3], 0.025), vec![0.3, 0.3]);
    }

    #[test]
    fn sha_zero_projection_gives_half() {
        let mut p = ShaParams::init(4, 1);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let f = vec![Tensor::from_vec(vec![0.3, -0.2, 0.5, 1.0])];
        assert_eq!(sha_forward(&f, &p).unwrap(), 0.5);
    }

    #[test]
    fn sha_single_slice_weights_normalise() {
        let p = ShaParams::init(4, 2);
        let f = vec![p.cls_token.clone()];
        let (_, w) = sha_forward_with_weights(&f, &p).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - w[1]).abs() < 1e-12);
    }

    #[test]
    fn learner_boundary_and_degenerate_patient() {
        let mut p = ShaParams::init(3, 3);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let d = learner_vote("p", &[Tensor::from_vec(vec![1.0, 2.0, 3.0])], &p, 0.5).unwrap();
        assert_eq!(d.aggregate_confidence, 0.5);
        assert_eq!(d.label, Label::Negative);
        assert!(d.slice_confidences.is_empty());
        assert!(learner_vote("p", &[], &p, 0.5).is_err());
        assert!(learner_vote("p", &[Tensor::zeros(&[2])], &p, 0.5).is_err());
    }

    #[test]
    fn scheme_parsing() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("all".parse::<Scheme>().is_err());
    }
}
