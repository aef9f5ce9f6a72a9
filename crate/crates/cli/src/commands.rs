use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use covid_am::data_io::labels::{load_labels, LabelTable};
use covid_am::data_io::synth::{synth_generate, SynthConfig, LABELS_FILE};
use covid_am::data_io::{svol, weights};
use covid_am::metrics::REPORT_CSV_HEADER;
use covid_am::pipeline::{self, Dataset, VoteConfig, PREDICTIONS_CSV_HEADER};
use covid_am::selection::{self, Mode};
use covid_am::trainer::{self, TrainConfig};
use rayon::prelude::*;

use crate::args::{Command, EvaluateArgs, PredictArgs, SelectArgs, SynthArgs, TrainArgs, VoteArgs};
use crate::error::CliError;

pub fn run(command: &Command, seed: u64) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a, seed),
        Command::Select(a) => select(a),
        Command::Train(a) => train(a, seed),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ))
    }
}

fn labels_for(data: &Path, labels: Option<&PathBuf>) -> Result<LabelTable, CliError> {
    let path = labels.cloned().unwrap_or_else(|| data.join(LABELS_FILE));
    Ok(load_labels(&path)?)
}

fn vote_config(v: &VoteArgs) -> VoteConfig {
    VoteConfig {
        threshold: v.threshold,
        extreme_fraction: v.extreme_fraction,
    }
}

fn synth(a: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let config = SynthConfig {
        seed,
        n_patients: a.n_patients,
        min_slices: a.min_slices,
        max_slices: a.max_slices,
        image_size: a.image_size,
        lesion_intensity: a.lesion_intensity,
        positive_fraction: a.positive_fraction,
        val_fraction: a.val_fraction,
        ..SynthConfig::default()
    };
    let out = synth_generate(&config, &a.out)?;
    eprintln!(
        "wrote {} training and {} validation patients to {}",
        out.manifest.n_train,
        out.manifest.n_val,
        a.out.display()
    );
    Ok(())
}

fn select(a: &SelectArgs) -> Result<(), CliError> {
    require_dir(&a.data)?;
    let sel = a.selection.config();
    sel.validate()?;
    let mode: Mode = a.mode.into();
    let dataset = Dataset::open(&a.data, None)?;
    let rows: Vec<String> = dataset
        .entries
        .par_iter()
        .map(|e| {
            let volume = svol::read_volume(&e.path)?;
            let idx = selection::select_indices(&volume, &sel, mode)?;
            let mut row = format!("{},{}", e.patient_id, idx.len());
            for i in idx {
                let _ = write!(row, ",{i}");
            }
            Ok(row)
        })
        .collect::<covid_am::Result<_>>()?;
    let mut text = rows.join("\n");
    text.push('\n');
    emit(a.out.as_deref(), &text)
}

fn train(a: &TrainArgs, seed: u64) -> Result<(), CliError> {
    require_dir(&a.data)?;
    let labels = labels_for(&a.data, a.labels.as_ref())?;
    let sel = a.selection.config();
    sel.validate()?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed,
        scheme_to_train: a.scheme_to_train.into(),
        clamp_eps: a.clamp_eps,
        sha_epochs: a.sha_epochs,
        sha_learning_rate: a.sha_learning_rate,
        alpha: a.alpha,
    };
    config.validate()?;
    let dataset = Dataset::open(&a.data, Some(&labels))?;
    let out = trainer::train(&dataset, &config, &sel)?;

    if let Some(parent) = a.weights.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    weights::save_model(&a.weights, &out.params, out.sha.as_ref())?;
    let dir = a.weights.parent().unwrap_or(Path::new(""));
    let history = a.history.clone().unwrap_or_else(|| dir.join("history.csv"));
    write_text(&history, &trainer::history_csv(&out.history.epoch_loss))?;
    if !out.history.sha_epoch_loss.is_empty() {
        let sha_path = history.with_file_name("sha_history.csv");
        write_text(
            &sha_path,
            &trainer::history_csv(&out.history.sha_epoch_loss),
        )?;
    }
    if let Some(last) = out.history.epoch_loss.last() {
        eprintln!(
            "trained {} epochs, final mean loss {last:.6}",
            config.epochs
        );
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<(), CliError> {
    require_dir(&a.data)?;
    let sel = a.selection.config();
    let vote = vote_config(&a.vote);
    let (params, sha) = weights::load_model(&a.weights)?;
    let dataset = Dataset::open(&a.data, None)?;
    let patients = pipeline::load_selected(&dataset, &sel, Mode::Test)?;
    let outputs = pipeline::infer_patients(&patients, &params)?;
    let mut text = String::from(PREDICTIONS_CSV_HEADER);
    text.push('\n');
    for scheme in a.scheme.schemes() {
        for d in pipeline::decide_all(&outputs, scheme, sha.as_ref(), &vote)? {
            text.push_str(&pipeline::prediction_row(&d));
            text.push('\n');
        }
    }
    emit(a.out.as_deref(), &text)
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    require_dir(&a.data)?;
    let labels = labels_for(&a.data, a.labels.as_ref())?;
    let sel = a.selection.config();
    let vote = vote_config(&a.vote);
    let (params, sha) = weights::load_model(&a.weights)?;
    let dataset = Dataset::open(&a.data, Some(&labels))?;
    let patients = pipeline::load_selected(&dataset, &sel, Mode::Test)?;
    let outputs = pipeline::infer_patients(&patients, &params)?;
    let mut text = String::new();
    let mut csv = format!("{REPORT_CSV_HEADER}\n");
    for scheme in a.scheme.schemes() {
        let report = pipeline::evaluate_outputs(&outputs, scheme, sha.as_ref(), &vote)?;
        text.push_str(&report.to_text());
        text.push('\n');
        csv.push_str(&report.to_csv_row());
        csv.push('\n');
    }
    emit(None, &text)?;
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => emit(None, &csv),
    }
}
