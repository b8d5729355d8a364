//! Side-by-side evaluation of the trained model and the Kalman baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kalman::{kf_run, KfModel};
use crate::metrics::EvalResult;
use crate::model::{score_sequence, Parameters};
use crate::training::{calibrate_threshold, LabeledSequence};

pub fn assm_scores(params: &Parameters, seqs: &[LabeledSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter()
        .map(|s| score_sequence(params, s.xs()))
        .collect()
}

pub fn kf_scores(model: &KfModel, seqs: &[LabeledSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter().map(|s| kf_run(model, s.xs())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub assm: EvalResult,
    pub kf: EvalResult,
    pub horizon: usize,
    pub test_sequences: usize,
    pub test_samples: usize,
}

/// Test-set metrics for both detectors. The model keeps its own calibrated
/// threshold; the baseline's threshold is calibrated the same way on the
/// training split.
pub fn evaluate(
    params: &Parameters,
    threshold: f64,
    kf: &KfModel,
    train: &[LabeledSequence],
    test: &[LabeledSequence],
    horizon: usize,
) -> Result<EvalReport> {
    let labels: Vec<&[u8]> = test.iter().map(LabeledSequence::ys).collect();

    let kf_train: Vec<f64> = kf_scores(kf, train)?.into_iter().flatten().collect();
    let train_labels: Vec<u8> = train.iter().flat_map(|s| s.ys().iter().copied()).collect();
    let kf_threshold = calibrate_threshold(&kf_train, &train_labels)?.threshold;

    let assm = EvalResult::compute(&assm_scores(params, test)?, &labels, threshold, horizon)?;
    let kf = EvalResult::compute(&kf_scores(kf, test)?, &labels, kf_threshold, horizon)?;
    Ok(EvalReport {
        assm,
        kf,
        horizon,
        test_sequences: test.len(),
        test_samples: labels.iter().map(|l| l.len()).sum(),
    })
}
