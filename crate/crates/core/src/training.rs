//! Supervised training: the reconstruction + classification objective, exact
//! reverse-mode gradients through the recurrence, a central-difference
//! oracle, mini-batch gradient descent, and F1 threshold calibration.
//!
//! Per timestep the objective is
//!
//! ```text
//! |x_t - x_hat_t|^2 + alpha * bce(sigmoid(score_weight * s_t + score_bias), y_t)
//! ```
//!
//! summed over the sequence. Truncated backpropagation splits the sequence
//! into consecutive chunks of `bptt_window` steps and stops gradient flow
//! through the hidden state at every chunk start.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::metrics::f1_from_counts;
use crate::model::{
    forward_into, init_parameters, Architecture, ModelConfig, Parameters, StepBuffers, Tensor,
};
use crate::seed::rng_for;

/// One labeled sensor sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    xs: Vec<Vec<f64>>,
    ys: Vec<u8>,
}

impl LabeledSequence {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<u8>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_dim("labels", xs.len(), ys.len())?;
        let m = xs[0].len();
        if m == 0 {
            return Err(Error::InvalidConfig("zero-dimensional samples".into()));
        }
        for x in &xs {
            check_dim("sample", m, x.len())?;
        }
        if let Some((position, &label)) = ys.iter().enumerate().find(|(_, &y)| y > 1) {
            return Err(Error::InvalidLabel { label, position });
        }
        Ok(LabeledSequence { xs, ys })
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[u8] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.xs[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub bptt_window: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Drop the reconstruction term at labeled anomalies.
    pub mask_anomalous_recon: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            learning_rate: 1e-3,
            epochs: 20,
            bptt_window: 100,
            batch_size: 32,
            grad_clip: 5.0,
            seed: 0,
            mask_anomalous_recon: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.epochs == 0 || self.bptt_window == 0 || self.batch_size == 0 {
            return bad("epochs, bptt_window and batch_size must be >= 1");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            alpha: self.alpha,
            mask_anomalous_recon: self.mask_anomalous_recon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub class: f64,
}

impl LossBreakdown {
    fn add(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.recon += other.recon;
        self.class += other.class;
    }
}

/// ∂L/∂θ, shaped like [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub(crate) Parameters);

impl Gradients {
    pub fn zeros(arch: Architecture) -> Self {
        Gradients(Parameters::zeros(arch))
    }

    pub fn arch(&self) -> &Architecture {
        self.0.arch()
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        self.0.tensor(t)
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        self.0.tensor_mut(t)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter_values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in Tensor::ALL {
            self.tensor_mut(t).iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for t in Tensor::ALL {
            for (a, b) in self.tensor_mut(t).iter_mut().zip(other.tensor(t)) {
                *a += b;
            }
        }
    }

    /// Rescales to norm `max_norm` if larger. Returns the pre-clip norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    fn check_finite(&self) -> Result<()> {
        for t in Tensor::ALL {
            if !self.tensor(t).iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient(t.name()));
            }
        }
        Ok(())
    }
}

/// Loss weighting shared by the offline trainer and online updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub mask_anomalous_recon: bool,
}

impl Objective {
    pub fn unmasked(alpha: f64) -> Self {
        Objective {
            alpha,
            mask_anomalous_recon: false,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `bce(sigmoid(z), y) = softplus(z) - y z`, computed without overflow.
#[inline]
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Forward activations of a window, kept for the backward pass.
struct Trace {
    d: usize,
    m: usize,
    pre: Vec<f64>,
    act: Vec<f64>,
    h: Vec<f64>,
    resid: Vec<f64>,
    score: Vec<f64>,
}

impl Trace {
    fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.d..(t + 1) * self.d]
    }
}

/// A contiguous run of samples with its starting carry. Labels are optional
/// per step; unlabeled steps contribute no classification term.
pub(crate) struct Window<'a, X> {
    pub h0: &'a [f64],
    pub x0: &'a [f64],
    pub xs: &'a [X],
    pub labels: &'a [Option<u8>],
}

fn forward_window<X: AsRef<[f64]>>(
    params: &Parameters,
    win: &Window<'_, X>,
    obj: Objective,
    keep_trace: bool,
) -> Result<(LossBreakdown, Option<Trace>)> {
    let (m, d) = (params.input_dim(), params.state_dim());
    let n = win.xs.len();
    let mut buf = StepBuffers::new(params.arch());
    let mut trace = keep_trace.then(|| Trace {
        d,
        m,
        pre: Vec::with_capacity(n * d),
        act: Vec::with_capacity(n * d),
        h: Vec::with_capacity(n * d),
        resid: Vec::with_capacity(n * m),
        score: Vec::with_capacity(n),
    });
    let mut h = win.h0.to_vec();
    let mut loss = LossBreakdown::default();
    for t in 0..n {
        let x = win.xs[t].as_ref();
        let x_prev = if t == 0 {
            win.x0
        } else {
            win.xs[t - 1].as_ref()
        };
        let score = forward_into(params, &h, x_prev, x, &mut buf);
        let label = win.labels[t];
        let recon_on = !(obj.mask_anomalous_recon && label == Some(1));
        let recon = if recon_on {
            dot(&buf.resid, &buf.resid)
        } else {
            0.0
        };
        let class = match label {
            Some(y) => bce_logit(
                params.score_weight * score + params.score_bias,
                f64::from(y),
            ),
            None => 0.0,
        };
        loss.recon += recon;
        loss.class += class;
        if let Some(tr) = trace.as_mut() {
            tr.pre.extend_from_slice(&buf.pre);
            tr.act.extend_from_slice(&buf.act);
            tr.h.extend_from_slice(&buf.h);
            tr.resid.extend_from_slice(&buf.resid);
            tr.score.push(score);
        }
        h.copy_from_slice(&buf.h);
    }
    loss.total = loss.recon + obj.alpha * loss.class;
    if !(loss.total.is_finite() && loss.recon.is_finite() && loss.class.is_finite()) {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, trace))
}

fn backward_window<X: AsRef<[f64]>>(
    params: &Parameters,
    win: &Window<'_, X>,
    obj: Objective,
    bptt_window: usize,
    trace: &Trace,
    g: &mut Gradients,
) {
    let (m, d) = (trace.m, trace.d);
    let n = win.xs.len();
    let act_fn = params.arch.activation;
    let distance = params.arch.distance;
    let gamma = params.gate_scale;
    let g = &mut g.0;

    let mut dh_carry = vec![0.0; d];
    let mut dh = vec![0.0; d];
    let mut dgate = vec![0.0; d];
    let mut dpre = vec![0.0; d];
    let mut dxhat = vec![0.0; m];

    for t in (0..n).rev() {
        let x = win.xs[t].as_ref();
        let x_prev = if t == 0 {
            win.x0
        } else {
            win.xs[t - 1].as_ref()
        };
        let h_prev = if t == 0 { win.h0 } else { trace.h_at(t - 1) };
        let h_t = trace.h_at(t);
        let pre = &trace.pre[t * d..(t + 1) * d];
        let act = &trace.act[t * d..(t + 1) * d];
        let resid = &trace.resid[t * m..(t + 1) * m];
        let score = trace.score[t];
        let label = win.labels[t];

        let mut dscore = 0.0;
        if let Some(y) = label {
            let z = params.score_weight * score + params.score_bias;
            let dz = obj.alpha * (sigmoid(z) - f64::from(y));
            g.score_weight += dz * score;
            g.score_bias += dz;
            dscore = dz * params.score_weight;
        }
        let recon_on = !(obj.mask_anomalous_recon && label == Some(1));
        // ∂/∂resid of the reconstruction and score terms; x_hat = x - resid.
        let score_coef = match distance {
            crate::model::Distance::L2 if score > 0.0 => dscore / score,
            crate::model::Distance::L2 => 0.0,
            crate::model::Distance::SquaredL2 => 2.0 * dscore,
        };
        let recon_coef = if recon_on { 2.0 } else { 0.0 };
        for (dx, &r) in dxhat.iter_mut().zip(resid) {
            *dx = -(recon_coef + score_coef) * r;
        }

        g.proj_weight.add_outer(&dxhat, h_t);
        for (b, &v) in g.proj_bias.iter_mut().zip(&dxhat) {
            *b += v;
        }
        dh.copy_from_slice(&dh_carry);
        params.proj_weight.mul_vec_t_acc(&dxhat, &mut dh);

        g.transition.add_outer(&dh, h_prev);
        g.input.add_outer(&dh, x);
        g.gate_mix.add_outer(&dh, act);

        dgate.fill(0.0);
        params.gate_mix.mul_vec_t_acc(&dh, &mut dgate);
        let mut dgamma = 0.0;
        for i in 0..d {
            dgate[i] *= act_fn.derivative_from_output(act[i]);
            if pre[i] > 0.0 {
                dgamma += dgate[i] * pre[i];
                dpre[i] = dgate[i] * gamma;
            } else {
                dpre[i] = 0.0;
            }
        }
        g.gate_scale += dgamma;
        g.gate_state.add_outer(&dpre, h_prev);
        g.gate_input.add_outer(&dpre, x_prev);

        dh_carry.fill(0.0);
        if t % bptt_window != 0 {
            params.transition.mul_vec_t_acc(&dh, &mut dh_carry);
            params.gate_state.mul_vec_t_acc(&dpre, &mut dh_carry);
        }
    }
}

pub(crate) fn window_loss_and_gradient<X: AsRef<[f64]>>(
    params: &Parameters,
    win: &Window<'_, X>,
    obj: Objective,
    bptt_window: usize,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, trace) = forward_window(params, win, obj, true)?;
    let mut g = Gradients::zeros(*params.arch());
    backward_window(
        params,
        win,
        obj,
        bptt_window.max(1),
        trace.as_ref().expect("trace kept"),
        &mut g,
    );
    g.check_finite()?;
    Ok((loss, g))
}

fn labeled_window<'a>(
    seq: &'a LabeledSequence,
    zeros_h: &'a [f64],
    zeros_x: &'a [f64],
    labels: &'a [Option<u8>],
) -> Window<'a, Vec<f64>> {
    Window {
        h0: zeros_h,
        x0: zeros_x,
        xs: &seq.xs,
        labels,
    }
}

fn check_seq(params: &Parameters, seq: &LabeledSequence) -> Result<()> {
    check_dim("sequence sample", params.input_dim(), seq.input_dim())
}

impl Objective {
    pub fn loss(&self, params: &Parameters, seq: &LabeledSequence) -> Result<LossBreakdown> {
        check_seq(params, seq)?;
        let labels: Vec<Option<u8>> = seq.ys.iter().map(|&y| Some(y)).collect();
        let (h0, x0) = (vec![0.0; params.state_dim()], vec![0.0; params.input_dim()]);
        Ok(forward_window(
            params,
            &labeled_window(seq, &h0, &x0, &labels),
            *self,
            false,
        )?
        .0)
    }

    pub fn loss_and_gradient(
        &self,
        params: &Parameters,
        seq: &LabeledSequence,
        bptt_window: usize,
    ) -> Result<(LossBreakdown, Gradients)> {
        check_seq(params, seq)?;
        let labels: Vec<Option<u8>> = seq.ys.iter().map(|&y| Some(y)).collect();
        let (h0, x0) = (vec![0.0; params.state_dim()], vec![0.0; params.input_dim()]);
        window_loss_and_gradient(
            params,
            &labeled_window(seq, &h0, &x0, &labels),
            *self,
            bptt_window,
        )
    }
}

pub fn total_loss(params: &Parameters, seq: &LabeledSequence, alpha: f64) -> Result<LossBreakdown> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidConfig("alpha must be >= 0".into()));
    }
    Objective::unmasked(alpha).loss(params, seq)
}

/// Exact gradient of [`total_loss`] by backpropagation through time.
pub fn backward(
    params: &Parameters,
    seq: &LabeledSequence,
    alpha: f64,
    bptt_window: usize,
) -> Result<Gradients> {
    if bptt_window == 0 {
        return Err(Error::InvalidConfig("bptt_window must be >= 1".into()));
    }
    Ok(Objective::unmasked(alpha)
        .loss_and_gradient(params, seq, bptt_window)?
        .1)
}

/// Central-difference gradient of [`total_loss`], one scalar at a time.
pub fn finite_difference_gradient(
    params: &Parameters,
    seq: &LabeledSequence,
    alpha: f64,
    epsilon: f64,
) -> Result<Gradients> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be > 0".into()));
    }
    let mut probe = params.clone();
    let mut g = Gradients::zeros(*params.arch());
    for t in Tensor::ALL {
        for i in 0..params.tensor(t).len() {
            let orig = params.tensor(t)[i];
            probe.tensor_mut(t)[i] = orig + epsilon;
            let up = total_loss(&probe, seq, alpha)?.total;
            probe.tensor_mut(t)[i] = orig - epsilon;
            let down = total_loss(&probe, seq, alpha)?.total;
            probe.tensor_mut(t)[i] = orig;
            g.tensor_mut(t)[i] = (up - down) / (2.0 * epsilon);
        }
    }
    Ok(g)
}

/// Chosen cutoff: a sample is flagged when `score > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
}

/// Picks the F1-maximizing cutoff among `+inf`, every midpoint between
/// adjacent distinct scores, and `-inf`. Ties go to the higher cutoff.
pub fn calibrate_threshold(scores: &[f64], labels: &[u8]) -> Result<Calibration> {
    check_dim("calibrate_threshold labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::NoPositiveLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut best = Calibration {
        threshold: f64::INFINITY,
        f1: 0.0,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let upper = scores[order[i]];
        while i < order.len() && scores[order[i]] == upper {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Everything at or above `upper` is now flagged.
        let threshold = match order.get(i) {
            Some(&next) => {
                let lower = scores[next];
                let mid = lower + (upper - lower) / 2.0;
                if mid < upper && mid >= lower {
                    mid
                } else {
                    lower
                }
            }
            None => f64::NEG_INFINITY,
        };
        let f1 = f1_from_counts(tp, fp, positives - tp);
        if f1 > best.f1 {
            best = Calibration { threshold, f1 };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sequence losses over the epoch.
    pub loss: LossBreakdown,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub calibration: Calibration,
}

impl TrainReport {
    pub fn total_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.total).collect()
    }
}

/// Scores of every sequence, concatenated in order, with matching labels.
pub fn pooled_scores(params: &Parameters, data: &[LabeledSequence]) -> Result<(Vec<f64>, Vec<u8>)> {
    let per_seq: Vec<Vec<f64>> = data
        .par_iter()
        .map(|s| crate::model::score_sequence(params, s.xs()))
        .collect::<Result<_>>()?;
    let scores = per_seq.into_iter().flatten().collect();
    let labels = data.iter().flat_map(|s| s.ys().iter().copied()).collect();
    Ok((scores, labels))
}

/// Threshold calibration on training data. Without positive labels the
/// cutoff sits at the largest training score, so no training sample alarms.
pub fn calibrate_on(params: &Parameters, data: &[LabeledSequence]) -> Result<Calibration> {
    let (scores, labels) = pooled_scores(params, data)?;
    match calibrate_threshold(&scores, &labels) {
        Err(Error::NoPositiveLabels) => Ok(Calibration {
            threshold: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            f1: 0.0,
        }),
        other => other,
    }
}

/// One clipped gradient-descent update; returns the pre-clip norm.
pub(crate) fn apply_update(
    params: &mut Parameters,
    grads: &mut Gradients,
    learning_rate: f64,
    grad_clip: f64,
) -> f64 {
    let norm = grads.clip_norm(grad_clip);
    for t in Tensor::ALL {
        let g = grads.tensor(t).to_vec();
        for (p, gi) in params.tensor_mut(t).iter_mut().zip(g) {
            *p -= learning_rate * gi;
        }
    }
    norm
}

/// Mini-batch gradient descent from a fresh initialization.
///
/// Per-sequence gradients in a batch are computed in parallel and summed in
/// batch order, so results do not depend on the worker count.
pub fn train(
    config: &ModelConfig,
    tconfig: &TrainConfig,
    dataset: &[LabeledSequence],
) -> Result<(Parameters, TrainReport)> {
    config.validate()?;
    tconfig.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in dataset {
        check_dim("training sequence", config.input_dim, s.input_dim())?;
    }
    let mut params = init_parameters(config)?;
    let obj = tconfig.objective();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(tconfig.epochs);

    for epoch in 0..tconfig.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng_for(tconfig.seed, "shuffle", epoch as u64));
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(tconfig.batch_size) {
            let results: Vec<(LossBreakdown, Gradients)> = batch
                .par_iter()
                .map(|&i| obj.loss_and_gradient(&params, &dataset[i], tconfig.bptt_window))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) | Error::NonFiniteGradient(_) => {
                        Error::Divergence { epoch }
                    }
                    other => other,
                })?;
            let mut grads = Gradients::zeros(*params.arch());
            for (loss, g) in &results {
                epoch_loss.add(loss);
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            apply_update(
                &mut params,
                &mut grads,
                tconfig.learning_rate,
                tconfig.grad_clip,
            );
            if !params.is_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        let n = dataset.len() as f64;
        epochs.push(EpochStats {
            epoch,
            loss: LossBreakdown {
                total: epoch_loss.total / n,
                recon: epoch_loss.recon / n,
                class: epoch_loss.class / n,
            },
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }

    let calibration = calibrate_on(&params, dataset)?;
    Ok((
        params,
        TrainReport {
            epochs,
            calibration,
        },
    ))
}
