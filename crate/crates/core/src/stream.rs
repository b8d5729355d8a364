//! Per-sample online detection: ingest, update the state, score, decide, and
//! optionally take a supervised gradient step over recent history.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metrics::{measure_throughput, Throughput};
use crate::model::{forward_into, Parameters, StepBuffers};
use crate::training::{apply_update, window_loss_and_gradient, Objective, Window};

/// Settings for the optional online gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineUpdate {
    pub alpha: f64,
    pub learning_rate: f64,
    pub bptt_window: usize,
    pub grad_clip: f64,
}

impl Default for OnlineUpdate {
    fn default() -> Self {
        OnlineUpdate {
            alpha: 1.0,
            learning_rate: 1e-3,
            bptt_window: 100,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub threshold: f64,
    pub online_update: bool,
    pub update_period: usize,
    pub window_capacity: usize,
    pub update: OnlineUpdate,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            threshold: f64::INFINITY,
            online_update: false,
            update_period: 100,
            window_capacity: 100,
            update: OnlineUpdate::default(),
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() {
            return Err(Error::InvalidConfig("threshold is NaN".into()));
        }
        if self.update_period == 0 || self.window_capacity == 0 {
            return Err(Error::InvalidConfig(
                "update_period and window_capacity must be >= 1".into(),
            ));
        }
        if self.online_update {
            let u = &self.update;
            if u.bptt_window == 0 || self.window_capacity < u.bptt_window {
                return Err(Error::InvalidConfig(format!(
                    "window_capacity ({}) must be >= bptt_window ({}) with online updates",
                    self.window_capacity, u.bptt_window
                )));
            }
            if !(u.learning_rate >= 0.0 && u.alpha >= 0.0 && u.grad_clip > 0.0) {
                return Err(Error::InvalidConfig(
                    "invalid online update settings".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub t: u64,
    pub score: f64,
    pub is_anomaly: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamCounters {
    pub samples_seen: u64,
    pub alarms_raised: u64,
    pub updates_applied: u64,
}

/// Fixed-capacity history of recent samples, each with the recurrent carry
/// that preceded it so a gradient window can be replayed from its start.
#[derive(Debug, Clone)]
struct History {
    capacity: usize,
    len: usize,
    /// Slot the next sample goes into.
    head: usize,
    m: usize,
    d: usize,
    xs: Vec<f64>,
    ys: Vec<Option<u8>>,
    /// Empty when carries are not recorded.
    h_before: Vec<f64>,
    x_before: Vec<f64>,
}

impl History {
    fn new(capacity: usize, m: usize, d: usize, record_carry: bool) -> Self {
        History {
            capacity,
            len: 0,
            head: 0,
            m,
            d,
            xs: vec![0.0; capacity * m],
            ys: vec![None; capacity],
            h_before: if record_carry {
                vec![0.0; capacity * d]
            } else {
                Vec::new()
            },
            x_before: if record_carry {
                vec![0.0; capacity * m]
            } else {
                Vec::new()
            },
        }
    }

    fn push(&mut self, x: &[f64], y: Option<u8>, h_before: &[f64], x_before: &[f64]) {
        let (m, d, i) = (self.m, self.d, self.head);
        self.xs[i * m..(i + 1) * m].copy_from_slice(x);
        self.ys[i] = y;
        if !self.h_before.is_empty() {
            self.h_before[i * d..(i + 1) * d].copy_from_slice(h_before);
            self.x_before[i * m..(i + 1) * m].copy_from_slice(x_before);
        }
        self.head = (i + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Slot of the `k`-th most recent `n` entries, oldest first.
    fn slot(&self, n: usize, k: usize) -> usize {
        (self.head + self.capacity - n + k) % self.capacity
    }

    fn heap_bytes(&self) -> usize {
        self.xs.capacity() * 8
            + self.ys.capacity() * std::mem::size_of::<Option<u8>>()
            + self.h_before.capacity() * 8
            + self.x_before.capacity() * 8
    }
}

/// Live detection state for one stream. Owns its copy-on-write reference to
/// the parameters; online updates never touch other handles' parameters.
#[derive(Debug, Clone)]
pub struct StreamHandle {
    params: Arc<Parameters>,
    config: StreamConfig,
    h: Vec<f64>,
    x_prev: Vec<f64>,
    buf: StepBuffers,
    history: History,
    counters: StreamCounters,
}

pub fn open_stream(params: Arc<Parameters>, config: StreamConfig) -> Result<StreamHandle> {
    config.validate()?;
    let arch = *params.arch();
    let history = History::new(
        config.window_capacity,
        arch.input_dim,
        arch.state_dim,
        config.online_update,
    );
    Ok(StreamHandle {
        h: vec![0.0; arch.state_dim],
        x_prev: vec![0.0; arch.input_dim],
        buf: StepBuffers::new(&arch),
        history,
        counters: StreamCounters::default(),
        params,
        config,
    })
}

impl StreamHandle {
    pub fn counters(&self) -> StreamCounters {
        self.counters
    }

    pub fn params(&self) -> &Arc<Parameters> {
        &self.params
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn hidden(&self) -> &[f64] {
        &self.h
    }

    pub fn buffered(&self) -> usize {
        self.history.len
    }

    /// Heap plus inline bytes held by this handle, excluding the shared
    /// parameters.
    pub fn resident_bytes(&self) -> usize {
        let b = &self.buf;
        std::mem::size_of::<Self>()
            + (self.h.capacity() + self.x_prev.capacity()) * 8
            + (b.pre.capacity()
                + b.gate.capacity()
                + b.act.capacity()
                + b.h.capacity()
                + b.x_hat.capacity()
                + b.resid.capacity())
                * 8
            + self.history.heap_bytes()
    }

    /// Processes one sample. Without an online update this does one gate,
    /// one state update, one projection and one distance, and allocates
    /// nothing. Rejected samples leave the handle unchanged.
    ///
    /// An online update that fails numerically returns its error after the
    /// sample itself has been consumed; the parameters are left as they were.
    pub fn push(&mut self, x: &[f64], y: Option<u8>) -> Result<Verdict> {
        check_dim("stream sample", self.params.input_dim(), x.len())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("stream sample"));
        }
        if let Some(label) = y.filter(|&l| l > 1) {
            return Err(Error::InvalidLabel {
                label,
                position: self.counters.samples_seen as usize,
            });
        }

        let score = forward_into(&self.params, &self.h, &self.x_prev, x, &mut self.buf);
        self.history.push(x, y, &self.h, &self.x_prev);
        std::mem::swap(&mut self.h, &mut self.buf.h);
        self.x_prev.copy_from_slice(x);

        let t = self.counters.samples_seen;
        self.counters.samples_seen += 1;
        let is_anomaly = score > self.config.threshold;
        if is_anomaly {
            self.counters.alarms_raised += 1;
        }

        if self.config.online_update
            && y.is_some()
            && self.counters.samples_seen.is_multiple_of(self.config.update_period as u64)
        {
            self.online_step()?;
        }
        Ok(Verdict {
            t,
            score,
            is_anomaly,
        })
    }

    fn online_step(&mut self) -> Result<()> {
        let u = self.config.update;
        let hist = &self.history;
        let n = hist.len.min(u.bptt_window);
        let (m, d) = (hist.m, hist.d);
        let first = hist.slot(n, 0);
        let xs: Vec<&[f64]> = (0..n)
            .map(|k| {
                let s = hist.slot(n, k);
                &hist.xs[s * m..(s + 1) * m]
            })
            .collect();
        let labels: Vec<Option<u8>> = (0..n).map(|k| hist.ys[hist.slot(n, k)]).collect();
        let win = Window {
            h0: &hist.h_before[first * d..(first + 1) * d],
            x0: &hist.x_before[first * m..(first + 1) * m],
            xs: &xs,
            labels: &labels,
        };
        let objective = Objective::unmasked(u.alpha);
        let (_, mut grads) =
            window_loss_and_gradient(&self.params, &win, objective, u.bptt_window)?;
        let mut next = (*self.params).clone();
        apply_update(&mut next, &mut grads, u.learning_rate, u.grad_clip);
        if !next.is_finite() {
            return Err(Error::NonFinite("online update"));
        }
        self.params = Arc::new(next);
        self.counters.updates_applied += 1;
        Ok(())
    }
}

const BENCH_TABLE: usize = 1024;

/// Single-stream throughput of [`StreamHandle::push`] on a synthetic
/// sinusoid, no labels supplied.
pub fn bench(params: Arc<Parameters>, n: usize, online_update: bool) -> Result<Throughput> {
    let m = params.input_dim();
    let table: Vec<Vec<f64>> = (0..BENCH_TABLE)
        .map(|i| (0..m).map(|c| (0.05 * i as f64 + c as f64).sin()).collect())
        .collect();
    let config = StreamConfig {
        threshold: 1.0,
        online_update,
        update_period: 1,
        ..StreamConfig::default()
    };
    let mut handle = open_stream(params, config)?;
    let mut failure = None;
    let result = measure_throughput(
        |i| {
            if let Err(e) = handle.push(&table[i % BENCH_TABLE], None) {
                failure.get_or_insert(e);
            }
        },
        n,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}
