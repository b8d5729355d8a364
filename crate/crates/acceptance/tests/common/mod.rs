#![allow(dead_code)]

use assm::linalg::norm2;
use assm::model::{Activation, Architecture, Distance, Parameters, Tensor};
use assm::training::LabeledSequence;
use rand::Rng;

pub fn random_params(
    rng: &mut impl Rng,
    m: usize,
    d: usize,
    activation: Activation,
    distance: Distance,
) -> Parameters {
    let arch = Architecture {
        input_dim: m,
        state_dim: d,
        activation,
        distance,
    };
    let mut p = Parameters::zeros(arch);
    for t in Tensor::ALL {
        for v in p.tensor_mut(t) {
            *v = rng.random_range(-0.6..0.6);
        }
    }
    p.tensor_mut(Tensor::GateScale)[0] = rng.random_range(0.5..1.5);
    p.tensor_mut(Tensor::ScoreWeight)[0] = rng.random_range(0.5..1.5);
    p
}

pub fn random_seq(rng: &mut impl Rng, m: usize, len: usize) -> LabeledSequence {
    let xs = (0..len)
        .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = (0..len).map(|_| u8::from(rng.random_bool(0.3))).collect();
    LabeledSequence::new(xs, ys).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, absolute when both are ~0.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm2(a).max(norm2(b));
    if scale < 1e-12 {
        norm2(&diff)
    } else {
        norm2(&diff) / scale
    }
}

/// Smallest |D h_{t-1} + E x_{t-1}| over steps t >= 1, recomputed with
/// plain loops. Step 0 is skipped: its pre-activation is identically zero
/// since h_0 = x_0 = 0, so no perturbation crosses the kink there.
pub fn min_relu_margin(p: &Parameters, xs: &[Vec<f64>]) -> f64 {
    let (m, d) = (p.input_dim(), p.state_dim());
    let dm = p.tensor(Tensor::GateState);
    let em = p.tensor(Tensor::GateInput);
    let outs = assm::model::run_sequence(p, xs).unwrap();
    let mut h_prev = vec![0.0; d];
    let mut x_prev = vec![0.0; m];
    let mut margin = f64::INFINITY;
    for (t, out) in outs.iter().enumerate() {
        for i in (0..d).filter(|_| t > 0) {
            let mut pre = 0.0;
            for j in 0..d {
                pre += dm[i * d + j] * h_prev[j];
            }
            for j in 0..m {
                pre += em[i * m + j] * x_prev[j];
            }
            margin = margin.min(pre.abs());
        }
        h_prev.clone_from(&out.h);
        x_prev.clone_from(&xs[t]);
    }
    margin
}

/// Probability a positive outscores a negative, ties one half, by
/// enumerating every pair.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Scores drawn from a small grid so ties are common, with both classes
/// present.
pub fn tied_instance(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let levels = rng.random_range(2..12);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 * 0.25)
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}
