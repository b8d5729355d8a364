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
