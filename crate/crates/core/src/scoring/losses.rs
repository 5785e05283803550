//! Loss functions over detached logits, each with its gradient.
//!
//! Training pushes these gradients back through the backend by
//! backpropagating `sum(logits * grad)`, so the functions here define both
//! the reported loss and the update direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::Answer;

/// Vocabulary ids of the two verbalizer words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalizerIds {
    pub entail: usize,
    pub contradict: usize,
}

impl VerbalizerIds {
    pub fn id(&self, label: Answer) -> usize {
        match label {
            Answer::Entail => self.entail,
            Answer::Contradict => self.contradict,
        }
    }
}

/// Which logits form the denominator of `q(label | x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftmaxScope {
    /// Softmax over the two verbalizer logits only.
    #[default]
    Verbalizer,
    /// `q(entail)` is the full-vocabulary probability of the entail word;
    /// `q(contradict) = 1 - q(entail)`.
    FullVocab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerDistribution {
    pub entail: f64,
    pub contradict: f64,
}

impl VerbalizerDistribution {
    pub fn prob(&self, label: Answer) -> f64 {
        match label {
            Answer::Entail => self.entail,
            Answer::Contradict => self.contradict,
        }
    }
}

fn check_ids(logits: &[f64], ids: &VerbalizerIds) -> Result<()> {
    if ids.entail >= logits.len() || ids.contradict >= logits.len() {
        return Err(Error::Config(format!(
            "verbalizer ids {ids:?} outside a vocabulary of {}",
            logits.len()
        )));
    }
    Ok(())
}

pub fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits.iter().copied());
    logits.iter().map(|z| (z - lse).exp()).collect()
}

/// `q(y|x)` from the mask-position logits.
pub fn verbalizer_softmax(
    logits: &[f64],
    ids: &VerbalizerIds,
    scope: SoftmaxScope,
) -> Result<VerbalizerDistribution> {
    check_ids(logits, ids)?;
    let entail = match scope {
        SoftmaxScope::Verbalizer => {
            let (a, b) = (logits[ids.entail], logits[ids.contradict]);
            1.0 / (1.0 + (b - a).exp())
        }
        SoftmaxScope::FullVocab => (logits[ids.entail] - logsumexp(logits.iter().copied())).exp(),
    };
    Ok(VerbalizerDistribution {
        entail,
        contradict: 1.0 - entail,
    })
}

/// Cross-entropy of the verbalizer distribution against the gold label.
pub fn pet_loss(q: &VerbalizerDistribution, gold: Answer) -> f64 {
    -q.prob(gold).max(f64::MIN_POSITIVE).ln()
}

/// [`pet_loss`] with its gradient with respect to every mask logit.
pub fn pet_loss_grad(logits: &[f64], ids: &VerbalizerIds, gold: Answer) -> Result<(f64, Vec<f64>)> {
    check_ids(logits, ids)?;
    let (g, o) = (ids.id(gold), ids.id(gold.flip()));
    // -log sigmoid(z_g - z_o), computed stably
    let d = logits[g] - logits[o];
    let loss = if d > 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    };
    let p_other = 1.0 / (1.0 + d.exp());
    let mut grad = vec![0.0; logits.len()];
    grad[g] = -p_other;
    grad[o] = p_other;
    Ok((loss, grad))
}

/// Decoupled label loss: with `p` the full-vocabulary softmax,
/// `-log p(gold word) - log(1 - p(other word))`.
pub fn decoupled_label_loss(logits: &[f64], ids: &VerbalizerIds, gold: Answer) -> Result<f64> {
    decoupled_label_loss_grad(logits, ids, gold).map(|(l, _)| l)
}

pub fn decoupled_label_loss_grad(
    logits: &[f64],
    ids: &VerbalizerIds,
    gold: Answer,
) -> Result<(f64, Vec<f64>)> {
    check_ids(logits, ids)?;
    let (g, o) = (ids.id(gold), ids.id(gold.flip()));
    let lse = logsumexp(logits.iter().copied());
    let lse_without_o = logsumexp(
        logits
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != o)
            .map(|(_, z)| *z),
    );
    let log_pg = logits[g] - lse;
    let log_po = logits[o] - lse;
    let log_not_po = lse_without_o - lse;
    let loss = -log_pg - log_not_po;

    let p: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    // d/dz_j [-log(1 - p_o)] = p_o (δ_jo - p_j) / (1 - p_o)
    let ratio = (log_po - log_not_po).exp();
    let mut grad: Vec<f64> = p.iter().map(|pj| pj - ratio * pj).collect();
    grad[g] -= 1.0;
    grad[o] += ratio;
    Ok((loss, grad))
}

/// `-log softmax(logits)[target]` and its gradient.
pub fn token_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let lse = logsumexp(logits.iter().copied());
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

/// Linear tag classifier `W h + b` used by the token-classification baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `n_tags` rows of width `hidden`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        self.weight
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(h).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineLoss {
    pub loss: f64,
    pub grad_weight: Vec<Vec<f64>>,
    pub grad_bias: Vec<f64>,
    pub grad_reps: Vec<Vec<f64>>,
}

/// Summed token-level cross-entropy of the tag classifier:
/// `-Σ_i log softmax(W h_i + b)[y_i]`.
pub fn baseline_loss(reps: &[Vec<f64>], gold: &[usize], head: &LinearHead) -> Result<BaselineLoss> {
    if reps.len() != gold.len() {
        return Err(Error::Argument(format!(
            "{} token representations but {} gold tags",
            reps.len(),
            gold.len()
        )));
    }
    let n_tags = head.bias.len();
    let hidden = head.weight.first().map_or(0, Vec::len);
    let mut out = BaselineLoss {
        loss: 0.0,
        grad_weight: vec![vec![0.0; hidden]; n_tags],
        grad_bias: vec![0.0; n_tags],
        grad_reps: Vec::with_capacity(reps.len()),
    };
    for (h, &y) in reps.iter().zip(gold) {
        if y >= n_tags || h.len() != hidden {
            return Err(Error::Argument(
                "tag id or representation width out of range".into(),
            ));
        }
        let (loss, dz) = token_cross_entropy(&head.logits(h), y);
        out.loss += loss;
        let mut dh = vec![0.0; hidden];
        for (t, dzt) in dz.iter().enumerate() {
            out.grad_bias[t] += dzt;
            for k in 0..hidden {
                out.grad_weight[t][k] += dzt * h[k];
                dh[k] += dzt * head.weight[t][k];
            }
        }
        out.grad_reps.push(dh);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const IDS: VerbalizerIds = VerbalizerIds {
        entail: 1,
        contradict: 3,
    };

    #[test]
    fn softmax_examples() {
        let q = verbalizer_softmax(&[0.0, 0.7, -1.0, 0.7], &IDS, SoftmaxScope::Verbalizer).unwrap();
        assert!((q.entail - 0.5).abs() < 1e-12);
        let q = verbalizer_softmax(&[5.0, 2.0, 9.0, 0.0], &IDS, SoftmaxScope::Verbalizer).unwrap();
        // independent: e^2 / (e^2 + e^0)
        let e2 = std::f64::consts::E.powi(2);
        assert!((q.entail - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((q.entail - 0.880797).abs() < 1e-5 && (q.contradict - 0.119203).abs() < 1e-5);
        let shifted =
            verbalizer_softmax(&[5.0, 12.0, 9.0, 10.0], &IDS, SoftmaxScope::Verbalizer).unwrap();
        assert!((shifted.entail - q.entail).abs() < 1e-12);
        assert!(verbalizer_softmax(&[0.0, 1.0], &IDS, SoftmaxScope::Verbalizer).is_err());
    }

    #[test]
    fn full_vocab_scope() {
        let z = [0.0, 1.0, 0.0, 1.0];
        let q = verbalizer_softmax(&z, &IDS, SoftmaxScope::FullVocab).unwrap();
        let e = std::f64::consts::E;
        assert!((q.entail - e / (2.0 + 2.0 * e)).abs() < 1e-12);
        assert!((q.entail + q.contradict - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pet_closed_forms() {
        let one = VerbalizerDistribution {
            entail: 1.0,
            contradict: 0.0,
        };
        assert_eq!(pet_loss(&one, Answer::Entail), 0.0);
        let half = VerbalizerDistribution {
            entail: 0.5,
            contradict: 0.5,
        };
        assert!((pet_loss(&half, Answer::Contradict) - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = pet_loss_grad(&[0.0, 3.0, 0.0, 3.0], &IDS, Answer::Entail).unwrap();
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn decoupled_four_token_hand_oracle() {
        // logits (1, 2, 0, -1); gold = entail (id 1), other = id 3.
        let z = [1.0, 2.0, 0.0, -1.0];
        let e = std::f64::consts::E;
        let denom = e + e * e + 1.0 + 1.0 / e;
        let p_gold = e * e / denom;
        let p_other = (1.0 / e) / denom;
        let hand = -p_gold.ln() - (1.0 - p_other).ln();
        let got = decoupled_label_loss(&z, &IDS, Answer::Entail).unwrap();
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
    }

    #[test]
    fn decoupled_limit_and_monotonicity() {
        let z = [-1e3, 1e3, -1e3, -1e3];
        assert!(decoupled_label_loss(&z, &IDS, Answer::Entail).unwrap() < 1e-12);
        let mut z = [0.3, -0.2, 1.1, 0.4];
        let mut prev = f64::INFINITY;
        for _ in 0..20 {
            let l = decoupled_label_loss(&z, &IDS, Answer::Entail).unwrap();
            assert!(l < prev);
            prev = l;
            z[1] += 0.25;
        }
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = a
            .iter()
            .chain(b)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        diff / norm
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ids = VerbalizerIds {
                entail: 2,
                contradict: 4,
            };
            for gold in [Answer::Entail, Answer::Contradict] {
                let (_, g) = pet_loss_grad(&z, &ids, gold).unwrap();
                let fd = central_diff(|x| pet_loss_grad(x, &ids, gold).unwrap().0, &z, 1e-3);
                assert!(rel_err(&g, &fd) < 1e-4);
                let (_, g) = decoupled_label_loss_grad(&z, &ids, gold).unwrap();
                let fd = central_diff(|x| decoupled_label_loss(x, &ids, gold).unwrap(), &z, 1e-3);
                assert!(rel_err(&g, &fd) < 1e-4);
            }
        }
    }

    #[test]
    fn baseline_closed_forms() {
        let head = LinearHead {
            weight: vec![vec![0.0; 3]; 4],
            bias: vec![0.0; 4],
        };
        let reps = vec![vec![1.0, 2.0, 3.0]; 5];
        let l = baseline_loss(&reps, &[0, 1, 2, 3, 0], &head).unwrap();
        assert!((l.loss - 5.0 * 4f64.ln()).abs() < 1e-12);
        let sharp = LinearHead {
            weight: vec![vec![0.0; 1]; 2],
            bias: vec![1e3, -1e3],
        };
        assert!(baseline_loss(&[vec![0.0]], &[0], &sharp).unwrap().loss < 1e-12);
        assert!(baseline_loss(&reps, &[0], &head).is_err());
    }
}
