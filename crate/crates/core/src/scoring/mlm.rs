use rand::seq::index::sample;
use rand::Rng;

use super::{token_cross_entropy, Vocab};
use crate::error::Result;
use crate::prompting::MaskedInput;

/// `ceil(rate * content_tokens)`, guarding against float noise such as
/// `0.15 * 20 = 3.0000000000000004`.
pub fn mlm_count(mask_rate: f64, content_tokens: usize) -> usize {
    let raw = mask_rate * content_tokens as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(content_tokens)
}

/// Picks content positions (hypothesis and premise words) to hide, sorted.
pub fn choose_mlm_positions(input: &MaskedInput, mask_rate: f64, rng: &mut impl Rng) -> Vec<usize> {
    let content: Vec<usize> = (0..input.len())
        .filter(|&i| input.roles[i].is_content())
        .collect();
    let n = mlm_count(mask_rate, content.len());
    let mut picked: Vec<usize> = sample(rng, content.len(), n)
        .into_iter()
        .map(|i| content[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcMlmOutcome {
    pub loss: f64,
    pub positions: Vec<usize>,
    /// True when no token could be masked; the loss is then zero.
    pub skipped: bool,
}

/// A re-masked copy of an input with the original token ids to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmExample {
    pub input: MaskedInput,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Hides `ceil(rate * content)` content tokens; `None` when there are none.
pub fn mask_for_mlm(
    input: &MaskedInput,
    vocab: &Vocab,
    mask_rate: f64,
    rng: &mut impl Rng,
) -> Option<MlmExample> {
    let positions = choose_mlm_positions(input, mask_rate, rng);
    if positions.is_empty() {
        return None;
    }
    let targets = positions
        .iter()
        .map(|&p| vocab.id(&input.tokens[p]) as usize)
        .collect();
    let mut masked = input.clone();
    let mask_word = vocab.boundary().mask;
    for &p in &positions {
        masked.tokens[p] = mask_word.clone();
    }
    Some(MlmExample {
        input: masked,
        positions,
        targets,
    })
}

/// Mean cross-entropy of `rows` against `targets`, with per-row gradients
/// already divided by the row count.
pub fn mean_token_loss(rows: &[Vec<f64>], targets: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(rows.len());
    for (row, &t) in rows.iter().zip(targets) {
        let (l, mut g) = token_cross_entropy(row, t);
        loss += l / n;
        g.iter_mut().for_each(|x| *x /= n);
        grads.push(g);
    }
    (loss, grads)
}

/// Label-conditioned MLM on an input that already carries the correct
/// answer word in its mask slot. `scores` receives the re-masked input and
/// the hidden positions and returns one logit row per position. Returns the
/// mean cross-entropy and per-row gradients.
pub fn label_conditioned_mlm_loss(
    input: &MaskedInput,
    vocab: &Vocab,
    mask_rate: f64,
    rng: &mut impl Rng,
    scores: impl FnOnce(&MaskedInput, &[usize]) -> Result<Vec<Vec<f64>>>,
) -> Result<(LcMlmOutcome, Vec<Vec<f64>>)> {
    let Some(ex) = mask_for_mlm(input, vocab, mask_rate, rng) else {
        log::debug!("label-conditioned MLM skipped: no content tokens");
        let outcome = LcMlmOutcome {
            loss: 0.0,
            positions: Vec::new(),
            skipped: true,
        };
        return Ok((outcome, Vec::new()));
    };
    let rows = scores(&ex.input, &ex.positions)?;
    let (loss, grads) = mean_token_loss(&rows, &ex.targets);
    Ok((
        LcMlmOutcome {
            loss,
            positions: ex.positions,
            skipped: false,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{Boundary, PatternLayout, Role};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(words: usize) -> MaskedInput {
        let premise: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
        let p = PatternLayout::builtin(1).unwrap();
        p.render(
            &premise.join(" "),
            &premise,
            "h",
            &[("h".into(), Role::Hypothesis)],
            &Boundary::default(),
        )
        .with_answer("yes")
    }

    #[test]
    fn ceiling_arithmetic() {
        assert_eq!(mlm_count(0.15, 20), 3);
        assert_eq!(mlm_count(0.15, 21), 4);
        assert_eq!(mlm_count(0.15, 0), 0);
        assert_eq!(mlm_count(0.01, 5), 1);
    }

    #[test]
    fn twenty_content_tokens_mask_three() {
        let inp = input(19); // 19 premise words + 1 hypothesis word
        let pos = choose_mlm_positions(&inp, 0.15, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(pos.len(), 3);
        assert!(pos.iter().all(|&p| inp.roles[p].is_content()));
        assert_ne!(inp.tokens[inp.mask_index], "[MASK]");
    }

    #[test]
    fn reproducible_positions() {
        let inp = input(30);
        let a = choose_mlm_positions(&inp, 0.15, &mut ChaCha8Rng::seed_from_u64(7));
        let b = choose_mlm_positions(&inp, 0.15, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn nothing_to_mask_is_skipped() {
        let mut inp = input(1);
        for r in inp.roles.iter_mut() {
            if r.is_content() {
                *r = Role::Literal;
            }
        }
        let vocab = Vocab::build(["yes"], 1);
        let (out, grads) = label_conditioned_mlm_loss(
            &inp,
            &vocab,
            0.15,
            &mut ChaCha8Rng::seed_from_u64(0),
            |_, _| panic!("scorer must not run"),
        )
        .unwrap();
        assert!(out.skipped && out.loss == 0.0 && grads.is_empty());
    }

    #[test]
    fn loss_is_mean_cross_entropy() {
        let inp = input(9);
        let vocab = Vocab::build(
            (0..9)
                .map(|i| format!("w{i}"))
                .collect::<Vec<_>>()
                .iter()
                .map(String::as_str),
            1,
        );
        let v = vocab.len();
        let (out, grads) = label_conditioned_mlm_loss(
            &inp,
            &vocab,
            0.3,
            &mut ChaCha8Rng::seed_from_u64(1),
            |m, pos| {
                assert!(pos.iter().all(|&p| m.tokens[p] == "[MASK]"));
                Ok(vec![vec![0.0; v]; pos.len()])
            },
        )
        .unwrap();
        assert_eq!(out.positions.len(), 3);
        assert!((out.loss - (v as f64).ln()).abs() < 1e-12);
        assert_eq!(grads.len(), 3);
    }
}
