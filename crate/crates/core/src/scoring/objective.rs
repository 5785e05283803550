use crate::error::Result;
use crate::prompting::Answer;
use crate::registry::Registry;

use super::{decoupled_label_loss_grad, pet_loss_grad, VerbalizerIds};

/// Loss on the mask-position logits of one instance.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Loss value and its gradient with respect to every mask logit.
    fn label_loss(
        &self,
        logits: &[f64],
        ids: &VerbalizerIds,
        gold: Answer,
    ) -> Result<(f64, Vec<f64>)>;
}

/// Full-vocabulary decoupled loss on the two verbalizer words.
pub struct Decoupled;

impl Objective for Decoupled {
    fn name(&self) -> &'static str {
        "decoupled"
    }

    fn label_loss(
        &self,
        logits: &[f64],
        ids: &VerbalizerIds,
        gold: Answer,
    ) -> Result<(f64, Vec<f64>)> {
        decoupled_label_loss_grad(logits, ids, gold)
    }
}

/// Cross-entropy of the two-word verbalizer softmax.
pub struct Pet;

impl Objective for Pet {
    fn name(&self) -> &'static str {
        "pet"
    }

    fn label_loss(
        &self,
        logits: &[f64],
        ids: &VerbalizerIds,
        gold: Answer,
    ) -> Result<(f64, Vec<f64>)> {
        pet_loss_grad(logits, ids, gold)
    }
}

pub fn objective_registry() -> Registry<fn() -> Box<dyn Objective>> {
    Registry::<fn() -> Box<dyn Objective>>::new("objective")
        .with("decoupled", || Box::new(Decoupled))
        .with("pet", || Box::new(Pet))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names() {
        let r = objective_registry();
        assert_eq!(r.names(), ["decoupled", "pet"]);
        let obj = (r.get("pet").unwrap())();
        let (l, _) = obj
            .label_loss(
                &[0.0, 0.0],
                &VerbalizerIds {
                    entail: 0,
                    contradict: 1,
                },
                Answer::Entail,
            )
            .unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
