use arch_tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::perceptual::{perceptual_loss, FeatureExtractor};
use super::{LossWeights, Reconstruction, VqganError};

/// Unweighted loss terms of one generator step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub reconstruction: f32,
    pub perceptual: f32,
    pub commitment: f32,
    pub adversarial: f32,
    pub total: f32,
}

impl LossComponents {
    pub fn weighted_total(&self, w: &LossWeights) -> f32 {
        w.alpha * self.reconstruction + w.beta * self.perceptual + w.gamma * self.commitment + w.delta * self.adversarial
    }

    pub fn is_finite(&self) -> bool {
        [self.reconstruction, self.perceptual, self.commitment, self.adversarial, self.total].iter().all(|v| v.is_finite())
    }
}

/// `‖sg[z] − z_q‖² + ‖sg[z_q] − z‖²`, each as a mean over elements. The first
/// term moves only the codebook, the second only the encoder.
pub fn commitment_loss(latent: &Var, codes: &Var) -> Var {
    latent.detach().mse(codes).add(&codes.detach().mse(latent))
}

pub fn reconstruction_loss(kind: Reconstruction, logits: &Var, target: &Tensor) -> Var {
    match kind {
        Reconstruction::Bce => logits.bce_with_logits(target),
        Reconstruction::L1 => logits.sigmoid().sub(&Var::constant(target.clone())).abs().mean_all(),
    }
}

/// Inputs of the generator objective.
pub struct LossInputs<'a> {
    pub target: &'a Tensor,
    pub logits: &'a Var,
    pub latent: &'a Var,
    pub codes: &'a Var,
    /// Discriminator logits on the reconstruction; `None` skips the adversarial term.
    pub fake_logits: Option<&'a Var>,
}

/// Weighted generator loss and its components. `delta` overrides the
/// configured adversarial weight, which lets callers ramp it up.
pub fn compute_losses(
    inputs: LossInputs,
    kind: Reconstruction,
    weights: &LossWeights,
    delta: f32,
    extractor: &FeatureExtractor,
) -> Result<(Var, LossComponents), VqganError> {
    let recon = reconstruction_loss(kind, inputs.logits, inputs.target);
    let prediction = inputs.logits.sigmoid();
    let perceptual = perceptual_loss(extractor, &Var::constant(inputs.target.clone()), &prediction);
    let commit = commitment_loss(inputs.latent, inputs.codes);
    let mut total = recon.scale(weights.alpha).add(&perceptual.scale(weights.beta)).add(&commit.scale(weights.gamma));
    let mut adversarial = 0.0;
    if let Some(fake) = inputs.fake_logits {
        let adv = super::disc::hinge_generator_loss(fake);
        adversarial = adv.item();
        total = total.add(&adv.scale(delta));
    }
    let c = LossComponents {
        reconstruction: recon.item(),
        perceptual: perceptual.item(),
        commitment: commit.item(),
        adversarial,
        total: total.item(),
    };
    if !c.is_finite() {
        return Err(VqganError::Divergence { step: 0, components: c });
    }
    Ok((total, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_total_of_unit_components() {
        let c = LossComponents { reconstruction: 1.0, perceptual: 1.0, commitment: 1.0, adversarial: 1.0, total: 0.0 };
        assert!((c.weighted_total(&LossWeights::default()) - 110.35).abs() < 1e-4);
    }

    #[test]
    fn commitment_zero_when_exact() {
        let z = Var::param(Tensor::new(vec![1, 2, 1, 1, 1], vec![0.5, -1.0]));
        assert_eq!(commitment_loss(&z, &z.detach()).item(), 0.0);
    }
}
