use arch_tensor::nn::{join, Conv3d, Module};
use arch_tensor::ops::ConvGeom;
use arch_tensor::Var;
use rand::Rng;

use super::DiscriminatorConfig;

/// 3D PatchGAN: stride-2 cubes of edge 2 stacked until the receptive field
/// reaches `receptive_field`, so every logit sees one disjoint input cube.
pub struct PatchDiscriminator {
    convs: Vec<Conv3d>,
}

impl PatchDiscriminator {
    pub fn new<R: Rng>(c: &DiscriminatorConfig, rng: &mut R) -> Self {
        let depth = c.receptive_field.trailing_zeros() as usize;
        let mut convs = Vec::with_capacity(depth);
        let mut cin = 1;
        for i in 0..depth {
            let cout = if i + 1 == depth { 1 } else { c.channels << i };
            convs.push(Conv3d::new(cin, cout, ConvGeom::cubic(2, 2, 0), rng));
            cin = cout;
        }
        PatchDiscriminator { convs }
    }

    /// `[N, 1, R, R, R]` to `[N, 1, R/R_D, R/R_D, R/R_D]` logits.
    pub fn forward(&self, x: &Var) -> Var {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h);
            if i + 1 < self.convs.len() {
                h = h.leaky_relu(0.2);
            }
        }
        h
    }
}

impl Module for PatchDiscriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.convs.visit(&join(prefix, "convs"), f);
    }
}

/// Hinge loss of the discriminator: `mean(relu(1 - real)) + mean(relu(1 + fake))`.
pub fn hinge_discriminator_loss(real: &Var, fake: &Var) -> Var {
    real.neg().add_scalar(1.0).relu().mean_all().add(&fake.add_scalar(1.0).relu().mean_all())
}

/// Generator side of the hinge game: `-mean(fake)`.
pub fn hinge_generator_loss(fake: &Var) -> Var {
    fake.mean_all().neg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use arch_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logit_map_tiles_receptive_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = PatchDiscriminator::new(&DiscriminatorConfig { receptive_field: 8, channels: 4 }, &mut rng);
        let x = Var::constant(Tensor::zeros(vec![1, 1, 64, 64, 64]));
        assert_eq!(d.forward(&x).shape(), vec![1, 1, 8, 8, 8]);
    }

    #[test]
    fn logit_depends_only_on_its_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = PatchDiscriminator::new(&DiscriminatorConfig { receptive_field: 8, channels: 4 }, &mut rng);
        let mut t = Tensor::randn(vec![1, 1, 16, 16, 16], 1.0, &mut rng);
        let before = d.forward(&Var::constant(t.clone())).tensor();
        // Perturb one voxel in the cube at logit (z=1, y=0, x=1).
        t.data_mut()[8 + 16 * (3 + 16 * 12)] += 5.0;
        let after = d.forward(&Var::constant(t)).tensor();
        for i in 0..8 {
            let changed = before.data()[i] != after.data()[i];
            assert_eq!(changed, i == 1 + 2 * (0 + 2 * 1), "logit {i}");
        }
    }

    #[test]
    fn hinge_values() {
        let real = Var::constant(Tensor::new(vec![2], vec![2.0, 0.5]));
        let fake = Var::constant(Tensor::new(vec![2], vec![-2.0, 0.0]));
        assert_eq!(hinge_discriminator_loss(&real, &fake).item(), 0.25 + 0.5);
        assert_eq!(hinge_generator_loss(&fake).item(), 1.0);
    }
}
