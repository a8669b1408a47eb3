//! Finite-difference checks of every backward rule.

use arch_tensor::ops::ConvGeom;
use arch_tensor::{backward, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape.to_vec(), 1.0, &mut rng)
}

/// Compare autograd against central differences of `loss = sum(f(x) * probe)`.
fn check(name: &str, shapes: &[&[usize]], f: impl Fn(&[Var]) -> Var) {
    let inputs: Vec<Tensor> = shapes.iter().enumerate().map(|(i, s)| rand_tensor(s, 17 + i as u64)).collect();
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars);
    let probe = Var::constant(rand_tensor(&out.shape(), 99));
    let loss = out.mul(&probe).sum_all();
    backward(&loss);

    let eval = |vals: &[Tensor]| -> f64 {
        let vs: Vec<Var> = vals.iter().cloned().map(Var::constant).collect();
        let o = f(&vs).tensor();
        o.data().iter().zip(probe.value().data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
    };
    let eps = 1e-2f32;
    for (k, var) in vars.iter().enumerate() {
        let analytic = var.grad().expect("missing gradient");
        let mut num = vec![0f64; inputs[k].numel()];
        for (i, slot) in num.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= eps;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * eps as f64);
        }
        let diff: f64 = num.iter().zip(analytic.data()).map(|(n, a)| (n - *a as f64).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-6);
        assert!(diff / norm < 2e-2, "{name}: input {k} relative error {}", diff / norm);
    }
}

#[test]
fn elementwise_and_broadcast() {
    check("add_bcast", &[&[2, 3, 4], &[3, 1]], |v| v[0].add(&v[1]));
    check("sub_bcast", &[&[2, 3, 4], &[4]], |v| v[0].sub(&v[1]));
    check("mul_bcast", &[&[2, 3, 2, 2], &[2, 3, 1, 1]], |v| v[0].mul(&v[1]));
    check("silu", &[&[10]], |v| v[0].silu());
    check("gelu", &[&[10]], |v| v[0].gelu());
    check("sigmoid", &[&[10]], |v| v[0].sigmoid());
    check("tanh", &[&[10]], |v| v[0].tanh());
    check("leaky", &[&[10]], |v| v[0].leaky_relu(0.2));
}

#[test]
fn reductions_and_shapes() {
    check("mean_axis", &[&[2, 3, 4]], |v| v[0].mean_axis(1));
    check("permute", &[&[2, 3, 4]], |v| v[0].permute(&[1, 2, 0]));
    check("concat", &[&[2, 1, 3], &[2, 2, 3]], |v| Var::concat(&[v[0].clone(), v[1].clone()], 1));
    check("narrow", &[&[2, 5, 3]], |v| v[0].narrow(1, 1, 3));
    check("mean_all", &[&[7]], |v| v[0].mean_all().reshape(vec![1]));
}

#[test]
fn matmuls() {
    check("mm", &[&[3, 4], &[4, 5]], |v| v[0].matmul(&v[1]));
    check("mm_ta", &[&[4, 3], &[4, 5]], |v| v[0].matmul_t(&v[1], true, false));
    check("mm_tb", &[&[3, 4], &[5, 4]], |v| v[0].matmul_t(&v[1], false, true));
    check("mm_tab", &[&[4, 3], &[5, 4]], |v| v[0].matmul_t(&v[1], true, true));
    check("bmm", &[&[2, 3, 4], &[2, 5, 4]], |v| v[0].bmm(&v[1], false, true));
}

#[test]
fn convolutions() {
    check("conv3d", &[&[2, 2, 5, 4, 4], &[3, 2, 3, 3, 3], &[3]], |v| {
        v[0].conv3d(&v[1], Some(&v[2]), ConvGeom::cubic(3, 1, 1))
    });
    check("conv3d_s2", &[&[1, 2, 6, 6, 6], &[2, 2, 3, 3, 3]], |v| v[0].conv3d(&v[1], None, ConvGeom::cubic(3, 2, 1)));
    check("conv3d_1x1", &[&[2, 3, 2, 2, 2], &[4, 3, 1, 1, 1], &[4]], |v| {
        v[0].conv3d(&v[1], Some(&v[2]), ConvGeom::cubic(1, 1, 0))
    });
    check("conv2d", &[&[1, 2, 1, 5, 5], &[3, 2, 1, 3, 3]], |v| v[0].conv3d(&v[1], None, ConvGeom::planar(3, 2, 1)));
    check("conv_t", &[&[2, 3, 2, 2, 2], &[3, 2, 4, 4, 4], &[2]], |v| {
        v[0].conv_transpose3d(&v[1], Some(&v[2]), ConvGeom::cubic(4, 2, 1))
    });
}

#[test]
fn norms_and_losses() {
    check("group_norm", &[&[2, 4, 3, 2], &[4], &[4]], |v| v[0].group_norm(&v[1], &v[2], 2, 1e-5));
    check("layer_norm", &[&[3, 6], &[6], &[6]], |v| v[0].layer_norm(&v[1], &v[2], 1e-5));
    check("softmax_causal", &[&[2, 3, 4]], |v| v[0].softmax_last(Some(1)));
    check("cross_entropy", &[&[4, 6]], |v| v[0].cross_entropy(&[1, 0, 5, 2]).reshape(vec![1]));
    let t = Tensor::new(vec![6], vec![0., 1., 1., 0., 1., 0.]);
    check("bce", &[&[6]], |v| v[0].bce_with_logits(&t).reshape(vec![1]));
    check("embedding", &[&[5, 3]], |v| v[0].embedding(&[4, 1, 1, 0]));
    check("resize", &[&[1, 2, 3, 4]], |v| v[0].resize_bilinear(5, 7));
}

#[test]
fn shared_inputs_accumulate() {
    check("x*x+x", &[&[5]], |v| v[0].mul(&v[0]).add(&v[0]));
}
