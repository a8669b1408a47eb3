use crate::graph::Var;
use crate::tensor::Tensor;

/// Normalize `groups` contiguous blocks of `len` values each, then apply a
/// per-channel affine map. Shared by group norm (channels span blocks) and
/// layer norm (each block is one row over the channel axis).
struct BlockNorm {
    groups: usize,
    len: usize,
    /// channel index of element `i` inside a block is `(i / inner) % channels`
    channels: usize,
    inner: usize,
    eps: f32,
}

impl BlockNorm {
    fn forward(&self, x: &[f32], gamma: &[f32], beta: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut y = vec![0f32; x.len()];
        let mut xhat = vec![0f32; x.len()];
        let mut rstd = vec![0f32; self.groups];
        for g in 0..self.groups {
            let block = &x[g * self.len..(g + 1) * self.len];
            let mean = block.iter().map(|&v| v as f64).sum::<f64>() / self.len as f64;
            let var = block.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / self.len as f64;
            let r = 1.0 / (var + self.eps as f64).sqrt();
            rstd[g] = r as f32;
            for i in 0..self.len {
                let idx = g * self.len + i;
                let h = ((x[idx] as f64 - mean) * r) as f32;
                xhat[idx] = h;
                let c = self.channel(g, i);
                y[idx] = h * gamma[c] + beta[c];
            }
        }
        (y, xhat, rstd)
    }

    fn channel(&self, g: usize, i: usize) -> usize {
        ((g * self.len + i) / self.inner) % self.channels
    }

    fn backward(
        &self,
        dy: &[f32],
        xhat: &[f32],
        rstd: &[f32],
        gamma: &[f32],
    ) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut dx = vec![0f32; dy.len()];
        let mut dgamma = vec![0f64; self.channels];
        let mut dbeta = vec![0f64; self.channels];
        for g in 0..self.groups {
            let mut mean_g = 0f64;
            let mut mean_gx = 0f64;
            for i in 0..self.len {
                let idx = g * self.len + i;
                let c = self.channel(g, i);
                let gi = (dy[idx] * gamma[c]) as f64;
                mean_g += gi;
                mean_gx += gi * xhat[idx] as f64;
                dgamma[c] += (dy[idx] * xhat[idx]) as f64;
                dbeta[c] += dy[idx] as f64;
            }
            mean_g /= self.len as f64;
            mean_gx /= self.len as f64;
            for i in 0..self.len {
                let idx = g * self.len + i;
                let c = self.channel(g, i);
                let gi = (dy[idx] * gamma[c]) as f64;
                dx[idx] = (rstd[g] as f64 * (gi - mean_g - xhat[idx] as f64 * mean_gx)) as f32;
            }
        }
        (
            dx,
            dgamma.into_iter().map(|v| v as f32).collect(),
            dbeta.into_iter().map(|v| v as f32).collect(),
        )
    }
}

fn apply(x: &Var, gamma: &Var, beta: &Var, norm: BlockNorm) -> Var {
    let (y, xhat, rstd) = {
        let xv = x.value();
        let gv = gamma.value();
        let bv = beta.value();
        norm.forward(xv.data(), gv.data(), bv.data())
    };
    let shape = x.shape();
    let channels = norm.channels;
    Var::from_op(
        Tensor::new(shape.clone(), y),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, inputs, _, needs| {
            let (dx, dgamma, dbeta) = norm.backward(g.data(), &xhat, &rstd, inputs[1].data());
            vec![
                needs[0].then(|| Tensor::new(shape.clone(), dx)),
                needs[1].then(|| Tensor::new(vec![channels], dgamma)),
                needs[2].then(|| Tensor::new(vec![channels], dbeta)),
            ]
        }),
    )
}

impl Var {
    /// Group normalization over `[N, C, ...]` with per-channel affine parameters.
    pub fn group_norm(&self, gamma: &Var, beta: &Var, groups: usize, eps: f32) -> Var {
        let s = self.shape();
        let (n, c) = (s[0], s[1]);
        assert!(c % groups == 0, "channels {c} not divisible by groups {groups}");
        let inner: usize = s[2..].iter().product();
        apply(
            self,
            gamma,
            beta,
            BlockNorm { groups: n * groups, len: c / groups * inner, channels: c, inner, eps },
        )
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f32) -> Var {
        let s = self.shape();
        let c = *s.last().expect("layer_norm on scalar");
        let rows = s.iter().product::<usize>() / c;
        apply(self, gamma, beta, BlockNorm { groups: rows, len: c, channels: c, inner: 1, eps })
    }
}
