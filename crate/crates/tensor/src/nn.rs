//! Parameterized layers and parameter traversal.

use rand::Rng;

use crate::ops::ConvGeom;
use crate::{Tensor, Var};

/// Anything holding trainable parameters under stable names.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var));

    fn named_params(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, v| out.push((name, v.clone())));
        out
    }

    fn params(&self) -> Vec<Var> {
        self.named_params().into_iter().map(|(_, v)| v).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value().numel()).sum()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    /// GPT-style init: weights ~ N(0, std), zero bias.
    pub fn normal<R: Rng + ?Sized>(inp: usize, out: usize, std: f32, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: Var::param(Tensor::randn(vec![out, inp], std, rng)),
            bias: bias.then(|| Var::param(Tensor::zeros(vec![out]))),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inp as f32).sqrt();
        Self {
            weight: Var::param(Tensor::uniform(vec![out, inp], bound, rng)),
            bias: Some(Var::param(Tensor::uniform(vec![out], bound, rng))),
        }
    }

    /// `[M, in] -> [M, out]`
    pub fn forward(&self, x: &Var) -> Var {
        let y = x.matmul_t(&self.weight, false, true);
        match &self.bias {
            Some(b) => y.add(b),
            None => y,
        }
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub geom: ConvGeom,
}

impl Conv3d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, geom: ConvGeom, rng: &mut R) -> Self {
        let [kd, kh, kw] = geom.kernel;
        let bound = 1.0 / ((cin * kd * kh * kw) as f32).sqrt();
        Self {
            weight: Var::param(Tensor::uniform(vec![cout, cin, kd, kh, kw], bound, rng)),
            bias: Some(Var::param(Tensor::uniform(vec![cout], bound, rng))),
            geom,
        }
    }

    /// Weights scaled to zero so the layer starts as a constant map.
    pub fn zeroed(self) -> Self {
        self.weight.update_value(|w| w.data_mut().fill(0.0));
        if let Some(b) = &self.bias {
            b.update_value(|t| t.data_mut().fill(0.0));
        }
        self
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.conv3d(&self.weight, self.bias.as_ref(), self.geom)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for Conv3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose3d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub geom: ConvGeom,
}

impl ConvTranspose3d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, geom: ConvGeom, rng: &mut R) -> Self {
        let [kd, kh, kw] = geom.kernel;
        // fan-in of each output voxel ~ cin * kernel / stride^3
        let stride: usize = geom.stride.iter().product();
        let fan_in = (cin * kd * kh * kw / stride).max(1);
        let bound = 1.0 / (fan_in as f32).sqrt();
        Self {
            weight: Var::param(Tensor::uniform(vec![cin, cout, kd, kh, kw], bound, rng)),
            bias: Some(Var::param(Tensor::uniform(vec![cout], bound, rng))),
            geom,
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.conv_transpose3d(&self.weight, self.bias.as_ref(), self.geom)
    }
}

impl Module for ConvTranspose3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: Var,
    pub beta: Var,
    pub groups: usize,
}

impl GroupNorm {
    /// Largest group count ≤ 8 dividing `channels`.
    pub fn new(channels: usize) -> Self {
        let groups = (1..=8).rev().find(|g| channels % g == 0).unwrap_or(1);
        Self {
            gamma: Var::param(Tensor::ones(vec![channels])),
            beta: Var::param(Tensor::zeros(vec![channels])),
            groups,
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.group_norm(&self.gamma, &self.beta, self.groups, 1e-5)
    }
}

impl Module for GroupNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self { gamma: Var::param(Tensor::ones(vec![width])), beta: Var::param(Tensor::zeros(vec![width])) }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.layer_norm(&self.gamma, &self.beta, 1e-5)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Var,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(count: usize, width: usize, std: f32, rng: &mut R) -> Self {
        Self { table: Var::param(Tensor::randn(vec![count, width], std, rng)) }
    }

    pub fn forward(&self, ids: &[usize]) -> Var {
        self.table.embedding(ids)
    }
}

impl Module for Embedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        f(join(prefix, "table"), &self.table);
    }
}
