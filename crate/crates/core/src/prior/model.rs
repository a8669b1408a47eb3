use arch_tensor::nn::{join, Embedding, LayerNorm, Linear, Module};
use arch_tensor::{no_grad, Tensor, Var};
use rand::Rng;

use super::PriorConfig;

struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc: Linear,
    out: Linear,
}

/// Keys and values seen so far, per layer, as `[H, t, hd]`.
pub struct KvCache {
    layers: Vec<Option<(Tensor, Tensor)>>,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.layers.first().and_then(|l| l.as_ref()).map_or(0, |(k, _)| k.shape()[1])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn append(cache: &Option<(Tensor, Tensor)>, k: Tensor, v: Tensor) -> (Tensor, Tensor) {
    match cache {
        None => (k, v),
        Some((ck, cv)) => {
            let cat = |a: &Tensor, b: &Tensor| Var::concat(&[Var::constant(a.clone()), Var::constant(b.clone())], 1).tensor();
            (cat(ck, &k), cat(cv, &v))
        }
    }
}

impl Block {
    fn new<R: Rng>(w: usize, layers: usize, rng: &mut R) -> Self {
        let resid_std = 0.02 / (2.0 * layers as f32).sqrt();
        Block {
            ln1: LayerNorm::new(w),
            qkv: Linear::normal(w, 3 * w, 0.02, true, rng),
            proj: Linear::normal(w, w, resid_std, true, rng),
            ln2: LayerNorm::new(w),
            fc: Linear::normal(w, 4 * w, 0.02, true, rng),
            out: Linear::normal(4 * w, w, resid_std, true, rng),
        }
    }

    /// `x`: `[B*T, W]`. With a cache, `b` must be 1 and `t` counts new positions.
    fn forward(&self, x: &Var, b: usize, t: usize, heads: usize, cache: Option<&mut Option<(Tensor, Tensor)>>) -> Var {
        let w = x.shape()[1];
        let hd = w / heads;
        let qkv = self.qkv.forward(&self.ln1.forward(x)).reshape(vec![b, t, 3, heads, hd]).permute(&[2, 0, 3, 1, 4]);
        let part = |i: usize| qkv.narrow(0, i, 1).reshape(vec![b * heads, t, hd]);
        let (q, mut k, mut v) = (part(0), part(1), part(2));
        let mut offset = 0;
        if let Some(slot) = cache {
            offset = slot.as_ref().map_or(0, |(ck, _)| ck.shape()[1]);
            let (nk, nv) = append(slot, k.tensor(), v.tensor());
            k = Var::constant(nk.clone());
            v = Var::constant(nv.clone());
            *slot = Some((nk, nv));
        }
        let att = q.bmm(&k, false, true).scale(1.0 / (hd as f32).sqrt()).softmax_last(Some(offset));
        let y = att.bmm(&v, false, false).reshape(vec![b, heads, t, hd]).permute(&[0, 2, 1, 3]).reshape(vec![b * t, w]);
        let x = x.add(&self.proj.forward(&y));
        let h = self.out.forward(&self.fc.forward(&self.ln2.forward(&x)).gelu());
        x.add(&h)
    }
}

impl Module for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

/// Decoder-only transformer over `K` codes plus SOS and MASK ids.
pub struct Gpt {
    pub config: PriorConfig,
    tok: Embedding,
    pos: Embedding,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

impl Gpt {
    pub fn new<R: Rng>(config: PriorConfig, rng: &mut R) -> Self {
        let w = config.width;
        Gpt {
            tok: Embedding::new(config.codebook_size + 2, w, 0.02, rng),
            pos: Embedding::new(config.context(), w, 0.02, rng),
            blocks: (0..config.layers).map(|_| Block::new(w, config.layers, rng)).collect(),
            ln_f: LayerNorm::new(w),
            head: Linear::normal(w, config.codebook_size, 0.02, false, rng),
            config,
        }
    }

    /// Logits `[B*T, K]` for input ids `[B][T]` starting at position 0.
    pub fn forward(&self, ids: &[Vec<usize>]) -> Var {
        let b = ids.len();
        let t = ids[0].len();
        assert!(t <= self.config.context(), "sequence of {t} exceeds context {}", self.config.context());
        let flat: Vec<usize> = ids.iter().flatten().copied().collect();
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let mut x = self.tok.forward(&flat).add(&self.pos.forward(&positions));
        for blk in &self.blocks {
            x = blk.forward(&x, b, t, self.config.heads, None);
        }
        self.head.forward(&self.ln_f.forward(&x))
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache { layers: (0..self.blocks.len()).map(|_| None).collect() }
    }

    /// Feed one id at the next position; returns the `K` logits after it.
    pub fn step(&self, id: usize, cache: &mut KvCache) -> Vec<f32> {
        let p = cache.len();
        assert!(p < self.config.context(), "cache full");
        no_grad(|| {
            let mut x = self.tok.forward(&[id]).add(&self.pos.forward(&[p]));
            for (blk, slot) in self.blocks.iter().zip(cache.layers.iter_mut()) {
                x = blk.forward(&x, 1, 1, self.config.heads, Some(slot));
            }
            self.head.forward(&self.ln_f.forward(&x)).tensor().into_data()
        })
    }
}

impl Module for Gpt {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.tok.visit(&join(prefix, "tok"), f);
        self.pos.visit(&join(prefix, "pos"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.ln_f.visit(&join(prefix, "ln_f"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> PriorConfig {
        let mut c = PriorConfig::desk();
        c.codebook_size = 16;
        c.latent = 2;
        c.layers = 2;
        c.heads = 2;
        c.width = 16;
        c.top_k = 4;
        c
    }

    #[test]
    fn cached_steps_match_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Gpt::new(tiny(), &mut rng);
        // Give the near-zero init some structure.
        for p in g.params() {
            p.update_value(|t| *t = Tensor::randn(t.shape().to_vec(), 0.3, &mut rng));
        }
        let ids = vec![16, 3, 7, 7, 0, 15];
        let full = no_grad(|| g.forward(&[ids.clone()]).tensor());
        let mut cache = g.new_cache();
        for (i, &id) in ids.iter().enumerate() {
            let step = g.step(id, &mut cache);
            for (a, b) in step.iter().zip(&full.data()[i * 16..(i + 1) * 16]) {
                assert!((a - b).abs() < 1e-4, "position {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn causal_logits_ignore_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Gpt::new(tiny(), &mut rng);
        for p in g.params() {
            p.update_value(|t| *t = Tensor::randn(t.shape().to_vec(), 0.3, &mut rng));
        }
        let a = vec![16, 1, 2, 3, 4, 5, 6, 7];
        let mut b = a.clone();
        b[5] = 9;
        b[7] = 17;
        let (la, lb) = no_grad(|| (g.forward(&[a]).tensor(), g.forward(&[b]).tensor()));
        assert_eq!(&la.data()[..5 * 16], &lb.data()[..5 * 16]);
        assert_ne!(&la.data()[5 * 16..6 * 16], &lb.data()[5 * 16..6 * 16]);
    }
}
