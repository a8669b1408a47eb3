use super::elementwise::sigmoid;
use crate::graph::Var;
use crate::tensor::Tensor;

impl Var {
    /// Row lookup into a `[V, D]` table; returns `[ids.len(), D]`.
    pub fn embedding(&self, ids: &[usize]) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "embedding table must be rank 2");
        let (v, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        {
            let t = self.value();
            for &id in ids {
                assert!(id < v, "embedding id {id} out of range {v}");
                out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
            }
        }
        let ids = ids.to_vec();
        Var::from_op(
            Tensor::new(vec![ids.len(), d], out),
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut dt = vec![0f32; v * d];
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g.data()[row * d..(row + 1) * d];
                    for (a, b) in dt[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *a += b;
                    }
                }
                vec![Some(Tensor::new(vec![v, d], dt))]
            }),
        )
    }

    /// Softmax over the last axis of `[B, Tq, Tk]`. With `causal_offset =
    /// Some(o)`, query row `i` may only attend keys `j <= o + i`.
    pub fn softmax_last(&self, causal_offset: Option<usize>) -> Var {
        let s = self.shape();
        let tk = *s.last().unwrap();
        let tq = if s.len() >= 2 { s[s.len() - 2] } else { 1 };
        let rows = s.iter().product::<usize>() / tk;
        let mut out = vec![0f32; rows * tk];
        {
            let x = self.value();
            for r in 0..rows {
                let limit = match causal_offset {
                    Some(o) => (o + r % tq + 1).min(tk),
                    None => tk,
                };
                let row = &x.data()[r * tk..r * tk + limit];
                let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                let mut sum = 0f64;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - m).exp();
                    out[r * tk + j] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for v in &mut out[r * tk..r * tk + limit] {
                    *v *= inv;
                }
            }
        }
        Var::from_op(
            Tensor::new(s.clone(), out),
            vec![self.clone()],
            Box::new(move |g, _, y, _| {
                let mut dx = vec![0f32; rows * tk];
                let (gd, yd) = (g.data(), y.data());
                for r in 0..rows {
                    let (gr, yr) = (&gd[r * tk..(r + 1) * tk], &yd[r * tk..(r + 1) * tk]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| (a * b) as f64).sum();
                    for j in 0..tk {
                        dx[r * tk + j] = yr[j] * (gr[j] - dot as f32);
                    }
                }
                vec![Some(Tensor::new(s.clone(), dx))]
            }),
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[M, V]` logits.
    pub fn cross_entropy(&self, targets: &[usize]) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "cross_entropy expects [M, V] logits");
        let (m, v) = (s[0], s[1]);
        assert_eq!(targets.len(), m, "cross_entropy target count");
        let mut probs = vec![0f32; m * v];
        let mut loss = 0f64;
        {
            let x = self.value();
            for r in 0..m {
                let row = &x.data()[r * v..(r + 1) * v];
                let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                let sum: f64 = row.iter().map(|&z| ((z - mx) as f64).exp()).sum();
                let lse = mx as f64 + sum.ln();
                loss += lse - row[targets[r]] as f64;
                for j in 0..v {
                    probs[r * v + j] = ((row[j] as f64 - lse).exp()) as f32;
                }
            }
        }
        let targets = targets.to_vec();
        Var::from_op(
            Tensor::scalar((loss / m as f64) as f32),
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let scale = g.item() / m as f32;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * v + t] -= 1.0;
                }
                d.iter_mut().for_each(|x| *x *= scale);
                vec![Some(Tensor::new(vec![m, v], d))]
            }),
        )
    }

    /// Mean binary cross-entropy between `sigmoid(self)` and `targets`.
    pub fn bce_with_logits(&self, targets: &Tensor) -> Var {
        let n = self.value().numel();
        assert_eq!(targets.numel(), n, "bce target size");
        let loss: f64 = {
            let x = self.value();
            x.data()
                .iter()
                .zip(targets.data())
                .map(|(&z, &t)| (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()) as f64)
                .sum()
        };
        let targets = targets.clone();
        Var::from_op(
            Tensor::scalar((loss / n as f64) as f32),
            vec![self.clone()],
            Box::new(move |g, inputs, _, _| {
                let scale = g.item() / n as f32;
                let d = inputs[0]
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                vec![Some(Tensor::new(inputs[0].shape().to_vec(), d))]
            }),
        )
    }

    /// Bilinear resize of `[N, C, H, W]` (half-pixel centers, edge clamped).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 4, "resize_bilinear expects [N, C, H, W]");
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        if h == out_h && w == out_w {
            return self.clone();
        }
        let ys = taps(h, out_h);
        let xs = taps(w, out_w);
        let mut out = vec![0f32; planes * out_h * out_w];
        {
            let x = self.value();
            for p in 0..planes {
                let src = &x.data()[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                        let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                        out[(p * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
                    }
                }
            }
        }
        Var::from_op(
            Tensor::new(vec![s[0], s[1], out_h, out_w], out),
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut dx = vec![0f32; planes * h * w];
                for p in 0..planes {
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let gv = g.data()[(p * out_h + oy) * out_w + ox];
                            dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                            dst[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
                vec![Some(Tensor::new(s.clone(), dx))]
            }),
        )
    }
}

fn taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f32 / output as f32;
    (0..output)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_softmax_masks_future() {
        let x = Var::constant(Tensor::zeros(vec![1, 3, 3]));
        let y = x.softmax_last(Some(0)).tensor();
        assert_eq!(y.data(), &[1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_vocab() {
        let x = Var::constant(Tensor::zeros(vec![4, 64]));
        let l = x.cross_entropy(&[0, 5, 63, 7]).item();
        assert!((l - (64f32).ln()).abs() < 1e-5);
    }

    #[test]
    fn bilinear_upsample_of_constant_is_constant() {
        let x = Var::constant(Tensor::full(vec![1, 1, 3, 3], 2.5));
        let y = x.resize_bilinear(7, 5).tensor();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }
}
