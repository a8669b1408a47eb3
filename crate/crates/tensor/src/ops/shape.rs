use crate::graph::Var;
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Materialize `x` with its axes reordered so output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let shape = x.shape();
    assert_eq!(perm.len(), shape.len(), "permutation rank mismatch");
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let xd = x.data();
    if n == 0 {
        return Tensor::new(out_shape, out);
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (last_len, last_stride) = (out_shape[last], src_strides[last]);
    let mut base = 0usize;
    loop {
        for i in 0..last_len {
            out.push(xd[base + i * last_stride]);
        }
        // advance all but the last axis
        let mut d = last;
        loop {
            if d == 0 {
                return Tensor::new(out_shape, out);
            }
            d -= 1;
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

impl Var {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let out = self.tensor().reshape(shape);
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(|g, inputs, _, _| vec![Some(g.clone().reshape(inputs[0].shape().to_vec()))]),
        )
    }

    pub fn permute(&self, perm: &[usize]) -> Var {
        let out = permute_tensor(&self.value(), perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _, _, _| vec![Some(permute_tensor(g, &inverse))]),
        )
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        let mut out_shape = shapes[0].clone();
        out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
        for s in &shapes {
            assert_eq!(s.len(), out_shape.len(), "concat rank mismatch");
            for d in 0..s.len() {
                assert!(d == axis || s[d] == out_shape[d], "concat shape mismatch {shapes:?}");
            }
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let mut out = vec![0f32; out_shape.iter().product()];
        let mut offset = 0;
        for (p, s) in parts.iter().zip(&shapes) {
            let v = p.value();
            let chunk = s[axis] * inner;
            for o in 0..outer {
                let dst = o * total_axis * inner + offset * inner;
                out[dst..dst + chunk].copy_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
            offset += s[axis];
        }
        let lens: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        Var::from_op(
            Tensor::new(out_shape, out),
            parts.to_vec(),
            Box::new(move |g, inputs, _, needs| {
                let gd = g.data();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(inputs.len());
                for (i, &len) in lens.iter().enumerate() {
                    if needs[i] {
                        let chunk = len * inner;
                        let mut d = vec![0f32; outer * chunk];
                        for o in 0..outer {
                            let src = o * total_axis * inner + offset * inner;
                            d[o * chunk..(o + 1) * chunk].copy_from_slice(&gd[src..src + chunk]);
                        }
                        grads.push(Some(Tensor::new(inputs[i].shape().to_vec(), d)));
                    } else {
                        grads.push(None);
                    }
                    offset += len;
                }
                grads
            }),
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape();
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let chunk = len * inner;
        let mut out = vec![0f32; outer * chunk];
        {
            let v = self.value();
            for o in 0..outer {
                let src = (o * full + start) * inner;
                out[o * chunk..(o + 1) * chunk].copy_from_slice(&v.data()[src..src + chunk]);
            }
        }
        Var::from_op(
            Tensor::new(out_shape, out),
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut d = vec![0f32; outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    d[dst..dst + chunk].copy_from_slice(&g.data()[o * chunk..(o + 1) * chunk]);
                }
                vec![Some(Tensor::new(shape.clone(), d))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let x = Tensor::new(vec![2, 3, 4], (0..24).map(|v| v as f32).collect());
        let y = permute_tensor(&x, &[2, 0, 1]);
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(y.data()[a * 6 + b * 3 + c], x.data()[b * 12 + c * 4 + a]);
                }
            }
        }
    }

    #[test]
    fn concat_then_narrow_roundtrip() {
        let a = Var::constant(Tensor::new(vec![2, 1, 2], vec![1., 2., 3., 4.]));
        let b = Var::constant(Tensor::new(vec![2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]));
        let c = Var::concat(&[a.clone(), b.clone()], 1);
        assert_eq!(c.value().data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        assert_eq!(c.narrow(1, 1, 2).value().data(), b.value().data());
    }
}
