use crate::graph::Var;
use crate::tensor::Tensor;

/// How `b` maps onto the elements of `a` when `b` broadcasts into `a`'s
/// shape (right-aligned, every dim of `b` either 1 or equal).
struct Broadcast {
    /// `b` offset for each outer position, outer positions cover `a` in
    /// blocks of `inner`.
    outer_offsets: Vec<usize>,
    inner: usize,
    /// True when `b` advances with the inner run, false when it is constant.
    inner_contiguous: bool,
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Self {
        assert!(b.len() <= a.len(), "cannot broadcast {b:?} into {a:?}");
        let pad = a.len() - b.len();
        let bfull: Vec<usize> = std::iter::repeat_n(1, pad).chain(b.iter().copied()).collect();
        for (da, db) in a.iter().zip(&bfull) {
            assert!(*db == 1 || db == da, "cannot broadcast {b:?} into {a:?}");
        }
        // Trailing run where b is either entirely broadcast or entirely equal.
        let mut split = a.len();
        let mut inner_contiguous = None;
        while split > 0 {
            let d = split - 1;
            let kind = if bfull[d] == a[d] { Some(true) } else { Some(false) };
            if a[d] == 1 {
                split -= 1;
                continue;
            }
            match inner_contiguous {
                None => inner_contiguous = kind,
                Some(k) if Some(k) == kind => {}
                _ => break,
            }
            split -= 1;
        }
        let inner_contiguous = inner_contiguous.unwrap_or(true);
        let inner: usize = a[split..].iter().product();
        let mut b_strides = vec![0usize; a.len()];
        let mut s = 1;
        for d in (0..a.len()).rev() {
            b_strides[d] = if bfull[d] == 1 { 0 } else { s };
            s *= bfull[d];
        }
        let outer_dims = &a[..split];
        let outer_count: usize = outer_dims.iter().product();
        let mut outer_offsets = Vec::with_capacity(outer_count);
        let mut idx = vec![0usize; split];
        for _ in 0..outer_count {
            outer_offsets.push(idx.iter().zip(&b_strides[..split]).map(|(i, s)| i * s).sum());
            for d in (0..split).rev() {
                idx[d] += 1;
                if idx[d] < outer_dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self { outer_offsets, inner, inner_contiguous }
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for (o, &boff) in self.outer_offsets.iter().enumerate() {
            let base = o * self.inner;
            if self.inner_contiguous {
                for i in 0..self.inner {
                    f(base + i, boff + i);
                }
            } else {
                for i in 0..self.inner {
                    f(base + i, boff);
                }
            }
        }
    }
}

fn reduce_to(grad: &Tensor, a_shape: &[usize], b_shape: &[usize], scale_by: Option<&Tensor>) -> Tensor {
    let bc = Broadcast::new(a_shape, b_shape);
    let mut out = Tensor::zeros(b_shape.to_vec());
    let g = grad.data();
    let o = out.data_mut();
    match scale_by {
        None => bc.for_each(|ia, ib| o[ib] += g[ia]),
        Some(s) => {
            let s = s.data();
            bc.for_each(|ia, ib| o[ib] += g[ia] * s[ia]);
        }
    }
    out
}

fn binary(a: &Var, b: &Var, op: BinOp) -> Var {
    let av = a.value();
    let bv = b.value();
    let same = av.shape() == bv.shape();
    let out = if same {
        match op {
            BinOp::Add => av.zip_map(&bv, |x, y| x + y),
            BinOp::Sub => av.zip_map(&bv, |x, y| x - y),
            BinOp::Mul => av.zip_map(&bv, |x, y| x * y),
        }
    } else {
        let bc = Broadcast::new(av.shape(), bv.shape());
        let mut out = Tensor::zeros(av.shape().to_vec());
        let (ad, bd) = (av.data(), bv.data());
        let od = out.data_mut();
        match op {
            BinOp::Add => bc.for_each(|ia, ib| od[ia] = ad[ia] + bd[ib]),
            BinOp::Sub => bc.for_each(|ia, ib| od[ia] = ad[ia] - bd[ib]),
            BinOp::Mul => bc.for_each(|ia, ib| od[ia] = ad[ia] * bd[ib]),
        }
        out
    };
    drop(av);
    drop(bv);
    Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, inputs, _out, needs| {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = needs[0].then(|| match op {
                BinOp::Add | BinOp::Sub => g.clone(),
                BinOp::Mul => {
                    if a.shape() == b.shape() {
                        g.zip_map(b, |g, y| g * y)
                    } else {
                        let bc = Broadcast::new(a.shape(), b.shape());
                        let mut out = Tensor::zeros(a.shape().to_vec());
                        let (gd, bd) = (g.data(), b.data());
                        let od = out.data_mut();
                        bc.for_each(|ia, ib| od[ia] = gd[ia] * bd[ib]);
                        out
                    }
                }
            });
            let gb = needs[1].then(|| {
                let mut r = match op {
                    BinOp::Add | BinOp::Sub => {
                        if a.shape() == b.shape() {
                            g.clone()
                        } else {
                            reduce_to(g, a.shape(), b.shape(), None)
                        }
                    }
                    BinOp::Mul => {
                        if a.shape() == b.shape() {
                            g.zip_map(a, |g, x| g * x)
                        } else {
                            reduce_to(g, a.shape(), b.shape(), Some(a))
                        }
                    }
                };
                if matches!(op, BinOp::Sub) {
                    r.data_mut().iter_mut().for_each(|x| *x = -*x);
                }
                r
            });
            vec![ga, gb]
        }),
    )
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl Var {
    /// `self + other`, `other` broadcasting into `self`'s shape.
    pub fn add(&self, other: &Var) -> Var {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Var) -> Var {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Var) -> Var {
        binary(self, other, BinOp::Mul)
    }

    pub fn scale(&self, s: f32) -> Var {
        unary(self, move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f32) -> Var {
        unary(self, move |x| x + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn abs(&self) -> Var {
        unary(self, f32::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn relu(&self) -> Var {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        unary(
            self,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Var {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var {
        unary(self, f32::tanh, |_, y| 1.0 - y * y)
    }

    pub fn silu(&self) -> Var {
        unary(
            self,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var {
        const C: f32 = 0.797_884_6; // sqrt(2/pi)
        unary(
            self,
            |x| 0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh()),
            |x, _| {
                let u = C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise op with derivative `df(x, y)` expressed through input and output.
fn unary(
    a: &Var,
    f: impl Fn(f32) -> f32,
    df: impl Fn(f32, f32) -> f32 + Send + Sync + 'static,
) -> Var {
    let out = a.value().map(f);
    Var::from_op(
        out,
        vec![a.clone()],
        Box::new(move |g, inputs, out, _| {
            let x = inputs[0].data();
            let y = out.data();
            let data = g.data().iter().enumerate().map(|(i, &g)| g * df(x[i], y[i])).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data))]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_channel_bias() {
        let a = Var::constant(Tensor::new(vec![2, 3, 2], (0..12).map(|x| x as f32).collect()));
        let b = Var::constant(Tensor::new(vec![3, 1], vec![100.0, 200.0, 300.0]));
        let c = a.add(&b);
        assert_eq!(
            c.value().data(),
            &[100., 101., 202., 203., 304., 305., 106., 107., 208., 209., 310., 311.]
        );
    }

    #[test]
    fn broadcast_row_bias_gradient_sums_rows() {
        let a = Var::param(Tensor::ones(vec![4, 3]));
        let b = Var::param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let loss = a.mul(&b).mean_all();
        crate::backward(&loss);
        let gb = b.grad().unwrap();
        for v in gb.data() {
            assert!((v - 4.0 / 12.0).abs() < 1e-6);
        }
        let ga = a.grad().unwrap();
        assert!((ga.data()[2] - 3.0 / 12.0).abs() < 1e-6);
    }
}
