use crate::graph::Var;
use crate::tensor::Tensor;

impl Var {
    pub fn sum_all(&self) -> Var {
        let v = self.value().sum() as f32;
        Var::from_op(
            Tensor::scalar(v),
            vec![self.clone()],
            Box::new(|g, inputs, _, _| vec![Some(Tensor::full(inputs[0].shape().to_vec(), g.item()))]),
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().numel();
        let v = (self.value().sum() / n as f64) as f32;
        Var::from_op(
            Tensor::scalar(v),
            vec![self.clone()],
            Box::new(move |g, inputs, _, _| {
                vec![Some(Tensor::full(inputs[0].shape().to_vec(), g.item() / n as f32))]
            }),
        )
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Var {
        let shape = self.shape();
        assert!(axis < shape.len(), "mean_axis out of range");
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let x = self.value();
        let xd = x.data();
        let mut acc = vec![0f64; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let row = &mut acc[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    row[i] += xd[base + i] as f64;
                }
            }
        }
        let out = Tensor::new(out_shape, acc.iter().map(|&s| (s / len as f64) as f32).collect());
        drop(x);
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let gd = g.data();
                let inv = 1.0 / len as f32;
                let mut dx = vec![0f32; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            dx[base + i] = gd[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx))]
            }),
        )
    }

    /// Mean of squared differences, a common loss building block.
    pub fn mse(&self, target: &Var) -> Var {
        self.sub(target).square().mean_all()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_axis_middle() {
        let x = Var::constant(Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f32).collect()));
        let m = x.mean_axis(1);
        assert_eq!(m.shape(), vec![2, 2]);
        assert_eq!(m.value().data(), &[2.0, 3.0, 8.0, 9.0]);
    }
}
