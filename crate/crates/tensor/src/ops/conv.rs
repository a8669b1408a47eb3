//! Volumetric convolutions via im2col + sgemm. 2D convolutions are expressed
//! as 3D ones with a depth-1 kernel.

use super::linalg::gemm_strided;
use crate::graph::Var;
use crate::tensor::Tensor;

/// Upper bound on the im2col scratch buffer, in floats.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn cubic(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel: [kernel; 3], stride: [stride; 3], pad: [pad; 3] }
    }

    /// Square 2D geometry acting on the last two axes of a depth-1 volume.
    pub fn planar(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel: [1, kernel, kernel], stride: [1, stride, stride], pad: [0, pad, pad] }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_dims(&self, input: [usize; 3]) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * self.pad[a];
            assert!(span >= self.kernel[a], "kernel {:?} larger than padded input {input:?}", self.kernel);
            o[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        o
    }

    /// Output size of the transposed convolution with this geometry.
    pub fn transposed_out_dims(&self, input: [usize; 3]) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = (input[a] - 1) * self.stride[a] + self.kernel[a] - 2 * self.pad[a];
        }
        o
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// Geometry of one im2col pass: `channels` input planes of size `input`,
/// producing columns for output z-slices `[z0, z1)` of an `output` volume.
struct Cols<'a> {
    channels: usize,
    input: [usize; 3],
    output: [usize; 3],
    geom: &'a ConvGeom,
}

impl Cols<'_> {
    fn rows(&self) -> usize {
        self.channels * self.geom.kernel_volume()
    }

    fn plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn chunk_z(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.plane()).max(1)).clamp(1, self.output[0])
    }

    /// Visit each (row, column-offset, input-offset-or-none) run. The callback
    /// receives a contiguous output run `[p, p + len)` with matching input
    /// positions `ix = ox * sw + kx - pw` for `ox` in the run.
    fn for_each_row(&self, z0: usize, z1: usize, mut f: impl FnMut(usize, usize, Option<usize>, usize, usize)) {
        let [d, h, w] = self.input;
        let [_, ho, wo] = self.output;
        let g = self.geom;
        let [kd, kh, kw] = g.kernel;
        let mut row = 0;
        for c in 0..self.channels {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut p = 0;
                        for oz in z0..z1 {
                            let iz = (oz * g.stride[0] + kz) as isize - g.pad[0] as isize;
                            for oy in 0..ho {
                                let iy = (oy * g.stride[1] + ky) as isize - g.pad[1] as isize;
                                if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize {
                                    f(row, p, None, kx, wo);
                                } else {
                                    let base = ((c * d + iz as usize) * h + iy as usize) * w;
                                    f(row, p, Some(base), kx, wo);
                                }
                                p += wo;
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f32], z0: usize, z1: usize, cols: &mut [f32]) {
        let ncol = (z1 - z0) * self.plane();
        let w = self.input[2];
        let (sw, pw) = (self.geom.stride[2], self.geom.pad[2] as isize);
        self.for_each_row(z0, z1, |row, p, base, kx, wo| {
            let dst = &mut cols[row * ncol + p..row * ncol + p + wo];
            match base {
                None => dst.fill(0.0),
                Some(base) => {
                    let src = &x[base..base + w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw;
                        *v = if ix >= 0 && (ix as usize) < w { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        });
    }

    fn col2im(&self, cols: &[f32], z0: usize, z1: usize, x: &mut [f32]) {
        let ncol = (z1 - z0) * self.plane();
        let w = self.input[2];
        let (sw, pw) = (self.geom.stride[2], self.geom.pad[2] as isize);
        self.for_each_row(z0, z1, |row, p, base, kx, wo| {
            let Some(base) = base else { return };
            let src = &cols[row * ncol + p..row * ncol + p + wo];
            let dst = &mut x[base..base + w];
            for (ox, v) in src.iter().enumerate() {
                let ix = (ox * sw + kx) as isize - pw;
                if ix >= 0 && (ix as usize) < w {
                    dst[ix as usize] += v;
                }
            }
        });
    }
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

fn bias_grad(g: &Tensor, n: usize, c: usize, p: usize) -> Tensor {
    let gd = g.data();
    let mut out = vec![0f64; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let off = (b * c + ch) * p;
            *acc += gd[off..off + p].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    Tensor::new(vec![c], out.into_iter().map(|v| v as f32).collect())
}

fn add_bias(out: &mut Tensor, bias: &Tensor, n: usize, c: usize, p: usize) {
    let bd = bias.data();
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * p;
            for v in &mut od[off..off + p] {
                *v += bd[ch];
            }
        }
    }
}

impl Var {
    /// Cross-correlation of `[N, Ci, D, H, W]` with weights `[Co, Ci, kd, kh, kw]`.
    pub fn conv3d(&self, weight: &Var, bias: Option<&Var>, geom: ConvGeom) -> Var {
        let xs = self.shape();
        let ws = weight.shape();
        assert!(xs.len() == 5 && ws.len() == 5, "conv3d expects rank-5 input and weight");
        assert_eq!(xs[1], ws[1], "conv3d channel mismatch: input {xs:?}, weight {ws:?}");
        assert_eq!(&ws[2..], &geom.kernel, "conv3d kernel mismatch");
        let (n, ci, co) = (xs[0], xs[1], ws[0]);
        let ind = spatial(&xs);
        let outd = geom.out_dims(ind);
        let pin: usize = ind.iter().product();
        let pout: usize = outd.iter().product();
        let cols = Cols { channels: ci, input: ind, output: outd, geom: &geom };
        let rows = cols.rows();
        let mut out = Tensor::zeros(vec![n, co, outd[0], outd[1], outd[2]]);
        {
            let xv = self.value();
            let wv = weight.value();
            let od = out.data_mut();
            let mut buf = Vec::new();
            for b in 0..n {
                let xn = &xv.data()[b * ci * pin..(b + 1) * ci * pin];
                let on = &mut od[b * co * pout..(b + 1) * co * pout];
                if geom.is_pointwise() {
                    gemm_strided(co, ci, pin, wv.data(), (ci, 1), xn, (pin, 1), on, pout, 0.0);
                    continue;
                }
                let step = cols.chunk_z();
                let mut z0 = 0;
                while z0 < outd[0] {
                    let z1 = (z0 + step).min(outd[0]);
                    let ncol = (z1 - z0) * cols.plane();
                    buf.resize(rows * ncol, 0.0);
                    cols.im2col(xn, z0, z1, &mut buf);
                    let off = z0 * cols.plane();
                    gemm_strided(co, rows, ncol, wv.data(), (rows, 1), &buf, (ncol, 1), &mut on[off..], pout, 0.0);
                    z0 = z1;
                }
            }
            if let Some(bias) = bias {
                add_bias(&mut out, &bias.value(), n, co, pout);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Var::from_op(
            out,
            parents,
            Box::new(move |g, inputs, _, needs| {
                let (x, w) = (inputs[0], inputs[1]);
                let cols = Cols { channels: ci, input: ind, output: outd, geom: &geom };
                let gd = g.data();
                let mut dx = needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
                let mut dw = needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
                let mut buf = Vec::new();
                let mut dbuf = Vec::new();
                for b in 0..n {
                    let xn = &x.data()[b * ci * pin..(b + 1) * ci * pin];
                    let gn = &gd[b * co * pout..(b + 1) * co * pout];
                    if geom.is_pointwise() {
                        if let Some(dw) = dw.as_mut() {
                            gemm_strided(co, pin, ci, gn, (pout, 1), xn, (1, pin), dw.data_mut(), ci, 1.0);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dxn = &mut dx.data_mut()[b * ci * pin..(b + 1) * ci * pin];
                            gemm_strided(ci, co, pin, w.data(), (1, ci), gn, (pout, 1), dxn, pin, 0.0);
                        }
                        continue;
                    }
                    let step = cols.chunk_z();
                    let mut z0 = 0;
                    while z0 < outd[0] {
                        let z1 = (z0 + step).min(outd[0]);
                        let ncol = (z1 - z0) * cols.plane();
                        let gchunk = &gn[z0 * cols.plane()..];
                        if let Some(dw) = dw.as_mut() {
                            buf.resize(rows * ncol, 0.0);
                            cols.im2col(xn, z0, z1, &mut buf);
                            gemm_strided(co, ncol, rows, gchunk, (pout, 1), &buf, (1, ncol), dw.data_mut(), rows, 1.0);
                        }
                        if let Some(dx) = dx.as_mut() {
                            dbuf.resize(rows * ncol, 0.0);
                            gemm_strided(rows, co, ncol, w.data(), (1, rows), gchunk, (pout, 1), &mut dbuf, ncol, 0.0);
                            let dxn = &mut dx.data_mut()[b * ci * pin..(b + 1) * ci * pin];
                            cols.col2im(&dbuf, z0, z1, dxn);
                        }
                        z0 = z1;
                    }
                }
                let mut grads = vec![dx, dw];
                if inputs.len() > 2 {
                    grads.push(needs[2].then(|| bias_grad(g, n, co, pout)));
                }
                grads
            }),
        )
    }

    /// Transposed convolution of `[N, Ci, D, H, W]` with weights `[Ci, Co, kd, kh, kw]`.
    pub fn conv_transpose3d(&self, weight: &Var, bias: Option<&Var>, geom: ConvGeom) -> Var {
        let xs = self.shape();
        let ws = weight.shape();
        assert!(xs.len() == 5 && ws.len() == 5, "conv_transpose3d expects rank-5 input and weight");
        assert_eq!(xs[1], ws[0], "conv_transpose3d channel mismatch: input {xs:?}, weight {ws:?}");
        assert_eq!(&ws[2..], &geom.kernel, "conv_transpose3d kernel mismatch");
        let (n, ci, co) = (xs[0], xs[1], ws[1]);
        let small = spatial(&xs);
        let big = geom.transposed_out_dims(small);
        assert_eq!(geom.out_dims(big), small, "transposed geometry is not invertible for {small:?}");
        let psmall: usize = small.iter().product();
        let pbig: usize = big.iter().product();
        // The virtual forward conv maps the big volume (Co channels) to the small one.
        let cols = Cols { channels: co, input: big, output: small, geom: &geom };
        let rows = cols.rows();
        let mut out = Tensor::zeros(vec![n, co, big[0], big[1], big[2]]);
        {
            let xv = self.value();
            let wv = weight.value();
            let od = out.data_mut();
            let mut buf = Vec::new();
            for b in 0..n {
                let xn = &xv.data()[b * ci * psmall..(b + 1) * ci * psmall];
                let on = &mut od[b * co * pbig..(b + 1) * co * pbig];
                let step = cols.chunk_z();
                let mut z0 = 0;
                while z0 < small[0] {
                    let z1 = (z0 + step).min(small[0]);
                    let ncol = (z1 - z0) * cols.plane();
                    buf.resize(rows * ncol, 0.0);
                    let xchunk = &xn[z0 * cols.plane()..];
                    gemm_strided(rows, ci, ncol, wv.data(), (1, rows), xchunk, (psmall, 1), &mut buf, ncol, 0.0);
                    cols.col2im(&buf, z0, z1, on);
                    z0 = z1;
                }
            }
            if let Some(bias) = bias {
                add_bias(&mut out, &bias.value(), n, co, pbig);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Var::from_op(
            out,
            parents,
            Box::new(move |g, inputs, _, needs| {
                let (x, w) = (inputs[0], inputs[1]);
                let cols = Cols { channels: co, input: big, output: small, geom: &geom };
                let gd = g.data();
                let mut dx = needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
                let mut dw = needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
                let mut buf = Vec::new();
                for b in 0..n {
                    let xn = &x.data()[b * ci * psmall..(b + 1) * ci * psmall];
                    let gn = &gd[b * co * pbig..(b + 1) * co * pbig];
                    let step = cols.chunk_z();
                    let mut z0 = 0;
                    while z0 < small[0] {
                        let z1 = (z0 + step).min(small[0]);
                        let ncol = (z1 - z0) * cols.plane();
                        buf.resize(rows * ncol, 0.0);
                        cols.im2col(gn, z0, z1, &mut buf);
                        let off = z0 * cols.plane();
                        if let Some(dx) = dx.as_mut() {
                            let dxn = &mut dx.data_mut()[b * ci * psmall + off..(b + 1) * ci * psmall];
                            gemm_strided(ci, rows, ncol, w.data(), (rows, 1), &buf, (ncol, 1), dxn, psmall, 0.0);
                        }
                        if let Some(dw) = dw.as_mut() {
                            gemm_strided(ci, ncol, rows, &xn[off..], (psmall, 1), &buf, (1, ncol), dw.data_mut(), rows, 1.0);
                        }
                        z0 = z1;
                    }
                }
                let mut grads = vec![dx, dw];
                if inputs.len() > 2 {
                    grads.push(needs[2].then(|| bias_grad(g, n, co, pbig)));
                }
                grads
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-sum reference convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        let (n, ci, co) = (xs[0], xs[1], ws[0]);
        let ind = [xs[2], xs[3], xs[4]];
        let o = geom.out_dims(ind);
        let mut out = Tensor::zeros(vec![n, co, o[0], o[1], o[2]]);
        let od = out.data_mut();
        let [kd, kh, kw] = geom.kernel;
        for b in 0..n {
            for oc in 0..co {
                for oz in 0..o[0] {
                    for oy in 0..o[1] {
                        for ox in 0..o[2] {
                            let mut acc = 0f64;
                            for c in 0..ci {
                                for kz in 0..kd {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let iz = (oz * geom.stride[0] + kz) as isize - geom.pad[0] as isize;
                                            let iy = (oy * geom.stride[1] + ky) as isize - geom.pad[1] as isize;
                                            let ix = (ox * geom.stride[2] + kx) as isize - geom.pad[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= ind[0] || iy >= ind[1] || ix >= ind[2] {
                                                continue;
                                            }
                                            let xv = x.data()[(((b * ci + c) * ind[0] + iz) * ind[1] + iy) * ind[2] + ix];
                                            let wv = w.data()[(((oc * ci + c) * kd + kz) * kh + ky) * kw + kx];
                                            acc += (xv * wv) as f64;
                                        }
                                    }
                                }
                            }
                            od[(((b * co + oc) * o[0] + oz) * o[1] + oy) * o[2] + ox] = acc as f32;
                        }
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: Vec<usize>, scale: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 37 % 23) as f32 - 11.0) * scale).collect())
    }

    #[test]
    fn conv3d_matches_direct_sum() {
        for geom in [ConvGeom::cubic(3, 1, 1), ConvGeom::cubic(3, 2, 1), ConvGeom::cubic(2, 2, 0), ConvGeom::planar(3, 1, 1)] {
            let x = ramp(vec![2, 3, if geom.kernel[0] == 1 { 1 } else { 6 }, 5, 6], 0.1);
            let w = ramp(vec![4, 3, geom.kernel[0], geom.kernel[1], geom.kernel[2]], 0.05);
            let got = Var::constant(x.clone()).conv3d(&Var::constant(w.clone()), None, geom).tensor();
            let want = naive_conv(&x, &w, geom);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} for {geom:?}");
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with shared weights.
        let geom = ConvGeom::cubic(4, 2, 1);
        let x = ramp(vec![1, 3, 8, 8, 8], 0.1);
        let w = ramp(vec![2, 3, 4, 4, 4], 0.03);
        let y = ramp(vec![1, 2, 4, 4, 4], 0.2);
        let cx = Var::constant(x.clone()).conv3d(&Var::constant(w.clone()), None, geom).tensor();
        let wt = Var::constant(w.clone());
        let ty = Var::constant(y.clone()).conv_transpose3d(&wt, None, geom).tensor();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
