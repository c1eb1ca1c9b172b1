//! Differentiable tensor operations.
//!
//! Shape discipline is strict: nothing broadcasts implicitly, every mismatch
//! is an error naming the offending shapes. The op set is exactly what the
//! models in this crate need.
//!
//! Convolution uses the cross-correlation convention (no kernel flip), like
//! every mainstream deep-learning stack. Dropout is "inverted": surviving
//! activations are scaled by `1/(1-p)` at training time so that evaluation
//! mode is the identity.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{Element, Tensor};

impl<E: Element> Tensor<E> {
    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [a, b] => Ok((*a, *b)),
            other => Err(Error::Dimension {
                op,
                msg: format!("expected a 2-d tensor, got shape {:?}", other),
            }),
        }
    }

    fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            [a, b, c, d] => Ok((*a, *b, *c, *d)),
            other => Err(Error::Dimension {
                op,
                msg: format!("expected a 4-d tensor, got shape {:?}", other),
            }),
        }
    }

    /// Matrix product of `[m,k] x [k,n]`.
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let mut out = vec![E::zero(); m * n];
        {
            let a = self.data();
            let b = rhs.data();
            E::gemm(m, k, n, &a, k as isize, 1, &b, n as isize, 1, E::zero(), &mut out, n as isize, 1);
        }
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, parents, store| {
                let (a, b) = (&parents[0], &parents[1]);
                if a.needs_grad() {
                    // dA = g x B^T, reading B through transposed strides.
                    let mut da = vec![E::zero(); m * k];
                    let bd = b.data();
                    E::gemm(m, n, k, g, n as isize, 1, &bd, 1, n as isize, E::zero(), &mut da, k as isize, 1);
                    store.accumulate(a, da);
                }
                if b.needs_grad() {
                    // dB = A^T x g.
                    let mut db = vec![E::zero(); k * n];
                    let ad = a.data();
                    E::gemm(k, m, n, &ad, 1, k as isize, g, n as isize, 1, E::zero(), &mut db, n as isize, 1);
                    store.accumulate(b, db);
                }
            }),
        ))
    }

    /// Valid (unpadded) 2-d cross-correlation.
    ///
    /// `self` is `[b, c_in, h, w]`, `kernel` is `[c_out, c_in, kh, kw]`;
    /// output is `[b, c_out, h', w']` with `h' = (h - kh)/stride + 1`.
    pub fn conv2d(&self, kernel: &Tensor<E>, stride: usize) -> Result<Tensor<E>> {
        let (batch, c_in, h, w) = self.dims4("conv2d")?;
        let (c_out, kc_in, kh, kw) = kernel.dims4("conv2d")?;
        if stride == 0 {
            return Err(Error::Parameter("conv2d: stride must be >= 1".into()));
        }
        if kc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if kh > h || kw > w {
            return Err(Error::Dimension {
                op: "conv2d",
                msg: format!("kernel {}x{} larger than input {}x{}", kh, kw, h, w),
            });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let ckk = c_in * kh * kw;
        let ohw = oh * ow;

        let mut out = vec![E::zero(); batch * c_out * ohw];
        {
            let input = self.data();
            let kdata = kernel.data();
            let mut cols = vec![E::zero(); ckk * ohw];
            for bi in 0..batch {
                im2col(&input[bi * c_in * h * w..], c_in, h, w, kh, kw, stride, oh, ow, &mut cols);
                let dst = &mut out[bi * c_out * ohw..(bi + 1) * c_out * ohw];
                E::gemm(
                    c_out, ckk, ohw, &kdata, ckk as isize, 1, &cols, ohw as isize, 1, E::zero(), dst,
                    ohw as isize, 1,
                );
            }
        }

        Ok(Tensor::from_op(
            vec![batch, c_out, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, parents, store| {
                let (input_t, kernel_t) = (&parents[0], &parents[1]);
                let input = input_t.data();
                let kdata = kernel_t.data();
                let kernel_grad = kernel_t.needs_grad();
                let input_grad = input_t.needs_grad();
                let mut dkernel = vec![E::zero(); c_out * ckk];
                let mut dinput = if input_grad {
                    vec![E::zero(); batch * c_in * h * w]
                } else {
                    Vec::new()
                };
                let mut cols = vec![E::zero(); ckk * ohw];
                let mut dcols = vec![E::zero(); ckk * ohw];
                for bi in 0..batch {
                    let g_img = &g[bi * c_out * ohw..(bi + 1) * c_out * ohw];
                    if kernel_grad {
                        im2col(&input[bi * c_in * h * w..], c_in, h, w, kh, kw, stride, oh, ow, &mut cols);
                        // dK += g_img x cols^T, accumulated across the batch.
                        E::gemm(
                            c_out, ohw, ckk, g_img, ohw as isize, 1, &cols, 1, ohw as isize, E::one(),
                            &mut dkernel, ckk as isize, 1,
                        );
                    }
                    if input_grad {
                        // dcols = K^T x g_img, scattered back with col2im.
                        E::gemm(
                            ckk, c_out, ohw, &kdata, 1, ckk as isize, g_img, ohw as isize, 1, E::zero(),
                            &mut dcols, ohw as isize, 1,
                        );
                        col2im(
                            &dcols,
                            c_in,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            oh,
                            ow,
                            &mut dinput[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                        );
                    }
                }
                drop(input);
                drop(kdata);
                if kernel_grad {
                    store.accumulate(kernel_t, dkernel);
                }
                if input_grad {
                    store.accumulate(input_t, dinput);
                }
            }),
        ))
    }

    pub fn relu(&self) -> Result<Tensor<E>> {
        let out: Vec<E> = self.data().iter().map(|&x| x.max(E::zero())).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, parents, store| {
                let x = parents[0].data();
                let dx: Vec<E> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gi, &xi)| if xi > E::zero() { gi } else { E::zero() })
                    .collect();
                drop(x);
                store.accumulate(&parents[0], dx);
            }),
        ))
    }

    /// Max pooling over `k x k` windows with the given stride. Trailing rows
    /// and columns that do not fill a window are dropped.
    pub fn max_pool2d(&self, k: usize, stride: usize) -> Result<Tensor<E>> {
        let (batch, c, h, w) = self.dims4("max_pool2d")?;
        if k == 0 || stride == 0 {
            return Err(Error::Parameter("max_pool2d: k and stride must be >= 1".into()));
        }
        if k > h || k > w {
            return Err(Error::Dimension {
                op: "max_pool2d",
                msg: format!("window {}x{} larger than input {}x{}", k, k, h, w),
            });
        }
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let input = self.data();
        let mut out = vec![E::zero(); batch * c * oh * ow];
        let mut argmax = vec![0u32; batch * c * oh * ow];
        assert!(input.len() < u32::MAX as usize);
        let mut oi = 0;
        for bc in 0..batch * c {
            let plane = &input[bc * h * w..(bc + 1) * h * w];
            let base = bc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        let row = (oy * stride + ky) * w + ox * stride;
                        for kx in 0..k {
                            let v = plane[row + kx];
                            if v > best {
                                best = v;
                                best_idx = base + row + kx;
                            }
                        }
                    }
                    out[oi] = best;
                    argmax[oi] = best_idx as u32;
                    oi += 1;
                }
            }
        }
        drop(input);
        let in_numel = self.numel();
        Ok(Tensor::from_op(
            vec![batch, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                let mut dx = vec![E::zero(); in_numel];
                for (gi, &idx) in g.iter().zip(argmax.iter()) {
                    dx[idx as usize] += *gi;
                }
                store.accumulate(&parents[0], dx);
            }),
        ))
    }

    /// Row-wise log-softmax of a `[b, c]` tensor.
    pub fn log_softmax(&self) -> Result<Tensor<E>> {
        let (b, c) = self.dims2("log_softmax")?;
        let x = self.data();
        let mut out = vec![E::zero(); b * c];
        for i in 0..b {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().fold(E::neg_infinity(), |acc, &v| acc.max(v));
            let mut sum = E::zero();
            for &v in row {
                sum += (v - m).exp();
            }
            let lse = m + sum.ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        drop(x);
        let saved = out.clone();
        Ok(Tensor::from_op(
            vec![b, c],
            out,
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                let mut dx = vec![E::zero(); b * c];
                for i in 0..b {
                    let mut gsum = E::zero();
                    for j in 0..c {
                        gsum += g[i * c + j];
                    }
                    for j in 0..c {
                        let p = saved[i * c + j].exp();
                        dx[i * c + j] = g[i * c + j] - p * gsum;
                    }
                }
                store.accumulate(&parents[0], dx);
            }),
        ))
    }

    /// Inverted dropout. In training mode each activation is zeroed
    /// independently with probability `p` and survivors are scaled by
    /// `1/(1-p)`; in eval mode this is the identity for any `p`.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor<E>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must lie in [0, 1), got {}",
                p
            )));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let scale = E::from_f64(1.0 / (1.0 - p));
        let mask: Vec<E> = (0..self.numel())
            .map(|_| if rng.uniform01() < p { E::zero() } else { scale })
            .collect();
        let out: Vec<E> = self.data().iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                let dx: Vec<E> = g.iter().zip(mask.iter()).map(|(&gi, &m)| gi * m).collect();
                store.accumulate(&parents[0], dx);
            }),
        ))
    }

    /// Collapse all trailing dimensions: `[b, ...] -> [b, rest]`.
    pub fn flatten(&self) -> Result<Tensor<E>> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::Dimension {
                op: "flatten",
                msg: "cannot flatten a 0-d tensor".into(),
            });
        }
        let b = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[b, rest])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                msg: format!("cannot reshape {:?} into {:?}", self.shape(), shape),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents, store| {
                store.accumulate(&parents[0], g.to_vec());
            }),
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<E> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents, store| {
                store.accumulate(&parents[0], g.to_vec());
                store.accumulate(&parents[1], g.to_vec());
            }),
        ))
    }

    /// `[m, n] + [n]`, the bias term of a dense layer.
    pub fn add_row_bias(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let (m, n) = self.dims2("add_row_bias")?;
        if bias.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bd = bias.to_vec();
        let mut out = self.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bd[j];
            }
        }
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents, store| {
                store.accumulate(&parents[0], g.to_vec());
                let mut db = vec![E::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j];
                    }
                }
                store.accumulate(&parents[1], db);
            }),
        ))
    }

    /// `[b, c, h, w] + [c]`, the bias term of a convolution.
    pub fn add_channel_bias(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, c, h, w) = self.dims4("add_channel_bias")?;
        if bias.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bd = bias.to_vec();
        let hw = h * w;
        let mut out = self.to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for i in 0..hw {
                    out[base + i] += bd[ci];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, h, w],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents, store| {
                store.accumulate(&parents[0], g.to_vec());
                let mut db = vec![E::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        for i in 0..hw {
                            db[ci] += g[base + i];
                        }
                    }
                }
                store.accumulate(&parents[1], db);
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, factor: f64) -> Result<Tensor<E>> {
        let c = E::from_f64(factor);
        let out: Vec<E> = self.data().iter().map(|&x| x * c).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                let dx: Vec<E> = g.iter().map(|&gi| gi * c).collect();
                store.accumulate(&parents[0], dx);
            }),
        ))
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean(&self) -> Result<Tensor<E>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::Dimension {
                op: "mean",
                msg: "mean of an empty tensor".into(),
            });
        }
        let mut acc = E::zero();
        for &v in self.data().iter() {
            acc += v;
        }
        let inv = E::from_f64(1.0 / n as f64);
        Ok(Tensor::from_op(
            vec![1],
            vec![acc * inv],
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                let gi = g[0] * inv;
                store.accumulate(&parents[0], vec![gi; n]);
            }),
        ))
    }

    /// Sum over all elements, as a scalar tensor.
    pub fn sum(&self) -> Result<Tensor<E>> {
        let n = self.numel();
        let mut acc = E::zero();
        for &v in self.data().iter() {
            acc += v;
        }
        Ok(Tensor::from_op(
            vec![1],
            vec![acc],
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                store.accumulate(&parents[0], vec![g[0]; n]);
            }),
        ))
    }

    /// Hadamard product of two same-shape tensors.
    pub fn elementwise_mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "elementwise_mul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<E> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents, store| {
                let (a, b) = (&parents[0], &parents[1]);
                if a.needs_grad() {
                    let bd = b.data();
                    let da: Vec<E> = g.iter().zip(bd.iter()).map(|(&gi, &bi)| gi * bi).collect();
                    drop(bd);
                    store.accumulate(a, da);
                }
                if b.needs_grad() {
                    let ad = a.data();
                    let db: Vec<E> = g.iter().zip(ad.iter()).map(|(&gi, &ai)| gi * ai).collect();
                    drop(ad);
                    store.accumulate(b, db);
                }
            }),
        ))
    }

    /// Repeat each row of a `[m, n]` tensor `times` times in place:
    /// output row `i*times + t` equals input row `i`.
    pub fn repeat_rows(&self, times: usize) -> Result<Tensor<E>> {
        let (m, n) = self.dims2("repeat_rows")?;
        if times == 0 {
            return Err(Error::Parameter("repeat_rows: times must be >= 1".into()));
        }
        let x = self.data();
        let mut out = vec![E::zero(); m * times * n];
        for i in 0..m {
            let src = &x[i * n..(i + 1) * n];
            for t in 0..times {
                out[(i * times + t) * n..(i * times + t + 1) * n].copy_from_slice(src);
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![m * times, n],
            out,
            vec![self.clone()],
            Box::new(move |g, parents, store| {
                let mut dx = vec![E::zero(); m * n];
                for i in 0..m {
                    for t in 0..times {
                        let src = &g[(i * times + t) * n..(i * times + t + 1) * n];
                        for (d, &s) in dx[i * n..(i + 1) * n].iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                }
                store.accumulate(&parents[0], dx);
            }),
        ))
    }

    /// Row-wise argmax of a `[b, c]` tensor (prediction extraction).
    pub fn argmax_rows(&self) -> Result<Vec<u32>> {
        let (b, c) = self.dims2("argmax_rows")?;
        let x = self.data();
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let row = &x[i * c..(i + 1) * c];
            let mut best = 0usize;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(best as u32);
        }
        Ok(out)
    }
}

/// Unfold one image `[c, h, w]` into columns `[c*kh*kw, oh*ow]`.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    input: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    cols: &mut [E],
) {
    let ohw = oh * ow;
    let mut r = 0;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[r * ohw..(r + 1) * ohw];
                for oy in 0..oh {
                    let src_row = (oy * stride + ky) * w + kx;
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        dst_row.copy_from_slice(&plane[src_row..src_row + ow]);
                    } else {
                        for ox in 0..ow {
                            dst_row[ox] = plane[src_row + ox * stride];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-add columns `[c*kh*kw, oh*ow]` back into an image gradient.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    cols: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    dimg: &mut [E],
) {
    let ohw = oh * ow;
    let mut r = 0;
    for ci in 0..c {
        let plane = &mut dimg[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[r * ohw..(r + 1) * ohw];
                for oy in 0..oh {
                    let dst_row = (oy * stride + ky) * w + kx;
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        plane[dst_row + ox * stride] += src_row[ox];
                    }
                }
                r += 1;
            }
        }
    }
}
