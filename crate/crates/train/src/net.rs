//! Actor-critic network: a convolutional image encoder feeding separate
//! policy and value heads, with hand-written backpropagation.
//!
//! All parameters live in one flat vector so the optimizer, gradient
//! clipping, checksums and checkpoints can treat them uniformly. Activations
//! are kept in NHWC order; convolutions run as im2col followed by GEMM.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::{gemm, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input height, width, channels.
    pub input: [usize; 3],
    pub convs: Vec<ConvSpec>,
    /// Width of the fully-connected layer after the convolutions.
    pub features: usize,
    /// Hidden widths of each head.
    pub head_hidden: Vec<usize>,
    /// Categorical component sizes of the policy output.
    pub arities: Vec<usize>,
}

impl Architecture {
    /// The three-layer Atari encoder (32x8x8/4, 64x4x4/2, 64x3x3/1, FC-512)
    /// on 60x60 RGB input, with two 64-unit layers per head.
    pub fn nature_cnn() -> Self {
        Self {
            input: [60, 60, 3],
            convs: vec![
                ConvSpec {
                    out_channels: 32,
                    kernel: 8,
                    stride: 4,
                },
                ConvSpec {
                    out_channels: 64,
                    kernel: 4,
                    stride: 2,
                },
                ConvSpec {
                    out_channels: 64,
                    kernel: 3,
                    stride: 1,
                },
            ],
            features: 512,
            head_hidden: vec![64, 64],
            arities: wireframe_core::ACTION_ARITIES.to_vec(),
        }
    }

    pub fn n_logits(&self) -> usize {
        self.arities.iter().sum()
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_h: usize,
    out_w: usize,
    out_c: usize,
    k: usize,
    s: usize,
    w: usize,
    b: usize,
}

impl ConvLayer {
    fn patch(&self) -> usize {
        self.k * self.k * self.in_c
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col<T: Scalar>(&self, input: &[T], batch: usize, cols: &mut Vec<T>) {
        let row_len = self.k * self.in_c;
        cols.clear();
        cols.reserve(batch * self.positions() * self.patch());
        for b in 0..batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    for ky in 0..self.k {
                        let y = oy * self.s + ky;
                        let src = ((b * self.in_h + y) * self.in_w + ox * self.s) * self.in_c;
                        cols.extend_from_slice(&input[src..src + row_len]);
                    }
                }
            }
        }
    }

    /// For each input coordinate along one axis, the `(output, kernel
    /// offset)` pairs it feeds.
    fn taps(&self, in_len: usize, out_len: usize) -> Vec<Vec<(usize, usize)>> {
        (0..in_len)
            .map(|v| {
                (0..out_len)
                    .filter(|&o| o * self.s <= v && v < o * self.s + self.k)
                    .map(|o| (o, v - o * self.s))
                    .collect()
            })
            .collect()
    }

    /// Calls `f(output_row, weight_row, value)` for every nonzero input
    /// entry and each output position it feeds. Observations are mostly
    /// background, so this is far cheaper than im2col for the first layer.
    fn scatter<T: Scalar>(&self, input: &[T], batch: usize, mut f: impl FnMut(usize, usize, T)) {
        let (ty, tx) = (
            self.taps(self.in_h, self.out_h),
            self.taps(self.in_w, self.out_w),
        );
        let plane = self.in_h * self.in_w * self.in_c;
        for (b, img) in input.chunks_exact(plane).take(batch).enumerate() {
            for (y, line) in img.chunks_exact(self.in_w * self.in_c).enumerate() {
                for (x, px) in line.chunks_exact(self.in_c).enumerate() {
                    if px.iter().all(|&v| v == T::zero()) {
                        continue;
                    }
                    for &(oy, ky) in &ty[y] {
                        for &(ox, kx) in &tx[x] {
                            let row = (b * self.out_h + oy) * self.out_w + ox;
                            let k0 = (ky * self.k + kx) * self.in_c;
                            for (ic, &v) in px.iter().enumerate() {
                                if v != T::zero() {
                                    f(row, k0 + ic, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, dcols: &[T], batch: usize, dinput: &mut [T]) {
        let (p, row_len) = (self.patch(), self.k * self.in_c);
        let mut row = 0;
        for b in 0..batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let src = &dcols[row * p..(row + 1) * p];
                    for ky in 0..self.k {
                        let y = oy * self.s + ky;
                        let dst = ((b * self.in_h + y) * self.in_w + ox * self.s) * self.in_c;
                        for (d, &g) in dinput[dst..dst + row_len]
                            .iter_mut()
                            .zip(&src[ky * row_len..(ky + 1) * row_len])
                        {
                            *d = *d + g;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Dense {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
    relu: bool,
}

/// Intermediate values of one batched forward pass, kept for backprop.
/// Reusing one value across calls keeps its buffers allocated.
#[derive(Debug, Clone, Default)]
pub struct Forward<T> {
    pub batch: usize,
    cols: Vec<Vec<T>>,
    conv_out: Vec<Vec<T>>,
    features: Vec<T>,
    pi_out: Vec<Vec<T>>,
    vf_out: Vec<Vec<T>>,
    /// `batch x n_logits`, components concatenated.
    pub logits: Vec<T>,
    pub values: Vec<T>,
}

/// Reusable buffers for [`PolicyNet::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct Scratch<T> {
    pub grads: Vec<T>,
    dfeat: Vec<T>,
    dy: Vec<T>,
    dx: Vec<T>,
    dcols: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct PolicyNet<T> {
    arch: Architecture,
    convs: Vec<ConvLayer>,
    fc: Dense,
    pi: Vec<Dense>,
    vf: Vec<Dense>,
    params: Vec<T>,
}

fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn column_sums<T: Scalar>(rows: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for row in rows.chunks_exact(out.len()) {
        for (g, &v) in out.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
}

fn relu_mask<T: Scalar>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> PolicyNet<T> {
    /// Builds the network with orthogonal initialization: gain sqrt(2) on
    /// hidden layers, 0.01 on the policy output and 1 on the value output.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut net = Self::zeroed(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = 2f64.sqrt();
        let convs = net.convs.clone();
        for c in &convs {
            net.init_weights(c.w, c.patch(), c.out_c, hidden, &mut rng);
        }
        let fc = net.fc.clone();
        net.init_weights(fc.w, fc.n_in, fc.n_out, hidden, &mut rng);
        for (heads, out_gain) in [(net.pi.clone(), 0.01), (net.vf.clone(), 1.0)] {
            let last = heads.len() - 1;
            for (i, d) in heads.iter().enumerate() {
                net.init_weights(
                    d.w,
                    d.n_in,
                    d.n_out,
                    if i == last { out_gain } else { hidden },
                    &mut rng,
                );
            }
        }
        net
    }

    /// Same layout with every parameter zero.
    pub fn zeroed(arch: Architecture) -> Self {
        let [mut h, mut w, mut c] = arch.input;
        let mut offset = 0;
        let mut alloc = |n: usize| {
            let o = offset;
            offset += n;
            o
        };
        let mut convs = Vec::new();
        for spec in &arch.convs {
            assert!(
                h >= spec.kernel && w >= spec.kernel,
                "kernel larger than its input"
            );
            let (out_h, out_w) = (
                (h - spec.kernel) / spec.stride + 1,
                (w - spec.kernel) / spec.stride + 1,
            );
            let wo = alloc(spec.kernel * spec.kernel * c * spec.out_channels);
            let bo = alloc(spec.out_channels);
            convs.push(ConvLayer {
                in_h: h,
                in_w: w,
                in_c: c,
                out_h,
                out_w,
                out_c: spec.out_channels,
                k: spec.kernel,
                s: spec.stride,
                w: wo,
                b: bo,
            });
            (h, w, c) = (out_h, out_w, spec.out_channels);
        }
        let flat = h * w * c;
        let mut dense = |n_in: usize, n_out: usize, relu: bool| {
            let wo = alloc(n_in * n_out);
            let bo = alloc(n_out);
            Dense {
                n_in,
                n_out,
                w: wo,
                b: bo,
                relu,
            }
        };
        let fc = dense(flat, arch.features, true);
        let mut head = |n_out: usize| {
            let mut layers = Vec::new();
            let mut n_in = arch.features;
            for &width in &arch.head_hidden {
                layers.push(dense(n_in, width, true));
                n_in = width;
            }
            layers.push(dense(n_in, n_out, false));
            layers
        };
        let pi = head(arch.n_logits());
        let vf = head(1);
        Self {
            params: vec![T::zero(); offset],
            arch,
            convs,
            fc,
            pi,
            vf,
        }
    }

    fn init_weights(
        &mut self,
        offset: usize,
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let w = orthogonal(rows, cols, gain, rng);
        for (p, v) in self.params[offset..offset + rows * cols].iter_mut().zip(w) {
            *p = T::from_f64(v);
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Flattened size of the last convolution's output.
    pub fn conv_output_len(&self) -> usize {
        self.fc.n_in
    }

    /// SHA-256 over the little-endian parameter bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(T::to_le_bytes_vec(&self.params));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn dense_forward(&self, d: &Dense, x: &[T], batch: usize, out: &mut Vec<T>) {
        let bias = &self.params[d.b..d.b + d.n_out];
        out.clear();
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        gemm(
            false,
            false,
            batch,
            d.n_out,
            d.n_in,
            x,
            &self.params[d.w..d.w + d.n_in * d.n_out],
            T::one(),
            out,
        );
        if d.relu {
            relu_inplace(out);
        }
    }

    /// Runs `batch` NHWC inputs through the network.
    pub fn forward(&self, input: &[T], batch: usize) -> Forward<T> {
        let mut fwd = Forward::default();
        self.forward_into(input, batch, &mut fwd);
        fwd
    }

    /// [`forward`](Self::forward) into an existing `Forward`.
    pub fn forward_into(&self, input: &[T], batch: usize, fwd: &mut Forward<T>) {
        assert_eq!(
            input.len(),
            batch * self.arch.input_len(),
            "input size mismatch"
        );
        fwd.batch = batch;
        fwd.cols.resize_with(self.convs.len(), Vec::new);
        fwd.conv_out.resize_with(self.convs.len(), Vec::new);
        fwd.pi_out.resize_with(self.pi.len(), Vec::new);
        fwd.vf_out.resize_with(self.vf.len(), Vec::new);
        for (i, c) in self.convs.iter().enumerate() {
            let rows = batch * c.positions();
            let bias = &self.params[c.b..c.b + c.out_c];
            let w = &self.params[c.w..c.w + c.patch() * c.out_c];
            let (done, rest) = fwd.conv_out.split_at_mut(i);
            let out = &mut rest[0];
            out.clear();
            for _ in 0..rows {
                out.extend_from_slice(bias);
            }
            if i == 0 {
                c.scatter(input, batch, |row, k, v| {
                    let o = &mut out[row * c.out_c..(row + 1) * c.out_c];
                    for (y, &wv) in o.iter_mut().zip(&w[k * c.out_c..(k + 1) * c.out_c]) {
                        *y = *y + v * wv;
                    }
                });
            } else {
                c.im2col(&done[i - 1], batch, &mut fwd.cols[i]);
                gemm(
                    false,
                    false,
                    rows,
                    c.out_c,
                    c.patch(),
                    &fwd.cols[i],
                    w,
                    T::one(),
                    out,
                );
            }
            relu_inplace(out);
        }
        let flat = fwd.conv_out.last().map(|v| v.as_slice()).unwrap_or(input);
        self.dense_forward(&self.fc, flat, batch, &mut fwd.features);
        for (heads, outs) in [(&self.pi, &mut fwd.pi_out), (&self.vf, &mut fwd.vf_out)] {
            for (i, d) in heads.iter().enumerate() {
                let (done, rest) = outs.split_at_mut(i);
                let x = if i == 0 { &fwd.features } else { &done[i - 1] };
                self.dense_forward(d, x, batch, &mut rest[0]);
            }
        }
        fwd.logits
            .clone_from(fwd.pi_out.last().expect("policy head has layers"));
        fwd.values
            .clone_from(fwd.vf_out.last().expect("value head has layers"));
    }

    /// Parameter gradient of a dense layer written into `grads`; `dx`
    /// receives the input gradient when given.
    fn dense_backward(
        &self,
        d: &Dense,
        x: &[T],
        dy: &[T],
        batch: usize,
        grads: &mut [T],
        dx: Option<&mut Vec<T>>,
    ) {
        gemm(
            true,
            false,
            d.n_in,
            d.n_out,
            batch,
            x,
            dy,
            T::zero(),
            &mut grads[d.w..d.w + d.n_in * d.n_out],
        );
        column_sums(dy, &mut grads[d.b..d.b + d.n_out]);
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(batch * d.n_in, T::zero());
            gemm(
                false,
                true,
                batch,
                d.n_in,
                d.n_out,
                dy,
                &self.params[d.w..d.w + d.n_in * d.n_out],
                T::zero(),
                dx,
            );
        }
    }

    /// Parameter gradients of a loss whose gradients with respect to the
    /// logits and values are `dlogits` and `dvalues`.
    pub fn backward(&self, input: &[T], fwd: &Forward<T>, dlogits: &[T], dvalues: &[T]) -> Vec<T> {
        let mut scratch = Scratch::default();
        self.backward_into(input, fwd, dlogits, dvalues, &mut scratch);
        scratch.grads
    }

    /// [`backward`](Self::backward) leaving the gradient in `scratch.grads`.
    pub fn backward_into(
        &self,
        input: &[T],
        fwd: &Forward<T>,
        dlogits: &[T],
        dvalues: &[T],
        scratch: &mut Scratch<T>,
    ) {
        let batch = fwd.batch;
        assert_eq!(dlogits.len(), batch * self.arch.n_logits());
        assert_eq!(dvalues.len(), batch);
        let Scratch {
            grads,
            dfeat,
            dy,
            dx,
            dcols,
        } = scratch;
        grads.clear();
        grads.resize(self.params.len(), T::zero());

        dfeat.clear();
        dfeat.resize(batch * self.arch.features, T::zero());
        for (heads, outs, dout) in [
            (&self.pi, &fwd.pi_out, dlogits),
            (&self.vf, &fwd.vf_out, dvalues),
        ] {
            dy.clear();
            dy.extend_from_slice(dout);
            for i in (0..heads.len()).rev() {
                let x = if i == 0 { &fwd.features } else { &outs[i - 1] };
                self.dense_backward(&heads[i], x, dy, batch, grads, Some(dx));
                if i > 0 {
                    relu_mask(dx, &outs[i - 1]);
                }
                std::mem::swap(dy, dx);
            }
            for (a, &b) in dfeat.iter_mut().zip(dy.iter()) {
                *a = *a + b;
            }
        }
        relu_mask(dfeat, &fwd.features);

        let flat = fwd.conv_out.last().map(|v| v.as_slice()).unwrap_or(input);
        let need_dx = !self.convs.is_empty();
        self.dense_backward(
            &self.fc,
            flat,
            dfeat,
            batch,
            grads,
            need_dx.then_some(&mut *dx),
        );
        for i in (0..self.convs.len()).rev() {
            let c = &self.convs[i];
            relu_mask(dx, &fwd.conv_out[i]);
            let rows = batch * c.positions();
            let (wlen, w) = (
                c.patch() * c.out_c,
                &self.params[c.w..c.w + c.patch() * c.out_c],
            );
            if i == 0 {
                let dw = &mut grads[c.w..c.w + wlen];
                c.scatter(input, batch, |row, k, v| {
                    let g = &dx[row * c.out_c..(row + 1) * c.out_c];
                    for (d, &gv) in dw[k * c.out_c..(k + 1) * c.out_c].iter_mut().zip(g) {
                        *d = *d + v * gv;
                    }
                });
            } else {
                gemm(
                    true,
                    false,
                    c.patch(),
                    c.out_c,
                    rows,
                    &fwd.cols[i],
                    dx,
                    T::zero(),
                    &mut grads[c.w..c.w + wlen],
                );
            }
            column_sums(dx, &mut grads[c.b..c.b + c.out_c]);
            if i > 0 {
                dcols.clear();
                dcols.resize(rows * c.patch(), T::zero());
                gemm(
                    false,
                    true,
                    rows,
                    c.patch(),
                    c.out_c,
                    dx,
                    w,
                    T::zero(),
                    dcols,
                );
                dx.clear();
                dx.resize(batch * c.in_h * c.in_w * c.in_c, T::zero());
                c.col2im(dcols, batch, dx);
            }
        }
    }

    /// Converts to another element type, e.g. `f32` weights to `f64`.
    pub fn cast<U: Scalar>(&self) -> PolicyNet<U> {
        let mut out = PolicyNet::<U>::zeroed(self.arch.clone());
        for (o, &p) in out.params.iter_mut().zip(&self.params) {
            *o = U::from_f64(p.to_f64());
        }
        out
    }
}

/// `rows x cols` matrix with orthonormal columns (or rows, whichever is
/// fewer), scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n_vec, len) = if rows >= cols {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while vecs.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows >= cols { vecs[c][r] } else { vecs[r][c] };
        }
    }
    out
}
