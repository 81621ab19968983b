//! Minimal convolutional network with reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f32>` owned by the caller; layers hold
//! offsets into it. This keeps checkpointing, gradient reduction across
//! images and the optimizer update plain slice operations. Convolutions are
//! im2col followed by an sgemm.

mod optim;

pub use optim::Adam;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A `[C, H, W]` activation tensor, row-major with C outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor buffer length mismatch");
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn fan_in(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub spec: ConvSpec,
    weight_offset: usize,
    bias_offset: usize,
}

/// Named view of one parameter tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv),
    Relu,
    MaxPool { kernel: usize, stride: usize, pad: usize },
    /// `branch(x) + shortcut(x)`, the shortcut being identity when `None`.
    Residual { branch: Vec<Layer>, shortcut: Option<Conv> },
}

enum Cache {
    Conv { cols: Vec<f32>, in_shape: (usize, usize, usize) },
    Relu { active: Vec<bool> },
    MaxPool { argmax: Vec<u32>, in_shape: (usize, usize, usize) },
    Residual { branch: Vec<Cache>, shortcut: Option<Box<Cache>> },
}

/// Activations recorded by [`Network::forward_train`] for the backward pass.
pub struct Tape {
    caches: Vec<Cache>,
}

/// How freshly added convolution weights are initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// He-normal, for convs followed by a ReLU.
    He,
    /// Normal with variance `1 / fan_in`, for linear outputs.
    Lecun,
    /// All-zero weights (last conv of a residual branch starts as identity).
    Zero,
}

/// Accumulates layers and their initial parameters.
pub struct NetworkBuilder<'r, R: Rng> {
    params: Vec<f32>,
    rng: &'r mut R,
}

impl<'r, R: Rng> NetworkBuilder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self { params: Vec::new(), rng }
    }

    pub fn conv(&mut self, name: impl Into<String>, spec: ConvSpec, init: Init) -> Conv {
        let n_w = spec.out_c * spec.fan_in();
        let weight_offset = self.params.len();
        let std = match init {
            Init::He => (2.0 / spec.fan_in() as f64).sqrt(),
            Init::Lecun => (1.0 / spec.fan_in() as f64).sqrt(),
            Init::Zero => 0.0,
        };
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            for _ in 0..n_w {
                self.params.push(normal.sample(self.rng) as f32);
            }
        } else {
            self.params.extend(std::iter::repeat(0.0).take(n_w));
        }
        let bias_offset = self.params.len();
        // Small positive bias keeps all-zero inputs from mapping to an all-zero feature.
        let bias = if init == Init::Zero { 0.0 } else { 0.01 };
        self.params.extend(std::iter::repeat(bias).take(spec.out_c));
        Conv { name: name.into(), spec, weight_offset, bias_offset }
    }

    pub fn finish(self, layers: Vec<Layer>) -> (Network, Vec<f32>) {
        let net = Network { layers, n_params: self.params.len() };
        (net, self.params)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    n_params: usize,
}

impl Network {
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// All parameter tensors in a deterministic order.
    pub fn param_infos(&self) -> Vec<ParamInfo> {
        fn visit_conv(c: &Conv, out: &mut Vec<ParamInfo>) {
            let s = c.spec;
            out.push(ParamInfo {
                name: format!("{}.weight", c.name),
                offset: c.weight_offset,
                shape: vec![s.out_c, s.in_c, s.kernel, s.kernel],
            });
            out.push(ParamInfo {
                name: format!("{}.bias", c.name),
                offset: c.bias_offset,
                shape: vec![s.out_c],
            });
        }
        fn visit(layers: &[Layer], out: &mut Vec<ParamInfo>) {
            for l in layers {
                match l {
                    Layer::Conv(c) => visit_conv(c, out),
                    Layer::Residual { branch, shortcut } => {
                        visit(branch, out);
                        if let Some(c) = shortcut {
                            visit_conv(c, out);
                        }
                    }
                    Layer::Relu | Layer::MaxPool { .. } => {}
                }
            }
        }
        let mut out = Vec::new();
        visit(&self.layers, &mut out);
        out
    }

    pub fn forward(&self, params: &[f32], x: Tensor) -> Tensor {
        assert_eq!(params.len(), self.n_params, "parameter vector length mismatch");
        run_forward(&self.layers, params, x, None)
    }

    pub fn forward_train(&self, params: &[f32], x: Tensor) -> (Tensor, Tape) {
        assert_eq!(params.len(), self.n_params, "parameter vector length mismatch");
        let mut caches = Vec::with_capacity(self.layers.len());
        let y = run_forward(&self.layers, params, x, Some(&mut caches));
        (y, Tape { caches })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, params: &[f32], tape: Tape, grad_out: Tensor, grads: &mut [f32]) -> Tensor {
        assert_eq!(grads.len(), self.n_params, "gradient vector length mismatch");
        run_backward(&self.layers, params, tape.caches, grad_out, grads, true)
    }

    /// Like [`Network::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&self, params: &[f32], tape: Tape, grad_out: Tensor, grads: &mut [f32]) {
        assert_eq!(grads.len(), self.n_params, "gradient vector length mismatch");
        run_backward(&self.layers, params, tape.caches, grad_out, grads, false);
    }
}

fn run_forward(layers: &[Layer], params: &[f32], mut x: Tensor, mut caches: Option<&mut Vec<Cache>>) -> Tensor {
    for layer in layers {
        let (y, cache) = forward_layer(layer, params, x, caches.is_some());
        if let (Some(cs), Some(c)) = (caches.as_deref_mut(), cache) {
            cs.push(c);
        }
        x = y;
    }
    x
}

fn forward_layer(layer: &Layer, params: &[f32], x: Tensor, record: bool) -> (Tensor, Option<Cache>) {
    match layer {
        Layer::Conv(conv) => {
            let in_shape = x.shape();
            let (y, cols) = conv_forward(conv, params, x);
            (y, record.then_some(Cache::Conv { cols, in_shape }))
        }
        Layer::Relu => {
            let mut x = x;
            let mut active = if record { Vec::with_capacity(x.data.len()) } else { Vec::new() };
            for v in &mut x.data {
                let on = *v > 0.0;
                if !on {
                    *v = 0.0;
                }
                if record {
                    active.push(on);
                }
            }
            (x, record.then_some(Cache::Relu { active }))
        }
        Layer::MaxPool { kernel, stride, pad } => {
            let in_shape = x.shape();
            let (y, argmax) = maxpool_forward(&x, *kernel, *stride, *pad);
            (y, record.then_some(Cache::MaxPool { argmax, in_shape }))
        }
        Layer::Residual { branch, shortcut } => {
            let mut branch_caches = Vec::new();
            let (skip, shortcut_cache) = match shortcut {
                Some(conv) => {
                    let in_shape = x.shape();
                    let (s, cols) = conv_forward(conv, params, x.clone());
                    (s, record.then(|| Box::new(Cache::Conv { cols, in_shape })))
                }
                None => (x.clone(), None),
            };
            let mut y = run_forward(branch, params, x, record.then_some(&mut branch_caches));
            assert_eq!(y.shape(), skip.shape(), "residual branch and shortcut disagree");
            for (a, b) in y.data.iter_mut().zip(&skip.data) {
                *a += b;
            }
            (
                y,
                record.then_some(Cache::Residual { branch: branch_caches, shortcut: shortcut_cache }),
            )
        }
    }
}

fn run_backward(
    layers: &[Layer],
    params: &[f32],
    caches: Vec<Cache>,
    mut grad: Tensor,
    grads: &mut [f32],
    need_input_grad: bool,
) -> Tensor {
    assert_eq!(layers.len(), caches.len(), "tape does not match network");
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let need = need_input_grad || i > 0;
        grad = backward_layer(layer, params, cache, grad, grads, need);
    }
    grad
}

fn backward_layer(layer: &Layer, params: &[f32], cache: Cache, grad: Tensor, grads: &mut [f32], need_input_grad: bool) -> Tensor {
    match (layer, cache) {
        (Layer::Conv(conv), Cache::Conv { cols, in_shape }) => {
            conv_backward(conv, params, &cols, in_shape, &grad, grads, need_input_grad)
        }
        (Layer::Relu, Cache::Relu { active }) => {
            let mut g = grad;
            for (v, on) in g.data.iter_mut().zip(active) {
                if !on {
                    *v = 0.0;
                }
            }
            g
        }
        (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_shape }) => {
            let (c, h, w) = in_shape;
            let mut dx = Tensor::zeros(c, h, w);
            for (g, &idx) in grad.data.iter().zip(&argmax) {
                dx.data[idx as usize] += g;
            }
            dx
        }
        (Layer::Residual { branch, shortcut }, Cache::Residual { branch: bc, shortcut: sc }) => {
            let mut dx = run_backward(branch, params, bc, grad.clone(), grads, true);
            let dskip = match (shortcut, sc) {
                (Some(conv), Some(cache)) => match *cache {
                    Cache::Conv { cols, in_shape } => {
                        conv_backward(conv, params, &cols, in_shape, &grad, grads, true)
                    }
                    _ => unreachable!("shortcut cache is always a conv cache"),
                },
                _ => grad,
            };
            for (a, b) in dx.data.iter_mut().zip(&dskip.data) {
                *a += b;
            }
            dx
        }
        _ => unreachable!("tape does not match network"),
    }
}

fn im2col(x: &Tensor, s: ConvSpec, oh: usize, ow: usize) -> Vec<f32> {
    let k = s.kernel;
    let p = oh * ow;
    let mut cols = vec![0.0f32; s.in_c * k * k * p];
    for ci in 0..s.in_c {
        let plane = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < x.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], s: ConvSpec, in_shape: (usize, usize, usize), oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = in_shape;
    let k = s.kernel;
    let p = oh * ow;
    let mut dx = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut dx.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `C[m x n] = alpha * A[m x k] * B[k x n] + beta * C`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides index within `a` (m*k), `b` (k*n) and `c` (m*n),
    // which the callers size accordingly; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(conv: &Conv, params: &[f32], x: Tensor) -> (Tensor, Vec<f32>) {
    let s = conv.spec;
    assert_eq!(x.c, s.in_c, "conv {} expects {} input channels, got {}", conv.name, s.in_c, x.c);
    let oh = s.out_dim(x.h);
    let ow = s.out_dim(x.w);
    let kk = s.fan_in();
    let p = oh * ow;
    let cols = if s.is_pointwise() { x.data } else { im2col(&x, s, oh, ow) };
    let weight = &params[conv.weight_offset..conv.weight_offset + s.out_c * kk];
    let bias = &params[conv.bias_offset..conv.bias_offset + s.out_c];
    let mut y = vec![0.0f32; s.out_c * p];
    for (o, row) in y.chunks_mut(p).enumerate() {
        row.fill(bias[o]);
    }
    gemm(s.out_c, kk, p, weight, (kk as isize, 1), &cols, (p as isize, 1), 1.0, &mut y);
    (Tensor::from_vec(s.out_c, oh, ow, y), cols)
}

fn conv_backward(
    conv: &Conv,
    params: &[f32],
    cols: &[f32],
    in_shape: (usize, usize, usize),
    dy: &Tensor,
    grads: &mut [f32],
    need_input_grad: bool,
) -> Tensor {
    let s = conv.spec;
    let kk = s.fan_in();
    let p = dy.h * dy.w;
    {
        let gw = &mut grads[conv.weight_offset..conv.weight_offset + s.out_c * kk];
        // dW += dY * cols^T
        gemm(s.out_c, p, kk, &dy.data, (p as isize, 1), cols, (1, p as isize), 1.0, gw);
    }
    {
        let gb = &mut grads[conv.bias_offset..conv.bias_offset + s.out_c];
        for (o, g) in gb.iter_mut().enumerate() {
            *g += dy.data[o * p..(o + 1) * p].iter().sum::<f32>();
        }
    }
    if !need_input_grad {
        return Tensor::zeros(0, 0, 0);
    }
    let weight = &params[conv.weight_offset..conv.weight_offset + s.out_c * kk];
    let mut dcols = vec![0.0f32; kk * p];
    // dcols = W^T * dY
    gemm(kk, s.out_c, p, weight, (1, kk as isize), &dy.data, (p as isize, 1), 0.0, &mut dcols);
    if s.is_pointwise() {
        let (c, h, w) = in_shape;
        Tensor::from_vec(c, h, w, dcols)
    } else {
        col2im(&dcols, s, in_shape, dy.h, dy.w)
    }
}

fn maxpool_forward(x: &Tensor, k: usize, stride: usize, pad: usize) -> (Tensor, Vec<u32>) {
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros(x.c, oh, ow);
    let mut argmax = vec![0u32; x.c * oh * ow];
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let idx = (c * x.h + iy as usize) * x.w + ix as usize;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                y.data[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    (y, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(rng: &mut ChaCha8Rng) -> (Network, Vec<f32>) {
        let mut b = NetworkBuilder::new(rng);
        let c1 = b.conv("c1", ConvSpec { in_c: 2, out_c: 4, kernel: 3, stride: 2, pad: 1 }, Init::He);
        let r1 = b.conv("r.a", ConvSpec { in_c: 4, out_c: 4, kernel: 3, stride: 1, pad: 1 }, Init::He);
        let r2 = b.conv("r.b", ConvSpec { in_c: 4, out_c: 6, kernel: 1, stride: 1, pad: 0 }, Init::Lecun);
        let sc = b.conv("r.sc", ConvSpec { in_c: 4, out_c: 6, kernel: 1, stride: 1, pad: 0 }, Init::Lecun);
        let c2 = b.conv("c2", ConvSpec { in_c: 6, out_c: 3, kernel: 3, stride: 2, pad: 1 }, Init::Lecun);
        b.finish(vec![
            Layer::Conv(c1),
            Layer::Relu,
            Layer::MaxPool { kernel: 3, stride: 1, pad: 1 },
            Layer::Residual { branch: vec![Layer::Conv(r1), Layer::Relu, Layer::Conv(r2)], shortcut: Some(sc) },
            Layer::Relu,
            Layer::Conv(c2),
        ])
    }

    /// Direct nested-loop convolution used as an oracle for im2col+sgemm.
    fn naive_conv(x: &Tensor, w: &[f32], b: &[f32], s: ConvSpec) -> Tensor {
        let oh = s.out_dim(x.h);
        let ow = s.out_dim(x.w);
        let mut y = Tensor::zeros(s.out_c, oh, ow);
        for o in 0..s.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o] as f64;
                    for ci in 0..s.in_c {
                        for ky in 0..s.kernel {
                            for kx in 0..s.kernel {
                                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let wv = w[((o * s.in_c + ci) * s.kernel + ky) * s.kernel + kx];
                                acc += wv as f64 * x.data[(ci * x.h + iy as usize) * x.w + ix as usize] as f64;
                            }
                        }
                    }
                    y.data[(o * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ConvSpec { in_c: 3, out_c: 5, kernel: 3, stride: 2, pad: 1 };
        let mut b = NetworkBuilder::new(&mut rng);
        let conv = b.conv("c", spec, Init::He);
        let (_, params) = b.finish(vec![]);
        let x = Tensor::from_vec(3, 9, 7, (0..189).map(|i| ((i * 37) % 17) as f32 / 17.0 - 0.4).collect());
        let (y, _) = conv_forward(&conv, &params, x.clone());
        let w = &params[conv.weight_offset..conv.bias_offset];
        let bias = &params[conv.bias_offset..];
        let oracle = naive_conv(&x, w, bias, spec);
        assert_eq!(y.shape(), oracle.shape());
        for (a, b) in y.data.iter().zip(&oracle.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    fn probe_loss(net: &Network, params: &[f32], x: &Tensor, dir: &[f32]) -> f64 {
        let y = net.forward(params, x.clone());
        y.data.iter().zip(dir).map(|(a, b)| *a as f64 * *b as f64).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (net, params) = tiny_net(&mut rng);
        let x = Tensor::from_vec(2, 12, 8, (0..192).map(|i| (((i * 53) % 29) as f32 / 29.0) - 0.3).collect());
        let y = net.forward(&params, x.clone());
        let dir: Vec<f32> = (0..y.data.len()).map(|i| ((i * 7) % 5) as f32 - 2.0).collect();
        let (_, tape) = net.forward_train(&params, x.clone());
        let mut grads = vec![0.0; net.n_params()];
        let dx = net.backward(&params, tape, Tensor::from_vec(y.c, y.h, y.w, dir.clone()), &mut grads);
        // f32 forward passes: a coarse step keeps rounding noise well below the signal.
        let h = 1e-2f32;
        let mut checked = 0;
        for i in (0..net.n_params()).step_by(7) {
            let mut p = params.clone();
            p[i] += h;
            let up = probe_loss(&net, &p, &x, &dir);
            p[i] -= 2.0 * h;
            let down = probe_loss(&net, &p, &x, &dir);
            let fd = (up - down) / (2.0 * h as f64);
            let an = grads[i] as f64;
            if fd.abs() > 1e-2 {
                let rel = (fd - an).abs() / fd.abs().max(an.abs());
                assert!(rel < 2e-2, "param {i}: fd {fd} analytic {an}");
                checked += 1;
            }
        }
        assert!(checked > 10);
        for i in (0..x.data.len()).step_by(11) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let up = probe_loss(&net, &params, &xp, &dir);
            xp.data[i] -= 2.0 * h;
            let down = probe_loss(&net, &params, &xp, &dir);
            let fd = (up - down) / (2.0 * h as f64);
            let an = dx.data[i] as f64;
            assert!((fd - an).abs() <= 2e-2 * fd.abs().max(an.abs()).max(0.1), "input {i}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn param_infos_cover_every_parameter_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (net, params) = tiny_net(&mut rng);
        let infos = net.param_infos();
        let total: usize = infos.iter().map(ParamInfo::len).sum();
        assert_eq!(total, params.len());
        let mut covered = vec![false; params.len()];
        for info in &infos {
            for c in &mut covered[info.offset..info.offset + info.len()] {
                assert!(!*c);
                *c = true;
            }
        }
        assert!(covered.into_iter().all(|c| c));
    }
}
