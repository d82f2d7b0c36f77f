//! Minimal convolutional network pieces with hand-written backpropagation.
//!
//! Parameters of a network live in one flat `Vec<f32>`; layers only record
//! offsets into it. Activations use position-major (HWC) layout so the inner
//! loops run over contiguous output channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

fn uniform_symmetric(rng: &mut impl Rng, limit: f32) -> f32 {
    rng.gen_range(-limit..limit)
}

/// Allocates parameter ranges in a flat vector.
#[derive(Debug, Default)]
pub struct ParamAlloc {
    len: usize,
}

impl ParamAlloc {
    pub fn take(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, v: &mut [f32]) {
        if self == Activation::Relu {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }

    /// Mask `grad` in place given the post-activation output.
    fn backprop(self, out: &[f32], grad: &mut [f32]) {
        if self == Activation::Relu {
            for (g, &o) in grad.iter_mut().zip(out) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}

/// Stride-1 convolution with "same" zero padding. Even kernels pad one
/// extra cell on the bottom/right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub act: Activation,
    w_off: usize,
    b_off: usize,
}

impl Conv2d {
    pub fn new(
        alloc: &mut ParamAlloc,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        height: usize,
        width: usize,
        act: Activation,
    ) -> Self {
        let w_off = alloc.take(kernel * kernel * in_ch * out_ch);
        let b_off = alloc.take(out_ch);
        Self {
            in_ch,
            out_ch,
            kernel,
            height,
            width,
            act,
            w_off,
            b_off,
        }
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn in_len(&self) -> usize {
        self.positions() * self.in_ch
    }

    pub fn out_len(&self) -> usize {
        self.positions() * self.out_ch
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_ch
    }

    pub fn init(&self, params: &mut [f32], rng: &mut impl Rng) {
        let fan_in = self.patch_len() as f32;
        let limit = (6.0 / fan_in).sqrt();
        for w in &mut params[self.w_off..self.w_off + self.patch_len() * self.out_ch] {
            *w = uniform_symmetric(rng, limit);
        }
        params[self.b_off..self.b_off + self.out_ch].fill(0.0);
    }

    fn im2col(&self, x: &[f32], col: &mut Vec<f32>) {
        let k = self.kernel as isize;
        let pad = (k - 1) / 2;
        let (h, w) = (self.height as isize, self.width as isize);
        col.clear();
        col.resize(self.positions() * self.patch_len(), 0.0);
        let plen = self.patch_len();
        for r in 0..h {
            for c in 0..w {
                let pos = (r * w + c) as usize;
                let dst = &mut col[pos * plen..(pos + 1) * plen];
                for a in 0..k {
                    for b in 0..k {
                        let (rr, cc) = (r + a - pad, c + b - pad);
                        if rr < 0 || rr >= h || cc < 0 || cc >= w {
                            continue;
                        }
                        let src = ((rr * w + cc) as usize) * self.in_ch;
                        let o = ((a * k + b) as usize) * self.in_ch;
                        dst[o..o + self.in_ch].copy_from_slice(&x[src..src + self.in_ch]);
                    }
                }
            }
        }
    }

    /// `out` receives the post-activation output; `col` keeps the unfolded
    /// input for the backward pass.
    pub fn forward(&self, params: &[f32], x: &[f32], col: &mut Vec<f32>, out: &mut [f32]) {
        self.im2col(x, col);
        let plen = self.patch_len();
        let oc = self.out_ch;
        let wts = &params[self.w_off..self.w_off + plen * oc];
        let bias = &params[self.b_off..self.b_off + oc];
        for pos in 0..self.positions() {
            let o = &mut out[pos * oc..(pos + 1) * oc];
            o.copy_from_slice(bias);
            for (j, &xv) in col[pos * plen..(pos + 1) * plen].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &wts[j * oc..(j + 1) * oc];
                for (ov, &wv) in o.iter_mut().zip(row) {
                    *ov += xv * wv;
                }
            }
        }
        self.act.apply(out);
    }

    /// `dout` is the gradient w.r.t. the post-activation output and is
    /// masked in place. Accumulates parameter gradients into `grad` and
    /// writes the input gradient into `dx` when given.
    pub fn backward(
        &self,
        params: &[f32],
        col: &[f32],
        out: &[f32],
        dout: &mut [f32],
        grad: &mut [f32],
        dx: Option<&mut [f32]>,
    ) {
        self.act.backprop(out, dout);
        let plen = self.patch_len();
        let oc = self.out_ch;
        for pos in 0..self.positions() {
            let d = &dout[pos * oc..(pos + 1) * oc];
            for (g, &dv) in grad[self.b_off..self.b_off + oc].iter_mut().zip(d) {
                *g += dv;
            }
            let gw = &mut grad[self.w_off..self.w_off + plen * oc];
            for (j, &xv) in col[pos * plen..(pos + 1) * plen].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (g, &dv) in gw[j * oc..(j + 1) * oc].iter_mut().zip(d) {
                    *g += xv * dv;
                }
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            let wts = &params[self.w_off..self.w_off + plen * oc];
            let k = self.kernel as isize;
            let pad = (k - 1) / 2;
            let (h, w) = (self.height as isize, self.width as isize);
            let mut dcol = vec![0.0f32; plen];
            for r in 0..h {
                for c in 0..w {
                    let pos = (r * w + c) as usize;
                    let d = &dout[pos * oc..(pos + 1) * oc];
                    for (j, dc) in dcol.iter_mut().enumerate() {
                        let row = &wts[j * oc..(j + 1) * oc];
                        *dc = row.iter().zip(d).map(|(a, b)| a * b).sum();
                    }
                    for a in 0..k {
                        for b in 0..k {
                            let (rr, cc) = (r + a - pad, c + b - pad);
                            if rr < 0 || rr >= h || cc < 0 || cc >= w {
                                continue;
                            }
                            let dst = ((rr * w + cc) as usize) * self.in_ch;
                            let o = ((a * k + b) as usize) * self.in_ch;
                            for i in 0..self.in_ch {
                                dx[dst + i] += dcol[o + i];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub act: Activation,
    w_off: usize,
    b_off: usize,
}

impl Dense {
    pub fn new(alloc: &mut ParamAlloc, inputs: usize, outputs: usize, act: Activation) -> Self {
        let w_off = alloc.take(inputs * outputs);
        let b_off = alloc.take(outputs);
        Self {
            inputs,
            outputs,
            act,
            w_off,
            b_off,
        }
    }

    pub fn init(&self, params: &mut [f32], rng: &mut impl Rng) {
        let limit = (6.0 / (self.inputs + self.outputs) as f32).sqrt();
        for w in &mut params[self.w_off..self.w_off + self.inputs * self.outputs] {
            *w = uniform_symmetric(rng, limit);
        }
        params[self.b_off..self.b_off + self.outputs].fill(0.0);
    }

    pub fn forward(&self, params: &[f32], x: &[f32], out: &mut [f32]) {
        let n = self.outputs;
        out.copy_from_slice(&params[self.b_off..self.b_off + n]);
        let wts = &params[self.w_off..self.w_off + self.inputs * n];
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&wts[i * n..(i + 1) * n]) {
                *o += xv * wv;
            }
        }
        self.act.apply(out);
    }

    pub fn backward(
        &self,
        params: &[f32],
        x: &[f32],
        out: &[f32],
        dout: &mut [f32],
        grad: &mut [f32],
        dx: Option<&mut [f32]>,
    ) {
        self.act.backprop(out, dout);
        let n = self.outputs;
        for (g, &d) in grad[self.b_off..self.b_off + n].iter_mut().zip(dout.iter()) {
            *g += d;
        }
        {
            let gw = &mut grad[self.w_off..self.w_off + self.inputs * n];
            for (i, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (g, &d) in gw[i * n..(i + 1) * n].iter_mut().zip(dout.iter()) {
                    *g += xv * d;
                }
            }
        }
        if let Some(dx) = dx {
            let wts = &params[self.w_off..self.w_off + self.inputs * n];
            for (i, dxi) in dx.iter_mut().enumerate() {
                *dxi = wts[i * n..(i + 1) * n].iter().zip(dout.iter()).map(|(a, b)| a * b).sum();
            }
        }
    }

    /// Weight-only parameter range (biases excluded), for L2 penalties.
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.w_off..self.w_off + self.inputs * self.outputs
    }
}

impl Conv2d {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.w_off..self.w_off + self.patch_len() * self.out_ch
    }
}

/// Convert a channel-major tensor into position-major layout.
pub fn chw_to_hwc(data: &[f32], channels: usize, positions: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for c in 0..channels {
        for p in 0..positions {
            out[p * channels + c] = data[c * positions + p];
        }
    }
    out
}

pub fn softmax_f32(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f32 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Greedy choice; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { lr: f32 },
    Sgd { lr: f32 },
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Optimizer {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam { .. } => (vec![0.0; n_params], vec![0.0; n_params]),
            OptimizerKind::Sgd { .. } => (Vec::new(), Vec::new()),
        };
        Self { kind, m, v, t: 0 }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { lr } => {
                let bc1 = 1.0 - Self::BETA1.powi(self.t);
                let bc2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
    }
}
