//! Height-as-channels 2D CNN: `24` input channels over the `54 × 32` (l, w) plane,
//! blocks of 3×3 convolution + ELU + 2×2 max-pool, an optional hidden layer, and
//! parallel regression / classification heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::context::{ContextVoxels, CTX_H, CTX_L, CTX_LEN, CTX_W};
use super::RefineError;

pub const N_CLASSES: usize = 2;
pub const N_REG: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetArch {
    /// Output channels of each convolution block.
    pub widths: Vec<usize>,
    /// Width of the shared fully connected layer; 0 connects the heads directly.
    pub hidden: usize,
    /// Stage-1 networks carry the regression head.
    pub regression: bool,
}

impl NetArch {
    pub fn desk(regression: bool) -> Self {
        NetArch { widths: vec![32, 64, 128, 128], hidden: 256, regression }
    }

    /// Spatial size after each block: 2×2 pooling, floor.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = (CTX_L, CTX_W);
        for _ in &self.widths {
            h /= 2;
            w /= 2;
        }
        (*self.widths.last().unwrap_or(&CTX_H), h, w)
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        let (c, h, w) = self.feature_shape();
        if self.widths.contains(&0) || c * h * w == 0 {
            return Err(RefineError::InvalidConfig(format!(
                "architecture {:?} leaves no features",
                self.widths
            )));
        }
        Ok(())
    }
}

/// Fully connected layer, `weight` row-major `out × inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// 3×3 convolution, `weight` row-major `out × (inp·9)` with `(ci, ky, kx)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub inp: usize,
    pub out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: NetArch,
    pub convs: Vec<Conv>,
    pub hidden: Option<Dense>,
    pub reg: Option<Dense>,
    pub cls: Dense,
}

/// Network input: the sparse occupancy used everywhere, or a dense real tensor
/// (used for input-gradient checks).
#[derive(Debug, Clone, Copy)]
pub enum NetInput<'a> {
    Sparse(&'a ContextVoxels),
    Dense(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOutput {
    pub reg: Option<[f64; N_REG]>,
    pub logits: [f64; N_CLASSES],
}

impl NetOutput {
    pub fn probabilities(&self) -> [f64; N_CLASSES] {
        softmax(self.logits)
    }
}

pub fn softmax(z: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

#[inline]
fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

struct BlockCache {
    in_hw: (usize, usize),
    /// im2col matrix of the block input; `None` for the sparse first block.
    col: Option<Vec<f64>>,
    pre: Vec<f64>,
    argmax: Vec<usize>,
}

pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    sparse_input: Option<Vec<(usize, usize, usize)>>,
    features: Vec<f64>,
    hidden_pre: Vec<f64>,
    head_input: Vec<f64>,
    pub output: NetOutput,
}

fn he_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let p = h * w;
    let mut col = vec![0.0; c * 9 * p];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            row[y * w + x] = input[(ci * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let p = h * w;
    let mut out = vec![0.0; c * p];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            out[(ci * h + sy as usize) * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c (m×n) = alpha · a (m×k) · b (k×n) + beta · c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of the slices for the given m, k, n.
    unsafe {
        matrixmultiply::dgemm(
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

fn max_pool(a: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (ci * h + 2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ci * h + 2 * y + dy) * w + 2 * x + dx;
                    if a[i] > a[best] {
                        best = i;
                    }
                }
                out.push(a[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

impl Dense {
    fn new(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Self {
        Dense { inp, out, weight: he_init(rng, inp * out, inp), bias: vec![0.0; out] }
    }

    fn zeros_like(&self) -> Self {
        Dense { weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.bias.len()], ..*self }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.weight[o * self.inp..][..self.inp];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], g: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        for o in 0..self.out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &self.weight[o * self.inp..][..self.inp];
            let grow = &mut g.weight[o * self.inp..][..self.inp];
            for i in 0..self.inp {
                grow[i] += d * x[i];
                dx[i] += d * row[i];
            }
        }
        dx
    }
}

impl Conv {
    fn zeros_like(&self) -> Self {
        Conv { weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.bias.len()], ..*self }
    }
}

impl Network {
    pub fn new(arch: NetArch, seed: u64) -> Result<Self, RefineError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut inp = CTX_H;
        for &out in &arch.widths {
            convs.push(Conv { inp, out, weight: he_init(&mut rng, out * inp * 9, inp * 9), bias: vec![0.0; out] });
            inp = out;
        }
        let (c, h, w) = arch.feature_shape();
        let mut feat = c * h * w;
        let hidden = (arch.hidden > 0).then(|| {
            let d = Dense::new(&mut rng, feat, arch.hidden);
            feat = arch.hidden;
            d
        });
        let mut head = |out: usize| {
            let mut d = Dense::new(&mut rng, feat, out);
            // Small heads start the regression near the identity correction.
            d.weight.iter_mut().for_each(|v| *v *= 0.01);
            d
        };
        let reg = arch.regression.then(|| head(N_REG));
        let cls = head(N_CLASSES);
        Ok(Network { arch, convs, hidden, reg, cls })
    }

    pub fn zeros_like(&self) -> Self {
        Network {
            arch: self.arch.clone(),
            convs: self.convs.iter().map(Conv::zeros_like).collect(),
            hidden: self.hidden.as_ref().map(Dense::zeros_like),
            reg: self.reg.as_ref().map(Dense::zeros_like),
            cls: self.cls.zeros_like(),
        }
    }

    /// Zeroes the output heads (weights and biases).
    pub fn zero_heads(&mut self) {
        for d in self.reg.iter_mut().chain(std::iter::once(&mut self.cls)) {
            d.weight.iter_mut().for_each(|v| *v = 0.0);
            d.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Every trainable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = Vec::new();
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        for d in self.hidden.iter().chain(self.reg.iter()).chain(std::iter::once(&self.cls)) {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        for d in self.hidden.iter_mut().chain(self.reg.iter_mut()).chain(std::iter::once(&mut self.cls)) {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, input: NetInput<'_>) -> Result<ForwardCache, RefineError> {
        let (mut h, mut w) = (CTX_L, CTX_W);
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut sparse_input = None;
        let mut act: Vec<f64> = Vec::new();
        for (bi, conv) in self.convs.iter().enumerate() {
            let p = h * w;
            let mut pre = vec![0.0; conv.out * p];
            for (o, chunk) in pre.chunks_mut(p).enumerate() {
                chunk.fill(conv.bias[o]);
            }
            let col = match (bi, input) {
                (0, NetInput::Sparse(v)) => {
                    let coords: Vec<(usize, usize, usize)> = v
                        .occupied
                        .iter()
                        .map(|&i| {
                            let i = i as usize;
                            (i / (CTX_L * CTX_W), (i / CTX_W) % CTX_L, i % CTX_W)
                        })
                        .collect();
                    let k = conv.inp * 9;
                    for &(ci, yi, xi) in &coords {
                        for_each_tap(yi, xi, h, w, |y, x, tap| {
                            let col_idx = ci * 9 + tap;
                            for o in 0..conv.out {
                                pre[o * p + y * w + x] += conv.weight[o * k + col_idx];
                            }
                        });
                    }
                    sparse_input = Some(coords);
                    None
                }
                (0, NetInput::Dense(x)) => {
                    if x.len() != CTX_LEN {
                        return Err(RefineError::ShapeMismatch { expected: CTX_LEN, found: x.len() });
                    }
                    Some(self.dense_conv(conv, x, h, w, &mut pre))
                }
                _ => Some(self.dense_conv(conv, &act, h, w, &mut pre)),
            };
            let a: Vec<f64> = pre.iter().map(|&z| elu(z)).collect();
            let (pooled, argmax) = max_pool(&a, conv.out, h, w);
            blocks.push(BlockCache { in_hw: (h, w), col, pre, argmax });
            act = pooled;
            h /= 2;
            w /= 2;
        }
        let features = act;
        let (hidden_pre, head_input) = match &self.hidden {
            Some(d) => {
                let z = d.apply(&features);
                let a = z.iter().map(|&v| elu(v)).collect();
                (z, a)
            }
            None => (Vec::new(), features.clone()),
        };
        let reg = self.reg.as_ref().map(|d| {
            let v = d.apply(&head_input);
            let mut r = [0.0; N_REG];
            r.copy_from_slice(&v);
            r
        });
        let l = self.cls.apply(&head_input);
        let output = NetOutput { reg, logits: [l[0], l[1]] };
        Ok(ForwardCache { blocks, sparse_input, features, hidden_pre, head_input, output })
    }

    fn dense_conv(&self, conv: &Conv, x: &[f64], h: usize, w: usize, pre: &mut [f64]) -> Vec<f64> {
        let p = h * w;
        let k = conv.inp * 9;
        let col = im2col(x, conv.inp, h, w);
        gemm(conv.out, k, p, &conv.weight, (k as isize, 1), &col, (p as isize, 1), 1.0, pre);
        col
    }

    pub fn infer(&self, input: NetInput<'_>) -> Result<NetOutput, RefineError> {
        Ok(self.forward(input)?.output)
    }

    /// Backpropagates output gradients, accumulating parameter gradients into
    /// `grads`. Returns the input gradient when the input was dense.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_reg: Option<&[f64; N_REG]>,
        d_logits: &[f64; N_CLASSES],
        grads: &mut Network,
    ) -> Option<Vec<f64>> {
        let mut d_head = self.cls.backward(&cache.head_input, d_logits, &mut grads.cls);
        if let (Some(reg), Some(dr)) = (&self.reg, d_reg) {
            let g = grads.reg.as_mut().expect("gradient shape matches network");
            let dx = reg.backward(&cache.head_input, dr, g);
            d_head.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        }
        let mut d_act = match &self.hidden {
            Some(d) => {
                let dz: Vec<f64> =
                    d_head.iter().zip(&cache.hidden_pre).map(|(g, &z)| g * elu_grad(z)).collect();
                let g = grads.hidden.as_mut().expect("gradient shape matches network");
                d.backward(&cache.features, &dz, g)
            }
            None => d_head,
        };
        for (bi, (conv, blk)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let (h, w) = blk.in_hw;
            let p = h * w;
            let mut dz = vec![0.0; conv.out * p];
            for (j, &src) in blk.argmax.iter().enumerate() {
                dz[src] += d_act[j];
            }
            for (d, &z) in dz.iter_mut().zip(&blk.pre) {
                *d *= elu_grad(z);
            }
            let g = &mut grads.convs[bi];
            for (o, chunk) in dz.chunks(p).enumerate() {
                g.bias[o] += chunk.iter().sum::<f64>();
            }
            let k = conv.inp * 9;
            match &blk.col {
                Some(col) => {
                    // dW += dZ · colᵀ
                    gemm(conv.out, p, k, &dz, (p as isize, 1), col, (1, p as isize), 1.0, &mut g.weight);
                    // dcol = Wᵀ · dZ
                    let mut dcol = vec![0.0; k * p];
                    gemm(k, conv.out, p, &conv.weight, (1, k as isize), &dz, (p as isize, 1), 0.0, &mut dcol);
                    d_act = col2im(&dcol, conv.inp, h, w);
                }
                None => {
                    let coords = cache.sparse_input.as_ref().expect("sparse first block");
                    for &(ci, yi, xi) in coords {
                        for_each_tap(yi, xi, h, w, |y, x, tap| {
                            let col_idx = ci * 9 + tap;
                            for o in 0..conv.out {
                                g.weight[o * k + col_idx] += dz[o * p + y * w + x];
                            }
                        });
                    }
                    return None;
                }
            }
        }
        Some(d_act)
    }
}

/// Calls `f(y, x, tap)` for every output position reached by an input at `(yi, xi)`
/// through a 3×3 same-padded kernel; `tap = ky·3 + kx`.
#[inline]
fn for_each_tap(yi: usize, xi: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for ky in 0..3 {
        // input row = y + ky − 1
        let y = yi as isize - ky as isize + 1;
        if y < 0 || y >= h as isize {
            continue;
        }
        for kx in 0..3 {
            let x = xi as isize - kx as isize + 1;
            if x < 0 || x >= w as isize {
                continue;
            }
            f(y as usize, x as usize, ky * 3 + kx);
        }
    }
}
