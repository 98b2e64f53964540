//! Timestep-conditioned convolutional residual denoiser.
//!
//! The network sees the current iterate and the `k` initialization estimates
//! as `k + 1` channels on the `N×N` support window, predicts a residual, and
//! returns the mean of its inputs minus that residual. Hidden layers are
//! modulated per channel by `h·(1 + γ) + δ`, with `(γ, δ)` an affine function
//! of a sinusoidal timestep embedding, so an all-zero parameter vector gives
//! exactly the input mean.
//!
//! Gradients are computed by hand; the tests check them against central
//! differences.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::aggregation::{apply_transform, EquivariantTransform, TransformKind};
use crate::error::{check_dim, invalid, Error, Result};
use crate::grid::{mean_image, ImageGrid};
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vec, stream, support_noise};

const EMBED_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserArch {
    /// `k + 1`.
    pub input_channels: usize,
    pub hidden_channels: usize,
    /// Convolution count, the last one producing the residual.
    pub layers: usize,
    pub kernel_size: usize,
    pub embed_dim: usize,
}

impl DenoiserArch {
    /// 4 layers, 16 hidden channels, 3×3 kernels, 16-dimensional embedding.
    pub fn new(k: usize) -> Self {
        Self {
            input_channels: k + 1,
            hidden_channels: 16,
            layers: 4,
            kernel_size: 3,
            embed_dim: 16,
        }
    }

    pub fn k(&self) -> usize {
        self.input_channels.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 2 {
            return Err(invalid("input_channels", "need at least one init estimate"));
        }
        if self.hidden_channels == 0 || self.layers < 2 {
            return Err(invalid("layers", "need at least 2 layers with hidden channels"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(invalid("kernel_size", "must be odd"));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 == 1 {
            return Err(invalid("embed_dim", "must be even and positive"));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let ks2 = self.kernel_size * self.kernel_size;
        let h = self.hidden_channels;
        let e = self.embed_dim;
        let mut off = 0;
        let mut convs = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let cin = if l == 0 { self.input_channels } else { h };
            let cout = if l + 1 == self.layers { 1 } else { h };
            let w = off;
            off += cout * cin * ks2;
            let b = off;
            off += cout;
            convs.push(ConvSlot { w, b, cin, cout });
        }
        let embed_w = off;
        off += e * e;
        let embed_b = off;
        off += e;
        let mut films = Vec::with_capacity(self.layers - 1);
        for _ in 0..self.layers - 1 {
            films.push(off);
            off += 2 * h * e + 2 * h;
        }
        let skip = ConvSlot {
            w: off,
            b: off + self.input_channels * ks2,
            cin: self.input_channels,
            cout: 1,
        };
        off += self.input_channels * ks2 + 1;
        Layout {
            convs,
            embed_w,
            embed_b,
            films,
            skip,
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSlot {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
}

/// Offsets into the flat parameter vector. Each FiLM block holds a
/// `2H × E` matrix followed by `2H` biases; rows `0..H` give `γ`, the rest `δ`.
/// `skip` is a linear convolution from the inputs straight to the residual.
#[derive(Clone, Debug)]
struct Layout {
    convs: Vec<ConvSlot>,
    embed_w: usize,
    embed_b: usize,
    films: Vec<usize>,
    skip: ConvSlot,
    total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub arch: DenoiserArch,
    pub params: Vec<f64>,
    /// Number of timestep grid points the model was trained on.
    pub trained_steps: usize,
}

/// Sinusoidal encoding of `t_index`: `dim/2` sines then `dim/2` cosines at
/// frequencies `base^(−j/(dim/2))`.
pub fn sinusoidal_embedding(t_index: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 == 1 {
        return Err(invalid("dim", format!("{dim} must be even and positive")));
    }
    let half = dim / 2;
    let t = t_index as f64;
    let freqs: Vec<f64> = (0..half).map(|j| EMBED_BASE.powf(-(j as f64) / half as f64)).collect();
    Ok(freqs.iter().map(|f| (t * f).sin()).chain(freqs.iter().map(|f| (t * f).cos())).collect())
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn conv_forward(input: &[f64], w: &[f64], b: &[f64], slot: ConvSlot, n: usize, ks: usize) -> Vec<f64> {
    let nn = n * n;
    let pad = (ks / 2) as isize;
    let mut out = vec![0.0; slot.cout * nn];
    for co in 0..slot.cout {
        let o = &mut out[co * nn..(co + 1) * nn];
        o.fill(b[co]);
        for ci in 0..slot.cin {
            let inp = &input[ci * nn..(ci + 1) * nn];
            for kh in 0..ks {
                let dr = kh as isize - pad;
                for kw in 0..ks {
                    let dc = kw as isize - pad;
                    let wt = w[((co * slot.cin + ci) * ks + kh) * ks + kw];
                    let (c0, c1) = col_range(n, dc);
                    for r in row_range(n, dr) {
                        let src = ((r as isize + dr) as usize) * n;
                        let dst = &mut o[r * n + c0..r * n + c1];
                        let s = &inp[(src as isize + c0 as isize + dc) as usize..][..c1 - c0];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wt * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    w: &[f64],
    dout: &[f64],
    slot: ConvSlot,
    n: usize,
    ks: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let nn = n * n;
    let pad = (ks / 2) as isize;
    for co in 0..slot.cout {
        let g = &dout[co * nn..(co + 1) * nn];
        db[co] += g.iter().sum::<f64>();
        for ci in 0..slot.cin {
            let inp = &input[ci * nn..(ci + 1) * nn];
            for kh in 0..ks {
                let dr = kh as isize - pad;
                for kw in 0..ks {
                    let dc = kw as isize - pad;
                    let wi = ((co * slot.cin + ci) * ks + kh) * ks + kw;
                    let wt = w[wi];
                    let (c0, c1) = col_range(n, dc);
                    let mut acc = 0.0;
                    for r in row_range(n, dr) {
                        let src = ((r as isize + dr) as usize) * n;
                        let start = (src as isize + c0 as isize + dc) as usize;
                        let gr = &g[r * n + c0..r * n + c1];
                        let s = &inp[start..start + (c1 - c0)];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(d) = din.as_deref_mut() {
                            let d = &mut d[ci * nn + start..ci * nn + start + (c1 - c0)];
                            for (x, &gv) in d.iter_mut().zip(gr) {
                                *x += wt * gv;
                            }
                        }
                    }
                    dw[wi] += acc;
                }
            }
        }
    }
}

fn row_range(n: usize, dr: isize) -> std::ops::Range<usize> {
    let lo = (-dr).max(0) as usize;
    let hi = (n as isize - dr.max(0)).max(0) as usize;
    lo.min(n)..hi.min(n)
}

fn col_range(n: usize, dc: isize) -> (usize, usize) {
    let r = row_range(n, dc);
    (r.start, r.end.max(r.start))
}

/// Activations kept for the backward pass.
struct Forward {
    input: Vec<f64>,
    embed: Vec<f64>,
    u: Vec<f64>,
    /// Per hidden layer: conv output, FiLM coefficients, activation output.
    pre: Vec<Vec<f64>>,
    film: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl DenoiserModel {
    /// All parameters zero: the model returns the mean of its inputs.
    pub fn zeros(arch: DenoiserArch, trained_steps: usize) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            params: vec![0.0; arch.param_count()],
            arch,
            trained_steps,
        })
    }

    /// He-scaled random convolutions, a small residual head, a random
    /// embedding map, zero FiLM blocks and a zero skip path.
    pub fn random(arch: DenoiserArch, trained_steps: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch, trained_steps)?;
        let layout = arch.layout();
        let mut rng = rng_from_seed(derive_seed(seed, stream::MODEL_INIT, 0));
        let ks2 = arch.kernel_size * arch.kernel_size;
        for (l, slot) in layout.convs.iter().enumerate() {
            let fan_in = (slot.cin * ks2) as f64;
            let head = if l + 1 == arch.layers { 0.01 } else { 1.0 };
            let scale = head * (2.0 / fan_in).sqrt();
            let count = slot.cout * slot.cin * ks2;
            let draws = standard_normal_vec(&mut rng, count);
            for (p, d) in model.params[slot.w..slot.w + count].iter_mut().zip(draws) {
                *p = scale * d;
            }
        }
        let e = arch.embed_dim;
        let draws = standard_normal_vec(&mut rng, e * e);
        let scale = 1.0 / (e as f64).sqrt();
        for (p, d) in model.params[layout.embed_w..layout.embed_w + e * e].iter_mut().zip(draws) {
            *p = scale * d;
        }
        Ok(model)
    }

    pub fn from_params(arch: DenoiserArch, trained_steps: usize, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_dim("parameter count", arch.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            arch,
            params,
            trained_steps,
        })
    }

    pub fn k(&self) -> usize {
        self.arch.k()
    }

    /// Grid index for a continuous time `t ∈ (0, 1]`, at least 1.
    pub fn time_index(&self, t: f64) -> usize {
        ((t * self.trained_steps as f64).round() as usize).max(1)
    }

    fn check_inputs(&self, x_t: &ImageGrid, inits: &[ImageGrid]) -> Result<()> {
        check_dim("init count", self.k(), inits.len())?;
        for init in inits {
            x_t.same_geometry(init)?;
        }
        Ok(())
    }

    fn stack(x_t: &ImageGrid, inits: &[ImageGrid]) -> Vec<f64> {
        let mut input = x_t.inner_values();
        for init in inits {
            input.extend(init.inner_values());
        }
        input
    }

    fn forward(&self, input: Vec<f64>, t_index: usize, n: usize) -> Result<Forward> {
        let arch = &self.arch;
        let layout = arch.layout();
        let (h, e, ks, nn) = (arch.hidden_channels, arch.embed_dim, arch.kernel_size, n * n);
        let p = &self.params;
        let embed = sinusoidal_embedding(t_index, e)?;
        let u: Vec<f64> = (0..e)
            .map(|i| {
                p[layout.embed_b + i]
                    + (0..e).map(|j| p[layout.embed_w + i * e + j] * embed[j]).sum::<f64>()
            })
            .collect();
        let mut pre = Vec::with_capacity(arch.layers - 1);
        let mut film = Vec::with_capacity(arch.layers - 1);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(arch.layers - 1);
        for l in 0..arch.layers - 1 {
            let slot = layout.convs[l];
            let src = if l == 0 { &input } else { &post[l - 1] };
            let z = conv_forward(src, &p[slot.w..], &p[slot.b..], slot, n, ks);
            let f0 = layout.films[l];
            let gd: Vec<f64> = (0..2 * h)
                .map(|r| p[f0 + 2 * h * e + r] + (0..e).map(|j| p[f0 + r * e + j] * u[j]).sum::<f64>())
                .collect();
            let mut a = z.clone();
            for c in 0..h {
                let (g, d) = (gd[c], gd[h + c]);
                for v in &mut a[c * nn..(c + 1) * nn] {
                    let pre_act = *v * (1.0 + g) + d;
                    *v = pre_act * sigmoid(pre_act);
                }
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            pre.push(z);
            film.push(gd);
            post.push(a);
        }
        let last = layout.convs[arch.layers - 1];
        let mut residual = conv_forward(&post[arch.layers - 2], &p[last.w..], &p[last.b..], last, n, ks);
        let skip = conv_forward(&input, &p[layout.skip.w..], &p[layout.skip.b..], layout.skip, n, ks);
        for (r, s) in residual.iter_mut().zip(skip) {
            *r += s;
        }
        let c = arch.input_channels as f64;
        let output: Vec<f64> = (0..nn)
            .map(|i| (0..arch.input_channels).map(|ch| input[ch * nn + i]).sum::<f64>() / c - residual[i])
            .collect();
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: arch.layers - 1 });
        }
        Ok(Forward {
            input,
            embed,
            u,
            pre,
            film,
            post,
            output,
        })
    }

    /// Adds the gradient of `Σ dout·output` to `grad`.
    fn backward(&self, fw: &Forward, dout: &[f64], n: usize, grad: &mut [f64]) {
        let arch = &self.arch;
        let layout = arch.layout();
        let (h, e, ks, nn) = (arch.hidden_channels, arch.embed_dim, arch.kernel_size, n * n);
        let p = &self.params;
        let dres: Vec<f64> = dout.iter().map(|g| -g).collect();
        let last = layout.convs[arch.layers - 1];
        let mut dpost = vec![0.0; h * nn];
        {
            let (dw, db) = split_wb(grad, layout.skip);
            conv_backward(&fw.input, &p[layout.skip.w..], &dres, layout.skip, n, ks, dw, db, None);
        }
        {
            let (dw, db) = split_wb(grad, last);
            conv_backward(&fw.post[arch.layers - 2], &p[last.w..], &dres, last, n, ks, dw, db, Some(&mut dpost));
        }
        let mut du = vec![0.0; e];
        for l in (0..arch.layers - 1).rev() {
            let gd = &fw.film[l];
            let z = &fw.pre[l];
            let mut dz = vec![0.0; h * nn];
            let mut dgd = vec![0.0; 2 * h];
            for c in 0..h {
                let (g, d) = (gd[c], gd[h + c]);
                let (mut sg, mut sd) = (0.0, 0.0);
                for i in c * nn..(c + 1) * nn {
                    let a = z[i] * (1.0 + g) + d;
                    let s = sigmoid(a);
                    let da = dpost[i] * s * (1.0 + a * (1.0 - s));
                    sg += da * z[i];
                    sd += da;
                    dz[i] = da * (1.0 + g);
                }
                dgd[c] = sg;
                dgd[h + c] = sd;
            }
            let f0 = layout.films[l];
            for r in 0..2 * h {
                grad[f0 + 2 * h * e + r] += dgd[r];
                for j in 0..e {
                    grad[f0 + r * e + j] += dgd[r] * fw.u[j];
                    du[j] += dgd[r] * p[f0 + r * e + j];
                }
            }
            let slot = layout.convs[l];
            let src = if l == 0 { &fw.input } else { &fw.post[l - 1] };
            let mut dsrc = if l == 0 { None } else { Some(vec![0.0; slot.cin * nn]) };
            {
                let (dw, db) = split_wb(grad, slot);
                conv_backward(src, &p[slot.w..], &dz, slot, n, ks, dw, db, dsrc.as_deref_mut());
            }
            if let Some(d) = dsrc {
                dpost = d;
            }
        }
        for i in 0..e {
            grad[layout.embed_b + i] += du[i];
            for j in 0..e {
                grad[layout.embed_w + i * e + j] += du[i] * fw.embed[j];
            }
        }
    }

    /// `mean(x_t, inits) − residual`, on the support window of `x_t`.
    pub fn denoise(&self, x_t: &ImageGrid, t_index: usize, inits: &[ImageGrid]) -> Result<ImageGrid> {
        self.check_inputs(x_t, inits)?;
        let n = x_t.inner_dim();
        let fw = self.forward(Self::stack(x_t, inits), t_index, n)?;
        Ok(window_to_frame(x_t, &fw.output))
    }
}

fn split_wb(grad: &mut [f64], slot: ConvSlot) -> (&mut [f64], &mut [f64]) {
    let (head, tail) = grad.split_at_mut(slot.b);
    (&mut head[slot.w..], &mut tail[..slot.cout])
}

fn window_to_frame(template: &ImageGrid, window: &[f64]) -> ImageGrid {
    let (n, p) = (template.inner_dim(), template.padded_dim());
    let mut frame = vec![0.0; p * p];
    for r in 0..n {
        frame[r * p..r * p + n].copy_from_slice(&window[r * n..(r + 1) * n]);
    }
    template.with_values(frame)
}

/// One training example: a degraded iterate with its clean target.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSample {
    pub t: f64,
    pub x_t: ImageGrid,
    pub target: ImageGrid,
    pub inits: Vec<ImageGrid>,
    pub epsilon_seed: u64,
}

/// `x_t = (1 − t)·target + t·mean(inits) + t·σ_t·ε`, with `ε` standard
/// normal on the support. `t = 0` is accepted as a test hook.
pub fn degrade(
    target: &ImageGrid,
    inits: &[ImageGrid],
    t: f64,
    sigma_t: f64,
    seed: u64,
) -> Result<DegradationSample> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("t", format!("{t} not in [0, 1]")));
    }
    if !(sigma_t >= 0.0) {
        return Err(invalid("sigma_t", "must be non-negative"));
    }
    if inits.is_empty() {
        return Err(Error::NotEnough {
            what: "init estimates",
            required: 1,
            actual: 0,
        });
    }
    for init in inits {
        target.same_geometry(init)?;
    }
    let z = mean_image(inits)?;
    let eps = support_noise(target.support(), seed);
    let values = target
        .values()
        .iter()
        .zip(z.values())
        .zip(&eps)
        .map(|((&x, &m), &e)| (1.0 - t) * x + t * m + t * sigma_t * e)
        .collect();
    Ok(DegradationSample {
        t,
        x_t: target.with_values(values),
        target: target.clone(),
        inits: inits.to_vec(),
        epsilon_seed: seed,
    })
}

fn sample_loss_grad(model: &DenoiserModel, s: &DegradationSample, grad: &mut [f64]) -> Result<f64> {
    model.check_inputs(&s.x_t, &s.inits)?;
    let n = s.x_t.inner_dim();
    let fw = model.forward(DenoiserModel::stack(&s.x_t, &s.inits), model.time_index(s.t), n)?;
    let target = s.target.inner_values();
    let nn = (n * n) as f64;
    let diff: Vec<f64> = fw.output.iter().zip(&target).map(|(o, t)| o - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / nn;
    let dout: Vec<f64> = diff.iter().map(|d| 2.0 * d / nn).collect();
    model.backward(&fw, &dout, n, grad);
    Ok(loss)
}

/// Mean over the batch of `‖denoise(x_t) − target‖² / N²` and its gradient.
pub fn loss_and_grad(model: &DenoiserModel, batch: &[DegradationSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::NotEnough {
            what: "batch samples",
            required: 1,
            actual: 0,
        });
    }
    let count = model.params.len();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = vec![0.0; count];
            sample_loss_grad(model, s, &mut g).map(|l| (l, g))
        })
        .collect::<Result<_>>()?;
    // fixed reduction order keeps seeded runs reproducible
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; count];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Loss only, for validation.
pub fn loss(model: &DenoiserModel, batch: &[DegradationSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::NotEnough {
            what: "batch samples",
            required: 1,
            actual: 0,
        });
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let out = model.denoise(&s.x_t, model.time_index(s.t), &s.inits)?;
            let n = out.inner_dim();
            let d = out.inner_values();
            Ok(d.iter().zip(s.target.inner_values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (n * n) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamW {
    pub fn new(param_count: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Linear warmup over the first `warmup` steps, then cosine decay to 0.
pub fn learning_rate(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// A clean image with the `k` init estimates produced from its measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRecord {
    pub id: String,
    pub target: ImageGrid,
    pub inits: Vec<ImageGrid>,
}

impl TrainingRecord {
    /// Builds a record with the target turned to the orientation of the
    /// estimates. The estimates may have converged to the 180° twin of the
    /// target, which has the same measurements; training against the other
    /// orientation would ask the network to undo an ambiguity it cannot see.
    pub fn aligned(id: impl Into<String>, target: ImageGrid, inits: Vec<ImageGrid>) -> Result<Self> {
        let mean = mean_image(&inits)?;
        target.same_geometry(&mean)?;
        let twin = apply_transform(&target, &EquivariantTransform::new(TransformKind::Rot180, target.inner_dim()));
        let target = if twin.distance(&mean) < target.distance(&mean) { twin } else { target };
        Ok(Self {
            id: id.into(),
            target,
            inits,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: DenoiserArch,
    pub trained_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Noise scale per grid index `0..=trained_steps`.
    pub sigma: Vec<f64>,
    /// Fraction of records held out, chosen by hashing the record id.
    pub validation_fraction: f64,
    /// Fixed degradations drawn per validation record.
    pub validation_draws: usize,
}

impl TrainConfig {
    pub fn new(k: usize) -> Self {
        let trained_steps = 32;
        Self {
            arch: DenoiserArch::new(k),
            trained_steps,
            epochs: 20,
            batch_size: 16,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            warmup_fraction: 0.05,
            seed: 0,
            sigma: vec![1.0; trained_steps + 1],
            validation_fraction: 0.1,
            validation_draws: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.trained_steps == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs", "trained_steps, epochs and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(invalid("learning_rate", "rates must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("warmup_fraction", "fractions must lie in [0, 1)"));
        }
        check_dim("sigma schedule length", self.trained_steps + 1, self.sigma.len())?;
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    /// Entry 0 is the untrained model.
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Whether a record id falls in the held-out split.
pub fn is_validation(id: &str, fraction: f64) -> bool {
    (fnv1a(id) % 10_000) as f64 / 10_000.0 < fraction
}

fn sample_for(
    record: &TrainingRecord,
    cfg: &TrainConfig,
    t_index: usize,
    eps_seed: u64,
) -> Result<DegradationSample> {
    let t = t_index as f64 / cfg.trained_steps as f64;
    degrade(&record.target, &record.inits, t, cfg.sigma[t_index], eps_seed)
}

/// Trains from `cfg.seed` and returns the parameters with the lowest
/// validation loss (the untrained model included). When the split leaves no
/// validation record the training records are scored instead.
pub fn train(records: &[TrainingRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::NotEnough {
            what: "training records",
            required: 1,
            actual: 0,
        });
    }
    for r in records {
        check_dim("init count", cfg.arch.k(), r.inits.len())?;
    }
    let (mut val, mut tr): (Vec<&TrainingRecord>, Vec<&TrainingRecord>) =
        records.iter().partition(|r| is_validation(&r.id, cfg.validation_fraction));
    if tr.is_empty() {
        std::mem::swap(&mut val, &mut tr);
    }
    let scored = if val.is_empty() { &tr } else { &val };
    let val_batch: Vec<DegradationSample> = scored
        .iter()
        .enumerate()
        .flat_map(|(j, r)| (0..cfg.validation_draws).map(move |d| (j, d, r)))
        .map(|(j, d, r)| {
            let seed = derive_seed(cfg.seed, stream::VALIDATION, (j * cfg.validation_draws + d) as u64);
            let t_index = rng_from_seed(seed).random_range(1..=cfg.trained_steps);
            sample_for(r, cfg, t_index, seed)
        })
        .collect::<Result<_>>()?;

    let mut model = DenoiserModel::random(cfg.arch, cfg.trained_steps, cfg.seed)?;
    let mut opt = AdamW::new(model.params.len(), cfg.weight_decay);
    let steps_per_epoch = tr.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = (cfg.warmup_fraction * total as f64).round() as usize;

    let initial = loss(&model, &val_batch)?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: f64::NAN,
        validation_loss: initial,
    }];
    let mut best = (initial, 0, model.params.clone());
    let mut step = 0;
    let mut drawn: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..tr.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, stream::TRAIN_BATCH, epoch as u64)));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<DegradationSample> = chunk
                .iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, stream::TRAIN_EPSILON, drawn);
                    drawn += 1;
                    let t_index = rng_from_seed(seed ^ 0x5eed).random_range(1..=cfg.trained_steps);
                    sample_for(tr[i], cfg, t_index, seed)
                })
                .collect::<Result<_>>()?;
            let (l, g) = loss_and_grad(&model, &batch)?;
            epoch_loss += l * chunk.len() as f64;
            opt.update(&mut model.params, &g, learning_rate(cfg.learning_rate, step, total, warmup));
            step += 1;
        }
        let validation_loss = loss(&model, &val_batch)?;
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / tr.len() as f64,
            validation_loss,
        });
        if validation_loss < best.0 {
            best = (validation_loss, epoch, model.params.clone());
        }
    }
    model.params = best.2;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.1,
    })
}
