//! Two-hidden-layer MLP noise predictor with hand-written reverse mode.
//!
//! Input is the flattened `z_t` concatenated with a sinusoidal embedding of
//! `t / T`; output is the flattened noise prediction.

use super::ScoreModel;
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::rng::NoiseRng;
use crate::sampler::{forward_noise, LatentState};
use crate::schedule::NoiseSchedule;

/// Number of sinusoidal frequencies; the embedding holds a sine and a cosine
/// per frequency.
pub const TIME_FREQUENCIES: usize = 16;
const EMBED_DIM: usize = 2 * TIME_FREQUENCIES;
/// Frequencies are geometrically spaced from `pi` to `MAX_FREQ_RATIO * pi`.
const MAX_FREQ_RATIO: f64 = 1000.0;

pub const CHECKPOINT_KIND: &str = "tiny-denoiser";

pub fn time_embedding(t: usize, steps: usize) -> [f64; EMBED_DIM] {
    let tau = t as f64 / steps as f64;
    let mut out = [0.0; EMBED_DIM];
    for k in 0..TIME_FREQUENCIES {
        let freq = std::f64::consts::PI
            * MAX_FREQ_RATIO.powf(k as f64 / (TIME_FREQUENCIES - 1) as f64);
        out[k] = (freq * tau).sin();
        out[TIME_FREQUENCIES + k] = (freq * tau).cos();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Checkpoint(format!("unknown activation `{other}`"))),
        }
    }
}

/// Row-major weights `w_k[out][in]` and biases for the three affine layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl DenoiserParams {
    fn zeros(input: usize, h1: usize, h2: usize, output: usize) -> Self {
        Self {
            w1: vec![0.0; h1 * input],
            b1: vec![0.0; h1],
            w2: vec![0.0; h2 * h1],
            b2: vec![0.0; h2],
            w3: vec![0.0; output * h2],
            b3: vec![0.0; output],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            w3: vec![0.0; self.w3.len()],
            b3: vec![0.0; self.b3.len()],
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 6] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
        ]
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &DenoiserParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += a * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    height: usize,
    width: usize,
    hidden: (usize, usize),
    activation: Activation,
    pub params: DenoiserParams,
}

struct ForwardCache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| {
            let row = &w[r * n_in..(r + 1) * n_in];
            bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
        })
        .collect()
}

/// `W^T g` for row-major `W` with `g.len()` rows.
fn affine_transpose(w: &[f64], g: &[f64], n_in: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_in];
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * n_in..(r + 1) * n_in];
        for (o, a) in out.iter_mut().zip(row) {
            *o += gr * a;
        }
    }
    out
}

fn outer_accumulate(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let n_in = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut dw[r * n_in..(r + 1) * n_in];
        for (d, v) in row.iter_mut().zip(x) {
            *d += gr * v;
        }
    }
}

impl TinyDenoiser {
    /// Uniform init with variance `1 / fan_in`; biases start at zero.
    pub fn init(
        height: usize,
        width: usize,
        hidden: (usize, usize),
        activation: Activation,
        rng: &mut NoiseRng,
    ) -> Result<Self> {
        let mut model = Self::zeros(height, width, hidden, activation)?;
        let input = model.input_dim();
        let (h1, h2) = hidden;
        for (w, fan_in) in [
            (&mut model.params.w1, input),
            (&mut model.params.w2, h1),
            (&mut model.params.w3, h2),
        ] {
            let bound = (3.0 / fan_in as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(height: usize, width: usize, hidden: (usize, usize), activation: Activation) -> Result<Self> {
        if height == 0 || width == 0 || hidden.0 == 0 || hidden.1 == 0 {
            return Err(invalid("denoiser dimensions must be positive"));
        }
        let d = height * width;
        Ok(Self {
            height,
            width,
            hidden,
            activation,
            params: DenoiserParams::zeros(d + EMBED_DIM, hidden.0, hidden.1, d),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden(&self) -> (usize, usize) {
        self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width + EMBED_DIM
    }

    fn forward_cached(&self, z: &Image, t: usize, steps: usize) -> Result<ForwardCache> {
        z.check_dims(self.height, self.width)?;
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(z.data());
        input.extend_from_slice(&time_embedding(t, steps));
        let p = &self.params;
        let act = self.activation;
        let h1: Vec<f64> = affine(&p.w1, &p.b1, &input).into_iter().map(|a| act.apply(a)).collect();
        let h2: Vec<f64> = affine(&p.w2, &p.b2, &h1).into_iter().map(|a| act.apply(a)).collect();
        let out = affine(&p.w3, &p.b3, &h2);
        Ok(ForwardCache { input, h1, h2, out })
    }

    /// Accumulates parameter gradients of `<upstream, forward>` into `grads`
    /// and returns the gradient with respect to the image input.
    fn backward_into(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut DenoiserParams) -> Vec<f64> {
        let p = &self.params;
        let act = self.activation;
        let (h1n, h2n) = self.hidden;

        outer_accumulate(&mut grads.w3, upstream, &cache.h2);
        for (g, u) in grads.b3.iter_mut().zip(upstream) {
            *g += u;
        }
        let mut d2 = affine_transpose(&p.w3, upstream, h2n);
        for (d, y) in d2.iter_mut().zip(&cache.h2) {
            *d *= act.derivative_from_output(*y);
        }
        outer_accumulate(&mut grads.w2, &d2, &cache.h1);
        for (g, u) in grads.b2.iter_mut().zip(&d2) {
            *g += u;
        }
        let mut d1 = affine_transpose(&p.w2, &d2, h1n);
        for (d, y) in d1.iter_mut().zip(&cache.h1) {
            *d *= act.derivative_from_output(*y);
        }
        outer_accumulate(&mut grads.w1, &d1, &cache.input);
        for (g, u) in grads.b1.iter_mut().zip(&d1) {
            *g += u;
        }
        let mut dx = affine_transpose(&p.w1, &d1, cache.input.len());
        dx.truncate(self.height * self.width);
        dx
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let d = self.height * self.width;
        let (h1, h2) = self.hidden;
        let mut c = Checkpoint::new(CHECKPOINT_KIND)
            .with_meta("height", self.height)
            .with_meta("width", self.width)
            .with_meta("hidden1", h1)
            .with_meta("hidden2", h2)
            .with_meta("activation", self.activation.name())
            .with_meta("time_frequencies", TIME_FREQUENCIES);
        let p = &self.params;
        c.push_tensor("w1", &[h1, d + EMBED_DIM], &p.w1);
        c.push_tensor("b1", &[h1], &p.b1);
        c.push_tensor("w2", &[h2, h1], &p.w2);
        c.push_tensor("b2", &[h2], &p.b2);
        c.push_tensor("w3", &[d, h2], &p.w3);
        c.push_tensor("b3", &[d], &p.b3);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        if c.meta_usize("time_frequencies")? != TIME_FREQUENCIES {
            return Err(Error::Checkpoint("time embedding size mismatch".into()));
        }
        let (height, width) = (c.meta_usize("height")?, c.meta_usize("width")?);
        let hidden = (c.meta_usize("hidden1")?, c.meta_usize("hidden2")?);
        let activation = Activation::parse(c.meta("activation")?)?;
        let mut m = Self::zeros(height, width, hidden, activation)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let d = height * width;
        let (h1, h2) = hidden;
        m.params.w1 = c.tensor("w1", &[h1, d + EMBED_DIM])?.to_vec();
        m.params.b1 = c.tensor("b1", &[h1])?.to_vec();
        m.params.w2 = c.tensor("w2", &[h2, h1])?.to_vec();
        m.params.b2 = c.tensor("b2", &[h2])?.to_vec();
        m.params.w3 = c.tensor("w3", &[d, h2])?.to_vec();
        m.params.b3 = c.tensor("b3", &[d])?.to_vec();
        Ok(m)
    }
}

pub fn tiny_forward(model: &TinyDenoiser, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image> {
    let cache = model.forward_cached(&state.z, state.t, schedule.steps())?;
    Ok(Image::from_raw(model.height, model.width, cache.out))
}

/// Reverse-mode gradients of `<upstream, tiny_forward(model, state)>`.
pub fn tiny_backward(
    model: &TinyDenoiser,
    state: &LatentState,
    schedule: &NoiseSchedule,
    upstream: &Image,
) -> Result<(DenoiserParams, Image)> {
    upstream.check_dims(model.height, model.width)?;
    let cache = model.forward_cached(&state.z, state.t, schedule.steps())?;
    let mut grads = model.params.zeros_like();
    let dx = model.backward_into(&cache, upstream.data(), &mut grads);
    Ok((grads, Image::from_raw(model.height, model.width, dx)))
}

impl ScoreModel for TinyDenoiser {
    fn predict(&self, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image> {
        tiny_forward(self, state, schedule)
    }

    fn supports_backprop(&self) -> bool {
        true
    }

    fn eps_vjp(&self, state: &LatentState, schedule: &NoiseSchedule, upstream: &Image) -> Result<Image> {
        Ok(tiny_backward(self, state, schedule, upstream)?.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub validation_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.01,
            batch_size: 16,
            momentum: 0.0,
            validation_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mini-batch loss per step.
    pub losses: Vec<f64>,
    pub initial_validation: f64,
    pub final_validation: f64,
}

struct Example {
    z: Image,
    t: usize,
    eps: Image,
}

fn draw_example(dataset: &[Image], schedule: &NoiseSchedule, rng: &mut NoiseRng) -> Example {
    let x0 = &dataset[rng.below(dataset.len())];
    let t = 1 + rng.below(schedule.steps());
    let eps = rng.normal_image(x0.height(), x0.width());
    let z = forward_noise(x0, schedule.alpha_bar(t), &eps);
    Example { z, t, eps }
}

fn validation_loss(model: &TinyDenoiser, batch: &[Example], steps: usize) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        let cache = model.forward_cached(&ex.z, ex.t, steps)?;
        total += cache
            .out
            .iter()
            .zip(ex.eps.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / ex.eps.len() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// Mini-batch SGD (optional heavy-ball momentum) on the noise-prediction MSE.
pub fn train_denoiser(
    model: &TinyDenoiser,
    dataset: &[Image],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut NoiseRng,
) -> Result<(TinyDenoiser, TrainReport)> {
    if dataset.is_empty() {
        return Err(invalid("training dataset is empty"));
    }
    for img in dataset {
        img.check_dims(model.height, model.width)?;
    }
    if config.batch_size == 0 || config.validation_size == 0 {
        return Err(invalid("batch and validation sizes must be positive"));
    }
    if !(config.lr >= 0.0 && config.lr.is_finite()) || !(0.0..1.0).contains(&config.momentum) {
        return Err(invalid("learning rate must be >= 0 and momentum in [0, 1)"));
    }

    let steps = schedule.steps();
    let mut val_rng = rng.fork(0x5641_4c49_4441_5445);
    let validation: Vec<Example> = (0..config.validation_size)
        .map(|_| draw_example(dataset, schedule, &mut val_rng))
        .collect();

    let mut model = model.clone();
    let initial_validation = validation_loss(&model, &validation, steps)?;
    let mut velocity = model.params.zeros_like();
    let mut losses = Vec::with_capacity(config.steps);
    let d = (model.height * model.width) as f64;
    let scale = 1.0 / (d * config.batch_size as f64);

    for step in 0..config.steps {
        let mut grads = model.params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let ex = draw_example(dataset, schedule, rng);
            let cache = model.forward_cached(&ex.z, ex.t, steps)?;
            let upstream: Vec<f64> = cache
                .out
                .iter()
                .zip(ex.eps.data())
                .map(|(a, b)| {
                    loss += (a - b).powi(2) * scale;
                    2.0 * (a - b) * scale
                })
                .collect();
            model.backward_into(&cache, &upstream, &mut grads);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        if config.momentum > 0.0 {
            for ((_, v), (_, g)) in velocity.tensors_mut().into_iter().zip(grads.tensors()) {
                for (vi, gi) in v.iter_mut().zip(g.iter()) {
                    *vi = config.momentum * *vi + gi;
                }
            }
            model.params.add_scaled(-config.lr, &velocity);
        } else {
            model.params.add_scaled(-config.lr, &grads);
        }
        if !model.params.is_finite() {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
    }

    let final_validation = validation_loss(&model, &validation, steps)?;
    Ok((
        model,
        TrainReport {
            losses,
            initial_validation,
            final_validation,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind};

    fn sched() -> NoiseSchedule {
        make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap()
    }

    fn random_model(h: usize, w: usize, act: Activation, seed: u64) -> TinyDenoiser {
        let mut rng = NoiseRng::new(seed);
        let mut m = TinyDenoiser::init(h, w, (6, 5), act, &mut rng).unwrap();
        for (_, b) in m.params.tensors_mut() {
            if b.len() <= 16 {
                for v in b.iter_mut() {
                    *v = 0.3 * rng.normal();
                }
            }
        }
        m
    }

    /// Straight-line reimplementation of the forward pass.
    fn reference_forward(m: &TinyDenoiser, z: &Image, t: usize, steps: usize) -> Vec<f64> {
        let tau = t as f64 / steps as f64;
        let mut x: Vec<f64> = z.data().to_vec();
        let mut s = Vec::new();
        let mut c = Vec::new();
        for k in 0..16 {
            let f = std::f64::consts::PI * 1000f64.powf(k as f64 / 15.0);
            s.push((f * tau).sin());
            c.push((f * tau).cos());
        }
        x.extend(s);
        x.extend(c);
        let p = &m.params;
        let (h1, h2) = m.hidden();
        let act = |v: f64| match m.activation() {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        };
        let mut a1 = vec![0.0; h1];
        for r in 0..h1 {
            let mut acc = p.b1[r];
            for k in 0..x.len() {
                acc += p.w1[r * x.len() + k] * x[k];
            }
            a1[r] = act(acc);
        }
        let mut a2 = vec![0.0; h2];
        for r in 0..h2 {
            let mut acc = p.b2[r];
            for k in 0..h1 {
                acc += p.w2[r * h1 + k] * a1[k];
            }
            a2[r] = act(acc);
        }
        let d = z.len();
        let mut out = vec![0.0; d];
        for r in 0..d {
            let mut acc = p.b3[r];
            for k in 0..h2 {
                acc += p.w3[r * h2 + k] * a2[k];
            }
            out[r] = acc;
        }
        out
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = TinyDenoiser::zeros(3, 3, (4, 4), Activation::Tanh).unwrap();
        let st = LatentState::new(Image::filled(3, 3, 0.7), 5);
        assert!(tiny_forward(&m, &st, &sched()).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_neuron_by_hand() {
        let mut m = TinyDenoiser::zeros(1, 1, (1, 1), Activation::Tanh).unwrap();
        m.params.w1[0] = 0.5;
        m.params.b1[0] = 0.1;
        m.params.w2[0] = 2.0;
        m.params.w3[0] = 3.0;
        m.params.b3[0] = -1.0;
        let st = LatentState::new(Image::filled(1, 1, 0.8), 7);
        let got = tiny_forward(&m, &st, &sched()).unwrap().data()[0];
        let want = 3.0 * (2.0 * (0.5f64 * 0.8 + 0.1).tanh()).tanh() - 1.0;
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_reference() {
        let s = sched();
        let m = random_model(3, 4, Activation::Tanh, 3);
        let mut rng = NoiseRng::new(4);
        for t in [1, 37, 100] {
            let z = rng.normal_image(3, 4);
            let got = tiny_forward(&m, &LatentState::new(z.clone(), t), &s).unwrap();
            let want = reference_forward(&m, &z, t, 100);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let m = random_model(3, 3, Activation::Tanh, 1);
        let st = LatentState::new(Image::zeros(3, 4), 3);
        assert!(tiny_forward(&m, &st, &sched()).is_err());
        let st = LatentState::new(Image::zeros(3, 3), 3);
        assert!(tiny_backward(&m, &st, &sched(), &Image::zeros(2, 2)).is_err());
    }

    #[test]
    fn linear_network_input_gradient_is_weight_chain() {
        let s = sched();
        let m = random_model(2, 2, Activation::Identity, 5);
        let mut rng = NoiseRng::new(6);
        let st = LatentState::new(rng.normal_image(2, 2), 20);
        let u = rng.normal_image(2, 2);
        let (_, dx) = tiny_backward(&m, &st, &s, &u).unwrap();
        // (W3 W2 W1)^T u, restricted to the image inputs
        let (h1, h2) = m.hidden();
        let n_in = m.input_dim();
        let p = &m.params;
        for i in 0..4 {
            let mut acc = 0.0;
            for o in 0..4 {
                for b in 0..h2 {
                    for a in 0..h1 {
                        acc += u.data()[o] * p.w3[o * h2 + b] * p.w2[b * h1 + a] * p.w1[a * n_in + i];
                    }
                }
            }
            assert!((acc - dx.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = sched();
        let m = random_model(2, 3, Activation::Tanh, 7);
        let st = LatentState::new(NoiseRng::new(1).normal_image(2, 3), 9);
        let (g, dx) = tiny_backward(&m, &st, &s, &Image::zeros(2, 3)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = sched();
        let m = random_model(2, 3, Activation::Tanh, 8);
        let mut rng = NoiseRng::new(9);
        let st = LatentState::new(rng.normal_image(2, 3), 33);
        let u = rng.normal_image(2, 3);
        let (grads, dx) = tiny_backward(&m, &st, &s, &u).unwrap();
        let objective = |mm: &TinyDenoiser, z: &Image| {
            tiny_forward(mm, &LatentState::new(z.clone(), 33), &s).unwrap().dot(&u)
        };
        let h = 1e-6;
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-5 * an.abs().max(1e-3);
        for k in 0..6 {
            let mut p = st.z.clone();
            p.data_mut()[k] += h;
            let mut q = st.z.clone();
            q.data_mut()[k] -= h;
            let fd = (objective(&m, &p) - objective(&m, &q)) / (2.0 * h);
            assert!(close(fd, dx.data()[k]), "input {k}: {fd} vs {}", dx.data()[k]);
        }
        for (ti, (name, g)) in grads.tensors().iter().enumerate() {
            for k in 0..g.len() {
                let mut mp = m.clone();
                mp.params.tensors_mut()[ti].1[k] += h;
                let mut mq = m.clone();
                mq.params.tensors_mut()[ti].1[k] -= h;
                let fd = (objective(&mp, &st.z) - objective(&mq, &st.z)) / (2.0 * h);
                assert!(close(fd, g[k]), "{name}[{k}]: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = sched();
        let m = random_model(2, 2, Activation::Tanh, 10);
        let data = vec![Image::filled(2, 2, 0.5)];
        let cfg = TrainConfig { steps: 20, lr: 0.0, ..TrainConfig::default() };
        let (trained, report) = train_denoiser(&m, &data, &s, &cfg, &mut NoiseRng::new(1)).unwrap();
        assert_eq!(trained.params, m.params);
        assert_eq!(report.losses.len(), 20);
    }

    #[test]
    fn training_is_deterministic_and_validates() {
        let s = sched();
        let m = random_model(2, 2, Activation::Tanh, 11);
        let data = vec![Image::filled(2, 2, 0.5)];
        let cfg = TrainConfig { steps: 30, lr: 0.01, ..TrainConfig::default() };
        let a = train_denoiser(&m, &data, &s, &cfg, &mut NoiseRng::new(3)).unwrap();
        let b = train_denoiser(&m, &data, &s, &cfg, &mut NoiseRng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(train_denoiser(&m, &[], &s, &cfg, &mut NoiseRng::new(3)).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let s = sched();
        let m = random_model(2, 2, Activation::Identity, 12);
        let data = vec![Image::filled(2, 2, 5.0)];
        let cfg = TrainConfig { steps: 500, lr: 1e3, ..TrainConfig::default() };
        let err = train_denoiser(&m, &data, &s, &cfg, &mut NoiseRng::new(3)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(3, 2, Activation::Tanh, 13);
        let bytes = m.to_checkpoint().to_bytes();
        let back = TinyDenoiser::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }
}
