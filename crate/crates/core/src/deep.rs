//! Moments of learned per-pixel features: a two-layer 3x3 convolution stack
//! `1 -> C -> C` whose output channels are pooled by a [`MomentBasis`].

use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::moments::{FeatureVector, MomentBasis};
use crate::rng::NoiseRng;

pub const CHECKPOINT_KIND: &str = "pixel-feature-net";
const TAPS: usize = 9;
const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Periodic boundary; makes the stack exactly shift-equivariant.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelActivation {
    /// `ln(1 + e^x) - ln 2`, so that the activation maps 0 to 0.
    Softplus,
    Identity,
}

impl PixelActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            PixelActivation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p() - LN2,
            PixelActivation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            PixelActivation::Softplus => 1.0 / (1.0 + (-x).exp()),
            PixelActivation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PixelActivation::Softplus => "softplus",
            PixelActivation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureNet {
    channels: usize,
    pub activation: PixelActivation,
    pub padding: Padding,
    /// `[C][1][3][3]`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `[C][C][3][3]`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Feature maps, one `H * W` plane per channel.
type Planes = Vec<Vec<f64>>;

struct Geometry {
    height: usize,
    width: usize,
    padding: Padding,
}

impl Geometry {
    /// Source index for output pixel `(r, c)` and tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, r: usize, c: usize, ky: usize, kx: usize) -> Option<usize> {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut sr = r as isize + ky as isize - 1;
        let mut sc = c as isize + kx as isize - 1;
        match self.padding {
            Padding::Zero => {
                if sr < 0 || sr >= h || sc < 0 || sc >= w {
                    return None;
                }
            }
            Padding::Wrap => {
                sr = sr.rem_euclid(h);
                sc = sc.rem_euclid(w);
            }
        }
        Some(sr as usize * self.width + sc as usize)
    }
}

/// 3x3 cross-correlation, `weights[(o * n_in + i) * 9 + ky * 3 + kx]`.
fn conv3x3(geo: &Geometry, input: &Planes, weights: &[f64], bias: &[f64]) -> Planes {
    let n_in = input.len();
    let npix = geo.height * geo.width;
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let mut out = vec![b; npix];
            for (i, plane) in input.iter().enumerate() {
                let k = &weights[(o * n_in + i) * TAPS..(o * n_in + i + 1) * TAPS];
                for r in 0..geo.height {
                    for c in 0..geo.width {
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                if let Some(s) = geo.source(r, c, ky, kx) {
                                    acc += k[ky * 3 + kx] * plane[s];
                                }
                            }
                        }
                        out[r * geo.width + c] += acc;
                    }
                }
            }
            out
        })
        .collect()
}

/// Gradient of a [`conv3x3`] with respect to its input.
fn conv3x3_input_grad(geo: &Geometry, grad_out: &Planes, weights: &[f64], n_in: usize) -> Planes {
    let npix = geo.height * geo.width;
    let mut grad_in = vec![vec![0.0; npix]; n_in];
    for (o, g) in grad_out.iter().enumerate() {
        for (i, gi) in grad_in.iter_mut().enumerate() {
            let k = &weights[(o * n_in + i) * TAPS..(o * n_in + i + 1) * TAPS];
            for r in 0..geo.height {
                for c in 0..geo.width {
                    let go = g[r * geo.width + c];
                    if go == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        for kx in 0..3 {
                            if let Some(s) = geo.source(r, c, ky, kx) {
                                gi[s] += k[ky * 3 + kx] * go;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

struct Activations {
    pre1: Planes,
    out: Planes,
}

impl PixelFeatureNet {
    pub fn zeros(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("pixel feature net needs at least one channel"));
        }
        Ok(Self {
            channels,
            activation: PixelActivation::Softplus,
            padding: Padding::Zero,
            w1: vec![0.0; channels * TAPS],
            b1: vec![0.0; channels],
            w2: vec![0.0; channels * channels * TAPS],
            b2: vec![0.0; channels],
        })
    }

    /// Single channel, centre taps 1, linear activation: `g = img`.
    pub fn identity() -> Self {
        let mut net = Self::zeros(1).expect("one channel");
        net.activation = PixelActivation::Identity;
        net.w1[4] = 1.0;
        net.w2[4] = 1.0;
        net
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn geometry(&self, img: &Image) -> Geometry {
        Geometry {
            height: img.height(),
            width: img.width(),
            padding: self.padding,
        }
    }

    fn run(&self, img: &Image) -> Activations {
        let geo = self.geometry(img);
        let input = vec![img.data().to_vec()];
        let pre1 = conv3x3(&geo, &input, &self.w1, &self.b1);
        let hidden: Planes = pre1
            .iter()
            .map(|p| p.iter().map(|&x| self.activation.apply(x)).collect())
            .collect();
        let out = conv3x3(&geo, &hidden, &self.w2, &self.b2);
        Activations { pre1, out }
    }

    /// Output feature maps `g_c`, one image per channel.
    pub fn feature_maps(&self, img: &Image) -> Vec<Image> {
        self.run(img)
            .out
            .into_iter()
            .map(|p| Image::from_raw(img.height(), img.width(), p))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = self.channels;
        let mut ck = Checkpoint::new(CHECKPOINT_KIND)
            .with_meta("channels", c)
            .with_meta("activation", self.activation.name())
            .with_meta(
                "padding",
                match self.padding {
                    Padding::Zero => "zero",
                    Padding::Wrap => "wrap",
                },
            );
        ck.push_tensor("w1", &[c, 1, 3, 3], &self.w1);
        ck.push_tensor("b1", &[c], &self.b1);
        ck.push_tensor("w2", &[c, c, 3, 3], &self.w2);
        ck.push_tensor("b2", &[c], &self.b2);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let c = ck.meta_usize("channels")?;
        let mut net = Self::zeros(c).map_err(|e| Error::Checkpoint(e.to_string()))?;
        net.activation = match ck.meta("activation")? {
            "softplus" => PixelActivation::Softplus,
            "identity" => PixelActivation::Identity,
            other => return Err(Error::Checkpoint(format!("unknown activation `{other}`"))),
        };
        net.padding = match ck.meta("padding")? {
            "zero" => Padding::Zero,
            "wrap" => Padding::Wrap,
            other => return Err(Error::Checkpoint(format!("unknown padding `{other}`"))),
        };
        net.w1 = ck.tensor("w1", &[c, 1, 3, 3])?.to_vec();
        net.b1 = ck.tensor("b1", &[c])?.to_vec();
        net.w2 = ck.tensor("w2", &[c, c, 3, 3])?.to_vec();
        net.b2 = ck.tensor("b2", &[c])?.to_vec();
        Ok(net)
    }
}

/// Weights uniform on `[-sqrt(3 / fan_in), sqrt(3 / fan_in)]` (variance
/// `1 / fan_in`, fan-in 9 and `9 C`), biases zero.
pub fn init_pixel_net(channels: usize, seed: u64) -> Result<PixelFeatureNet> {
    let mut net = PixelFeatureNet::zeros(channels)?;
    let mut rng = NoiseRng::new(seed);
    let b1 = (3.0 / TAPS as f64).sqrt();
    for v in net.w1.iter_mut() {
        *v = rng.uniform_range(-b1, b1);
    }
    let b2 = (3.0 / (TAPS * channels) as f64).sqrt();
    for v in net.w2.iter_mut() {
        *v = rng.uniform_range(-b2, b2);
    }
    Ok(net)
}

pub fn deep_moments_descriptor(net: &PixelFeatureNet, basis: &MomentBasis) -> String {
    format!("deep-moments/c{}/{}", net.channels, basis.signature())
}

/// Entry `c * K + k` is `w * sum basis_k * g_c`.
pub fn deep_moments(net: &PixelFeatureNet, basis: &MomentBasis, img: &Image) -> Result<FeatureVector> {
    basis.check_image(img)?;
    let acts = net.run(img);
    let values = acts.out.iter().flat_map(|g| basis.project(g)).collect();
    Ok(FeatureVector::new(values, deep_moments_descriptor(net, basis)))
}

pub fn deep_moments_vjp(
    net: &PixelFeatureNet,
    basis: &MomentBasis,
    img: &Image,
    cotangent: &[f64],
) -> Result<Image> {
    basis.check_image(img)?;
    let k = basis.len();
    if cotangent.len() != net.channels * k {
        return Err(Error::LengthMismatch {
            expected: net.channels * k,
            got: cotangent.len(),
        });
    }
    let geo = net.geometry(img);
    let npix = img.len();
    let grad_out: Planes = cotangent
        .chunks(k)
        .map(|ct| {
            let mut g = vec![0.0; npix];
            basis.accumulate_adjoint(ct, &mut g);
            g
        })
        .collect();
    let acts = net.run(img);
    let mut grad_hidden = conv3x3_input_grad(&geo, &grad_out, &net.w2, net.channels);
    for (gh, pre) in grad_hidden.iter_mut().zip(&acts.pre1) {
        for (g, &x) in gh.iter_mut().zip(pre) {
            *g *= net.activation.derivative(x);
        }
    }
    let grad_in = conv3x3_input_grad(&geo, &grad_hidden, &net.w1, 1);
    Ok(Image::from_raw(img.height(), img.width(), grad_in.into_iter().next().unwrap()))
}
