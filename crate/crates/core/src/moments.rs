//! Geometric moments of images and their exact adjoints.
//!
//! Pixel `(i, j)` of an `H x W` image sits at the centered coordinate
//! `x = (j + 0.5) / W - 0.5`, `y = (i + 0.5) / H - 0.5`. The moment of order
//! `(p, q)` is the Riemann sum `M_pq = w * sum x^p y^q f(x, y)` with the uniform
//! weight `w = 1 / (H * W)`, so `M_00` is the pixel mean.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

pub type Order = (u32, u32);

/// All orders with `p + q <= max_total`, grouped by total degree.
pub fn orders_up_to(max_total: u32) -> Vec<Order> {
    let mut out = Vec::new();
    for total in 0..=max_total {
        for p in (0..=total).rev() {
            out.push((p, total - p));
        }
    }
    out
}

/// Default order set: every `(p, q)` with `p + q <= 6` (28 features).
pub fn default_orders() -> Vec<Order> {
    orders_up_to(6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub descriptor: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, descriptor: impl Into<String>) -> Self {
        Self {
            values,
            descriptor: descriptor.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_compatible(&self, other: &FeatureVector) -> Result<()> {
        if self.descriptor != other.descriptor {
            return Err(Error::DescriptorMismatch {
                left: self.descriptor.clone(),
                right: other.descriptor.clone(),
            });
        }
        if self.values.len() != other.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(())
    }
}

/// Centered pixel coordinates along an axis of `n` pixels.
pub fn axis_coords(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64 - 0.5).collect()
}

#[derive(Debug, Clone)]
pub struct MomentBasis {
    orders: Vec<Order>,
    height: usize,
    width: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    basis_images: Vec<Vec<f64>>,
    weight: f64,
    signature: String,
}

impl MomentBasis {
    pub fn new(orders: &[Order], height: usize, width: usize) -> Result<Self> {
        if orders.is_empty() {
            return Err(invalid("moment order list is empty"));
        }
        if height == 0 || width == 0 {
            return Err(invalid(format!(
                "basis dimensions must be positive, got {height}x{width}"
            )));
        }
        let mut seen = HashSet::new();
        for o in orders {
            if !seen.insert(*o) {
                return Err(invalid(format!("duplicate moment order ({}, {})", o.0, o.1)));
            }
        }
        let xs = axis_coords(width);
        let ys = axis_coords(height);
        let basis_images = orders
            .iter()
            .map(|&(p, q)| {
                let mut b = Vec::with_capacity(height * width);
                for y in &ys {
                    let yq = y.powi(q as i32);
                    for x in &xs {
                        b.push(x.powi(p as i32) * yq);
                    }
                }
                b
            })
            .collect();

        let mut signature = format!("{height}x{width}:");
        let top = max_total(orders);
        if orders == orders_up_to(top).as_slice() {
            let _ = write!(signature, "deg<={top}");
        } else {
            for (k, (p, q)) in orders.iter().enumerate() {
                if k > 0 {
                    signature.push(',');
                }
                let _ = write!(signature, "{p}.{q}");
            }
        }

        Ok(Self {
            orders: orders.to_vec(),
            height,
            width,
            xs,
            ys,
            basis_images,
            weight: 1.0 / (height * width) as f64,
            signature,
        })
    }

    pub fn with_default_orders(height: usize, width: usize) -> Result<Self> {
        Self::new(&default_orders(), height, width)
    }

    pub fn orders(&self) -> &[Order] {
        &self.orders
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn basis_image(&self, k: usize) -> &[f64] {
        &self.basis_images[k]
    }

    pub fn quadrature_weight(&self) -> f64 {
        self.weight
    }

    /// Short identifier of the grid size and order set.
    pub fn signature(&self) -> &str {
        &self.signature
    }

    pub fn check_image(&self, img: &Image) -> Result<()> {
        img.check_dims(self.height, self.width)
    }

    /// Raw moment values for a plain pixel slice of the basis size.
    pub(crate) fn project(&self, pixels: &[f64]) -> Vec<f64> {
        self.basis_images
            .iter()
            .map(|b| self.weight * b.iter().zip(pixels).map(|(u, v)| u * v).sum::<f64>())
            .collect()
    }

    /// `sum_k r_k * w * basis_k`, accumulated into `out`.
    pub(crate) fn accumulate_adjoint(&self, residual: &[f64], out: &mut [f64]) {
        for (b, &r) in self.basis_images.iter().zip(residual) {
            if r == 0.0 {
                continue;
            }
            let c = r * self.weight;
            for (o, u) in out.iter_mut().zip(b) {
                *o += c * u;
            }
        }
    }
}

fn max_total(orders: &[Order]) -> u32 {
    orders.iter().map(|(p, q)| p + q).max().unwrap_or(0)
}

pub fn moments(img: &Image, basis: &MomentBasis) -> Result<FeatureVector> {
    basis.check_image(img)?;
    let values = basis.project(img.data());
    Ok(FeatureVector::new(values, format!("moments/{}", basis.signature())))
}

/// Transpose of the moment map: `J^T r = sum_k r_k * w * basis_k`.
pub fn moments_adjoint(residual: &[f64], basis: &MomentBasis) -> Result<Image> {
    if residual.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            got: residual.len(),
        });
    }
    let mut out = vec![0.0; basis.height * basis.width];
    basis.accumulate_adjoint(residual, &mut out);
    Ok(Image::from_raw(basis.height, basis.width, out))
}

struct Centroid {
    mass: f64,
    x: f64,
    y: f64,
}

fn centroid(img: &Image, basis: &MomentBasis) -> Result<Centroid> {
    let w = basis.weight;
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for (i, y) in basis.ys.iter().enumerate() {
        for (j, x) in basis.xs.iter().enumerate() {
            let f = img.get(i, j);
            m00 += f;
            m10 += x * f;
            m01 += y * f;
        }
    }
    let (m00, m10, m01) = (w * m00, w * m10, w * m01);
    if !(m00 > 0.0) {
        return Err(Error::Degenerate(format!(
            "central moments need positive total mass, got M00 = {m00}"
        )));
    }
    Ok(Centroid {
        mass: m00,
        x: m10 / m00,
        y: m01 / m00,
    })
}

fn central_moment(img: &Image, basis: &MomentBasis, c: &Centroid, p: u32, q: u32) -> f64 {
    let mut acc = 0.0;
    for (i, y) in basis.ys.iter().enumerate() {
        let dyq = (y - c.y).powi(q as i32);
        for (j, x) in basis.xs.iter().enumerate() {
            acc += (x - c.x).powi(p as i32) * dyq * img.get(i, j);
        }
    }
    basis.weight * acc
}

/// Moments about the image centroid `(M10 / M00, M01 / M00)`.
pub fn central_moments(img: &Image, basis: &MomentBasis) -> Result<FeatureVector> {
    basis.check_image(img)?;
    let c = centroid(img, basis)?;
    let values = basis
        .orders
        .iter()
        .map(|&(p, q)| central_moment(img, basis, &c, p, q))
        .collect();
    Ok(FeatureVector::new(
        values,
        format!("central-moments/{}", basis.signature()),
    ))
}

/// Vector-Jacobian product of [`central_moments`] at `img`.
///
/// The centroid depends on the image, so besides the direct monomial term each
/// order picks up `-p * mu_{p-1,q} * w * (x - xc) / M00` and the analogous
/// `y` term.
pub fn central_moments_vjp(img: &Image, basis: &MomentBasis, cotangent: &[f64]) -> Result<Image> {
    basis.check_image(img)?;
    if cotangent.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            got: cotangent.len(),
        });
    }
    let c = centroid(img, basis)?;
    let w = basis.weight;
    let mut out = vec![0.0; img.len()];
    for (&(p, q), &r) in basis.orders.iter().zip(cotangent) {
        if r == 0.0 {
            continue;
        }
        let mu_x = if p > 0 {
            central_moment(img, basis, &c, p - 1, q)
        } else {
            0.0
        };
        let mu_y = if q > 0 {
            central_moment(img, basis, &c, p, q - 1)
        } else {
            0.0
        };
        let gx = p as f64 * mu_x / c.mass;
        let gy = q as f64 * mu_y / c.mass;
        for (i, y) in basis.ys.iter().enumerate() {
            let dy = y - c.y;
            let dyq = dy.powi(q as i32);
            for (j, x) in basis.xs.iter().enumerate() {
                let dx = x - c.x;
                let direct = dx.powi(p as i32) * dyq;
                out[i * basis.width + j] += r * w * (direct - gx * dx - gy * dy);
            }
        }
    }
    Ok(Image::from_raw(basis.height, basis.width, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseRng;

    fn random_image(h: usize, w: usize, rng: &mut NoiseRng) -> Image {
        Image::from_fn(h, w, |_, _| rng.uniform())
    }

    /// Independent nested-loop evaluation of the moment sum.
    fn brute_force_moment(img: &Image, p: u32, q: u32) -> f64 {
        let (h, w) = (img.height(), img.width());
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                let x = (j as f64 + 0.5) / w as f64 - 0.5;
                let y = (i as f64 + 0.5) / h as f64 - 0.5;
                acc += x.powi(p as i32) * y.powi(q as i32) * img.get(i, j);
            }
        }
        acc / (h * w) as f64
    }

    #[test]
    fn zero_order_basis_is_ones() {
        let b = MomentBasis::new(&[(0, 0)], 3, 5).unwrap();
        assert!(b.basis_image(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn first_order_two_pixel_row() {
        let b = MomentBasis::new(&[(1, 0)], 1, 2).unwrap();
        // column centers (0.5)/2 - 0.5 and (1.5)/2 - 0.5
        assert_eq!(b.basis_image(0), &[-0.25, 0.25]);
    }

    #[test]
    fn monomial_factorizes() {
        let b = MomentBasis::new(&[(1, 0), (0, 1), (2, 3)], 4, 6).unwrap();
        for k in 0..24 {
            let x = b.basis_image(0)[k];
            let y = b.basis_image(1)[k];
            let v = b.basis_image(2)[k];
            assert!((v - x * x * y * y * y).abs() <= 1e-15 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(MomentBasis::new(&[], 4, 4).is_err());
        assert!(MomentBasis::new(&[(1, 0), (0, 1), (1, 0)], 4, 4).is_err());
    }

    #[test]
    fn default_has_28_orders() {
        assert_eq!(default_orders().len(), 28);
        let b = MomentBasis::with_default_orders(8, 8).unwrap();
        assert_eq!(b.signature(), "8x8:deg<=6");
    }

    #[test]
    fn constant_image_mean() {
        let b = MomentBasis::new(&[(0, 0)], 5, 7).unwrap();
        let m = moments(&Image::filled(5, 7, 0.37), &b).unwrap();
        assert!((m.values[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn impulse_picks_one_term() {
        let b = MomentBasis::with_default_orders(6, 4).unwrap();
        let mut img = Image::zeros(6, 4);
        img.set(2, 3, 1.0);
        let m = moments(&img, &b).unwrap();
        let (x, y) = (b.xs()[3], b.ys()[2]);
        for (k, &(p, q)) in b.orders().iter().enumerate() {
            let expected = x.powi(p as i32) * y.powi(q as i32) / 24.0;
            assert!((m.values[k] - expected).abs() <= 1e-15);
        }
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = NoiseRng::new(11);
        let img = random_image(8, 8, &mut rng);
        let orders: Vec<Order> = (0..=3).flat_map(|p| (0..=3).map(move |q| (p, q))).collect();
        let b = MomentBasis::new(&orders, 8, 8).unwrap();
        let m = moments(&img, &b).unwrap();
        for (k, &(p, q)) in orders.iter().enumerate() {
            let want = brute_force_moment(&img, p, q);
            assert!((m.values[k] - want).abs() <= 1e-12 * want.abs().max(1e-12));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let b = MomentBasis::with_default_orders(8, 8).unwrap();
        assert!(moments(&Image::zeros(8, 7), &b).is_err());
        assert!(moments_adjoint(&[0.0; 3], &b).is_err());
    }

    #[test]
    fn adjoint_one_hot_and_zero() {
        let b = MomentBasis::with_default_orders(5, 5).unwrap();
        let mut r = vec![0.0; b.len()];
        assert!(moments_adjoint(&r, &b).unwrap().data().iter().all(|&v| v == 0.0));
        r[7] = 1.0;
        let a = moments_adjoint(&r, &b).unwrap();
        for (u, v) in a.data().iter().zip(b.basis_image(7)) {
            assert_eq!(*u, v * b.quadrature_weight());
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = NoiseRng::new(5);
        let b = MomentBasis::with_default_orders(8, 8).unwrap();
        let v = random_image(8, 8, &mut rng);
        let r: Vec<f64> = (0..b.len()).map(|_| rng.normal()).collect();
        let lhs = moments_adjoint(&r, &b).unwrap().dot(&v);
        let mv = moments(&v, &b).unwrap();
        let rhs: f64 = r.iter().zip(&mv.values).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn centroid_orders_vanish() {
        let mut rng = NoiseRng::new(8);
        let b = MomentBasis::new(&[(1, 0), (0, 1), (2, 0)], 8, 8).unwrap();
        let img = random_image(8, 8, &mut rng);
        let c = central_moments(&img, &b).unwrap();
        assert!(c.values[0].abs() < 1e-15);
        assert!(c.values[1].abs() < 1e-15);
    }

    #[test]
    fn central_constant_image_matches_oracle() {
        let (h, w) = (6, 9);
        let b = MomentBasis::new(&[(2, 0)], h, w).unwrap();
        let img = Image::filled(h, w, 0.8);
        let got = central_moments(&img, &b).unwrap().values[0];
        // centroid of a constant image is the origin
        let mut want = 0.0;
        for _ in 0..h {
            for j in 0..w {
                let x = (j as f64 + 0.5) / w as f64 - 0.5;
                want += x * x * 0.8;
            }
        }
        want /= (h * w) as f64;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn central_shift_invariance() {
        let mut rng = NoiseRng::new(21);
        let (h, w) = (12, 12);
        let b = MomentBasis::with_default_orders(h, w).unwrap();
        let mut img = Image::zeros(h, w);
        for i in 3..7 {
            for j in 2..6 {
                img.set(i, j, rng.uniform());
            }
        }
        let base = central_moments(&img, &b).unwrap();
        for (di, dj) in [(1, 0), (0, 3), (4, 5), (-2, 0)] {
            let shifted = central_moments(&img.roll(di, dj), &b).unwrap();
            for (a, c) in base.values.iter().zip(&shifted.values) {
                assert!((a - c).abs() < 1e-10, "{a} vs {c}");
            }
        }
    }

    #[test]
    fn central_zero_mass_is_error() {
        let b = MomentBasis::with_default_orders(4, 4).unwrap();
        assert!(matches!(
            central_moments(&Image::zeros(4, 4), &b),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn central_vjp_matches_finite_differences() {
        let mut rng = NoiseRng::new(33);
        let b = MomentBasis::new(&orders_up_to(4), 6, 6).unwrap();
        let img = Image::from_fn(6, 6, |_, _| 0.2 + rng.uniform());
        let cot: Vec<f64> = (0..b.len()).map(|_| rng.normal()).collect();
        let g = central_moments_vjp(&img, &b, &cot).unwrap();
        let f = |im: &Image| -> f64 {
            let c = central_moments(im, &b).unwrap();
            c.values.iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for k in 0..img.len() {
            let mut plus = img.clone();
            plus.data_mut()[k] += h;
            let mut minus = img.clone();
            minus.data_mut()[k] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = g.data()[k];
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1e-4),
                "pixel {k}: fd {fd} vs analytic {an}"
            );
        }
    }
}
