//! Discrete Radon transform and slant-stack backprojection.

use crate::error::{Error, Result};
use crate::grid::{pixel_coordinate, AngleAxis, DetectorAxis, ImageGrid, Interpolation, Sinogram};
use crate::parallel::for_each_rows;
use crate::scalar::Real;

/// Ray sampling for [`forward_radon`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayTraceConfig {
    /// Step along each ray as a fraction of the pixel size.
    pub step_length: f64,
    pub interpolation: Interpolation,
}

impl Default for RayTraceConfig {
    fn default() -> Self {
        Self {
            step_length: 0.5,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl RayTraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_length > 0.0 && self.step_length <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step_length must lie in (0, 1], got {}",
                self.step_length
            )));
        }
        Ok(())
    }
}

/// Image value at `(u1, u2)`, zero outside the grid.
fn sample<T: Real>(x: &[T], n: usize, u1: T, u2: T, interp: Interpolation) -> T {
    let half_n = T::from_index(n) / T::lit(2.0);
    let fx = (u1 + T::one()) * half_n - T::lit(0.5);
    let fy = (u2 + T::one()) * half_n - T::lit(0.5);
    let at = |r: isize, c: isize| -> T {
        if r < 0 || c < 0 || r as usize >= n || c as usize >= n {
            T::zero()
        } else {
            x[r as usize * n + c as usize]
        }
    };
    match interp {
        Interpolation::Nearest => {
            let c = fx.round().to_isize().unwrap_or(-1);
            let r = fy.round().to_isize().unwrap_or(-1);
            at(r, c)
        }
        Interpolation::Bilinear => {
            let cx = fx.floor();
            let cy = fy.floor();
            let wx = fx - cx;
            let wy = fy - cy;
            let (Some(c), Some(r)) = (cx.to_isize(), cy.to_isize()) else {
                return T::zero();
            };
            if r < -1 || c < -1 || r >= n as isize || c >= n as isize {
                return T::zero();
            }
            let one = T::one();
            (one - wy) * ((one - wx) * at(r, c) + wx * at(r, c + 1))
                + wy * ((one - wx) * at(r + 1, c) + wx * at(r + 1, c + 1))
        }
    }
}

/// Line integrals of `x` along every `(t_i, θ_j)` ray, sampled at
/// `step_length` pixel intervals and scaled by the step.
pub fn forward_radon<T: Real>(
    x: &ImageGrid<T>,
    detector: DetectorAxis,
    angles: AngleAxis,
    cfg: &RayTraceConfig,
    workers: usize,
) -> Result<Sinogram<T>> {
    cfg.validate()?;
    let n = x.n();
    let step = T::lit(cfg.step_length) * T::lit(2.0) / T::from_index(n);
    let reach = T::SQRT_2();
    let half_count = (reach / step).ceil().to_usize().unwrap_or(0);
    let offsets: Vec<T> = (0..=2 * half_count)
        .map(|k| (T::from_index(k) - T::from_index(half_count)) * step)
        .collect();
    let ts: Vec<T> = detector.coordinates();
    let thetas: Vec<T> = angles.angles();
    let image = x.data();
    let n_t = detector.len();
    let mut data = vec![T::zero(); n_t * angles.len()];
    for_each_rows(&mut data, n_t, workers, |first, rows| {
        for (r, row) in rows.chunks_exact_mut(n_t).enumerate() {
            let (sin, cos) = thetas[first + r].sin_cos();
            for (out, &t) in row.iter_mut().zip(&ts) {
                let mut acc = T::zero();
                for &s in &offsets {
                    let u1 = t * cos - s * sin;
                    let u2 = t * sin + s * cos;
                    acc += sample(image, n, u1, u2, cfg.interpolation);
                }
                *out = acc * step;
            }
        }
    });
    Ok(Sinogram::from_parts(detector, angles, data))
}

/// Slant-stack backprojection `b(u) = (π/V) Σ_j y(u·ξ_j, θ_j)` with linear
/// interpolation along `t`; rays with `|u·ξ| > 1` contribute nothing.
///
/// The weight is `π/V` for either angular span, so a sinogram extended to the
/// full circle backprojects to the same image as its half-circle source.
pub fn backproject_ss<T: Real>(y: &Sinogram<T>, n: usize, workers: usize) -> Result<ImageGrid<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("grid size must be positive".into()));
    }
    let n_t = y.n_t();
    let inv_dt = T::from_index(n_t - 1) / T::lit(2.0);
    let last = n_t - 1;
    let coords: Vec<T> = (0..n).map(|k| pixel_coordinate(n, k)).collect();
    let trig: Vec<(T, T)> = y.angles().angles::<T>().iter().map(|a| a.sin_cos()).collect();
    let weight = T::PI() / T::from_index(y.n_theta());
    let mut data = vec![T::zero(); n * n];
    for_each_rows(&mut data, n, workers, |first, rows| {
        for (r, out) in rows.chunks_exact_mut(n).enumerate() {
            let u2 = coords[first + r];
            for (j, &(sin, cos)) in trig.iter().enumerate() {
                let proj = y.row(j);
                let base = u2 * sin;
                for (value, &u1) in out.iter_mut().zip(&coords) {
                    let f = (u1 * cos + base + T::one()) * inv_dt;
                    if f < T::zero() || f > T::from_index(last) {
                        continue;
                    }
                    let fi = f.floor();
                    let i = fi.to_usize().unwrap_or(0).min(last - 1);
                    let w = f - T::from_index(i);
                    *value += proj[i] + w * (proj[i + 1] - proj[i]);
                }
            }
            for value in out.iter_mut() {
                *value *= weight;
            }
        }
    });
    Ok(ImageGrid::from_parts(n, data))
}

/// `Σ a·b` weighted by pixel area.
pub fn inner_product_image<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>) -> Result<T> {
    if a.n() != b.n() {
        return Err(Error::shape(
            format!("{0} x {0}", a.n()),
            format!("{0} x {0}", b.n()),
        ));
    }
    let sum = a
        .data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |acc, (&p, &q)| acc + p * q);
    Ok(sum * a.cell_area())
}

/// `Σ y·z` weighted by `Δt·Δθ`.
pub fn inner_product_sino<T: Real>(y: &Sinogram<T>, z: &Sinogram<T>) -> Result<T> {
    if y.detector() != z.detector() || y.angles() != z.angles() {
        return Err(Error::shape(
            format!("{} x {}", y.n_theta(), y.n_t()),
            format!("{} x {}", z.n_theta(), z.n_t()),
        ));
    }
    let sum = y
        .data()
        .iter()
        .zip(z.data())
        .fold(T::zero(), |acc, (&p, &q)| acc + p * q);
    Ok(sum * y.detector().spacing::<T>() * y.angles().spacing::<T>())
}
