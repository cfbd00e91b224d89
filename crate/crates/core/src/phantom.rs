//! Uniform-density ellipsoid phantoms with closed-form projections.

use crate::error::{Error, Result};
use crate::grid::{pixel_coordinate, AngleAxis, DetectorAxis, ImageGrid, Sinogram};
use crate::scalar::Real;

/// Axis-aligned ellipsoid of constant density inside the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid<T> {
    /// Semi-axis along `u1`.
    pub a: T,
    /// Semi-axis along `u2`.
    pub b: T,
    /// Semi-axis along the slice axis.
    pub c: T,
    pub rho: T,
    /// Center `(u1, u2, s)`.
    pub center: [T; 3],
}

impl<T: Real> Ellipsoid<T> {
    pub fn new(a: T, b: T, c: T, rho: T, center: [T; 3]) -> Result<Self> {
        let axes = [a, b, c];
        if axes.iter().any(|&x| !(x > T::zero())) {
            return Err(Error::InvalidParameter(
                "ellipsoid semi-axes must be positive".into(),
            ));
        }
        if !rho.is_finite() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ellipsoid parameters"));
        }
        let tol = T::lit(1e-12);
        for (axis, offset) in axes.iter().zip(center) {
            if offset.abs() + *axis > T::one() + tol {
                return Err(Error::InvalidParameter(
                    "ellipsoid does not fit inside [-1, 1]^3".into(),
                ));
            }
        }
        Ok(Self {
            a,
            b,
            c,
            rho,
            center,
        })
    }

    /// Centered ball of radius `r`.
    pub fn ball(r: T, rho: T) -> Result<Self> {
        Self::new(r, r, r, rho, [T::zero(); 3])
    }

    /// In-slice semi-axes at slice coordinate `s`, or `None` when the slice misses.
    pub fn slice_axes(&self, s: T) -> Option<(T, T)> {
        let z = (s - self.center[2]) / self.c;
        let k = T::one() - z * z;
        (k > T::zero()).then(|| {
            let scale = k.sqrt();
            (self.a * scale, self.b * scale)
        })
    }

    /// Line integral through slice `s` along `{u : u·ξ_θ = t}`.
    pub fn projection(&self, s: T, t: T, theta: T) -> T {
        let Some((a, b)) = self.slice_axes(s) else {
            return T::zero();
        };
        let (sin, cos) = theta.sin_cos();
        let q2 = a * a * cos * cos + b * b * sin * sin;
        let shifted = t - (self.center[0] * cos + self.center[1] * sin);
        let rem = q2 - shifted * shifted;
        if rem <= T::zero() {
            return T::zero();
        }
        T::lit(2.0) * self.rho * a * b * rem.sqrt() / q2
    }
}

fn check_slice<T: Real>(s: T) -> Result<()> {
    if !(s.abs() <= T::one()) {
        return Err(Error::InvalidParameter(format!(
            "slice coordinate {s} outside [-1, 1]"
        )));
    }
    Ok(())
}

/// Samples the ellipsoid's cross-section at slice coordinate `s` on an `n x n` grid.
pub fn render_slice<T: Real>(e: &Ellipsoid<T>, s: T, n: usize) -> Result<ImageGrid<T>> {
    check_slice(s)?;
    if n == 0 {
        return Err(Error::InvalidParameter("grid size must be positive".into()));
    }
    let z = (s - e.center[2]) / e.c;
    let bound = T::one() - z * z;
    let coords: Vec<T> = (0..n).map(|k| pixel_coordinate(n, k)).collect();
    ImageGrid::from_fn(n, |row, col| {
        let x = (coords[col] - e.center[0]) / e.a;
        let y = (coords[row] - e.center[1]) / e.b;
        if x * x + y * y <= bound {
            e.rho
        } else {
            T::zero()
        }
    })
}

/// Exact sinogram of the slice at `s`.
pub fn analytic_sinogram<T: Real>(
    e: &Ellipsoid<T>,
    s: T,
    detector: DetectorAxis,
    angles: AngleAxis,
) -> Result<Sinogram<T>> {
    check_slice(s)?;
    let ts: Vec<T> = detector.coordinates();
    let thetas: Vec<T> = angles.angles();
    Sinogram::from_fn(detector, angles, |j, i| e.projection(s, ts[i], thetas[j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> Ellipsoid<f64> {
        Ellipsoid::ball(0.5, 1.0).unwrap()
    }

    #[test]
    fn slice_outside_ellipsoid_is_empty() {
        let img = render_slice(&disk(), 0.6, 32).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_pixel_is_inside() {
        let img = render_slice(&disk(), 0.0, 64).unwrap();
        // The center of a 64-grid falls between pixels; the four around it are inside.
        assert_eq!(img.get(31, 31), 1.0);
        assert_eq!(img.get(32, 32), 1.0);
        assert_eq!(img.get(0, 0), 0.0);
    }

    #[test]
    fn diameter_chord_of_disk() {
        let e = disk();
        for j in 0..8 {
            let theta = j as f64 * std::f64::consts::PI / 8.0;
            assert!((e.projection(0.0, 0.0, theta) - 1.0).abs() < 1e-14);
            assert_eq!(e.projection(0.0, 0.51, theta), 0.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Ellipsoid::new(0.0, 0.5, 0.5, 1.0, [0.0; 3]).is_err());
        assert!(Ellipsoid::new(0.5, 0.5, 0.5, 1.0, [0.6, 0.0, 0.0]).is_err());
        assert!(render_slice(&disk(), 1.5, 8).is_err());
    }
}
