//! Origin handling for the `1/σ` kernel.
//!
//! Data near `t = 0` whose low-order moments do not vanish makes `ŷ(σ)/σ`
//! singular at the spectrum center, which the Cartesian grid cannot sample.
//! The windowed split removes, per angle, the projection onto a small basis
//! `g_k(t)` (polynomial times a Kaiser-Bessel window) chosen so the residual
//! has vanishing discrete moments `Σ t^k y Δt` for `k < order`. The removed
//! part is backprojected exactly through its angular Fourier series:
//!
//! `b(r, φ) = Σ_k Σ_n c_{k,n} e^{inφ} G_{k,n}(r)`, with
//! `G_{k,n}(r) = ½ ∫ e^{inα} g_k(r cos α) dα`,
//!
//! where `c_{k,n}` are the angular Fourier coefficients of the moments.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::window::kaiser_bessel_tapered as window_fn;
use crate::error::{Error, Result};
use crate::grid::{pixel_coordinate, DetectorAxis, ImageGrid, Sinogram};
use crate::parallel::for_each_rows;
use crate::scalar::Real;

const ANGULAR_QUADRATURE: usize = 1024;
const HARMONIC_CUTOFF: f64 = 1e-4;
const MIN_RADII: usize = 256;

/// Per-angle moments `μ_k(θ_j)` removed from the sinogram, indexed `[k][angle]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginMoments<T> {
    pub(crate) order: usize,
    pub(crate) n_angles: usize,
    pub(crate) values: Vec<T>,
}

impl<T: Real> OriginMoments<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    /// Moment `k` at every angle.
    pub fn moment(&self, k: usize) -> &[T] {
        &self.values[k * self.n_angles..(k + 1) * self.n_angles]
    }
}

#[derive(Debug)]
pub(crate) struct OriginModel<T> {
    order: usize,
    /// `g_k(t_i)`, indexed `[k][i]`.
    basis: Vec<Vec<T>>,
    /// `t_i^k Δt`, indexed `[k][i]`.
    weights: Vec<Vec<T>>,
    radius_step: T,
    n_radii: usize,
    harmonics: Vec<usize>,
    /// `G_{k,n}(r_m)` stored `[k][m * (H_k + 1) + n]`.
    tables: Vec<Vec<T>>,
}

fn invert(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let m = a.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut inv: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..m {
        let pivot = (col..m).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..m {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..m {
            if row != col {
                let f = a[row][col];
                for j in 0..m {
                    a[row][j] -= f * a[col][j];
                    inv[row][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

impl<T: Real> OriginModel<T> {
    pub(crate) fn new(
        detector: DetectorAxis,
        n_angles: usize,
        output_n: usize,
        beta: f64,
        support: f64,
        order: usize,
    ) -> Result<Self> {
        let ts: Vec<f64> = detector.coordinates();
        let dt: f64 = detector.spacing();
        let window: Vec<f64> = ts.iter().map(|&t| window_fn(t, beta, support)).collect();
        let powers: Vec<Vec<f64>> = (0..2 * order.max(1))
            .map(|k| ts.iter().map(|&t| t.powi(k as i32)).collect())
            .collect();
        let moment_matrix: Vec<Vec<f64>> = (0..order)
            .map(|i| {
                (0..order)
                    .map(|j| {
                        powers[i + j]
                            .iter()
                            .zip(&window)
                            .map(|(p, w)| p * w * dt)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let inverse = invert(moment_matrix).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "Kaiser-Bessel support {support} covers too few detector samples for {order} origin moments"
            ))
        })?;
        let basis: Vec<Vec<f64>> = (0..order)
            .map(|k| {
                (0..ts.len())
                    .map(|i| {
                        let poly: f64 = (0..order).map(|j| inverse[j][k] * powers[j][i]).sum();
                        poly * window[i]
                    })
                    .collect()
            })
            .collect();

        let max_radius = std::f64::consts::SQRT_2 * 1.01;
        let n_radii = MIN_RADII.max(2 * output_n);
        let radius_step = max_radius / (n_radii - 1) as f64;
        let qa = ANGULAR_QUADRATURE;
        let harmonic_cap = (qa / 2 - 1).min((n_angles / 2).saturating_sub(1));
        let fft = FftPlanner::<f64>::new().plan_fft_forward(qa);
        let cosines: Vec<f64> = (0..qa)
            .map(|a| (std::f64::consts::TAU * a as f64 / qa as f64).cos())
            .collect();
        // The tables use the continuous basis so its angular harmonics decay fast.
        let continuous = |k: usize, t: f64| -> f64 {
            let w = window_fn(t, beta, support);
            if w == 0.0 {
                return 0.0;
            }
            let poly: f64 = (0..order).rev().fold(0.0, |acc, j| acc * t + inverse[j][k]);
            poly * w
        };

        let mut harmonics = Vec::with_capacity(order);
        let mut tables = Vec::with_capacity(order);
        for k in 0..order {
            // full[m][n] for n in 0..=harmonic_cap
            let mut full = vec![0.0f64; n_radii * (harmonic_cap + 1)];
            let mut buf = vec![Complex::new(0.0, 0.0); qa];
            for m in 0..n_radii {
                let r = m as f64 * radius_step;
                for (slot, &c) in buf.iter_mut().zip(&cosines) {
                    *slot = Complex::new(continuous(k, r * c), 0.0);
                }
                fft.process(&mut buf);
                let scale = 0.5 * std::f64::consts::TAU / qa as f64;
                for n in 0..=harmonic_cap {
                    full[m * (harmonic_cap + 1) + n] = buf[n].re * scale;
                }
            }
            let reference = full.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let mut h = 0;
            for n in 0..=harmonic_cap {
                let peak = (0..n_radii)
                    .map(|m| full[m * (harmonic_cap + 1) + n].abs())
                    .fold(0.0, f64::max);
                if peak > HARMONIC_CUTOFF * reference {
                    h = n;
                }
            }
            let mut table = Vec::with_capacity(n_radii * (h + 1));
            for m in 0..n_radii {
                for n in 0..=h {
                    table.push(T::lit(full[m * (harmonic_cap + 1) + n]));
                }
            }
            harmonics.push(h);
            tables.push(table);
        }

        let cast = |rows: &[Vec<f64>]| -> Vec<Vec<T>> {
            rows.iter()
                .map(|row| row.iter().map(|&v| T::lit(v)).collect())
                .collect()
        };
        let weights: Vec<Vec<f64>> = powers[..order]
            .iter()
            .map(|row| row.iter().map(|p| p * dt).collect())
            .collect();
        Ok(Self {
            order,
            basis: cast(&basis),
            weights: cast(&weights),
            radius_step: T::lit(radius_step),
            n_radii,
            harmonics,
            tables,
        })
    }

    pub(crate) fn harmonics(&self) -> &[usize] {
        &self.harmonics
    }

    /// Removes the origin basis component from every row.
    pub(crate) fn split(&self, y: &Sinogram<T>) -> (Sinogram<T>, OriginMoments<T>) {
        let n_angles = y.n_theta();
        let mut values = vec![T::zero(); self.order * n_angles];
        let mut residual = y.data().to_vec();
        for (j, row) in residual.chunks_exact_mut(y.n_t()).enumerate() {
            for k in 0..self.order {
                let mu = row
                    .iter()
                    .zip(&self.weights[k])
                    .fold(T::zero(), |acc, (&v, &w)| acc + v * w);
                values[k * n_angles + j] = mu;
            }
            for k in 0..self.order {
                let mu = values[k * n_angles + j];
                for (v, &g) in row.iter_mut().zip(&self.basis[k]) {
                    *v -= mu * g;
                }
            }
        }
        (
            Sinogram::from_parts(y.detector(), y.angles(), residual),
            OriginMoments {
                order: self.order,
                n_angles,
                values,
            },
        )
    }

    /// Exact backprojection of `Σ_k μ_k(θ) g_k(t)` over the full circle, halved.
    pub(crate) fn backproject(
        &self,
        moments: &OriginMoments<T>,
        n: usize,
        workers: usize,
    ) -> ImageGrid<T> {
        let a = moments.n_angles;
        let step = T::TAU() / T::from_index(a);
        let coefficients: Vec<Vec<Complex<T>>> = (0..self.order)
            .map(|k| {
                let mu = moments.moment(k);
                (0..=self.harmonics[k])
                    .map(|h| {
                        let mut acc = Complex::new(T::zero(), T::zero());
                        for (j, &m) in mu.iter().enumerate() {
                            // Reduce the phase index first to keep the argument small.
                            let phase = step * T::from_index((h * j) % a);
                            let (s, c) = phase.sin_cos();
                            acc += Complex::new(m * c, -m * s);
                        }
                        acc / T::from_index(a)
                    })
                    .collect()
            })
            .collect();
        let coords: Vec<T> = (0..n).map(|k| pixel_coordinate(n, k)).collect();
        let last = self.n_radii - 2;
        let two = T::lit(2.0);
        let mut data = vec![T::zero(); n * n];
        for_each_rows(&mut data, n, workers, |first, rows| {
            for (r, out) in rows.chunks_exact_mut(n).enumerate() {
                let u2 = coords[first + r];
                for (value, &u1) in out.iter_mut().zip(&coords) {
                    let radius = u1.hypot(u2);
                    let z = if radius > T::zero() {
                        Complex::new(u1 / radius, u2 / radius)
                    } else {
                        Complex::new(T::one(), T::zero())
                    };
                    let f = radius / self.radius_step;
                    let m = f.floor().to_usize().unwrap_or(0).min(last);
                    let w = f - T::from_index(m);
                    let mut acc = T::zero();
                    for k in 0..self.order {
                        let h = self.harmonics[k];
                        let lo = &self.tables[k][m * (h + 1)..(m + 1) * (h + 1)];
                        let hi = &self.tables[k][(m + 1) * (h + 1)..(m + 2) * (h + 1)];
                        let c = &coefficients[k];
                        let g = |idx: usize| lo[idx] + w * (hi[idx] - lo[idx]);
                        let mut sum = c[0].re * g(0);
                        let mut zn = Complex::new(T::one(), T::zero());
                        let mut harmonic = T::zero();
                        for idx in 1..=h {
                            zn = zn * z;
                            harmonic += (c[idx] * zn).re * g(idx);
                        }
                        sum += two * harmonic;
                        acc += sum;
                    }
                    *value = acc;
                }
            }
        });
        ImageGrid::from_parts(n, data)
    }
}

/// Shared handle so plans stay cheap to clone.
pub(crate) type SharedOrigin<T> = Arc<OriginModel<T>>;
