//! The individual BST stages.

use rustfft::num_complex::Complex;

use super::origin::OriginMoments;
use super::BstPlan;
use crate::error::{Error, Result};
use crate::grid::{pixel_coordinate, AngleAxis, AngleSpan, ImageGrid, Interpolation, Sinogram};
use crate::parallel::for_each_rows;
use crate::scalar::Real;

fn zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Mirrors `[0, π)` data onto `[π, 2π)` with `y(t, θ + π) = y(-t, θ)`.
///
/// The detector grid is symmetric about zero, so the mirror is an exact
/// index reversal. Sinograms already on the full circle are returned as is.
pub fn extend_to_full_circle<T: Real>(y: &Sinogram<T>) -> Sinogram<T> {
    if y.angles().span() == AngleSpan::Full {
        return y.clone();
    }
    let v = y.n_theta();
    let mut data = Vec::with_capacity(2 * y.data().len());
    data.extend_from_slice(y.data());
    for row in y.rows() {
        data.extend(row.iter().rev());
    }
    let angles = AngleAxis::with_span(2 * v, AngleSpan::Full).expect("non-empty angle axis");
    Sinogram::from_parts(y.detector(), angles, data)
}

/// Radial lines after P2: `[angle][radial]`, each starting at `t_0 = -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedPolar<T> {
    pub n_angles: usize,
    pub len: usize,
    pub data: Vec<T>,
    /// Moments removed in P1, needed for the add-back.
    pub moments: OriginMoments<T>,
}

impl<T: Real> PaddedPolar<T> {
    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.len..(j + 1) * self.len]
    }
}

fn check_full<T: Real>(y_ext: &Sinogram<T>, plan: &BstPlan<T>) -> Result<()> {
    if y_ext.angles().span() != AngleSpan::Full
        || y_ext.n_theta() != plan.full_angles()
        || y_ext.detector() != plan.detector()
    {
        return Err(Error::shape(
            format!("{} x {} full-circle sinogram", plan.full_angles(), plan.n_t()),
            format!("{} x {} ({:?} span)", y_ext.n_theta(), y_ext.n_t(), y_ext.angles().span()),
        ));
    }
    Ok(())
}

/// P1: subtracts the windowed origin component, returning the residual and
/// the per-angle moments that were removed.
pub fn split_origin<T: Real>(
    y_ext: &Sinogram<T>,
    plan: &BstPlan<T>,
) -> Result<(Sinogram<T>, OriginMoments<T>)> {
    check_full(y_ext, plan)?;
    Ok(plan.origin.split(y_ext))
}

/// P2: zero-pads every radial line to `plan.polar_len()`.
pub fn zero_pad<T: Real>(
    residual: &Sinogram<T>,
    moments: OriginMoments<T>,
    plan: &BstPlan<T>,
) -> PaddedPolar<T> {
    let len = plan.polar_len();
    let n_t = residual.n_t();
    let mut data = vec![T::zero(); residual.n_theta() * len];
    for (dst, src) in data.chunks_exact_mut(len).zip(residual.rows()) {
        dst[..n_t].copy_from_slice(src);
    }
    PaddedPolar {
        n_angles: residual.n_theta(),
        len,
        data,
        moments,
    }
}

/// P0–P2 on a full-circle sinogram.
pub fn resample_polar<T: Real>(y_ext: &Sinogram<T>, plan: &BstPlan<T>) -> Result<PaddedPolar<T>> {
    let (residual, moments) = split_origin(y_ext, plan)?;
    Ok(zero_pad(&residual, moments, plan))
}

/// Complex samples `ŷ(σ_k, θ_j)`, `[angle][radial]` in DFT bin order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSpectrum<T> {
    pub n_angles: usize,
    pub len: usize,
    /// Spacing of `σ_k` in cycles per unit length.
    pub frequency_step: T,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> PolarSpectrum<T> {
    pub fn row(&self, j: usize) -> &[Complex<T>] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    /// Signed frequency of bin `k`.
    pub fn sigma(&self, k: usize) -> T {
        let signed = if k < self.len.div_ceil(2) {
            T::from_index(k)
        } else {
            T::from_index(k) - T::from_index(self.len)
        };
        signed * self.frequency_step
    }
}

fn check_polar<T: Real>(n_angles: usize, len: usize, plan: &BstPlan<T>) -> Result<()> {
    if n_angles != plan.full_angles() || len != plan.polar_len() {
        return Err(Error::shape(
            format!("{} x {} polar grid", plan.full_angles(), plan.polar_len()),
            format!("{n_angles} x {len}"),
        ));
    }
    Ok(())
}

/// P3: per-angle DFT along the radial axis, referenced to `t = 0`.
///
/// Each line starts at `t_0`, so bin `k` is multiplied by `e^{-2πiσ_k t_0}`;
/// this unit-modulus factor leaves magnitudes, and hence Parseval, intact.
pub fn radial_dft<T: Real>(
    p: &PaddedPolar<T>,
    plan: &BstPlan<T>,
    workers: usize,
) -> Result<PolarSpectrum<T>> {
    check_polar(p.n_angles, p.len, plan)?;
    let len = p.len;
    let mut data: Vec<Complex<T>> = p.data.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let fft = &plan.radial_fft;
    let phase = &plan.phase;
    for_each_rows(&mut data, len, workers, |_, rows| {
        let mut scratch = vec![zero(); fft.get_inplace_scratch_len()];
        for row in rows.chunks_exact_mut(len) {
            fft.process_with_scratch(row, &mut scratch);
            for (v, &ph) in row.iter_mut().zip(phase.iter()) {
                *v = *v * ph;
            }
        }
    });
    Ok(PolarSpectrum {
        n_angles: p.n_angles,
        len,
        frequency_step: plan.frequency_step(),
        data,
    })
}

/// P4: pointwise division by `max(|σ_k|, σ_min)`.
pub fn apply_bst_kernel<T: Real>(mut sp: PolarSpectrum<T>, plan: &BstPlan<T>) -> Result<PolarSpectrum<T>> {
    check_polar(sp.n_angles, sp.len, plan)?;
    for row in sp.data.chunks_exact_mut(sp.len) {
        for (v, &inv) in row.iter_mut().zip(plan.inv_sigma.iter()) {
            *v = *v * inv;
        }
    }
    Ok(sp)
}

/// Square complex grid in DFT order: `data[k2 * side + k1]` holds frequency
/// `(k1, k2)/P`, with `P` the Cartesian period.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianSpectrum<T> {
    pub side: usize,
    pub data: Vec<Complex<T>>,
}

fn signed(k: usize, len: usize) -> isize {
    if k < len.div_ceil(2) {
        k as isize
    } else {
        k as isize - len as isize
    }
}

/// P5: samples the polar spectrum at every Cartesian node inside the polar disk.
pub fn grid_to_cartesian<T: Real>(
    sp: &PolarSpectrum<T>,
    plan: &BstPlan<T>,
    workers: usize,
) -> Result<CartesianSpectrum<T>> {
    check_polar(sp.n_angles, sp.len, plan)?;
    let side = plan.radial_samples();
    let oversampling = T::from_index(plan.config().radial_oversampling);
    let n_angles = sp.n_angles;
    let angle_scale = T::from_index(n_angles) / T::TAU();
    let half = sp.len / 2;
    let max_radius = T::from_index(half - 1);
    let interp = plan.config().interp;
    let mut data = vec![zero(); side * side];
    for_each_rows(&mut data, side, workers, |first, rows| {
        for (r, out) in rows.chunks_exact_mut(side).enumerate() {
            let k2 = T::lit(signed(first + r, side) as f64);
            for (k, value) in out.iter_mut().enumerate() {
                let k1 = T::lit(signed(k, side) as f64);
                let fr = k1.hypot(k2) * oversampling;
                if fr > max_radius {
                    continue;
                }
                let mut angle = k2.atan2(k1);
                if angle < T::zero() {
                    angle += T::TAU();
                }
                let fa = angle * angle_scale;
                *value = match interp {
                    Interpolation::Nearest => {
                        let ir = fr.round().to_usize().unwrap_or(0);
                        let ia = fa.round().to_usize().unwrap_or(0) % n_angles;
                        sp.data[ia * sp.len + ir]
                    }
                    Interpolation::Bilinear => {
                        let ir = fr.floor().to_usize().unwrap_or(0).min(half - 2);
                        let wr = fr - T::from_index(ir);
                        let fa_floor = fa.floor();
                        let wa = fa - fa_floor;
                        let ia = fa_floor.to_usize().unwrap_or(0) % n_angles;
                        let ia1 = (ia + 1) % n_angles;
                        let a0 = &sp.data[ia * sp.len..];
                        let a1 = &sp.data[ia1 * sp.len..];
                        let one = T::one();
                        let lo = a0[ir] * (one - wr) + a0[ir + 1] * wr;
                        let hi = a1[ir] * (one - wr) + a1[ir + 1] * wr;
                        lo * (one - wa) + hi * wa
                    }
                };
            }
        }
    });
    Ok(CartesianSpectrum { side, data })
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], side: usize) {
    const BLOCK: usize = 32;
    for rb in (0..side).step_by(BLOCK) {
        for cb in (0..side).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(side) {
                for c in cb..(cb + BLOCK).min(side) {
                    dst[c * side + r] = src[r * side + c];
                }
            }
        }
    }
}

/// P6–P8: unnormalized 2D inverse DFT, quadrant shift so that frequency-grid
/// index `side/2` lands on `u = 0`, real part, bilinear resampling onto the
/// output pixel centers, and the plan's amplitude constant.
pub fn inverse_dft2_and_shift<T: Real>(
    c: CartesianSpectrum<T>,
    plan: &BstPlan<T>,
    workers: usize,
) -> Result<ImageGrid<T>> {
    let side = plan.radial_samples();
    if c.side != side || c.data.len() != side * side {
        return Err(Error::shape(
            format!("{side} x {side} spectrum"),
            format!("{} values with side {}", c.data.len(), c.side),
        ));
    }
    let fft = &plan.cartesian_ifft;
    let run_rows = |buf: &mut [Complex<T>]| {
        for_each_rows(buf, side, workers, |_, rows| {
            let mut scratch = vec![zero(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(rows, &mut scratch);
        });
    };
    let mut data = c.data;
    run_rows(&mut data);
    let mut transposed = vec![zero(); side * side];
    transpose(&data, &mut transposed, side);
    run_rows(&mut transposed);
    // `transposed[k1 * side + k2]` now holds the image at (column k1, row k2).
    let amplitude = plan.amplitude();
    let dt = plan.detector().spacing::<T>();
    let n = plan.output_n();
    let centre = T::from_index(side / 2);
    let at = |row: usize, col: usize| -> T {
        let r = (row + side / 2) % side;
        let c = (col + side / 2) % side;
        transposed[c * side + r].re
    };
    let positions: Vec<(usize, T)> = (0..n)
        .map(|k| {
            let f = pixel_coordinate::<T>(n, k) / dt + centre;
            let i = f.floor().to_usize().unwrap_or(0).min(side - 2);
            (i, f - T::from_index(i))
        })
        .collect();
    let mut out = vec![T::zero(); n * n];
    for_each_rows(&mut out, n, workers, |first, rows| {
        for (r, row) in rows.chunks_exact_mut(n).enumerate() {
            let (i2, w2) = positions[first + r];
            for (value, &(i1, w1)) in row.iter_mut().zip(&positions) {
                let one = T::one();
                let lo = at(i2, i1) * (one - w1) + at(i2, i1 + 1) * w1;
                let hi = at(i2 + 1, i1) * (one - w1) + at(i2 + 1, i1 + 1) * w1;
                *value = (lo * (one - w2) + hi * w2) * amplitude;
            }
        }
    });
    Ok(ImageGrid::from_parts(n, out))
}

/// Exact backprojection of the component removed in P1.
pub fn origin_backprojection<T: Real>(
    moments: &OriginMoments<T>,
    plan: &BstPlan<T>,
    workers: usize,
) -> ImageGrid<T> {
    plan.origin.backproject(moments, plan.output_n(), workers)
}
