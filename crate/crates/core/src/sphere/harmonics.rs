//! Spherical harmonic transforms by direct quadrature, and zonal spherical
//! convolution as per-degree scaling of harmonic coefficients.

use std::sync::Arc;

use num_complex::Complex64;

use super::{SphericalGrid, SphericalSignal};
use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, View};

/// Orthonormal associated Legendre values `P̄_ℓ^m(x)` (Condon–Shortley phase
/// included) for `0 ≤ m ≤ ℓ < bandwidth`, packed at `ℓ(ℓ+1)/2 + m`.
///
/// With this normalization `Y_ℓ^m(θ, φ) = P̄_ℓ^m(cos θ)·e^{imφ}` has unit
/// norm on the sphere.
pub fn legendre_normalized(bandwidth: usize, x: f64) -> Vec<f64> {
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut p = vec![0.0; bandwidth * (bandwidth + 1) / 2];
    if bandwidth == 0 {
        return p;
    }
    let sin = (1.0 - x * x).max(0.0).sqrt();
    p[0] = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    for m in 1..bandwidth {
        let mf = m as f64;
        p[idx(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin * p[idx(m - 1, m - 1)];
    }
    for m in 0..bandwidth {
        if m + 1 < bandwidth {
            p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[idx(m, m)];
        }
        for l in (m + 2)..bandwidth {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[idx(l, m)] = a * (x * p[idx(l - 1, m)] - b * p[idx(l - 2, m)]);
        }
    }
    p
}

/// Position of `(ℓ, m)` in a degree-major coefficient list: `ℓ² + ℓ + m`.
fn coeff_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

fn check_bandwidth(grid: &SphericalGrid, bandwidth: usize) -> Result<()> {
    if bandwidth == 0 || bandwidth > grid.max_bandwidth() {
        return Err(Error::BandwidthExceedsGrid {
            bandwidth,
            width: grid.width(),
            height: grid.height(),
        });
    }
    Ok(())
}

/// Complex harmonic coefficients per channel, indexed `(ℓ, m)` with
/// `|m| ≤ ℓ < bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    bandwidth: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl SpectralCoeffs {
    pub fn zeros(bandwidth: usize, channels: usize) -> Self {
        SpectralCoeffs {
            bandwidth,
            channels,
            data: vec![Complex64::new(0.0, 0.0); bandwidth * bandwidth * channels],
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn offset(&self, channel: usize, l: usize, m: i64) -> usize {
        assert!(l < self.bandwidth && m.unsigned_abs() as usize <= l);
        channel * self.bandwidth * self.bandwidth + coeff_index(l, m)
    }

    pub fn get(&self, channel: usize, l: usize, m: i64) -> Complex64 {
        self.data[self.offset(channel, l, m)]
    }

    pub fn set(&mut self, channel: usize, l: usize, m: i64, v: Complex64) {
        let o = self.offset(channel, l, m);
        self.data[o] = v;
    }

    /// `Σ |coeff|²` over all channels.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest violation of `c(ℓ,−m) = (−1)^m·conj(c(ℓ,m))`.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for ch in 0..self.channels {
            for l in 0..self.bandwidth {
                for m in 0..=l as i64 {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let expect = self.get(ch, l, m).conj() * sign;
                    worst = worst.max((self.get(ch, l, -m) - expect).norm());
                }
            }
        }
        worst
    }
}

/// `coeff(ℓ,m) = Σ_g w_g · f_g · conj(Y_ℓ^m(g))` for every channel.
pub fn sht_forward(signal: &SphericalSignal, bandwidth: usize) -> Result<SpectralCoeffs> {
    let grid = SphericalGrid::new(signal.width(), signal.height())?;
    check_bandwidth(&grid, bandwidth)?;
    let mut out = SpectralCoeffs::zeros(bandwidth, signal.channels());
    for h in 0..grid.height() {
        let legendre = legendre_normalized(bandwidth, grid.polar(h).cos());
        let weight = grid.ring_weights()[h];
        for w in 0..grid.width() {
            let phi = grid.azimuth(w);
            for l in 0..bandwidth {
                for m in -(l as i64)..=(l as i64) {
                    let p = legendre[l * (l + 1) / 2 + m.unsigned_abs() as usize];
                    // Y_ℓ^{-m} = (-1)^m conj(Y_ℓ^m) folds into P̄ and the phase.
                    let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                    let conj_y = Complex64::from_polar(sign * p, -(m as f64) * phi);
                    for c in 0..signal.channels() {
                        let o = out.offset(c, l, m);
                        out.data[o] += conj_y * (weight * signal.get(h, w, c));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pointwise synthesis `Σ coeff(ℓ,m)·Y_ℓ^m`; the spectrum must describe a
/// real signal.
pub fn sht_inverse(coeffs: &SpectralCoeffs, grid: &SphericalGrid) -> Result<SphericalSignal> {
    check_bandwidth(grid, coeffs.bandwidth)?;
    let asym = coeffs.conjugate_symmetry_error();
    if asym > 1e-6 {
        return Err(Error::NonRealSpectrum(asym));
    }
    let b = coeffs.bandwidth;
    let mut out = SphericalSignal::zeros(grid, coeffs.channels);
    for h in 0..grid.height() {
        let legendre = legendre_normalized(b, grid.polar(h).cos());
        for w in 0..grid.width() {
            let phi = grid.azimuth(w);
            for c in 0..coeffs.channels {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..b {
                    for m in -(l as i64)..=(l as i64) {
                        let p = legendre[l * (l + 1) / 2 + m.unsigned_abs() as usize];
                        let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                        acc += coeffs.get(c, l, m) * Complex64::from_polar(sign * p, m as f64 * phi);
                    }
                }
                out.set(h, w, c, acc.re);
            }
        }
    }
    Ok(out)
}

/// Precomputed real-basis analysis and synthesis matrices for one grid and
/// bandwidth.
///
/// The real basis spans the same degree-ℓ subspaces as the complex one, so
/// per-degree scaling (zonal convolution) is identical in either basis.
#[derive(Debug, Clone)]
pub struct SphericalTransform {
    width: usize,
    height: usize,
    bandwidth: usize,
    /// `K × G`: real harmonic `k` at cell `g`, times the cell weight.
    analysis: Vec<f64>,
    /// `G × K`: real harmonic `k` at cell `g`.
    synthesis: Vec<f64>,
}

impl SphericalTransform {
    pub fn new(grid: &SphericalGrid, bandwidth: usize) -> Result<Arc<Self>> {
        check_bandwidth(grid, bandwidth)?;
        let k_count = bandwidth * bandwidth;
        let g_count = grid.len();
        let mut synthesis = vec![0.0; g_count * k_count];
        let sqrt2 = std::f64::consts::SQRT_2;
        for h in 0..grid.height() {
            let legendre = legendre_normalized(bandwidth, grid.polar(h).cos());
            for w in 0..grid.width() {
                let g = h * grid.width() + w;
                let phi = grid.azimuth(w);
                for l in 0..bandwidth {
                    for m in -(l as i64)..=(l as i64) {
                        let p = legendre[l * (l + 1) / 2 + m.unsigned_abs() as usize];
                        let mf = m.unsigned_abs() as f64;
                        let y = match m.signum() {
                            0 => p,
                            1 => sqrt2 * p * (mf * phi).cos(),
                            _ => sqrt2 * p * (mf * phi).sin(),
                        };
                        synthesis[g * k_count + coeff_index(l, m)] = y;
                    }
                }
            }
        }
        let mut analysis = vec![0.0; k_count * g_count];
        for g in 0..g_count {
            let wgt = grid.cell_weight(g);
            for k in 0..k_count {
                analysis[k * g_count + g] = synthesis[g * k_count + k] * wgt;
            }
        }
        Ok(Arc::new(SphericalTransform {
            width: grid.width(),
            height: grid.height(),
            bandwidth,
            analysis,
            synthesis,
        }))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn grid_len(&self) -> usize {
        self.width * self.height
    }

    pub fn coeff_len(&self) -> usize {
        self.bandwidth * self.bandwidth
    }

    /// `G × C` samples to `K × C` real coefficients.
    pub fn analyze(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let a = View::new(&self.analysis, self.coeff_len(), self.grid_len());
        matmul(a, View::new(x, self.grid_len(), channels))
    }

    /// `K × C` real coefficients to `G × C` samples.
    pub fn synthesize(&self, coeffs: &[f64], channels: usize) -> Vec<f64> {
        let s = View::new(&self.synthesis, self.grid_len(), self.coeff_len());
        matmul(s, View::new(coeffs, self.coeff_len(), channels))
    }

    /// Adjoint of [`Self::analyze`].
    pub fn analyze_adjoint(&self, d_coeffs: &[f64], channels: usize) -> Vec<f64> {
        let a = View::new(&self.analysis, self.coeff_len(), self.grid_len());
        matmul(a.t(), View::new(d_coeffs, self.coeff_len(), channels))
    }

    /// Adjoint of [`Self::synthesize`].
    pub fn synthesize_adjoint(&self, d_samples: &[f64], channels: usize) -> Vec<f64> {
        let s = View::new(&self.synthesis, self.grid_len(), self.coeff_len());
        matmul(s.t(), View::new(d_samples, self.grid_len(), channels))
    }

    /// Per-degree channel mixing: rows of degree ℓ are multiplied by the
    /// `in × out` tap matrix of that degree. `taps` is `[ℓ][in][out]`.
    pub fn mix(&self, coeffs: &[f64], taps: &[f64], c_in: usize, c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.coeff_len() * c_out];
        for l in 0..self.bandwidth {
            let rows = l * l..(l + 1) * (l + 1);
            let n = rows.len();
            gemm(
                View::new(&coeffs[rows.start * c_in..rows.end * c_in], n, c_in),
                View::new(&taps[l * c_in * c_out..(l + 1) * c_in * c_out], c_in, c_out),
                &mut out[rows.start * c_out..rows.end * c_out],
                0.0,
            );
        }
        out
    }

    /// Gradients of [`Self::mix`] with respect to its coefficient input and
    /// its taps, given the output gradient.
    pub fn mix_backward(
        &self,
        coeffs: &[f64],
        taps: &[f64],
        d_out: &[f64],
        c_in: usize,
        c_out: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut d_coeffs = vec![0.0; self.coeff_len() * c_in];
        let mut d_taps = vec![0.0; taps.len()];
        for l in 0..self.bandwidth {
            let rows = l * l..(l + 1) * (l + 1);
            let n = rows.len();
            let tap = View::new(&taps[l * c_in * c_out..(l + 1) * c_in * c_out], c_in, c_out);
            let g_out = View::new(&d_out[rows.start * c_out..rows.end * c_out], n, c_out);
            let x = View::new(&coeffs[rows.start * c_in..rows.end * c_in], n, c_in);
            gemm(
                g_out,
                tap.t(),
                &mut d_coeffs[rows.start * c_in..rows.end * c_in],
                0.0,
            );
            gemm(
                x.t(),
                g_out,
                &mut d_taps[l * c_in * c_out..(l + 1) * c_in * c_out],
                0.0,
            );
        }
        (d_coeffs, d_taps)
    }

    /// Zonal convolution of `G × c_in` samples with `[ℓ][in][out]` taps.
    pub fn convolve(&self, x: &[f64], taps: &[f64], c_in: usize, c_out: usize) -> Vec<f64> {
        let coeffs = self.analyze(x, c_in);
        let mixed = self.mix(&coeffs, taps, c_in, c_out);
        self.synthesize(&mixed, c_out)
    }
}

/// Isotropic spherical filter: one real tap per degree and channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalFilter {
    bandwidth: usize,
    in_channels: usize,
    out_channels: usize,
    taps: Vec<f64>,
}

impl ZonalFilter {
    /// `taps` is laid out `[ℓ][in][out]`.
    pub fn new(
        bandwidth: usize,
        in_channels: usize,
        out_channels: usize,
        taps: Vec<f64>,
    ) -> Result<Self> {
        if taps.len() != bandwidth * in_channels * out_channels {
            return Err(Error::shape(format!(
                "{} taps for bandwidth {bandwidth}, {in_channels}->{out_channels} channels",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::DegenerateInput("non-finite filter tap".into()));
        }
        Ok(ZonalFilter {
            bandwidth,
            in_channels,
            out_channels,
            taps,
        })
    }

    /// Same-channel filter with one tap value per degree.
    pub fn diagonal(bandwidth: usize, channels: usize, per_degree: &[f64]) -> Result<Self> {
        let mut taps = vec![0.0; bandwidth * channels * channels];
        for (l, &v) in per_degree.iter().enumerate().take(bandwidth) {
            for c in 0..channels {
                taps[l * channels * channels + c * channels + c] = v;
            }
        }
        ZonalFilter::new(bandwidth, channels, channels, taps)
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// `coeffs_o(ℓ,m) = Σ_in tap(in, o, ℓ)·coeffs_in(ℓ,m)`, then synthesis.
pub fn zonal_conv(signal: &SphericalSignal, filter: &ZonalFilter) -> Result<SphericalSignal> {
    if signal.channels() != filter.in_channels {
        return Err(Error::shape(format!(
            "filter expects {} channels, signal has {}",
            filter.in_channels,
            signal.channels()
        )));
    }
    let grid = SphericalGrid::new(signal.width(), signal.height())?;
    let transform = SphericalTransform::new(&grid, filter.bandwidth)?;
    let out = transform.convolve(
        signal.values(),
        &filter.taps,
        filter.in_channels,
        filter.out_channels,
    );
    SphericalSignal::from_values(signal.width(), signal.height(), filter.out_channels, out)
}
