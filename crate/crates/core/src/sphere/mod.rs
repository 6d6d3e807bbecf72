//! Equiangular spherical grids and signals sampled on them.
//!
//! Grid index `g = h·W + w`: `h` runs over polar rings (θ from the north
//! pole) and `w` over azimuth. Signal values are stored `[g][channel]`, so a
//! flattened signal is ordered h-major, then w, then channel.

mod harmonics;
mod pool;

use std::f64::consts::{PI, TAU};

pub use harmonics::{
    legendre_normalized, sht_forward, sht_inverse, zonal_conv, SpectralCoeffs,
    SphericalTransform, ZonalFilter,
};
pub use pool::{weighted_avg_pool, PoolSpec};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    width: usize,
    height: usize,
    directions: Vec<Vec3>,
    ring_weights: Vec<f64>,
}

impl SphericalGrid {
    /// Builds a `width × height` grid with polar angles `π(h + ½)/H` and
    /// azimuths `2πw/W`.
    ///
    /// Ring weights are Fejér's first-rule weights in `cos θ` times `2π/W`,
    /// so the quadrature integrates band-limited products exactly and the
    /// constant signal integrates to `4π`.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 4 || height < 4 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "resolution {width}x{height} must be even and at least 4"
            )));
        }
        let mut directions = Vec::with_capacity(width * height);
        for h in 0..height {
            let theta = polar_angle(h, height);
            for w in 0..width {
                let phi = TAU * w as f64 / width as f64;
                directions.push(Vec3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                ));
            }
        }
        let ring_weights = fejer_weights(height)
            .into_iter()
            .map(|v| v * TAU / width as f64)
            .collect();
        Ok(SphericalGrid {
            width,
            height,
            directions,
            ring_weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    /// Quadrature weight of every cell on ring `h`.
    pub fn ring_weights(&self) -> &[f64] {
        &self.ring_weights
    }

    pub fn cell_weight(&self, g: usize) -> f64 {
        self.ring_weights[g / self.width]
    }

    pub fn polar(&self, h: usize) -> f64 {
        polar_angle(h, self.height)
    }

    pub fn azimuth(&self, w: usize) -> f64 {
        TAU * w as f64 / self.width as f64
    }

    /// Largest bandwidth whose transforms are exact on this grid.
    pub fn max_bandwidth(&self) -> usize {
        self.width.min(self.height) / 2
    }

    /// Cell containing direction `d`. Polar bins are `[πh/H, π(h+1)/H)`,
    /// azimuth bins are centered on their sample azimuth; both half-open.
    pub fn bin_of(&self, d: &Vec3) -> usize {
        let n = d.norm();
        let theta = (d.z / n).clamp(-1.0, 1.0).acos();
        let h = ((theta / PI * self.height as f64).floor() as usize).min(self.height - 1);
        let mut phi = d.y.atan2(d.x);
        let half = PI / self.width as f64;
        phi += half;
        if phi < 0.0 {
            phi += TAU;
        }
        let w = ((phi / TAU * self.width as f64).floor() as usize) % self.width;
        h * self.width + w
    }

    /// `Σ_g weight_g · f_g` for a single-channel slice.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(g, v)| self.cell_weight(g) * v)
            .sum()
    }
}

fn polar_angle(h: usize, height: usize) -> f64 {
    PI * (h as f64 + 0.5) / height as f64
}

/// Fejér's first quadrature rule on `[-1, 1]` at nodes `cos(π(h+½)/n)`.
fn fejer_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|h| {
            let theta = polar_angle(h, n);
            let tail: f64 = (1..=n / 2)
                .map(|k| {
                    let k = k as f64;
                    (2.0 * k * theta).cos() / (4.0 * k * k - 1.0)
                })
                .sum();
            2.0 / n as f64 * (1.0 - 2.0 * tail)
        })
        .collect()
}

/// `W × H × d` samples of a function on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSignal {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl SphericalSignal {
    pub fn zeros(grid: &SphericalGrid, channels: usize) -> Self {
        SphericalSignal {
            width: grid.width,
            height: grid.height,
            channels,
            values: vec![0.0; grid.len() * channels],
        }
    }

    pub fn from_values(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || values.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height}x{channels} signal",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite signal value".into()));
        }
        Ok(SphericalSignal {
            width,
            height,
            channels,
            values,
        })
    }

    /// Samples `f(direction)` at every cell.
    pub fn from_fn(
        grid: &SphericalGrid,
        channels: usize,
        mut f: impl FnMut(&Vec3, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(grid.len() * channels);
        for d in grid.directions() {
            for c in 0..channels {
                values.push(f(d, c));
            }
        }
        SphericalSignal {
            width: grid.width,
            height: grid.height,
            channels,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> f64 {
        self.values[(h * self.width + w) * self.channels + c]
    }

    pub fn set(&mut self, h: usize, w: usize, c: usize, v: f64) {
        self.values[(h * self.width + w) * self.channels + c] = v;
    }

    /// Values of one channel in grid order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn matches_grid(&self, grid: &SphericalGrid) -> bool {
        self.width == grid.width && self.height == grid.height
    }

    pub fn max_abs_diff(&self, other: &SphericalSignal) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rotation about the z axis by `2πk/W`: a cyclic shift of the azimuth axis.
pub fn rotate_signal_azimuthal(signal: &SphericalSignal, k: i64) -> SphericalSignal {
    let mut out = signal.clone();
    let w_count = signal.width as i64;
    let c = signal.channels;
    for h in 0..signal.height {
        for w in 0..signal.width {
            let dst = (w as i64 + k).rem_euclid(w_count) as usize;
            let src_off = (h * signal.width + w) * c;
            let dst_off = (h * signal.width + dst) * c;
            out.values[dst_off..dst_off + c].copy_from_slice(&signal.values[src_off..src_off + c]);
        }
    }
    out
}

/// Spherical encoding of a colored point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSignals {
    /// Color of the farthest point per cell, 3 channels.
    pub color: SphericalSignal,
    /// Distance of the farthest point per cell, 1 channel.
    pub radial: SphericalSignal,
    pub centroid: Vec3,
}

/// Casts the grid's rays from the centroid of `points` and keeps, per cell,
/// the farthest point (distance and color). Empty cells are zero. Points that
/// coincide with the centroid have no direction and are skipped; distance
/// ties keep the lowest point index.
pub fn convert_to_spherical(
    points: &[Vec3],
    colors: &[[f64; 3]],
    grid: &SphericalGrid,
) -> Result<CropSignals> {
    if points.is_empty() {
        return Err(Error::DegenerateInput("crop has no points".into()));
    }
    if colors.len() != points.len() {
        return Err(Error::shape(format!(
            "{} colors for {} points",
            colors.len(),
            points.len()
        )));
    }
    let centroid = crate::geometry::centroid(points);
    let mut best: Vec<Option<(f64, usize)>> = vec![None; grid.len()];
    for (i, p) in points.iter().enumerate() {
        let d = p - centroid;
        let r = d.norm();
        if r == 0.0 {
            continue;
        }
        let g = grid.bin_of(&d);
        match best[g] {
            Some((r_best, _)) if r <= r_best => {}
            _ => best[g] = Some((r, i)),
        }
    }
    let mut color = SphericalSignal::zeros(grid, 3);
    let mut radial = SphericalSignal::zeros(grid, 1);
    for (g, slot) in best.iter().enumerate() {
        if let Some((r, i)) = slot {
            radial.values[g] = *r;
            color.values[g * 3..g * 3 + 3].copy_from_slice(&colors[*i]);
        }
    }
    Ok(CropSignals {
        color,
        radial,
        centroid,
    })
}
