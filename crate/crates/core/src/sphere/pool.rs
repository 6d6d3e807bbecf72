use std::sync::Arc;

use super::{SphericalGrid, SphericalSignal};
use crate::error::{Error, Result};

/// 2×2 weighted average pooling from a `W × H` grid to `W/2 × H/2`.
///
/// Each output cell is the quadrature-weighted mean of its four input cells.
/// Weights depend only on the ring, so a pair of rings `(2h, 2h+1)` carries
/// normalized weights `(a_h, b_h)` with `a_h + b_h = 1/2` per column.
#[derive(Debug, Clone)]
pub struct PoolSpec {
    in_width: usize,
    in_height: usize,
    /// Normalized weight of each input ring within its output cell, already
    /// split across the two columns.
    ring_factor: Vec<f64>,
}

impl PoolSpec {
    pub fn new(grid: &SphericalGrid) -> Result<Arc<Self>> {
        let (w, h) = (grid.width(), grid.height());
        if w % 2 != 0 || h % 2 != 0 {
            return Err(Error::InvalidGrid(format!("cannot pool a {w}x{h} grid")));
        }
        let rw = grid.ring_weights();
        let mut ring_factor = vec![0.0; h];
        for pair in 0..h / 2 {
            let total = 2.0 * (rw[2 * pair] + rw[2 * pair + 1]);
            ring_factor[2 * pair] = rw[2 * pair] / total;
            ring_factor[2 * pair + 1] = rw[2 * pair + 1] / total;
        }
        Ok(Arc::new(PoolSpec {
            in_width: w,
            in_height: h,
            ring_factor,
        }))
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn in_height(&self) -> usize {
        self.in_height
    }

    pub fn out_width(&self) -> usize {
        self.in_width / 2
    }

    pub fn out_height(&self) -> usize {
        self.in_height / 2
    }

    /// Pools `G × C` samples.
    pub fn forward(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let ow = self.out_width();
        let mut out = vec![0.0; ow * self.out_height() * channels];
        for h in 0..self.in_height {
            let f = self.ring_factor[h];
            for w in 0..self.in_width {
                let src = (h * self.in_width + w) * channels;
                let dst = ((h / 2) * ow + w / 2) * channels;
                for c in 0..channels {
                    out[dst + c] += f * x[src + c];
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::forward`].
    pub fn backward(&self, d_out: &[f64], channels: usize) -> Vec<f64> {
        let ow = self.out_width();
        let mut d_in = vec![0.0; self.in_width * self.in_height * channels];
        for h in 0..self.in_height {
            let f = self.ring_factor[h];
            for w in 0..self.in_width {
                let src = (h * self.in_width + w) * channels;
                let dst = ((h / 2) * ow + w / 2) * channels;
                for c in 0..channels {
                    d_in[src + c] = f * d_out[dst + c];
                }
            }
        }
        d_in
    }
}

pub fn weighted_avg_pool(signal: &SphericalSignal) -> Result<SphericalSignal> {
    let grid = SphericalGrid::new(signal.width(), signal.height())?;
    let spec = PoolSpec::new(&grid)?;
    let out = spec.forward(signal.values(), signal.channels());
    SphericalSignal::from_values(spec.out_width(), spec.out_height(), signal.channels(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::rotate_signal_azimuthal;

    #[test]
    fn constant_stays_constant() {
        let grid = SphericalGrid::new(16, 8).unwrap();
        let s = SphericalSignal::from_fn(&grid, 2, |_, _| 5.0);
        let p = weighted_avg_pool(&s).unwrap();
        assert_eq!((p.width(), p.height(), p.channels()), (8, 4, 2));
        assert!(p.values().iter().all(|v| (v - 5.0).abs() < 1e-15));
    }

    #[test]
    fn single_cell_hand_quadrature() {
        let grid = SphericalGrid::new(4, 4).unwrap();
        let mut s = SphericalSignal::zeros(&grid, 1);
        s.set(1, 2, 0, 3.0);
        let p = weighted_avg_pool(&s).unwrap();
        let w = grid.ring_weights();
        // Output cell (0, 1) averages rings 0,1 and columns 2,3.
        let expected = w[1] / (2.0 * w[0] + 2.0 * w[1]) * 3.0;
        let nonzero: Vec<(usize, f64)> = p
            .values()
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, 1);
        assert!((nonzero[0].1 - expected).abs() < 1e-15);
    }

    #[test]
    fn commutes_with_even_shifts() {
        let grid = SphericalGrid::new(16, 16).unwrap();
        let s = SphericalSignal::from_fn(&grid, 3, |d, c| d.x * d.y + c as f64 * d.z.powi(3) + d.x);
        for k in [2i64, 4, 6, -2] {
            let a = weighted_avg_pool(&rotate_signal_azimuthal(&s, k)).unwrap();
            let b = rotate_signal_azimuthal(&weighted_avg_pool(&s).unwrap(), k / 2);
            assert!(a.max_abs_diff(&b) < 1e-15);
        }
    }

    #[test]
    fn odd_resolution_is_rejected() {
        let s = SphericalSignal::from_values(6, 4, 1, vec![0.0; 24]).unwrap();
        // A 6x4 grid pools to 3x2, which is not a valid grid itself.
        assert!(weighted_avg_pool(&s).is_ok());
        let odd = SphericalSignal::from_values(5, 4, 1, vec![0.0; 20]).unwrap();
        assert!(matches!(weighted_avg_pool(&odd), Err(Error::InvalidGrid(_))));
    }
}
