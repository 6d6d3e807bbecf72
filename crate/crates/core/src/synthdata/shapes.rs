use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{extent, SymmetrySpec, Vec3};

/// Procedural object category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Box,
    Cylinder,
    Ellipsoid,
    Mug,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Box,
        Category::Cylinder,
        Category::Ellipsoid,
        Category::Mug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Box => "box",
            Category::Cylinder => "cylinder",
            Category::Ellipsoid => "ellipsoid",
            Category::Mug => "mug",
        }
    }

    pub fn symmetry(self) -> SymmetrySpec {
        match self {
            Category::Cylinder => SymmetrySpec::Axial { axis: Vec3::z() },
            _ => SymmetrySpec::None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidCategory(s.to_string()))
    }
}

/// Dense colored surface sample of an object in canonical pose: centered on
/// its bounding box and scaled to a unit bounding-box diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModel {
    pub category: Category,
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub symmetry: SymmetrySpec,
}

impl CanonicalModel {
    /// Bounding-box extent; unit norm by construction.
    pub fn extent(&self) -> Vec3 {
        extent(&self.points)
    }
}

pub const MODEL_POINTS: usize = 4000;

/// Generates a model of `category` from `seed`.
pub fn gen_shape(category: Category, seed: u64) -> CanonicalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = match category {
        Category::Box => {
            let e = Vec3::new(
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.3..1.0),
            );
            box_surface(&e, MODEL_POINTS, &mut rng)
        }
        Category::Cylinder => {
            let r = rng.gen_range(0.2..0.5);
            let h = rng.gen_range(0.6..1.2);
            cylinder_surface(r, h, true, MODEL_POINTS, &mut rng)
        }
        Category::Ellipsoid => {
            let a = Vec3::new(
                rng.gen_range(0.25..0.5),
                rng.gen_range(0.15..0.3),
                rng.gen_range(0.35..0.6),
            );
            ellipsoid_surface(&a, MODEL_POINTS, &mut rng)
        }
        Category::Mug => {
            let r = rng.gen_range(0.3..0.4);
            let h = rng.gen_range(0.7..1.0);
            mug_surface(r, h, MODEL_POINTS, &mut rng)
        }
    };
    finish(category, points)
}

/// Box with the given edge lengths, before normalization.
pub fn gen_box(extents: Vec3, seed: u64) -> CanonicalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    finish(Category::Box, box_surface(&extents, MODEL_POINTS, &mut rng))
}

fn finish(category: Category, mut points: Vec<Vec3>) -> CanonicalModel {
    let (lo, hi) = bounds(&points);
    let center = (lo + hi) / 2.0;
    let diag = (hi - lo).norm();
    for p in &mut points {
        *p = (*p - center) / diag;
    }
    let half = (hi - lo) / (2.0 * diag);
    let colors = points
        .iter()
        .map(|p| color_of(category, p, &half))
        .collect();
    CanonicalModel {
        category,
        points,
        colors,
        symmetry: category.symmetry(),
    }
}

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Ramps over the canonical coordinates. The cylinder's texture depends on
/// height alone so that it keeps the shape's symmetry.
fn color_of(category: Category, p: &Vec3, half: &Vec3) -> [f64; 3] {
    let u = |i: usize| ((p[i] / half[i] + 1.0) / 2.0).clamp(0.0, 1.0);
    match category {
        Category::Cylinder => {
            let z = u(2);
            [z, 0.25 + 0.5 * z, 1.0 - z]
        }
        _ => [u(0), u(1), u(2)],
    }
}

fn box_surface(e: &Vec3, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let areas = [e.y * e.z, e.x * e.z, e.x * e.y];
    let total: f64 = 2.0 * areas.iter().sum::<f64>();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen::<f64>() * total;
            let mut axis = 0;
            while axis < 2 && pick >= 2.0 * areas[axis] {
                pick -= 2.0 * areas[axis];
                axis += 1;
            }
            let mut p = Vec3::new(
                (rng.gen::<f64>() - 0.5) * e.x,
                (rng.gen::<f64>() - 0.5) * e.y,
                (rng.gen::<f64>() - 0.5) * e.z,
            );
            p[axis] = if rng.gen::<bool>() { 0.5 } else { -0.5 } * e[axis];
            p
        })
        .collect()
}

fn cylinder_surface(r: f64, h: f64, top: bool, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let side = TAU * r * h;
    let cap = PI * r * r;
    let total = side + cap * if top { 2.0 } else { 1.0 };
    (0..n)
        .map(|_| {
            let pick = rng.gen::<f64>() * total;
            let phi = rng.gen::<f64>() * TAU;
            if pick < side {
                Vec3::new(r * phi.cos(), r * phi.sin(), (rng.gen::<f64>() - 0.5) * h)
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                let z = if pick < side + cap { -h / 2.0 } else { h / 2.0 };
                Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
            }
        })
        .collect()
}

fn ellipsoid_surface(a: &Vec3, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            let d = Vec3::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
            d.component_mul(a)
        })
        .collect()
}

/// Open-topped cylinder with a half-torus handle on the +x side.
fn mug_surface(r: f64, h: f64, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let n_handle = n / 5;
    let mut pts = cylinder_surface(r, h, false, n - n_handle, rng);
    let big = h * 0.3;
    let tube = r * 0.15;
    for _ in 0..n_handle {
        let a = rng.gen_range(-PI / 2.0..PI / 2.0);
        let b = rng.gen::<f64>() * TAU;
        let ring = big + tube * b.cos();
        pts.push(Vec3::new(r + ring * a.cos() - tube, tube * b.sin(), ring * a.sin()));
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_points_lie_on_the_shell() {
        let m = gen_box(Vec3::new(0.4, 0.2, 0.6), 3);
        let half = m.extent() / 2.0;
        assert!(m.points.len() >= 2000);
        for p in &m.points {
            let on_face = (0..3).any(|i| (p[i].abs() - half[i]).abs() < 1e-12);
            let inside = (0..3).all(|i| p[i].abs() <= half[i] + 1e-12);
            assert!(on_face && inside);
        }
        // Each face pair is sampled about equally on both sides.
        let c = crate::geometry::centroid(&m.points);
        assert!(c.norm() < 0.03);
        let e = m.extent();
        assert!((e.norm() - 1.0).abs() < 1e-12);
        assert!((e.x / e.y - 2.0).abs() < 1e-2 && (e.z / e.y - 3.0).abs() < 1e-2);
    }

    #[test]
    fn categories_and_symmetry() {
        assert_eq!(
            gen_shape(Category::Cylinder, 1).symmetry,
            SymmetrySpec::Axial { axis: Vec3::z() }
        );
        assert_eq!(gen_shape(Category::Mug, 1).symmetry, SymmetrySpec::None);
        assert!(matches!("teapot".parse::<Category>(), Err(Error::InvalidCategory(_))));
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
            let m = gen_shape(c, 9);
            assert!(m.points.len() >= 2000);
            assert!((m.extent().norm() - 1.0).abs() < 1e-12);
            assert!(m.colors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn same_seed_same_model() {
        for c in Category::ALL {
            assert_eq!(gen_shape(c, 42), gen_shape(c, 42));
            assert_ne!(gen_shape(c, 42).points, gen_shape(c, 43).points);
        }
    }
}
