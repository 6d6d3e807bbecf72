use crate::geometry::{Mat3, Pose, Vec3};

/// Box with center `t`, axes the columns of `R` and edge lengths `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub rotation: Mat3,
    pub extents: Vec3,
}

impl OrientedBox {
    pub fn from_pose(pose: &Pose) -> Self {
        OrientedBox {
            center: pose.translation,
            rotation: pose.rotation,
            extents: pose.size.map(f64::abs),
        }
    }

    pub fn volume(&self) -> f64 {
        self.extents.x * self.extents.y * self.extents.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sign = Vec3::new(
                if i & 1 == 0 { -0.5 } else { 0.5 },
                if i & 2 == 0 { -0.5 } else { 0.5 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            );
            *c = self.center + self.rotation * sign.component_mul(&self.extents);
        }
        out
    }

    /// Faces as counter-clockwise (outward) vertex loops.
    fn faces(&self) -> Vec<Vec<Vec3>> {
        let c = self.corners();
        [
            [0, 2, 6, 4],
            [1, 5, 7, 3],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 1, 3, 2],
            [4, 6, 7, 5],
        ]
        .iter()
        .map(|f| f.iter().map(|&i| c[i]).collect())
        .collect()
    }

    /// Outward half-spaces `n·x ≤ d`.
    fn half_spaces(&self) -> [(Vec3, f64); 6] {
        let mut out = [(Vec3::zeros(), 0.0); 6];
        for axis in 0..3 {
            let n = self.rotation.column(axis).into_owned();
            let h = self.extents[axis] / 2.0;
            let c = n.dot(&self.center);
            out[2 * axis] = (n, c + h);
            out[2 * axis + 1] = (-n, -c + h);
        }
        out
    }
}

const EPS: f64 = 1e-11;

/// Clips a convex polytope, given by its faces, to `n·x ≤ d`.
fn clip(faces: Vec<Vec<Vec3>>, n: &Vec3, d: f64) -> Vec<Vec<Vec3>> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap: Vec<Vec3> = Vec::new();
    let mut coplanar = false;
    for face in faces {
        coplanar |= face.iter().all(|v| (n.dot(v) - d).abs() <= EPS);
        let mut poly = Vec::with_capacity(face.len() + 2);
        for i in 0..face.len() {
            let (a, b) = (face[i], face[(i + 1) % face.len()]);
            let (da, db) = (n.dot(&a) - d, n.dot(&b) - d);
            if da <= EPS {
                poly.push(a);
                if da.abs() <= EPS {
                    cap.push(a);
                }
            }
            if (da > EPS && db < -EPS) || (da < -EPS && db > EPS) {
                let p = a + (b - a) * (da / (da - db));
                poly.push(p);
                cap.push(p);
            }
        }
        if poly.len() >= 3 {
            out.push(poly);
        }
    }
    if !coplanar {
        if let Some(cap) = order_cap(cap, n) {
            out.push(cap);
        }
    }
    out
}

/// Unique points of the cutting plane sorted counter-clockwise about `n`.
fn order_cap(points: Vec<Vec3>, n: &Vec3) -> Option<Vec<Vec3>> {
    let mut unique: Vec<Vec3> = Vec::new();
    for p in points {
        if unique.iter().all(|q| (q - p).norm() > 1e-10) {
            unique.push(p);
        }
    }
    if unique.len() < 3 {
        return None;
    }
    let center = unique.iter().sum::<Vec3>() / unique.len() as f64;
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    unique.sort_by(|a, b| {
        let (da, db) = (a - center, b - center);
        da.dot(&v)
            .atan2(da.dot(&u))
            .total_cmp(&db.dot(&v).atan2(db.dot(&u)))
    });
    Some(unique)
}

fn polytope_volume(faces: &[Vec<Vec3>]) -> f64 {
    let verts: Vec<&Vec3> = faces.iter().flatten().collect();
    if verts.is_empty() {
        return 0.0;
    }
    let o = verts.iter().copied().sum::<Vec3>() / verts.len() as f64;
    let mut vol = 0.0;
    for f in faces {
        for i in 1..f.len() - 1 {
            vol += (f[0] - o).dot(&(f[i] - o).cross(&(f[i + 1] - o))).abs() / 6.0;
        }
    }
    vol
}

/// Volume of the intersection of two boxes.
pub fn intersection_volume(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let mut faces = b.faces();
    for (n, d) in a.half_spaces() {
        faces = clip(faces, &n, d);
        if faces.len() < 4 {
            return 0.0;
        }
    }
    polytope_volume(&faces)
}

/// Intersection over union of two oriented boxes.
pub fn iou3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    let inter = intersection_volume(a, b).min(va).min(vb);
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, rotation_about};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(center: Vec3) -> OrientedBox {
        OrientedBox {
            center,
            rotation: Mat3::identity(),
            extents: Vec3::repeat(1.0),
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
        OrientedBox {
            center: Vec3::from_fn(|_, _| rng.gen_range(-0.3..0.3)),
            rotation: random_rotation(rng),
            extents: Vec3::from_fn(|_, _| rng.gen_range(0.2..1.0)),
        }
    }

    #[test]
    fn identical_and_offset_cubes() {
        let a = cube(Vec3::zeros());
        assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
        let b = cube(Vec3::new(0.5, 0.0, 0.0));
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou3d(&a, &cube(Vec3::new(2.0, 0.0, 0.0))), 0.0);
    }

    #[test]
    fn rotated_cube_against_hand_volume() {
        // A cube turned 45° about z against itself: the overlap is an
        // octagonal prism of area 2(√2 − 1).
        let a = cube(Vec3::zeros());
        let b = OrientedBox {
            rotation: rotation_about(&Vec3::z(), std::f64::consts::FRAC_PI_4),
            ..a
        };
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!((intersection_volume(&a, &b) - inter).abs() < 1e-12);
        assert!((iou3d(&a, &b) - inter / (2.0 - inter)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (a, b) = (random_box(&mut rng), random_box(&mut rng));
            let ab = iou3d(&a, &b);
            assert!((ab - iou3d(&b, &a)).abs() < 1e-12);
            let g = random_rotation(&mut rng);
            let t = Vec3::new(1.0, -2.0, 0.5);
            let move_box = |x: &OrientedBox| OrientedBox {
                center: g * x.center + t,
                rotation: g * x.rotation,
                extents: x.extents,
            };
            assert!((ab - iou3d(&move_box(&a), &move_box(&b))).abs() < 1e-9);
        }
    }

    #[test]
    fn contained_box_gives_volume_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let outer = OrientedBox {
                center: Vec3::zeros(),
                rotation: random_rotation(&mut rng),
                extents: Vec3::repeat(2.0),
            };
            let inner = OrientedBox {
                center: outer.rotation * Vec3::from_fn(|_, _| rng.gen_range(-0.2..0.2)),
                rotation: random_rotation(&mut rng),
                extents: Vec3::from_fn(|_, _| rng.gen_range(0.1..0.8)),
            };
            let expected = inner.volume() / outer.volume();
            assert!((iou3d(&outer, &inner) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn agrees_with_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (a, b) = (random_box(&mut rng), random_box(&mut rng));
            let mc = monte_carlo_iou(&a, &b, 200_000, &mut rng);
            assert!((iou3d(&a, &b) - mc).abs() < 6e-3);
        }
    }

    pub(crate) fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, n: usize, rng: &mut impl Rng) -> f64 {
        let inside = |x: &OrientedBox, p: &Vec3| {
            let local = x.rotation.transpose() * (p - x.center);
            (0..3).all(|i| local[i].abs() <= x.extents[i] / 2.0)
        };
        let corners: Vec<Vec3> = a.corners().into_iter().chain(b.corners()).collect();
        let lo = corners.iter().fold(Vec3::repeat(f64::INFINITY), |m, c| m.inf(c));
        let hi = corners.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |m, c| m.sup(c));
        let (mut both, mut either) = (0usize, 0usize);
        for _ in 0..n {
            let p = Vec3::from_fn(|i, _| rng.gen_range(lo[i]..hi[i]));
            let (ia, ib) = (inside(a, &p), inside(b, &p));
            both += (ia && ib) as usize;
            either += (ia || ib) as usize;
        }
        if either == 0 {
            0.0
        } else {
            both as f64 / either as f64
        }
    }
}
