//! Rotations, poses, and similarity alignment.
//!
//! Conventions: a pose `(R, t, s)` maps a canonical point `q` to the observed
//! point `p = ‖s‖·R·q + t`, and [`Pose::to_canonical`] is its exact inverse.
//! Angles are reported in degrees and lengths in meters.

use nalgebra::{Matrix3, Vector3, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) {
            return Err(Error::DegenerateInput(format!(
                "quaternion norm {n:e} is too small to normalize"
            )));
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Picks the representative of `±q` with `w ≥ 0`; when `w = 0` the first
    /// nonzero of `(x, y, z)` is made positive.
    pub fn canonicalize(self) -> Self {
        if hemisphere_sign(self.to_array()) < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }
}

/// `+1` if `q` already lies in the canonical hemisphere, `-1` otherwise.
pub fn hemisphere_sign(q: [f64; 4]) -> f64 {
    for c in q {
        if c > 0.0 {
            return 1.0;
        }
        if c < 0.0 {
            return -1.0;
        }
    }
    1.0
}

/// Rotation matrix of a (not necessarily unit) quaternion.
pub fn quat_to_rot(q: &Quaternion) -> Result<Mat3> {
    let Quaternion { w, x, y, z } = q.normalize()?;
    Ok(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Canonicalized quaternion of a rotation matrix (Shepperd's method).
pub fn rot_to_quat(r: &Mat3) -> Result<Quaternion> {
    check_rotation(r, 1e-6)?;
    let tr = r.trace();
    let q = if tr > r[(0, 0)].max(r[(1, 1)]).max(r[(2, 2)]) {
        let s = 2.0 * (1.0 + tr).sqrt();
        Quaternion::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] >= r[(1, 1)] && r[(0, 0)] >= r[(2, 2)] {
        let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
        Quaternion::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] >= r[(2, 2)] {
        let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
        Quaternion::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
        Quaternion::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    Ok(q.normalize()?.canonicalize())
}

/// Fails with [`Error::InvalidRotation`] unless `RᵀR = I` and `det R = 1`
/// within `tol`.
pub fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    let err = ortho.max(det);
    if !(err <= tol) {
        return Err(Error::InvalidRotation(err));
    }
    Ok(())
}

/// Rotation by `angle` radians about the unit `axis` (Rodrigues).
pub fn rotation_about(axis: &Vec3, angle: f64) -> Mat3 {
    let a = axis.normalize();
    let k = a.cross_matrix();
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Uniformly distributed rotation (Shoemake's quaternion sampling).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    quat_to_rot(&q).expect("unit quaternion")
}

/// Rotation, translation and size of an object; equivalently an oriented box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub size: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3, size: Vec3) -> Self {
        Pose {
            rotation,
            translation,
            size,
        }
    }

    fn scale(&self) -> Result<f64> {
        let n = self.size.norm();
        if !(n > 1e-9) {
            return Err(Error::DegenerateScale(format!("size norm {n:e}")));
        }
        Ok(n)
    }

    /// `q = Rᵀ(p − t) / ‖s‖`.
    pub fn to_canonical(&self, p: &Vec3) -> Result<Vec3> {
        let n = self.scale()?;
        Ok(self.rotation.transpose() * (p - self.translation) / n)
    }

    /// `p = ‖s‖·R·q + t`.
    pub fn from_canonical(&self, q: &Vec3) -> Result<Vec3> {
        let n = self.scale()?;
        Ok(self.rotation * q * n + self.translation)
    }
}

/// Non-empty list of finite 3-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet(Vec<Vec3>);

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateInput("empty point set".into()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateInput("non-finite coordinate".into()));
        }
        Ok(PointSet(points))
    }

    pub fn points(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.0)
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let sum: Vec3 = points.iter().sum();
    sum / points.len() as f64
}

/// Rotational symmetry of an object category.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SymmetrySpec {
    #[default]
    None,
    /// Invariant under any rotation about `axis` (canonical frame).
    Axial { axis: Vec3 },
}

impl SymmetrySpec {
    pub fn axial(axis: Vec3) -> Result<Self> {
        let n = axis.norm();
        if !(n > 1e-12) {
            return Err(Error::DegenerateInput("zero symmetry axis".into()));
        }
        Ok(SymmetrySpec::Axial { axis: axis / n })
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, SymmetrySpec::Axial { .. })
    }
}

/// Result of [`umeyama`]: `dst ≈ scale·R·src + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares similarity transform taking `src` onto `dst` (Umeyama 1991).
pub fn umeyama(src: &[Vec3], dst: &[Vec3]) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::shape(format!(
            "umeyama needs corresponded sets, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::AlignmentUnderdetermined(format!(
            "{n} correspondences, need at least 3"
        )));
    }
    let mu_src = centroid(src);
    let mu_dst = centroid(dst);
    let mut cov = Mat3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let ds = s - mu_src;
        let dd = d - mu_dst;
        cov += dd * ds.transpose();
        var_src += ds.norm_squared();
    }
    cov /= n as f64;
    var_src /= n as f64;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::AlignmentUnderdetermined(
                "SVD did not converge".into(),
            ))
        }
    };
    let sv = svd.singular_values;
    let largest = sv.max();
    // nalgebra does not sort singular values.
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(largest > 0.0) || sorted[1] <= 1e-12 * largest || var_src <= 1e-300 {
        return Err(Error::AlignmentUnderdetermined(
            "source covariance has rank < 2".into(),
        ));
    }

    let mut sign = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Flip the direction of the smallest singular value.
        let (imin, _) = sv.argmin();
        sign[(imin, imin)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let trace_ds: f64 = (0..3).map(|i| sv[i] * sign[(i, i)]).sum();
    let scale = trace_ds / var_src;
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale(format!(
            "alignment produced scale {scale:e}"
        )));
    }
    let translation = mu_dst - rotation * mu_src * scale;
    Ok(Similarity {
        rotation,
        translation,
        scale,
    })
}

/// Size vector `c·e`, where `e` is the componentwise extent of `canonical`.
pub fn size_from_canonical(canonical: &[Vec3], scale: f64) -> Vec3 {
    extent(canonical) * scale
}

/// Componentwise `max − min`; zero for an empty slice.
pub fn extent(points: &[Vec3]) -> Vec3 {
    let Some(first) = points.first() else {
        return Vec3::zeros();
    };
    let (lo, hi) = points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    });
    hi - lo
}

/// Rotation error in degrees. For axial symmetry the error is the angle
/// between the two rotated symmetry axes.
pub fn rotation_error(r1: &Mat3, r2: &Mat3, sym: &SymmetrySpec) -> f64 {
    // atan2 forms of arccos((tr(R1ᵀR2) − 1)/2) and arccos(⟨R1a, R2a⟩); they
    // keep full precision near zero.
    let angle = match sym {
        SymmetrySpec::None => {
            let m = r1.transpose() * r2;
            let skew = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
            (skew.norm() / 2.0).atan2((m.trace() - 1.0) / 2.0)
        }
        SymmetrySpec::Axial { axis } => {
            let (a, b) = (r1 * axis, r2 * axis);
            a.cross(&b).norm().atan2(a.dot(&b))
        }
    };
    angle.to_degrees()
}

/// Yaw angle `θ` about `axis` maximizing `tr(R · Rot(axis, θ))`.
fn best_symmetric_angle(r: &Mat3, axis: &Vec3) -> f64 {
    let a = axis;
    let ara = a.dot(&(r * a));
    let cos_coef = r.trace() - ara;
    let sin_coef = (r * a.cross_matrix()).trace();
    if cos_coef.abs() < 1e-15 && sin_coef.abs() < 1e-15 {
        return 0.0;
    }
    sin_coef.atan2(cos_coef)
}

/// Representative of `{R·Rot(axis, θ)}` closest to the identity; the
/// identity for asymmetric objects. Used to make regression targets of
/// symmetric objects single-valued.
pub fn canonical_symmetric_rotation(r: &Mat3, sym: &SymmetrySpec) -> Mat3 {
    match sym {
        SymmetrySpec::None => *r,
        SymmetrySpec::Axial { axis } => r * rotation_about(axis, best_symmetric_angle(r, axis)),
    }
}

/// Representative of `{pred·Rot(axis, θ)}` closest to `reference`.
pub fn align_symmetric_rotation(pred: &Mat3, reference: &Mat3, sym: &SymmetrySpec) -> Mat3 {
    match sym {
        SymmetrySpec::None => *pred,
        SymmetrySpec::Axial { axis } => {
            let rel = reference.transpose() * pred;
            pred * rotation_about(axis, best_symmetric_angle(&rel, axis))
        }
    }
}
