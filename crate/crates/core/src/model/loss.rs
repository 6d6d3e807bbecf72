use super::network::{Heads, Prepared};
use crate::error::{Error, Result};
use crate::geometry::{
    canonical_symmetric_rotation, rot_to_quat, Pose, SymmetrySpec, Vec3,
};
use crate::nn::{Graph, Tensor, Var};

/// Loss terms of one batch, each a batch mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub explicit: f64,
    pub implicit: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(explicit: f64, implicit: f64, lambda: f64) -> Self {
        LossBreakdown {
            explicit,
            implicit,
            lambda,
            total: explicit + lambda * implicit,
        }
    }
}

/// Regression targets of one crop. Symmetric objects use the rotation of
/// their symmetry class closest to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub quat: [f64; 4],
    pub delta_t: Vec3,
    pub size: Vec3,
    /// `N × 3` canonical coordinates of the crop points.
    pub canonical: Tensor,
}

pub fn canonical_pose(pose: &Pose, symmetry: &SymmetrySpec) -> Pose {
    Pose::new(
        canonical_symmetric_rotation(&pose.rotation, symmetry),
        pose.translation,
        pose.size,
    )
}

impl Targets {
    pub fn new(prep: &Prepared, gt: &Pose, symmetry: &SymmetrySpec) -> Result<Self> {
        let gt = canonical_pose(gt, symmetry);
        let canonical = prep
            .points
            .iter()
            .map(|p| gt.to_canonical(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Targets {
            quat: rot_to_quat(&gt.rotation)?.to_array(),
            delta_t: gt.translation - prep.centroid,
            size: gt.size,
            canonical: Tensor::matrix(
                canonical.len(),
                3,
                canonical.iter().flat_map(|q| [q.x, q.y, q.z]).collect(),
            )?,
        })
    }
}

fn side_of(q: &[f64], target: &[f64; 4]) -> f64 {
    let dot: f64 = q.iter().zip(target).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn row3(v: &Vec3) -> Tensor {
    Tensor::row(vec![v.x, v.y, v.z])
}

/// `‖ρ̂ − ρ*‖ + ‖Δt − Δt*‖ + ‖s − s*‖` with `ρ̂` the normalized prediction,
/// sign-flipped onto the target's side so that `±ρ̂` cost the same.
pub fn explicit_loss(g: &mut Graph, heads: &Heads, t: &Targets) -> Result<Var> {
    let norm = g.l2_norm(heads.rot)?;
    let inv = g.recip(norm)?;
    let unit = g.scale_by(heads.rot, inv)?;
    let sign = side_of(g.value(unit).data(), &t.quat);
    let unit = g.scale(unit, sign)?;
    let target = g.input(Tensor::row(t.quat.to_vec()))?;
    let dq = g.sub(unit, target)?;
    let lq = g.l2_norm(dq)?;

    let target = g.input(row3(&t.delta_t))?;
    let dt = g.sub(heads.delta_t, target)?;
    let lt = g.l2_norm(dt)?;

    let target = g.input(row3(&t.size))?;
    let ds = g.sub(heads.size, target)?;
    let ls = g.l2_norm(ds)?;

    let a = g.add(lq, lt)?;
    g.add(a, ls)
}

/// Mean point-wise distance of `q` (`N × 3`) to the canonical targets.
pub fn implicit_loss(g: &mut Graph, q: Var, t: &Targets) -> Result<Var> {
    let target = g.input(t.canonical.clone())?;
    let d = g.sub(q, target)?;
    let norms = g.row_norms(d)?;
    g.mean(norms)
}

/// `(1/N) Σ ‖q_i − Rᵀ(p_i − t)/‖s‖‖` with `(R, t, s)` from the explicit heads.
pub fn consistency_loss(g: &mut Graph, heads: &Heads, q: Var, centered: Var) -> Result<Var> {
    let r = g.quat_to_rot(heads.rot)?;
    let shifted = g.sub_row(centered, heads.delta_t)?;
    let rotated = g.matmul(shifted, r)?;
    let scale = g.l2_norm(heads.size)?;
    if !(g.value(scale).item() > 1e-9) {
        return Err(Error::DegenerateScale(format!(
            "predicted size norm {:e}",
            g.value(scale).item()
        )));
    }
    let inv = g.recip(scale)?;
    let canonical = g.scale_by(rotated, inv)?;
    let d = g.sub(q, canonical)?;
    let norms = g.row_norms(d)?;
    g.mean(norms)
}

/// Explicit loss of a numeric prediction against `gt`.
pub fn loss_explicit(pred_quat: [f64; 4], pred: &Pose, gt: &Pose, symmetry: &SymmetrySpec) -> Result<f64> {
    let gt = canonical_pose(gt, symmetry);
    let target = rot_to_quat(&gt.rotation)?.to_array();
    let n = pred_quat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(Error::DegenerateInput("zero-norm quaternion".into()));
    }
    let unit = pred_quat.map(|v| v / n);
    let sign = side_of(&unit, &target);
    let lq = unit
        .iter()
        .zip(target)
        .map(|(a, b)| (sign * a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(lq + (pred.translation - gt.translation).norm() + (pred.size - gt.size).norm())
}

/// Mean distance of `q` to the canonical transform of `p` under `gt`.
pub fn loss_implicit(q: &[Vec3], p: &[Vec3], gt: &Pose, symmetry: &SymmetrySpec) -> Result<f64> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::shape(format!("{} canonical points for {} observed", q.len(), p.len())));
    }
    let gt = canonical_pose(gt, symmetry);
    let mut sum = 0.0;
    for (qi, pi) in q.iter().zip(p) {
        sum += (qi - gt.to_canonical(pi)?).norm();
    }
    Ok(sum / q.len() as f64)
}
