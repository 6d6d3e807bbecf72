use super::config::RefineConfig;
use super::loss::consistency_loss;
use super::network::{explicit_pose, DualPoseNet, Outputs, Prepared};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::nn::{AdamState, Graph, ParamStore};
use crate::synthdata::Crop;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// Explicit pose of the lowest-loss iterate.
    pub pose: Pose,
    /// Parameter updates performed.
    pub iterations: usize,
    /// Consistency loss of the returned iterate.
    pub loss: f64,
    pub initial_loss: f64,
    /// Loss before each update, then the loss after the last one.
    pub trace: Vec<f64>,
}

fn refine_fault(e: Error) -> Error {
    match e {
        Error::NonFinite { .. } | Error::DegenerateScale(_) | Error::DegenerateInput(_) => {
            Error::RefineFault(e.to_string())
        }
        other => other,
    }
}

/// Consistency loss, explicit pose and parameter gradients at `params`.
fn evaluate(
    net: &DualPoseNet,
    params: &ParamStore,
    prep: &Prepared,
    want_grads: bool,
) -> Result<(f64, Pose, Option<Vec<Option<crate::nn::Tensor>>>)> {
    let mut g = Graph::new();
    let pv = net.bind(&mut g, params)?;
    let (f, _) = net.encode(&mut g, &pv, prep)?;
    let heads = net.explicit(&mut g, &pv, f)?;
    let points = g.input(prep.normalized.clone())?;
    let q = net.implicit(&mut g, &pv, f, points)?;
    let centered = g.input(prep.centered.clone())?;
    let loss = consistency_loss(&mut g, &heads, q, centered)?;
    let v = |var| g.value(var).data().to_vec();
    let (quat, dt, size) = (v(heads.rot), v(heads.delta_t), v(heads.size));
    let out = Outputs {
        feature: Vec::new(),
        quat: [quat[0], quat[1], quat[2], quat[3]],
        delta_t: Vec3::new(dt[0], dt[1], dt[2]),
        size: Vec3::new(size[0], size[1], size[2]),
        canonical: Vec::new(),
    };
    let pose = explicit_pose(&out, &prep.centroid)?;
    let grads = if want_grads {
        Some(g.backward(loss)?.param_grads(params))
    } else {
        None
    };
    Ok((g.value(loss).item(), pose, grads))
}

/// Consistency loss of the current model on a crop.
pub fn consistency(net: &DualPoseNet, crop: &Crop) -> Result<f64> {
    let prep = net.prepare(crop)?;
    evaluate(net, net.params(), &prep, false)
        .map(|r| r.0)
        .map_err(refine_fault)
}

/// Fine-tunes a private copy of the encoder so that both decoders agree on
/// `crop`. The model itself is left untouched.
pub fn refine(net: &DualPoseNet, crop: &Crop, cfg: &RefineConfig) -> Result<RefineOutcome> {
    refine_with_params(net, crop, cfg).map(|r| r.0)
}

/// [`refine`], also returning the final parameter copy.
pub fn refine_with_params(
    net: &DualPoseNet,
    crop: &Crop,
    cfg: &RefineConfig,
) -> Result<(RefineOutcome, ParamStore)> {
    cfg.validate()?;
    let prep = net.prepare(crop)?;
    let mut params = net.params().clone();
    let mask = net.group_mask("encoder.");
    let mut adam = AdamState::new(&params);
    let mut trace = Vec::new();
    let mut best: Option<(f64, Pose)> = None;
    let mut initial = f64::NAN;
    let mut iterations = 0;
    loop {
        let done = iterations >= cfg.max_iters;
        let (loss, pose, grads) = evaluate(net, &params, &prep, !done).map_err(refine_fault)?;
        if iterations == 0 {
            initial = loss;
        }
        trace.push(loss);
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, pose));
        }
        if done || loss <= cfg.tolerance {
            break;
        }
        adam.step(&mut params, &grads.expect("gradients requested"), cfg.lr, Some(&mask))?;
        iterations += 1;
    }
    let (loss, pose) = best.expect("at least one evaluation");
    Ok((
        RefineOutcome {
            pose,
            iterations,
            loss,
            initial_loss: initial,
            trace,
        },
        params,
    ))
}
