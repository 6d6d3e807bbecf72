use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    quat_to_rot, size_from_canonical, umeyama, Pose, Quaternion, Vec3,
};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::sphere::{convert_to_spherical, PoolSpec, SphericalGrid, SphericalTransform};
use crate::synthdata::Crop;

/// Parameter groups, as name prefixes.
pub const GROUPS: [&str; 5] = ["encoder.", "exp.rot.", "exp.trans.", "exp.size.", "implicit."];

/// A crop converted to network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// `G × 3` color signal.
    pub color: Tensor,
    /// `G × 1` radial signal.
    pub radial: Tensor,
    pub centroid: Vec3,
    /// `N × 3` points relative to the centroid.
    pub centered: Tensor,
    /// `centered` divided by its RMS radius; the implicit decoder's input.
    pub normalized: Tensor,
    pub points: Vec<Vec3>,
}

#[derive(Debug, Clone)]
struct Level {
    transform: Arc<SphericalTransform>,
    pool: Option<Arc<PoolSpec>>,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Layer {
    x: ParamId,
    p: ParamId,
    fusion: Option<ParamId>,
    level: usize,
    pool: bool,
}

#[derive(Debug, Clone)]
struct Layout {
    levels: Vec<Level>,
    layers: Vec<Layer>,
    scales: Vec<Dense>,
    aggregate: Dense,
    rot: [Dense; 2],
    trans: [Dense; 2],
    size: [Dense; 2],
    implicit_p: ParamId,
    implicit_f: ParamId,
    implicit_b: ParamId,
    implicit: Vec<Dense>,
}

enum Init {
    Taps { c_in: usize },
    Glorot { fan_in: usize, fan_out: usize },
    Zero,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Graph nodes of the explicit decoder.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    /// Raw `1 × 4` quaternion.
    pub rot: Var,
    /// `1 × 3` translation relative to the centroid.
    pub delta_t: Var,
    /// `1 × 3` size.
    pub size: Var,
}

/// Numeric outputs of both decoders for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub feature: Vec<f64>,
    pub quat: [f64; 4],
    pub delta_t: Vec3,
    pub size: Vec3,
    /// Canonical coordinates, index-aligned with the crop points.
    pub canonical: Vec<Vec3>,
}

/// Encoder with spherical fusion plus explicit and implicit decoders.
#[derive(Debug, Clone)]
pub struct DualPoseNet {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

fn level_grids(config: &ModelConfig) -> Result<Vec<SphericalGrid>> {
    let mut grids = vec![SphericalGrid::new(config.width, config.height)?];
    for _ in &config.pool_after {
        let last = grids.last().unwrap();
        grids.push(SphericalGrid::new(last.width() / 2, last.height() / 2)?);
    }
    Ok(grids)
}

fn specs(config: &ModelConfig, grids: &[SphericalGrid]) -> Vec<Spec> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push(Spec { name, shape, init });
    let d = config.feature_dim;
    let (mut in_x, mut in_p) = (3, 1);
    let mut level = 0;
    for (i, &c) in config.channels.iter().enumerate() {
        let l = i + 1;
        let b = grids[level].max_bandwidth();
        push(format!("encoder.conv{l}.x"), vec![b, in_x, c], Init::Taps { c_in: in_x });
        push(format!("encoder.conv{l}.p"), vec![b, in_p, c], Init::Taps { c_in: in_p });
        (in_x, in_p) = (c, c);
        if config.fusion_layers.contains(&l) {
            push(format!("encoder.fuse{l}"), vec![b, 2 * c, c], Init::Taps { c_in: 2 * c });
            let flat = grids[level].len() * c;
            push(format!("encoder.scale{l}.w"), vec![flat, d], Init::Glorot { fan_in: flat, fan_out: d });
            push(format!("encoder.scale{l}.b"), vec![1, d], Init::Zero);
            (in_x, in_p) = (2 * c, 2 * c);
        }
        if config.pool_after.contains(&l) {
            level += 1;
        }
    }
    push("encoder.out.w".into(), vec![d, d], Init::Glorot { fan_in: d, fan_out: d });
    push("encoder.out.b".into(), vec![1, d], Init::Zero);
    let h = config.head_hidden;
    for (head, n) in [("rot", 4), ("trans", 3), ("size", 3)] {
        push(format!("exp.{head}.0.w"), vec![d, h], Init::Glorot { fan_in: d, fan_out: h });
        push(format!("exp.{head}.0.b"), vec![1, h], Init::Zero);
        push(format!("exp.{head}.1.w"), vec![h, n], Init::Glorot { fan_in: h, fan_out: n });
        push(format!("exp.{head}.1.b"), vec![1, n], Init::Zero);
    }
    let h0 = config.implicit_hidden[0];
    push("implicit.0.wp".into(), vec![3, h0], Init::Glorot { fan_in: 3 + d, fan_out: h0 });
    push("implicit.0.wf".into(), vec![d, h0], Init::Glorot { fan_in: 3 + d, fan_out: h0 });
    push("implicit.0.b".into(), vec![1, h0], Init::Zero);
    let mut widths = config.implicit_hidden.clone();
    widths.push(3);
    for (i, pair) in widths.windows(2).enumerate() {
        push(format!("implicit.{}.w", i + 1), vec![pair[0], pair[1]], Init::Glorot { fan_in: pair[0], fan_out: pair[1] });
        push(format!("implicit.{}.b", i + 1), vec![1, pair[1]], Init::Zero);
    }
    out
}

fn build_layout(config: &ModelConfig, grids: &[SphericalGrid], params: &ParamStore) -> Result<Layout> {
    let id = |name: &str| params.find(name).expect("parameter from spec");
    let dense = |prefix: &str| Dense {
        w: id(&format!("{prefix}.w")),
        b: id(&format!("{prefix}.b")),
    };
    let levels = grids
        .iter()
        .enumerate()
        .map(|(k, g)| {
            Ok(Level {
                transform: SphericalTransform::new(g, g.max_bandwidth())?,
                pool: if k + 1 < grids.len() { Some(PoolSpec::new(g)?) } else { None },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::new();
    let mut scales = Vec::new();
    let mut level = 0;
    for l in 1..=config.depth() {
        let fused = config.fusion_layers.contains(&l);
        let pool = config.pool_after.contains(&l);
        layers.push(Layer {
            x: id(&format!("encoder.conv{l}.x")),
            p: id(&format!("encoder.conv{l}.p")),
            fusion: fused.then(|| id(&format!("encoder.fuse{l}"))),
            level,
            pool,
        });
        if fused {
            scales.push(dense(&format!("encoder.scale{l}")));
        }
        if pool {
            level += 1;
        }
    }
    let head = |name: &str| [dense(&format!("exp.{name}.0")), dense(&format!("exp.{name}.1"))];
    Ok(Layout {
        levels,
        layers,
        scales,
        aggregate: dense("encoder.out"),
        rot: head("rot"),
        trans: head("trans"),
        size: head("size"),
        implicit_p: id("implicit.0.wp"),
        implicit_f: id("implicit.0.wf"),
        implicit_b: id("implicit.0.b"),
        implicit: (1..=config.implicit_hidden.len())
            .map(|i| dense(&format!("implicit.{i}")))
            .collect(),
    })
}

/// `S̃^{X,P} = SCONV([x, p])`, returned with both streams extended by it.
pub fn spherical_fusion(
    g: &mut Graph,
    x: Var,
    p: Var,
    taps: Var,
    transform: &Arc<SphericalTransform>,
) -> Result<(Var, Var, Var)> {
    if g.value(x).shape() != g.value(p).shape() {
        return Err(Error::shape(format!(
            "fusion streams {:?} and {:?}",
            g.value(x).shape(),
            g.value(p).shape()
        )));
    }
    let joint = g.concat(x, p)?;
    let xp = g.sph_conv(joint, taps, transform)?;
    let x_out = g.concat(x, xp)?;
    let p_out = g.concat(p, xp)?;
    Ok((x_out, p_out, xp))
}

/// Parameter vars of one graph, indexed by [`ParamId`].
pub struct Bound(Vec<Var>);

impl Bound {
    fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

impl DualPoseNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grids = level_grids(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in specs(&config, &grids) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Taps { c_in } => {
                    let a = (3.0 / c_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Zero => vec![0.0; n],
            };
            params.add(spec.name, Tensor::new(spec.shape, data)?)?;
        }
        let layout = build_layout(&config, &grids, &params)?;
        Ok(DualPoseNet { config, params, layout })
    }

    /// Wraps loaded parameters, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let grids = level_grids(&config)?;
        let specs = specs(&config, &grids);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, configuration needs {}",
                params.len(),
                specs.len()
            )));
        }
        for spec in &specs {
            match params.find(&spec.name) {
                Some(id) if params.get(id).shape() == spec.shape.as_slice() => {}
                Some(id) => {
                    return Err(Error::Checkpoint(format!(
                        "{} has shape {:?}, expected {:?}",
                        spec.name,
                        params.get(id).shape(),
                        spec.shape
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {}", spec.name))),
            }
        }
        let layout = build_layout(&config, &grids, &params)?;
        Ok(DualPoseNet { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Per-parameter flag for names starting with `prefix`.
    pub fn group_mask(&self, prefix: &str) -> Vec<bool> {
        self.params.iter().map(|(n, _)| n.starts_with(prefix)).collect()
    }

    pub fn prepare(&self, crop: &Crop) -> Result<Prepared> {
        let grid = SphericalGrid::new(self.config.width, self.config.height)?;
        let signals = convert_to_spherical(&crop.points, &crop.colors, &grid)?;
        let c = signals.centroid;
        let centered: Vec<f64> = crop
            .points
            .iter()
            .flat_map(|p| {
                let d = p - c;
                [d.x, d.y, d.z]
            })
            .collect();
        let rms = (centered.iter().map(|v| v * v).sum::<f64>() / crop.points.len() as f64).sqrt();
        let normalized = if rms > 0.0 {
            centered.iter().map(|v| v / rms).collect()
        } else {
            centered.clone()
        };
        Ok(Prepared {
            color: Tensor::matrix(grid.len(), 3, signals.color.into_values())?,
            radial: Tensor::matrix(grid.len(), 1, signals.radial.into_values())?,
            centroid: c,
            centered: Tensor::matrix(crop.points.len(), 3, centered)?,
            normalized: Tensor::matrix(crop.points.len(), 3, normalized)?,
            points: crop.points.clone(),
        })
    }

    pub fn bind(&self, g: &mut Graph, params: &ParamStore) -> Result<Bound> {
        Ok(Bound(
            params.ids().map(|id| g.param(params, id)).collect::<Result<_>>()?,
        ))
    }

    fn dense(&self, g: &mut Graph, pv: &Bound, x: Var, d: Dense) -> Result<Var> {
        let y = g.matmul(x, pv.get(d.w))?;
        g.add_row(y, pv.get(d.b))
    }

    /// Encoder; returns `f` and the fused maps `S̃^{X,P}` of every scale.
    pub fn encode(&self, g: &mut Graph, pv: &Bound, prep: &Prepared) -> Result<(Var, Vec<Var>)> {
        let mut x = g.input(prep.color.clone())?;
        let mut p = g.input(prep.radial.clone())?;
        let mut maps = Vec::new();
        for layer in &self.layout.layers {
            let level = &self.layout.levels[layer.level];
            let cx = g.sph_conv(x, pv.get(layer.x), &level.transform)?;
            x = g.relu(cx)?;
            let cp = g.sph_conv(p, pv.get(layer.p), &level.transform)?;
            p = g.relu(cp)?;
            if let Some(taps) = layer.fusion {
                let (fx, fp, xp) = spherical_fusion(g, x, p, pv.get(taps), &level.transform)?;
                (x, p) = (fx, fp);
                maps.push(xp);
            }
            if layer.pool {
                let spec = level.pool.as_ref().expect("pooled level has a successor");
                x = g.pool(x, spec)?;
                p = g.pool(p, spec)?;
            }
        }
        let mut per_scale = Vec::with_capacity(maps.len());
        for (&m, &d) in maps.iter().zip(&self.layout.scales) {
            let flat = g.flatten(m)?;
            let y = self.dense(g, pv, flat, d)?;
            per_scale.push(g.relu(y)?);
        }
        let mut agg = per_scale[0];
        for chunk in per_scale[1..].chunks(2) {
            agg = match *chunk {
                [a, b] => g.max3(agg, a, b)?,
                [a] => g.max3(agg, a, a)?,
                _ => unreachable!(),
            };
        }
        let f = self.dense(g, pv, agg, self.layout.aggregate)?;
        Ok((f, maps))
    }

    pub fn explicit(&self, g: &mut Graph, pv: &Bound, f: Var) -> Result<Heads> {
        let mut head = |layers: [Dense; 2]| -> Result<Var> {
            let h = self.dense(g, pv, f, layers[0])?;
            let h = g.relu(h)?;
            self.dense(g, pv, h, layers[1])
        };
        Ok(Heads {
            rot: head(self.layout.rot)?,
            delta_t: head(self.layout.trans)?,
            size: head(self.layout.size)?,
        })
    }

    /// Point-wise decoder on `[(p − c)/ρ; f]`; `points` is `N × 3`.
    pub fn implicit(&self, g: &mut Graph, pv: &Bound, f: Var, points: Var) -> Result<Var> {
        let from_f = g.matmul(f, pv.get(self.layout.implicit_f))?;
        let row = g.add(from_f, pv.get(self.layout.implicit_b))?;
        let from_p = g.matmul(points, pv.get(self.layout.implicit_p))?;
        let mut h = g.add_row(from_p, row)?;
        for &d in &self.layout.implicit {
            h = g.relu(h)?;
            h = self.dense(g, pv, h, d)?;
        }
        Ok(h)
    }

    /// Runs both decoders with `params` in place of the model's own.
    pub fn forward_with(&self, params: &ParamStore, prep: &Prepared) -> Result<Outputs> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, params)?;
        let (f, _) = self.encode(&mut g, &pv, prep)?;
        let heads = self.explicit(&mut g, &pv, f)?;
        let points = g.input(prep.normalized.clone())?;
        let q = self.implicit(&mut g, &pv, f, points)?;
        let v = |var: Var| g.value(var).data().to_vec();
        let quat = v(heads.rot);
        let dt = v(heads.delta_t);
        let size = v(heads.size);
        Ok(Outputs {
            feature: v(f),
            quat: [quat[0], quat[1], quat[2], quat[3]],
            delta_t: Vec3::new(dt[0], dt[1], dt[2]),
            size: Vec3::new(size[0], size[1], size[2]),
            canonical: v(q).chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
        })
    }

    pub fn forward(&self, prep: &Prepared) -> Result<Outputs> {
        self.forward_with(&self.params, prep)
    }

    /// Feature maps `S̃^{X,P}` at every fusion layer, `G_l × d_l` each.
    pub fn fused_maps(&self, prep: &Prepared) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, &self.params)?;
        let (_, maps) = self.encode(&mut g, &pv, prep)?;
        Ok(maps.into_iter().map(|m| g.value(m).clone()).collect())
    }

    /// Way 1: the explicit decoder's pose.
    pub fn predict(&self, crop: &Crop) -> Result<Pose> {
        let prep = self.prepare(crop)?;
        explicit_pose(&self.forward(&prep)?, &prep.centroid)
    }

    /// Way 2: similarity alignment of the implicit decoder's canonical points
    /// onto the observed ones.
    pub fn predict_via_alignment(&self, crop: &Crop) -> Result<Pose> {
        let prep = self.prepare(crop)?;
        pose_from_canonical(&self.forward(&prep)?.canonical, &prep.points)
    }
}

/// Pose of the explicit decoder: normalized quaternion, `t = c + Δt`, raw size.
pub fn explicit_pose(out: &Outputs, centroid: &Vec3) -> Result<Pose> {
    let q = Quaternion::from_array(out.quat).normalize()?.canonicalize();
    Ok(Pose::new(quat_to_rot(&q)?, centroid + out.delta_t, out.size))
}

/// Pose from corresponded canonical and observed points.
pub fn pose_from_canonical(canonical: &[Vec3], observed: &[Vec3]) -> Result<Pose> {
    let sim = umeyama(canonical, observed)?;
    Ok(Pose::new(
        sim.rotation,
        sim.translation,
        size_from_canonical(canonical, sim.scale),
    ))
}
