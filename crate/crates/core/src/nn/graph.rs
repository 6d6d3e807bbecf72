//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op evaluates eagerly and records its inputs; [`Graph::backward`]
//! walks the tape once in reverse. Values must stay finite: an op producing
//! NaN or ±∞ fails immediately with its node id.

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linalg::{matmul, View};
use crate::sphere::{PoolSpec, SphericalTransform};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Concat(Var, Var),
    Relu(Var),
    Reshape(Var),
    Max3(Var, Var, Var),
    L2Norm(Var),
    RowNorms(Var),
    Mean(Var),
    Sum(Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Recip(Var),
    SphConv {
        x: Var,
        taps: Var,
        transform: Arc<SphericalTransform>,
        coeffs: Vec<f64>,
    },
    Pool {
        x: Var,
        spec: Arc<PoolSpec>,
    },
    QuatToRot(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::SubRow(..) => "sub_row",
            Op::Concat(..) => "concat",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::Max3(..) => "max3",
            Op::L2Norm(_) => "l2_norm",
            Op::RowNorms(_) => "row_norms",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::Recip(_) => "recip",
            Op::SphConv { .. } => "sph_conv",
            Op::Pool { .. } => "pool",
            Op::QuatToRot(_) => "quat_to_rot",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Single-writer computation record.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that influences it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a node, `None` when the loss does not depend on it.
    pub fn of(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("shape"))
    }

    /// Gradient per parameter of `store`, summed over every leaf that
    /// references it. Parameters the loss does not reach get `None`.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; store.len()];
        for &(pid, node) in &self.params {
            let Some(g) = &self.grads[node] else { continue };
            match &mut out[pid.index()] {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b),
                slot @ None => {
                    *slot = Some(Tensor::new(self.shapes[node].clone(), g.clone()).expect("shape"))
                }
            }
        }
        out
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn require_matrix(t: &Tensor, what: &str) -> Result<()> {
    if !t.is_matrix() {
        return Err(Error::shape(format!("{what} needs a matrix, got {:?}", t.shape())));
    }
    Ok(())
}

fn require_scalar(t: &Tensor, what: &str) -> Result<()> {
    if t.len() != 1 {
        return Err(Error::shape(format!("{what} needs a scalar, got {:?}", t.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}

/// `R(q/‖q‖)` together with `∂R_ij/∂q̂` for the normalized quaternion.
fn quat_rotation(q: &[f64]) -> ([f64; 9], [[f64; 4]; 9], [f64; 4], f64) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let r = [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ];
    let jac = [
        [0.0, 0.0, -4.0 * y, -4.0 * z],
        [-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w],
        [2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x],
        [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
        [0.0, -4.0 * x, 0.0, -4.0 * z],
        [-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y],
        [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
        [0.0, -4.0 * x, -4.0 * y, 0.0],
    ];
    (r, jac, [w, x, y, z], n)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(id))
    }

    /// Constant leaf; receives a gradient but is not a parameter.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Input, value)
    }

    /// Leaf holding a copy of parameter `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(Op::Param(id), store.get(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix(ta, "matmul")?;
        require_matrix(tb, "matmul")?;
        if ta.cols() != tb.rows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul(
            View::new(ta.data(), ta.rows(), ta.cols()),
            View::new(tb.data(), tb.rows(), tb.cols()),
        );
        let t = Tensor::matrix(ta.rows(), tb.cols(), out)?;
        self.push(Op::MatMul(a, b), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let t = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let t = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), t)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let t = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), t)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, sign: f64) -> Result<Tensor> {
        let (ta, tr) = (self.value(a), self.value(row));
        require_matrix(ta, "row broadcast")?;
        if tr.shape() != [1, ta.cols()] {
            return Err(Error::shape(format!(
                "row broadcast of {:?} onto {:?}",
                tr.shape(),
                ta.shape()
            )));
        }
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + sign * tr.data()[i % cols])
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// `a[i, :] + row` for every row `i`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast(a, row, 1.0)?;
        self.push(Op::AddRow(a, row), t)
    }

    /// `a[i, :] − row` for every row `i`.
    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast(a, row, -1.0)?;
        self.push(Op::SubRow(a, row), t)
    }

    /// Concatenation along the last axis of two matrices.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix(ta, "concat")?;
        require_matrix(tb, "concat")?;
        if ta.rows() != tb.rows() {
            return Err(Error::shape(format!(
                "concat {:?} with {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let t = Tensor::matrix(ta.rows(), ca + cb, data)?;
        self.push(Op::Concat(a, b), t)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|v| v.max(0.0)).collect(),
        )?;
        self.push(Op::Relu(a), t)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        self.push(Op::Reshape(a), t)
    }

    /// Row-major flatten to a `1 × n` row.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.reshape(a, &[1, n])
    }

    /// Elementwise maximum of three equally shaped tensors; ties go to the
    /// earliest argument.
    pub fn max3(&mut self, a: Var, b: Var, c: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "max3")?;
        same_shape(self.value(a), self.value(c), "max3")?;
        let (ta, tb, tc) = (self.value(a), self.value(b), self.value(c));
        let data = (0..ta.len())
            .map(|i| ta.data()[i].max(tb.data()[i]).max(tc.data()[i]))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Max3(a, b, c), t)
    }

    /// Euclidean norm of all entries, as a `1 × 1` tensor.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Op::L2Norm(a), Tensor::scalar(n))
    }

    /// Per-row Euclidean norms of a matrix, as a column.
    pub fn row_norms(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix(ta, "row_norms")?;
        let cols = ta.cols();
        let data = ta
            .data()
            .chunks(cols)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::matrix(ta.rows(), 1, data)?;
        self.push(Op::RowNorms(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let m = ta.data().iter().sum::<f64>() / ta.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|v| v * c).collect())?;
        self.push(Op::Scale(a, c), t)
    }

    /// `a · s` for a scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        require_scalar(self.value(s), "scale_by")?;
        let c = self.value(s).item();
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|v| v * c).collect())?;
        self.push(Op::ScaleBy(a, s), t)
    }

    pub fn recip(&mut self, s: Var) -> Result<Var> {
        require_scalar(self.value(s), "recip")?;
        let v = 1.0 / self.value(s).item();
        self.push(Op::Recip(s), Tensor::scalar(v))
    }

    /// Zonal spherical convolution of `G × c_in` samples with
    /// `[bandwidth, c_in, c_out]` taps.
    pub fn sph_conv(
        &mut self,
        x: Var,
        taps: Var,
        transform: &Arc<SphericalTransform>,
    ) -> Result<Var> {
        let (tx, tt) = (self.value(x), self.value(taps));
        require_matrix(tx, "sph_conv input")?;
        if tx.rows() != transform.grid_len() {
            return Err(Error::shape(format!(
                "sph_conv input has {} cells, grid has {}",
                tx.rows(),
                transform.grid_len()
            )));
        }
        let c_in = tx.cols();
        if tt.rank() != 3 || tt.shape()[0] != transform.bandwidth() || tt.shape()[1] != c_in {
            return Err(Error::shape(format!(
                "taps {:?} for bandwidth {} and {c_in} input channels",
                tt.shape(),
                transform.bandwidth()
            )));
        }
        let c_out = tt.shape()[2];
        let coeffs = transform.analyze(tx.data(), c_in);
        let mixed = transform.mix(&coeffs, tt.data(), c_in, c_out);
        let out = transform.synthesize(&mixed, c_out);
        let t = Tensor::matrix(transform.grid_len(), c_out, out)?;
        self.push(
            Op::SphConv {
                x,
                taps,
                transform: Arc::clone(transform),
                coeffs,
            },
            t,
        )
    }

    /// 2×2 weighted average pooling of `G × C` samples.
    pub fn pool(&mut self, x: Var, spec: &Arc<PoolSpec>) -> Result<Var> {
        let tx = self.value(x);
        require_matrix(tx, "pool")?;
        if tx.rows() != spec.in_width() * spec.in_height() {
            return Err(Error::shape(format!(
                "pool input has {} cells, expected {}",
                tx.rows(),
                spec.in_width() * spec.in_height()
            )));
        }
        let c = tx.cols();
        let out = spec.forward(tx.data(), c);
        let t = Tensor::matrix(spec.out_width() * spec.out_height(), c, out)?;
        self.push(
            Op::Pool {
                x,
                spec: Arc::clone(spec),
            },
            t,
        )
    }

    /// Rotation matrix of the normalized quaternion `q` (`1 × 4`, order
    /// `w, x, y, z`).
    pub fn quat_to_rot(&mut self, q: Var) -> Result<Var> {
        let tq = self.value(q);
        if tq.len() != 4 {
            return Err(Error::shape(format!("quaternion of shape {:?}", tq.shape())));
        }
        let n = tq.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 1e-12) {
            return Err(Error::DegenerateInput("zero-norm quaternion".into()));
        }
        let (r, ..) = quat_rotation(tq.data());
        let t = Tensor::matrix(3, 3, r.to_vec())?;
        self.push(Op::QuatToRot(q), t)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::InvalidLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(d) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let dv = View::new(&d, m, n);
                    let da = matmul(dv, View::new(tb.data(), k, n).t());
                    let db = matmul(View::new(ta.data(), m, k).t(), dv);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, d.clone());
                    acc(&mut grads, *b, d.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, d.iter().map(|v| -v).collect());
                    acc(&mut grads, *a, d.clone());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = d.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    let db = d.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, r) | Op::SubRow(a, r) => {
                    let sign = if matches!(node.op, Op::AddRow(..)) { 1.0 } else { -1.0 };
                    let cols = node.value.cols();
                    let mut dr = vec![0.0; cols];
                    for (j, g) in d.iter().enumerate() {
                        dr[j % cols] += sign * g;
                    }
                    acc(&mut grads, *r, dr);
                    acc(&mut grads, *a, d.clone());
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let rows = node.value.rows();
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let row = &d[r * (ca + cb)..(r + 1) * (ca + cb)];
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Relu(a) => {
                    let da = d
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, da);
                }
                Op::Reshape(a) => acc(&mut grads, *a, d.clone()),
                Op::Max3(a, b, c) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let n = d.len();
                    let (mut da, mut db, mut dc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for i in 0..n {
                        let y = node.value.data()[i];
                        if ta.data()[i] == y {
                            da[i] = d[i];
                        } else if tb.data()[i] == y {
                            db[i] = d[i];
                        } else {
                            dc[i] = d[i];
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *c, dc);
                }
                Op::L2Norm(a) => {
                    let n = node.value.item();
                    let ta = self.value(*a);
                    let da = if n > 0.0 {
                        ta.data().iter().map(|x| d[0] * x / n).collect()
                    } else {
                        vec![0.0; ta.len()]
                    };
                    acc(&mut grads, *a, da);
                }
                Op::RowNorms(a) => {
                    let ta = self.value(*a);
                    let cols = ta.cols();
                    let mut da = vec![0.0; ta.len()];
                    for (r, &n) in node.value.data().iter().enumerate() {
                        if n > 0.0 {
                            for c in 0..cols {
                                da[r * cols + c] = d[r] * ta.data()[r * cols + c] / n;
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![d[0] / n as f64; n]);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![d[0]; n]);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, d.iter().map(|g| g * c).collect()),
                Op::ScaleBy(a, s) => {
                    let c = self.value(*s).item();
                    let ta = self.value(*a);
                    let ds: f64 = d.iter().zip(ta.data()).map(|(g, x)| g * x).sum();
                    acc(&mut grads, *s, vec![ds]);
                    acc(&mut grads, *a, d.iter().map(|g| g * c).collect());
                }
                Op::Recip(s) => {
                    let x = self.value(*s).item();
                    acc(&mut grads, *s, vec![-d[0] / (x * x)]);
                }
                Op::SphConv {
                    x,
                    taps,
                    transform,
                    coeffs,
                } => {
                    let tt = self.value(*taps);
                    let (c_in, c_out) = (tt.shape()[1], tt.shape()[2]);
                    let d_mixed = transform.synthesize_adjoint(&d, c_out);
                    let (d_coeffs, d_taps) =
                        transform.mix_backward(coeffs, tt.data(), &d_mixed, c_in, c_out);
                    acc(&mut grads, *taps, d_taps);
                    acc(&mut grads, *x, transform.analyze_adjoint(&d_coeffs, c_in));
                }
                Op::Pool { x, spec } => {
                    let c = node.value.cols();
                    acc(&mut grads, *x, spec.backward(&d, c));
                }
                Op::QuatToRot(q) => {
                    let (_, jac, unit, n) = quat_rotation(self.value(*q).data());
                    let mut g_hat = [0.0; 4];
                    for (ij, row) in jac.iter().enumerate() {
                        for k in 0..4 {
                            g_hat[k] += d[ij] * row[k];
                        }
                    }
                    let radial: f64 = (0..4).map(|k| g_hat[k] * unit[k]).sum();
                    let dq = (0..4).map(|k| (g_hat[k] - radial * unit[k]) / n).collect();
                    acc(&mut grads, *q, dq);
                }
            }
            grads[i] = Some(d);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) => Some((pid, i)),
                _ => None,
            })
            .collect();
        let shapes = self
            .nodes
            .iter()
            .take(loss.0 + 1)
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            params,
            shapes,
        })
    }
}
