use crate::error::{Error, Result};

use super::Tensor;

/// Guard used in norm and square-root derivatives.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { x: Var, cols: Vec<usize> },
    Reshape(Var),
    Select { x: Var, index: usize },
    TimeSlice { x: Var, start: usize },
    Stack(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SumGroups { x: Var, group: usize },
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Sin(Var),
    Cos(Var),
    Atan2(Var, Var),
    WrapAngle(Var),
    L2Norm { x: Var, group: usize },
    Normalize(Var),
    QMul(Var, Var),
    Rotate(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        width: usize,
        dilation: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] walks it back to front once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

fn check_group(t: &Tensor, group: usize, what: &str) -> Result<()> {
    if group == 0 || t.last_dim() % group != 0 {
        return Err(Error::shape(format!(
            "{what}: last axis {} not divisible by {group}",
            t.last_dim()
        )));
    }
    Ok(())
}

#[inline]
fn quat_mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        self.live()?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.live()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("tape input contains NaN or inf".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Copies the value of `v` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "div")?;
        let out = zip(self.value(a), self.value(b), |x, y| x / y);
        self.push(out, Op::Div(a, b), &[a, b])
    }

    /// `x + b` with `b` broadcast over every row of `x` (last-axis bias).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.last_dim();
        if bv.len() != c {
            return Err(Error::shape(format!(
                "bias of {} elements for last axis {c}",
                bv.len()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v + s);
        self.push(out, Op::AddScalar(x), &[x])
    }

    /// `[m, k] × [k, n]`; `a` may have any leading shape, flattened to rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.outer(), bv.shape()[0], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bb) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += aip * bb;
                }
            }
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("matmul input has an axis") = n;
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let lead = self.value(*first).shape().split_last().map(|s| s.1.to_vec());
        let lead = lead.unwrap_or_default();
        let rows = self.value(*first).outer();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = self.value(*p);
            if v.shape().split_last().map(|s| s.1) != Some(lead.as_slice()) {
                return Err(Error::shape(format!(
                    "concat: {:?} vs leading {lead:?}",
                    v.shape()
                )));
            }
            widths.push(v.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if start + len > c {
            return Err(Error::shape(format!("slice {start}+{len} of {c}")));
        }
        let cols: Vec<usize> = (start..start + len).collect();
        let out = gather_cols(xv, &cols);
        self.push(out, Op::Slice { x, start }, &[x])
    }

    /// Arbitrary (possibly repeated) columns of the last axis.
    pub fn gather(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = cols.iter().find(|&&c| c >= xv.last_dim()) {
            return Err(Error::shape(format!(
                "gather column {bad} of {}",
                xv.last_dim()
            )));
        }
        let out = gather_cols(xv, cols);
        self.push(
            out,
            Op::Gather {
                x,
                cols: cols.to_vec(),
            },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// `x[:, index, :]` of a `[B, T, C]` tensor.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        let &[b, t, c] = xv.shape() else {
            return Err(Error::shape(format!("select needs [B,T,C], got {:?}", xv.shape())));
        };
        if index >= t {
            return Err(Error::shape(format!("select index {index} of {t}")));
        }
        let mut out = Vec::with_capacity(b * c);
        for bi in 0..b {
            let off = (bi * t + index) * c;
            out.extend_from_slice(&xv.data()[off..off + c]);
        }
        let out = Tensor::new(vec![b, c], out)?;
        self.push(out, Op::Select { x, index }, &[x])
    }

    /// Frames `start..start + len` of a `[B, T, C]` tensor.
    pub fn time_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let &[b, t, c] = xv.shape() else {
            return Err(Error::shape(format!("time_slice needs [B,T,C], got {:?}", xv.shape())));
        };
        if start + len > t {
            return Err(Error::shape(format!("time_slice {start}+{len} of {t}")));
        }
        let mut out = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            let off = (bi * t + start) * c;
            out.extend_from_slice(&xv.data()[off..off + len * c]);
        }
        let out = Tensor::new(vec![b, len, c], out)?;
        self.push(out, Op::TimeSlice { x, start }, &[x])
    }

    /// Stacks `[B, C]` tensors into `[B, T, C]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("stack of nothing"))?;
        let shape = self.value(*first).shape().to_vec();
        let &[b, c] = shape.as_slice() else {
            return Err(Error::shape(format!("stack needs [B,C], got {shape:?}")));
        };
        if parts.iter().any(|p| self.value(*p).shape() != shape.as_slice()) {
            return Err(Error::shape("stack: mismatched parts"));
        }
        let t = parts.len();
        let mut out = vec![0.0; b * t * c];
        for (ti, p) in parts.iter().enumerate() {
            let d = self.value(*p).data();
            for bi in 0..b {
                out[(bi * t + ti) * c..(bi * t + ti + 1) * c]
                    .copy_from_slice(&d[bi * c..(bi + 1) * c]);
            }
        }
        let out = Tensor::new(vec![b, t, c], out)?;
        self.push(out, Op::Stack(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::shape("mean of empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sums consecutive groups of `group` elements along the last axis.
    pub fn sum_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        check_group(xv, group, "sum_groups")?;
        let data: Vec<f64> = xv.data().chunks(group).map(|c| c.iter().sum()).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("grouped tensor has an axis") /= group;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::SumGroups { x, group }, &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v.max(0.0).sqrt());
        self.push(out, Op::Sqrt(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::abs);
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// `max(x, 0) + slope · min(x, 0)`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = map(self.value(x), |v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::sin);
        self.push(out, Op::Sin(x), &[x])
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::cos);
        self.push(out, Op::Cos(x), &[x])
    }

    /// Elementwise `atan2(y, x)`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        same_shape(self.value(y), self.value(x), "atan2")?;
        let out = zip(self.value(y), self.value(x), f64::atan2);
        self.push(out, Op::Atan2(y, x), &[y, x])
    }

    /// Wraps angles into `[-π, π)`; the shift is piecewise constant so the
    /// derivative is one almost everywhere.
    pub fn wrap_angle(&mut self, x: Var) -> Result<Var> {
        use std::f64::consts::{PI, TAU};
        let out = map(self.value(x), |v| (v + PI).rem_euclid(TAU) - PI);
        self.push(out, Op::WrapAngle(x), &[x])
    }

    /// Euclidean norm of each group of `group` elements along the last axis.
    pub fn l2norm(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        check_group(xv, group, "l2norm")?;
        let data: Vec<f64> = xv
            .data()
            .chunks(group)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("grouped tensor has an axis") /= group;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::L2Norm { x, group }, &[x])
    }

    /// Normalizes every quaternion (group of 4) along the last axis.
    pub fn normalize_quats(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        check_group(xv, 4, "normalize")?;
        let mut out = xv.clone();
        for q in out.data_mut().chunks_mut(4) {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            q.iter_mut().for_each(|v| *v /= n);
        }
        self.push(out, Op::Normalize(x), &[x])
    }

    /// Batched Hamilton product over groups of 4.
    pub fn qmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "qmul")?;
        check_group(av, 4, "qmul")?;
        let mut out = Tensor::zeros(av.shape());
        for ((o, x), y) in out
            .data_mut()
            .chunks_mut(4)
            .zip(av.data().chunks(4))
            .zip(bv.data().chunks(4))
        {
            quat_mul(x, y, o);
        }
        self.push(out, Op::QMul(a, b), &[a, b])
    }

    /// Rotates vectors `v` (groups of 3) by quaternions `q` (groups of 4).
    ///
    /// Evaluates `v + 2w(u × v) + 2u × (u × v)`, which is the rotation for
    /// unit `q` and a smooth polynomial otherwise.
    pub fn rotate(&mut self, q: Var, v: Var) -> Result<Var> {
        let (qv, vv) = (self.value(q), self.value(v));
        check_group(qv, 4, "rotate")?;
        check_group(vv, 3, "rotate")?;
        if qv.len() / 4 != vv.len() / 3 || qv.outer() != vv.outer() {
            return Err(Error::shape(format!(
                "rotate: {:?} quaternions vs {:?} vectors",
                qv.shape(),
                vv.shape()
            )));
        }
        let mut out = Tensor::zeros(vv.shape());
        for ((o, qq), vec) in out
            .data_mut()
            .chunks_mut(3)
            .zip(qv.data().chunks(4))
            .zip(vv.data().chunks(3))
        {
            let r = rotate_raw(qq, [vec[0], vec[1], vec[2]]);
            o.copy_from_slice(&r);
        }
        self.push(out, Op::Rotate(q, v), &[q, v])
    }

    /// Causal dilated 1-D convolution.
    ///
    /// `x` is `[B, T, Cin]`, `w` is `[width · Cin, Cout]` with tap `k`
    /// occupying rows `k·Cin..(k+1)·Cin`, `b` has `Cout` elements. The output
    /// is `[B, T − (width − 1)·dilation, Cout]`, where output frame `t` reads
    /// input frames `t, t + d, …, t + (width − 1)·d` (the last tap is newest).
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        width: usize,
        dilation: usize,
    ) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let &[bs, t, cin] = xv.shape() else {
            return Err(Error::shape(format!("conv1d needs [B,T,C], got {:?}", xv.shape())));
        };
        if wv.shape() != [width * cin, bv.len()] {
            return Err(Error::shape(format!(
                "conv1d weight {:?} for width {width}, cin {cin}, cout {}",
                wv.shape(),
                bv.len()
            )));
        }
        let span = (width - 1) * dilation;
        if t <= span {
            return Err(Error::shape(format!(
                "conv1d input of {t} frames shorter than span {}",
                span + 1
            )));
        }
        let cout = bv.len();
        let tout = t - span;
        let mut out = vec![0.0; bs * tout * cout];
        let (xd, wd) = (xv.data(), wv.data());
        for bi in 0..bs {
            for to in 0..tout {
                let orow = &mut out[(bi * tout + to) * cout..(bi * tout + to + 1) * cout];
                orow.copy_from_slice(bv.data());
                for k in 0..width {
                    let ti = to + k * dilation;
                    let xrow = &xd[(bi * t + ti) * cin..(bi * t + ti + 1) * cin];
                    for (ci, &xval) in xrow.iter().enumerate() {
                        if xval == 0.0 {
                            continue;
                        }
                        let wrow = &wd[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                        for (o, ww) in orow.iter_mut().zip(wrow) {
                            *o += xval * ww;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![bs, tout, cout], out)?;
        self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                width,
                dilation,
            },
            &[x, w, b],
        )
    }

    /// Back-propagates from the scalar `output`. The tape cannot record or
    /// differentiate anything afterwards.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        self.live()?;
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {:?}",
                out.shape()
            )));
        }
        if !out.is_finite() {
            return Err(Error::NonFinite(format!(
                "output value {}",
                out.data()[0]
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                *g = None;
            } else if let Some(t) = g {
                if !t.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of leaf {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let gd = g.data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            let node = &self.nodes[v.0];
            if !node.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
            f(slot.data_mut());
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(gd).zip(bd) {
                        *s += g * y;
                    }
                });
                acc(*b, &|s| {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(ad) {
                        *s += g * x;
                    }
                });
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(gd).zip(bd) {
                        *s += g / y;
                    }
                });
                acc(*b, &|s| {
                    for (((s, g), x), y) in s.iter_mut().zip(gd).zip(ad).zip(bd) {
                        *s -= g * x / (y * y);
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                let c = val(*b).len();
                acc(*b, &|s| {
                    for row in gd.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Scale(x, k) => {
                acc(*x, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += k * g));
            }
            Op::AddScalar(x) | Op::Reshape(x) | Op::WrapAngle(x) => {
                acc(*x, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.outer(), bv.shape()[0], bv.shape()[1]);
                let (ad, bd) = (av.data(), bv.data());
                // dA = G · Bᵀ
                acc(*a, &|s| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            s[i * k + p] += grow.iter().zip(brow).map(|(g, b)| g * b).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(*b, &|s| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (sv, g) in s[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *sv += aip * g;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = g.last_dim();
                let mut off = 0;
                for p in parts {
                    let w = val(*p).last_dim();
                    acc(*p, &|s| {
                        for (r, srow) in s.chunks_mut(w.max(1)).enumerate() {
                            let grow = &gd[r * total + off..r * total + off + w];
                            srow.iter_mut().zip(grow).for_each(|(s, g)| *s += g);
                        }
                    });
                    off += w;
                }
            }
            Op::Slice { x, start } => {
                let (c, w) = (val(*x).last_dim(), g.last_dim());
                acc(*x, &|s| {
                    for (srow, grow) in s.chunks_mut(c).zip(gd.chunks(w.max(1))) {
                        srow[*start..*start + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Gather { x, cols } => {
                let c = val(*x).last_dim();
                acc(*x, &|s| {
                    for (srow, grow) in s.chunks_mut(c).zip(gd.chunks(cols.len().max(1))) {
                        for (&col, g) in cols.iter().zip(grow) {
                            srow[col] += g;
                        }
                    }
                });
            }
            Op::Select { x, index } => {
                let &[b, t, c] = val(*x).shape() else { unreachable!() };
                acc(*x, &|s| {
                    for bi in 0..b {
                        let off = (bi * t + index) * c;
                        s[off..off + c]
                            .iter_mut()
                            .zip(&gd[bi * c..(bi + 1) * c])
                            .for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::TimeSlice { x, start } => {
                let &[b, t, c] = val(*x).shape() else { unreachable!() };
                let len = g.shape()[1];
                acc(*x, &|s| {
                    for bi in 0..b {
                        let off = (bi * t + start) * c;
                        s[off..off + len * c]
                            .iter_mut()
                            .zip(&gd[bi * len * c..(bi + 1) * len * c])
                            .for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Stack(parts) => {
                let &[b, t, c] = g.shape() else { unreachable!() };
                for (ti, p) in parts.iter().enumerate() {
                    acc(*p, &|s| {
                        for bi in 0..b {
                            let off = (bi * t + ti) * c;
                            s[bi * c..(bi + 1) * c]
                                .iter_mut()
                                .zip(&gd[off..off + c])
                                .for_each(|(s, g)| *s += g);
                        }
                    });
                }
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                acc(*x, &|s| s.iter_mut().for_each(|s| *s += g0));
            }
            Op::Mean(x) => {
                let g0 = gd[0] / val(*x).len() as f64;
                acc(*x, &|s| s.iter_mut().for_each(|s| *s += g0));
            }
            Op::SumGroups { x, group } => {
                acc(*x, &|s| {
                    for (chunk, g) in s.chunks_mut(*group).zip(gd) {
                        chunk.iter_mut().for_each(|s| *s += g);
                    }
                });
            }
            Op::Sqrt(x) => {
                let yd = node.value.data();
                acc(*x, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(gd).zip(yd) {
                        *s += g * 0.5 / y.max(NORM_EPS);
                    }
                });
            }
            Op::Square(x) => {
                let xd = val(*x).data();
                acc(*x, &|s| {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(xd) {
                        *s += 2.0 * x * g;
                    }
                });
            }
            Op::Abs(x) => {
                let xd = val(*x).data();
                acc(*x, &|s| {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(xd) {
                        if *x > 0.0 {
                            *s += g;
                        } else if *x < 0.0 {
                            *s -= g;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let yd = node.value.data();
                acc(*x, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(gd).zip(yd) {
                        *s += g * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yd = node.value.data();
                acc(*x, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(gd).zip(yd) {
                        *s += g * y * (1.0 - y);
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xd = val(*x).data();
                acc(*x, &|s| {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(xd) {
                        *s += if *x > 0.0 { *g } else { slope * g };
                    }
                });
            }
            Op::Sin(x) => {
                let xd = val(*x).data();
                acc(*x, &|s| {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(xd) {
                        *s += g * x.cos();
                    }
                });
            }
            Op::Cos(x) => {
                let xd = val(*x).data();
                acc(*x, &|s| {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(xd) {
                        *s -= g * x.sin();
                    }
                });
            }
            Op::Atan2(y, x) => {
                let (yd, xd) = (val(*y).data(), val(*x).data());
                acc(*y, &|s| {
                    for (((s, g), y), x) in s.iter_mut().zip(gd).zip(yd).zip(xd) {
                        let r2 = (x * x + y * y).max(NORM_EPS * NORM_EPS);
                        *s += g * x / r2;
                    }
                });
                acc(*x, &|s| {
                    for (((s, g), y), x) in s.iter_mut().zip(gd).zip(yd).zip(xd) {
                        let r2 = (x * x + y * y).max(NORM_EPS * NORM_EPS);
                        *s -= g * y / r2;
                    }
                });
            }
            Op::L2Norm { x, group } => {
                let (xd, nd) = (val(*x).data(), node.value.data());
                acc(*x, &|s| {
                    for (((sc, xc), g), n) in s
                        .chunks_mut(*group)
                        .zip(xd.chunks(*group))
                        .zip(gd)
                        .zip(nd)
                    {
                        let n = n.max(NORM_EPS);
                        for (s, x) in sc.iter_mut().zip(xc) {
                            *s += g * x / n;
                        }
                    }
                });
            }
            Op::Normalize(x) => {
                let (xd, yd) = (val(*x).data(), node.value.data());
                acc(*x, &|s| {
                    for (((sc, xc), yc), gc) in s
                        .chunks_mut(4)
                        .zip(xd.chunks(4))
                        .zip(yd.chunks(4))
                        .zip(gd.chunks(4))
                    {
                        let n = xc.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                        let yg: f64 = yc.iter().zip(gc).map(|(y, g)| y * g).sum();
                        for ((s, y), g) in sc.iter_mut().zip(yc).zip(gc) {
                            *s += (g - y * yg) / n;
                        }
                    }
                });
            }
            Op::QMul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                // d/da = g ⊗ conj(b), d/db = conj(a) ⊗ g
                acc(*a, &|s| {
                    let mut tmp = [0.0; 4];
                    for ((sc, gc), bc) in s.chunks_mut(4).zip(gd.chunks(4)).zip(bd.chunks(4)) {
                        quat_mul(gc, &[bc[0], -bc[1], -bc[2], -bc[3]], &mut tmp);
                        sc.iter_mut().zip(&tmp).for_each(|(s, t)| *s += t);
                    }
                });
                acc(*b, &|s| {
                    let mut tmp = [0.0; 4];
                    for ((sc, gc), ac) in s.chunks_mut(4).zip(gd.chunks(4)).zip(ad.chunks(4)) {
                        quat_mul(&[ac[0], -ac[1], -ac[2], -ac[3]], gc, &mut tmp);
                        sc.iter_mut().zip(&tmp).for_each(|(s, t)| *s += t);
                    }
                });
            }
            Op::Rotate(q, v) => {
                let (qd, vd) = (val(*q).data(), val(*v).data());
                acc(*q, &|s| {
                    for ((sc, qc), (vc, gc)) in s
                        .chunks_mut(4)
                        .zip(qd.chunks(4))
                        .zip(vd.chunks(3).zip(gd.chunks(3)))
                    {
                        let w = qc[0];
                        let u = [qc[1], qc[2], qc[3]];
                        let v = [vc[0], vc[1], vc[2]];
                        let g = [gc[0], gc[1], gc[2]];
                        sc[0] += 2.0 * dot3(cross(u, v), g);
                        let vg = cross(v, g);
                        let (ug, uv, vdg) = (dot3(u, g), dot3(u, v), dot3(v, g));
                        for d in 0..3 {
                            sc[1 + d] += 2.0 * w * vg[d]
                                + 2.0 * (ug * v[d] + uv * g[d] - 2.0 * vdg * u[d]);
                        }
                    }
                });
                acc(*v, &|s| {
                    for ((sc, qc), gc) in s.chunks_mut(3).zip(qd.chunks(4)).zip(gd.chunks(3)) {
                        let w = qc[0];
                        let u = [qc[1], qc[2], qc[3]];
                        let g = [gc[0], gc[1], gc[2]];
                        let gu = cross(g, u);
                        let uug = cross(u, cross(u, g));
                        for d in 0..3 {
                            sc[d] += g[d] + 2.0 * w * gu[d] + 2.0 * uug[d];
                        }
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                b,
                width,
                dilation,
            } => {
                let (xv, wv) = (val(*x), val(*w));
                let &[bs, t, cin] = xv.shape() else { unreachable!() };
                let cout = wv.shape()[1];
                let tout = t - (width - 1) * dilation;
                let (xd, wd) = (xv.data(), wv.data());
                acc(*b, &|s| {
                    for grow in gd.chunks(cout) {
                        s.iter_mut().zip(grow).for_each(|(s, g)| *s += g);
                    }
                });
                acc(*x, &|s| {
                    for bi in 0..bs {
                        for to in 0..tout {
                            let grow = &gd[(bi * tout + to) * cout..(bi * tout + to + 1) * cout];
                            for k in 0..*width {
                                let ti = to + k * dilation;
                                let srow = &mut s[(bi * t + ti) * cin..(bi * t + ti + 1) * cin];
                                for (ci, sv) in srow.iter_mut().enumerate() {
                                    let wrow = &wd[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                                    *sv += wrow.iter().zip(grow).map(|(w, g)| w * g).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                acc(*w, &|s| {
                    for bi in 0..bs {
                        for to in 0..tout {
                            let grow = &gd[(bi * tout + to) * cout..(bi * tout + to + 1) * cout];
                            for k in 0..*width {
                                let ti = to + k * dilation;
                                let xrow = &xd[(bi * t + ti) * cin..(bi * t + ti + 1) * cin];
                                for (ci, &xval) in xrow.iter().enumerate() {
                                    if xval == 0.0 {
                                        continue;
                                    }
                                    let srow =
                                        &mut s[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                                    srow.iter_mut().zip(grow).for_each(|(s, g)| *s += xval * g);
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

fn gather_cols(x: &Tensor, cols: &[usize]) -> Tensor {
    let c = x.last_dim();
    let rows = x.outer();
    let mut out = Vec::with_capacity(rows * cols.len());
    for r in 0..rows {
        let row = &x.data()[r * c..(r + 1) * c];
        out.extend(cols.iter().map(|&k| row[k]));
    }
    let mut shape = x.shape().to_vec();
    if let Some(last) = shape.last_mut() {
        *last = cols.len();
    }
    Tensor::new(shape, out).expect("gather shape")
}

#[inline]
fn rotate_raw(q: &[f64], v: [f64; 3]) -> [f64; 3] {
    let w = q[0];
    let u = [q[1], q[2], q[3]];
    let t = cross(u, v);
    let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
    let c = cross(u, t);
    [
        v[0] + w * t[0] + c[0],
        v[1] + w * t[1] + c[1],
        v[2] + w * t[2] + c[2],
    ]
}
