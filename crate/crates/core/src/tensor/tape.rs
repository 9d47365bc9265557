//! Append-only reverse-mode tape.
//!
//! Every primitive pushes one node whose parents precede it, so reverse
//! iteration over the node list is a valid topological order. Results whose
//! inputs are all constants are stored as constants and never revisited.

use super::kernels::{self, ConvGeom, GroupStats};
use super::Tensor;
use crate::error::{conform, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitive set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Elementwise sum; the right operand may broadcast over unit extents.
    Add,
    Sub,
    Mul,
    /// Multiplication by a fixed scalar.
    Scale(f64),
    /// `(m, k) x (k, n)`.
    MatMul,
    /// `x (B, I, H, W)`, `w (O, I, k, k)`, optional bias `(O)`; stride 1, zero "same" padding.
    Conv2d,
    AvgPool2,
    Upsample2,
    Silu,
    /// Inputs `x (B, C, ...)`, `gamma (C)`, `beta (C)`.
    GroupNorm { groups: usize },
    /// Concatenation along axis 1.
    Concat,
    /// Mean of all elements, producing a scalar.
    Mean,
    Abs,
    Square,
}

const GROUP_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Add { rhs_shape: Option<Vec<usize>> },
    Sub { rhs_shape: Option<Vec<usize>> },
    Mul { rhs_shape: Option<Vec<usize>> },
    Scale(T),
    MatMul { m: usize, k: usize, n: usize },
    Conv2d { geom: ConvGeom },
    AvgPool2 { planes: usize, h: usize, w: usize },
    Upsample2 { planes: usize, h: usize, w: usize },
    Silu { sig: Vec<T> },
    GroupNorm { groups: usize, batch: usize, channels: usize, spatial: usize, stats: GroupStats<T> },
    Concat { outer: usize, widths: Vec<usize> },
    Mean,
    Abs,
    Square,
    Reshape,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parents: Vec<usize>,
    requires_grad: bool,
}

/// Recording of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every trainable leaf of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a trainable leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, Vec::new(), true)
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        if requires_grad {
            let parents = parents.iter().map(|p| p.0).collect();
            self.push_raw(value, op, parents, true)
        } else {
            self.push_raw(value, Op::Leaf, Vec::new(), false)
        }
    }

    /// Applies `prim` to `inputs`.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            Primitive::GroupNorm { .. } => 3,
            Primitive::Conv2d => {
                if inputs.len() == 2 || inputs.len() == 3 {
                    inputs.len()
                } else {
                    2
                }
            }
            Primitive::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidConfig(format!(
                "{prim:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match prim {
            Primitive::Add => self.add(inputs[0], inputs[1]),
            Primitive::Sub => self.sub(inputs[0], inputs[1]),
            Primitive::Mul => self.mul(inputs[0], inputs[1]),
            Primitive::Scale(c) => Ok(self.scale(inputs[0], T::lit(c))),
            Primitive::MatMul => self.matmul(inputs[0], inputs[1]),
            Primitive::Conv2d => self.conv2d(inputs[0], inputs[1], inputs.get(2).copied()),
            Primitive::AvgPool2 => self.avg_pool2(inputs[0]),
            Primitive::Upsample2 => self.upsample2(inputs[0]),
            Primitive::Silu => Ok(self.silu(inputs[0])),
            Primitive::GroupNorm { groups } => self.group_norm(inputs[0], inputs[1], inputs[2], groups),
            Primitive::Concat => self.concat(inputs),
            Primitive::Mean => Ok(self.mean(inputs[0])),
            Primitive::Abs => Ok(self.abs(inputs[0])),
            Primitive::Square => Ok(self.square(inputs[0])),
        }
    }

    /// Checks that `rhs` broadcasts onto `lhs`; returns `None` when equal.
    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Option<Vec<usize>>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(None);
        }
        if sa.len() != sb.len() || sa.iter().zip(sb).any(|(&x, &y)| y != x && y != 1) {
            return Err(conform(op, sa, sb));
        }
        Ok(Some(sb.to_vec()))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Option<Vec<usize>>) -> Op<T>,
    ) -> Result<Var> {
        let rhs_shape = self.broadcast_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<T> = match &rhs_shape {
            None => va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            Some(small) => {
                let offs = kernels::broadcast_offsets(va.shape(), small);
                va.data()
                    .iter()
                    .zip(offs)
                    .map(|(&x, o)| f(x, vb.data()[o]))
                    .collect()
            }
        };
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, make(rhs_shape), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |rhs_shape| Op::Add { rhs_shape })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |rhs_shape| Op::Sub { rhs_shape })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |rhs_shape| Op::Mul { rhs_shape })
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(conform("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { m, k, n }, &[a, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(conform("conv2d", &sx, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(conform("conv2d bias", &sw, self.shape(b)));
            }
        }
        let geom = ConvGeom {
            batch: sx[0],
            in_ch: sx[1],
            out_ch: sw[0],
            height: sx[2],
            width: sx[3],
            kernel: sw[2],
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![geom.batch, geom.out_ch, geom.height, geom.width], out)?;
        let parents: Vec<Var> = match bias {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        Ok(self.push(value, Op::Conv2d { geom }, &parents))
    }

    fn planes(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 3 {
            return Err(Error::InvalidShape(format!("{op} needs rank >= 3, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        Ok((s[..s.len() - 2].iter().product(), h, w))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = self.planes("avg_pool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape(format!(
                "avg_pool2 needs even extents, got {:?}",
                self.shape(x)
            )));
        }
        let out = kernels::avg_pool2(self.value(x).data(), planes, h, w);
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] = h / 2;
        shape[r - 1] = w / 2;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::AvgPool2 { planes, h, w }, &[x]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = self.planes("upsample2", x)?;
        let out = kernels::upsample2(self.value(x).data(), planes, h, w);
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Upsample2 { planes, h, w }, &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sig: Vec<T> = xv.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let out = xv.data().iter().zip(&sig).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(xv.shape().to_vec(), out).expect("shape preserved");
        self.push(value, Op::Silu { sig }, &[x])
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::InvalidShape(format!("group_norm needs rank >= 2, got {s:?}")));
        }
        let (batch, channels) = (s[0], s[1]);
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "{channels} channels cannot be split into {groups} groups"
            )));
        }
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(conform("group_norm affine", &s, self.shape(gamma)));
        }
        let spatial: usize = s[2..].iter().product();
        let (out, stats) = kernels::group_norm_forward(
            self.value(x).data(),
            batch,
            channels,
            spatial,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::lit(GROUP_NORM_EPS),
        );
        let value = Tensor::new(s, out)?;
        Ok(self.push(
            value,
            Op::GroupNorm {
                groups,
                batch,
                channels,
                spatial,
                stats,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?)
            .to_vec();
        if first.len() < 2 {
            return Err(Error::InvalidShape(format!("concat needs rank >= 2, got {first:?}")));
        }
        let outer = first[0];
        let inner: usize = first[2..].iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(conform("concat", &first, s));
            }
            widths.push(s[1] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for b in 0..outer {
            for (&x, &wd) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[b * wd..(b + 1) * wd]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total / inner;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { outer, widths }, xs))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(value, Op::Mean, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs, &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square, &[x])
    }

    /// Reinterprets the extents without moving data.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape, &[x]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 || lv.rank() > 1 {
            return Err(Error::Rank(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.adjoint(node, &g)?;
            for (&p, c) in node.parents.iter().zip(contributions) {
                let Some(c) = c else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(c.data()) {
                            *a = *a + v;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }
        // Trainable leaves always get an entry, zero when unreachable.
        for (i, node) in self.nodes.iter().enumerate() {
            let trainable_leaf = node.requires_grad && node.parents.is_empty();
            if trainable_leaf {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products for each parent of `node`.
    fn adjoint(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let pv = |k: usize| &self.nodes[node.parents[k]].value;
        let needs = |k: usize| self.nodes[node.parents[k]].requires_grad;
        let gd = g.data();
        let like = |shape: &[usize], data: Vec<T>| Tensor::new(shape.to_vec(), data);
        let reduce_rhs = |data: Vec<T>, rhs_shape: &Option<Vec<usize>>| -> Result<Tensor<T>> {
            match rhs_shape {
                None => like(g.shape(), data),
                Some(small) => {
                    let offs = kernels::broadcast_offsets(g.shape(), small);
                    let n = small.iter().product();
                    like(small, kernels::reduce_to(&data, &offs, n))
                }
            }
        };
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { rhs_shape } => vec![
                Some(g.clone()),
                needs(1).then(|| reduce_rhs(gd.to_vec(), rhs_shape)).transpose()?,
            ],
            Op::Sub { rhs_shape } => vec![
                Some(g.clone()),
                needs(1)
                    .then(|| reduce_rhs(gd.iter().map(|&v| -v).collect(), rhs_shape))
                    .transpose()?,
            ],
            Op::Mul { rhs_shape } => {
                let (a, b) = (pv(0), pv(1));
                let offs = rhs_shape
                    .as_ref()
                    .map(|small| kernels::broadcast_offsets(a.shape(), small));
                let b_at = |i: usize| match &offs {
                    Some(o) => b.data()[o[i]],
                    None => b.data()[i],
                };
                let ga = gd.iter().enumerate().map(|(i, &v)| v * b_at(i)).collect();
                let gb = needs(1)
                    .then(|| {
                        let prod = gd.iter().zip(a.data()).map(|(&v, &x)| v * x).collect();
                        reduce_rhs(prod, rhs_shape)
                    })
                    .transpose()?;
                vec![Some(like(a.shape(), ga)?), gb]
            }
            Op::Scale(c) => vec![Some(g.map(|v| v * *c))],
            Op::MatMul { m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (a, b) = (pv(0), pv(1));
                let ga = needs(0).then(|| {
                    let mut out = vec![T::zero(); m * k];
                    // g (m x n) * b^T (n x k)
                    T::gemm(m, n, k, T::one(), gd, (n as isize, 1), b.data(), (1, n as isize), T::zero(), &mut out, (k as isize, 1));
                    out
                });
                let gb = needs(1).then(|| {
                    let mut out = vec![T::zero(); k * n];
                    // a^T (k x m) * g (m x n)
                    T::gemm(k, m, n, T::one(), a.data(), (1, k as isize), gd, (n as isize, 1), T::zero(), &mut out, (n as isize, 1));
                    out
                });
                vec![
                    ga.map(|d| like(a.shape(), d)).transpose()?,
                    gb.map(|d| like(b.shape(), d)).transpose()?,
                ]
            }
            Op::Conv2d { geom } => {
                let (x, w) = (pv(0), pv(1));
                let (dx, dw, db) = kernels::conv2d_backward(geom, x.data(), w.data(), gd, needs(0), needs(1));
                let mut v = vec![
                    dx.map(|d| like(x.shape(), d)).transpose()?,
                    dw.map(|d| like(w.shape(), d)).transpose()?,
                ];
                if node.parents.len() == 3 {
                    v.push(Some(like(&[geom.out_ch], db)?));
                }
                v
            }
            Op::AvgPool2 { planes, h, w } => {
                vec![Some(like(pv(0).shape(), kernels::avg_pool2_adjoint(gd, *planes, *h, *w))?)]
            }
            Op::Upsample2 { planes, h, w } => {
                vec![Some(like(pv(0).shape(), kernels::upsample2_adjoint(gd, *planes, *h, *w))?)]
            }
            Op::Silu { sig } => {
                let x = pv(0);
                let d = gd
                    .iter()
                    .zip(x.data())
                    .zip(sig)
                    .map(|((&gv, &xv), &s)| gv * s * (T::one() + xv * (T::one() - s)))
                    .collect();
                vec![Some(like(x.shape(), d)?)]
            }
            Op::GroupNorm {
                groups,
                batch,
                channels,
                spatial,
                stats,
            } => {
                let (x, gamma) = (pv(0), pv(1));
                let (dx, dgamma, dbeta) = kernels::group_norm_backward(
                    x.data(),
                    gd,
                    *batch,
                    *channels,
                    *spatial,
                    *groups,
                    gamma.data(),
                    stats,
                );
                vec![
                    Some(like(x.shape(), dx)?),
                    Some(like(&[*channels], dgamma)?),
                    Some(like(&[*channels], dbeta)?),
                ]
            }
            Op::Concat { outer, widths } => {
                let total: usize = widths.iter().sum();
                let mut start = 0;
                let mut parts = Vec::with_capacity(widths.len());
                for (k, &wd) in widths.iter().enumerate() {
                    let mut d = Vec::with_capacity(outer * wd);
                    for b in 0..*outer {
                        d.extend_from_slice(&gd[b * total + start..b * total + start + wd]);
                    }
                    parts.push(Some(like(pv(k).shape(), d)?));
                    start += wd;
                }
                parts
            }
            Op::Mean => {
                let x = pv(0);
                let v = gd[0] / T::lit(x.numel() as f64);
                vec![Some(Tensor::full(x.shape(), v))]
            }
            Op::Abs => {
                let x = pv(0);
                let d = gd
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![Some(like(x.shape(), d)?)]
            }
            Op::Square => {
                let x = pv(0);
                let two = T::lit(2.0);
                let d = gd.iter().zip(x.data()).map(|(&gv, &xv)| gv * two * xv).collect();
                vec![Some(like(x.shape(), d)?)]
            }
            Op::Reshape => vec![Some(like(pv(0).shape(), gd.to_vec())?)],
        };
        Ok(out)
    }
}
