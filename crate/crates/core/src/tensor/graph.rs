//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and enough
//! bookkeeping to push gradients back to its inputs. `backward` walks the
//! node list once in reverse.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::sync::Arc;

use super::dense::{matmul_into, Scalar, Tensor};
use crate::error::{Error, Result};

/// Negative slope used by every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Added to the variance before the square root in instance normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse linear map between two vertex sets, `out[o] += w * in[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexMap {
    pub n_out: usize,
    pub n_in: usize,
    pub entries: Vec<(usize, usize, f64)>,
    /// Every row's weights sum to one; the forward pass then evaluates
    /// `in[p] + Σ w·(in[i] − in[p])` around the row's first input `p`, which
    /// returns a constant input unchanged.
    pub averaging: bool,
}

impl VertexMap {
    pub fn new(n_out: usize, n_in: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.iter().all(|&(o, i, _)| o < n_out && i < n_in));
        VertexMap {
            n_out,
            n_in,
            entries,
            averaging: false,
        }
    }

    /// Row-averaging map: output `o` is the mean of `rows[o]` (zero for an empty row).
    pub fn means(n_in: usize, rows: &[Vec<usize>]) -> Self {
        let entries = rows
            .iter()
            .enumerate()
            .flat_map(|(o, r)| r.iter().map(move |&i| (o, i, 1.0 / r.len() as f64)))
            .collect();
        VertexMap {
            averaging: true,
            ..VertexMap::new(rows.len(), n_in, entries)
        }
    }

    /// Picks `indices` out of `n_in` vertices in the given order.
    pub fn select(n_in: usize, indices: &[usize]) -> Self {
        let entries = indices
            .iter()
            .enumerate()
            .map(|(o, &i)| (o, i, 1.0))
            .collect();
        VertexMap::new(indices.len(), n_in, entries)
    }

    /// Places a `indices.len()`-vertex block into positions `indices` of `n_out` vertices.
    pub fn place(n_out: usize, indices: &[usize]) -> Self {
        let entries = indices
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, i, 1.0))
            .collect();
        VertexMap::new(n_out, indices.len(), entries)
    }

    pub fn transpose(&self) -> Self {
        VertexMap::new(
            self.n_in,
            self.n_out,
            self.entries.iter().map(|&(o, i, w)| (i, o, w)).collect(),
        )
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_in]; self.n_out];
        for &(o, i, w) in &self.entries {
            m[o][i] += w;
        }
        m
    }
}

enum Op<F> {
    Leaf,
    Add {
        a: Var,
        b: Var,
        bcast: bool,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
        bcast: bool,
    },
    Scale {
        a: Var,
        c: F,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Gather {
        x: Var,
        map: Arc<VertexMap>,
    },
    TemporalConv {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu {
        x: Var,
        slope: F,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    ChannelMean {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<F>,
    },
    PoolGroups {
        x: Var,
        map: Arc<VertexMap>,
    },
    Unpool {
        x: Var,
        map: Arc<VertexMap>,
    },
    Reshape {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    MeanAll {
        x: Var,
    },
    Abs {
        x: Var,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A single-threaded recording of tensor operations.
pub struct Graph<F: Scalar = f64> {
    nodes: Vec<Node<F>>,
    leaf_grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn frames_of(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::dim(
            "feature map",
            format!("expected (frames, vertices, channels), got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2]))
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf variable.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.leaf_grads[v.0].as_ref()
    }

    /// Fingerprint of the side of zero every input of a non-smooth op (leaky ReLU,
    /// absolute value) lies on. Two evaluations with equal signatures are on the
    /// same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } | Op::Abs { x } = node.op {
                for chunk in self.nodes[x.0].value.data().chunks(64) {
                    let bits = chunk
                        .iter()
                        .enumerate()
                        .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > F::zero()) << i));
                    h.write_u64(bits);
                }
            }
        }
        h.finish()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    // ---------------------------------------------------------------- ops

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.check_binary("add", a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let c = av.cols();
        let data: Vec<F> = if bcast {
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bv[i % c])
                .collect()
        } else {
            av.data().iter().zip(bv).map(|(&x, &y)| x + y).collect()
        };
        let out = Tensor::new(av.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b, bcast }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "sub",
                format!("lhs {:?} vs rhs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    /// Elementwise product; `b` may also be a trailing-axis vector broadcast over rows.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.check_binary("mul", a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let c = av.cols();
        let data: Vec<F> = if bcast {
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * bv[i % c])
                .collect()
        } else {
            av.data().iter().zip(bv).map(|(&x, &y)| x * y).collect()
        };
        let out = Tensor::new(av.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b, bcast }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = F::lit(c);
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, c }, rg)
    }

    fn check_binary(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb.len() == 1 && sb[0] == *sa.last().unwrap() {
            Ok(true)
        } else {
            Err(Error::dim(
                op,
                format!("rhs {sb:?} neither matches lhs {sa:?} nor its trailing axis"),
            ))
        }
    }

    /// 2-D matrix product with optional transposition of either operand.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("operands must be 2-D, got {sa:?} and {sb:?}"),
            ));
        }
        let (m, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(Error::dim(
                "matmul",
                format!(
                    "inner axes differ: {ka} (lhs {sa:?}, ta={ta}) vs {kb} (rhs {sb:?}, tb={tb})"
                ),
            ));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_into(
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            m,
            ka,
            n,
            &mut out,
            F::zero(),
        );
        let out = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out,
            Op::MatMul {
                a,
                b,
                ta,
                tb,
                m,
                k: ka,
                n,
            },
            rg,
        ))
    }

    /// Per-frame weighted vertex mixing: `(T, V_in, C) -> (T, V_out, C)`.
    pub fn gather_weighted_sum(&mut self, x: Var, map: &Arc<VertexMap>) -> Result<Var> {
        let (t, v, c) = frames_of(self.shape(x))?;
        if v != map.n_in {
            return Err(Error::dim(
                "gather_weighted_sum",
                format!("vertex axis {v} but map expects {}", map.n_in),
            ));
        }
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); t * map.n_out * c];
        let mut pivot = vec![None; map.n_out];
        if map.averaging {
            for &(o, i, _) in &map.entries {
                pivot[o].get_or_insert(i);
            }
        }
        for f in 0..t {
            let row = |i: usize| &xv[(f * v + i) * c..(f * v + i + 1) * c];
            for (o, p) in pivot.iter().enumerate() {
                if let Some(p) = *p {
                    out[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c]
                        .copy_from_slice(row(p));
                }
            }
            for &(o, i, w) in &map.entries {
                let w = F::lit(w);
                let dst = &mut out[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c];
                match pivot[o] {
                    Some(p) if p != i => {
                        for ((d, &s), &b) in dst.iter_mut().zip(row(i)).zip(row(p)) {
                            *d += w * (s - b);
                        }
                    }
                    Some(_) => {}
                    None => {
                        for (d, &s) in dst.iter_mut().zip(row(i)) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[t, map.n_out, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::Gather {
                x,
                map: map.clone(),
            },
            rg,
        ))
    }

    /// Temporal convolution per vertex with replicate padding and stride 1.
    ///
    /// `x: (T, V, C_in)`, `w: (k, C_in, C_out)` with odd `k`, optional bias `(C_out)`.
    pub fn temporal_conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (t, v, cin) = frames_of(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[0] % 2 == 0 {
            return Err(Error::dim(
                "temporal_conv1d",
                format!("weight {ws:?} must be (odd k, {cin}, C_out)"),
            ));
        }
        let (k, cout) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dim(
                    "temporal_conv1d",
                    format!("bias {:?} must be [{cout}]", self.shape(b)),
                ));
            }
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![F::zero(); t * v * cout];
        for (j, dst, src, n) in tap_blocks(t, k) {
            matmul_into(
                &xd[src * v * cin..(src + n) * v * cin],
                false,
                &wd[j * cin * cout..(j + 1) * cin * cout],
                false,
                n * v,
                cin,
                cout,
                &mut out[dst * v * cout..(dst + n) * v * cout],
                F::one(),
            );
        }
        if let Some(b) = b {
            add_rows(&mut out, self.value(b).data());
        }
        let out = Tensor::new(&[t, v, cout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::TemporalConv { x, w, b, k }, rg))
    }

    /// Row-wise affine map over the trailing axis: `x (…, C_in) · w (C_in, C_out) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let cin = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != cin {
            return Err(Error::dim(
                "linear",
                format!("input {xs:?} vs weight {ws:?}"),
            ));
        }
        let cout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dim(
                    "linear",
                    format!("bias {:?} must be [{cout}]", self.shape(b)),
                ));
            }
        }
        let rows = self.value(x).rows();
        let mut out = vec![F::zero(); rows * cout];
        matmul_into(
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            rows,
            cin,
            cout,
            &mut out,
            F::zero(),
        );
        if let Some(b) = b {
            add_rows(&mut out, self.value(b).data());
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let slope = F::lit(LEAKY_SLOPE);
        let out = self
            .value(x)
            .map(|v| if v > F::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax_over_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mx = (0..len).map(|a| xv[idx(a)]).fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for a in 0..len {
                    let e = (xv[idx(a)] - mx).exp();
                    out[idx(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[idx(a)] = out[idx(a)] / sum;
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Mean of every trailing-axis channel over all other axes; output `(C)`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let mut out = vec![F::zero(); c];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(&xv.data()[r * c..(r + 1) * c]) {
                *o += v;
            }
        }
        let inv = F::one() / F::lit(rows as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(&[c], out).expect("nonzero channels");
        let rg = self.rg(x);
        self.push(out, Op::ChannelMean { x }, rg)
    }

    /// Per-channel normalization over all non-channel axes, no affine terms.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let (mean, var) = channel_moments(xv.data(), rows, c);
        let eps = F::lit(NORM_EPS);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut out = xv.data().to_vec();
        for r in 0..rows {
            for ch in 0..c {
                let o = &mut out[r * c + ch];
                *o = (*o - mean[ch]) * inv_std[ch];
            }
        }
        let out = Tensor::new(xv.shape(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, rg)
    }

    /// Spatial group average through `map` plus temporal average pooling (kernel 2, stride 2).
    ///
    /// With an odd frame count the last output frame averages the final frame with itself.
    pub fn avg_pool_groups(&mut self, x: Var, map: &Arc<VertexMap>) -> Result<Var> {
        let (t, v, c) = frames_of(self.shape(x))?;
        if v != map.n_in {
            return Err(Error::dim(
                "avg_pool_groups",
                format!("vertex axis {v} but pooling map expects {}", map.n_in),
            ));
        }
        let to = t.div_ceil(2);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); to * map.n_out * c];
        let half = F::lit(0.5);
        for f in 0..to {
            let (f0, f1) = (2 * f, (2 * f + 1).min(t - 1));
            for &(o, i, w) in &map.entries {
                let w = F::lit(w) * half;
                let a = &xv[(f0 * v + i) * c..(f0 * v + i + 1) * c];
                let b = &xv[(f1 * v + i) * c..(f1 * v + i + 1) * c];
                let dst = &mut out[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c];
                for ((d, &p), &q) in dst.iter_mut().zip(a).zip(b) {
                    *d += w * (p + q);
                }
            }
        }
        let out = Tensor::new(&[to, map.n_out, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::PoolGroups {
                x,
                map: map.clone(),
            },
            rg,
        ))
    }

    /// Copies coarse vertices onto their fine members through `map` and repeats each frame twice.
    pub fn broadcast_unpool(&mut self, x: Var, map: &Arc<VertexMap>) -> Result<Var> {
        let (t, v, c) = frames_of(self.shape(x))?;
        if v != map.n_in {
            return Err(Error::dim(
                "broadcast_unpool",
                format!("vertex axis {v} but unpooling map expects {}", map.n_in),
            ));
        }
        let to = 2 * t;
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); to * map.n_out * c];
        for f in 0..to {
            let fs = f / 2;
            for &(o, i, w) in &map.entries {
                let w = F::lit(w);
                let src = &xv[(fs * v + i) * c..(fs * v + i + 1) * c];
                let dst = &mut out[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let out = Tensor::new(&[to, map.n_out, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::Unpool {
                x,
                map: map.clone(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| Error::dim("concat_axis", "no inputs"))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim(
                "concat_axis",
                format!("axis {axis} out of range for {first:?}"),
            ));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat_axis",
                    format!("{s:?} incompatible with {first:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let d = self.value(x).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let out = Tensor::new(&shape, out)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let out = Tensor::new(&oshape, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().copied().sum::<F>() / F::lit(xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::MeanAll { x }, rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        let rg = self.rg(x);
        self.push(out, Op::Abs { x }, rg)
    }

    /// Mean absolute difference, the L1 reduction used by every loss.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean_all(d))
    }

    // ----------------------------------------------------------- backward

    /// Accumulates `∂loss/∂leaf` into every reachable variable.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.leaf_grads[id];
                match slot {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&gy)
                        .for_each(|(a, &g)| *a += g),
                    None => *slot = Some(Tensor::new(node.value.shape(), gy)?),
                }
                continue;
            }
            self.propagate(id, &gy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, gy: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b, bcast } => {
                send(*a, &mut |g| acc(g, gy));
                let c = node.value.cols();
                send(*b, &mut |g| {
                    if *bcast {
                        gy.chunks(c).for_each(|row| acc(g, row));
                    } else {
                        acc(g, gy)
                    }
                });
            }
            Op::Sub { a, b } => {
                send(*a, &mut |g| acc(g, gy));
                send(*b, &mut |g| {
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g -= d)
                });
            }
            Op::Mul { a, b, bcast } => {
                let (av, bv) = (val(*a), val(*b));
                let c = node.value.cols();
                send(*a, &mut |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += gy[i] * if *bcast { bv[i % c] } else { bv[i] };
                    }
                });
                send(*b, &mut |g| {
                    for (i, (&d, &x)) in gy.iter().zip(av).enumerate() {
                        g[if *bcast { i % c } else { i }] += d * x;
                    }
                });
            }
            Op::Scale { a, c } => send(*a, &mut |g| {
                g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d * *c)
            }),
            Op::MatMul {
                a,
                b,
                ta,
                tb,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (val(*a), val(*b));
                // y = op(a)·op(b); d op(a) = gy·op(b)^T, d op(b) = op(a)^T·gy
                send(*a, &mut |g| {
                    if *ta {
                        matmul_into(bv, *tb, gy, true, k, n, m, g, F::one());
                    } else {
                        matmul_into(gy, false, bv, !*tb, m, n, k, g, F::one());
                    }
                });
                send(*b, &mut |g| {
                    if *tb {
                        matmul_into(gy, true, av, *ta, n, m, k, g, F::one());
                    } else {
                        matmul_into(av, !*ta, gy, false, k, m, n, g, F::one());
                    }
                });
            }
            Op::Gather { x, map } => {
                let s = nodes[x.0].value.shape();
                let (t, v, c) = (s[0], s[1], s[2]);
                send(*x, &mut |g| {
                    for f in 0..t {
                        for &(o, i, w) in &map.entries {
                            let w = F::lit(w);
                            let src = &gy[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c];
                            let dst = &mut g[(f * v + i) * c..(f * v + i + 1) * c];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
                        }
                    }
                });
            }
            Op::TemporalConv { x, w, b, k } => {
                let s = nodes[x.0].value.shape();
                let (t, v, cin) = (s[0], s[1], s[2]);
                let cout = node.value.cols();
                let k = *k;
                let blocks = tap_blocks(t, k);
                let (xd, wd) = (val(*x), val(*w));
                let (xs, ys, ws) = (v * cin, v * cout, cin * cout);
                send(*w, &mut |g| {
                    for &(j, dst, src, n) in &blocks {
                        matmul_into(
                            &xd[src * xs..(src + n) * xs],
                            true,
                            &gy[dst * ys..(dst + n) * ys],
                            false,
                            cin,
                            n * v,
                            cout,
                            &mut g[j * ws..(j + 1) * ws],
                            F::one(),
                        );
                    }
                });
                if let Some(b) = b {
                    send(*b, &mut |g| gy.chunks(cout).for_each(|row| acc(g, row)));
                }
                send(*x, &mut |g| {
                    for &(j, dst, src, n) in &blocks {
                        matmul_into(
                            &gy[dst * ys..(dst + n) * ys],
                            false,
                            &wd[j * ws..(j + 1) * ws],
                            true,
                            n * v,
                            cout,
                            cin,
                            &mut g[src * xs..(src + n) * xs],
                            F::one(),
                        );
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let xv = &nodes[x.0].value;
                let (rows, cin) = (xv.rows(), xv.cols());
                let cout = node.value.cols();
                send(*w, &mut |g| {
                    matmul_into(xv.data(), true, gy, false, cin, rows, cout, g, F::one())
                });
                if let Some(b) = b {
                    send(*b, &mut |g| gy.chunks(cout).for_each(|row| acc(g, row)));
                }
                send(*x, &mut |g| {
                    matmul_into(gy, false, val(*w), true, rows, cout, cin, g, F::one())
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = val(*x);
                send(*x, &mut |g| {
                    for ((g, &d), &xi) in g.iter_mut().zip(gy).zip(xv) {
                        *g += if xi > F::zero() { d } else { d * *slope };
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                send(*x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + i;
                            let dot: F = (0..len).map(|a| gy[idx(a)] * y[idx(a)]).sum();
                            for a in 0..len {
                                g[idx(a)] += y[idx(a)] * (gy[idx(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::ChannelMean { x } => {
                let rows = nodes[x.0].value.rows();
                let inv = F::one() / F::lit(rows as f64);
                send(*x, &mut |g| {
                    for row in g.chunks_mut(gy.len()) {
                        row.iter_mut().zip(gy).for_each(|(r, &d)| *r += d * inv);
                    }
                });
            }
            Op::InstanceNorm { x, inv_std } => {
                let c = node.value.cols();
                let rows = node.value.rows();
                let nf = F::lit(rows as f64);
                let mut sum_g = vec![F::zero(); c];
                let mut sum_gy = vec![F::zero(); c];
                for r in 0..rows {
                    for ch in 0..c {
                        let i = r * c + ch;
                        sum_g[ch] += gy[i];
                        sum_gy[ch] += gy[i] * y[i];
                    }
                }
                send(*x, &mut |g| {
                    for r in 0..rows {
                        for ch in 0..c {
                            let i = r * c + ch;
                            g[i] += inv_std[ch] / nf * (nf * gy[i] - sum_g[ch] - y[i] * sum_gy[ch]);
                        }
                    }
                });
            }
            Op::PoolGroups { x, map } => {
                let s = nodes[x.0].value.shape();
                let (t, v, c) = (s[0], s[1], s[2]);
                let to = node.value.shape()[0];
                let half = F::lit(0.5);
                send(*x, &mut |g| {
                    for f in 0..to {
                        let (f0, f1) = (2 * f, (2 * f + 1).min(t - 1));
                        for &(o, i, w) in &map.entries {
                            let w = F::lit(w) * half;
                            let src = &gy[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c];
                            for ff in [f0, f1] {
                                let dst = &mut g[(ff * v + i) * c..(ff * v + i + 1) * c];
                                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
                            }
                        }
                    }
                });
            }
            Op::Unpool { x, map } => {
                let s = nodes[x.0].value.shape();
                let (v, c) = (s[1], s[2]);
                let to = node.value.shape()[0];
                send(*x, &mut |g| {
                    for f in 0..to {
                        let fs = f / 2;
                        for &(o, i, w) in &map.entries {
                            let w = F::lit(w);
                            let src = &gy[(f * map.n_out + o) * c..(f * map.n_out + o + 1) * c];
                            let dst = &mut g[(fs * v + i) * c..(fs * v + i + 1) * c];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
                        }
                    }
                });
            }
            Op::Reshape { x } => send(*x, &mut |g| acc(g, gy)),
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = nodes[x.0].value.shape()[*axis];
                    send(x, &mut |g| {
                        for o in 0..outer {
                            let src = &gy
                                [(o * total + offset) * inner..(o * total + offset + len) * inner];
                            acc(&mut g[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, alen, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                send(*x, &mut |g| {
                    for o in 0..outer {
                        let base = (o * alen + start) * inner;
                        acc(
                            &mut g[base..base + len * inner],
                            &gy[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::MeanAll { x } => {
                let n = nodes[x.0].value.len();
                let d = gy[0] / F::lit(n as f64);
                send(*x, &mut |g| g.iter_mut().for_each(|g| *g += d));
            }
            Op::Abs { x } => {
                let xv = val(*x);
                send(*x, &mut |g| {
                    for ((g, &d), &xi) in g.iter_mut().zip(gy).zip(xv) {
                        if xi > F::zero() {
                            *g += d;
                        } else if xi < F::zero() {
                            *g -= d;
                        }
                    }
                });
            }
        }
    }
}

#[inline]
fn acc<F: Scalar>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn add_rows<F: Scalar>(out: &mut [F], bias: &[F]) {
    for row in out.chunks_mut(bias.len()) {
        acc(row, bias);
    }
}

/// Per-channel mean and biased variance over rows.
pub(crate) fn channel_moments<F: Scalar>(data: &[F], rows: usize, c: usize) -> (Vec<F>, Vec<F>) {
    let mut mean = vec![F::zero(); c];
    for r in 0..rows {
        acc(&mut mean, &data[r * c..(r + 1) * c]);
    }
    let nf = F::lit(rows as f64);
    mean.iter_mut().for_each(|m| *m = *m / nf);
    let mut var = vec![F::zero(); c];
    for r in 0..rows {
        for ch in 0..c {
            let d = data[r * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v = *v / nf);
    (mean, var)
}

/// Frame correspondences of a replicate-padded temporal convolution.
///
/// Each `(tap, dst, src, n)` says that output frames `dst..dst + n` read input
/// frames `src..src + n` through tap `tap`; the edge frames clamped onto the first
/// or last input frame get one-frame blocks.
fn tap_blocks(t: usize, k: usize) -> Vec<(usize, usize, usize, usize)> {
    let r = (k / 2) as isize;
    let t = t as isize;
    let mut out = Vec::new();
    for j in 0..k {
        let off = j as isize - r;
        let lo = (-off).clamp(0, t);
        let hi = (t - off).clamp(0, t);
        if hi > lo {
            out.push((j, lo as usize, (lo + off) as usize, (hi - lo) as usize));
        }
        for f in (0..lo).chain(hi.max(lo)..t) {
            let src = (f + off).clamp(0, t - 1);
            out.push((j, f as usize, src as usize, 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[0.0, 0.0]));
        let s = g.softmax(a, 0).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn instance_norm_two_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 1], &[1.0, 3.0]));
        let n = g.instance_norm(a);
        // (x - 2) / sqrt(1 + eps)
        let expect = 1.0 / (1.0 + NORM_EPS).sqrt();
        let v = g.value(n).data();
        assert!((v[0] + expect).abs() < 1e-12 && (v[1] - expect).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[2, 2], &[0.0; 4]));
        match g.add(a, b).unwrap_err() {
            Error::Dimension { op, detail } => {
                assert_eq!(op, "add");
                assert!(detail.contains("[2, 2]"));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            g.matmul(a, b, false, false),
            Err(Error::Dimension { op: "matmul", .. })
        ));
    }

    #[test]
    fn linear_mean_gradient() {
        // loss = mean(w * x) -> dw = x / n
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.variable(t(&[4], &[0.5, -1.0, 2.0, 0.0]));
        let p = g.mul(w, x).unwrap();
        let l = g.mean_all(p);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn quadratic_gradient_and_accumulation() {
        // loss = sum((w - 1)^2) at w = 3 -> 4
        let mut g = Graph::<f64>::new();
        let w = g.variable(t(&[1], &[3.0]));
        let one = g.constant(t(&[1], &[1.0]));
        let d = g.sub(w, one).unwrap();
        let sq = g.mul(d, d).unwrap();
        let l = g.mean_all(sq);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[4.0]);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[8.0]);
        g.zero_grad();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let w = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn pool_odd_frames_pairs_last_with_itself() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 1, 1], &[1.0, 3.0, 7.0]));
        let map = Arc::new(VertexMap::select(1, &[0]));
        let p = g.avg_pool_groups(x, &map).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 7.0]);
    }

    #[test]
    fn temporal_conv_impulse_support() {
        let (t_len, k) = (11, 5);
        let mut data = vec![0.0; t_len];
        data[5] = 1.0;
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[t_len, 1, 1], &data));
        let w = g.constant(t(&[k, 1, 1], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let y = g.temporal_conv1d(x, w, None).unwrap();
        let out = g.value(y).data();
        for (f, &v) in out.iter().enumerate() {
            assert_eq!(v != 0.0, (3..=7).contains(&f), "frame {f}");
        }
        // tap j reads frame f + j - 2, so the impulse at 5 reaches frame 3 through tap 4
        assert_eq!(out[3], 5.0);
        assert_eq!(out[7], 1.0);
    }
}
