//! Reverse-mode automatic differentiation on a per-forward-pass tape.
//!
//! A [`Graph`] records every op applied to its [`Var`]s in execution order, so
//! the tape is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep. Ops are coarse (a whole convolution or normalization is one
//! node) with hand-written adjoints. Dropping the graph frees the tape.
//!
//! Broadcasting: binary elementwise ops take a left operand `a` and a right
//! operand `b`; `b`'s shape is right-aligned against `a`'s and each of its
//! dimensions must equal the matching dimension of `a` or be `1`. A scalar
//! (`shape == []`) broadcasts everywhere. The result always has `a`'s shape.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom, GemmDims};
use super::{Float, ParamId, ParamStore, Tensor};
use crate::error::{contract_err, dim_err, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Per-channel statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased (population) variance.
    pub var: Vec<F>,
    /// Number of values each statistic was computed from.
    pub count: usize,
}

enum Op<F> {
    Leaf,
    Param,
    Binary {
        kind: BinaryOp,
        a: Var,
        b: Var,
        map: Option<Vec<usize>>,
    },
    Scale(Var, F),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        layout: NormLayout,
        batch_stats: bool,
    },
    Gelu(Var),
    Softmax(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    MeanLast(Var),
    Sum(Var),
    PrependRow {
        x: Var,
        row: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

/// How a normalization groups elements.
#[derive(Clone, Copy, Debug)]
enum NormLayout {
    /// `(batch, channels, time)`, statistics per channel.
    Channel { batch: usize, channels: usize, len: usize },
    /// `(rows, features)`, statistics per row.
    Row { rows: usize, features: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Tape of recorded operations.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            check_finite: false,
        }
    }

    /// Makes every op fail with [`Error::NonFinite`] when it produces NaN or Inf.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool, name: &str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Grads::wrt`].
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reads a stored parameter onto the tape; repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param,
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn elementwise(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sb.len() <= sa.len()
            && sb
                .iter()
                .zip(&sa[sa.len() - sb.len()..])
                .all(|(&db, &da)| db == da || db == 1);
        if !compatible {
            return Err(dim_err!("cannot broadcast {sb:?} onto {sa:?}"));
        }
        let map = (sa != sb).then(|| kernels::broadcast_index_map(&sa, &sb));
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f = |x: F, y: F| match kind {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let out: Vec<F> = match &map {
            None => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Some(m) => av.iter().zip(m).map(|(&x, &j)| f(x, bv[j])).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(sa, out)?, Op::Binary { kind, a, b, map }, rg, "elementwise")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg, "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let a3 = self.reshape(a, &[1, m, k])?;
                let b3 = self.reshape(b, &[1, k, n])?;
                let c = self.bmm(a3, b3, false)?;
                self.reshape(c, &[m, n])
            }
            _ => Err(dim_err!("matmul of {sa:?} by {sb:?}")),
        }
    }

    /// Batched product of `(B, m, k)` with `(B, k, n)`, or with `(B, n, k)`
    /// transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let dims = match (sa.as_slice(), sb.as_slice(), trans_b) {
            (&[ba, m, k], &[bb, k2, n], false) if ba == bb && k == k2 => (ba, GemmDims { m, k, n }),
            (&[ba, m, k], &[bb, n, k2], true) if ba == bb && k == k2 => (ba, GemmDims { m, k, n }),
            _ => return Err(dim_err!("bmm of {sa:?} by {sb:?} (trans_b = {trans_b})")),
        };
        let (batch, d) = dims;
        let mut out = vec![F::zero(); batch * d.m * d.n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for i in 0..batch {
            kernels::gemm(
                &av[i * d.m * d.k..(i + 1) * d.m * d.k],
                &bv[i * d.k * d.n..(i + 1) * d.k * d.n],
                &mut out[i * d.m * d.n..(i + 1) * d.m * d.n],
                d,
                false,
                trans_b,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::new([batch, d.m, d.n], out)?,
            Op::Bmm { a, b, trans_b },
            rg,
            "bmm",
        )
    }

    /// `x · wᵀ + b` over the last axis of `x`; `w` is `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (out_f, in_f) = match sw.as_slice() {
            &[o, i] => (o, i),
            _ => return Err(dim_err!("linear weight must be 2-D, got {sw:?}")),
        };
        if sx.last() != Some(&in_f) {
            return Err(dim_err!(
                "linear expects trailing dimension {in_f}, input has shape {sx:?}"
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(dim_err!("linear bias shape {:?}, expected [{out_f}]", self.shape(b)));
            }
        }
        let rows = self.value(x).len() / in_f;
        let mut out = vec![F::zero(); rows * out_f];
        kernels::gemm(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            GemmDims {
                m: rows,
                k: in_f,
                n: out_f,
            },
            false,
            true,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(out_f) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = out_f;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg, "linear")
    }

    /// 1-D convolution of `x: (batch, C_in, T)` by `w: (C_out, C_in/groups, kernel)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (batch, cin, len_in) = match sx.as_slice() {
            &[b, c, t] => (b, c, t),
            _ => return Err(dim_err!("conv1d input must be (batch, channels, time), got {sx:?}")),
        };
        let (cout, cin_g, kernel) = match sw.as_slice() {
            &[o, i, k] => (o, i, k),
            _ => return Err(dim_err!("conv1d weight must be 3-D, got {sw:?}")),
        };
        if groups == 0 || stride == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(dim_err!(
                "conv1d channel mismatch: input {sx:?}, weight {sw:?}, groups {groups}"
            ));
        }
        if len_in + 2 * padding < kernel {
            return Err(dim_err!(
                "conv1d input length {len_in} with padding {padding} is shorter than kernel {kernel}"
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(dim_err!("conv1d bias shape {:?}, expected [{cout}]", self.shape(b)));
            }
        }
        let len_out = (len_in + 2 * padding - kernel) / stride + 1;
        let geom = ConvGeom {
            batch,
            in_channels: cin,
            out_channels: cout,
            len_in,
            len_out,
            kernel,
            stride,
            padding,
            groups,
        };
        let mut out = vec![F::zero(); batch * cout * len_out];
        kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
            geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            Tensor::new([batch, cout, len_out], out)?,
            Op::Conv1d { x, w, b, geom },
            rg,
            "conv1d",
        )
    }

    /// Batch normalization of `x: (batch, C, T)` per channel.
    ///
    /// With `running = None` the batch statistics are used and returned so the
    /// caller can fold them into its running estimates; otherwise the given
    /// `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
        running: Option<(&[F], &[F])>,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        let sx = self.shape(x).to_vec();
        let (batch, channels, len) = match sx.as_slice() {
            &[b, c, t] => (b, c, t),
            _ => return Err(dim_err!("batch norm input must be (batch, C, T), got {sx:?}")),
        };
        for p in [gamma, beta] {
            if self.shape(p) != [channels] {
                return Err(dim_err!(
                    "batch norm over {channels} channels given parameter of shape {:?}",
                    self.shape(p)
                ));
            }
        }
        let xv = self.value(x).data();
        let count = batch * len;
        let (mean, var) = match running {
            Some((m, v)) => {
                if m.len() != channels || v.len() != channels {
                    return Err(dim_err!("running statistics do not cover {channels} channels"));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                let n = F::of(count as f64);
                let mut mean = vec![F::zero(); channels];
                let mut var = vec![F::zero(); channels];
                for c in 0..channels {
                    let mut s = F::zero();
                    for b in 0..batch {
                        s += xv[(b * channels + c) * len..][..len].iter().copied().sum::<F>();
                    }
                    mean[c] = s / n;
                    let mut q = F::zero();
                    for b in 0..batch {
                        for &v in &xv[(b * channels + c) * len..][..len] {
                            let d = v - mean[c];
                            q += d * d;
                        }
                    }
                    var[c] = q / n;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut out = vec![F::zero(); xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * len;
                for t in 0..len {
                    let h = (xv[off + t] - mean[c]) * inv_std[c];
                    xhat[off + t] = h;
                    out[off + t] = g[c] * h + bt[c];
                }
            }
        }
        let stats = running.is_none().then_some(BatchStats { mean, var, count });
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::new(sx, out)?,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout: NormLayout::Channel { batch, channels, len },
                batch_stats: running.is_none(),
            },
            rg,
            "batch_norm",
        )?;
        Ok((v, stats))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let features = *sx.last().ok_or_else(|| dim_err!("layer norm of a scalar"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [features] {
                return Err(dim_err!(
                    "layer norm over {features} features given parameter of shape {:?}",
                    self.shape(p)
                ));
            }
        }
        let xv = self.value(x).data();
        let rows = xv.len() / features;
        let n = F::of(features as f64);
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut out = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &xv[r * features..][..features];
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..features {
                let h = (row[j] - mean) * is;
                xhat[r * features + j] = h;
                out[r * features + j] = g[j] * h + bt[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::new(sx, out)?,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout: NormLayout::Row { rows, features },
                batch_stats: true,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg, "gelu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        let width = *out.shape().last().unwrap_or(&1);
        kernels::softmax_rows(out.data_mut(), width);
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg, "softmax")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len()
            || perm
                .iter()
                .any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(dim_err!("invalid permutation {perm:?} for shape {sx:?}"));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
        let mut out = vec![F::zero(); self.value(x).len()];
        kernels::permute(self.value(x).data(), &sx, perm, &mut out);
        let rg = self.rg(x);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::Permute { x, perm: perm.to_vec() },
            rg,
            "permute",
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| contract_err!("concat of zero tensors"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same_rest =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(dim_err!("concat along axis {axis}: {s:?} vs {first:?}"));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// Slice `[start, start + len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(dim_err!("narrow({axis}, {start}, {len}) out of range for {sx:?}"));
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sx[axis] + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Narrow { x, axis, start }, rg, "narrow")
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let width = *sx
            .last()
            .ok_or_else(|| dim_err!("mean over the last axis of a scalar"))?;
        let n = F::of(width as f64);
        let out: Vec<F> = self
            .value(x)
            .data()
            .chunks(width)
            .map(|row| row.iter().copied().sum::<F>() / n)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&sx[..sx.len() - 1], out)?, Op::MeanLast(x), rg, "mean_last")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, F::one() / F::of(n as f64))
    }

    /// Prepends `row: (1, D)` to every sequence of `x: (batch, L, D)`.
    pub fn prepend_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, len, dim) = match sx.as_slice() {
            &[b, l, d] => (b, l, d),
            _ => return Err(dim_err!("prepend_row expects (batch, L, D), got {sx:?}")),
        };
        let sr = self.shape(row);
        if sr != [1, dim] && sr != [dim] {
            return Err(dim_err!("prepend_row row shape {sr:?}, expected [1, {dim}]"));
        }
        let rv = self.value(row).data();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * (len + 1) * dim);
        for b in 0..batch {
            out.extend_from_slice(rv);
            out.extend_from_slice(&xv[b * len * dim..(b + 1) * len * dim]);
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(
            Tensor::new([batch, len + 1, dim], out)?,
            Op::PrependRow { x, row },
            rg,
            "prepend_row",
        )
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        let (batch, classes) = match sl.as_slice() {
            &[b, c] => (b, c),
            _ => return Err(dim_err!("cross entropy expects (batch, classes) logits, got {sl:?}")),
        };
        if labels.len() != batch {
            return Err(contract_err!("{} labels for a batch of {batch}", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(contract_err!("label {bad} outside [0, {classes})"));
        }
        let lv = self.value(logits).data();
        let mut probs = lv.to_vec();
        kernels::softmax_rows(&mut probs, classes);
        let mut total = F::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = &lv[r * classes..(r + 1) * classes];
            total += kernels::logsumexp(row) - row[y];
        }
        let loss = total / F::of(batch as f64);
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let params = self.param_vars.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Grads { grads, params })
    }

    fn backprop_node(&self, i: usize, dy: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Binary { kind, a, b, map } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let bi = |j: usize| map.as_ref().map_or(j, |m| m[j]);
                if self.rg(*a) {
                    let g: Vec<F> = match kind {
                        BinaryOp::Add | BinaryOp::Sub => dy.data().to_vec(),
                        BinaryOp::Mul => dy.data().iter().enumerate().map(|(j, &d)| d * bv[bi(j)]).collect(),
                        BinaryOp::Div => dy.data().iter().enumerate().map(|(j, &d)| d / bv[bi(j)]).collect(),
                    };
                    accumulate(grads, *a, self.value(*a).shape(), &g);
                }
                if self.rg(*b) {
                    let mut g = vec![F::zero(); bv.len()];
                    for (j, &d) in dy.data().iter().enumerate() {
                        let k = bi(j);
                        g[k] += match kind {
                            BinaryOp::Add => d,
                            BinaryOp::Sub => -d,
                            BinaryOp::Mul => d * av[j],
                            BinaryOp::Div => -d * av[j] / (bv[k] * bv[k]),
                        };
                    }
                    accumulate(grads, *b, self.value(*b).shape(), &g);
                }
            }
            Op::Scale(x, s) => {
                let g: Vec<F> = dy.data().iter().map(|&d| d * *s).collect();
                accumulate(grads, *x, self.value(*x).shape(), &g);
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.value(*a).shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = out.shape()[2];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let d = dy.data();
                if self.rg(*a) {
                    let mut g = vec![F::zero(); av.len()];
                    for t in 0..batch {
                        kernels::gemm(
                            &d[t * m * n..(t + 1) * m * n],
                            &bv[t * k * n..(t + 1) * k * n],
                            &mut g[t * m * k..(t + 1) * m * k],
                            GemmDims { m, k: n, n: k },
                            false,
                            !trans_b,
                        );
                    }
                    accumulate(grads, *a, sa, &g);
                }
                if self.rg(*b) {
                    let mut g = vec![F::zero(); bv.len()];
                    for t in 0..batch {
                        let dslice = &d[t * m * n..(t + 1) * m * n];
                        let aslice = &av[t * m * k..(t + 1) * m * k];
                        let gslice = &mut g[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            // dB (n×k) = dCᵀ · A
                            kernels::gemm(dslice, aslice, gslice, GemmDims { m: n, k: m, n: k }, true, false);
                        } else {
                            // dB (k×n) = Aᵀ · dC
                            kernels::gemm(aslice, dslice, gslice, GemmDims { m: k, k: m, n }, true, false);
                        }
                    }
                    accumulate(grads, *b, self.value(*b).shape(), &g);
                }
            }
            Op::Linear { x, w, b } => {
                let wv = self.value(*w);
                let (out_f, in_f) = (wv.shape()[0], wv.shape()[1]);
                let xv = self.value(*x).data();
                let rows = xv.len() / in_f;
                let d = dy.data();
                if self.rg(*x) {
                    let mut g = vec![F::zero(); xv.len()];
                    kernels::gemm(
                        d,
                        wv.data(),
                        &mut g,
                        GemmDims {
                            m: rows,
                            k: out_f,
                            n: in_f,
                        },
                        false,
                        false,
                    );
                    accumulate(grads, *x, self.value(*x).shape(), &g);
                }
                if self.rg(*w) {
                    let mut g = vec![F::zero(); wv.len()];
                    kernels::gemm(
                        d,
                        xv,
                        &mut g,
                        GemmDims {
                            m: out_f,
                            k: rows,
                            n: in_f,
                        },
                        true,
                        false,
                    );
                    accumulate(grads, *w, wv.shape(), &g);
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    let mut g = vec![F::zero(); out_f];
                    for row in d.chunks(out_f) {
                        for (gg, &v) in g.iter_mut().zip(row) {
                            *gg += v;
                        }
                    }
                    accumulate(grads, b, &[out_f], &g);
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut gx = self.rg(*x).then(|| vec![F::zero(); xv.len()]);
                let mut gw = self.rg(*w).then(|| vec![F::zero(); wv.len()]);
                let gb_needed = b.is_some_and(|b| self.rg(b));
                let mut gb = gb_needed.then(|| vec![F::zero(); geom.out_channels]);
                kernels::conv1d_backward(
                    xv,
                    wv,
                    dy.data(),
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                    *geom,
                );
                if let Some(g) = gx {
                    accumulate(grads, *x, self.value(*x).shape(), &g);
                }
                if let Some(g) = gw {
                    accumulate(grads, *w, self.value(*w).shape(), &g);
                }
                if let (Some(g), Some(b)) = (gb, b) {
                    accumulate(grads, *b, &[geom.out_channels], &g);
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
                batch_stats,
            } => {
                let gv = self.value(*gamma).data();
                let d = dy.data();
                let nfeat = gv.len();
                let mut dgamma = vec![F::zero(); nfeat];
                let mut dbeta = vec![F::zero(); nfeat];
                let mut dx = vec![F::zero(); d.len()];
                match *layout {
                    NormLayout::Channel { batch, channels, len } => {
                        let n = F::of((batch * len) as f64);
                        for c in 0..channels {
                            let mut sum_g = F::zero();
                            let mut sum_gx = F::zero();
                            for b in 0..batch {
                                let off = (b * channels + c) * len;
                                for t in off..off + len {
                                    dgamma[c] += d[t] * xhat[t];
                                    dbeta[c] += d[t];
                                    let g = d[t] * gv[c];
                                    sum_g += g;
                                    sum_gx += g * xhat[t];
                                }
                            }
                            for b in 0..batch {
                                let off = (b * channels + c) * len;
                                for t in off..off + len {
                                    let g = d[t] * gv[c];
                                    dx[t] = if *batch_stats {
                                        inv_std[c] / n * (n * g - sum_g - xhat[t] * sum_gx)
                                    } else {
                                        g * inv_std[c]
                                    };
                                }
                            }
                        }
                    }
                    NormLayout::Row { rows, features } => {
                        let n = F::of(features as f64);
                        for r in 0..rows {
                            let off = r * features;
                            let mut sum_g = F::zero();
                            let mut sum_gx = F::zero();
                            for j in 0..features {
                                let t = off + j;
                                dgamma[j] += d[t] * xhat[t];
                                dbeta[j] += d[t];
                                let g = d[t] * gv[j];
                                sum_g += g;
                                sum_gx += g * xhat[t];
                            }
                            for j in 0..features {
                                let t = off + j;
                                let g = d[t] * gv[j];
                                dx[t] = inv_std[r] / n * (n * g - sum_g - xhat[t] * sum_gx);
                            }
                        }
                    }
                }
                if self.rg(*x) {
                    accumulate(grads, *x, self.value(*x).shape(), &dx);
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, &[nfeat], &dgamma);
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, &[nfeat], &dbeta);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let g: Vec<F> = dy
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&d, &v)| d * kernels::gelu_grad(v))
                    .collect();
                accumulate(grads, *x, self.value(*x).shape(), &g);
            }
            Op::Softmax(x) => {
                let width = *out.shape().last().unwrap_or(&1);
                let mut g = vec![F::zero(); out.len()];
                for ((grow, yrow), drow) in g
                    .chunks_mut(width)
                    .zip(out.data().chunks(width))
                    .zip(dy.data().chunks(width))
                {
                    let dot: F = yrow.iter().zip(drow).map(|(&y, &d)| y * d).sum();
                    for ((gv, &y), &d) in grow.iter_mut().zip(yrow).zip(drow) {
                        *gv = y * (d - dot);
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), &g);
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, self.value(*x).shape(), dy.data());
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let mut g = vec![F::zero(); dy.len()];
                kernels::permute(dy.data(), out.shape(), &inverse, &mut g);
                accumulate(grads, *x, self.value(*x).shape(), &g);
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if self.rg(v) {
                        let mut g = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            g.extend_from_slice(&dy.data()[o * row + offset..o * row + offset + chunk]);
                        }
                        accumulate(grads, v, self.shape(v), &g);
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { x, axis, start } => {
                let sx = self.shape(*x);
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[axis + 1..].iter().product();
                let len = out.shape()[*axis];
                let mut g = vec![F::zero(); self.value(*x).len()];
                for o in 0..outer {
                    let base = (o * sx[*axis] + start) * inner;
                    g[base..base + len * inner].copy_from_slice(&dy.data()[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(grads, *x, sx, &g);
            }
            Op::MeanLast(x) => {
                let sx = self.shape(*x);
                let width = *sx.last().unwrap();
                let n = F::of(width as f64);
                let mut g = Vec::with_capacity(self.value(*x).len());
                for &d in dy.data() {
                    g.extend(std::iter::repeat_n(d / n, width));
                }
                accumulate(grads, *x, sx, &g);
            }
            Op::Sum(x) => {
                let d = dy.item();
                let g = vec![d; self.value(*x).len()];
                accumulate(grads, *x, self.shape(*x), &g);
            }
            Op::PrependRow { x, row } => {
                let s = out.shape();
                let (batch, len1, dim) = (s[0], s[1], s[2]);
                let d = dy.data();
                if self.rg(*x) {
                    let mut g = Vec::with_capacity(batch * (len1 - 1) * dim);
                    for b in 0..batch {
                        g.extend_from_slice(&d[(b * len1 + 1) * dim..(b + 1) * len1 * dim]);
                    }
                    accumulate(grads, *x, self.shape(*x), &g);
                }
                if self.rg(*row) {
                    let mut g = vec![F::zero(); dim];
                    for b in 0..batch {
                        for (gv, &v) in g.iter_mut().zip(&d[b * len1 * dim..(b * len1 + 1) * dim]) {
                            *gv += v;
                        }
                    }
                    accumulate(grads, *row, self.shape(*row), &g);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = self.shape(*logits)[1];
                let scale = dy.item() / F::of(labels.len() as f64);
                let mut g: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    g[r * classes + y] -= scale;
                }
                accumulate(grads, *logits, self.shape(*logits), &g);
            }
        }
    }
}

fn accumulate<F: Float>(grads: &mut [Option<Tensor<F>>], v: Var, shape: &[usize], g: &[F]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, &b) in t.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g.to_vec()).expect("gradient shape"));
        }
    }
}

/// Gradients produced by one [`Graph::backward`] sweep.
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Float> Grads<F> {
    /// Gradient of the loss with respect to `v`, if `v` was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the parameter gradients into `store`'s gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                let p = store.get_mut(id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
    }

    /// Zeroes `store`'s gradients, then writes this sweep's parameter gradients.
    pub fn write_into(&self, store: &mut ParamStore<F>) {
        store.zero_grad();
        self.accumulate_into(store);
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.wrt(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn add_and_scalar_multiply() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2], &[1., 2.]));
        let b = g.input(t(&[2], &[3., 4.]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4., 6.]);
        let x = g.input(t(&[3], &[1., 2., 3.]));
        let zero = g.input(Tensor::scalar(0.0));
        let y = g.mul(x, zero).unwrap();
        assert_eq!(g.value(y).data(), &[0., 0., 0.]);
    }

    #[test]
    fn incompatible_broadcast_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros([2, 3]));
        let b = g.input(Tensor::zeros([4]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[4]") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[1, 2], &[1., 2.]));
        let b = g.input(t(&[2, 1], &[3., 4.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.]);
        let bad = g.matmul(a, a);
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[3], &[1., 2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2., 4., 6.]);
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_bt() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.variable(t(&[3, 2], &[1., -1., 2., 0.5, 3., 7.]));
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum(c).unwrap();
        let grads = g.backward(loss).unwrap();
        // dA[i][k] = sum_j B[k][j]
        assert_eq!(grads.wrt(a).unwrap().data(), &[0., 2.5, 10., 0., 2.5, 10.]);
        // dB[k][j] = sum_i A[i][k]
        assert_eq!(grads.wrt(b).unwrap().data(), &[5., 5., 7., 7., 9., 9.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_parameters_get_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", t(&[2], &[1., 2.]), true).unwrap();
        let unused = store.add("unused", t(&[2], &[5., 5.]), true).unwrap();
        store.get_mut(unused).grad = t(&[2], &[9., 9.]);
        let mut g = Graph::new();
        let u = g.param(&store, used);
        let loss = g.sum(u).unwrap();
        g.backward(loss).unwrap().write_into(&mut store);
        assert_eq!(store.grad(used).data(), &[1., 1.]);
        assert_eq!(store.grad(unused).data(), &[0., 0.]);
    }

    #[test]
    fn finite_checks_flag_nan() {
        let mut g = Graph::<f64>::new().with_finite_checks(true);
        let a = g.input(t(&[1], &[0.]));
        let r = g.div(a, a);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros([2, 6]));
        let loss = g.cross_entropy(l, &[0, 5]).unwrap();
        assert!((g.value(loss).item() - 6f64.ln()).abs() < 1e-12);
        assert!(g.cross_entropy(l, &[0, 6]).is_err());
    }
}
