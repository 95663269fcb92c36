//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every op records its inputs (and whatever it needs for the backward pass) on
//! a flat tape; [`Graph::backward`] walks the tape in reverse. Tensors are treated
//! as `[rows, cols]` where `cols` is the last dimension.

use std::collections::HashMap;
use std::rc::Rc;

use crate::attention::{self, AttnMask};
use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Gelu { x: Var, tanh: Vec<T> },
    Silu(Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Rc<AttnMask>,
        probs: Vec<T>,
    },
    GatherRows {
        x: Var,
        idx: Rc<[usize]>,
    },
    Gather {
        x: Var,
        idx: Rc<[usize]>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
        cin: usize,
        cout: usize,
        h: usize,
        wd: usize,
    },
    MaskedAbsMean {
        pred: Var,
        target: Rc<[T]>,
        count: usize,
    },
    MaskedSqMean {
        pred: Var,
        target: Rc<[T]>,
        count: usize,
    },
    KlNormal {
        mu: Var,
        sigma: Var,
        row_weight: Rc<[T]>,
        scale: T,
    },
    SumAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward pass worth of recorded computation.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    param_vars: HashMap<ParamId, Var>,
}

/// tanh of the GELU inner polynomial, via one `exp`.
fn gelu_tanh<T: Scalar>(x: T) -> T {
    let u = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    let two = T::c(2.0);
    if u.abs() > T::c(20.0) {
        return u.signum();
    }
    T::one() - two / ((two * u).exp() + T::one())
}

fn gelu<T: Scalar>(x: T) -> T {
    T::c(0.5) * x * (T::one() + gelu_tanh(x))
}

fn gelu_grad<T: Scalar>(x: T, t: T) -> T {
    let c = T::c(GELU_C);
    let a = T::c(GELU_A);
    let half = T::c(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * a * x * x)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Scalar GELU (tanh approximation), also used outside the tape.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    gelu(x)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is tracked (for sensitivity probes and checks).
    pub fn input_tracked(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = (ta.rows(), ta.cols());
        if tb.shape().len() != 2 || tb.shape()[0] != k {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let m = tb.shape()[1];
        let mut out = vec![T::zero(); n * m];
        T::gemm(n, k, m, T::one(), ta.data(), false, tb.data(), false, T::zero(), &mut out);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let m = tx.cols();
        if tb.len() != m {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(tb.data()) {
                *o += *bv;
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBias(x, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<(Vec<usize>, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        Ok((ta.shape().to_vec(), self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, rg) = self.binary(a, b, "add")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, rg) = self.binary(a, b, "sub")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x - *y)
            .collect();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, rg) = self.binary(a, b, "mul")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::c(s);
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| *v * s).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| f(*v)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let tanh: Vec<T> = xv.data().iter().map(|v| gelu_tanh(*v)).collect();
        let out = xv
            .data()
            .iter()
            .zip(&tanh)
            .map(|(v, t)| T::c(0.5) * *v * (T::one() + *t))
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).expect("same shape"), Op::Gelu { x, tanh }, rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::c(lo), T::c(hi));
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    /// Row-wise layer normalization with optional affine gain and bias.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        for p in [gain, bias].into_iter().flatten() {
            if self.value(p).len() != d {
                return Err(shape_err(
                    "layer_norm",
                    format!("affine size {} vs dim {d}", self.value(p).len()),
                ));
            }
        }
        let rows = tx.rows();
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let inv_d = T::c(1.0 / d as f64);
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd[r] = rs;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (*v - mean) * rs;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gain {
            let gd = self.value(g).data();
            for row in out.chunks_mut(d) {
                for (o, gv) in row.iter_mut().zip(gd) {
                    *o *= *gv;
                }
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(d) {
                for (o, bv) in row.iter_mut().zip(bd) {
                    *o += *bv;
                }
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(x) || gain.is_some_and(|g| self.rg(g)) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head attention over projected `q`, `k`, `v` (`[batch*len, d]`).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Rc<AttnMask>,
    ) -> Result<Var> {
        let d = self.value(q).cols();
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Argument(format!(
                "model dim {d} not divisible by {heads} heads"
            )));
        }
        let (bq, bk) = (mask.batch() * mask.lq(), mask.batch() * mask.lk());
        if self.value(q).rows() != bq
            || self.value(k).rows() != bk
            || self.value(v).rows() != bk
            || self.value(k).cols() != d
            || self.value(v).cols() != d
        {
            return Err(shape_err(
                "attention",
                format!(
                    "q {:?} k {:?} v {:?} for mask {}x{}x{}",
                    self.value(q).shape(),
                    self.value(k).shape(),
                    self.value(v).shape(),
                    mask.batch(),
                    mask.lq(),
                    mask.lk()
                ),
            ));
        }
        let (out, probs) = attention::forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            d,
            heads,
            &mask,
        );
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(&[bq, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            },
            rg,
        ))
    }

    /// Row `r` of the output is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let tx = self.value(x);
        let (rows, d) = (tx.rows(), tx.cols());
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of {rows}"),
            ));
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[idx.len(), d], out)?, Op::GatherRows { x, idx }, rg))
    }

    /// Element `e` of the output is element `idx[e]` of `x`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= tx.len()) {
            return Err(shape_err("gather", format!("element {bad} out of {}", tx.len())));
        }
        let out = idx.iter().map(|&i| tx.data()[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather { x, idx }, rg))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = self.value(xs[0]).rows();
        if xs.iter().any(|v| self.value(*v).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let total: usize = xs.iter().map(|v| self.value(*v).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in xs {
                let t = self.value(*v);
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let rg = xs.iter().any(|v| self.rg(*v));
        Ok(self.push(Tensor::new(&[rows, total], out)?, Op::ConcatCols(xs.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let d = self.value(xs[0]).cols();
        if xs.iter().any(|v| self.value(*v).cols() != d) {
            return Err(shape_err("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        for v in xs {
            out.extend_from_slice(self.value(*v).data());
        }
        let rows = out.len() / d.max(1);
        let rg = xs.iter().any(|v| self.rg(*v));
        Ok(self.push(Tensor::new(&[rows, d], out)?, Op::ConcatRows(xs.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if start >= end || end > d {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {d}")));
        }
        let rows = tx.rows();
        let w = end - start;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&tx.data()[r * d + start..r * d + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[rows, w], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Same-padded 3×3 convolution: `x [batch, cin, h, w]`, `w [cout, cin, 3, 3]`, `b [cout]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 4 {
            return Err(shape_err("conv3x3", format!("input {:?}", tx.shape())));
        }
        let (batch, cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let tw = self.value(w);
        if tw.shape().len() != 4 || tw.shape()[1] != cin || tw.shape()[2] != 3 || tw.shape()[3] != 3 {
            return Err(shape_err("conv3x3", format!("kernel {:?}", tw.shape())));
        }
        let cout = tw.shape()[0];
        if self.value(b).len() != cout {
            return Err(shape_err("conv3x3", "bias length"));
        }
        let (xd, wdt, bd) = (tx.data(), tw.data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * cout * h * wd];
        for n in 0..batch {
            for co in 0..cout {
                let ob = &mut out[(n * cout + co) * h * wd..(n * cout + co + 1) * h * wd];
                ob.iter_mut().for_each(|o| *o = bd[co]);
                for ci in 0..cin {
                    let xb = &xd[(n * cin + ci) * h * wd..(n * cin + ci + 1) * h * wd];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = wdt[((co * cin + ci) * 3 + ky) * 3 + kx];
                            for y in 0..h {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                for xx in 0..wd {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    ob[y * wd + xx] += wv * xb[sy * wd + sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(&[batch, cout, h, wd], out)?,
            Op::Conv3x3 {
                x,
                w,
                b,
                batch,
                cin,
                cout,
                h,
                wd,
            },
            rg,
        ))
    }

    fn valid_count(pred: &Tensor<T>, target: &[T], op: &'static str) -> Result<usize> {
        if pred.len() != target.len() {
            return Err(shape_err(
                op,
                format!("pred {} vs target {}", pred.len(), target.len()),
            ));
        }
        let n = target.iter().filter(|t| !t.is_nan()).count();
        if n == 0 {
            return Err(NnError::Contract(format!("{op}: no valid target cells")));
        }
        Ok(n)
    }

    /// Mean absolute error over cells where `target` is not NaN.
    pub fn masked_mae(&mut self, pred: Var, target: Rc<[T]>) -> Result<Var> {
        let tp = self.value(pred);
        let count = Self::valid_count(tp, &target, "masked_mae")?;
        let mut s = T::zero();
        for (p, t) in tp.data().iter().zip(target.iter()) {
            if !t.is_nan() {
                s += (*p - *t).abs();
            }
        }
        let v = s / T::c(count as f64);
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(v),
            Op::MaskedAbsMean {
                pred,
                target,
                count,
            },
            rg,
        ))
    }

    /// Mean squared error over cells where `target` is not NaN.
    pub fn masked_mse(&mut self, pred: Var, target: Rc<[T]>) -> Result<Var> {
        let tp = self.value(pred);
        let count = Self::valid_count(tp, &target, "masked_mse")?;
        let mut s = T::zero();
        for (p, t) in tp.data().iter().zip(target.iter()) {
            if !t.is_nan() {
                s += (*p - *t) * (*p - *t);
            }
        }
        let v = s / T::c(count as f64);
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(v),
            Op::MaskedSqMean {
                pred,
                target,
                count,
            },
            rg,
        ))
    }

    /// `scale * Σ_rows w_r Σ_cols ½(μ² + σ² − 1 − 2 ln σ)`, the KL divergence of
    /// diagonal Gaussians from the standard normal.
    pub fn kl_normal(
        &mut self,
        mu: Var,
        sigma: Var,
        row_weight: Rc<[T]>,
        scale: f64,
    ) -> Result<Var> {
        let (tm, ts) = (self.value(mu), self.value(sigma));
        if tm.shape() != ts.shape() || row_weight.len() != tm.rows() {
            return Err(shape_err("kl_normal", "mu/sigma/weights disagree"));
        }
        if ts.data().iter().any(|s| !(*s > T::zero())) {
            return Err(NnError::Contract("kl_normal: sigma must be positive".into()));
        }
        let d = tm.cols();
        let half = T::c(0.5);
        let mut s = T::zero();
        for (r, w) in row_weight.iter().enumerate() {
            if *w == T::zero() {
                continue;
            }
            let mut rs = T::zero();
            for c in 0..d {
                let m = tm.data()[r * d + c];
                let sg = ts.data()[r * d + c];
                rs += half * (m * m + sg * sg - T::one() - T::c(2.0) * sg.ln());
            }
            s += *w * rs;
        }
        let scale = T::c(scale);
        let rg = self.rg(mu) || self.rg(sigma);
        Ok(self.push(
            Tensor::scalar(s * scale),
            Op::KlNormal {
                mu,
                sigma,
                row_weight,
                scale,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Gradient accumulated at `v` by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Argument(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Consumes the graph and returns parameter gradients from the last backward pass.
    pub fn into_param_grads(self) -> Vec<(ParamId, Vec<T>)> {
        let mut out = Vec::new();
        for (id, v) in self.param_vars {
            if let Some(Some(g)) = self.grads.get(v.0) {
                out.push((id, g.clone()));
            }
        }
        out.sort_by_key(|(id, _)| id.index());
        out
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        // Returns the (lazily zeroed) gradient buffer for `v`.
        fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], v: Var, n: usize) -> &'a mut [T] {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
        }
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (n, k, m) = (ta.rows(), ta.cols(), tb.shape()[1]);
                if rg(*a) {
                    let da = slot(grads, *a, n * k);
                    T::gemm(n, m, k, T::one(), g, false, tb.data(), true, T::one(), da);
                }
                if rg(*b) {
                    let db = slot(grads, *b, k * m);
                    T::gemm(k, n, m, T::one(), ta.data(), true, g, false, T::one(), db);
                }
            }
            Op::AddBias(x, b) => {
                let m = len(*b);
                if rg(*x) {
                    let dx = slot(grads, *x, g.len());
                    for (d, v) in dx.iter_mut().zip(g) {
                        *d += *v;
                    }
                }
                if rg(*b) {
                    let db = slot(grads, *b, m);
                    for row in g.chunks(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if rg(*a) {
                    let da = slot(grads, *a, g.len());
                    for (d, v) in da.iter_mut().zip(g) {
                        *d += *v;
                    }
                }
                if rg(*b) {
                    let db = slot(grads, *b, g.len());
                    for (d, v) in db.iter_mut().zip(g) {
                        if neg {
                            *d -= *v;
                        } else {
                            *d += *v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bv = val(*b);
                    let da = slot(grads, *a, g.len());
                    for ((d, v), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += *v * *y;
                    }
                }
                if rg(*b) {
                    let av = val(*a);
                    let db = slot(grads, *b, g.len());
                    for ((d, v), x) in db.iter_mut().zip(g).zip(av) {
                        *d += *v * *x;
                    }
                }
            }
            Op::Scale(x, s) => {
                let dx = slot(grads, *x, g.len());
                for (d, v) in dx.iter_mut().zip(g) {
                    *d += *v * *s;
                }
            }
            Op::Exp(x) => {
                let y = node.value.data();
                let dx = slot(grads, *x, g.len());
                for ((d, v), yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += *v * *yv;
                }
            }
            Op::Gelu { x, tanh } => {
                let xv = val(*x);
                let dx = slot(grads, *x, g.len());
                for (((d, v), xx), t) in dx.iter_mut().zip(g).zip(xv).zip(tanh) {
                    *d += *v * gelu_grad(*xx, *t);
                }
            }
            Op::Silu(x) => {
                let xv = val(*x);
                let dx = slot(grads, *x, g.len());
                for ((d, v), xx) in dx.iter_mut().zip(g).zip(xv) {
                    let s = sigmoid(*xx);
                    *d += *v * s * (T::one() + *xx * (T::one() - s));
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x);
                let dx = slot(grads, *x, g.len());
                for ((d, v), xx) in dx.iter_mut().zip(g).zip(xv) {
                    if *xx > *lo && *xx < *hi {
                        *d += *v;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let rows = rstd.len();
                if let Some(b) = bias.filter(|b| rg(*b)) {
                    let db = slot(grads, b, d);
                    for row in g.chunks(d) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += *v;
                        }
                    }
                }
                if let Some(gn) = gain.filter(|gn| rg(*gn)) {
                    let dg = slot(grads, gn, d);
                    for (row, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, v), xh) in dg.iter_mut().zip(row).zip(xr) {
                            *o += *v * *xh;
                        }
                    }
                }
                if rg(*x) {
                    let gain_v: Option<Vec<T>> = gain.map(|gn| val(gn).to_vec());
                    let dx = slot(grads, *x, rows * d);
                    let inv_d = T::c(1.0 / d as f64);
                    let mut dxh = vec![T::zero(); d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..d {
                            dxh[c] = match &gain_v {
                                Some(gv) => gr[c] * gv[c],
                                None => gr[c],
                            };
                            m1 += dxh[c];
                            m2 += dxh[c] * xr[c];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for c in 0..d {
                            dx[r * d + c] += rstd[r] * (dxh[c] - m1 - xr[c] * m2);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            } => {
                let d = node.value.cols();
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let mut dq = rg(*q).then(|| vec![T::zero(); qv.len()]);
                let mut dk = rg(*k).then(|| vec![T::zero(); kv.len()]);
                let mut dv = rg(*v).then(|| vec![T::zero(); vv.len()]);
                attention::backward(
                    qv,
                    kv,
                    vv,
                    probs,
                    g,
                    d,
                    *heads,
                    mask,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                for (var, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(buf) = buf {
                        let s = slot(grads, var, buf.len());
                        for (o, b) in s.iter_mut().zip(&buf) {
                            *o += *b;
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let d = node.value.cols();
                let n = len(*x);
                let dx = slot(grads, *x, n);
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..d {
                        dx[src * d + c] += g[r * d + c];
                    }
                }
            }
            Op::Gather { x, idx } => {
                let n = len(*x);
                let dx = slot(grads, *x, n);
                for (e, &src) in idx.iter().enumerate() {
                    dx[src] += g[e];
                }
            }
            Op::ConcatCols(xs) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for x in xs {
                    let c = self.nodes[x.0].value.cols();
                    if rg(*x) {
                        let dx = slot(grads, *x, rows * c);
                        for r in 0..rows {
                            for j in 0..c {
                                dx[r * c + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for x in xs {
                    let n = len(*x);
                    if rg(*x) {
                        let dx = slot(grads, *x, n);
                        for (o, v) in dx.iter_mut().zip(&g[off..off + n]) {
                            *o += *v;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let w = node.value.cols();
                let rows = node.value.rows();
                let d = self.nodes[x.0].value.cols();
                let dx = slot(grads, *x, rows * d);
                for r in 0..rows {
                    for j in 0..w {
                        dx[r * d + start + j] += g[r * w + j];
                    }
                }
            }
            Op::Conv3x3 {
                x,
                w,
                b,
                batch,
                cin,
                cout,
                h,
                wd,
            } => {
                let (batch, cin, cout, h, wd) = (*batch, *cin, *cout, *h, *wd);
                let hw = h * wd;
                if rg(*b) {
                    let db = slot(grads, *b, cout);
                    for n in 0..batch {
                        for co in 0..cout {
                            db[co] += g[(n * cout + co) * hw..(n * cout + co + 1) * hw]
                                .iter()
                                .copied()
                                .sum::<T>();
                        }
                    }
                }
                let xd = val(*x);
                let wdt = val(*w);
                let mut dw = rg(*w).then(|| vec![T::zero(); wdt.len()]);
                let mut dx = rg(*x).then(|| vec![T::zero(); xd.len()]);
                for n in 0..batch {
                    for co in 0..cout {
                        let gb = &g[(n * cout + co) * hw..(n * cout + co + 1) * hw];
                        for ci in 0..cin {
                            let xoff = (n * cin + ci) * hw;
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                                    let wv = wdt[widx];
                                    let mut acc = T::zero();
                                    for y in 0..h {
                                        let sy = y as isize + ky as isize - 1;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        let sy = sy as usize;
                                        for xx in 0..wd {
                                            let sx = xx as isize + kx as isize - 1;
                                            if sx < 0 || sx >= wd as isize {
                                                continue;
                                            }
                                            let gi = gb[y * wd + xx];
                                            let src = xoff + sy * wd + sx as usize;
                                            acc += gi * xd[src];
                                            if let Some(dx) = dx.as_mut() {
                                                dx[src] += gi * wv;
                                            }
                                        }
                                    }
                                    if let Some(dw) = dw.as_mut() {
                                        dw[widx] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                for (var, buf) in [(*w, dw), (*x, dx)] {
                    if let Some(buf) = buf {
                        let s = slot(grads, var, buf.len());
                        for (o, v) in s.iter_mut().zip(&buf) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::MaskedAbsMean {
                pred,
                target,
                count,
            } => {
                let pv = val(*pred);
                let s = g[0] / T::c(*count as f64);
                let dp = slot(grads, *pred, pv.len());
                for ((d, p), t) in dp.iter_mut().zip(pv).zip(target.iter()) {
                    if t.is_nan() {
                        continue;
                    }
                    let diff = *p - *t;
                    if diff > T::zero() {
                        *d += s;
                    } else if diff < T::zero() {
                        *d -= s;
                    }
                }
            }
            Op::MaskedSqMean {
                pred,
                target,
                count,
            } => {
                let pv = val(*pred);
                let s = g[0] * T::c(2.0 / *count as f64);
                let dp = slot(grads, *pred, pv.len());
                for ((d, p), t) in dp.iter_mut().zip(pv).zip(target.iter()) {
                    if !t.is_nan() {
                        *d += s * (*p - *t);
                    }
                }
            }
            Op::KlNormal {
                mu,
                sigma,
                row_weight,
                scale,
            } => {
                let d = self.nodes[mu.0].value.cols();
                let s = g[0] * *scale;
                if rg(*mu) {
                    let mv = val(*mu);
                    let dm = slot(grads, *mu, mv.len());
                    for (r, w) in row_weight.iter().enumerate() {
                        for c in 0..d {
                            dm[r * d + c] += s * *w * mv[r * d + c];
                        }
                    }
                }
                if rg(*sigma) {
                    let sv = val(*sigma);
                    let ds = slot(grads, *sigma, sv.len());
                    for (r, w) in row_weight.iter().enumerate() {
                        for c in 0..d {
                            let sg = sv[r * d + c];
                            ds[r * d + c] += s * *w * (sg - T::one() / sg);
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let n = len(*x);
                let dx = slot(grads, *x, n);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}
