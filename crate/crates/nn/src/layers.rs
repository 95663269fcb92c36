use std::rc::Rc;

use rand::Rng;

use crate::attention::AttnMask;
use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: init.xavier(&format!("{name}.w"), fan_in, fan_out)?,
            b: Some(init.zeros(&format!("{name}.b"), &[fan_out])?),
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: init.ones(&format!("{name}.gain"), &[dim])?,
            bias: init.zeros(&format!("{name}.bias"), &[dim])?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, Some(gain), Some(bias), LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::Argument(format!(
                "{name}: dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(init, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(init, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(init, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(init, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    /// Self-attention over `x` laid out as `mask.batch()` sequences of `mask.lq()` rows.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: Rc<AttnMask>) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let a = g.attention(q, k, v, self.heads, mask)?;
        self.o.forward(g, a)
    }
}

/// Two linear layers around a GELU, hidden width `ratio * dim`.
#[derive(Clone, Debug)]
pub struct GeluFfn {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl GeluFfn {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// `down(silu(gate(x)) * up(x))`.
#[derive(Clone, Debug)]
pub struct SwigluFfn {
    pub gate: Linear,
    pub up: Linear,
    pub down: Linear,
}

impl SwigluFfn {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            gate: Linear::new(init, &format!("{name}.gate"), dim, hidden)?,
            up: Linear::new(init, &format!("{name}.up"), dim, hidden)?,
            down: Linear::new(init, &format!("{name}.down"), hidden, dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.gate.forward(g, x)?;
        let a = g.silu(a);
        let b = self.up.forward(g, x)?;
        let h = g.mul(a, b)?;
        self.down.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub enum Ffn {
    Gelu(GeluFfn),
    Swiglu(SwigluFfn),
}

impl Ffn {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Ffn::Gelu(f) => f.forward(g, x),
            Ffn::Swiglu(f) => f.forward(g, x),
        }
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: Ffn,
}

impl TransformerBlock {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim)?,
            ffn: Ffn::Gelu(GeluFfn::new(init, &format!("{name}.ffn"), dim, 4 * dim)?),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: Rc<AttnMask>) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h, mask)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

/// Learned table indexed by row.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        rows: usize,
        dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            table: init.normal(name, &[rows, dim], 0.02)?,
            rows,
            dim,
        })
    }

    pub fn lookup<T: Scalar>(&self, g: &mut Graph<'_, T>, idx: Rc<[usize]>) -> Result<Var> {
        let t = g.param(self.table);
        g.gather_rows(t, idx)
    }
}

/// Cuts `[c, h, w]` into non-overlapping `p × p` patches, one row per patch in
/// row-major patch order; each row is laid out `[c, p, p]`.
pub fn patchify<T: Scalar>(tile: &[T], c: usize, h: usize, w: usize, p: usize) -> Result<Vec<T>> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(NnError::Argument(format!(
            "tile {h}x{w} not divisible by patch {p}"
        )));
    }
    if tile.len() != c * h * w {
        return Err(NnError::Argument(format!(
            "tile has {} values, expected {}",
            tile.len(),
            c * h * w
        )));
    }
    let (ph, pw) = (h / p, w / p);
    let mut out = Vec::with_capacity(tile.len());
    for i in 0..ph {
        for j in 0..pw {
            for ch in 0..c {
                for y in 0..p {
                    let base = ch * h * w + (i * p + y) * w + j * p;
                    out.extend_from_slice(&tile[base..base + p]);
                }
            }
        }
    }
    Ok(out)
}

/// Gather indices turning `batch` stacks of patch rows (as produced by
/// [`patchify`]) back into `[batch, c, h, w]`.
pub fn unpatchify_index(batch: usize, c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let pw = w / p;
    let per = c * h * w;
    let mut idx = Vec::with_capacity(batch * per);
    for n in 0..batch {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let token = (y / p) * pw + x / p;
                    let inner = ch * p * p + (y % p) * p + x % p;
                    idx.push(n * per + token * c * p * p + inner);
                }
            }
        }
    }
    idx
}

/// Linear projection of flattened patches plus a learned positional embedding.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub pos: Embedding,
    pub channels: usize,
    pub patch: usize,
    pub tokens: usize,
}

impl PatchEmbed {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        channels: usize,
        tile: usize,
        patch: usize,
        dim: usize,
    ) -> Result<Self> {
        if patch == 0 || tile % patch != 0 {
            return Err(NnError::Argument(format!(
                "tile {tile} not divisible by patch {patch}"
            )));
        }
        let tokens = (tile / patch) * (tile / patch);
        Ok(Self {
            proj: Linear::new(init, &format!("{name}.proj"), channels * patch * patch, dim)?,
            pos: Embedding::new(init, &format!("{name}.pos"), tokens, dim)?,
            channels,
            patch,
            tokens,
        })
    }

    /// `patches` is `[batch * tokens, c * p * p]` (see [`patchify`]).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, patches: Var) -> Result<Var> {
        let rows = g.value(patches).rows();
        if rows % self.tokens != 0 {
            return Err(NnError::Argument(format!(
                "{rows} patch rows is not a multiple of {} tokens",
                self.tokens
            )));
        }
        let x = self.proj.forward(g, patches)?;
        let idx: Rc<[usize]> = (0..rows).map(|r| r % self.tokens).collect();
        let pe = self.pos.lookup(g, idx)?;
        g.add(x, pe)
    }
}

/// Convenience: wrap a plain `[rows, cols]` buffer as a constant input.
pub fn input_matrix<T: Scalar>(g: &mut Graph<'_, T>, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
    Ok(g.input(Tensor::new(&[rows, cols], data)?))
}
