//! Multi-head scaled dot-product attention with a visibility mask.
//!
//! Hidden keys get a logit of −∞, so their softmax weight is exactly zero and the
//! weighted sums never pick up their keys or values. Outputs at visible queries are
//! therefore bit-for-bit independent of whatever sits at hidden positions.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum Visibility {
    All,
    /// `[batch * lk]`, shared by every query of the sequence.
    Keys(Vec<bool>),
    /// `[batch * lq * lk]`.
    Pairs(Vec<bool>),
}

/// Per (query, key) visibility for a batch of independent sequences, plus the
/// set of inert queries whose output is defined as zero.
#[derive(Clone, Debug)]
pub struct AttnMask {
    batch: usize,
    lq: usize,
    lk: usize,
    vis: Visibility,
    inert: Vec<bool>,
}

impl AttnMask {
    /// Every key visible to every query.
    pub fn all_visible(batch: usize, lq: usize, lk: usize) -> Self {
        Self {
            batch,
            lq,
            lk,
            vis: Visibility::All,
            inert: vec![false; batch * lq],
        }
    }

    /// Self-attention padding mask: position `j` of sequence `b` is visible iff
    /// `present[b * len + j]`; absent positions are also inert as queries.
    pub fn key_padding(batch: usize, len: usize, present: Vec<bool>) -> Result<Self> {
        if present.len() != batch * len {
            return Err(NnError::Argument(format!(
                "key_padding: {} flags for {batch}x{len}",
                present.len()
            )));
        }
        let inert = present.iter().map(|p| !p).collect();
        Ok(Self {
            batch,
            lq: len,
            lk: len,
            vis: Visibility::Keys(present),
            inert,
        })
    }

    /// Fully general mask. Fails if a non-inert query sees no key.
    pub fn pairs(
        batch: usize,
        lq: usize,
        lk: usize,
        visible: Vec<bool>,
        inert: Vec<bool>,
    ) -> Result<Self> {
        if visible.len() != batch * lq * lk || inert.len() != batch * lq {
            return Err(NnError::Argument("pairs: flag count mismatch".into()));
        }
        for b in 0..batch {
            for i in 0..lq {
                let row = &visible[(b * lq + i) * lk..(b * lq + i + 1) * lk];
                if !inert[b * lq + i] && !row.iter().any(|&v| v) {
                    return Err(NnError::Contract(format!(
                        "query {i} of sequence {b} has no visible key and is not inert"
                    )));
                }
            }
        }
        Ok(Self {
            batch,
            lq,
            lk,
            vis: Visibility::Pairs(visible),
            inert,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn lq(&self) -> usize {
        self.lq
    }

    pub fn lk(&self) -> usize {
        self.lk
    }

    pub fn is_inert(&self, b: usize, i: usize) -> bool {
        self.inert[b * self.lq + i]
    }

    #[inline]
    pub fn visible(&self, b: usize, i: usize, j: usize) -> bool {
        match &self.vis {
            Visibility::All => true,
            Visibility::Keys(k) => k[b * self.lk + j],
            Visibility::Pairs(p) => p[(b * self.lq + i) * self.lk + j],
        }
    }
}

impl AttnMask {
    /// Keys no query of sequence `b` can see.
    fn key_globally_hidden(&self, b: usize, j: usize) -> bool {
        match &self.vis {
            Visibility::All => false,
            Visibility::Keys(k) => !k[b * self.lk + j],
            Visibility::Pairs(p) => (0..self.lq).all(|i| !p[(b * self.lq + i) * self.lk + j]),
        }
    }

    fn any_hidden_key(&self) -> bool {
        !matches!(self.vis, Visibility::All)
    }

    fn any_inert(&self) -> bool {
        self.inert.iter().any(|&x| x)
    }
}

/// Copy of `x` (`[batch*len, d]`) with flagged rows set to zero, so that a
/// product with an exactly-zero weight cannot pick up a NaN or infinity.
fn zero_rows<T: Scalar>(x: &[T], d: usize, hide: impl Fn(usize) -> bool) -> Vec<T> {
    let mut out = x.to_vec();
    for (r, row) in out.chunks_mut(d).enumerate() {
        if hide(r) {
            row.fill(T::zero());
        }
    }
    out
}

fn hidden_keys_zeroed<T: Scalar>(x: &[T], d: usize, mask: &AttnMask) -> Option<Vec<T>> {
    mask.any_hidden_key().then(|| {
        zero_rows(x, d, |r| mask.key_globally_hidden(r / mask.lk, r % mask.lk))
    })
}

fn inert_zeroed<T: Scalar>(x: &[T], d: usize, mask: &AttnMask) -> Option<Vec<T>> {
    mask.any_inert().then(|| zero_rows(x, d, |r| mask.inert[r]))
}

/// Returns `(out [batch*lq, d], probs [batch, heads, lq, lk])`.
pub(crate) fn forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    heads: usize,
    mask: &AttnMask,
) -> (Vec<T>, Vec<T>) {
    let (batch, lq, lk) = (mask.batch, mask.lq, mask.lk);
    let dh = d / heads;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let vz = hidden_keys_zeroed(v, d, mask);
    let v = vz.as_deref().unwrap_or(v);
    let mut out = vec![T::zero(); batch * lq * d];
    let mut probs = vec![T::zero(); batch * heads * lq * lk];
    let di = d as isize;
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            let pbase = (b * heads + h) * lq * lk;
            let s = &mut probs[pbase..pbase + lq * lk];
            // SAFETY: head `h` of sequence `b` spans rows b*l..(b+1)*l, columns off..off+dh.
            unsafe {
                T::gemm_raw(
                    lq,
                    dh,
                    lk,
                    scale,
                    q.as_ptr().add(b * lq * d + off),
                    di,
                    1,
                    k.as_ptr().add(b * lk * d + off),
                    1,
                    di,
                    T::zero(),
                    s.as_mut_ptr(),
                    lk as isize,
                    1,
                );
            }
            for i in 0..lq {
                let row = &mut s[i * lk..(i + 1) * lk];
                if mask.is_inert(b, i) {
                    row.fill(T::zero());
                    continue;
                }
                let mut mx = T::neg_infinity();
                for (j, x) in row.iter_mut().enumerate() {
                    if mask.visible(b, i, j) {
                        if *x > mx {
                            mx = *x;
                        }
                    } else {
                        *x = T::neg_infinity();
                    }
                }
                let mut sum = T::zero();
                for x in row.iter_mut() {
                    // exp(−∞) is exactly 0 for hidden keys.
                    *x = (*x - mx).exp();
                    sum += *x;
                }
                let inv = T::one() / sum;
                for x in row.iter_mut() {
                    *x *= inv;
                }
            }
            // SAFETY: as above; `out` and `probs` are distinct buffers.
            unsafe {
                T::gemm_raw(
                    lq,
                    lk,
                    dh,
                    T::one(),
                    s.as_ptr(),
                    lk as isize,
                    1,
                    v.as_ptr().add(b * lk * d + off),
                    di,
                    1,
                    T::zero(),
                    out.as_mut_ptr().add(b * lq * d + off),
                    di,
                    1,
                );
            }
        }
    }
    (out, probs)
}

/// Accumulates gradients into `dq`, `dk`, `dv` (any of which may be absent).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    d: usize,
    heads: usize,
    mask: &AttnMask,
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let (batch, lq, lk) = (mask.batch, mask.lq, mask.lk);
    let dh = d / heads;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let kz = hidden_keys_zeroed(k, d, mask);
    let k = kz.as_deref().unwrap_or(k);
    let vz = hidden_keys_zeroed(v, d, mask);
    let v = vz.as_deref().unwrap_or(v);
    let qz = inert_zeroed(q, d, mask);
    let q = qz.as_deref().unwrap_or(q);
    let doz = inert_zeroed(dout, d, mask);
    let dout = doz.as_deref().unwrap_or(dout);
    let di = d as isize;
    let mut ds = vec![T::zero(); lq * lk];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[(b * heads + h) * lq * lk..(b * heads + h + 1) * lq * lk];
            let qo = b * lq * d + off;
            let ko = b * lk * d + off;
            if let Some(dv) = dv.as_deref_mut() {
                // SAFETY: strided head views stay inside their buffers.
                unsafe {
                    T::gemm_raw(
                        lk,
                        lq,
                        dh,
                        T::one(),
                        p.as_ptr(),
                        1,
                        lk as isize,
                        dout.as_ptr().add(qo),
                        di,
                        1,
                        T::one(),
                        dv.as_mut_ptr().add(ko),
                        di,
                        1,
                    );
                }
            }
            if dq.is_none() && dk.is_none() {
                continue;
            }
            // dP = dO V^T
            unsafe {
                T::gemm_raw(
                    lq,
                    dh,
                    lk,
                    T::one(),
                    dout.as_ptr().add(qo),
                    di,
                    1,
                    v.as_ptr().add(ko),
                    1,
                    di,
                    T::zero(),
                    ds.as_mut_ptr(),
                    lk as isize,
                    1,
                );
            }
            for i in 0..lq {
                let row = &mut ds[i * lk..(i + 1) * lk];
                let prow = &p[i * lk..(i + 1) * lk];
                if mask.is_inert(b, i) {
                    row.fill(T::zero());
                    continue;
                }
                let mut acc = T::zero();
                for (x, pj) in row.iter().zip(prow) {
                    acc += *pj * *x;
                }
                for (x, pj) in row.iter_mut().zip(prow) {
                    *x = *pj * (*x - acc) * scale;
                }
            }
            if let Some(dq) = dq.as_deref_mut() {
                unsafe {
                    T::gemm_raw(
                        lq,
                        lk,
                        dh,
                        T::one(),
                        ds.as_ptr(),
                        lk as isize,
                        1,
                        k.as_ptr().add(ko),
                        di,
                        1,
                        T::one(),
                        dq.as_mut_ptr().add(qo),
                        di,
                        1,
                    );
                }
            }
            if let Some(dk) = dk.as_deref_mut() {
                unsafe {
                    T::gemm_raw(
                        lk,
                        lq,
                        dh,
                        T::one(),
                        ds.as_ptr(),
                        1,
                        lk as isize,
                        q.as_ptr().add(qo),
                        di,
                        1,
                        T::one(),
                        dk.as_mut_ptr().add(ko),
                        di,
                        1,
                    );
                }
            }
        }
    }
}
