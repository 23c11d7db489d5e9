//! Hard thresholding: keep the `k` largest-magnitude coordinates.
//!
//! Ties in magnitude keep the lower index, so the result is a deterministic
//! Euclidean projection onto the set of `k`-sparse vectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Sparsity capacity used by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtConfig {
    pub k: usize,
}

impl HtConfig {
    pub fn new(k: usize, dim: usize) -> Result<Self> {
        check_capacity(k, dim)?;
        Ok(Self { k })
    }

    /// Capacity from a truncation ratio: `beta` is the fraction of
    /// coordinates zeroed, so `beta = 0.9` keeps 10%.
    pub fn from_ratio(dim: usize, beta: f64) -> Result<Self> {
        Ok(Self {
            k: k_from_ratio(dim, beta)?,
        })
    }
}

fn check_capacity(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > dim {
        return Err(invalid(format!("capacity k={k} outside [1, {dim}]")));
    }
    Ok(())
}

/// Orders coordinates by decreasing magnitude, lower index first on ties.
fn by_priority(theta: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        theta[b]
            .abs()
            .partial_cmp(&theta[a].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Indices kept by `trunc(theta, k)`, increasing.
pub fn top_k_indices(theta: &[f64], k: usize) -> Result<Vec<usize>> {
    check_capacity(k, theta.len())?;
    let mut idx: Vec<usize> = (0..theta.len()).collect();
    if k < theta.len() {
        idx.select_nth_unstable_by(k - 1, by_priority(theta));
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Hard-thresholding operator.
pub fn trunc(theta: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    trunc_in_place(&mut out, k)?;
    Ok(out)
}

pub fn trunc_in_place(theta: &mut [f64], k: usize) -> Result<()> {
    check_capacity(k, theta.len())?;
    if k == theta.len() {
        return Ok(());
    }
    let keep = top_k_indices(theta, k)?;
    let mut next = keep.iter().peekable();
    for (i, v) in theta.iter_mut().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
        } else {
            *v = 0.0;
        }
    }
    Ok(())
}

/// `k = max(1, floor((1 - beta) * d))` for `beta` in `[0, 1)`.
pub fn k_from_ratio(dim: usize, beta: f64) -> Result<usize> {
    if dim == 0 {
        return Err(invalid("dimension must be >= 1"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(invalid(format!("ratio beta={beta} outside [0, 1)")));
    }
    let kept = (1.0 - beta) * dim as f64;
    // 1 - 0.9 is 0.09999999999999998 in binary; snap values that are an
    // integer up to rounding before flooring.
    let nearest = kept.round();
    let k = if (kept - nearest).abs() <= 1e-9 * kept.max(1.0) {
        nearest
    } else {
        kept.floor()
    };
    Ok((k as usize).clamp(1, dim))
}
