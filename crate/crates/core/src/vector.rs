use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense, finite parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("parameter vector must have dimension >= 1"));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be >= 1");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Sorted support of a sparse vector together with its capacity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    support: Vec<usize>,
    capacity: usize,
}

impl SparsityMask {
    pub fn new(mut support: Vec<usize>, capacity: usize, dim: usize) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        if capacity == 0 || capacity > dim {
            return Err(invalid(format!("capacity {capacity} outside [1, {dim}]")));
        }
        if support.len() > capacity {
            return Err(invalid(format!(
                "support of size {} exceeds capacity {capacity}",
                support.len()
            )));
        }
        if let Some(&last) = support.last() {
            if last >= dim {
                return Err(invalid(format!("support index {last} out of range {dim}")));
            }
        }
        Ok(Self { support, capacity })
    }

    /// Mask of the nonzero coordinates of `v`, with capacity `dim`.
    pub fn of(v: &[f64]) -> Self {
        Self {
            support: support(v),
            capacity: v.len().max(1),
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, index: usize) -> bool {
        self.support.binary_search(&index).is_ok()
    }
}

/// Number of entries that are not exactly zero.
pub fn l0_norm(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// Indices of the nonzero entries, increasing.
pub fn support(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// L1 norm of each consecutive block of `group_size` coordinates. The last
/// block may be shorter.
pub fn feature_group_norms(theta: &[f64], group_size: usize) -> Result<Vec<f64>> {
    if group_size == 0 {
        return Err(invalid("group_size must be >= 1"));
    }
    Ok(theta
        .chunks(group_size)
        .map(|g| g.iter().map(|x| x.abs()).sum())
        .collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
