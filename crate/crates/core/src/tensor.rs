//! Dense component tensors over indices `0..=n` (slot 0 = time) together with
//! the chart-level point and vector types.
//!
//! Index variance is carried at runtime and checked on contraction, so that
//! a covariant slot can never be silently summed against another covariant
//! slot. All arrays are `(n+1)^rank` dense; nothing here is meant for large
//! dimensions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{GeometryError, TensorError};

/// A point of a chart: `coords[0] = t`, `coords[1..=n]` the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.len() < 2 {
            return Err(GeometryError::Dimension {
                expected: 2,
                found: coords.len(),
                context: "chart point needs time plus at least one coordinate",
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFiniteInput);
        }
        Ok(ChartPoint { coords })
    }

    /// Build from a time value and spatial coordinates.
    pub fn from_time_and_space(t: f64, q: &[f64]) -> Result<Self, GeometryError> {
        let mut coords = Vec::with_capacity(q.len() + 1);
        coords.push(t);
        coords.extend_from_slice(q);
        ChartPoint::new(coords)
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn t(&self) -> f64 {
        self.coords[0]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }
}

/// A tangent vector in holonomic coordinates: `dot[0]` is the temporal
/// component `dq^0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub dot: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: ChartPoint, dot: Vec<f64>) -> Result<Self, GeometryError> {
        if dot.len() != base.coords().len() {
            return Err(GeometryError::Dimension {
                expected: base.coords().len(),
                found: dot.len(),
                context: "tangent vector components",
            });
        }
        if dot.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFiniteInput);
        }
        Ok(TangentVector { base, dot })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

/// Whether a tensor slot transforms covariantly (lower index) or
/// contravariantly (upper index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Covariant,
    Contravariant,
}

/// Dense tensor with per-slot variance metadata; shape `(dim)^rank` where
/// `dim = n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dim: usize,
    variance: Vec<Variance>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dim: usize, variance: Vec<Variance>) -> Self {
        let len = dim.pow(variance.len() as u32);
        Tensor {
            dim,
            variance,
            data: vec![0.0; len],
        }
    }

    /// Build by calling `f` on every multi-index.
    pub fn from_fn(
        dim: usize,
        variance: Vec<Variance>,
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Self {
        let rank = variance.len();
        let mut t = Tensor::zeros(dim, variance);
        let mut idx = vec![0usize; rank];
        loop {
            let flat = t.flat_index(&idx);
            t.data[flat] = f(&idx);
            if !increment(&mut idx, dim) {
                break;
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &[Variance] {
        &self.variance
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        let mut flat = 0;
        for &i in idx {
            debug_assert!(i < self.dim);
            flat = flat * self.dim + i;
        }
        flat
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let flat = self.flat_index(idx);
        self.data[flat] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Einstein contraction of `slot_self` against `slot_other`; the slots
    /// must carry opposite variance. Remaining slots keep their order, `self`
    /// first.
    pub fn contract(
        &self,
        other: &Tensor,
        slot_self: usize,
        slot_other: usize,
    ) -> Result<Tensor, TensorError> {
        if self.dim != other.dim {
            return Err(TensorError::DimMismatch(self.dim, other.dim));
        }
        if slot_self >= self.rank() {
            return Err(TensorError::SlotOutOfRange {
                slot: slot_self,
                rank: self.rank(),
            });
        }
        if slot_other >= other.rank() {
            return Err(TensorError::SlotOutOfRange {
                slot: slot_other,
                rank: other.rank(),
            });
        }
        if self.variance[slot_self] == other.variance[slot_other] {
            return Err(TensorError::VarianceMismatch);
        }
        let dim = self.dim;
        let mut variance = Vec::with_capacity(self.rank() + other.rank() - 2);
        for (s, &v) in self.variance.iter().enumerate() {
            if s != slot_self {
                variance.push(v);
            }
        }
        for (s, &v) in other.variance.iter().enumerate() {
            if s != slot_other {
                variance.push(v);
            }
        }
        let out_rank = variance.len();
        let mut out = Tensor::zeros(dim, variance);

        let mut out_idx = vec![0usize; out_rank];
        let mut self_idx = vec![0usize; self.rank()];
        let mut other_idx = vec![0usize; other.rank()];
        loop {
            // split the output multi-index back into the operand slots
            let (left, right) = out_idx.split_at(self.rank() - 1);
            let mut li = left.iter();
            for (s, slot) in self_idx.iter_mut().enumerate() {
                if s != slot_self {
                    *slot = *li.next().unwrap();
                }
            }
            let mut ri = right.iter();
            for (s, slot) in other_idx.iter_mut().enumerate() {
                if s != slot_other {
                    *slot = *ri.next().unwrap();
                }
            }
            let mut acc = 0.0;
            for c in 0..dim {
                self_idx[slot_self] = c;
                other_idx[slot_other] = c;
                acc += self.get(&self_idx) * other.get(&other_idx);
            }
            let flat = out.flat_index(&out_idx);
            out.data[flat] = acc;
            if out_rank == 0 || !increment(&mut out_idx, dim) {
                break;
            }
        }
        Ok(out)
    }
}

fn increment(idx: &mut [usize], dim: usize) -> bool {
    for slot in idx.iter_mut().rev() {
        *slot += 1;
        if *slot < dim {
            return true;
        }
        *slot = 0;
    }
    false
}
