//! Real-valued functions on a finite space.

use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::mms::{MetricMeasureSpace, PointId, PointSet};

/// Dense function, one value per point. JSON form is `{"values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Function {
    pub values: Vec<f64>,
}

impl Function {
    pub fn new(values: Vec<f64>) -> Self {
        Function { values }
    }

    pub fn zeros(n: usize) -> Self {
        Function { values: vec![0.0; n] }
    }

    pub fn check(&self, space: &MetricMeasureSpace) -> Result<()> {
        if self.values.len() != space.n() {
            return Err(CzError::input(format!(
                "function has {} values, space has {} points",
                self.values.len(),
                space.n()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(CzError::input(format!("function value at {i} is not finite")));
        }
        Ok(())
    }

    pub fn l1(&self, space: &MetricMeasureSpace) -> f64 {
        self.values.iter().zip(space.weights()).map(|(v, w)| v.abs() * w).sum()
    }

    pub fn l2_squared(&self, space: &MetricMeasureSpace) -> f64 {
        self.values.iter().zip(space.weights()).map(|(v, w)| v * v * w).sum()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫_Q |f| dμ`.
    pub fn abs_integral(&self, space: &MetricMeasureSpace, q: &PointSet) -> f64 {
        q.iter().map(|x| self.values[x].abs() * space.weight(x)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Function { values: self.values.iter().map(|v| c * v).collect() }
    }
}

/// Function stored on its support.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseFunction {
    pub points: Vec<PointId>,
    pub values: Vec<f64>,
}

impl SparseFunction {
    pub fn iter(&self) -> impl Iterator<Item = (PointId, f64)> + '_ {
        self.points.iter().copied().zip(self.values.iter().copied())
    }

    pub fn integral(&self, space: &MetricMeasureSpace) -> f64 {
        self.iter().map(|(x, v)| v * space.weight(x)).sum()
    }

    pub fn l1(&self, space: &MetricMeasureSpace) -> f64 {
        self.iter().map(|(x, v)| v.abs() * space.weight(x)).sum()
    }

    /// Sum of functions, accumulated in point order.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a SparseFunction>) -> SparseFunction {
        let mut acc = std::collections::BTreeMap::new();
        for p in parts {
            for (x, v) in p.iter() {
                *acc.entry(x).or_insert(0.0) += v;
            }
        }
        let (points, values) = acc.into_iter().unzip();
        SparseFunction { points, values }
    }
}
