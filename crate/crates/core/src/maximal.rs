//! The family maximal operator `M_A f(x) = sup_{x ∈ Q ∈ A} avg_Q |f|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::family::SetFamily;
use crate::function::Function;
use crate::mms::{MetricMeasureSpace, PointId};

/// Averages `avg_Q |f|` of every family set.
pub fn set_averages(space: &MetricMeasureSpace, family: &SetFamily, f: &Function) -> Vec<f64> {
    family
        .sets()
        .par_iter()
        .map(|q| f.abs_integral(space, q) / space.measure(q))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalResult {
    pub values: Vec<f64>,
    /// Points in no family set; their value is 0.
    pub uncovered: Vec<PointId>,
}

pub fn maximal_function(space: &MetricMeasureSpace, family: &SetFamily, f: &Function) -> Result<MaximalResult> {
    f.check(space)?;
    let avgs = set_averages(space, family, f);
    let mut values = vec![f64::NEG_INFINITY; space.n()];
    for (q, a) in family.sets().iter().zip(&avgs) {
        for x in q.iter() {
            if values[x] < *a {
                values[x] = *a;
            }
        }
    }
    let uncovered: Vec<PointId> = (0..space.n()).filter(|&x| values[x] == f64::NEG_INFINITY).collect();
    for &x in &uncovered {
        values[x] = 0.0;
    }
    Ok(MaximalResult { values, uncovered })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Weak11 {
    /// `sup_λ λ μ{M f > λ} / ||f||_1`.
    pub constant: f64,
    pub argmax_lambda: Option<f64>,
    pub lambdas: Vec<f64>,
    pub level_measures: Vec<f64>,
    pub uncovered: Vec<PointId>,
}

/// Breakpoints `avg_Q |f| (1 - 1e-9)` where the superlevel set changes.
pub fn breakpoint_grid(space: &MetricMeasureSpace, family: &SetFamily, f: &Function) -> Vec<f64> {
    let mut g: Vec<f64> = set_averages(space, family, f)
        .into_iter()
        .filter(|a| *a > 0.0)
        .map(|a| a * (1.0 - 1e-9))
        .collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

pub fn weak11_check(
    space: &MetricMeasureSpace,
    family: &SetFamily,
    f: &Function,
    lambdas: Option<&[f64]>,
) -> Result<Weak11> {
    let norm = f.l1(space);
    if !(norm > 0.0) {
        return Err(CzError::input("weak (1,1) check needs ||f||_1 > 0"));
    }
    let m = maximal_function(space, family, f)?;
    let lambdas = match lambdas {
        Some(l) => l.to_vec(),
        None => breakpoint_grid(space, family, f),
    };
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(CzError::input(format!("lambda = {l} must be positive")));
    }
    // superlevel measures by sorting M f once
    let mut order: Vec<(f64, f64)> = m.values.iter().copied().zip(space.weights().iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0.0);
    for (_, w) in &order {
        prefix.push(prefix.last().unwrap() + w);
    }
    let level_measures: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let k = order.partition_point(|(v, _)| *v > l);
            prefix[k]
        })
        .collect();
    let mut constant = 0.0;
    let mut argmax_lambda = None;
    for (&l, &mu) in lambdas.iter().zip(&level_measures) {
        let c = l * mu / norm;
        if c > constant {
            constant = c;
            argmax_lambda = Some(l);
        }
    }
    Ok(Weak11 { constant, argmax_lambda, lambdas, level_measures, uncovered: m.uncovered })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Differentiation {
    /// `max_x |sup avg_Q |f| - |f(x)||` over the finest sets containing `x`.
    pub deviation: f64,
    pub at: Option<PointId>,
    /// Largest per-point finest diameter; 0 when the family is dense.
    pub finest_scale: f64,
    pub dense: bool,
}

pub fn differentiation_check(space: &MetricMeasureSpace, family: &SetFamily, f: &Function) -> Result<Differentiation> {
    f.check(space)?;
    let avgs = set_averages(space, family, f);
    let diams: Vec<f64> = family.sets().par_iter().map(|q| space.diam(q)).collect();
    let n = space.n();
    let mut finest = vec![f64::INFINITY; n];
    let mut best = vec![0.0f64; n];
    for ((q, &a), &d) in family.sets().iter().zip(&avgs).zip(&diams) {
        for x in q.iter() {
            if d < finest[x] {
                finest[x] = d;
                best[x] = a;
            } else if d == finest[x] {
                best[x] = best[x].max(a);
            }
        }
    }
    let mut deviation = 0.0;
    let mut at = None;
    let mut finest_scale = 0.0f64;
    for x in 0..n {
        if finest[x].is_infinite() {
            return Err(CzError::input(format!("point {x} lies in no family set")));
        }
        finest_scale = finest_scale.max(finest[x]);
        let dev = (best[x] - f.values[x].abs()).abs();
        if dev > deviation {
            deviation = dev;
            at = Some(x);
        }
    }
    Ok(Differentiation { deviation, at, finest_scale, dense: finest_scale == 0.0 })
}
