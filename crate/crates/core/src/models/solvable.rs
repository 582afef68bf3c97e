//! Sampled solvable product model `G = W_0 ⋉ N` with `Ad(t) = exp(tA)`.
//!
//! Points are `(t, n)` with `t` on a 1-D grid of step `eps_w` and `n` on a
//! `dim`-dimensional lattice of step `eps_n`. Every cell has weight
//! `eps_w * eps_n^dim`, so product boxes have product measure exactly.
//!
//! For `dim = 1` the metric is the hyperbolic law
//! `ds^2 = dt^2 + g e^{-2αt} dn^2`, i.e.
//! `d = arccosh(1 + (Δa^2 + α^2 g Δn^2) / (2 a_1 a_2)) / |α|` with `a = e^{αt}`.
//! For `dim >= 2` the quasi-metric surrogate
//! `|s - t| + log(1 + ||exp(-min(s,t) A)(n_1 - n_2)||_g)` is used.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::QuadraticForm;
use crate::error::{CzError, Result};
use crate::mms::{DistanceOracle, MetricKind, MetricMeasureSpace, PointId};

/// Largest point count for the closed-form model.
pub const MAX_POINTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolvableSpec {
    pub dim: usize,
    pub eps_w: f64,
    /// Grid `t = k eps_w` with `|t| <= half_width_w`.
    pub half_width_w: f64,
    pub eps_n: f64,
    pub half_width_n: f64,
    /// `dim x dim` real-diagonalizable matrix `A`.
    pub action: Vec<Vec<f64>>,
    /// Form of `d_N` at the identity; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_form: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SolvableProductModel {
    spec: SolvableSpec,
    t_values: Vec<f64>,
    side: usize,
    lattice_len: usize,
    action: DMatrix<f64>,
    base: QuadraticForm,
    /// `exp(-t A)` for every grid `t`, used by the surrogate.
    inv_ad: Vec<DMatrix<f64>>,
}

fn grid(eps: f64, half: f64) -> Vec<f64> {
    let h = (half / eps + 1e-9).floor() as i64;
    (-h..=h).map(|k| k as f64 * eps).collect()
}

fn check_diagonalizable(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let ev = nalgebra::Schur::new(a.clone())
        .eigenvalues()
        .ok_or_else(|| CzError::input("action has complex eigenvalues"))?;
    let scale = a.norm().max(1.0);
    let mut vals: Vec<f64> = ev.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (vals[j] - vals[i]).abs() <= 1e-7 * scale {
            j += 1;
        }
        let lambda = vals[i..j].iter().sum::<f64>() / (j - i) as f64;
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let rank = shifted.rank(1e-7 * scale);
        if n - rank != j - i {
            return Err(CzError::input(format!(
                "action is not diagonalizable: eigenvalue {lambda} has multiplicity {} but {} eigenvectors",
                j - i,
                n - rank
            )));
        }
        i = j;
    }
    Ok(())
}

impl SolvableProductModel {
    pub fn new(spec: SolvableSpec) -> Result<Self> {
        let d = spec.dim;
        if d == 0 || d > 8 {
            return Err(CzError::input(format!("dim = {d} must be in 1..=8")));
        }
        for (name, v) in [("eps_w", spec.eps_w), ("half_width_w", spec.half_width_w), ("eps_n", spec.eps_n), ("half_width_n", spec.half_width_n)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CzError::input(format!("{name} = {v} must be positive")));
            }
        }
        if spec.action.len() != d || spec.action.iter().any(|r| r.len() != d) {
            return Err(CzError::input(format!("action must be {d}x{d}")));
        }
        let action = DMatrix::from_fn(d, d, |i, j| spec.action[i][j]);
        if action.iter().any(|v| !v.is_finite()) {
            return Err(CzError::input("action has non-finite entries"));
        }
        check_diagonalizable(&action)?;
        let base = match &spec.base_form {
            Some(rows) => QuadraticForm::new(rows.clone())?,
            None => QuadraticForm::identity(d),
        };
        if base.dim() != d {
            return Err(CzError::input("base form dimension differs from dim"));
        }
        let t_values = grid(spec.eps_w, spec.half_width_w);
        let side = grid(spec.eps_n, spec.half_width_n).len();
        let lattice_len = side
            .checked_pow(d as u32)
            .filter(|&l| l <= MAX_POINTS)
            .ok_or_else(|| CzError::input("lattice too large"))?;
        let n = lattice_len * t_values.len();
        if n > MAX_POINTS {
            return Err(CzError::input(format!("model has {n} points; the budget is {MAX_POINTS}")));
        }
        let inv_ad = t_values.iter().map(|&t| (&action * -t).exp()).collect();
        Ok(SolvableProductModel { spec, t_values, side, lattice_len, action, base, inv_ad })
    }

    pub fn from_descriptor(v: serde_json::Value) -> Result<Self> {
        Self::new(serde_json::from_value(v)?)
    }

    pub fn spec(&self) -> &SolvableSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.t_values.len() * self.lattice_len
    }

    pub fn t_count(&self) -> usize {
        self.t_values.len()
    }

    pub fn t_value(&self, k: usize) -> f64 {
        self.t_values[k]
    }

    pub fn lattice_len(&self) -> usize {
        self.lattice_len
    }

    pub fn lattice_side(&self) -> usize {
        self.side
    }

    pub fn point_id(&self, t_index: usize, n_index: usize) -> PointId {
        t_index * self.lattice_len + n_index
    }

    pub fn split(&self, p: PointId) -> (usize, usize) {
        (p / self.lattice_len, p % self.lattice_len)
    }

    /// Integer lattice coordinates, each in `0..side`.
    pub fn lattice_coords(&self, idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.spec.dim];
        let mut r = idx;
        for k in (0..self.spec.dim).rev() {
            c[k] = r % self.side;
            r /= self.side;
        }
        c
    }

    pub fn lattice_index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    pub fn lattice_point(&self, idx: usize) -> DVector<f64> {
        let h = (self.side / 2) as f64;
        DVector::from_iterator(self.spec.dim, self.lattice_coords(idx).into_iter().map(|c| (c as f64 - h) * self.spec.eps_n))
    }

    pub fn cell_weight(&self) -> f64 {
        self.spec.eps_w * self.spec.eps_n.powi(self.spec.dim as i32)
    }

    pub fn action(&self) -> &DMatrix<f64> {
        &self.action
    }

    pub fn base_form(&self) -> &QuadraticForm {
        &self.base
    }

    pub fn ad(&self, t: f64) -> DMatrix<f64> {
        (&self.action * t).exp()
    }

    pub fn metric_kind(&self) -> MetricKind {
        if self.spec.dim == 1 {
            MetricKind::Exact
        } else {
            MetricKind::Quasi(3.0)
        }
    }

    /// Distance between arbitrary coordinates.
    pub fn distance_coords(&self, t1: f64, n1: &DVector<f64>, t2: f64, n2: &DVector<f64>) -> f64 {
        let dn = n1 - n2;
        if self.spec.dim == 1 {
            let alpha = self.action[(0, 0)];
            let g = self.base.matrix()[(0, 0)];
            let db2 = g * dn[0] * dn[0];
            if alpha == 0.0 {
                return ((t1 - t2).powi(2) + db2).sqrt();
            }
            let (a1, a2) = ((alpha * t1).exp(), (alpha * t2).exp());
            let arg = 1.0 + ((a1 - a2).powi(2) + alpha * alpha * db2) / (2.0 * a1 * a2);
            arg.max(1.0).acosh() / alpha.abs()
        } else {
            let s = t1.min(t2);
            let v = (&self.action * -s).exp() * dn;
            (t1 - t2).abs() + self.base.norm(&v).ln_1p()
        }
    }

    pub fn solvable_distance(&self, p: PointId, q: PointId) -> f64 {
        if p == q {
            return 0.0;
        }
        let (tp, np) = self.split(p);
        let (tq, nq) = self.split(q);
        let (vp, vq) = (self.lattice_point(np), self.lattice_point(nq));
        if self.spec.dim == 1 {
            return self.distance_coords(self.t_values[tp], &vp, self.t_values[tq], &vq);
        }
        let k = if self.t_values[tp] <= self.t_values[tq] { tp } else { tq };
        let v = &self.inv_ad[k] * (vp - vq);
        (self.t_values[tp] - self.t_values[tq]).abs() + self.base.norm(&v).ln_1p()
    }

    pub fn space(&self) -> Result<MetricMeasureSpace> {
        let n = self.n();
        MetricMeasureSpace::from_oracle(n, Arc::new(self.clone()), vec![self.cell_weight(); n], self.metric_kind())
    }

    /// `W_0` grid as a weighted path with edges of length `eps_w`.
    pub fn w0_space(&self) -> Result<MetricMeasureSpace> {
        let k = self.t_count();
        let edges: Vec<_> = (1..k).map(|i| (i - 1, i, self.spec.eps_w)).collect();
        MetricMeasureSpace::from_edges(k, &edges, vec![self.spec.eps_w; k], MetricKind::Exact)
    }

    /// Lattice indices `n` with `sqrt((n - z)^T G (n - z)) < radius`, ascending.
    pub fn lattice_ball(&self, form: &QuadraticForm, center: usize, radius: f64) -> Vec<usize> {
        let d = self.spec.dim;
        let ginv = form.matrix().clone().try_inverse().expect("positive definite form");
        let zc = self.lattice_coords(center);
        let z = self.lattice_point(center);
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for k in 0..d {
            let reach = radius * ginv[(k, k)].max(0.0).sqrt() / self.spec.eps_n;
            let steps = if reach.is_finite() { reach.ceil().min(self.side as f64) as usize } else { self.side };
            lo[k] = zc[k].saturating_sub(steps);
            hi[k] = (zc[k] + steps).min(self.side - 1);
        }
        let mut out = Vec::new();
        let mut cur = lo.clone();
        let r2 = radius * radius;
        loop {
            let idx = self.lattice_index(&cur);
            let v = self.lattice_point(idx) - &z;
            if v.dot(&(form.matrix() * &v)) < r2 {
                out.push(idx);
            }
            let mut k = d;
            loop {
                if k == 0 {
                    out.sort_unstable();
                    return out;
                }
                k -= 1;
                if cur[k] < hi[k] {
                    cur[k] += 1;
                    cur[k + 1..d].copy_from_slice(&lo[k + 1..d]);
                    break;
                }
            }
        }
    }

    /// Growth rates of `||Ad(±Δt)||` over the grid's `Δt` range:
    /// `(max log||Ad(Δt)||/Δt, max log||Ad(-Δt)||/Δt)` in the base norm.
    pub fn adjoint_constants(&self) -> (f64, f64) {
        let span = self.t_values.last().unwrap() - self.t_values[0];
        let steps = (self.t_count().max(2) - 1).min(200);
        let l = self.base.matrix().clone().cholesky().expect("positive definite").l();
        let linv = l.clone().try_inverse().expect("invertible");
        let op = |m: DMatrix<f64>| {
            // norm of m with respect to |v|_g = |L^T v|
            let x = l.transpose() * m * linv.transpose();
            x.singular_values().max()
        };
        let mut c2 = 0.0f64;
        let mut c3 = 0.0f64;
        for i in 1..=steps {
            let dt = span.max(self.spec.eps_w) * i as f64 / steps as f64;
            c2 = c2.max(op(self.ad(dt)).ln() / dt);
            c3 = c3.max(op(self.ad(-dt)).ln() / dt);
        }
        (c2.max(0.0), c3.max(0.0))
    }

    pub fn invariant_report(&self, samples: usize, seed: u64) -> SolvableReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n();
        let t0 = self.t_count() / 2;

        // product measure on random boxes
        let w = self.cell_weight();
        let mut pm_err = 0.0f64;
        for _ in 0..50 {
            let (a, b) = sorted_pair(&mut rng, self.t_count());
            let (c, d) = sorted_pair(&mut rng, self.lattice_len);
            let mut mu = 0.0;
            for _ in a..=b {
                for _ in c..=d {
                    mu += w;
                }
            }
            let lam = (b - a + 1) as f64 * self.spec.eps_w;
            let nu = (d - c + 1) as f64 * self.spec.eps_n.powi(self.spec.dim as i32);
            pm_err = pm_err.max((mu - lam * nu).abs() / (lam * nu));
        }

        // fiber distortion on {t = 0}
        let origin = self.lattice_len / 2;
        let z0 = self.lattice_point(origin);
        let mut c1 = f64::INFINITY;
        let mut c2 = 0.0f64;
        let mut fiber_pairs = 0;
        let mut fiber_pair = |a: usize, b: usize| {
            if a == b {
                return;
            }
            let (va, vb) = (self.lattice_point(a), self.lattice_point(b));
            let dn = self.base.norm(&(&va - &vb));
            let dg = self.distance_coords(0.0, &va, 0.0, &vb);
            let l = dn.ln_1p();
            c1 = c1.min(l / dg);
            c2 = c2.max(l / (dg + 1.0));
            fiber_pairs += 1;
        };
        for b in 0..self.lattice_len {
            fiber_pair(origin, b);
        }
        for _ in 0..samples.min(5000) {
            let a = rng.random_range(0..self.lattice_len);
            let b = rng.random_range(0..self.lattice_len);
            fiber_pair(a, b);
        }

        // quasi-triangle constant
        let triples: Vec<(usize, usize, usize)> = (0..samples)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        let (quasi_k, quasi_witness) = triples
            .par_iter()
            .map(|&(x, y, z)| {
                let lhs = self.solvable_distance(x, z);
                let rhs = self.solvable_distance(x, y) + self.solvable_distance(y, z);
                (if lhs == 0.0 { 0.0 } else { lhs / rhs }, (x, y, z))
            })
            .reduce(|| (0.0, (0, 0, 0)), |a, b| if b.0 > a.0 { b } else { a });
        let k_limit = match self.metric_kind() {
            MetricKind::Exact => 1.0 + 1e-9,
            MetricKind::Quasi(k) => k,
        };

        // ball-product inclusion
        let mut ballprod = Vec::new();
        for r in [0.5, 1.0, 2.0, 3.0] {
            let mut checked = 0;
            let mut witness = None;
            let e = self.point_id(t0, origin);
            for p in 0..n {
                if self.solvable_distance(p, e) >= r {
                    continue;
                }
                checked += 1;
                let (tk, nk) = self.split(p);
                let t = self.t_values[tk];
                let v = self.lattice_point(nk);
                // p = (t, 0) · (0, exp(-tA) n)
                let fiber = self.ad(-t) * &v;
                let ok = t.abs() < r + 1e-12 && self.distance_coords(0.0, &fiber, 0.0, &z0) < 2.0 * r;
                if !ok && witness.is_none() {
                    witness = Some(p);
                }
            }
            ballprod.push(BallProduct { r, checked, pass: witness.is_none(), witness });
        }

        let (a2, a3) = self.adjoint_constants();
        let quasi_pass = quasi_k <= k_limit;
        let pass = pm_err <= 1e-12 && quasi_pass && c1 > 0.0 && ballprod.iter().all(|b| b.pass);
        SolvableReport {
            n,
            product_measure_max_rel_err: pm_err,
            c1_hat: c1,
            c2_hat: c2,
            fiber_pairs,
            quasi_k,
            quasi_limit: k_limit,
            quasi_pass,
            quasi_witness: (!quasi_pass).then_some(quasi_witness),
            ballprod,
            adjoint_c2: a2,
            adjoint_c3: a3,
            pass,
        }
    }
}

fn sorted_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    (a.min(b), a.max(b))
}

impl DistanceOracle for SolvableProductModel {
    fn dist(&self, x: PointId, y: PointId) -> f64 {
        self.solvable_distance(x, y)
    }

    fn mode(&self) -> &'static str {
        "solvable"
    }

    fn descriptor(&self) -> serde_json::Value {
        serde_json::to_value(&self.spec).expect("spec serialisation")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallProduct {
    pub r: f64,
    pub checked: usize,
    pub pass: bool,
    pub witness: Option<PointId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolvableReport {
    pub n: usize,
    pub product_measure_max_rel_err: f64,
    /// `min log(1 + d_N) / d_G` over fiber pairs.
    pub c1_hat: f64,
    /// `max log(1 + d_N) / (d_G + 1)` over fiber pairs.
    pub c2_hat: f64,
    pub fiber_pairs: usize,
    pub quasi_k: f64,
    pub quasi_limit: f64,
    pub quasi_pass: bool,
    pub quasi_witness: Option<(PointId, PointId, PointId)>,
    pub ballprod: Vec<BallProduct>,
    pub adjoint_c2: f64,
    pub adjoint_c3: f64,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_d(alpha: f64) -> SolvableProductModel {
        SolvableProductModel::new(SolvableSpec {
            dim: 1,
            eps_w: 0.5,
            half_width_w: 2.0,
            eps_n: 0.5,
            half_width_n: 3.0,
            action: vec![vec![alpha]],
            base_form: None,
        })
        .unwrap()
    }

    #[test]
    fn half_plane_examples() {
        let m = one_d(1.0);
        let v = |x: f64| DVector::from_element(1, x);
        assert_eq!(m.distance_coords(0.0, &v(0.0), 0.0, &v(0.0)), 0.0);
        assert_relative_eq!(m.distance_coords(0.0, &v(0.0), 0.0, &v(2.0)), 3f64.acosh(), max_relative = 1e-12);
        assert_relative_eq!(m.distance_coords(0.0, &v(0.0), 1.0, &v(0.0)), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn oracle_symmetry() {
        let m = one_d(0.7);
        for p in (0..m.n()).step_by(7) {
            for q in (0..m.n()).step_by(5) {
                assert_eq!(m.solvable_distance(p, q), m.solvable_distance(q, p));
                assert_eq!(m.solvable_distance(p, q) == 0.0, p == q);
            }
        }
    }

    #[test]
    fn fiber_distortion() {
        let m = one_d(1.0);
        let r = m.invariant_report(2000, 1);
        assert!(r.pass, "{r:?}");
        assert!(r.c1_hat >= 0.4);
    }

    #[test]
    fn rejects_jordan_block() {
        let spec = SolvableSpec {
            dim: 2,
            eps_w: 1.0,
            half_width_w: 1.0,
            eps_n: 1.0,
            half_width_n: 1.0,
            action: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            base_form: None,
        };
        assert!(SolvableProductModel::new(spec).is_err());
    }

    #[test]
    fn lattice_ball_is_an_interval() {
        let m = one_d(1.0);
        let b = m.lattice_ball(&QuadraticForm::identity(1), 6, 1.2);
        assert_eq!(b, vec![4, 5, 6, 7, 8]);
    }
}
