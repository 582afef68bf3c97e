//! Quadratic forms, doubling chains of metrics and the base-case family on
//! the solvable product model.
//!
//! Metric inequalities `a d <= d'` are checked on forms as `a^2 G <= G'`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubes::DyadicTree;
use crate::error::{CzError, Result};
use crate::family::{SetFamily, SetMeta};
use crate::mms::PointSet;
use crate::models::solvable::SolvableProductModel;

/// Relative tolerance on eigenvalue comparisons.
pub const EIG_TOL: f64 = 1e-9;

/// Symmetric positive-definite form. Serialises as its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    m: DMatrix<f64>,
}

impl Serialize for QuadraticForm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuadraticForm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        QuadraticForm::new(rows).map_err(serde::de::Error::custom)
    }
}

impl QuadraticForm {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > 8 {
            return Err(CzError::input(format!("form dimension {n} must be in 1..=8")));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(CzError::input("form must be square"));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(CzError::input("form must be a nonempty square matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CzError::input("form has non-finite entries"));
        }
        if m != m.transpose() {
            return Err(CzError::input("form is not symmetric"));
        }
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if !(max > 0.0) || !(min > 1e-12 * max) {
            return Err(CzError::input(format!("form is not positive definite (eigenvalues {min}..{max})")));
        }
        Ok(QuadraticForm { m })
    }

    /// Symmetrises `m` before validating.
    pub fn from_matrix_sym(m: DMatrix<f64>) -> Result<Self> {
        let s = (&m + m.transpose()) * 0.5;
        Self::from_matrix(s)
    }

    pub fn identity(dim: usize) -> Self {
        QuadraticForm { m: DMatrix::identity(dim, dim) }
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.m.row(i).iter().copied().collect()).collect()
    }

    /// Metric length `sqrt(v^T G v)`.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.m * v)).max(0.0).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_matrix(&self.m * c)
    }

    /// `A^T G A`.
    pub fn conjugate(&self, a: &DMatrix<f64>) -> Result<Self> {
        Self::from_matrix_sym(a.transpose() * &self.m * a)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagonalization {
    /// Columns are the common basis: `P^T B P = I`, `P^T A P = diag_a`.
    pub basis: Vec<Vec<f64>>,
    /// Generalized eigenvalues of `(A, B)`, descending.
    pub diag_a: Vec<f64>,
    pub diag_b: Vec<f64>,
    pub residual: f64,
}

impl Diagonalization {
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let n = self.basis.len();
        DMatrix::from_fn(n, n, |i, j| self.basis[i][j])
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn simultaneous_diagonalize(a: &QuadraticForm, b: &QuadraticForm) -> Result<Diagonalization> {
    let (p, diag) = diagonalize_raw(a, b)?;
    let n = a.dim();
    let pa = p.transpose() * a.matrix() * &p;
    let pb = p.transpose() * b.matrix() * &p;
    let da = DMatrix::from_diagonal(&DVector::from_column_slice(&diag));
    let res_a = (&pa - &da).norm() / da.norm().max(f64::MIN_POSITIVE);
    let res_b = (&pb - DMatrix::<f64>::identity(n, n)).norm() / (n as f64).sqrt();
    Ok(Diagonalization {
        basis: to_rows(&p),
        diag_a: diag,
        diag_b: vec![1.0; n],
        residual: res_a.max(res_b),
    })
}

/// Basis `P = L^{-T} V` and descending generalized eigenvalues.
fn diagonalize_raw(a: &QuadraticForm, b: &QuadraticForm) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if a.dim() != b.dim() {
        return Err(CzError::input("forms have different dimensions"));
    }
    let l = b
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| CzError::input("second form is not positive definite"))?
        .l();
    let linv = l.clone().try_inverse().ok_or_else(|| CzError::input("singular Cholesky factor"))?;
    let c = &linv * a.matrix() * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let n = a.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut v = DMatrix::zeros(n, n);
    let mut diag = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).clone_owned();
        let big = col.iter().enumerate().max_by(|x, y| x.1.abs().total_cmp(&y.1.abs())).map(|x| x.0).unwrap_or(0);
        if col[big] < 0.0 {
            col = -col;
        }
        v.set_column(k, &col);
        diag.push(eig.eigenvalues[i]);
    }
    Ok((linv.transpose() * v, diag))
}

/// Generalized eigenvalues of `(A, B)` via the Schur form of `B^{-1} A`,
/// ascending. Independent of the Cholesky route used for construction.
pub fn generalized_eigenvalues(a: &QuadraticForm, b: &QuadraticForm) -> Result<Vec<f64>> {
    let binv_a = b
        .matrix()
        .clone()
        .lu()
        .solve(a.matrix())
        .ok_or_else(|| CzError::input("singular form"))?;
    let ev = Schur::new(binv_a)
        .eigenvalues()
        .ok_or_else(|| CzError::input("complex generalized eigenvalues"))?;
    let mut v: Vec<f64> = ev.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricChain {
    /// `G_0 .. G_k`, from the finer metric to the coarser one.
    pub forms: Vec<QuadraticForm>,
    pub m: f64,
    /// Per-coordinate metric ratios `sqrt(diag_a)` of the endpoints.
    pub metric_ratios: Vec<f64>,
    /// Per-coordinate metric factor of every step.
    pub step_factors: Vec<f64>,
}

impl MetricChain {
    pub fn len(&self) -> usize {
        self.forms.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.forms.len() <= 1
    }
}

/// Builds `d_0 = d, ..., d_k = ρ` with `2 d_{i+1} <= d_i <= 16 d_{i+1}`.
pub fn doubling_chain(g_d: &QuadraticForm, g_rho: &QuadraticForm, m: f64) -> Result<MetricChain> {
    if !(m >= 2.0) || !m.is_finite() {
        return Err(CzError::input(format!("chain parameter m = {m} must be at least 2")));
    }
    let (p, mu) = diagonalize_raw(g_d, g_rho)?;
    let ratios: Vec<f64> = mu.iter().map(|v| v.max(0.0).sqrt()).collect();
    for &s in &ratios {
        if !(s >= m * (1.0 - EIG_TOL) && s <= m * m * (1.0 + EIG_TOL)) {
            return Err(CzError::ChainGap { ratio: s, lo: m, hi: m * m, context: "metric ratio of chain endpoints".into() });
        }
    }
    let s_max = ratios.iter().cloned().fold(0.0, f64::max);
    let s_min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let k = ((s_max.ln() / 16f64.ln()) - 1e-9).ceil().max(1.0) as usize;
    let k_hi = (s_min.ln() / 2f64.ln() + 1e-9).floor() as usize;
    if k > k_hi {
        return Err(CzError::ChainGap {
            ratio: s_max,
            lo: 2f64.powi(k as i32),
            hi: 16f64.powi(k_hi as i32),
            context: "no integer chain length fits both step bounds".into(),
        });
    }
    // G_i = W diag(mu^{(k-i)/k}) W^T with W = P^{-T}, so G_0 = g_d, G_k = g_rho
    let w = p.clone().try_inverse().ok_or_else(|| CzError::input("singular basis"))?.transpose();
    let mut forms = Vec::with_capacity(k + 1);
    forms.push(g_d.clone());
    for i in 1..k {
        let e = (k - i) as f64 / k as f64;
        let d = DVector::from_iterator(mu.len(), mu.iter().map(|v| v.powf(e)));
        let g = &w * DMatrix::from_diagonal(&d) * w.transpose();
        forms.push(QuadraticForm::from_matrix_sym(g)?);
    }
    forms.push(g_rho.clone());
    let step_factors = ratios.iter().map(|s| s.powf(1.0 / k as f64)).collect();
    Ok(MetricChain { forms, m, metric_ratios: ratios, step_factors })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepCertificate {
    /// Extreme generalized eigenvalues of `(G_i, G_{i+1})`.
    pub min_eig: f64,
    pub max_eig: f64,
    pub pass: bool,
}

/// Re-checks `4 G_{i+1} <= G_i <= 256 G_{i+1}` through Schur eigenvalues.
pub fn verify_chain(chain: &MetricChain) -> Result<Vec<StepCertificate>> {
    chain
        .forms
        .windows(2)
        .map(|w| {
            let ev = generalized_eigenvalues(&w[0], &w[1])?;
            let min_eig = ev[0];
            let max_eig = *ev.last().unwrap();
            let pass = min_eig >= 4.0 * (1.0 - EIG_TOL) && max_eig <= 256.0 * (1.0 + EIG_TOL);
            Ok(StepCertificate { min_eig, max_eig, pass })
        })
        .collect()
}

/// `e^{-2 M r} Ad^T base Ad`: the form of `e^{-M r} d_N(y n y^{-1}, ...)`.
pub fn conjugated_metric(base: &QuadraticForm, ad: &DMatrix<f64>, m_const: f64, r_q: f64) -> Result<QuadraticForm> {
    if !(m_const >= 0.0) || !(r_q >= 0.0) {
        return Err(CzError::input("M and r_Q must be nonnegative"));
    }
    base.conjugate(ad)?.scaled((-2.0 * m_const * r_q).exp())
}

/// `(3/2)(2 C2 + C3 + 1)`.
pub fn choose_m(c2: f64, c3: f64) -> Result<f64> {
    if !(c2 >= 0.0) || !(c3 >= 0.0) {
        return Err(CzError::input(format!("adjoint constants must be nonnegative (got {c2}, {c3})")));
    }
    Ok(1.5 * (2.0 * c2 + c3 + 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubeChain {
    /// Index into the distinct-cube list, coarsest first.
    pub cube: usize,
    pub level: usize,
    pub members: PointSet,
    pub r_q: f64,
    pub t_q: f64,
    /// Cube whose first metric closes the chain.
    pub link: Option<usize>,
    pub chain_m: Option<f64>,
    pub forms: Vec<QuadraticForm>,
    /// Ball radius in the cube's metrics: 1, or `r_Q` when `r_Q < 1`.
    pub ball_radius: f64,
    pub certificates: Vec<StepCertificate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseFamilySpec {
    pub m_const: f64,
    pub c2_hat: f64,
    pub c3_hat: f64,
    pub stride: usize,
    pub retried: bool,
    pub cubes: Vec<CubeChain>,
    pub sets_before_dedup: usize,
    pub family_size: usize,
}

pub struct BaseFamily {
    pub family: SetFamily,
    pub spec: BaseFamilySpec,
}

/// Assembles `A = { ι(Q) R }` from a tree on `W_0`.
///
/// Distinct cubes are linked to their smallest strictly larger ancestor with
/// `r_S >= 3 r_Q`; chains run from `d_{Q,0}` to `d_{S,0}`. When a chain gap
/// appears, `M` is doubled once and the build restarts.
pub fn build_base_family(
    model: &SolvableProductModel,
    tree: &DyadicTree,
    m_const: Option<f64>,
    stride: usize,
) -> Result<BaseFamily> {
    let (c2, c3) = model.adjoint_constants();
    let m0 = match m_const {
        Some(m) => m,
        None => choose_m(c2, c3)?,
    };
    match build_with(model, tree, m0, stride, c2, c3, false) {
        Err(CzError::ChainGap { .. }) => build_with(model, tree, 2.0 * m0, stride, c2, c3, true),
        other => other,
    }
}

struct Distinct {
    members: PointSet,
    level: usize,
    center: usize,
    diam: f64,
}

fn distinct_cubes(tree: &DyadicTree) -> Vec<Distinct> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (l, level) in tree.levels.iter().enumerate() {
        for c in level {
            if seen.insert(c.members.clone()) {
                out.push(Distinct { members: c.members.clone(), level: l, center: c.center, diam: c.diam });
            }
        }
    }
    out
}

fn build_with(
    model: &SolvableProductModel,
    tree: &DyadicTree,
    m_const: f64,
    stride: usize,
    c2: f64,
    c3: f64,
    retried: bool,
) -> Result<BaseFamily> {
    if stride == 0 {
        return Err(CzError::input("stride must be at least 1"));
    }
    let t_count = model.t_count();
    if tree.levels.first().map(|l| l.iter().map(|c| c.members.len()).sum::<usize>()) != Some(t_count) {
        return Err(CzError::input("tree does not partition the W_0 grid of this model"));
    }
    let cubes = distinct_cubes(tree);
    let eps_w = model.spec().eps_w;
    let r_of = |d: &Distinct| d.diam.max(eps_w);
    let t_of = |d: &Distinct| model.t_value(d.center);
    let base = model.base_form();

    let g0: Vec<QuadraticForm> = cubes
        .par_iter()
        .map(|d| conjugated_metric(base, &model.ad(t_of(d)), m_const, r_of(d)))
        .collect::<Result<_>>()?;

    // link to the smallest strictly larger ancestor with r_S >= 3 r_Q
    let links: Vec<Option<usize>> = (0..cubes.len())
        .map(|q| {
            let rq = r_of(&cubes[q]);
            if rq < 1.0 {
                return None;
            }
            (0..cubes.len())
                .filter(|&s| {
                    cubes[s].members.len() > cubes[q].members.len()
                        && cubes[q].members.is_subset(&cubes[s].members)
                        && r_of(&cubes[s]) >= 3.0 * rq * (1.0 - 1e-12)
                })
                .min_by_key(|&s| cubes[s].members.len())
        })
        .collect();

    let chains: Vec<Result<CubeChain>> = (0..cubes.len())
        .into_par_iter()
        .map(|q| {
            let d = &cubes[q];
            let rq = r_of(d);
            let (forms, chain_m, certificates) = match links[q] {
                Some(s) => {
                    let rs = r_of(&cubes[s]);
                    let m = (m_const * rs - m_const * rq - c2 * rs).exp();
                    let chain = doubling_chain(&g0[q], &g0[s], m).map_err(|e| match e {
                        CzError::ChainGap { ratio, lo, hi, context } => CzError::ChainGap {
                            ratio,
                            lo,
                            hi,
                            context: format!("{context}; cube {q} linked to cube {s}"),
                        },
                        e => e,
                    })?;
                    let certs = verify_chain(&chain)?;
                    (chain.forms, Some(m), certs)
                }
                None => (vec![g0[q].clone()], None, Vec::new()),
            };
            Ok(CubeChain {
                cube: q,
                level: d.level,
                members: d.members.clone(),
                r_q: rq,
                t_q: t_of(d),
                link: links[q],
                chain_m,
                forms,
                ball_radius: if rq < 1.0 { rq } else { 1.0 },
                certificates,
            })
        })
        .collect();
    let chains: Vec<CubeChain> = chains.into_iter().collect::<Result<_>>()?;

    let centers: Vec<usize> = (0..model.lattice_len()).step_by(stride).collect();
    let lattice_len = model.lattice_len();
    let mut keys = std::collections::HashSet::new();
    let mut sets = Vec::new();
    let mut meta = Vec::new();
    let mut before = 0usize;
    for ch in &chains {
        for (j, form) in ch.forms.iter().enumerate() {
            let balls: Vec<Vec<usize>> =
                centers.par_iter().map(|&z| model.lattice_ball(form, z, ch.ball_radius)).collect();
            for (&z, ball) in centers.iter().zip(balls) {
                before += 1;
                if !keys.insert((ch.cube, ball.clone())) {
                    continue;
                }
                let mut pts = Vec::with_capacity(ch.members.len() * ball.len());
                for t in ch.members.iter() {
                    for &n in &ball {
                        pts.push(t * lattice_len + n);
                    }
                }
                sets.push(PointSet::new(pts));
                meta.push(SetMeta { cube: Some((ch.level, ch.cube)), chain_index: Some(j), center: Some(z) });
            }
        }
    }
    let mut family = SetFamily::with_meta(sets, meta);
    family.dedup();
    let n = model.n();
    if !family.contains_whole_space(n) {
        family.push(PointSet::full(n), SetMeta::default());
    }
    let family_size = family.len();
    Ok(BaseFamily {
        family,
        spec: BaseFamilySpec {
            m_const,
            c2_hat: c2,
            c3_hat: c3,
            stride,
            retried,
            cubes: chains,
            sets_before_dedup: before,
            family_size,
        },
    })
}
