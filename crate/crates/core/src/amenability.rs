//! `r`-doubling sets (`|B(r)A| <= 2|A|`) on group models, and the product-set
//! inequality `|A||BY| <= |BA||A⁻¹Y|`.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::mms::{MetricMeasureSpace, PointId, PointSet};
use crate::models::group::Elem;
use crate::models::{GroupLaw, GroupModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    /// `B(r)A = {b·a}` with `b` in the open word ball.
    LeftProduct,
    /// Open metric dilation `{x : d(x, A) < r}`.
    Dilation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DoublingCertificate {
    pub r: f64,
    pub set: PointSet,
    pub measure_a: f64,
    pub measure_bra: f64,
    pub found: bool,
    pub semantics: Semantics,
    pub candidates_tested: usize,
    pub budget: usize,
    /// Strategy log; for `not_found` it records how far each phase got.
    pub log: Vec<String>,
}

impl DoublingCertificate {
    pub fn ratio(&self) -> f64 {
        self.measure_bra / self.measure_a
    }
}

fn certificate(r: f64, set: PointSet, bra: usize, semantics: Semantics) -> DoublingCertificate {
    let (a, b) = (set.len(), bra);
    DoublingCertificate {
        r,
        set,
        measure_a: a as f64,
        measure_bra: b as f64,
        found: a > 0 && b <= 2 * a,
        semantics,
        candidates_tested: 1,
        budget: 1,
        log: Vec::new(),
    }
}

/// Exact check of `|B(r)A| <= 2|A|` with counting measure.
pub fn is_r_doubling(group: &GroupModel, a: &PointSet, r: f64) -> Result<DoublingCertificate> {
    if a.is_empty() {
        return Err(CzError::input("r-doubling check needs a nonempty set"));
    }
    if !(r > 0.0) {
        return Err(CzError::input(format!("r = {r} must be positive")));
    }
    let bra = group.product_set(&group.open_ball(r), a).map_err(|e| match e {
        CzError::Truncation(m) => {
            CzError::Truncation(format!("{m}; regenerate the model with a larger radius"))
        }
        e => e,
    })?;
    Ok(certificate(r, a.clone(), bra.len(), Semantics::LeftProduct))
}

/// Metric version for spaces without a group structure: `μ(A_r) <= 2μ(A)`.
pub fn is_r_doubling_metric(space: &MetricMeasureSpace, a: &PointSet, r: f64) -> Result<DoublingCertificate> {
    if a.is_empty() {
        return Err(CzError::input("r-doubling check needs a nonempty set"));
    }
    let d = space.dilate(a, r)?;
    let (ma, md) = (space.measure(a), space.measure(&d));
    Ok(DoublingCertificate {
        r,
        set: a.clone(),
        measure_a: ma,
        measure_bra: md,
        found: md <= 2.0 * ma,
        semantics: Semantics::Dilation,
        candidates_tested: 1,
        budget: 1,
        log: Vec::new(),
    })
}

struct Search<'a> {
    group: &'a GroupModel,
    r: f64,
    ball: PointSet,
    budget: usize,
    tested: usize,
    log: Vec<String>,
    best: Option<(f64, PointSet, usize)>,
}

enum Phase {
    Hit(PointSet, usize),
    Exhausted,
    Budget,
}

impl Search<'_> {
    /// Tests candidates in order; the first hit in list order wins.
    fn run(&mut self, cands: Vec<PointSet>) -> Phase {
        let room = self.budget - self.tested;
        let over = cands.len() > room;
        let cands: Vec<PointSet> = cands.into_iter().take(room).collect();
        let results: Vec<Option<usize>> = cands
            .par_iter()
            .map(|a| self.group.product_set(&self.ball, a).ok().map(|p| p.len()))
            .collect();
        for (a, res) in cands.into_iter().zip(results) {
            self.tested += 1;
            let Some(b) = res else { continue };
            let ratio = b as f64 / a.len() as f64;
            if self.best.as_ref().is_none_or(|(q, _, _)| ratio < *q) {
                self.best = Some((ratio, a.clone(), b));
            }
            if b <= 2 * a.len() {
                return Phase::Hit(a, b);
            }
        }
        if over { Phase::Budget } else { Phase::Exhausted }
    }
}

fn lookup(group: &GroupModel, elems: impl IntoIterator<Item = Elem>) -> Option<PointSet> {
    let ids: Option<Vec<PointId>> = elems.into_iter().map(|e| group.id_of(&e)).collect();
    ids.map(PointSet::new)
}

fn box_candidate(group: &GroupModel, dim: usize, side: i64) -> Option<PointSet> {
    let lo = -(side / 2);
    let n = (side as usize).checked_pow(dim as u32)?;
    lookup(
        group,
        (0..n).map(|mut id| {
            let mut c = vec![0i64; dim];
            for k in (0..dim).rev() {
                c[k] = lo + (id % side as usize) as i64;
                id /= side as usize;
            }
            c
        }),
    )
}

/// `{a^j t^i : 0 <= i < h, 0 <= j < w·2^i}`, i.e. affine maps `(i, j)`.
fn bs12_candidate(group: &GroupModel, h: i64, w: i64) -> Option<PointSet> {
    lookup(group, (0..h).flat_map(|i| (0..w << i).map(move |j| vec![i, j, 0])))
}

/// Unordered rooted tree; children are kept sorted so equal shapes compare equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Shape(Vec<Shape>);

#[cfg(test)]
impl Shape {
    fn size(&self) -> usize {
        1 + self.0.iter().map(Shape::size).sum::<usize>()
    }
}

/// Rooted subtrees of the `k`-regular tree up to isomorphism, grouped by size
/// `1..=max`: the root has at most `k` children, other nodes at most `k - 1`.
fn rooted_shapes(k: usize, max: usize) -> Vec<Vec<Shape>> {
    // flat: (size, shape) for branches whose nodes have <= k-1 children
    let mut flat: Vec<(usize, Shape)> = Vec::new();
    fn extend(
        pool: &[(usize, Shape)],
        start: usize,
        left: usize,
        slots: usize,
        acc: &mut Vec<Shape>,
        out: &mut Vec<Shape>,
    ) {
        if left == 0 {
            out.push(Shape(acc.clone()));
            return;
        }
        if slots == 0 {
            return;
        }
        for (i, (s, sh)) in pool.iter().enumerate().skip(start) {
            if *s > left {
                break;
            }
            acc.push(sh.clone());
            extend(pool, i, left - s, slots - 1, acc, out);
            acc.pop();
        }
    }
    for n in 1..=max {
        let mut out = Vec::new();
        extend(&flat, 0, n - 1, k.saturating_sub(1), &mut Vec::new(), &mut out);
        for s in &mut out {
            s.0.sort();
        }
        out.sort();
        out.dedup();
        flat.extend(out.into_iter().map(|s| (n, s)));
    }
    (1..=max)
        .map(|n| {
            let mut out = Vec::new();
            extend(&flat, 0, n - 1, k, &mut Vec::new(), &mut out);
            for s in &mut out {
                s.0.sort();
            }
            out.sort();
            out.dedup();
            out
        })
        .collect()
}

/// Embeds a shape in the free product of `k` involutions, translated so that
/// a center of the shape sits at the identity.
fn embed_shape(group: &GroupModel, k: usize, shape: &Shape) -> Option<PointSet> {
    let mut adj: Vec<Vec<usize>> = Vec::new();
    fn build(s: &Shape, adj: &mut Vec<Vec<usize>>) -> usize {
        let me = adj.len();
        adj.push(Vec::new());
        for c in &s.0 {
            let ci = build(c, adj);
            adj[me].push(ci);
            adj[ci].push(me);
        }
        me
    }
    build(shape, &mut adj);
    let n = adj.len();
    let bfs = |src: usize| -> Vec<usize> {
        let mut d = vec![usize::MAX; n];
        d[src] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if d[v] == usize::MAX {
                    d[v] = d[u] + 1;
                    q.push_back(v);
                }
            }
        }
        d
    };
    let center = (0..n).min_by_key(|&u| bfs(u).into_iter().max().unwrap_or(0))?;
    let mut word: Vec<Option<Elem>> = vec![None; n];
    word[center] = Some(Vec::new());
    let mut q = VecDeque::from([center]);
    while let Some(u) = q.pop_front() {
        let w = word[u].clone().unwrap();
        let mut letters = (0..k as i64).filter(|g| w.first() != Some(g));
        for &v in &adj[u] {
            if word[v].is_some() {
                continue;
            }
            let g = letters.next()?;
            word[v] = Some(group.law.mul(&[g], &w));
            q.push_back(v);
        }
    }
    lookup(group, word.into_iter().map(Option::unwrap))
}

/// Deterministic search for an `r`-doubling set: balls of growing radius,
/// then law-specific candidates (axis boxes, BS(1,2) rectangles, or all
/// rooted subtree shapes of the tree by increasing size).
pub fn find_r_doubling(group: &GroupModel, r: f64, budget: usize) -> Result<DoublingCertificate> {
    find_r_doubling_with(group, r, budget, DEFAULT_MAX_SHAPE)
}

/// Largest tree shape enumerated by [`find_r_doubling`].
pub const DEFAULT_MAX_SHAPE: usize = 12;

pub fn find_r_doubling_with(group: &GroupModel, r: f64, budget: usize, max_shape: usize) -> Result<DoublingCertificate> {
    if budget == 0 {
        return Err(CzError::input("search budget must be positive"));
    }
    if !(r > 0.0) {
        return Err(CzError::input(format!("r = {r} must be positive")));
    }
    let mut s = Search { group, r, ball: group.open_ball(r), budget, tested: 0, log: Vec::new(), best: None };
    let finish = |s: Search, hit: Option<(PointSet, usize)>| {
        let (set, bra) = match hit {
            Some(h) => h,
            None => s.best.map(|(_, a, b)| (a, b)).unwrap_or((PointSet::empty(), 0)),
        };
        let mut c = certificate(s.r, set, bra, Semantics::LeftProduct);
        c.candidates_tested = s.tested;
        c.budget = s.budget;
        c.log = s.log;
        c
    };

    let max_len = group.max_word_length();
    let balls: Vec<PointSet> = (0..=max_len).map(|rad| group.closed_ball(rad as f64)).collect();
    match s.run(balls) {
        Phase::Hit(a, b) => {
            s.log.push(format!("balls: hit at |A| = {}", a.len()));
            return Ok(finish(s, Some((a, b))));
        }
        Phase::Exhausted => s.log.push(format!("balls: radii 0..={max_len} fail or leave the region")),
        Phase::Budget => {
            s.log.push("balls: budget exhausted".into());
            return Ok(finish(s, None));
        }
    }

    let phase = match &group.law {
        GroupLaw::Abelian { dim } => {
            let cands: Vec<PointSet> =
                (1..=2 * max_len as i64 + 1).map_while(|side| box_candidate(group, *dim, side)).collect();
            let n = cands.len();
            let p = s.run(cands);
            s.log.push(format!("boxes: sides 1..={n}"));
            p
        }
        GroupLaw::Bs12 => {
            let mut cands = Vec::new();
            for h in 1..=max_len as i64 {
                for w in 1..=(1i64 << max_len.min(20)) {
                    match bs12_candidate(group, h, w) {
                        Some(a) => cands.push(a),
                        None => break,
                    }
                }
            }
            cands.sort_by_key(PointSet::len);
            let n = cands.len();
            let p = s.run(cands);
            s.log.push(format!("bs12 rectangles: {n} candidates in the region"));
            p
        }
        GroupLaw::FreeInvolutions { k } => {
            let mut p = Phase::Exhausted;
            let mut size = 0;
            while size < max_shape {
                let next = size + 1;
                let shapes = rooted_shapes(*k, next).pop().unwrap_or_default();
                let cands: Vec<PointSet> = shapes.iter().filter_map(|sh| embed_shape(group, *k, sh)).collect();
                let skipped = shapes.len() - cands.len();
                if skipped > 0 {
                    s.log.push(format!("shapes of size {next}: {skipped} leave the region"));
                }
                p = s.run(cands);
                if !matches!(p, Phase::Exhausted) || skipped > 0 {
                    break;
                }
                size = next;
            }
            s.log.push(format!("connected sets: every shape of size <= {size} tested"));
            p
        }
        GroupLaw::Heisenberg => Phase::Exhausted,
    };
    Ok(match phase {
        Phase::Hit(a, b) => finish(s, Some((a, b))),
        Phase::Budget => {
            s.log.push("budget exhausted".into());
            finish(s, None)
        }
        Phase::Exhausted => finish(s, None),
    })
}

/// Metric fallback: closed balls around `center` at every distance value.
pub fn find_r_doubling_metric(
    space: &MetricMeasureSpace,
    center: PointId,
    r: f64,
    budget: usize,
) -> Result<DoublingCertificate> {
    if budget == 0 {
        return Err(CzError::input("search budget must be positive"));
    }
    let mut radii = space.distances_from(center);
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut tested = 0;
    let mut last = None;
    for rad in radii.into_iter().take(budget) {
        tested += 1;
        let c = is_r_doubling_metric(space, &space.closed_ball(center, rad)?, r)?;
        let hit = c.found;
        last = Some(c);
        if hit {
            break;
        }
    }
    let mut c = last.ok_or_else(|| CzError::input("empty space"))?;
    c.candidates_tested = tested;
    c.budget = budget;
    c.log.push(format!("closed balls around {center}: {tested} radii"));
    Ok(c)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductInequality {
    pub a: usize,
    pub by: usize,
    pub ba: usize,
    pub a_inv_y: usize,
    pub lhs: u128,
    pub rhs: u128,
    pub holds: bool,
}

/// Evaluates both sides of `|A||BY| <= |BA||A⁻¹Y|` exactly.
pub fn product_inequality_check(
    group: &GroupModel,
    a: &PointSet,
    b: &PointSet,
    y: &PointSet,
) -> Result<ProductInequality> {
    let by = group.product_set(b, y)?.len();
    let ba = group.product_set(b, a)?.len();
    let a_inv_y = group.product_set(&group.inverse_set(a)?, y)?.len();
    let lhs = a.len() as u128 * by as u128;
    let rhs = ba as u128 * a_inv_y as u128;
    Ok(ProductInequality { a: a.len(), by, ba, a_inv_y, lhs, rhs, holds: lhs <= rhs })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnidoubleRow {
    pub r: u32,
    pub ball_r: usize,
    pub ball_2r: usize,
    pub ball_3r: usize,
    /// `|B(2r)| / |B(r)|`.
    pub doubling: f64,
    /// `|B(2r)B(r)| / |B(r)|`, the constant produced by the inequality.
    pub product_constant: f64,
    pub holds: bool,
}

/// Instantiates the inequality with `A = B(r)`, `B = B(2r)`, `Y = {e}` using
/// closed word balls, for every `r` with `3r` inside the region.
pub fn unidouble_table(group: &GroupModel, radii: &[u32]) -> Result<Vec<UnidoubleRow>> {
    let e = PointSet::singleton(group.origin);
    radii
        .iter()
        .filter(|&&r| 3 * r <= group.max_word_length())
        .map(|&r| {
            let a = group.closed_ball(r as f64);
            let b = group.closed_ball(2.0 * r as f64);
            let p = product_inequality_check(group, &a, &b, &e)?;
            Ok(UnidoubleRow {
                r,
                ball_r: a.len(),
                ball_2r: b.len(),
                ball_3r: group.closed_ball(3.0 * r as f64).len(),
                doubling: b.len() as f64 / a.len() as f64,
                product_constant: p.ba as f64 / a.len() as f64,
                holds: p.holds,
            })
        })
        .collect()
}
