//! Deterministic Christ-type dyadic cubes on a finite metric measure space.
//!
//! Level `k` uses net radius `delta^k * diam(M)`. Nets are nested and built
//! greedily in ascending point-id order (a point joins when it is farther
//! than the radius from every current net point). The finest level assigns
//! each point to its nearest net point; coarser levels assign whole child
//! cubes to the net point nearest the child's center. Ties go to the lowest
//! point id everywhere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::family::{SetFamily, SetMeta};
use crate::mms::{MetricMeasureSpace, PointId, PointSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub members: PointSet,
    /// Net point `z`; also used as the centerpoint `x_Q`.
    pub center: PointId,
    /// Index into the previous stored level.
    pub parent: Option<usize>,
    pub diam: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicTree {
    pub delta: f64,
    /// `diam(M)`; all radii are multiples of it.
    pub scale: f64,
    /// Exponent `k` of `delta^k` for each stored level.
    pub exponents: Vec<u32>,
    pub levels: Vec<Vec<Cube>>,
    /// `max diam(Q) / (scale * delta^k)`.
    pub c_diam: f64,
    /// `min rho(Q) / (scale * delta^k)` where `B(z, rho) ⊆ Q`; `None` when
    /// every cube is the whole space.
    pub a0: Option<f64>,
}

impl DyadicTree {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_radius(&self, level: usize) -> f64 {
        self.scale * self.delta.powi(self.exponents[level] as i32)
    }

    /// Distinct cubes as a family, coarsest first. Repeated member sets keep
    /// the first (coarsest) occurrence.
    pub fn family(&self) -> SetFamily {
        let mut seen = std::collections::HashSet::new();
        let mut sets = Vec::new();
        let mut meta = Vec::new();
        for (l, level) in self.levels.iter().enumerate() {
            for (i, c) in level.iter().enumerate() {
                if seen.insert(c.members.clone()) {
                    sets.push(c.members.clone());
                    meta.push(SetMeta { cube: Some((l, i)), chain_index: None, center: None });
                }
            }
        }
        SetFamily::with_meta(sets, meta)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("tree serialisation")
    }

    pub fn from_json(v: serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v)?)
    }
}

fn greedy_extend(space: &MetricMeasureSpace, net: &mut Vec<PointId>, r: f64) {
    let n = space.n();
    let mut near = vec![false; n];
    let mark = |near: &mut Vec<bool>, q: PointId| {
        for y in space.closed_ball(q, r).expect("net point in range").iter() {
            near[y] = true;
        }
    };
    for &q in net.iter() {
        mark(&mut near, q);
    }
    let mut in_net = vec![false; n];
    for &q in net.iter() {
        in_net[q] = true;
    }
    for p in 0..n {
        if !near[p] && !in_net[p] {
            net.push(p);
            in_net[p] = true;
            mark(&mut near, p);
        }
    }
    net.sort_unstable();
}

/// Builds `depth` levels of dyadic cubes with ratio `delta`.
pub fn build_cubes(space: &MetricMeasureSpace, delta: f64, depth: usize) -> Result<DyadicTree> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CzError::input(format!("delta = {delta} must lie in (0,1)")));
    }
    if depth < 1 {
        return Err(CzError::input("depth must be at least 1"));
    }
    let n = space.n();
    let scale = space.diameter();

    let mut nets: Vec<Vec<PointId>> = Vec::with_capacity(depth);
    let mut net = Vec::new();
    for k in 0..depth {
        greedy_extend(space, &mut net, scale * delta.powi(k as i32));
        nets.push(net.clone());
    }

    let mut levels: Vec<Vec<Cube>> = vec![Vec::new(); depth];
    // finest level: nearest net point per point
    let finest = &nets[depth - 1];
    let owner = space.nearest_sources(finest);
    let mut buckets: Vec<Vec<PointId>> = vec![Vec::new(); finest.len()];
    for x in 0..n {
        buckets[owner[x]].push(x);
    }
    levels[depth - 1] = finest
        .iter()
        .zip(buckets)
        .map(|(&z, b)| Cube { members: PointSet::new(b), center: z, parent: None, diam: 0.0 })
        .collect();

    for k in (0..depth - 1).rev() {
        let net_k = &nets[k];
        let owner = space.nearest_sources(net_k);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); net_k.len()];
        for (ci, child) in levels[k + 1].iter().enumerate() {
            children[owner[child.center]].push(ci);
        }
        let mut cubes = Vec::with_capacity(net_k.len());
        for (&z, kids) in net_k.iter().zip(&children) {
            debug_assert!(!kids.is_empty(), "net point {z} lost its own child cube");
            let mut members = PointSet::empty();
            for &ci in kids {
                members = members.union(&levels[k + 1][ci].members);
            }
            cubes.push(Cube { members, center: z, parent: None, diam: 0.0 });
        }
        for (pi, kids) in children.iter().enumerate() {
            for &ci in kids {
                levels[k + 1][ci].parent = Some(pi);
            }
        }
        levels[k] = cubes;
    }

    // diameters and inner radii
    let mut inner: Vec<Vec<Option<f64>>> = Vec::with_capacity(depth);
    for level in levels.iter_mut() {
        let stats: Vec<(f64, Option<f64>)> = level
            .par_iter()
            .map(|c| {
                let diam = if c.members.len() == n { scale } else { space.diam(&c.members) };
                let rho = space.distance_to_complement(c.center, &c.members);
                (diam, rho.is_finite().then_some(rho))
            })
            .collect();
        let mut inn = Vec::with_capacity(level.len());
        for (c, (d, rho)) in level.iter_mut().zip(stats) {
            c.diam = d;
            inn.push(rho);
        }
        inner.push(inn);
    }

    let mut tree = DyadicTree {
        delta,
        scale,
        exponents: (0..depth as u32).collect(),
        levels,
        c_diam: 0.0,
        a0: None,
    };
    set_constants(&mut tree, &inner);
    Ok(tree)
}

fn set_constants(tree: &mut DyadicTree, inner: &[Vec<Option<f64>>]) {
    let mut c_diam = 0.0f64;
    let mut a0: Option<f64> = None;
    for (l, level) in tree.levels.iter().enumerate() {
        let r = tree.level_radius(l);
        for (c, rho) in level.iter().zip(&inner[l]) {
            if r > 0.0 {
                c_diam = c_diam.max(c.diam / r);
                if let Some(rho) = rho {
                    let v = rho / r;
                    a0 = Some(a0.map_or(v, |a| a.min(v)));
                }
            }
        }
    }
    tree.c_diam = c_diam;
    tree.a0 = a0;
}

/// Outcome of [`subsample_scales`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsampleOutcome {
    pub tree: DyadicTree,
    pub m: usize,
    /// Smallest `diam(parent) / diam(child)` over pairs with positive parent
    /// diameter; `None` if no such pair has a positive child diameter.
    pub min_ratio: Option<f64>,
    pub passes: bool,
    /// Smallest `m` for which every ratio is at least 3, when `m` fails.
    pub suggested_m: Option<usize>,
}

fn keep_levels(space: &MetricMeasureSpace, tree: &DyadicTree, m: usize) -> DyadicTree {
    let kept: Vec<usize> = (0..tree.depth()).step_by(m).collect();
    let mut levels = Vec::with_capacity(kept.len());
    for (j, &l) in kept.iter().enumerate() {
        let mut cubes = tree.levels[l].clone();
        for c in cubes.iter_mut() {
            c.parent = if j == 0 {
                None
            } else {
                let mut p = c.parent;
                let mut at = l;
                for _ in 0..m - 1 {
                    at -= 1;
                    p = tree.levels[at][p.expect("non-root cube has a parent")].parent;
                }
                p
            };
        }
        levels.push(cubes);
    }
    let mut out = DyadicTree {
        delta: tree.delta,
        scale: tree.scale,
        exponents: kept.iter().map(|&l| tree.exponents[l]).collect(),
        levels,
        c_diam: 0.0,
        a0: None,
    };
    let inner: Vec<Vec<Option<f64>>> = out
        .levels
        .iter()
        .map(|level| {
            level
                .par_iter()
                .map(|c| {
                    let rho = space.distance_to_complement(c.center, &c.members);
                    rho.is_finite().then_some(rho)
                })
                .collect()
        })
        .collect();
    set_constants(&mut out, &inner);
    out
}

/// Smallest parent/child diameter ratio over proper refinements.
pub fn min_diameter_ratio(tree: &DyadicTree) -> Option<f64> {
    let mut best: Option<f64> = None;
    for l in 1..tree.depth() {
        for c in &tree.levels[l] {
            let p = &tree.levels[l - 1][c.parent.expect("parent")];
            // a cube carried over unchanged to the next level is not a refinement
            if p.diam > 0.0 && c.diam > 0.0 && p.members != c.members {
                let r = p.diam / c.diam;
                best = Some(best.map_or(r, |b: f64| b.min(r)));
            }
        }
    }
    best
}

/// Keeps levels `0, m, 2m, ...` and re-links parents.
pub fn subsample_scales(space: &MetricMeasureSpace, tree: &DyadicTree, m: usize) -> Result<SubsampleOutcome> {
    if m < 1 {
        return Err(CzError::input("subsample factor m must be at least 1"));
    }
    let ok = |t: &DyadicTree| min_diameter_ratio(t).is_none_or(|r| r >= 3.0);
    let sub = if m == 1 { tree.clone() } else { keep_levels(space, tree, m) };
    let min_ratio = min_diameter_ratio(&sub);
    let passes = ok(&sub);
    let suggested_m = if passes {
        None
    } else {
        (m + 1..tree.depth().max(m + 1)).find(|&mm| ok(&keep_levels(space, tree, mm)))
    };
    Ok(SubsampleOutcome { tree: sub, m, min_ratio, passes, suggested_m })
}

/// Smallest `m` whose subsampled tree has every parent/child ratio >= 3.
pub fn subsample_auto(space: &MetricMeasureSpace, tree: &DyadicTree) -> Result<SubsampleOutcome> {
    for m in 1..=tree.depth().max(1) {
        let out = subsample_scales(space, tree, m)?;
        if out.passes {
            return Ok(out);
        }
    }
    subsample_scales(space, tree, tree.depth().max(1))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BulletCheck {
    pub pass: bool,
    pub witness: Option<String>,
}

impl BulletCheck {
    fn ok() -> Self {
        BulletCheck { pass: true, witness: None }
    }
    fn fail(w: String) -> Self {
        BulletCheck { pass: false, witness: Some(w) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubeReport {
    pub partition: BulletCheck,
    pub nesting: BulletCheck,
    pub unique_parent: BulletCheck,
    pub diam_bound: BulletCheck,
    pub inner_ball: BulletCheck,
    pub c_diam: f64,
    pub a0: Option<f64>,
    pub min_parent_child_ratio: Option<f64>,
    /// Present when the ratio condition was requested.
    pub ratio_at_least_3: Option<BulletCheck>,
}

impl CubeReport {
    pub fn passed(&self) -> bool {
        self.partition.pass
            && self.nesting.pass
            && self.unique_parent.pass
            && self.diam_bound.pass
            && self.inner_ball.pass
            && self.ratio_at_least_3.as_ref().is_none_or(|c| c.pass)
    }
}

/// Checks every structural property of a tree against the space, recomputing
/// diameters and inner balls from scratch.
pub fn verify_cubes(space: &MetricMeasureSpace, tree: &DyadicTree, require_ratio: bool) -> CubeReport {
    let n = space.n();
    let mut partition = BulletCheck::ok();
    'outer: for (l, level) in tree.levels.iter().enumerate() {
        let mut count = vec![0u32; n];
        for c in level {
            for x in c.members.iter() {
                if x >= n {
                    partition = BulletCheck::fail(format!("level {l}: point {x} out of range"));
                    break 'outer;
                }
                count[x] += 1;
            }
        }
        if let Some(x) = count.iter().position(|&c| c != 1) {
            partition = BulletCheck::fail(format!("level {l}: point {x} lies in {} cubes", count[x]));
            break;
        }
    }

    let mut unique_parent = BulletCheck::ok();
    let mut nesting = BulletCheck::ok();
    for (l, level) in tree.levels.iter().enumerate() {
        for (i, c) in level.iter().enumerate() {
            match (l, c.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    unique_parent = BulletCheck::fail(format!("root cube {i} has a parent"));
                }
                (_, None) => {
                    unique_parent = BulletCheck::fail(format!("cube ({l},{i}) has no parent"));
                }
                (_, Some(p)) if p >= tree.levels[l - 1].len() => {
                    unique_parent = BulletCheck::fail(format!("cube ({l},{i}) has invalid parent {p}"));
                }
                (_, Some(p)) => {
                    if nesting.pass && !c.members.is_subset(&tree.levels[l - 1][p].members) {
                        nesting = BulletCheck::fail(format!("cube ({l},{i}) is not inside its parent ({},{p})", l - 1));
                    }
                    // containment in exactly one cube of the previous level
                    let hits = tree.levels[l - 1].iter().filter(|q| c.members.intersects(&q.members)).count();
                    if unique_parent.pass && hits != 1 {
                        unique_parent = BulletCheck::fail(format!("cube ({l},{i}) meets {hits} cubes of level {}", l - 1));
                    }
                }
            }
        }
        // children cover the parent exactly
        if l + 1 < tree.depth() && nesting.pass {
            for (p, c) in level.iter().enumerate() {
                let mut u = PointSet::empty();
                for ch in tree.levels[l + 1].iter().filter(|ch| ch.parent == Some(p)) {
                    u = u.union(&ch.members);
                }
                if u != c.members {
                    nesting = BulletCheck::fail(format!("children of ({l},{p}) do not cover it"));
                    break;
                }
            }
        }
    }

    let mut c_diam = 0.0f64;
    let mut a0: Option<f64> = None;
    let mut diam_bound = BulletCheck::ok();
    let mut inner_ball = BulletCheck::ok();
    for (l, level) in tree.levels.iter().enumerate() {
        let r = tree.level_radius(l);
        let measured: Vec<(f64, f64)> = level
            .par_iter()
            .map(|c| {
                if c.members.is_empty() {
                    return (0.0, 0.0);
                }
                (space.diam(&c.members), space.distance_to_complement(c.center, &c.members))
            })
            .collect();
        for (i, (c, (d, rho))) in level.iter().zip(measured).enumerate() {
            if c.members.is_empty() || !c.members.contains(c.center) {
                inner_ball = BulletCheck::fail(format!("cube ({l},{i}) does not contain its center"));
                continue;
            }
            if r > 0.0 {
                c_diam = c_diam.max(d / r);
                if rho.is_finite() {
                    let v = rho / r;
                    a0 = Some(a0.map_or(v, |a| a.min(v)));
                }
            } else if d > 0.0 {
                diam_bound = BulletCheck::fail(format!("cube ({l},{i}) has positive diameter at zero scale"));
            }
        }
    }
    if c_diam > tree.c_diam * (1.0 + 1e-12) {
        diam_bound = BulletCheck::fail(format!("measured C_diam {c_diam} exceeds recorded {}", tree.c_diam));
    }
    if let Some(a) = a0 {
        if !(a > 0.0) {
            inner_ball = BulletCheck::fail(format!("a0 = {a}"));
        }
    }
    let min_ratio = min_diameter_ratio(tree);
    let ratio_at_least_3 = require_ratio.then(|| match min_ratio {
        Some(r) if r < 3.0 => BulletCheck::fail(format!("parent/child diameter ratio {r} < 3")),
        _ => BulletCheck::ok(),
    });
    CubeReport {
        partition,
        nesting,
        unique_parent,
        diam_bound,
        inner_ball,
        c_diam,
        a0,
        min_parent_child_ratio: min_ratio,
        ratio_at_least_3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mms::path;

    fn members(tree: &DyadicTree, l: usize) -> Vec<Vec<u32>> {
        tree.levels[l].iter().map(|c| c.members.as_slice().to_vec()).collect()
    }

    #[test]
    fn p4_levels() {
        let s = path(4).unwrap();
        let t = build_cubes(&s, 0.5, 3).unwrap();
        assert_eq!(members(&t, 0), vec![vec![0, 1, 2, 3]]);
        assert_eq!(members(&t, 1), vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(members(&t, 2), vec![vec![0], vec![1], vec![2], vec![3]]);
        let rep = verify_cubes(&s, &t, false);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.a0.unwrap() > 0.0);
    }

    #[test]
    fn single_point_space() {
        let s = path(1).unwrap();
        let t = build_cubes(&s, 0.5, 4).unwrap();
        assert!(t.levels.iter().all(|l| l.len() == 1 && l[0].members == PointSet::singleton(0)));
        assert!(verify_cubes(&s, &t, true).passed());
    }

    #[test]
    fn rejects_bad_delta() {
        let s = path(3).unwrap();
        assert!(build_cubes(&s, 1.0, 2).is_err());
        assert!(build_cubes(&s, 0.0, 2).is_err());
        assert!(build_cubes(&s, 0.5, 0).is_err());
    }

    #[test]
    fn p8_subsample() {
        let s = path(8).unwrap();
        let t = build_cubes(&s, 0.5, 5).unwrap();
        let out = subsample_scales(&s, &t, 2).unwrap();
        assert_eq!(out.tree.exponents, vec![0, 2, 4]);
        let d: Vec<f64> = out.tree.levels.iter().map(|l| l.iter().map(|c| c.diam).fold(0.0, f64::max)).collect();
        assert_eq!(d, vec![7.0, 1.0, 0.0]);
        assert!(out.passes);
        assert!(out.tree.c_diam <= t.c_diam);
        let rep = verify_cubes(&s, &out.tree, true);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn m1_is_identity() {
        let s = path(8).unwrap();
        let t = build_cubes(&s, 0.5, 5).unwrap();
        let out = subsample_scales(&s, &t, 1).unwrap();
        assert_eq!(out.tree, t);
        assert!(subsample_scales(&s, &t, 0).is_err());
    }

    #[test]
    fn overlapping_cubes_fail_partition() {
        let s = path(4).unwrap();
        let mut t = build_cubes(&s, 0.5, 3).unwrap();
        t.levels[1][0].members = PointSet::new([0, 1, 2]);
        let rep = verify_cubes(&s, &t, false);
        assert!(!rep.partition.pass);
        assert!(rep.partition.witness.unwrap().contains("point 2"));
    }
}
