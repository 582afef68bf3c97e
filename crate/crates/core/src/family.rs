//! Doubling sets, doubling families and density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::mms::{MetricMeasureSpace, PointId, PointSet};
use crate::le_slack;

/// Optional provenance of a family set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetMeta {
    /// `(level, index)` of the dyadic cube the set came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cube: Option<(usize, usize)>,
    /// Index `j` of the metric in a doubling chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_index: Option<usize>,
    /// Ball center, for ball families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<PointId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetFamily {
    sets: Vec<PointSet>,
    meta: Vec<SetMeta>,
}

#[derive(Serialize, Deserialize)]
struct FamilyEntry {
    id: usize,
    members: PointSet,
    #[serde(default)]
    meta: SetMeta,
}

impl SetFamily {
    pub fn new(sets: Vec<PointSet>) -> Self {
        let meta = vec![SetMeta::default(); sets.len()];
        SetFamily { sets, meta }
    }

    pub fn with_meta(sets: Vec<PointSet>, meta: Vec<SetMeta>) -> Self {
        assert_eq!(sets.len(), meta.len());
        SetFamily { sets, meta }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[PointSet] {
        &self.sets
    }

    pub fn set(&self, i: usize) -> &PointSet {
        &self.sets[i]
    }

    pub fn meta(&self, i: usize) -> &SetMeta {
        &self.meta[i]
    }

    pub fn push(&mut self, set: PointSet, meta: SetMeta) {
        self.sets.push(set);
        self.meta.push(meta);
    }

    /// Drops repeated member sets, keeping the first occurrence.
    pub fn dedup(&mut self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let before = self.sets.len();
        let mut sets = Vec::with_capacity(before);
        let mut meta = Vec::with_capacity(before);
        for (s, m) in self.sets.drain(..).zip(self.meta.drain(..)) {
            if seen.insert(s.clone()) {
                sets.push(s);
                meta.push(m);
            }
        }
        self.sets = sets;
        self.meta = meta;
        before - self.sets.len()
    }

    pub fn contains_whole_space(&self, n: usize) -> bool {
        self.sets.iter().any(|s| s.len() == n)
    }

    /// Checks every set is nonempty, in range and of positive measure.
    pub fn validate(&self, space: &MetricMeasureSpace) -> Result<()> {
        for (i, s) in self.sets.iter().enumerate() {
            if s.is_empty() {
                return Err(CzError::input(format!("family set {i} is empty")));
            }
            if s.iter().any(|x| x >= space.n()) {
                return Err(CzError::input(format!("family set {i} has a point outside the space")));
            }
            if !(space.measure(s) > 0.0) {
                return Err(CzError::input(format!("family set {i} has zero measure")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<FamilyEntry> = self
            .sets
            .iter()
            .zip(&self.meta)
            .enumerate()
            .map(|(id, (s, m))| FamilyEntry { id, members: s.clone(), meta: m.clone() })
            .collect();
        serde_json::to_value(entries).expect("family serialisation")
    }

    pub fn from_json(v: serde_json::Value) -> Result<Self> {
        let mut entries: Vec<FamilyEntry> = serde_json::from_value(v)?;
        entries.sort_by_key(|e| e.id);
        for (k, e) in entries.iter().enumerate() {
            if e.id != k {
                return Err(CzError::input(format!("family ids must be 0..n-1 without gaps (found {})", e.id)));
            }
        }
        let (sets, meta) = entries.into_iter().map(|e| (e.members, e.meta)).unzip();
        Ok(SetFamily { sets, meta })
    }
}

/// All balls `B(x, r)` for the given centers and radii, deduplicated.
pub fn ball_family(space: &MetricMeasureSpace, centers: &[PointId], radii: &[f64]) -> Result<SetFamily> {
    let mut fam = SetFamily::new(Vec::new());
    for &r in radii {
        let balls: Vec<Result<PointSet>> = centers.par_iter().map(|&x| space.ball(x, r)).collect();
        for (&x, b) in centers.iter().zip(balls) {
            fam.push(b?, SetMeta { center: Some(x), ..Default::default() });
        }
    }
    fam.dedup();
    Ok(fam)
}

/// Which measure bound defines the enlargement `tilde Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `mu(R) <= 2 mu(Q)`.
    Loose,
    /// `mu(R) <= mu(Q)`.
    Strict,
}

impl Variant {
    fn factor(self) -> f64 {
        match self {
            Variant::Loose => 2.0,
            Variant::Strict => 1.0,
        }
    }
}

/// Family plus measures and a point-to-sets index sorted by `(measure, id)`.
pub struct FamilyIndex<'a> {
    pub space: &'a MetricMeasureSpace,
    pub family: &'a SetFamily,
    measures: Vec<f64>,
    by_point: Vec<Vec<u32>>,
    whole: Option<usize>,
}

impl<'a> FamilyIndex<'a> {
    pub fn new(space: &'a MetricMeasureSpace, family: &'a SetFamily) -> Result<Self> {
        family.validate(space)?;
        let measures: Vec<f64> = family.sets.par_iter().map(|s| space.measure(s)).collect();
        let mut by_point: Vec<Vec<u32>> = vec![Vec::new(); space.n()];
        for (i, s) in family.sets.iter().enumerate() {
            for x in s.iter() {
                by_point[x].push(i as u32);
            }
        }
        by_point.par_iter_mut().for_each(|v| {
            v.sort_by(|&a, &b| measures[a as usize].total_cmp(&measures[b as usize]).then(a.cmp(&b)))
        });
        let whole = family.sets.iter().position(|s| s.len() == space.n());
        Ok(FamilyIndex { space, family, measures, by_point, whole })
    }

    pub fn measure(&self, i: usize) -> f64 {
        self.measures[i]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn whole_space(&self) -> Option<usize> {
        self.whole
    }

    /// Sets containing `x`, ascending by `(measure, id)`.
    pub fn containing(&self, x: PointId) -> &[u32] {
        &self.by_point[x]
    }

    /// Union of the sets `R` meeting `q` with `mu(R) <= factor * bound`.
    pub fn enlargement(&self, q: &PointSet, bound: f64) -> PointSet {
        let mut hit = std::collections::HashSet::new();
        let mut pts: Vec<PointId> = Vec::new();
        for x in q.iter() {
            for &r in &self.by_point[x] {
                if !le_slack(self.measures[r as usize], bound) {
                    break;
                }
                if hit.insert(r) {
                    pts.extend(self.family.sets[r as usize].iter());
                }
            }
        }
        pts.extend(q.iter());
        PointSet::new(pts)
    }

    pub fn tilde(&self, q: usize, variant: Variant) -> PointSet {
        self.enlargement(&self.family.sets[q], variant.factor() * self.measures[q])
    }

    /// Lowest-measure (then lowest-id) family set containing `t`.
    pub fn smallest_container(&self, t: &PointSet) -> Option<usize> {
        let first = t.first()?;
        self.by_point[first]
            .iter()
            .map(|&s| s as usize)
            .find(|&s| self.family.sets[s].len() >= t.len() && t.is_subset(&self.family.sets[s]))
    }

    /// `min mu(S)/mu(Q)` over `S ⊇ tilde(Q)`; infinite if none exists.
    pub fn containment_ratio(&self, q: usize, variant: Variant) -> (f64, Option<usize>) {
        let t = self.tilde(q, variant);
        match self.smallest_container(&t) {
            Some(s) => (self.measures[s] / self.measures[q], Some(s)),
            None => (f64::INFINITY, None),
        }
    }

    /// Smallest admissible growth ratio: `mu(R)/mu(Q)` over `R ⊇ Q` with
    /// `mu(R) >= 2 mu(Q)`, or `mu(M)/mu(Q)` when the whole space is a member.
    pub fn growth_ratio(&self, q: usize) -> (f64, Option<usize>) {
        let mq = self.measures[q];
        let set = &self.family.sets[q];
        let mut best = (f64::INFINITY, None);
        if let Some(w) = self.whole {
            best = (self.measures[w] / mq, Some(w));
        }
        let first = set.first().expect("nonempty set");
        for &r in &self.by_point[first] {
            let r = r as usize;
            let mr = self.measures[r];
            if !le_slack(2.0 * mq, mr) {
                continue;
            }
            if mr / mq >= best.0 {
                break;
            }
            if set.is_subset(&self.family.sets[r]) {
                best = (mr / mq, Some(r));
                break;
            }
        }
        best
    }
}

/// Smallest `C` on the grid `{1, 1.25, 1.5} x 2^k` with
/// `mu({x : d(x,Q) <= diam(Q)/C}) <= C mu(Q)`. Singletons give 1.
pub fn doubling_set_constant(space: &MetricMeasureSpace, q: &PointSet) -> Result<f64> {
    if q.is_empty() {
        return Err(CzError::input("doubling constant of an empty set"));
    }
    let diam = space.diam(q);
    let mq = space.measure(q);
    if diam == 0.0 {
        return Ok(1.0);
    }
    let mut k = 0;
    loop {
        for m in [1.0, 1.25, 1.5] {
            let c = m * 2f64.powi(k);
            let nb = space.closed_dilate(q, diam / c)?;
            if le_slack(space.measure(&nb), c * mq) {
                return Ok(c);
            }
        }
        k += 1;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetWitness {
    pub set: usize,
    pub ratio: f64,
    pub container: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    /// `max_Q max(containment, growth)`: the smallest `C` passing both
    /// conditions.
    pub constant: f64,
    pub containment_constant: f64,
    pub growth_constant: f64,
    pub containment_ratios: Vec<f64>,
    pub growth_ratios: Vec<f64>,
}

impl VariantResult {
    /// Sets failing either condition at `c`.
    pub fn failures(&self, c: f64) -> (Vec<SetWitness>, Vec<SetWitness>) {
        let pick = |v: &[f64]| {
            v.iter()
                .enumerate()
                .filter(|(_, &r)| !le_slack(r, c))
                .map(|(set, &ratio)| SetWitness { set, ratio, container: None })
                .collect()
        };
        (pick(&self.containment_ratios), pick(&self.growth_ratios))
    }

    pub fn passes(&self, c: f64) -> bool {
        le_slack(self.constant, c)
    }
}

pub fn analyze_variant(idx: &FamilyIndex, variant: Variant) -> VariantResult {
    let pairs: Vec<(f64, f64)> = (0..idx.family.len())
        .into_par_iter()
        .map(|q| (idx.containment_ratio(q, variant).0, idx.growth_ratio(q).0))
        .collect();
    let containment_ratios: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let growth_ratios: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let containment_constant = containment_ratios.iter().cloned().fold(1.0, f64::max);
    let growth_constant = growth_ratios.iter().cloned().fold(1.0, f64::max);
    VariantResult {
        variant,
        constant: containment_constant.max(growth_constant),
        containment_constant,
        growth_constant,
        containment_ratios,
        growth_ratios,
    }
}

/// Smallest constant passing both conditions (loose variant).
pub fn family_constant(space: &MetricMeasureSpace, family: &SetFamily) -> Result<f64> {
    let idx = FamilyIndex::new(space, family)?;
    Ok(analyze_variant(&idx, Variant::Loose).constant)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossCheck {
    /// Smallest `C` at which the strict variant passes, growth included.
    pub strict_constant: f64,
    pub loose_constant: f64,
    /// Loose passes at `strict_constant^2`; vacuous when strict never passes.
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyReport {
    pub tested_constant: f64,
    pub variant: Variant,
    pub pass: bool,
    pub containment_failures: Vec<SetWitness>,
    pub growth_failures: Vec<SetWitness>,
    pub family_constant: f64,
    pub crosscheck: CrossCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_set_doubling: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
}

/// Checks both doubling-family conditions at `c` and runs the variant
/// cross-check.
pub fn verify_doubling_family(
    space: &MetricMeasureSpace,
    family: &SetFamily,
    c: f64,
    variant: Variant,
) -> Result<FamilyReport> {
    if !(c >= 1.0) {
        return Err(CzError::input(format!("C = {c} must be at least 1")));
    }
    let idx = FamilyIndex::new(space, family)?;
    let loose = analyze_variant(&idx, Variant::Loose);
    let strict = analyze_variant(&idx, Variant::Strict);
    let chosen = match variant {
        Variant::Loose => &loose,
        Variant::Strict => &strict,
    };
    let (mut cf, gf) = chosen.failures(c);
    for w in cf.iter_mut() {
        w.container = idx.containment_ratio(w.set, variant).1;
    }
    let s = strict.constant;
    let crosscheck = CrossCheck {
        strict_constant: s,
        loose_constant: loose.constant,
        holds: !s.is_finite() || loose.passes(s * s),
    };
    Ok(FamilyReport {
        tested_constant: c,
        variant,
        pass: cf.is_empty() && gf.is_empty(),
        containment_failures: cf,
        growth_failures: gf,
        family_constant: chosen.constant,
        crosscheck,
        per_set_doubling: None,
        density: None,
    })
}

/// Doubling-set constants of every member.
pub fn per_set_doubling(space: &MetricMeasureSpace, family: &SetFamily) -> Result<Vec<f64>> {
    family.sets().par_iter().map(|q| doubling_set_constant(space, q)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Density {
    pub dense: bool,
    /// `max_x min { diam Q : x ∈ Q ∈ A }`; `None` when a point is uncovered.
    pub finest_scale: Option<f64>,
    pub uncovered: Vec<PointId>,
}

/// Finite density: every point lies in a family set of diameter 0.
pub fn is_dense(space: &MetricMeasureSpace, family: &SetFamily) -> Density {
    let diams: Vec<f64> = family.sets().par_iter().map(|s| space.diam(s)).collect();
    let mut best = vec![f64::INFINITY; space.n()];
    for (s, &d) in family.sets().iter().zip(&diams) {
        for x in s.iter() {
            if x < best.len() {
                best[x] = best[x].min(d);
            }
        }
    }
    let uncovered: Vec<PointId> = (0..space.n()).filter(|&x| best[x].is_infinite()).collect();
    let finest_scale = uncovered.is_empty().then(|| best.iter().cloned().fold(0.0, f64::max));
    Density { dense: finest_scale == Some(0.0), finest_scale, uncovered }
}
