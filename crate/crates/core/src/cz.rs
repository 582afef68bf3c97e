//! Stopping-time Calderón–Zygmund decomposition for a doubling family.
//!
//! Rounds pick the largest-measure set `R` with `avg_R |f| > λ` that is
//! disjoint from earlier picks (ties to the lowest family index). Each pick
//! gets the smallest-measure family set `Q ⊇ tilde(R)` with
//! `μ(Q) <= C μ(R)`, where `C` is the family constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::family::{analyze_variant, FamilyIndex, SetFamily, Variant};
use crate::function::{Function, SparseFunction};
use crate::mms::{MetricMeasureSpace, PointId, PointSet};
use crate::{le_slack, IDENTITY_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    LargeScale,
    SmallScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    /// Family index of `R_i`.
    pub r: usize,
    /// `v_i`, the largest eligible measure this round.
    pub v: f64,
    /// Family index of `Q_i`.
    pub q: usize,
    pub tilde: PointSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub rounds: Vec<Round>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub r_set: PointSet,
    pub q_set: PointSet,
    pub u_set: PointSet,
    pub x: PointId,
    pub radius: f64,
    pub f: SparseFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub lambda: f64,
    /// Constant the decomposition was built with.
    pub constant: f64,
    pub mode: Mode,
    pub f: Function,
    pub g: Function,
    pub items: Vec<Item>,
    #[serde(default)]
    pub selection: Option<Selection>,
}

impl Decomposition {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("decomposition serialisation")
    }

    pub fn from_json(v: serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v)?)
    }

    /// `E = ∪ U_i`.
    pub fn exceptional_set(&self) -> PointSet {
        self.items.iter().fold(PointSet::empty(), |e, it| e.union(&it.u_set))
    }
}

/// Family, its index and the constant used for range checks and `r_i`.
pub struct CzEngine<'a> {
    pub index: FamilyIndex<'a>,
    pub constant: f64,
}

impl<'a> CzEngine<'a> {
    /// Uses the measured loose family constant.
    pub fn new(space: &'a MetricMeasureSpace, family: &'a SetFamily) -> Result<Self> {
        let index = FamilyIndex::new(space, family)?;
        let constant = analyze_variant(&index, Variant::Loose).constant;
        if !constant.is_finite() {
            return Err(CzError::input("family fails the growth condition at every C"));
        }
        Ok(CzEngine { index, constant })
    }

    pub fn with_constant(space: &'a MetricMeasureSpace, family: &'a SetFamily, constant: f64) -> Result<Self> {
        if !(constant >= 1.0 && constant.is_finite()) {
            return Err(CzError::input(format!("C = {constant} must be finite and at least 1")));
        }
        Ok(CzEngine { index: FamilyIndex::new(space, family)?, constant })
    }

    fn space(&self) -> &'a MetricMeasureSpace {
        self.index.space
    }

    /// Lower bound `C ||f||_1 / μ(M)` for admissible λ.
    pub fn lambda_bound(&self, f: &Function) -> f64 {
        self.constant * f.l1(self.space()) / self.space().total_measure()
    }

    pub fn check_lambda(&self, f: &Function, lambda: f64) -> Result<()> {
        f.check(self.space())?;
        let l1 = f.l1(self.space());
        let total = self.space().total_measure();
        let bound = self.constant * l1 / total;
        if !(lambda > bound) || !(lambda > 0.0) || !lambda.is_finite() {
            return Err(CzError::LambdaRange { lambda, bound, constant: self.constant, l1, total });
        }
        Ok(())
    }

    pub fn select(&self, f: &Function, lambda: f64) -> Result<Selection> {
        self.check_lambda(f, lambda)?;
        let space = self.space();
        let fam = self.index.family;
        let mut eligible: Vec<usize> = (0..fam.len())
            .into_par_iter()
            .filter(|&r| f.abs_integral(space, fam.set(r)) > lambda * self.index.measure(r))
            .collect();
        eligible.sort_by(|&a, &b| self.index.measure(b).total_cmp(&self.index.measure(a)).then(a.cmp(&b)));
        let mut taken = vec![false; space.n()];
        let mut rounds = Vec::new();
        for r in eligible {
            let set = fam.set(r);
            if set.iter().any(|x| taken[x]) {
                continue;
            }
            for x in set.iter() {
                taken[x] = true;
            }
            let mr = self.index.measure(r);
            let tilde = self.index.tilde(r, Variant::Loose);
            let q = self
                .index
                .smallest_container(&tilde)
                .filter(|&q| le_slack(self.index.measure(q), self.constant * mr))
                .ok_or(CzError::NotDoubling { set: r, constant: self.constant })?;
            rounds.push(Round { r, v: mr, q, tilde });
        }
        Ok(Selection { rounds })
    }

    pub fn decompose(&self, f: &Function, lambda: f64) -> Result<Decomposition> {
        let sel = self.select(f, lambda)?;
        let space = self.space();
        let fam = self.index.family;
        let mut covered = vec![false; space.n()];
        let mut items = Vec::with_capacity(sel.rounds.len());
        for round in &sel.rounds {
            let u: Vec<PointId> = round.tilde.iter().filter(|&x| !covered[x]).collect();
            for &x in &u {
                covered[x] = true;
            }
            let u_set = PointSet::new(u);
            let r_set = fam.set(round.r).clone();
            let q_set = fam.set(round.q).clone();
            let mean = u_set.iter().map(|x| f.values[x] * space.weight(x)).sum::<f64>() / self.index.measure(round.r);
            let mut vals = std::collections::BTreeMap::new();
            for x in u_set.iter() {
                vals.insert(x, f.values[x]);
            }
            for x in r_set.iter() {
                *vals.entry(x).or_insert(0.0) -= mean;
            }
            let (points, values) = vals.into_iter().unzip();
            let x = q_set.first().expect("nonempty Q");
            let d = space.diam(&q_set);
            let radius = if d > 0.0 { d } else { space.separation(x) } / self.constant;
            items.push(Item { r_set, q_set, u_set, x, radius, f: SparseFunction { points, values } });
        }
        let mut g = f.clone();
        for it in &items {
            for (x, v) in it.f.iter() {
                g.values[x] -= v;
            }
        }
        Ok(Decomposition {
            lambda,
            constant: self.constant,
            mode: Mode::Full,
            f: f.clone(),
            g,
            items,
            selection: Some(sel),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Check {
    fn flag(pass: bool, witness: Option<usize>, value: Option<f64>) -> Self {
        Check { pass, witness, value }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: Mode,
    /// Constant every measured constant is compared against.
    pub bound: f64,
    pub support: Check,
    pub mean_zero: Check,
    pub reconstruction: Check,
    /// `max_i max_{y ∈ Q_i} d(x_i, y) / r_i`; the ball bullet holds with
    /// any constant above it (closed ball at equality).
    pub c_support: f64,
    pub ball: Check,
    /// `Σ μ(Q_i*) λ / ||f||_1`.
    pub c_measure: f64,
    pub measure: Check,
    /// `Σ ||f_i||_1 / ||f||_1`.
    pub c_l1: f64,
    pub l1: Check,
    /// `||g||_∞ / λ`, or the worst unit-ball average ratio in large-scale mode.
    pub c_good: f64,
    pub good: Check,
    /// `||g||_2^2 / (λ ||f||_1)`.
    pub c_l2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_over_half: Option<Check>,
    /// `max_x ∫_{B(x,1)} |f| / (λ μ(B(x,1)))` in small-scale mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_input: Option<f64>,
    pub max_constant: f64,
    pub pass: bool,
}

/// `max_x ∫_{B(x,1)} |h| / (λ μ(B(x,1)))`.
pub fn unit_ball_ratio(space: &MetricMeasureSpace, h: &Function, lambda: f64) -> Result<(f64, PointId)> {
    let ratios: Vec<Result<f64>> = (0..space.n())
        .into_par_iter()
        .map(|x| {
            let b = space.ball(x, 1.0)?;
            Ok(h.abs_integral(space, &b) / (lambda * space.measure(&b)))
        })
        .collect();
    let mut best = (0.0, 0);
    for (x, r) in ratios.into_iter().enumerate() {
        let r = r?;
        if r > best.0 {
            best = (r, x);
        }
    }
    Ok(best)
}

/// Recomputes every bullet. `bound` defaults to `max(C^2, 2)` with `C` the
/// decomposition's constant.
pub fn verify_decomposition(
    space: &MetricMeasureSpace,
    dec: &Decomposition,
    mode: Mode,
    bound: Option<f64>,
) -> Result<VerificationReport> {
    dec.f.check(space)?;
    dec.g.check(space)?;
    let bound = bound.unwrap_or((dec.constant * dec.constant).max(2.0));
    let lambda = dec.lambda;
    let norm = dec.f.l1(space);
    let ratio = |num: f64| if num == 0.0 { 0.0 } else { num / norm };

    let mut support = Check::flag(true, None, None);
    let mut mean_zero = Check::flag(true, None, None);
    let mut c_support = 0.0f64;
    let mut ball_witness = None;
    let mut q_star = 0.0;
    let mut l1_sum = 0.0;
    let per_item: Vec<Result<(bool, f64, f64, f64, f64)>> = dec
        .items
        .par_iter()
        .map(|it| {
            let inside = it.f.iter().all(|(x, v)| v == 0.0 || it.q_set.contains(x));
            let integral = it.f.integral(space);
            let reach = it.q_set.iter().map(|y| space.dist(it.x, y)).fold(0.0, f64::max);
            let cs = if reach == 0.0 { 0.0 } else { reach / it.radius };
            let star = space.measure(&space.dilate(&it.q_set, it.radius)?);
            Ok((inside, integral, cs, star, it.f.l1(space)))
        })
        .collect();
    let mean_tol = IDENTITY_TOL * norm;
    for (i, r) in per_item.into_iter().enumerate() {
        let (inside, integral, cs, star, l1) = r?;
        if !inside && support.pass {
            support = Check::flag(false, Some(i), None);
        }
        if !(integral.abs() <= mean_tol) && mean_zero.pass {
            mean_zero = Check::flag(false, Some(i), Some(integral));
        }
        if !(cs <= c_support) {
            c_support = cs;
            ball_witness = Some(i);
        }
        q_star += star;
        l1_sum += l1;
    }
    let c_measure = if q_star == 0.0 { 0.0 } else if norm == 0.0 { f64::INFINITY } else { q_star * lambda / norm };
    let c_l1 = ratio(l1_sum);

    // reconstruction f = g + Σ f_i
    let mut recon = dec.g.values.clone();
    for it in &dec.items {
        for (x, v) in it.f.iter() {
            recon[x] += v;
        }
    }
    let scale = dec.f.sup();
    let (worst, at) = recon
        .iter()
        .zip(&dec.f.values)
        .enumerate()
        .map(|(x, (a, b))| ((a - b).abs(), x))
        .fold((0.0, 0), |m, p| if p.0 > m.0 { p } else { m });
    let reconstruction = Check::flag(worst <= IDENTITY_TOL * scale, (worst > IDENTITY_TOL * scale).then_some(at), Some(worst));

    let (c_good, good_at) = match mode {
        Mode::LargeScale => unit_ball_ratio(space, &dec.g, lambda)?,
        _ => {
            let (m, x) = dec
                .g
                .values
                .iter()
                .enumerate()
                .fold((0.0, 0), |m, (x, v)| if v.abs() > m.0 { (v.abs(), x) } else { m });
            (m / lambda, x)
        }
    };
    let c_l2 = ratio(dec.g.l2_squared(space) / lambda);
    let radius_over_half = (mode == Mode::LargeScale).then(|| {
        match dec.items.iter().position(|it| !(it.radius > 0.5)) {
            Some(i) => Check::flag(false, Some(i), Some(dec.items[i].radius)),
            None => Check::flag(true, None, None),
        }
    });
    let c_input = match mode {
        Mode::SmallScale => Some(unit_ball_ratio(space, &dec.f, lambda)?.0),
        _ => None,
    };

    let cmp = |c: f64, w: Option<usize>| {
        let pass = le_slack(c, bound);
        Check::flag(pass, if pass { None } else { w }, Some(c))
    };
    let ball = cmp(c_support, ball_witness);
    let measure = cmp(c_measure, None);
    let l1 = cmp(c_l1, None);
    let good = cmp(c_good, Some(good_at));
    let max_constant = c_support.max(c_measure).max(c_l1).max(c_good);
    let pass = support.pass
        && mean_zero.pass
        && reconstruction.pass
        && ball.pass
        && measure.pass
        && l1.pass
        && good.pass
        && radius_over_half.as_ref().is_none_or(|c| c.pass);
    Ok(VerificationReport {
        mode,
        bound,
        support,
        mean_zero,
        reconstruction,
        c_support,
        ball,
        c_measure,
        measure,
        c_l1,
        l1,
        c_good,
        good,
        c_l2,
        radius_over_half,
        c_input,
        max_constant,
        pass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Group {
    pub center: PointId,
    pub members: Vec<usize>,
    pub mass: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Coarsened {
    pub decomposition: Decomposition,
    pub centers: Vec<PointId>,
    pub groups: Vec<Group>,
    /// Unit-ball bound for `g̃` assembled from the input's good constant and
    /// the absorbed groups.
    pub composite_bound: f64,
}

/// Greedy maximal disjoint collection of balls `B(x, radius)`, ascending ids.
pub fn disjoint_ball_centers(space: &MetricMeasureSpace, radius: f64) -> Result<Vec<PointId>> {
    let mut covered = vec![false; space.n()];
    let mut centers = Vec::new();
    for x in 0..space.n() {
        let b = space.ball(x, radius)?;
        if b.iter().all(|y| !covered[y]) {
            for y in b.iter() {
                covered[y] = true;
            }
            centers.push(x);
        }
    }
    Ok(centers)
}

/// Merges pieces with `r_i <= 1/2` around a maximal family of disjoint
/// `C_cz/2`-balls; heavy groups become radius-1 pieces, light ones move into
/// the good part.
pub fn coarsen_decomposition(space: &MetricMeasureSpace, dec: &Decomposition, c_cz: f64) -> Result<Coarsened> {
    if !(c_cz >= 2.0) {
        return Err(CzError::input(format!("C_cz = {c_cz} must be at least 2")));
    }
    let lambda = dec.lambda;
    let half = c_cz / 2.0;
    let centers = disjoint_ball_centers(space, half)?;
    let center_balls: Vec<PointSet> = centers.par_iter().map(|&c| space.ball(c, half)).collect::<Result<_>>()?;

    let mut out_items = Vec::new();
    let mut by_center: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
    for (i, it) in dec.items.iter().enumerate() {
        if it.radius > 0.5 {
            out_items.push(it.clone());
            continue;
        }
        let bi = space.ball(it.x, half)?;
        let a = center_balls
            .iter()
            .position(|b| b.intersects(&bi))
            .expect("maximal disjoint collection meets every ball of the same radius");
        by_center[a].push(i);
    }

    let mut g = dec.g.clone();
    let mut groups = Vec::new();
    let mut absorbed_centers = Vec::new();
    for (a, members) in by_center.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let h = SparseFunction::sum(members.iter().map(|&i| &dec.items[i].f));
        let mass = h.l1(space);
        let center = centers[a];
        let big = space.measure(&space.ball(center, c_cz)?);
        let kept = mass > c_cz * lambda * big;
        if kept {
            let mut e = PointSet::empty();
            let mut r = PointSet::empty();
            let mut u = PointSet::empty();
            for &i in &members {
                e = e.union(&dec.items[i].q_set);
                r = r.union(&dec.items[i].r_set);
                u = u.union(&dec.items[i].u_set);
            }
            out_items.push(Item { r_set: r, q_set: e, u_set: u, x: center, radius: 1.0, f: h });
        } else {
            for (x, v) in h.iter() {
                g.values[x] += v;
            }
            let mut e = PointSet::empty();
            for &i in &members {
                e = e.union(&dec.items[i].q_set);
            }
            absorbed_centers.push((e, big));
        }
        groups.push(Group { center, members, mass, kept });
    }

    // C_good_in + C_cz * max_x |I_x| max_{β ∈ I_x} μ(B(x_β, C_cz)) / μ(B(x,1))
    let c_good_in = unit_ball_ratio(space, &dec.g, lambda)?.0;
    let extra: Vec<Result<f64>> = (0..space.n())
        .into_par_iter()
        .map(|x| {
            let b = space.ball(x, 1.0)?;
            let hits: Vec<f64> = absorbed_centers.iter().filter(|(e, _)| e.intersects(&b)).map(|(_, m)| *m).collect();
            let worst = hits.iter().cloned().fold(0.0, f64::max);
            Ok(hits.len() as f64 * worst / space.measure(&b))
        })
        .collect();
    let mut extra_max = 0.0f64;
    for e in extra {
        extra_max = extra_max.max(e?);
    }
    let composite_bound = c_good_in + c_cz * extra_max;

    Ok(Coarsened {
        decomposition: Decomposition {
            lambda,
            constant: dec.constant.max(c_cz),
            mode: Mode::LargeScale,
            f: dec.f.clone(),
            g,
            items: out_items,
            selection: None,
        },
        centers,
        groups,
        composite_bound,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanRow {
    pub function: usize,
    pub lambda: f64,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pieces: usize,
    pub c_support: f64,
    pub c_measure: f64,
    pub c_l1: f64,
    pub c_good: f64,
    pub max_constant: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanTable {
    pub family_constant: f64,
    pub rows: Vec<ScanRow>,
    /// Largest measured constant over rows that ran.
    pub max_constant: f64,
}

/// Runs decompose + verify over every `(f, λ)` pair; out-of-range pairs are
/// marked skipped.
pub fn constant_scan(
    space: &MetricMeasureSpace,
    family: &SetFamily,
    fs: &[Function],
    lambdas: &[f64],
) -> Result<ScanTable> {
    let engine = CzEngine::new(space, family)?;
    let jobs: Vec<(usize, f64)> = (0..fs.len()).flat_map(|i| lambdas.iter().map(move |&l| (i, l))).collect();
    let rows: Vec<ScanRow> = jobs
        .par_iter()
        .map(|&(i, lambda)| {
            let skip = |error: Option<String>| ScanRow {
                function: i,
                lambda,
                skipped: true,
                error,
                pieces: 0,
                c_support: 0.0,
                c_measure: 0.0,
                c_l1: 0.0,
                c_good: 0.0,
                max_constant: 0.0,
                pass: false,
            };
            let dec = match engine.decompose(&fs[i], lambda) {
                Ok(d) => d,
                Err(CzError::LambdaRange { .. }) => return skip(None),
                Err(e) => return skip(Some(e.to_string())),
            };
            match verify_decomposition(space, &dec, Mode::Full, None) {
                Ok(r) => ScanRow {
                    function: i,
                    lambda,
                    skipped: false,
                    error: None,
                    pieces: dec.items.len(),
                    c_support: r.c_support,
                    c_measure: r.c_measure,
                    c_l1: r.c_l1,
                    c_good: r.c_good,
                    max_constant: r.max_constant,
                    pass: r.pass,
                },
                Err(e) => skip(Some(e.to_string())),
            }
        })
        .collect();
    let max_constant = rows.iter().filter(|r| !r.skipped).map(|r| r.max_constant).fold(0.0, f64::max);
    Ok(ScanTable { family_constant: engine.constant, rows, max_constant })
}
