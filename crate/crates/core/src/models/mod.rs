//! Model spaces: grids, regular trees, Heisenberg, BS(1,2) and the solvable
//! product model.

pub mod group;
pub mod solvable;

use serde::{Deserialize, Serialize};

pub use group::{GeneratorSet, GroupLaw, GroupModel};
pub use solvable::{SolvableProductModel, SolvableSpec};

use crate::error::{CzError, Result};
use crate::mms::MetricMeasureSpace;

/// Point budget for graph-backed models.
pub const MAX_GRAPH_POINTS: usize = 1_000_000;

fn default_generators() -> GeneratorSet {
    GeneratorSet::Standard
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Box `{0..side}^dim` in `Z^dim` with the L1 graph metric.
    Grid { dim: usize, side: usize },
    /// Ball of radius `depth` in the `degree`-regular tree.
    Tree { degree: usize, depth: usize },
    Heisenberg {
        radius: usize,
        #[serde(default = "default_generators")]
        generators: GeneratorSet,
    },
    Bs12 { radius: usize },
    Solvable(SolvableSpec),
}

pub struct GeneratedModel {
    pub spec: ModelSpec,
    pub space: MetricMeasureSpace,
    pub group: Option<GroupModel>,
    pub solvable: Option<SolvableProductModel>,
}

fn grid_region(dim: usize, side: usize) -> Result<Vec<Vec<i64>>> {
    if dim == 0 || side == 0 {
        return Err(CzError::input("grid needs dim >= 1 and side >= 1"));
    }
    let n = side
        .checked_pow(dim as u32)
        .filter(|&n| n <= MAX_GRAPH_POINTS)
        .ok_or_else(|| CzError::input(format!("grid({dim}, {side}) exceeds {MAX_GRAPH_POINTS} points")))?;
    let o = (side / 2) as i64;
    Ok((0..n)
        .map(|mut id| {
            let mut c = vec![0i64; dim];
            for k in (0..dim).rev() {
                c[k] = (id % side) as i64 - o;
                id /= side;
            }
            c
        })
        .collect())
}

fn tree_size(degree: usize, depth: usize) -> Option<usize> {
    let mut total = 1usize;
    let mut layer = 1usize;
    for d in 0..depth {
        layer = layer.checked_mul(if d == 0 { degree } else { degree - 1 })?;
        total = total.checked_add(layer)?;
    }
    Some(total)
}

pub fn generate(spec: &ModelSpec) -> Result<GeneratedModel> {
    let (space, group, solvable) = match spec {
        ModelSpec::Grid { dim, side } => {
            let law = GroupLaw::Abelian { dim: *dim };
            let gens = group::standard_generators(&law, GeneratorSet::Standard)?;
            let g = GroupModel::region(law, gens, grid_region(*dim, *side)?)?;
            (g.cayley_space()?, Some(g), None)
        }
        ModelSpec::Tree { degree, depth } => {
            if *degree < 2 {
                return Err(CzError::input("tree degree must be at least 2"));
            }
            if tree_size(*degree, *depth).is_none_or(|n| n > MAX_GRAPH_POINTS) {
                return Err(CzError::input(format!("tree({degree}, {depth}) exceeds {MAX_GRAPH_POINTS} points")));
            }
            let law = GroupLaw::FreeInvolutions { k: *degree };
            let gens = group::standard_generators(&law, GeneratorSet::Standard)?;
            let g = GroupModel::ball(law, gens, *depth, MAX_GRAPH_POINTS)?;
            (g.cayley_space()?, Some(g), None)
        }
        ModelSpec::Heisenberg { radius, generators } => {
            let law = GroupLaw::Heisenberg;
            let gens = group::standard_generators(&law, *generators)?;
            let g = GroupModel::ball(law, gens, *radius, MAX_GRAPH_POINTS)?;
            (g.cayley_space()?, Some(g), None)
        }
        ModelSpec::Bs12 { radius } => {
            let law = GroupLaw::Bs12;
            let gens = group::standard_generators(&law, GeneratorSet::Standard)?;
            let g = GroupModel::ball(law, gens, *radius, MAX_GRAPH_POINTS)?;
            (g.cayley_space()?, Some(g), None)
        }
        ModelSpec::Solvable(s) => {
            let m = SolvableProductModel::new(s.clone())?;
            (m.space()?, None, Some(m))
        }
    };
    Ok(GeneratedModel { spec: spec.clone(), space, group, solvable })
}

/// Sidecar metadata written next to a generated space.
pub fn sidecar(model: &GeneratedModel) -> serde_json::Value {
    let mut v = serde_json::json!({ "spec": model.spec, "n": model.space.n() });
    if let Some(g) = &model.group {
        v["group"] = serde_json::json!({
            "law": g.law,
            "generators": g.generators,
            "origin": g.origin,
            "max_word_length": g.max_word_length(),
        });
    }
    if let Some(s) = &model.solvable {
        v["solvable"] = serde_json::json!({
            "t_count": s.t_count(),
            "lattice_len": s.lattice_len(),
            "cell_weight": s.cell_weight(),
        });
    }
    v
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallDoubling {
    pub r: u32,
    pub ball: usize,
    pub double: usize,
    pub ratio: f64,
}

/// `|B(2r)| / |B(r)|` for closed word balls with `2r` inside the region.
pub fn ball_doubling_table(g: &GroupModel, radii: &[u32]) -> Vec<BallDoubling> {
    radii
        .iter()
        .filter(|&&r| 2 * r <= g.max_word_length())
        .map(|&r| {
            let ball = g.closed_ball(r as f64).len();
            let double = g.closed_ball(2.0 * r as f64).len();
            BallDoubling { r, ball, double, ratio: double as f64 / ball as f64 }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Polynomial,
    Exponential,
    Undetermined,
}

/// Classifies growth from `log2` of consecutive doubling ratios at radii
/// `1, 2, 3, ...`: increments that do not decay indicate exponential growth.
pub fn classify_growth(g: &GroupModel) -> Growth {
    let radii: Vec<u32> = (1..=g.max_word_length() / 2).collect();
    let e: Vec<f64> = ball_doubling_table(g, &radii).iter().map(|b| b.ratio.log2()).collect();
    if e.len() < 3 {
        return Growth::Undetermined;
    }
    let inc: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).collect();
    let (first, last) = (inc[0], *inc.last().unwrap());
    if last > 0.5 && last >= 0.8 * first {
        Growth::Exponential
    } else {
        Growth::Polynomial
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: usize,
    pub axioms_pass: bool,
    pub doubling: Vec<BallDoubling>,
    pub growth: Growth,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelReport {
    Group(GroupReport),
    Solvable(solvable::SolvableReport),
}

impl ModelReport {
    pub fn passed(&self) -> bool {
        match self {
            ModelReport::Group(g) => g.axioms_pass,
            ModelReport::Solvable(s) => s.pass,
        }
    }
}

pub fn model_invariant_report(model: &GeneratedModel, seed: u64) -> Result<ModelReport> {
    if let Some(g) = &model.group {
        let radii: Vec<u32> = [1, 2, 3, 4, 5, 6, 8, 10, 16].into_iter().collect();
        return Ok(ModelReport::Group(GroupReport {
            n: g.len(),
            axioms_pass: g.check_axioms(200, seed).passed(),
            doubling: ball_doubling_table(g, &radii),
            growth: classify_growth(g),
        }));
    }
    if let Some(s) = &model.solvable {
        return Ok(ModelReport::Solvable(s.invariant_report(100_000, seed)));
    }
    Err(CzError::input("model has no invariants to report"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_models() {
        let p4 = generate(&ModelSpec::Grid { dim: 1, side: 4 }).unwrap();
        assert_eq!(p4.space.n(), 4);
        assert_eq!(p4.space.dist(0, 3), 3.0);
        let t = generate(&ModelSpec::Tree { degree: 3, depth: 2 }).unwrap();
        assert_eq!(t.space.n(), 10);
    }

    #[test]
    fn grid_doubling_and_tree_growth() {
        let g = generate(&ModelSpec::Grid { dim: 2, side: 32 }).unwrap();
        let table = ball_doubling_table(g.group.as_ref().unwrap(), &[2, 4, 8]);
        assert_eq!(table.len(), 3);
        assert!(table.iter().all(|b| b.ratio <= 4.1), "{table:?}");
        assert_eq!(classify_growth(g.group.as_ref().unwrap()), Growth::Polynomial);

        let t = generate(&ModelSpec::Tree { degree: 3, depth: 10 }).unwrap();
        assert_eq!(classify_growth(t.group.as_ref().unwrap()), Growth::Exponential);
    }

    #[test]
    fn budget() {
        assert!(generate(&ModelSpec::Grid { dim: 3, side: 200 }).is_err());
        assert!(generate(&ModelSpec::Tree { degree: 5, depth: 12 }).is_err());
    }

    #[test]
    fn spec_json() {
        let s: ModelSpec = serde_json::from_str(r#"{"model":"heisenberg","radius":3}"#).unwrap();
        assert_eq!(s, ModelSpec::Heisenberg { radius: 3, generators: GeneratorSet::Standard });
    }
}
