//! Finitely generated groups enumerated inside a word-metric region.
//!
//! Cayley edges join `x` and `s·x` for each generator `s`, which makes the
//! word metric right-invariant: `d(xg, yg) = d(x, y)`. With this convention
//! the product set `B(r)A` coincides with the metric dilation of `A`.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};
use crate::mms::{MetricKind, MetricMeasureSpace, PointId, PointSet};

/// Group law used by a [`GroupModel`]. Elements are canonical normal forms
/// stored as integer vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum GroupLaw {
    /// `Z^dim` with the standard basis.
    Abelian { dim: usize },
    /// Free product of `k` copies of `Z/2`; its Cayley graph is the
    /// `k`-regular tree. Elements are reduced words over `0..k`.
    FreeInvolutions { k: usize },
    /// Discrete Heisenberg group, `(x,y,z)(x',y',z') = (x+x', y+y', z+z'+xy')`.
    Heisenberg,
    /// Baumslag–Solitar `BS(1,2) = <a, t | t a t^-1 = a^2>` realised as the
    /// affine maps `x -> 2^k x + m / 2^e`, stored as `[k, m, e]` with `m` odd
    /// or `e = 0`. `a = [0,1,0]` and `t = [1,0,0]`.
    Bs12,
}

pub type Elem = Vec<i64>;

fn normalize_dyadic(mut m: i128, mut e: i64) -> (i64, i64) {
    if m == 0 {
        return (0, 0);
    }
    if e < 0 {
        m <<= -e;
        e = 0;
    }
    while e > 0 && m % 2 == 0 {
        m /= 2;
        e -= 1;
    }
    (i64::try_from(m).expect("BS(1,2) numerator overflow"), e)
}

impl GroupLaw {
    pub fn identity(&self) -> Elem {
        match self {
            GroupLaw::Abelian { dim } => vec![0; *dim],
            GroupLaw::FreeInvolutions { .. } => Vec::new(),
            GroupLaw::Heisenberg | GroupLaw::Bs12 => vec![0; 3],
        }
    }

    pub fn mul(&self, x: &[i64], y: &[i64]) -> Elem {
        match self {
            GroupLaw::Abelian { .. } => x.iter().zip(y).map(|(a, b)| a + b).collect(),
            GroupLaw::FreeInvolutions { .. } => {
                let mut w = x.to_vec();
                let mut j = 0;
                while j < y.len() && w.last() == Some(&y[j]) {
                    w.pop();
                    j += 1;
                }
                w.extend_from_slice(&y[j..]);
                w
            }
            GroupLaw::Heisenberg => vec![x[0] + y[0], x[1] + y[1], x[2] + y[2] + x[0] * y[1]],
            GroupLaw::Bs12 => {
                // (k1,q1)(k2,q2) = (k1+k2, 2^k1 q2 + q1)
                let (k1, m1, e1) = (x[0], x[1] as i128, x[2]);
                let (k2, m2, e2) = (y[0], y[1] as i128, y[2]);
                // 2^k1 * m2 / 2^e2 = m2 / 2^(e2-k1)
                let ea = e2 - k1;
                let e = ea.max(e1);
                let sa = (e - ea) as u32;
                let sb = (e - e1) as u32;
                let num = (m2 << sa) + (m1 << sb);
                let (m, e) = normalize_dyadic(num, e);
                vec![k1 + k2, m, e]
            }
        }
    }

    pub fn inv(&self, x: &[i64]) -> Elem {
        match self {
            GroupLaw::Abelian { .. } => x.iter().map(|a| -a).collect(),
            GroupLaw::FreeInvolutions { .. } => x.iter().rev().copied().collect(),
            GroupLaw::Heisenberg => vec![-x[0], -x[1], -x[2] + x[0] * x[1]],
            GroupLaw::Bs12 => {
                // (k,q)^-1 = (-k, -2^-k q)
                let (k, m, e) = (x[0], x[1] as i128, x[2]);
                let (m, e) = normalize_dyadic(-m, e + k);
                vec![-k, m, e]
            }
        }
    }
}

/// Named generating sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorSet {
    Standard,
    /// Heisenberg only: adds `ab` and its inverse to `{a, b}`.
    Extended,
}

pub fn standard_generators(law: &GroupLaw, set: GeneratorSet) -> Result<Vec<Elem>> {
    let with_inverses = |gens: Vec<Elem>| -> Vec<Elem> {
        let mut out = Vec::new();
        for g in gens {
            let gi = law.inv(&g);
            out.push(g.clone());
            if gi != g {
                out.push(gi);
            }
        }
        out
    };
    Ok(match (law, set) {
        (GroupLaw::Abelian { dim }, GeneratorSet::Standard) => with_inverses(
            (0..*dim)
                .map(|i| {
                    let mut e = vec![0; *dim];
                    e[i] = 1;
                    e
                })
                .collect(),
        ),
        (GroupLaw::FreeInvolutions { k }, GeneratorSet::Standard) => (0..*k as i64).map(|i| vec![i]).collect(),
        (GroupLaw::Heisenberg, GeneratorSet::Standard) => with_inverses(vec![vec![1, 0, 0], vec![0, 1, 0]]),
        (GroupLaw::Heisenberg, GeneratorSet::Extended) => {
            with_inverses(vec![vec![1, 0, 0], vec![0, 1, 0], vec![1, 1, 1]])
        }
        (GroupLaw::Bs12, GeneratorSet::Standard) => with_inverses(vec![vec![0, 1, 0], vec![1, 0, 0]]),
        (law, set) => return Err(CzError::input(format!("generator set {set:?} not available for {law:?}"))),
    })
}

/// A group enumerated on a finite region, with a partial multiplication
/// oracle that reports when products leave the region.
#[derive(Clone, Debug)]
pub struct GroupModel {
    pub law: GroupLaw,
    pub generators: Vec<Elem>,
    elements: Vec<Elem>,
    index: HashMap<Elem, usize>,
    word_length: Vec<u32>,
    /// Generator index `g` and element `x` give `left[x][g] = id(g·x)`.
    left: Vec<Vec<Option<u32>>>,
    pub origin: PointId,
}

impl GroupModel {
    /// Word-metric ball of radius `radius` around the identity (closed).
    pub fn ball(law: GroupLaw, generators: Vec<Elem>, radius: usize, max_elements: usize) -> Result<Self> {
        let id = law.identity();
        let mut elements = vec![id.clone()];
        let mut word_length = vec![0u32];
        let mut index = HashMap::from([(id, 0usize)]);
        let mut queue = VecDeque::from([0usize]);
        while let Some(x) = queue.pop_front() {
            if word_length[x] as usize == radius {
                continue;
            }
            for g in &generators {
                let y = law.mul(g, &elements[x]);
                if !index.contains_key(&y) {
                    if elements.len() >= max_elements {
                        return Err(CzError::input(format!(
                            "group ball of radius {radius} exceeds the budget of {max_elements} elements"
                        )));
                    }
                    index.insert(y.clone(), elements.len());
                    word_length.push(word_length[x] + 1);
                    queue.push_back(elements.len());
                    elements.push(y);
                }
            }
        }
        Ok(Self::finish(law, generators, elements, index, word_length))
    }

    /// An explicit region, e.g. a box in `Z^d`. The region must contain the
    /// identity; word lengths are BFS distances inside the region, which is
    /// exact for convex boxes in `Z^d`.
    pub fn region(law: GroupLaw, generators: Vec<Elem>, region: Vec<Elem>) -> Result<Self> {
        let index: HashMap<Elem, usize> = region.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        if index.len() != region.len() {
            return Err(CzError::input("region contains duplicate elements"));
        }
        let origin = *index.get(&law.identity()).ok_or_else(|| CzError::input("region must contain the identity"))?;
        let mut word_length = vec![u32::MAX; region.len()];
        word_length[origin] = 0;
        let mut queue = VecDeque::from([origin]);
        while let Some(x) = queue.pop_front() {
            for g in &generators {
                if let Some(&y) = index.get(&law.mul(g, &region[x])) {
                    if word_length[y] == u32::MAX {
                        word_length[y] = word_length[x] + 1;
                        queue.push_back(y);
                    }
                }
            }
        }
        if word_length.contains(&u32::MAX) {
            return Err(CzError::input("region is not connected in the Cayley graph"));
        }
        let mut m = Self::finish(law, generators, region, index, word_length);
        m.origin = origin;
        Ok(m)
    }

    fn finish(
        law: GroupLaw,
        generators: Vec<Elem>,
        elements: Vec<Elem>,
        index: HashMap<Elem, usize>,
        word_length: Vec<u32>,
    ) -> Self {
        let left = elements
            .iter()
            .map(|x| generators.iter().map(|g| index.get(&law.mul(g, x)).map(|&i| i as u32)).collect())
            .collect();
        let origin = index[&law.identity()];
        GroupModel { law, generators, elements, index, word_length, left, origin }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, x: PointId) -> &[i64] {
        &self.elements[x]
    }

    pub fn id_of(&self, e: &[i64]) -> Option<PointId> {
        self.index.get(e).copied()
    }

    pub fn word_length(&self, x: PointId) -> u32 {
        self.word_length[x]
    }

    pub fn max_word_length(&self) -> u32 {
        self.word_length.iter().copied().max().unwrap_or(0)
    }

    /// Partial multiplication: `None` when the product leaves the region.
    pub fn op(&self, x: PointId, y: PointId) -> Option<PointId> {
        self.id_of(&self.law.mul(&self.elements[x], &self.elements[y]))
    }

    pub fn inverse(&self, x: PointId) -> Option<PointId> {
        self.id_of(&self.law.inv(&self.elements[x]))
    }

    /// Open word ball `{b : |b| < r}` around the identity.
    pub fn open_ball(&self, r: f64) -> PointSet {
        (0..self.len()).filter(|&x| (self.word_length[x] as f64) < r).collect()
    }

    /// Closed word ball `{b : |b| <= r}` around the identity.
    pub fn closed_ball(&self, r: f64) -> PointSet {
        (0..self.len()).filter(|&x| (self.word_length[x] as f64) <= r).collect()
    }

    /// Product set `{a·b : a in A, b in B}`; errors if any product leaves the region.
    pub fn product_set(&self, a: &PointSet, b: &PointSet) -> Result<PointSet> {
        let mut out = Vec::with_capacity(a.len() * b.len().min(64));
        for x in a.iter() {
            for y in b.iter() {
                let p = self.op(x, y).ok_or_else(|| {
                    CzError::Truncation(format!("{:?} * {:?}", self.elements[x], self.elements[y]))
                })?;
                out.push(p);
            }
        }
        Ok(PointSet::new(out))
    }

    pub fn inverse_set(&self, a: &PointSet) -> Result<PointSet> {
        a.iter()
            .map(|x| self.inverse(x).ok_or_else(|| CzError::Truncation(format!("inverse of {:?}", self.elements[x]))))
            .collect::<Result<Vec<_>>>()
            .map(PointSet::new)
    }

    /// Cayley graph space: unit edges `x -- g·x`, counting measure.
    pub fn cayley_space(&self) -> Result<MetricMeasureSpace> {
        let mut edges = Vec::new();
        for (x, row) in self.left.iter().enumerate() {
            for y in row.iter().flatten() {
                let y = *y as usize;
                if x < y {
                    edges.push((x, y, 1.0));
                }
            }
        }
        edges.sort_by_key(|a| (a.0, a.1));
        edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        MetricMeasureSpace::from_edges(self.len(), &edges, vec![1.0; self.len()], MetricKind::Exact)
    }

    /// Group-axiom checks on the region.
    pub fn check_axioms(&self, samples: usize, seed: u64) -> GroupAxiomReport {
        let law = &self.law;
        let closed_under_inverse = self.generators.iter().all(|g| self.generators.contains(&law.inv(g)));
        let id = law.identity();
        let identity_ok = self.elements.iter().all(|x| law.mul(&id, x) == *x && law.mul(x, &id) == *x);
        let inverse_ok = self.elements.iter().all(|x| law.mul(x, &law.inv(x)) == id && law.mul(&law.inv(x), x) == id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut associativity_checked = 0;
        let mut associativity_ok = true;
        let mut attempts = 0;
        while associativity_checked < samples && attempts < samples * 50 {
            attempts += 1;
            let (x, y, z) = (rng.random_range(0..self.len()), rng.random_range(0..self.len()), rng.random_range(0..self.len()));
            let (Some(xy), Some(yz)) = (self.op(x, y), self.op(y, z)) else { continue };
            let (Some(l), Some(r)) = (self.op(xy, z), self.op(x, yz)) else { continue };
            associativity_checked += 1;
            if l != r {
                associativity_ok = false;
            }
        }
        GroupAxiomReport { closed_under_inverse, identity_ok, inverse_ok, associativity_checked, associativity_ok }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupAxiomReport {
    pub closed_under_inverse: bool,
    pub identity_ok: bool,
    pub inverse_ok: bool,
    pub associativity_checked: usize,
    pub associativity_ok: bool,
}

impl GroupAxiomReport {
    pub fn passed(&self) -> bool {
        self.closed_under_inverse && self.identity_ok && self.inverse_ok && self.associativity_ok
    }
}
