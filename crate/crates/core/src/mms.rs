//! Finite metric measure spaces and elementary set geometry.
//!
//! Balls and dilations use strict inequality (`d < r`) unless the call is
//! explicitly named `closed_*`, in which case `d <= r` is used.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CzError, Result};

pub type PointId = usize;

/// Strictly increasing list of point ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointSet(Vec<u32>);

impl PointSet {
    pub fn new(ids: impl IntoIterator<Item = PointId>) -> Self {
        let mut v: Vec<u32> = ids.into_iter().map(|x| x as u32).collect();
        v.sort_unstable();
        v.dedup();
        PointSet(v)
    }

    /// Caller guarantees the ids are strictly increasing.
    pub fn from_sorted(v: Vec<u32>) -> Self {
        debug_assert!(v.windows(2).all(|w| w[0] < w[1]));
        PointSet(v)
    }

    pub fn empty() -> Self {
        PointSet(Vec::new())
    }

    pub fn singleton(x: PointId) -> Self {
        PointSet(vec![x as u32])
    }

    pub fn full(n: usize) -> Self {
        PointSet((0..n as u32).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = PointId> + '_ {
        self.0.iter().map(|&x| x as usize)
    }

    pub fn first(&self) -> Option<PointId> {
        self.0.first().map(|&x| x as usize)
    }

    pub fn contains(&self, x: PointId) -> bool {
        self.0.binary_search(&(x as u32)).is_ok()
    }

    pub fn is_subset(&self, other: &PointSet) -> bool {
        if self.len() > other.len() {
            return false;
        }
        let mut j = 0;
        let o = &other.0;
        for &x in &self.0 {
            while j < o.len() && o[j] < x {
                j += 1;
            }
            if j == o.len() || o[j] != x {
                return false;
            }
            j += 1;
        }
        true
    }

    pub fn intersects(&self, other: &PointSet) -> bool {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn union(&self, other: &PointSet) -> PointSet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        PointSet(out)
    }

    pub fn difference(&self, other: &PointSet) -> PointSet {
        PointSet(self.0.iter().copied().filter(|&x| other.0.binary_search(&x).is_err()).collect())
    }

    pub fn intersection(&self, other: &PointSet) -> PointSet {
        PointSet(self.0.iter().copied().filter(|&x| other.0.binary_search(&x).is_ok()).collect())
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.0
    }
}

impl FromIterator<PointId> for PointSet {
    fn from_iter<I: IntoIterator<Item = PointId>>(iter: I) -> Self {
        PointSet::new(iter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Exact,
    /// Quasi-triangle inequality `d(x,z) <= K (d(x,y) + d(y,z))`.
    Quasi(f64),
}

/// Closed-form distance on a fixed point set (used by the solvable model,
/// whose distance table would not fit in memory).
pub trait DistanceOracle: Send + Sync + fmt::Debug {
    fn dist(&self, x: PointId, y: PointId) -> f64;
    /// Mode tag written to the space JSON.
    fn mode(&self) -> &'static str;
    fn descriptor(&self) -> serde_json::Value;
}

#[derive(Clone, Debug)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    lengths: Vec<f64>,
}

impl Csr {
    fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[u], self.offsets[u + 1]);
        self.targets[a..b].iter().zip(&self.lengths[a..b]).map(|(&v, &w)| (v as usize, w))
    }
}

#[derive(Clone, Debug)]
enum Backend {
    Table(Vec<f64>),
    Graph(Csr),
    Oracle(Arc<dyn DistanceOracle>),
}

#[derive(Clone, Copy, Debug)]
struct HeapEntry {
    d: f64,
    label: u32,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // min-heap on (d, label)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.label.cmp(&self.label))
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Reusable Dijkstra state; labels give lexicographic `(distance, source)`
/// minimisation for multi-source runs.
struct Search<'a> {
    csr: &'a Csr,
    dist: Vec<f64>,
    label: Vec<u32>,
    done: Vec<bool>,
    touched: Vec<u32>,
    heap: BinaryHeap<HeapEntry>,
}

impl<'a> Search<'a> {
    fn new(csr: &'a Csr) -> Self {
        let n = csr.offsets.len() - 1;
        Search {
            csr,
            dist: vec![f64::INFINITY; n],
            label: vec![u32::MAX; n],
            done: vec![false; n],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    fn reset(&mut self) {
        for &u in &self.touched {
            self.dist[u as usize] = f64::INFINITY;
            self.label[u as usize] = u32::MAX;
            self.done[u as usize] = false;
        }
        self.touched.clear();
        self.heap.clear();
    }

    fn seed(&mut self, node: usize, label: u32) {
        let better = (0.0, label) < (self.dist[node], self.label[node]);
        if better {
            if self.dist[node].is_infinite() {
                self.touched.push(node as u32);
            }
            self.dist[node] = 0.0;
            self.label[node] = label;
            self.heap.push(HeapEntry { d: 0.0, label, node: node as u32 });
        }
    }

    /// Settles nodes in order; `visit` returns false to stop the search.
    fn run(&mut self, mut visit: impl FnMut(usize, f64, u32) -> bool) {
        while let Some(HeapEntry { d, label, node }) = self.heap.pop() {
            let u = node as usize;
            if self.done[u] || d != self.dist[u] || label != self.label[u] {
                continue;
            }
            self.done[u] = true;
            if !visit(u, d, label) {
                return;
            }
            for (v, w) in self.csr.neighbors(u) {
                if self.done[v] {
                    continue;
                }
                let nd = d + w;
                if (nd, label) < (self.dist[v], self.label[v]) {
                    if self.dist[v].is_infinite() {
                        self.touched.push(v as u32);
                    }
                    self.dist[v] = nd;
                    self.label[v] = label;
                    self.heap.push(HeapEntry { d: nd, label, node: v as u32 });
                }
            }
        }
    }
}

/// Diameter and measure of a nonempty set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetStats {
    pub diam: f64,
    pub measure: f64,
}

/// Result of checking the metric axioms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricCheck {
    pub symmetric: bool,
    pub zero_diagonal: bool,
    pub exhaustive: bool,
    pub triples_checked: u64,
    /// Smallest K with `d(x,z) <= K (d(x,y) + d(y,z))` on the checked triples.
    pub triangle_constant: f64,
    pub witness: Option<[PointId; 3]>,
}

/// The ambient space `(M, d, mu)` on points `0..n`.
#[derive(Clone, Debug)]
pub struct MetricMeasureSpace {
    n: usize,
    backend: Backend,
    weights: Vec<f64>,
    kind: MetricKind,
}

impl MetricMeasureSpace {
    pub fn from_table(rows: Vec<Vec<f64>>, weights: Vec<f64>, kind: MetricKind) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(CzError::input("space must have at least one point"));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(CzError::input(format!("distance row {i} has length {}, expected {n}", row.len())));
            }
            flat.extend_from_slice(row);
        }
        for i in 0..n {
            if flat[i * n + i] != 0.0 {
                return Err(CzError::input(format!("d({i},{i}) != 0")));
            }
            for j in 0..n {
                let d = flat[i * n + j];
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(CzError::input(format!("d({i},{j}) = {d} is not a finite nonnegative number")));
                }
                if d != flat[j * n + i] {
                    return Err(CzError::input(format!("distance table is not symmetric at ({i},{j})")));
                }
                if i != j && d == 0.0 {
                    return Err(CzError::input(format!("distinct points {i},{j} at distance 0")));
                }
            }
        }
        Self::with_backend(n, Backend::Table(flat), weights, kind)
    }

    /// Weighted undirected graph; the metric is the shortest-path distance.
    pub fn from_edges(n: usize, edges: &[(PointId, PointId, f64)], weights: Vec<f64>, kind: MetricKind) -> Result<Self> {
        if n == 0 {
            return Err(CzError::input("space must have at least one point"));
        }
        let mut deg = vec![0usize; n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(CzError::input(format!("edge ({i},{j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(CzError::input(format!("self loop at {i}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(CzError::input(format!("edge ({i},{j}) has non-positive length {w}")));
            }
            deg[i] += 1;
            deg[j] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut lengths = vec![0f64; offsets[n]];
        for &(i, j, w) in edges {
            targets[fill[i]] = j as u32;
            lengths[fill[i]] = w;
            fill[i] += 1;
            targets[fill[j]] = i as u32;
            lengths[fill[j]] = w;
            fill[j] += 1;
        }
        // sort adjacency for deterministic serialisation
        for u in 0..n {
            let (a, b) = (offsets[u], offsets[u + 1]);
            let mut adj: Vec<(u32, f64)> = targets[a..b].iter().copied().zip(lengths[a..b].iter().copied()).collect();
            adj.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            for (k, (v, w)) in adj.into_iter().enumerate() {
                targets[a + k] = v;
                lengths[a + k] = w;
            }
        }
        let csr = Csr { offsets, targets, lengths };
        let mut search = Search::new(&csr);
        search.seed(0, 0);
        let mut reached = 0usize;
        search.run(|_, _, _| {
            reached += 1;
            true
        });
        if reached != n {
            return Err(CzError::input(format!("graph is disconnected: {reached} of {n} points reachable from 0")));
        }
        Self::with_backend(n, Backend::Graph(csr), weights, kind)
    }

    pub fn from_oracle(n: usize, oracle: Arc<dyn DistanceOracle>, weights: Vec<f64>, kind: MetricKind) -> Result<Self> {
        if n == 0 {
            return Err(CzError::input("space must have at least one point"));
        }
        Self::with_backend(n, Backend::Oracle(oracle), weights, kind)
    }

    fn with_backend(n: usize, backend: Backend, weights: Vec<f64>, kind: MetricKind) -> Result<Self> {
        if weights.len() != n {
            return Err(CzError::input(format!("{} weights for {n} points", weights.len())));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(CzError::input(format!("weight[{i}] = {w} is not strictly positive")));
        }
        if let MetricKind::Quasi(k) = kind {
            if !(k >= 1.0) {
                return Err(CzError::input(format!("quasi-triangle constant {k} must be >= 1")));
            }
        }
        Ok(MetricMeasureSpace { n, backend, weights, kind })
    }

    /// Dense copy of a graph or oracle space. Distances are copied verbatim.
    pub fn to_table(&self) -> Result<Self> {
        if self.n > 30_000 {
            return Err(CzError::input(format!("n = {} too large for a dense table", self.n)));
        }
        let rows: Vec<Vec<f64>> = (0..self.n).into_par_iter().map(|x| self.distances_from(x)).collect();
        let flat = rows.concat();
        Self::with_backend(self.n, Backend::Table(flat), self.weights.clone(), self.kind)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, x: PointId) -> f64 {
        self.weights[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.kind
    }

    pub fn is_graph(&self) -> bool {
        matches!(self.backend, Backend::Graph(_))
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn measure(&self, q: &PointSet) -> f64 {
        q.iter().map(|x| self.weights[x]).sum()
    }

    fn check_point(&self, x: PointId) -> Result<()> {
        if x >= self.n {
            Err(CzError::input(format!("point {x} out of range (n = {})", self.n)))
        } else {
            Ok(())
        }
    }

    fn check_set(&self, q: &PointSet) -> Result<()> {
        if q.is_empty() {
            return Err(CzError::input("empty point set"));
        }
        match q.as_slice().last() {
            Some(&x) if x as usize >= self.n => Err(CzError::input(format!("point {x} out of range (n = {})", self.n))),
            _ => Ok(()),
        }
    }

    pub fn dist(&self, x: PointId, y: PointId) -> f64 {
        match &self.backend {
            Backend::Table(t) => t[x * self.n + y],
            Backend::Oracle(o) => o.dist(x, y),
            Backend::Graph(csr) => {
                if x == y {
                    return 0.0;
                }
                let mut s = Search::new(csr);
                s.seed(x, 0);
                let mut out = f64::INFINITY;
                s.run(|u, d, _| {
                    if u == y {
                        out = d;
                        false
                    } else {
                        true
                    }
                });
                out
            }
        }
    }

    /// Full row `d(x, ·)`.
    pub fn distances_from(&self, x: PointId) -> Vec<f64> {
        match &self.backend {
            Backend::Table(t) => t[x * self.n..(x + 1) * self.n].to_vec(),
            Backend::Oracle(o) => (0..self.n).map(|y| o.dist(x, y)).collect(),
            Backend::Graph(csr) => {
                let mut s = Search::new(csr);
                s.seed(x, 0);
                let mut row = vec![f64::INFINITY; self.n];
                s.run(|u, d, _| {
                    row[u] = d;
                    true
                });
                row
            }
        }
    }

    fn neighbourhood(&self, sources: &[u32], r: f64, closed: bool) -> PointSet {
        let inside = |d: f64| if closed { d <= r } else { d < r };
        match &self.backend {
            Backend::Graph(csr) => {
                let mut s = Search::new(csr);
                for &q in sources {
                    s.seed(q as usize, 0);
                }
                let mut out = Vec::new();
                s.run(|u, d, _| {
                    if inside(d) {
                        out.push(u);
                        true
                    } else {
                        false
                    }
                });
                PointSet::new(out)
            }
            _ => {
                let hits: Vec<u32> = (0..self.n as u32)
                    .into_par_iter()
                    .filter(|&y| sources.iter().any(|&q| inside(self.dist(q as usize, y as usize))))
                    .collect();
                PointSet::from_sorted(hits)
            }
        }
    }

    /// Open ball `{y : d(x,y) < r}`.
    pub fn ball(&self, x: PointId, r: f64) -> Result<PointSet> {
        self.check_point(x)?;
        if !(r >= 0.0) {
            return Err(CzError::input(format!("radius {r} must be nonnegative")));
        }
        Ok(self.neighbourhood(&[x as u32], r, false))
    }

    /// Closed ball `{y : d(x,y) <= r}`.
    pub fn closed_ball(&self, x: PointId, r: f64) -> Result<PointSet> {
        self.check_point(x)?;
        if !(r >= 0.0) {
            return Err(CzError::input(format!("radius {r} must be nonnegative")));
        }
        Ok(self.neighbourhood(&[x as u32], r, true))
    }

    /// Open dilation `{x : d(x,Q) < r}`.
    pub fn dilate(&self, q: &PointSet, r: f64) -> Result<PointSet> {
        self.check_set(q)?;
        if !(r > 0.0) {
            return Err(CzError::input(format!("dilation radius {r} must be positive")));
        }
        Ok(self.neighbourhood(q.as_slice(), r, false))
    }

    /// Closed dilation `{x : d(x,Q) <= r}`; `r = 0` returns `Q`.
    pub fn closed_dilate(&self, q: &PointSet, r: f64) -> Result<PointSet> {
        self.check_set(q)?;
        if !(r >= 0.0) {
            return Err(CzError::input(format!("dilation radius {r} must be nonnegative")));
        }
        Ok(self.neighbourhood(q.as_slice(), r, true))
    }

    /// Maximum pairwise distance within `q` (0 for singletons and the empty set).
    pub fn diam(&self, q: &PointSet) -> f64 {
        if q.len() < 2 {
            return 0.0;
        }
        let ids = q.as_slice();
        match &self.backend {
            Backend::Graph(csr) => {
                let mut member = vec![false; self.n];
                for &x in ids {
                    member[x as usize] = true;
                }
                let member = &member;
                ids.par_iter()
                    .map_init(
                        || Search::new(csr),
                        |s, &x| {
                            s.reset();
                            s.seed(x as usize, 0);
                            let mut left = ids.len();
                            let mut far = 0.0f64;
                            s.run(|u, d, _| {
                                if member[u] {
                                    far = far.max(d);
                                    left -= 1;
                                }
                                left > 0
                            });
                            far
                        },
                    )
                    .reduce(|| 0.0, f64::max)
            }
            _ => (0..ids.len())
                .into_par_iter()
                .map(|i| {
                    let x = ids[i] as usize;
                    ids[i + 1..].iter().map(|&y| self.dist(x, y as usize)).fold(0.0, f64::max)
                })
                .reduce(|| 0.0, f64::max),
        }
    }

    pub fn set_stats(&self, q: &PointSet) -> Result<SetStats> {
        self.check_set(q)?;
        Ok(SetStats { diam: self.diam(q), measure: self.measure(q) })
    }

    pub fn diameter(&self) -> f64 {
        self.diam(&PointSet::full(self.n))
    }

    /// For each point, the index (into `sources`) of its nearest source;
    /// ties go to the source with the lowest point id.
    pub fn nearest_sources(&self, sources: &[PointId]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..sources.len()).collect();
        order.sort_by_key(|&k| sources[k]);
        match &self.backend {
            Backend::Graph(csr) => {
                // labels are ranks in id order so that label order equals id order
                let mut s = Search::new(csr);
                for (rank, &k) in order.iter().enumerate() {
                    s.seed(sources[k], rank as u32);
                }
                let mut out = vec![usize::MAX; self.n];
                s.run(|u, _, label| {
                    out[u] = order[label as usize];
                    true
                });
                out
            }
            _ => (0..self.n)
                .into_par_iter()
                .map(|y| {
                    let mut best = (f64::INFINITY, usize::MAX);
                    for &k in &order {
                        let d = self.dist(sources[k], y);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    best.1
                })
                .collect(),
        }
    }

    /// Distance from `x` to the nearest point outside `q`, or infinity if `q`
    /// is the whole space.
    pub fn distance_to_complement(&self, x: PointId, q: &PointSet) -> f64 {
        if q.len() == self.n {
            return f64::INFINITY;
        }
        match &self.backend {
            Backend::Graph(csr) => {
                let mut s = Search::new(csr);
                s.seed(x, 0);
                let mut out = f64::INFINITY;
                s.run(|u, d, _| {
                    if q.contains(u) {
                        true
                    } else {
                        out = d;
                        false
                    }
                });
                out
            }
            _ => (0..self.n).filter(|&y| !q.contains(y)).map(|y| self.dist(x, y)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Smallest positive distance from `x` to another point.
    pub fn separation(&self, x: PointId) -> f64 {
        self.distance_to_complement(x, &PointSet::singleton(x))
    }

    /// Checks symmetry, zero diagonal and the (quasi-)triangle inequality:
    /// exhaustively when `n <= exhaustive_limit`, otherwise on `samples`
    /// random triples.
    pub fn check_metric(&self, exhaustive_limit: usize, samples: usize, seed: u64) -> MetricCheck {
        let n = self.n;
        let exhaustive = n <= exhaustive_limit;
        let mut out = MetricCheck {
            symmetric: true,
            zero_diagonal: true,
            exhaustive,
            triples_checked: 0,
            triangle_constant: 0.0,
            witness: None,
        };
        let record = |x: usize, y: usize, z: usize, dxz: f64, dxy: f64, dyz: f64, out: &mut MetricCheck| {
            out.triples_checked += 1;
            let s = dxy + dyz;
            let k = if s > 0.0 { dxz / s } else if dxz > 0.0 { f64::INFINITY } else { 0.0 };
            if k > out.triangle_constant {
                out.triangle_constant = k;
                out.witness = Some([x, y, z]);
            }
        };
        if exhaustive {
            let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|x| self.distances_from(x)).collect();
            for x in 0..n {
                if rows[x][x] != 0.0 {
                    out.zero_diagonal = false;
                }
                for y in 0..n {
                    if rows[x][y] != rows[y][x] {
                        out.symmetric = false;
                    }
                }
            }
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        record(x, y, z, rows[x][z], rows[x][y], rows[y][z], &mut out);
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let (x, y, z) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
                let (dxy, dyx) = (self.dist(x, y), self.dist(y, x));
                if dxy != dyx {
                    out.symmetric = false;
                }
                if self.dist(x, x) != 0.0 {
                    out.zero_diagonal = false;
                }
                record(x, y, z, self.dist(x, z), dxy, self.dist(y, z), &mut out);
            }
        }
        out
    }

    /// True if some distance from one of the first `probe` points equals `r`.
    /// Used to warn about radii sitting exactly on a distance value.
    pub fn radius_collides(&self, r: f64, probe: usize) -> bool {
        (0..self.n.min(probe)).any(|x| self.distances_from(x).contains(&r))
    }

    /// Writes the space JSON document.
    pub fn to_json(&self) -> serde_json::Value {
        let (mode, distances, edges, model) = match &self.backend {
            Backend::Table(t) => {
                let rows: Vec<Vec<f64>> = t.chunks(self.n).map(|c| c.to_vec()).collect();
                ("table".to_string(), Some(rows), None, None)
            }
            Backend::Graph(csr) => {
                let mut e = Vec::new();
                for u in 0..self.n {
                    for (v, w) in csr.neighbors(u) {
                        if u < v {
                            e.push((u, v, w));
                        }
                    }
                }
                ("graph".to_string(), None, Some(e), None)
            }
            Backend::Oracle(o) => (o.mode().to_string(), None, None, Some(o.descriptor())),
        };
        let file = SpaceFile { n: self.n, mode, distances, edges, model, weights: self.weights.clone(), metric_kind: self.kind };
        serde_json::to_value(file).expect("space serialisation")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: SpaceFile = serde_json::from_value(value)?;
        let space = match file.mode.as_str() {
            "table" => {
                let rows = file.distances.ok_or_else(|| CzError::input("table mode requires \"distances\""))?;
                Self::from_table(rows, file.weights, file.metric_kind)?
            }
            "graph" => {
                let edges = file.edges.ok_or_else(|| CzError::input("graph mode requires \"edges\""))?;
                Self::from_edges(file.n, &edges, file.weights, file.metric_kind)?
            }
            "solvable" => {
                let model = file.model.ok_or_else(|| CzError::input("solvable mode requires \"model\""))?;
                let model = crate::models::SolvableProductModel::from_descriptor(model)?;
                model.space()?
            }
            other => return Err(CzError::input(format!("unknown space mode {other:?}"))),
        };
        if space.n != file.n {
            return Err(CzError::input(format!("declared n = {} but data has {} points", file.n, space.n)));
        }
        Ok(space)
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    n: usize,
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distances: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<serde_json::Value>,
    weights: Vec<f64>,
    metric_kind: MetricKind,
}

/// Path graph `P_n` with unit edges and unit weights.
pub fn path(n: usize) -> Result<MetricMeasureSpace> {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
    MetricMeasureSpace::from_edges(n, &edges, vec![1.0; n], MetricKind::Exact)
}
