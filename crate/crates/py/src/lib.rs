//! Python bindings. Reports come back as plain dicts and lists.

use czkit_core::amenability::{find_r_doubling, find_r_doubling_metric, is_r_doubling, unidouble_table};
use czkit_core::chains::{doubling_chain, verify_chain, QuadraticForm};
use czkit_core::cubes::{build_cubes, subsample_auto, verify_cubes, DyadicTree};
use czkit_core::cz::{coarsen_decomposition, verify_decomposition, CzEngine, Decomposition as CoreDecomposition, Mode};
use czkit_core::family::{family_constant, verify_doubling_family, SetFamily, Variant};
use czkit_core::function::Function;
use czkit_core::maximal::{maximal_function, weak11_check};
use czkit_core::models::{generate, GeneratorSet, GroupModel, ModelSpec};
use czkit_core::{CzError, MetricMeasureSpace, PointSet};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: CzError) -> PyErr {
    match e {
        CzError::Input(_) | CzError::LambdaRange { .. } | CzError::Json(_) | CzError::Truncation(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_json(text: &str) -> PyResult<serde_json::Value> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn point_set(space: &MetricMeasureSpace, ids: Vec<usize>) -> PyResult<PointSet> {
    if let Some(&x) = ids.iter().find(|&&x| x >= space.n()) {
        return Err(PyValueError::new_err(format!("point {x} outside a space of {} points", space.n())));
    }
    Ok(PointSet::new(ids))
}

fn group_spec(model: &str, size: usize, generators: &str) -> PyResult<ModelSpec> {
    let generators = match generators {
        "standard" => GeneratorSet::Standard,
        "extended" => GeneratorSet::Extended,
        other => return Err(PyValueError::new_err(format!("unknown generating set {other:?}"))),
    };
    Ok(match model {
        "grid1" => ModelSpec::Grid { dim: 1, side: size },
        "grid2" => ModelSpec::Grid { dim: 2, side: size },
        "tree3" => ModelSpec::Tree { degree: 3, depth: size },
        "heisenberg" => ModelSpec::Heisenberg { radius: size, generators },
        "bs12" => ModelSpec::Bs12 { radius: size },
        other => return Err(PyValueError::new_err(format!("unknown model {other:?}"))),
    })
}

/// Finite metric measure space.
#[pyclass(module = "czkit")]
struct Space {
    inner: MetricMeasureSpace,
    group: Option<GroupModel>,
}

#[pymethods]
impl Space {
    /// Path graph with unit edges and weights.
    #[staticmethod]
    fn path(n: usize) -> PyResult<Self> {
        Ok(Space { inner: czkit_core::mms::path(n).map_err(err)?, group: None })
    }

    /// Model spaces: `grid1`, `grid2` (size = side), `tree3` (size = depth),
    /// `heisenberg`, `bs12` (size = word radius).
    #[staticmethod]
    #[pyo3(signature = (model, size, generators = "standard"))]
    fn model(model: &str, size: usize, generators: &str) -> PyResult<Self> {
        let m = generate(&group_spec(model, size, generators)?).map_err(err)?;
        Ok(Space { inner: m.space, group: m.group })
    }

    /// Any model described as JSON, including solvable products.
    #[staticmethod]
    fn from_spec(spec: &str) -> PyResult<Self> {
        let spec: ModelSpec = serde_json::from_value(parse_json(spec)?).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let m = generate(&spec).map_err(err)?;
        Ok(Space { inner: m.space, group: m.group })
    }

    /// Full distance table with weights.
    #[staticmethod]
    #[pyo3(signature = (distances, weights = None))]
    fn from_table(distances: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let w = weights.unwrap_or_else(|| vec![1.0; distances.len()]);
        let inner = MetricMeasureSpace::from_table(distances, w, czkit_core::MetricKind::Exact).map_err(err)?;
        Ok(Space { inner, group: None })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Space { inner: MetricMeasureSpace::from_json(parse_json(text)?).map_err(err)?, group: None })
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    #[getter]
    fn total_measure(&self) -> f64 {
        self.inner.total_measure()
    }

    #[getter]
    fn is_group(&self) -> bool {
        self.group.is_some()
    }

    fn dist(&self, x: usize, y: usize) -> PyResult<f64> {
        if x.max(y) >= self.inner.n() {
            return Err(PyValueError::new_err("point out of range"));
        }
        Ok(self.inner.dist(x, y))
    }

    /// Open ball `{y : d(x,y) < r}`.
    fn ball(&self, x: usize, r: f64) -> PyResult<Vec<usize>> {
        Ok(self.inner.ball(x, r).map_err(err)?.iter().collect())
    }

    fn measure(&self, ids: Vec<usize>) -> PyResult<f64> {
        Ok(self.inner.measure(&point_set(&self.inner, ids)?))
    }

    fn __repr__(&self) -> String {
        format!("Space(n={}, diameter={})", self.inner.n(), self.inner.diameter())
    }
}

/// Finite family of subsets.
#[pyclass(module = "czkit")]
struct Family {
    inner: SetFamily,
}

#[pymethods]
impl Family {
    #[new]
    fn new(sets: Vec<Vec<usize>>) -> Self {
        Family { inner: SetFamily::new(sets.into_iter().map(PointSet::new).collect()) }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Family { inner: SetFamily::from_json(parse_json(text)?).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    fn sets(&self) -> Vec<Vec<usize>> {
        self.inner.sets().iter().map(|s| s.iter().collect()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Smallest `C` at which both doubling-family conditions hold.
    fn constant(&self, space: &Space) -> PyResult<f64> {
        self.inner.validate(&space.inner).map_err(err)?;
        family_constant(&space.inner, &self.inner).map_err(err)
    }

    #[pyo3(signature = (space, c, strict = false))]
    fn verify<'py>(&self, py: Python<'py>, space: &Space, c: f64, strict: bool) -> PyResult<Bound<'py, PyAny>> {
        let variant = if strict { Variant::Strict } else { Variant::Loose };
        to_py(py, &verify_doubling_family(&space.inner, &self.inner, c, variant).map_err(err)?)
    }
}

/// Nested dyadic cubes.
#[pyclass(module = "czkit")]
struct Cubes {
    inner: DyadicTree,
}

#[pymethods]
impl Cubes {
    /// Builds `depth` levels; with `subsample`, keeps every m-th level for the
    /// smallest m giving parent/child diameter ratios of at least 3.
    #[staticmethod]
    #[pyo3(signature = (space, delta = 0.5, depth = None, subsample = false))]
    fn build(space: &Space, delta: f64, depth: Option<usize>, subsample: bool) -> PyResult<Self> {
        let depth = depth.unwrap_or_else(|| space.inner.diameter().max(1.0).log2().ceil() as usize + 2);
        let mut tree = build_cubes(&space.inner, delta, depth).map_err(err)?;
        if subsample {
            tree = subsample_auto(&space.inner, &tree).map_err(err)?.tree;
        }
        Ok(Cubes { inner: tree })
    }

    fn family(&self) -> Family {
        Family { inner: self.inner.family() }
    }

    fn levels(&self) -> Vec<Vec<Vec<usize>>> {
        self.inner.levels.iter().map(|l| l.iter().map(|c| c.members.iter().collect()).collect()).collect()
    }

    #[getter]
    fn c_diam(&self) -> f64 {
        self.inner.c_diam
    }

    #[getter]
    fn a0(&self) -> Option<f64> {
        self.inner.a0
    }

    #[pyo3(signature = (space, require_ratio = false))]
    fn verify<'py>(&self, py: Python<'py>, space: &Space, require_ratio: bool) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &verify_cubes(&space.inner, &self.inner, require_ratio))
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }
}

/// `f = g + sum f_i`.
#[pyclass(module = "czkit")]
struct Decomposition {
    inner: CoreDecomposition,
}

#[pymethods]
impl Decomposition {
    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn constant(&self) -> f64 {
        self.inner.constant
    }

    #[getter]
    fn good(&self) -> Vec<f64> {
        self.inner.g.values.clone()
    }

    /// One dict per piece: `r_set`, `q_set`, `u_set`, `x`, `radius`, `f`.
    fn items<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.items)
    }

    fn __len__(&self) -> usize {
        self.inner.items.len()
    }

    /// Recomputes every bullet; `mode` is `full`, `large_scale` or `small_scale`.
    #[pyo3(signature = (space, mode = "full", bound = None))]
    fn verify<'py>(&self, py: Python<'py>, space: &Space, mode: &str, bound: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let mode = match mode {
            "full" => Mode::Full,
            "large_scale" => Mode::LargeScale,
            "small_scale" => Mode::SmallScale,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        to_py(py, &verify_decomposition(&space.inner, &self.inner, mode, bound).map_err(err)?)
    }

    #[pyo3(signature = (space, c_cz = 2.0))]
    fn coarsen(&self, space: &Space, c_cz: f64) -> PyResult<Decomposition> {
        Ok(Decomposition { inner: coarsen_decomposition(&space.inner, &self.inner, c_cz).map_err(err)?.decomposition })
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }
}

/// Calderón-Zygmund decomposition at level `lam`; raises `ValueError` when
/// `lam` is at or below `C ||f||_1 / mu(M)`.
#[pyfunction]
#[pyo3(signature = (space, family, f, lam, constant = None))]
fn decompose(space: &Space, family: &Family, f: Vec<f64>, lam: f64, constant: Option<f64>) -> PyResult<Decomposition> {
    let engine = match constant {
        Some(c) => CzEngine::with_constant(&space.inner, &family.inner, c),
        None => CzEngine::new(&space.inner, &family.inner),
    }
    .map_err(err)?;
    Ok(Decomposition { inner: engine.decompose(&Function::new(f), lam).map_err(err)? })
}

/// Smallest admissible level `C ||f||_1 / mu(M)`.
#[pyfunction]
fn lambda_bound(space: &Space, family: &Family, f: Vec<f64>) -> PyResult<f64> {
    let engine = CzEngine::new(&space.inner, &family.inner).map_err(err)?;
    Ok(engine.lambda_bound(&Function::new(f)))
}

#[pyfunction]
fn maximal(space: &Space, family: &Family, f: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(maximal_function(&space.inner, &family.inner, &Function::new(f)).map_err(err)?.values)
}

/// `sup_lam lam mu{Mf > lam} / ||f||_1` over breakpoints or the given levels.
#[pyfunction]
#[pyo3(signature = (space, family, f, lambdas = None))]
fn weak11<'py>(
    py: Python<'py>,
    space: &Space,
    family: &Family,
    f: Vec<f64>,
    lambdas: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &weak11_check(&space.inner, &family.inner, &Function::new(f), lambdas.as_deref()).map_err(err)?)
}

fn group(space: &Space) -> PyResult<&GroupModel> {
    space.group.as_ref().ok_or_else(|| PyValueError::new_err("space has no group structure"))
}

/// r-doubling search; groups use `B(r)A`, other spaces the open dilation
/// around `center`.
#[pyfunction]
#[pyo3(signature = (space, r, budget = 10_000, center = 0))]
fn find_doubling<'py>(py: Python<'py>, space: &Space, r: f64, budget: usize, center: usize) -> PyResult<Bound<'py, PyAny>> {
    let cert = match &space.group {
        Some(g) => find_r_doubling(g, r, budget),
        None => find_r_doubling_metric(&space.inner, center, r, budget),
    }
    .map_err(err)?;
    to_py(py, &cert)
}

#[pyfunction]
fn is_doubling(space: &Space, ids: Vec<usize>, r: f64) -> PyResult<bool> {
    let a = point_set(&space.inner, ids)?;
    Ok(is_r_doubling(group(space)?, &a, r).map_err(err)?.found)
}

/// Closed word-ball sizes and doubling ratios for each radius.
#[pyfunction]
fn unidouble<'py>(py: Python<'py>, space: &Space, radii: Vec<u32>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &unidouble_table(group(space)?, &radii).map_err(err)?)
}

/// Chain of forms from `g_d` to `g_rho` with consecutive metric factors in
/// [2, 16]; returns the forms as nested lists.
#[pyfunction]
fn metric_chain(g_d: Vec<Vec<f64>>, g_rho: Vec<Vec<f64>>, m: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let a = QuadraticForm::new(g_d).map_err(err)?;
    let b = QuadraticForm::new(g_rho).map_err(err)?;
    let chain = doubling_chain(&a, &b, m).map_err(err)?;
    verify_chain(&chain).map_err(err)?;
    Ok(chain.forms.iter().map(QuadraticForm::rows).collect())
}

#[pymodule]
fn czkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Space>()?;
    m.add_class::<Family>()?;
    m.add_class::<Cubes>()?;
    m.add_class::<Decomposition>()?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_bound, m)?)?;
    m.add_function(wrap_pyfunction!(maximal, m)?)?;
    m.add_function(wrap_pyfunction!(weak11, m)?)?;
    m.add_function(wrap_pyfunction!(find_doubling, m)?)?;
    m.add_function(wrap_pyfunction!(is_doubling, m)?)?;
    m.add_function(wrap_pyfunction!(unidouble, m)?)?;
    m.add_function(wrap_pyfunction!(metric_chain, m)?)?;
    Ok(())
}
