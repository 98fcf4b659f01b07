//! Python bindings: lexicon entries, rendering, backends, selection,
//! evaluation and tables.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use selfneg_core::evaluation::{self, EvaluationReport, Gh22Options};
use selfneg_core::lexicon::{Article, Gender, NameEntry, Profession, VerbLexicon};
use selfneg_core::model::{BackendDescriptor, Client, MockKind, RetryPolicy};
use selfneg_core::patterns::{self, CorefKind, CorefMode, Gh22Descriptor, Polarity, ScntPattern, TargetFamily};
use selfneg_core::reporting::{self, TableFormat, TableShape};
use selfneg_core::selection::{self, SelectionConfig, SelectionSet};
use selfneg_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Transport { .. } | Error::Protocol(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "Name", module = "selfneg", frozen, from_py_object)]
#[derive(Clone)]
struct PyName(NameEntry);

#[pymethods]
impl PyName {
    #[new]
    fn new(name: &str, gender: &str) -> PyResult<Self> {
        let gender: Gender = parse(gender)?;
        NameEntry::new(name, gender).map(PyName).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn gender(&self) -> &'static str {
        self.0.gender.as_str()
    }

    fn __repr__(&self) -> String {
        format!("Name({:?}, {:?})", self.0.name, self.0.gender.as_str())
    }
}

#[pyclass(name = "Profession", module = "selfneg", frozen, from_py_object)]
#[derive(Clone)]
struct PyProfession(Profession);

#[pymethods]
impl PyProfession {
    #[new]
    #[pyo3(signature = (label, article=None))]
    fn new(label: &str, article: Option<&str>) -> PyResult<Self> {
        let article = article.map(parse::<Article>).transpose()?;
        Profession::new(label, article).map(PyProfession).map_err(py_err)
    }

    #[getter]
    fn label(&self) -> &str {
        &self.0.label
    }

    #[getter]
    fn article(&self) -> &'static str {
        self.0.article.as_str()
    }

    fn __repr__(&self) -> String {
        format!("Profession({:?}, {:?})", self.0.label, self.0.article.as_str())
    }
}

#[pyclass(name = "Triplet", module = "selfneg", frozen, from_py_object)]
#[derive(Clone)]
struct PyTriplet(patterns::Triplet);

#[pymethods]
impl PyTriplet {
    #[new]
    fn new(name: PyName, profession: PyProfession, verb: &str) -> Self {
        PyTriplet(patterns::Triplet::new(name.0, profession.0, verb))
    }

    #[getter]
    fn name(&self) -> PyName {
        PyName(self.0.name.clone())
    }

    #[getter]
    fn profession(&self) -> PyProfession {
        PyProfession(self.0.profession.clone())
    }

    #[getter]
    fn verb(&self) -> &str {
        &self.0.verb
    }

    fn __repr__(&self) -> String {
        format!(
            "Triplet({:?}, {:?}, {:?})",
            self.0.name.name, self.0.profession.label, self.0.verb
        )
    }
}

/// Renders one of CpTp, CpTn, CnTp, CnTn, CpTv.
#[pyfunction]
#[pyo3(signature = (triplet, pattern, coref="pronoun", alt_name=None, target_family="happy"))]
fn render_scnt(
    triplet: &PyTriplet,
    pattern: &str,
    coref: &str,
    alt_name: Option<PyName>,
    target_family: &str,
) -> PyResult<String> {
    let kind: CorefKind = parse(coref)?;
    let mode = CorefMode {
        kind,
        alt_name: alt_name.map(|n| n.0),
    };
    patterns::render_scnt(&triplet.0, parse(pattern)?, &mode, parse(target_family)?)
        .map(|e| e.text)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (triplet, negated, aux, adv, connective=false))]
fn render_gh22(triplet: &PyTriplet, negated: bool, aux: bool, adv: bool, connective: bool) -> String {
    let polarity = if negated { Polarity::N } else { Polarity::P };
    patterns::render_gh22(&triplet.0, Gh22Descriptor::new(polarity, aux, adv, connective)).text
}

#[pyclass(name = "Backend", module = "selfneg", frozen)]
struct PyBackend(Client);

#[pymethods]
impl PyBackend {
    /// `mock:perfect` or `mock:blind`.
    #[staticmethod]
    fn mock(kind: &str) -> PyResult<Self> {
        let kind: MockKind = parse(kind)?;
        Ok(PyBackend(Client::mock(kind)))
    }

    /// A model served over the wire protocol at `endpoint`.
    #[staticmethod]
    #[pyo3(signature = (backend_id, endpoint, workers=4, batch_size=64))]
    fn remote(backend_id: &str, endpoint: &str, workers: usize, batch_size: usize) -> PyResult<Self> {
        let descriptor = BackendDescriptor::parse(backend_id, Some(endpoint)).map_err(py_err)?;
        let backend = descriptor.connect(RetryPolicy::default()).map_err(py_err)?;
        Ok(PyBackend(
            Client::new(backend).with_workers(workers).with_batch_size(batch_size),
        ))
    }

    #[getter]
    fn backend_id(&self) -> &str {
        self.0.backend_id()
    }

    fn top1(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<Vec<String>> {
        py.detach(|| self.0.top1(&texts)).map_err(py_err)
    }

    /// `(token, score)` pairs, best first.
    #[pyo3(signature = (text, top_k=5))]
    fn fill_mask(&self, py: Python<'_>, text: String, top_k: usize) -> PyResult<Vec<(String, f64)>> {
        let mut all = py
            .detach(|| self.0.fill_mask(&[text], top_k))
            .map_err(py_err)?;
        Ok(all.remove(0).into_iter().map(|p| (p.token, p.score)).collect())
    }
}

#[pyclass(name = "Selection", module = "selfneg", frozen)]
struct PySelection(SelectionSet);

#[pymethods]
impl PySelection {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        SelectionSet::load(path).map(PySelection).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn backend_id(&self) -> &str {
        &self.0.backend_id
    }

    #[getter]
    fn stats(&self) -> BTreeMap<&'static str, f64> {
        let s = &self.0.stats;
        BTreeMap::from([
            ("available_verbs", s.available_verbs as f64),
            ("available_pairs", s.available_pairs as f64),
            ("tested_triplets", s.tested_triplets as f64),
            ("repeating_triplets", s.repeating_triplets as f64),
            ("ratio", s.ratio),
            ("selected_triplets", s.selected_triplets as f64),
        ])
    }

    #[getter]
    fn triplets(&self) -> Vec<PyTriplet> {
        self.0.triplets.iter().map(|t| PyTriplet(t.triplet.clone())).collect()
    }

    fn to_jsonl(&self) -> String {
        self.0.to_jsonl()
    }

    fn __len__(&self) -> usize {
        self.0.triplets.len()
    }
}

#[pyclass(name = "Report", module = "selfneg", frozen)]
struct PyReport(EvaluationReport);

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        EvaluationReport::load(path).map(PyReport).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn backend_id(&self) -> &str {
        &self.0.backend_id
    }

    /// Pattern name to `(repetition_rate, drop)`.
    #[getter]
    fn rates(&self) -> BTreeMap<String, (f64, f64)> {
        self.0
            .results
            .iter()
            .map(|r| (r.pattern.to_string(), (r.repetition_rate, r.drop)))
            .collect()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[pyo3(signature = (shape="table5", format="markdown"))]
    fn table(&self, shape: &str, format: &str) -> PyResult<String> {
        let shape: TableShape = parse(shape)?;
        let format: TableFormat = parse(format)?;
        reporting::emit_table(&self.0, shape, format).map_err(py_err)
    }
}

fn names_of(names: Vec<PyName>) -> Vec<NameEntry> {
    names.into_iter().map(|n| n.0).collect()
}

fn profs_of(profs: Vec<PyProfession>) -> Vec<Profession> {
    profs.into_iter().map(|p| p.0).collect()
}

#[pyfunction]
#[pyo3(signature = (
    backend, names, professions, verbs, seed=0, max_verbs_per_pair=20,
    coref="pronoun", target_family="happy"
))]
#[allow(clippy::too_many_arguments)]
fn select_triplets(
    py: Python<'_>,
    backend: &PyBackend,
    names: Vec<PyName>,
    professions: Vec<PyProfession>,
    verbs: Vec<String>,
    seed: u64,
    max_verbs_per_pair: usize,
    coref: &str,
    target_family: &str,
) -> PyResult<PySelection> {
    let config = SelectionConfig {
        max_verbs_per_pair,
        seed,
        coref: parse(coref)?,
        target_family: parse::<TargetFamily>(target_family)?,
        ..SelectionConfig::default()
    };
    let names = names_of(names);
    let profs = profs_of(professions);
    let lexicon = VerbLexicon::new(verbs, backend.0.backend_id());
    py.detach(|| selection::select_triplets(&backend.0, &names, &profs, &lexicon, &config))
        .map(PySelection)
        .map_err(py_err)
}

#[pyfunction]
fn run_scnt(py: Python<'_>, backend: &PyBackend, selection: &PySelection) -> PyResult<PyReport> {
    py.detach(|| evaluation::run_scnt(&backend.0, &selection.0))
        .map(PyReport)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (backend, names, professions, connectives=false))]
fn run_gh22(
    py: Python<'_>,
    backend: &PyBackend,
    names: Vec<PyName>,
    professions: Vec<PyProfession>,
    connectives: bool,
) -> PyResult<PyReport> {
    let names = names_of(names);
    let profs = profs_of(professions);
    py.detach(|| evaluation::run_gh22_replication(&backend.0, &names, &profs, Gh22Options { connectives }))
        .map(PyReport)
        .map_err(py_err)
}

/// Table with one column per coreference-mode report.
#[pyfunction]
#[pyo3(signature = (reports, format="markdown"))]
fn coref_table(reports: Vec<PyRef<'_, PyReport>>, format: &str) -> PyResult<String> {
    let reports: Vec<EvaluationReport> = reports.iter().map(|r| r.0.clone()).collect();
    reporting::emit_coref_table(&reports, parse(format)?).map_err(py_err)
}

#[pymodule]
fn selfneg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", selfneg_core::HARNESS_VERSION)?;
    m.add(
        "PATTERNS",
        ScntPattern::ALL.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
    )?;
    m.add_class::<PyName>()?;
    m.add_class::<PyProfession>()?;
    m.add_class::<PyTriplet>()?;
    m.add_class::<PyBackend>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(render_scnt, m)?)?;
    m.add_function(wrap_pyfunction!(render_gh22, m)?)?;
    m.add_function(wrap_pyfunction!(select_triplets, m)?)?;
    m.add_function(wrap_pyfunction!(run_scnt, m)?)?;
    m.add_function(wrap_pyfunction!(run_gh22, m)?)?;
    m.add_function(wrap_pyfunction!(coref_table, m)?)?;
    Ok(())
}
