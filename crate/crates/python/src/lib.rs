//! Python bindings. Domains are passed as host names or URLs throughout.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use storagelabel::{
    self as core, AccessMode, Decision, DomainResolver, ReadResult, ReplayMode, StorageArea,
    StorageError, WriteOutcome,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn domain(raw: &str) -> PyResult<core::Domain> {
    core::Domain::parse(raw).map_err(value_error)
}

fn domains(raw: Vec<String>) -> PyResult<Vec<core::Domain>> {
    raw.iter().map(|d| domain(d).map(|d| d.party())).collect()
}

fn mode(raw: &str) -> PyResult<AccessMode> {
    match raw {
        "read" => Ok(AccessMode::Read),
        "write" => Ok(AccessMode::Write),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'read' or 'write', not {other:?}"
        ))),
    }
}

fn decision(d: Decision) -> (bool, String) {
    (d.allowed(), d.reason().to_string())
}

fn outcome(o: WriteOutcome) -> (bool, String) {
    decision(o.decision)
}

fn visible(r: ReadResult) -> Option<String> {
    r.value().map(str::to_string)
}

fn storage_error(e: StorageError) -> PyErr {
    match e {
        StorageError::NotFound(key) => PyKeyError::new_err(key),
        other => value_error(other),
    }
}

fn resolver(party: &str) -> PyResult<DomainResolver> {
    let granularity = match party {
        "registrable" => core::PartyGranularity::Registrable,
        "exact-host" => core::PartyGranularity::ExactHost,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown party granularity {other:?}"
            )))
        }
    };
    Ok(DomainResolver::default().with_granularity(granularity))
}

#[pyclass(frozen, eq, hash, module = "storagelabel_py")]
#[derive(PartialEq, Eq, Hash)]
struct Domain(core::Domain);

#[pymethods]
impl Domain {
    #[new]
    fn new(host_or_url: &str) -> PyResult<Self> {
        domain(host_or_url).map(Domain)
    }

    #[getter]
    fn registrable(&self) -> &str {
        self.0.registrable()
    }

    #[getter]
    fn raw_host(&self) -> &str {
        self.0.raw_host()
    }

    fn same_party(&self, other: &Domain) -> bool {
        core::same_party(&self.0, &other.0)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Domain({:?})", self.0.raw_host())
    }
}

#[pyclass(module = "storagelabel_py")]
#[derive(Default)]
struct Label(core::Label);

#[pymethods]
impl Label {
    #[new]
    #[pyo3(signature = (readers = Vec::new(), writers = Vec::new()))]
    fn new(readers: Vec<String>, writers: Vec<String>) -> PyResult<Self> {
        Ok(Label(core::Label::new(
            domains(readers)?,
            domains(writers)?,
        )))
    }

    #[getter]
    fn readers(&self) -> Vec<String> {
        self.0.readers().iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn writers(&self) -> Vec<String> {
        self.0.writers().iter().map(|d| d.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Label(readers={}, writers={})",
            core::policy::braced(self.0.readers()),
            core::policy::braced(self.0.writers())
        )
    }
}

/// `(allowed, reason)` for `accessor` touching an object owned by `owner` on
/// page `host`. `mode` is `"read"` or `"write"`.
#[pyfunction]
fn decide_access(
    label: &Label,
    owner: &str,
    host: &str,
    accessor: &str,
    mode: &str,
) -> PyResult<(bool, String)> {
    Ok(decision(core::decide_access(
        &label.0,
        &domain(owner)?,
        &domain(host)?,
        &domain(accessor)?,
        self::mode(mode)?,
    )))
}

#[pyclass(module = "storagelabel_py")]
#[derive(Default)]
struct CookieJar(core::CookieJar);

#[pymethods]
impl CookieJar {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    /// Stores a cookie received over HTTP; returns its canonical form.
    #[pyo3(signature = (header, origin, now = 0))]
    fn http_set_cookie(&mut self, header: &str, origin: &str, now: i64) -> PyResult<String> {
        let record = self
            .0
            .parse_set_cookie(header, &domain(origin)?, now)
            .map_err(value_error)?;
        let text = record.canonical();
        self.0.http_set_cookie(record);
        Ok(text)
    }

    #[pyo3(signature = (host, script, assignment, now = 0))]
    fn js_set_cookie(
        &mut self,
        host: &str,
        script: &str,
        assignment: &str,
        now: i64,
    ) -> PyResult<(bool, String)> {
        self.0
            .js_set_cookie(&domain(host)?, &domain(script)?, assignment, now)
            .map(outcome)
            .map_err(value_error)
    }

    /// The cookie value, or `None` when absent or not readable by `script`.
    #[pyo3(signature = (host, script, name, now = 0))]
    fn js_get_cookie(
        &self,
        host: &str,
        script: &str,
        name: &str,
        now: i64,
    ) -> PyResult<Option<String>> {
        Ok(visible(self.0.js_get_cookie(
            &domain(host)?,
            &domain(script)?,
            name,
            now,
        )))
    }

    #[pyo3(signature = (host, script, now = 0))]
    fn js_get_cookie_string(&self, host: &str, script: &str, now: i64) -> PyResult<String> {
        Ok(self
            .0
            .js_get_cookie_string(&domain(host)?, &domain(script)?, now))
    }

    fn purge_expired(&mut self, now: i64) {
        self.0.purge_expired(now);
    }

    fn dump(&self) -> Vec<String> {
        self.0.dump()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// localStorage for `host`, or one IndexedDB object store when `db` and
/// `store` are given.
#[pyclass(module = "storagelabel_py")]
struct StoragePartition(core::StoragePartition);

#[pymethods]
impl StoragePartition {
    #[new]
    #[pyo3(signature = (host, db = None, store = None))]
    fn new(host: &str, db: Option<String>, store: Option<String>) -> PyResult<Self> {
        let area = match (db, store) {
            (None, None) => StorageArea::Local,
            (Some(db), Some(store)) => StorageArea::idb(db, store),
            _ => return Err(PyValueError::new_err("db and store go together")),
        };
        Ok(StoragePartition(core::StoragePartition::new(
            &domain(host)?,
            area,
        )))
    }

    /// `setItem` or IndexedDB `put`, depending on the partition.
    fn put(&mut self, script: &str, key: &str, value: &str) -> PyResult<(bool, String)> {
        let script = domain(script)?;
        let result = match self.0.area() {
            StorageArea::Local => self.0.set_item(&script, key, value),
            StorageArea::IndexedDb { .. } => self.0.idb_put(&script, key, value),
        };
        result.map(outcome).map_err(storage_error)
    }

    fn get(&self, script: &str, key: &str) -> PyResult<Option<String>> {
        let script = domain(script)?;
        let result = match self.0.area() {
            StorageArea::Local => self.0.get_item(&script, key),
            StorageArea::IndexedDb { .. } => self.0.idb_get(&script, key),
        };
        result.map(visible).map_err(storage_error)
    }

    fn set_readers(
        &mut self,
        script: &str,
        key: &str,
        readers: Vec<String>,
    ) -> PyResult<(bool, String)> {
        let readers = domains(readers)?;
        self.0
            .set_readers(&domain(script)?, key, readers)
            .map(outcome)
            .map_err(storage_error)
    }

    fn set_writers(
        &mut self,
        script: &str,
        key: &str,
        writers: Vec<String>,
    ) -> PyResult<(bool, String)> {
        let writers = domains(writers)?;
        self.0
            .set_writers(&domain(script)?, key, writers)
            .map(outcome)
            .map_err(storage_error)
    }

    fn dump(&self) -> Vec<String> {
        self.0.dump()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// `100 * tp / (host + tp)` at two decimals, truncated.
#[pyfunction]
fn percent_third_party(host_count: u64, tp_count: u64) -> PyResult<f64> {
    core::percent_third_party(host_count, tp_count)
        .map(|p| p.as_f64())
        .map_err(value_error)
}

fn parse_log(text: &str, resolver: &DomainResolver) -> PyResult<Vec<core::AccessEvent>> {
    let log = core::parse_event_log_str(text, resolver);
    match log.errors.first() {
        None => Ok(log.events),
        Some(e) => Err(value_error(e)),
    }
}

/// Classification report of a JSON-lines log, as JSON.
#[pyfunction]
#[pyo3(signature = (text, party = "registrable"))]
fn classify_log(text: &str, party: &str) -> PyResult<String> {
    let events = parse_log(text, &resolver(party)?)?;
    let mut classifier = core::Classifier::new();
    for event in &events {
        classifier.observe(event);
    }
    serde_json::to_string(&classifier.finish()).map_err(value_error)
}

/// Denials and breakage summary of replaying a log, as JSON.
#[pyfunction]
#[pyo3(signature = (text, mode = "enforce", party = "registrable", top_n = 20))]
fn replay_log(text: &str, mode: &str, party: &str, top_n: usize) -> PyResult<String> {
    let resolver = resolver(party)?;
    let mode = match mode {
        "enforce" => ReplayMode::Enforce,
        "observe" => ReplayMode::Observe,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown replay mode {other:?}"
            )))
        }
    };
    let events = parse_log(text, &resolver)?;
    let outcome = core::replay_with(&events, mode, &resolver);
    let report = core::breakage_report(&outcome.denials, top_n);
    let value = serde_json::json!({
        "mode": mode,
        "denials": outcome.denials,
        "errors": outcome.errors.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
        "state": outcome.state_dump(),
        "breakage": report,
    });
    Ok(value.to_string())
}

#[pymodule]
fn storagelabel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Domain>()?;
    m.add_class::<Label>()?;
    m.add_class::<CookieJar>()?;
    m.add_class::<StoragePartition>()?;
    m.add_function(wrap_pyfunction!(decide_access, m)?)?;
    m.add_function(wrap_pyfunction!(percent_third_party, m)?)?;
    m.add_function(wrap_pyfunction!(classify_log, m)?)?;
    m.add_function(wrap_pyfunction!(replay_log, m)?)?;
    Ok(())
}
