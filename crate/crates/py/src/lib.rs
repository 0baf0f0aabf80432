//! Python bindings: the loss and metric kernels, synthetic worlds, stores and
//! end-to-end training.

use std::path::Path;

use jedi_core::loss::{self, WeightScheme};
use jedi_core::metrics::{self, ModelKind};
use jedi_core::model;
use jedi_core::store::{EmbeddingStore, Split};
use jedi_core::synth::{self, WorldSpec};
use jedi_core::train::{self, TrainConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: jedi_core::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

#[pyfunction]
#[pyo3(signature = (num_classes, d, k = 10.0))]
fn teacher_dropout_rate(num_classes: usize, d: usize, k: f64) -> f64 {
    model::teacher_dropout_rate(num_classes, d, k)
}

#[pyfunction]
#[pyo3(signature = (home, model, sizes, scheme = "as_printed"))]
fn dataset_weight(home: usize, model: usize, sizes: Vec<usize>, scheme: &str) -> PyResult<f64> {
    let scheme = match scheme {
        "as_printed" => WeightScheme::AsPrinted,
        "by_source" => WeightScheme::BySource,
        other => return Err(PyValueError::new_err(format!("unknown scheme `{other}` (as_printed, by_source)"))),
    };
    if model >= sizes.len() || sizes.iter().sum::<usize>() == 0 {
        return Err(PyValueError::new_err(format!("model {model} needs a size among {} non-empty sizes", sizes.len())));
    }
    Ok(loss::dataset_weight(home, model, &sizes, scheme))
}

#[pyfunction]
fn cross_entropy(logits: Vec<f64>, label: usize) -> PyResult<(f64, Vec<f64>)> {
    let g = loss::cross_entropy(&logits, label).map_err(py_err)?;
    Ok((g.value, g.grad))
}

#[pyfunction]
fn multiclass_hinge(scores: Vec<f64>, label: usize) -> PyResult<(f64, Vec<f64>)> {
    let g = loss::multiclass_hinge(&scores, label).map_err(py_err)?;
    Ok((g.value, g.grad))
}

/// Returns `(value, student_grad, teacher_grad)`.
#[pyfunction]
#[pyo3(signature = (student, teacher, temperature = 1.0))]
fn kd_cross_entropy(student: Vec<f64>, teacher: Vec<f64>, temperature: f64) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let g = loss::kd_cross_entropy(&student, &teacher, temperature).map_err(py_err)?;
    Ok((g.value, g.student_grad, g.teacher_grad))
}

#[pyfunction]
fn topk_accuracy(rows: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<f64> {
    metrics::topk_accuracy(&rows, &labels, k).map_err(py_err)
}

#[pyfunction]
fn mean_average_precision(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    metrics::mean_average_precision(&rows, &labels).map_err(py_err)
}

fn describe<'py>(py: Python<'py>, store: &EmbeddingStore) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let counts = PyDict::new(py);
    for spec in store.manifest() {
        let per = PyDict::new(py);
        for split in Split::ALL {
            per.set_item(split.name(), store.count(spec.id, split))?;
        }
        counts.set_item(&spec.name, per)?;
    }
    let names: Vec<&str> = store.manifest().iter().map(|s| s.name.as_str()).collect();
    out.set_item("datasets", names)?;
    out.set_item("segment_dims", store.segment_dims())?;
    out.set_item("num_classes", store.num_classes())?;
    out.set_item("counts", counts)?;
    Ok(out)
}

/// Generates a world (TOML world spec, empty for defaults) into `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, world = ""))]
fn generate_world<'py>(py: Python<'py>, out_dir: &str, world: &str) -> PyResult<Bound<'py, PyDict>> {
    let spec = WorldSpec::from_toml(world).map_err(py_err)?;
    let store = synth::generate_world(&spec).map_err(py_err)?;
    store.write(Path::new(out_dir)).map_err(py_err)?;
    describe(py, &store)
}

#[pyfunction]
fn read_store<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyDict>> {
    let store = EmbeddingStore::read(Path::new(path)).map_err(py_err)?;
    describe(py, &store)
}

/// Trains on a stored or generated world and returns final test acc@1 per
/// dataset and model, the per-epoch losses and the curves CSV.
#[pyfunction]
#[pyo3(signature = (config = "", store_dir = None, world = ""))]
fn fit<'py>(py: Python<'py>, config: &str, store_dir: Option<&str>, world: &str) -> PyResult<Bound<'py, PyDict>> {
    let config = TrainConfig::from_toml(config).map_err(py_err)?;
    let store = match store_dir {
        Some(dir) => EmbeddingStore::read(Path::new(dir)).map_err(py_err)?,
        None => {
            let spec = WorldSpec::from_toml(world).map_err(py_err)?;
            synth::generate_world(&spec).map_err(py_err)?
        }
    };
    let outcome = py.detach(|| train::fit(&store, &config, None)).map_err(py_err)?;
    let out = PyDict::new(py);
    let test = PyDict::new(py);
    for (d, name) in outcome.report.datasets.iter().enumerate() {
        let per = PyDict::new(py);
        for kind in ModelKind::ALL {
            if let Some(v) = outcome.report.get(kind, d, Split::Test) {
                per.set_item(kind.name(), v.acc1)?;
            }
        }
        test.set_item(name, per)?;
    }
    out.set_item("test_acc1", test)?;
    out.set_item("epochs", outcome.history.len())?;
    out.set_item("loss_cls", outcome.history.iter().map(|s| s.loss_cls).collect::<Vec<_>>())?;
    out.set_item("loss_kd", outcome.history.iter().map(|s| s.loss_kd).collect::<Vec<_>>())?;
    out.set_item("curves_csv", metrics::write_curves_csv(&outcome.curves).map_err(py_err)?)?;
    Ok(out)
}

#[pymodule]
pub fn jedi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(teacher_dropout_rate, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_weight, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(multiclass_hinge, m)?)?;
    m.add_function(wrap_pyfunction!(kd_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(read_store, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
