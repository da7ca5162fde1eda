//! Python module `procnet_py`: scene rendering, mask overlap, dataset
//! generation, training and the self-check suite.

use std::path::PathBuf;

use procnet::bench::{generate_dataset, read_dataset, write_dataset, DatasetSpec, DistanceBins, SceneConfig};
use procnet::loss::{train as train_net, TrainOptions};
use procnet::mask::LabelMask;
use procnet::net::{NetworkConfig, ProcNet};
use procnet::render::{render_mask as render, PoseVector};
use procnet::search::mask_overlap as overlap;
use procnet::selfcheck::{self, SelfCheckOptions};
use procnet::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::NumericFailure(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn scene(preset: &str, image: usize) -> PyResult<SceneConfig> {
    match preset {
        "moving-rectangle" => Ok(SceneConfig::moving_rectangle(image)),
        "forearm" => Ok(SceneConfig::forearm(image, 2.0)),
        _ => Err(PyValueError::new_err(format!("unknown preset '{preset}'"))),
    }
}

fn to_mask(rows: Vec<Vec<u8>>) -> PyResult<LabelMask> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("mask rows differ in length"));
    }
    LabelMask::new(h, w, rows.concat()).map_err(py_err)
}

fn to_rows(m: &LabelMask) -> Vec<Vec<u8>> {
    m.data().chunks(m.width()).map(<[u8]>::to_vec).collect()
}

/// Label mask of a preset object at a pose, as a list of rows.
#[pyfunction]
#[pyo3(signature = (preset, image, position, attitude, joints=Vec::new()))]
fn render_mask(
    preset: &str,
    image: usize,
    position: [f64; 3],
    attitude: [f64; 3],
    joints: Vec<f64>,
) -> PyResult<Vec<Vec<u8>>> {
    let s = scene(preset, image)?;
    let m = render(&s.model, &s.camera, &PoseVector::new(position, attitude, joints)).map_err(py_err)?;
    Ok(to_rows(&m))
}

/// Overlap score of two equally sized label masks, in [-1, 1].
#[pyfunction]
fn mask_overlap(a: Vec<Vec<u8>>, b: Vec<Vec<u8>>) -> PyResult<f64> {
    overlap(&to_mask(a)?, &to_mask(b)?).map_err(py_err)
}

/// Writes a synthetic dataset to `out`; returns each sequence's mean occlusion (%).
#[pyfunction]
#[pyo3(signature = (out, sequences, seed=42, preset="moving-rectangle", image=64, length=6, occlusion=0.0))]
fn generate(
    out: PathBuf,
    sequences: usize,
    seed: u64,
    preset: &str,
    image: usize,
    length: usize,
    occlusion: f64,
) -> PyResult<Vec<f64>> {
    let mut scene = scene(preset, image)?;
    scene.length = length;
    let spec = DatasetSpec {
        scene,
        sequences,
        distances: Vec::new(),
        occlusion_targets: vec![occlusion],
        bins: DistanceBins::default(),
        seed,
    };
    let samples = generate_dataset(&spec).map_err(py_err)?;
    write_dataset(&out, &samples).map_err(py_err)?;
    Ok(samples.iter().map(|s| s.mean_occlusion()).collect())
}

/// Trains a network on a dataset directory and saves its weights.
/// Returns total loss before training followed by one value per epoch.
#[pyfunction]
#[pyo3(signature = (dataset, weights, epochs=1, channels=vec![1, 4, 8], seed=42))]
fn train(dataset: PathBuf, weights: PathBuf, epochs: usize, channels: Vec<usize>, seed: u64) -> PyResult<Vec<f64>> {
    let data = read_dataset(&dataset).map_err(py_err)?;
    let config = NetworkConfig { channels, ..NetworkConfig::default() };
    let mut net = ProcNet::new(config, seed).map_err(py_err)?;
    let opts = TrainOptions { epochs, seed, ..TrainOptions::default() };
    let report = train_net(&mut net, &data, &opts).map_err(py_err)?;
    net.params().save(&weights).map_err(py_err)?;
    Ok(std::iter::once(report.initial.total).chain(report.epochs.iter().map(|e| e.loss.total)).collect())
}

/// Runs the gradient, overlap and rasterizer checks: (all passed, report text).
#[pyfunction]
fn self_check() -> PyResult<(bool, String)> {
    let report = selfcheck::run(&SelfCheckOptions::default()).map_err(py_err)?;
    Ok((report.passed(), report.to_string()))
}

#[pymodule]
fn procnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(render_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mask_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(self_check, m)?)?;
    Ok(())
}
