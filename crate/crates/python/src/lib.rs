//! Python bindings. Each function builds the equivalent command line, runs it
//! through the same driver as the `qtomo` binary, and returns the JSON report
//! as a string; failures raise `ValueError` carrying the structured error
//! document.

use clap::Parser;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use qtomo::cli::{self, Cli};

fn execute(py: Python<'_>, args: Vec<String>) -> PyResult<String> {
    let cli = Cli::try_parse_from(std::iter::once("qtomo".to_string()).chain(args))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.allow_threads(|| cli::run(&cli))
        .map_err(|e| PyValueError::new_err(cli::error_json(&e)))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Runs an arbitrary `qtomo` subcommand, e.g. `run(["single-qubit", "--counts", "1,0,0,1,2,0"])`.
#[pyfunction]
fn run(py: Python<'_>, args: Vec<String>) -> PyResult<String> {
    execute(py, args)
}

/// Single-qubit estimate from ideal counts `(H, V, D, A, L, R)`.
#[pyfunction]
#[pyo3(signature = (counts, method = "bme"))]
fn single_qubit(py: Python<'_>, counts: Vec<u64>, method: &str) -> PyResult<String> {
    execute(
        py,
        vec![
            "single-qubit".into(),
            "--counts".into(),
            join(&counts),
            "--method".into(),
            method.into(),
        ],
    )
}

/// Estimate from a dataset file (JSON or CSV).
#[pyfunction]
#[pyo3(signature = (path, method = "bme", seed = 0, target_state = None, eff = None, samples = None))]
fn estimate(
    py: Python<'_>,
    path: &str,
    method: &str,
    seed: u64,
    target_state: Option<&str>,
    eff: Option<Vec<f64>>,
    samples: Option<usize>,
) -> PyResult<String> {
    let mut args = vec![
        "estimate".to_string(),
        path.into(),
        "--method".into(),
        method.into(),
        "--seed".into(),
        seed.to_string(),
    ];
    if let Some(t) = target_state {
        args.extend(["--target-state".into(), t.into()]);
    }
    if let Some(e) = eff {
        args.extend(["--eff".into(), join(&e)]);
    }
    if let Some(n) = samples {
        args.extend(["--samples".into(), n.to_string()]);
    }
    execute(py, args)
}

/// Simulated nine-basis dataset as JSON text.
#[pyfunction]
#[pyo3(signature = (state = "psi-plus", pairs = 1000, eff = vec![1.0; 4], seed = 0))]
fn simulate(py: Python<'_>, state: &str, pairs: u64, eff: Vec<f64>, seed: u64) -> PyResult<String> {
    execute(
        py,
        vec![
            "simulate".into(),
            "--state".into(),
            state.into(),
            "--pairs".into(),
            pairs.to_string(),
            "--eff".into(),
            join(&eff),
            "--seed".into(),
            seed.to_string(),
        ],
    )
}

#[pymodule]
fn qtomo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(single_qubit, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_python<R>(f: impl for<'py> FnOnce(Python<'py>) -> R) -> R {
        pyo3::prepare_freethreaded_python();
        Python::with_gil(f)
    }

    #[test]
    fn single_qubit_round_trips_through_the_driver() {
        with_python(|py| {
            let text = single_qubit(py, vec![7, 3, 7, 3, 0, 10], "lie").unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["method"], "lie");
            assert_eq!(v["physical"], false);
        });
    }

    #[test]
    fn driver_errors_become_value_errors() {
        with_python(|py| {
            let err = single_qubit(py, vec![1, 2, 3], "bme").unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
            assert!(err.to_string().contains("invalid_input"));
        });
    }
}
