use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hetnoma::Error;
use ::hetnoma_py::hetnoma_py as extension;
use ::hetnoma_py::{parse_scheme, to_py_err};

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyModule>)>(f: F) {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(extension);
        Python::initialize();
    });
    Python::attach(|py| {
        let m = py.import("hetnoma_py").unwrap();
        f(py, &m);
    });
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(|py, _| {
        assert!(to_py_err(Error::InvalidAllocation("x".into())).is_instance_of::<PyValueError>(py));
        assert!(to_py_err(Error::Divergent("x".into())).is_instance_of::<PyRuntimeError>(py));
        assert!(parse_scheme("coordinated_jt").is_ok());
        assert!(parse_scheme("bogus").unwrap_err().is_instance_of::<PyValueError>(py));
    });
}

#[test]
fn network_methods_match_the_library() {
    with_module(|py, m| {
        let net = m.getattr("Network").unwrap().call_method0("reference_network").unwrap();
        let cov: Vec<f64> = net.call_method1("coverage", (vec![0.25, 0.75], 1)).unwrap().extract().unwrap();
        let an = hetnoma::Analytics::new(&hetnoma::experiment::reference_network(5e-4, 5e-4).unwrap()).unwrap();
        let a = hetnoma::PowerAllocation::new(vec![0.25, 0.75]).unwrap();
        for (k, c) in cov.iter().enumerate() {
            assert_eq!(*c, an.coverage_noncoord(&a, 1, k, true).unwrap());
        }
        let kwargs = PyDict::new(py);
        kwargs.set_item("scheme", "coordinated_jt").unwrap();
        let jt: Vec<f64> = net.call_method("coverage", (vec![0.25, 0.75], 1), Some(&kwargs)).unwrap().extract().unwrap();
        assert!(jt[1] > cov[1]);
        let err = net.call_method1("coverage", (vec![0.75, 0.25], 1)).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        let err = net.call_method1("coverage", (vec![0.25, 0.75], 5)).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        let (ok, violated): (bool, Option<String>) =
            m.getattr("feasible").unwrap().call1((vec![0.5, 0.5], 1.0)).unwrap().extract().unwrap();
        assert!(!ok && violated.is_some());
    });
}
