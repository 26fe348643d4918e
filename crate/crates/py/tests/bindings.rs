use pyo3::ffi::c_str;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(sdfgraph_py::sdfgraph_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("sdfgraph", m).unwrap();
        f(py, &globals)
    })
}

#[test]
fn init_registration_round_trip() {
    with_module(|py, g| {
        py.run(
            c_str!(
                r#"
t = sdfgraph.SimilarityTransform.from_euler(40.0, 12.0, -7.0, [1.0, -2.0, 0.5], 0.6)
poses = [sdfgraph.CameraPose.look_at(e, [0, 0, 0], [0, 0, 1]) for e in ([3, 0, 1], [0, 3, 1], [-2, -2, 2])]
est = sdfgraph.init_registration([(p, sdfgraph.transform_pose(p, t)[0]) for p in poses])
err = est.max_entry_diff(t)
"#
            ),
            Some(g),
            None,
        )
        .unwrap();
        let err: f64 = g.get_item("err").unwrap().unwrap().extract().unwrap();
        assert!(err < 1e-9, "{err}");
    });
}

#[test]
fn errors_become_value_errors() {
    with_module(|py, g| {
        let r = py.run(
            c_str!("sdfgraph.init_registration([(sdfgraph.CameraPose.look_at([3, 0, 1], [0, 0, 0], [0, 0, 1]),) * 2])"),
            Some(g),
            None,
        );
        let e = r.unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py), "{e}");
        assert!(e.to_string().contains("underdetermined"), "{e}");
    });
}

#[test]
fn chamfer_of_identical_sets_is_zero() {
    with_module(|py, g| {
        let v = py
            .eval(c_str!("sdfgraph.chamfer([[0, 0, 0], [1, 2, 3]], [[0, 0, 0], [1, 2, 3]])"), Some(g), None)
            .unwrap();
        assert_eq!(v.extract::<f64>().unwrap(), 0.0);
    });
}
