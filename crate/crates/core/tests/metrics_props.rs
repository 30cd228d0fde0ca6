use proptest::prelude::*;

use ipromp::metrics::{error_difference, select_window, ErrorContext, ErrorReport, Formulation, MetricConfig};
use ipromp::Error;

fn report(e: [f64; 3], f: Formulation, w: f64, task: &str, fold: Option<usize>) -> ErrorReport {
    ErrorReport {
        e_p: e[0],
        e_q: e[1],
        e_phi: e[2],
        context: ErrorContext { formulation: f, window: w, task_id: task.into(), fold_id: fold },
    }
}

fn weights() -> impl Strategy<Value = MetricConfig> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_filter_map("positive sum", |(a, b, c)| {
        let s = a + b + c;
        (s > 1e-3).then(|| MetricConfig { gamma_p: a / s, gamma_q: b / s, gamma_phi: c / s })
    })
}

proptest! {
    #[test]
    fn selection_is_invariant_to_rescaling_a_measure(
        errs in prop::collection::vec((0.01f64..2.0, 0.01f64..2.0, 0.01f64..2.0), 2..6),
        which in 0usize..3,
        scale in 1e-3f64..1e3,
        cfg in weights(),
    ) {
        let windows = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0];
        let base: Vec<(f64, ErrorReport)> = errs
            .iter()
            .enumerate()
            .map(|(i, (p, q, f))| (windows[i], report([*p, *q, *f], Formulation::Dynamic, windows[i], "a", None)))
            .collect();
        let scaled: Vec<(f64, ErrorReport)> = base
            .iter()
            .map(|(w, r)| {
                let mut v = r.values();
                v[which] *= scale;
                (*w, report(v, Formulation::Dynamic, *w, "a", None))
            })
            .collect();
        let a = select_window(&base, &cfg).unwrap();
        let b = select_window(&scaled, &cfg).unwrap();
        for ((_, ma), (_, mb)) in a.m_values.iter().zip(&b.m_values) {
            prop_assert!((ma - mb).abs() < 1e-9);
        }
        prop_assert_eq!(a.best, b.best);
    }

    #[test]
    fn difference_is_antisymmetric(
        x in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        y in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let a = report([x.0, x.1, x.2], Formulation::Static, 0.3, "t", Some(2));
        let b = report([y.0, y.1, y.2], Formulation::Dynamic, 0.5, "t", Some(2));
        let ab = error_difference(&a, &b).unwrap();
        let ba = error_difference(&b, &a).unwrap();
        for i in 0..3 {
            prop_assert_eq!(ab[i], -ba[i]);
        }
    }
}

#[test]
fn mismatched_folds_are_a_pairing_error() {
    let a = report([1.0; 3], Formulation::Static, 0.3, "t", Some(1));
    let b = report([1.0; 3], Formulation::Dynamic, 0.5, "t", Some(2));
    assert!(matches!(error_difference(&a, &b), Err(Error::Pairing(_))));
}

#[test]
fn ties_pick_the_shortest_window() {
    let r = |w| (w, report([0.5, 0.5, 0.5], Formulation::Dynamic, w, "a", None));
    let sel = select_window(&[r(1.0), r(0.2), r(0.5)], &MetricConfig::default()).unwrap();
    assert_eq!(sel.best, 0.2);
}
