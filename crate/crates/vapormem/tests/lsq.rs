use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use vapormem::lsq::*;
use vapormem::Error;

fn rosenbrock(x: &DVector<f64>) -> vapormem::Result<Evaluation> {
    let r = DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
    let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
    Ok((r, j))
}

const FREE: [f64; 2] = [f64::NEG_INFINITY, f64::INFINITY];

#[test]
fn rosenbrock_minimum_is_found() {
    let rep = levenberg_marquardt(
        rosenbrock,
        &[-1.2, 1.0],
        &[FREE[0]; 2],
        &[FREE[1]; 2],
        &LmOptions::default(),
    )
    .unwrap();
    assert!((rep.params[0] - 1.0).abs() < 1e-10 && (rep.params[1] - 1.0).abs() < 1e-10);
    assert!(rep.rss < 1e-20);
    assert!(rep.at_bound.iter().all(|b| !b));
}

#[test]
fn bound_constrained_minimum_sits_on_the_bound() {
    // Unconstrained minimum at (3, -2); the box caps x0 at 1.
    let eval = |x: &DVector<f64>| -> vapormem::Result<Evaluation> {
        Ok((
            DVector::from_vec(vec![x[0] - 3.0, x[1] + 2.0]),
            DMatrix::identity(2, 2),
        ))
    };
    let rep = levenberg_marquardt(
        eval,
        &[0.0, 0.0],
        &[-5.0, -5.0],
        &[1.0, 5.0],
        &LmOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.params[0], 1.0);
    assert!((rep.params[1] + 2.0).abs() < 1e-12, "{rep:?}");
    assert_eq!(rep.at_bound, vec![true, false]);
    let cov = rep.unscaled_covariance().unwrap();
    assert_eq!(cov[(0, 0)], 0.0);
    assert!((cov[(1, 1)] - 1.0).abs() < 1e-12);
}

#[test]
fn iteration_limit_reports_cost_history() {
    let opts = LmOptions {
        max_iterations: 2,
        ..LmOptions::default()
    };
    let err = levenberg_marquardt(
        rosenbrock,
        &[-1.2, 1.0],
        &[FREE[0]; 2],
        &[FREE[1]; 2],
        &opts,
    )
    .unwrap_err();
    assert!(
        matches!(&err, Error::Numeric(m) if m.contains("cost history") && m.contains("->")),
        "{err}"
    );
}

#[test]
fn bad_bounds_are_rejected() {
    assert!(matches!(
        levenberg_marquardt(
            rosenbrock,
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[0.0, 1.0],
            &LmOptions::default()
        ),
        Err(Error::Argument(_))
    ));
    assert!(levenberg_marquardt(
        rosenbrock,
        &[0.0, 0.0],
        &[0.0],
        &[1.0],
        &LmOptions::default()
    )
    .is_err());
}

#[test]
fn linear_model_covariance_matches_normal_equations() {
    // y = a + b t on five points: cov = (X^T X)^-1.
    let t = [0.0, 1.0, 2.0, 3.0, 5.0];
    let y = [1.1, 2.9, 5.2, 6.8, 11.1];
    let eval = |x: &DVector<f64>| -> vapormem::Result<Evaluation> {
        let r = DVector::from_iterator(5, t.iter().zip(&y).map(|(ti, yi)| x[0] + x[1] * ti - yi));
        let j = DMatrix::from_fn(5, 2, |i, k| if k == 0 { 1.0 } else { t[i] });
        Ok((r, j))
    };
    let rep = levenberg_marquardt(
        eval,
        &[0.0, 0.0],
        &[FREE[0]; 2],
        &[FREE[1]; 2],
        &LmOptions::default(),
    )
    .unwrap();
    let line = weighted_line(&t, &y, &[1.0; 5]).unwrap();
    assert!((rep.params[0] - line.intercept).abs() < 1e-10);
    assert!((rep.params[1] - line.slope).abs() < 1e-10);
    let cov = rep.unscaled_covariance().unwrap();
    // Hand inverse of [[5, 11], [11, 39]].
    let det = 5.0 * 39.0 - 121.0;
    assert!((cov[(0, 0)] - 39.0 / det).abs() < 1e-12);
    assert!((cov[(0, 1)] + 11.0 / det).abs() < 1e-12);
    assert!((cov[(1, 1)] - 5.0 / det).abs() < 1e-12);
    assert!((line.cov[0][0] - 39.0 / det).abs() < 1e-12);
    assert!((line.cov[1][1] - 5.0 / det).abs() < 1e-12);
    assert!((line.cov[0][1] + 11.0 / det).abs() < 1e-12);
}

#[test]
fn weighted_line_examples() {
    let f = weighted_line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((f.intercept - 1.0).abs() < 1e-14 && (f.slope - 2.0).abs() < 1e-14);
    assert!(f.chi2 < 1e-25);
    assert!((f.r2 - 1.0).abs() < 1e-14);
    // Down-weighting an outlier pulls the fit toward the other points.
    let heavy = weighted_line(&[0.0, 1.0, 2.0], &[0.0, 1.0, 5.0], &[1.0, 1.0, 1e-6]).unwrap();
    assert!((heavy.slope - 1.0).abs() < 1e-5);
    assert!(matches!(
        weighted_line(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]),
        Err(Error::Numeric(_))
    ));
    assert!(matches!(
        weighted_line(&[1.0], &[0.0], &[1.0]),
        Err(Error::Argument(_))
    ));
    assert!(matches!(
        weighted_line(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]),
        Err(Error::Argument(_))
    ));
}

proptest! {
    #[test]
    fn exact_lines_are_recovered(a in -10.0f64..10.0, b in -5.0f64..5.0, n in 3usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
        let f = weighted_line(&x, &y, &vec![1.0; n]).unwrap();
        prop_assert!((f.intercept - a).abs() < 1e-9 && (f.slope - b).abs() < 1e-9);
    }
}
