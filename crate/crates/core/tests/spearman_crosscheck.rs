//! Spearman implementation vs externally computed reference values on
//! tie-heavy random series. Reference rho values frozen from
//! scipy.stats.spearmanr.

use cotsel_core::report::spearman;

#[test]
fn matches_reference_values_on_tied_series() {
    let cases: Vec<(Vec<f64>, Vec<f64>, f64)> = vec![
        (
            vec![30., 10., 40., 30., 10., 10., 40., 50.],
            vec![2., 2., 0., 1., 1., 2., 2., 1.],
            -0.3924656724215559,
        ),
        (
            vec![10., 40., 10., 50., 40., 10., 10., 30., 40.],
            vec![0., 0., 0., 1., 1., 0., 2., 3., 3.],
            0.35048259630752765,
        ),
        (
            vec![40., 10., 30., 30., 50., 40., 20., 50., 50., 50.],
            vec![2., 0., 3., 3., 3., 3., 2., 0., 1., 0.],
            -0.16832508230603463,
        ),
        (
            vec![30., 20., 30., 30., 50., 40., 10., 40., 40., 50., 30.],
            vec![0., 1., 0., 2., 0., 2., 1., 3., 0., 2., 3.],
            0.044009911496156975,
        ),
        (
            vec![20., 50., 40., 20., 20., 50., 40., 40., 40., 10., 10., 20., 40., 20.],
            vec![0., 2., 2., 2., 3., 3., 0., 0., 0., 2., 0., 0., 3., 0.],
            0.27084346727917596,
        ),
        (
            vec![50., 40., 10., 50., 40., 10., 30., 30., 40., 10., 50., 30., 40., 30.],
            vec![0., 1., 3., 0., 1., 2., 1., 0., 0., 3., 2., 1., 2., 3.],
            -0.5690866510538642,
        ),
    ];
    for (i, (xs, ys, expected)) in cases.iter().enumerate() {
        let got = spearman(xs, ys).unwrap();
        assert!(
            (got - expected).abs() < 1e-12,
            "case {i}: got {got}, reference {expected}"
        );
    }
}
