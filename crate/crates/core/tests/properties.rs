use mixnl::solve::{rayleigh_quotient, solve_minmax, MinMaxOptions};
use mixnl::{
    assemble_forms, build_mesh, solve_dense, validate_region, Forms, KernelParams, Normalization,
    Quadrature, QuadratureConfig, RegionSpec, Toggles,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn forms(s: f64, neumann_len: f64, h: f64, t: Toggles) -> Forms {
    let neumann: Vec<(f64, f64)> = if neumann_len > 0.0 {
        vec![(1.0, 1.0 + neumann_len)]
    } else {
        vec![]
    };
    let region = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &neumann, s)).unwrap();
    let mesh = build_mesh(&region, h).unwrap();
    let params = KernelParams::new(s, Normalization::Off).unwrap();
    let quad = Quadrature::new(QuadratureConfig::default()).unwrap();
    assemble_forms(&mesh, &params, &quad, t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn toggled_forms_add_up(s in 0.05f64..0.95, len in prop_oneof![Just(0.0), 0.25f64..1.0]) {
        let both = forms(s, len, 1.0 / 8.0, Toggles::BOTH);
        let local = forms(s, len, 1.0 / 8.0, Toggles::LOCAL_ONLY);
        let nonlocal = forms(s, len, 1.0 / 8.0, Toggles::NONLOCAL_ONLY);
        // Assembly symmetrizes each sum, so allow rounding in the last bits.
        let diff = (&both.a_matrix - (&local.a_matrix + &nonlocal.a_matrix)).amax();
        prop_assert!(diff <= 1e-13 * both.a_matrix.amax(), "diff {diff:e}");
        prop_assert_eq!(&both.b_matrix, &local.b_matrix);
        prop_assert_eq!(&both.a_matrix, &both.a_matrix.transpose());
    }

    #[test]
    fn nonlocal_term_only_adds_energy(
        s in 0.05f64..0.95,
        len in 0.25f64..1.0,
        coeffs in proptest::collection::vec(-1.0f64..1.0, 64),
    ) {
        let both = forms(s, len, 1.0 / 16.0, Toggles::BOTH);
        let local = forms(s, len, 1.0 / 16.0, Toggles::LOCAL_ONLY);
        let u = DVector::from_iterator(both.n_dofs(), coeffs.into_iter().cycle().take(both.n_dofs()));
        prop_assert!(both.energy(&u) >= local.energy(&u));
    }

    #[test]
    fn spectrum_is_positive_ordered_and_bounds_quotients(
        s in 0.05f64..0.95,
        len in prop_oneof![Just(0.0), 0.25f64..1.0],
        coeffs in proptest::collection::vec(-1.0f64..1.0, 64),
    ) {
        let f = forms(s, len, 1.0 / 16.0, Toggles::BOTH);
        let sp = solve_dense(&f, f.b_rank).unwrap();
        prop_assert!(sp.lambdas[0] > 0.0);
        prop_assert!(sp.lambdas.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(sp.len() + sp.infinite_count(), f.n_dofs());
        let u = DVector::from_iterator(f.n_dofs(), coeffs.into_iter().cycle().take(f.n_dofs()));
        if let Ok(q) = rayleigh_quotient(&f, &u) {
            prop_assert!(q >= sp.lambdas[0] * (1.0 - 1e-12));
        }
    }
}

#[test]
fn minmax_deflation_choices_agree() {
    let f = forms(0.3, 0.5, 1.0 / 16.0, Toggles::BOTH);
    let a = solve_minmax(&f, 4, &MinMaxOptions::default()).unwrap();
    let b = solve_minmax(
        &f,
        4,
        &MinMaxOptions {
            deflation: mixnl::solve::Deflation::B,
            ..Default::default()
        },
    )
    .unwrap();
    for (x, y) in a.lambdas.iter().zip(&b.lambdas) {
        assert!((x - y).abs() <= 1e-8 * x);
    }
}

#[test]
fn larger_neumann_region_lowers_first_eigenvalue() {
    // More room outside Ω to relax into means less energy.
    let short = solve_dense(&forms(0.5, 0.25, 1.0 / 16.0, Toggles::BOTH), 1)
        .unwrap()
        .lambdas[0];
    let long = solve_dense(&forms(0.5, 1.0, 1.0 / 16.0, Toggles::BOTH), 1)
        .unwrap()
        .lambdas[0];
    let none = solve_dense(&forms(0.5, 0.0, 1.0 / 16.0, Toggles::BOTH), 1)
        .unwrap()
        .lambdas[0];
    assert!(long < short && short < none, "{long} {short} {none}");
}
