mod common;

#[test]
fn optimizer_matches_grid_oracle_on_three_dose_instances() {
    let runs = common::oracle_comparisons(50, 21);
    for (k, c) in runs.iter().enumerate() {
        assert!(c.passes(), "instance {k}: {c:?}");
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for (name, worst) in common::gradient_discrepancies(20, 22) {
        assert!(worst <= 1e-4, "{name}: {worst}");
    }
}

#[test]
fn collapsed_borrowing_objective_is_pooled_objective_plus_constant() {
    for semap in [false, true] {
        let spread = common::degeneracy_offset_spread(200, 24, semap);
        assert!(spread <= 1e-8, "semap {semap}: {spread}");
    }
}

// The SEMAP version of this comparison is reported by the acceptance run; its
// fits stop at different points of a stiff valley, see the README.
#[test]
fn collapsed_limap_borrowing_reproduces_pooled_fit() {
    for (i, e) in common::degeneracy_errors(20, 23, false).iter().enumerate() {
        assert!(*e <= 1e-3, "replicate {i}: {e}");
    }
}
