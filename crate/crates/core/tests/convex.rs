mod common;

use common::{convex_oracle, CONVEX_KS};

#[test]
fn linear_softmax_is_stable_and_agrees_with_the_reference_fit() {
    let o = convex_oracle();
    assert_eq!(o.instability.len(), CONVEX_KS.len());
    for &(k, mean) in &o.instability {
        assert!(mean < 0.005, "k={k}: {mean}");
    }
    assert_eq!(o.instability.last().unwrap().1, 0.0);
    assert!(o.max_curve_barrier <= 0.005, "{o:?}");
    assert!(o.max_chord_violation <= 1e-12, "{o:?}");
    assert!(o.max_error_gap <= 0.005, "{o:?}");
    assert!(o.max_reference_barrier <= 0.005, "{o:?}");
    assert!(o.reference_error < 0.05, "{o:?}");
}
