use swave::kernels::Verdict;
use swave_demo::{field_snapshot, kernel_verdict, law_comparison};

#[test]
fn snapshot_covers_the_lattice() {
    let s = field_snapshot(3, 1.0, 8, 1.0, 0.5, 4).unwrap();
    assert_eq!(s.side, 7);
    assert_eq!(s.values.len(), 49);
    assert!(s.min < s.max);
    assert!(s.values.iter().all(|v| (s.min..=s.max).contains(v)));
}

#[test]
fn verdict_splits_at_two() {
    assert_eq!(kernel_verdict(3, 1.5).unwrap().verdict, Verdict::Converged);
    assert_ne!(kernel_verdict(3, 2.5).unwrap().verdict, Verdict::Converged);
}

#[test]
fn law_curves_line_up() {
    let c = law_comparison(2, 1.0, 8, 2000, 1, 100).unwrap();
    assert!(c.x.len() <= 100 && c.x.len() > 10);
    assert_eq!(c.x.len(), c.kde.len());
    assert_eq!(c.x.len(), c.normal.len());
    assert!(c.oracle_variance > 0.0);
}

#[test]
fn bad_input_is_an_error() {
    assert!(kernel_verdict(3, -1.0).is_err());
    assert!(field_snapshot(2, 5.0, 8, 1.0, 0.0, 0).is_err());
}
