//! Parameter counts against closed forms and frozen regression values.

mod common;

use common::params::{built_count, closed_forms, dsc, dsc_smaller, standard, DENMARK_SHAPE};
use windcast::model::ModelKind;

#[test]
fn builders_match_closed_forms() {
    for r in closed_forms() {
        assert!(r.passed, "{r}");
    }
}

#[test]
fn dsc_is_cheaper_than_standard_convolution() {
    let r = dsc_smaller();
    assert!(r.passed, "{r}");
    assert_eq!((dsc(5, 16), standard(5, 16)), (157, 752));
}

#[test]
fn published_counts_are_reported_not_matched() {
    // the published table is under-specified; ours differ and are printed
    // beside it by the acceptance report
    let (shape, targets) = DENMARK_SHAPE;
    for kind in ModelKind::TRAINABLE {
        let (dk, nl) = kind.published_parameters().unwrap();
        assert!(dk > 0 && nl > dk);
        assert!(built_count(kind, shape, targets) > 0);
    }
    assert_eq!(ModelKind::Persistence.published_parameters(), None);
}
