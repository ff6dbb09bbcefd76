//! Renderer geometry and annotation freedom over sampled specs.

mod common;

use chartforge_core::renderer::render;
use common::geometry::{check, leaked_values};

#[test]
fn marks_map_back_to_values_over_500_specs() {
    let specs = common::spec_stream(500, 0x5eed);
    let mut total = 0;
    for spec in &specs {
        let n = check(spec);
        assert!(n > 0, "{}: no marks found", spec.id);
        total += n;
    }
    assert!(total > 2000, "only {total} marks checked");
}

#[test]
fn no_text_node_prints_a_data_value() {
    for spec in common::spec_stream(500, 0xa11d17) {
        let leaks = leaked_values(&spec);
        assert!(leaks.is_empty(), "{}: text nodes print data values {leaks:?}", spec.id);
    }
}

#[test]
fn rendering_is_byte_stable() {
    for spec in common::spec_stream(70, 9) {
        assert_eq!(render(&spec).unwrap().svg_text, render(&spec).unwrap().svg_text);
    }
}
