use icpi::prompting::{format_values, parse_values, parse_values_strict, NumberFormat, PromptError};
use proptest::prelude::*;

#[test]
fn sample_responses_parse() {
    assert_eq!(parse_values("0.004 -0.011 -0.060", 3).unwrap(), vec![0.004, -0.011, -0.060]);
    assert_eq!(parse_values("0.153 0.112 0.825", 3).unwrap(), vec![0.153, 0.112, 0.825]);
    assert_eq!(parse_values("0.000 0.350 0.780", 3).unwrap(), vec![0.0, 0.35, 0.78]);
}

#[test]
fn parser_skips_prose() {
    let text = "Looking at the pattern, the answer is\n\nOUTPUTS: 0.1, -0.2 and 3\n";
    assert_eq!(parse_values(text, 3).unwrap(), vec![0.1, -0.2, 3.0]);
    assert!(matches!(parse_values("just 1 2", 3), Err(PromptError::Arity { .. })));
    assert!(parse_values_strict("0.1 0.2 0.3 0.4", 3).is_err());
}

#[test]
fn fixed_point_examples() {
    assert_eq!(format_values(&[0.0005, -0.0005, -0.0004], 3).unwrap(), "0.001 -0.001 0.000");
    assert_eq!(format_values(&[1.0, -2.5, 0.12345], 3).unwrap(), "1.000 -2.500 0.123");
    let signed = NumberFormat {
        normalize_negative_zero: false,
        ..NumberFormat::default()
    };
    assert_eq!(signed.value(-0.0004).unwrap(), "-0.000");
    assert!(format_values(&[f64::NAN], 3).is_err());
}

proptest! {
    #[test]
    fn format_parse_round_trip(xs in proptest::collection::vec(-100.0..100.0f64, 1..8)) {
        let text = format_values(&xs, 3).unwrap();
        let back = parse_values_strict(&text, xs.len()).unwrap();
        for (x, y) in xs.iter().zip(&back) {
            prop_assert!((x - y).abs() <= 5e-4 + 1e-12);
        }
        prop_assert_eq!(format_values(&back, 3).unwrap(), text);
    }

    #[test]
    fn formatted_values_have_three_decimals(x in -1e6..1e6f64) {
        let s = format_values(&[x], 3).unwrap();
        let (_, frac) = s.split_once('.').unwrap();
        prop_assert_eq!(frac.len(), 3);
        prop_assert!(s != "-0.000");
    }
}
