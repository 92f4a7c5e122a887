//! Number formatting shared by every text artifact.

/// Significant digits used when emitting embedding values.
pub const EMBEDDING_SIG_DIGITS: usize = 6;

/// Formats `v` rounded to `digits` significant digits, using plain decimal
/// notation for moderate magnitudes and exponent notation otherwise.
///
/// The output parses back to the rounded value exactly.
pub fn sig(v: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{:.*e}", digits - 1, v)
        .parse()
        .expect("exponent notation always parses");
    let mag = rounded.abs();
    if (1e-4..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Shortest round-trip representation; `NA` for missing values.
pub fn full(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

/// Parses a value written by [`full`].
pub fn parse_full(s: &str) -> Option<Option<f64>> {
    let s = s.trim();
    if s == "NA" {
        return Some(None);
    }
    s.parse::<f64>().ok().map(Some)
}
