//! Float formatting shared by file outputs and the wire protocol.

/// Shortest decimal string that parses back to exactly `v`.
///
/// Plain notation for moderate magnitudes, scientific otherwise.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_owned();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_owned();
    }
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}
