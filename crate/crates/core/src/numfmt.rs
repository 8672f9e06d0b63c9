//! Float formatting shared by every CSV writer.

/// Shortest representation that parses back to the identical `f64`.
///
/// Values that need them get all 17 significant digits; short decimal
/// literals such as `0.5` stay short because they are already exact. Very
/// small or large magnitudes switch to scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Normalize -0.0 so byte-identical outputs do not depend on sign of zero.
        return "0".to_string();
    }
    let a = x.abs();
    if a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}
