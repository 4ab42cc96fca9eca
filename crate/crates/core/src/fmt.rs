/// Formats a float with 17 significant digits, which round-trips every f64.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}
