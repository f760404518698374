//! Fixed-precision number formatting for golden-stable output.

/// Significant digits used for every floating-point field the toolkit prints.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Formats `x` in plain decimal notation with [`SIGNIFICANT_DIGITS`]
/// significant digits, e.g. `0.545454545`, `19.3074485`, `1.00000000`.
pub fn sig(x: f64) -> String {
    sig_digits(x, SIGNIFICANT_DIGITS)
}

pub fn sig_digits(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    // Round in scientific notation first so the exponent reflects any carry
    // (9.9999999996 -> 1.00000000e1).
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    if s.starts_with("-0.") && s.bytes().all(|b| matches!(b, b'-' | b'0' | b'.')) {
        s[1..].to_string()
    } else {
        s
    }
}

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant digits, for structured
/// (JSON) output.
pub fn round_sig(x: f64) -> f64 {
    sig(x).parse().unwrap_or(x)
}
