//! Text formatting shared by every CSV this crate writes.

/// Formats like C's `%.17g`: 17 significant digits, fixed or exponent
/// notation by magnitude, trailing zeros removed. Round-trips every `f64`.
pub fn g17(v: f64) -> String {
    const PREC: i32 = 17;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..PREC).contains(&exp) {
        let fixed = format!("{:.*}", (PREC - 1 - exp) as usize, v);
        trim_fraction(&fixed).to_string()
    } else {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

/// Empty string for a missing value, otherwise [`g17`].
pub fn g17_opt(v: Option<f64>) -> String {
    v.map(g17).unwrap_or_default()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
