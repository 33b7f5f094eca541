//! C-style scientific notation (`1.50000000e+00`) for the text file formats.

use std::fmt::Write;

/// Writes `v` with `sig` significant digits and a signed, at least
/// two-digit exponent. Rust's `{:e}` gives the digits but not the exponent
/// shape, so the exponent is rewritten.
pub fn push_sci(out: &mut String, v: f64, sig: usize) {
    let mut buf = String::with_capacity(24);
    write!(buf, "{:.*e}", sig - 1, v).unwrap();
    push_exponent_fixed(out, &buf);
}

/// Same as [`push_sci`] but formats the value at 32-bit precision so the
/// shortest digits of the `f32` are used, not those of its `f64` widening.
pub fn push_sci_f32(out: &mut String, v: f32, sig: usize) {
    let mut buf = String::with_capacity(20);
    write!(buf, "{:.*e}", sig - 1, v).unwrap();
    push_exponent_fixed(out, &buf);
}

fn push_exponent_fixed(out: &mut String, rust_sci: &str) {
    let (mantissa, exp) = rust_sci
        .split_once('e')
        .expect("LowerExp emits an exponent");
    out.push_str(mantissa);
    out.push('e');
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    out.push(sign);
    if digits.len() < 2 {
        out.push('0');
    }
    out.push_str(digits);
}

pub fn sci(v: f64, sig: usize) -> String {
    let mut s = String::new();
    push_sci(&mut s, v, sig);
    s
}

pub fn sci_f32(v: f32, sig: usize) -> String {
    let mut s = String::new();
    push_sci_f32(&mut s, v, sig);
    s
}
