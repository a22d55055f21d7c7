//! Reals on the wire carry 9 significant digits.

use serde::Serializer;

pub(crate) fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    // `{:.8e}` is exactly 9 significant digits; parsing it back gives the
    // nearest f64, whose shortest representation has at most 9 digits.
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub(crate) fn f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*x))
}

pub(crate) fn vec_f64<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(|&x| round_sig9(x)))
}
