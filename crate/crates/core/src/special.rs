//! Special functions.

use crate::error::{Error, Result};

// B_{2j} / (2j)! for j = 1..=10
const BERNOULLI_OVER_FACTORIAL: [f64; 10] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
    43867.0 / 5109094217170944000.0,
    -174611.0 / 802857662698291200000.0,
];

/// Hurwitz zeta function `sum_{n>=0} (n + a)^{-s}` for `s > 1`, `a > 0`.
///
/// Sums the head directly and replaces the tail by its Euler-Maclaurin
/// expansion, which is accurate to roundoff once the cut point exceeds
/// both 20 and `s`.
pub fn hurwitz_zeta(s: f64, a: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::Domain(format!("hurwitz_zeta needs s > 1, got {s}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("hurwitz_zeta needs a > 0, got {a}")));
    }
    let cut = 20.0f64.max(s + 10.0);
    let head_terms = (cut - a).ceil().max(0.0) as u64;
    let mut head = 0.0;
    // smallest terms first
    for n in (0..head_terms).rev() {
        head += (n as f64 + a).powf(-s);
    }
    let x = a + head_terms as f64;
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // rising factorial s (s+1) ... (s+2j-2) times x^{-s-2j+1}
    let mut factor = s * x.powf(-s - 1.0);
    for (j, b) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        let term = b * factor;
        tail += term;
        if term.abs() < 1e-18 * tail.abs() {
            break;
        }
        let k = 2.0 * j as f64;
        factor *= (s + k + 1.0) * (s + k + 2.0) / (x * x);
    }
    Ok(head + tail)
}
