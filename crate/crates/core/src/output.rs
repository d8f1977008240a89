//! Number formatting shared by every emitted table.

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Comment line recording provenance, written first in every CSV.
pub fn provenance_line(kind: &str, params_hash: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{kind} params_hash={params_hash} seed={s}"),
        None => format!("{kind} params_hash={params_hash}"),
    }
}
