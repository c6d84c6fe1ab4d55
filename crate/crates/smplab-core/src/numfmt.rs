//! Deterministic text formatting for experiment artifacts.
//!
//! Every float written to a CSV or summary goes through [`fmt_float`]:
//! 17 significant digits round-trip an f64 exactly, and the fixed layout makes
//! re-runs byte-comparable.

/// Formats with 17 significant digits in scientific notation.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Joins already-formatted fields into one CSV line (comma separator, LF).
pub fn csv_line(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for &x in &[
            0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            1.0e-300,
            -3.725290298461914e-9,
            0.1 + 0.2,
        ] {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s} did not round-trip");
        }
    }

    #[test]
    fn csv_line_is_lf_terminated() {
        let line = csv_line(&["a".into(), "b".into()]);
        assert_eq!(line, "a,b\n");
    }
}
