//! Helpers shared by the integration suites.

use std::time::Instant;

/// Prints the one-line verdict for an acceptance criterion and passes the
/// verdict through so the caller can assert on it. The line appears under
/// `--nocapture` (and for any failing test), one per criterion:
///
/// ```text
/// ACCEPT-3 PASS per-mode variance within 5 SE: worst |z| = 2.1 [4.07 s]
/// ```
#[allow(dead_code)]
pub fn report(criterion: usize, pass: bool, detail: &str, started: Instant) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "ACCEPT-{criterion} {verdict} {detail} [{:.2} s]",
        started.elapsed().as_secs_f64()
    );
    pass
}

/// Ordinary least-squares slope of `ys` against `xs`.
#[allow(dead_code)]
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(xs.len() == ys.len() && xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    sxy / sxx
}
