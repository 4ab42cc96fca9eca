//! Projection dimensionality from the Johnson–Lindenstrauss bound.
//!
//! The bound used throughout is `p = 12 log N / (ε² (1.5 − ε))`, which is the
//! same quantity as `24 log N / (3ε² − 2ε³)`. The logarithm is base 10: it is
//! the only base that reproduces the published (N, ε, p) triples, e.g.
//! N = 50000 gives p = 522 at ε = 0.3 and p = 320 at ε = 0.4.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::format_f64;

/// Base of the logarithm in the dimension bound.
pub const LOG_BASE: f64 = 10.0;

/// Default relative flatness threshold for [`select_epsilon`].
pub const DEFAULT_FLATNESS_TOL: f64 = 0.01;

/// Interval the selected ε is clamped into.
pub const EPSILON_INTERVAL: (f64, f64) = (0.3, 0.4);

const SCAN_START: f64 = 0.05;
const SCAN_END: f64 = 0.95;
const SCAN_STEP: f64 = 0.005;

/// A distortion budget strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PerturbationBudget(f64);

impl PerturbationBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon < 1.0 {
            Ok(Self(epsilon))
        } else {
            Err(Error::invalid(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Selected ε together with the dimensionality and slope it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionSelection {
    pub n_samples: usize,
    pub epsilon: PerturbationBudget,
    pub p: usize,
    pub derivative: f64,
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

/// Un-rounded bound `12 log N / (ε² (1.5 − ε))`.
pub fn jl_dimension_real(n: usize, eps: PerturbationBudget) -> Result<f64> {
    check_n(n)?;
    let e = eps.value();
    Ok(12.0 * (n as f64).log(LOG_BASE) / (e * e * (1.5 - e)))
}

/// Projection dimensionality, rounded to the nearest integer.
pub fn jl_min_dimension(n: usize, eps: PerturbationBudget) -> Result<usize> {
    let p = jl_dimension_real(n, eps)?.round();
    Ok((p as usize).max(1))
}

/// Closed-form `dp/dε = 36 log N (ε − 1) / (ε³ (1.5 − ε)²)`; negative on (0, 1).
pub fn jl_dimension_derivative(n: usize, eps: PerturbationBudget) -> Result<f64> {
    check_n(n)?;
    let e = eps.value();
    let shifted = 1.5 - e;
    Ok(36.0 * (n as f64).log(LOG_BASE) * (e - 1.0) / (e * e * e * shifted * shifted))
}

/// Picks ε where the dimension curve flattens, clamped into [0.3, 0.4].
///
/// Scans ε from 0.05 to 0.95 in steps of 0.005 and returns the first point
/// where `|dp/dε|` drops below `flatness_tol · |dp/dε(0.05)|`.
pub fn select_epsilon(n: usize, flatness_tol: f64) -> Result<PerturbationBudget> {
    select_epsilon_with_step(n, flatness_tol, SCAN_STEP)
}

pub(crate) fn select_epsilon_with_step(
    n: usize,
    flatness_tol: f64,
    step: f64,
) -> Result<PerturbationBudget> {
    if !(flatness_tol > 0.0) {
        return Err(Error::invalid(format!(
            "flatness tolerance must be positive, got {flatness_tol}"
        )));
    }
    check_n(n)?;
    let reference = jl_dimension_derivative(n, PerturbationBudget(SCAN_START))?.abs();
    let threshold = flatness_tol * reference;
    let steps = ((SCAN_END - SCAN_START) / step).round() as usize;
    let mut chosen = SCAN_END;
    for k in 0..=steps {
        let e = SCAN_START + k as f64 * step;
        if jl_dimension_derivative(n, PerturbationBudget(e))?.abs() < threshold {
            chosen = e;
            break;
        }
    }
    let (lo, hi) = EPSILON_INTERVAL;
    Ok(PerturbationBudget(chosen.clamp(lo, hi)))
}

/// Runs [`select_epsilon`] and evaluates the bound at the result.
pub fn select_dimension(n: usize, flatness_tol: f64) -> Result<DimensionSelection> {
    let epsilon = select_epsilon(n, flatness_tol)?;
    Ok(DimensionSelection {
        n_samples: n,
        epsilon,
        p: jl_min_dimension(n, epsilon)?,
        derivative: jl_dimension_derivative(n, epsilon)?,
    })
}

/// The ε in (0, 1) at which the un-rounded bound equals `p`, or `None` when
/// `p` is below the bound's limit `24 log N` as ε → 1.
pub fn epsilon_for_dimension(n: usize, p: usize) -> Result<Option<PerturbationBudget>> {
    check_n(n)?;
    let target = p as f64;
    let real = |e: f64| 12.0 * (n as f64).log(LOG_BASE) / (e * e * (1.5 - e));
    if target <= real(1.0) {
        return Ok(None);
    }
    // the bound decreases in ε on (0, 1)
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if real(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(PerturbationBudget(0.5 * (lo + hi))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epsilon: f64,
    pub p: usize,
    pub derivative: f64,
}

/// Tabulates `(ε, p, dp/dε)` over `grid`, sorted by ε.
pub fn emit_dimension_curve(n: usize, grid: &[PerturbationBudget]) -> Result<Vec<CurveRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("epsilon grid is empty"));
    }
    let mut eps: Vec<PerturbationBudget> = grid.to_vec();
    eps.sort_by(|a, b| a.0.total_cmp(&b.0));
    eps.into_iter()
        .map(|e| {
            Ok(CurveRow {
                epsilon: e.value(),
                p: jl_min_dimension(n, e)?,
                derivative: jl_dimension_derivative(n, e)?,
            })
        })
        .collect()
}

/// Writes the curve as CSV with header `epsilon,p,dp_deps`.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> std::io::Result<()> {
    out.write_all(b"epsilon,p,dp_deps\n")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            format_f64(r.epsilon),
            r.p,
            format_f64(r.derivative)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps(e: f64) -> PerturbationBudget {
        PerturbationBudget::new(e).unwrap()
    }

    #[test]
    fn published_dimensions() {
        assert_eq!(jl_min_dimension(50000, eps(0.3)).unwrap(), 522);
        assert_eq!(jl_min_dimension(50000, eps(0.4)).unwrap(), 320);
        assert_eq!(jl_min_dimension(13104, eps(0.3)).unwrap(), 457);
        assert_eq!(jl_min_dimension(13104, eps(0.4)).unwrap(), 281);
        assert_eq!(jl_min_dimension(1939, eps(0.3)).unwrap(), 365);
    }

    #[test]
    fn hand_evaluated_values() {
        assert_eq!(jl_min_dimension(10, eps(0.5)).unwrap(), 48);
        let d = jl_dimension_derivative(100, eps(0.5)).unwrap();
        assert!((d + 288.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn derivative_vanishes_towards_one() {
        let d = jl_dimension_derivative(1000, eps(1.0 - 1e-9)).unwrap();
        assert!(d < 0.0 && d > -1e-6, "{d}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(PerturbationBudget::new(0.0).is_err());
        assert!(PerturbationBudget::new(1.0).is_err());
        assert!(PerturbationBudget::new(f64::NAN).is_err());
        assert!(jl_min_dimension(1, eps(0.3)).is_err());
        assert!(jl_dimension_derivative(0, eps(0.3)).is_err());
        assert!(select_epsilon(100, 0.0).is_err());
        assert!(emit_dimension_curve(100, &[]).is_err());
    }

    #[test]
    fn selected_epsilon_is_clamped() {
        for n in [100, 50000] {
            let e = select_epsilon(n, DEFAULT_FLATNESS_TOL).unwrap().value();
            assert!((0.3..=0.4).contains(&e), "{e}");
        }
        // a very tight tolerance never flattens inside the scan
        let e = select_epsilon(100, 1e-9).unwrap().value();
        assert_eq!(e, 0.4);
    }

    #[test]
    fn selection_stable_under_grid_refinement() {
        for tol in [0.01, 0.001, 0.0005, 0.05] {
            let coarse = select_epsilon_with_step(5000, tol, 0.005).unwrap().value();
            let fine = select_epsilon_with_step(5000, tol, 0.001).unwrap().value();
            assert!((coarse - fine).abs() <= 0.005 + 1e-12, "{tol}: {coarse} vs {fine}");
        }
    }

    #[test]
    fn curve_rows_sorted_and_monotone() {
        let rows = emit_dimension_curve(50000, &[eps(0.4), eps(0.3)]).unwrap();
        assert_eq!(rows.iter().map(|r| r.p).collect::<Vec<_>>(), vec![522, 320]);
        assert_eq!(emit_dimension_curve(50000, &[eps(0.5)]).unwrap().len(), 1);

        let grid: Vec<_> = (0..100).map(|i| eps(0.005 + 0.0099 * i as f64)).collect();
        let rows = emit_dimension_curve(777, &grid).unwrap();
        for w in rows.windows(2) {
            assert!(w[0].epsilon < w[1].epsilon);
            assert!(w[0].p >= w[1].p);
            assert!(w[0].derivative < 0.0);
        }
    }

    #[test]
    fn epsilon_inverts_the_bound() {
        let e = epsilon_for_dimension(50000, 320).unwrap().unwrap().value();
        assert_eq!(jl_min_dimension(50000, eps(e)).unwrap(), 320);
        let real = jl_dimension_real(50000, eps(e)).unwrap();
        assert!((real - 320.0).abs() < 1e-9);
        assert!(epsilon_for_dimension(100, 40).unwrap().is_none());
    }

    #[test]
    fn curve_csv_format() {
        let rows = emit_dimension_curve(50000, &[eps(0.3)]).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epsilon,p,dp_deps"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1], "522");
        assert_eq!(row[0].parse::<f64>().unwrap(), 0.3);
        assert!(!text.contains('\r'));
    }
}
