//! Least-squares recovery of the occupancy-recursion coefficients from
//! simulated trajectories.
//!
//! The design matrix is [queue, occupancy, 1] per sample and the target is
//! the next-step occupancy, fit per arm. Samples whose next occupancy was
//! clamped at the unit bounds carry no gradient information for the linear
//! law, so they are excluded and the exclusion is reported.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// One (Q_t, O_t, O_{t+1}) training triple.
#[derive(Debug, Clone, Copy)]
pub struct RegressionSample<S: Scalar> {
    pub q: S,
    pub o: S,
    pub o_next: S,
    /// True when o_next was clamped at 0 or 1 by the plant.
    pub clamped: bool,
}

/// Fitted coefficients with residual error and sample accounting.
#[derive(Debug, Clone, Copy)]
pub struct FitResult<S: Scalar> {
    pub k: S,
    pub beta: S,
    pub lambda: S,
    pub rmse: S,
    /// Samples actually used.
    pub n: usize,
    /// Samples dropped because their target was clamped.
    pub excluded: usize,
}

const COLUMN_NAMES: [&str; 3] = ["q", "o", "intercept"];
const PIVOT_TOL: f64 = 1e-10;

/// Solves the normalized normal equations by Gaussian elimination with
/// partial pivoting. Entries are divided by the sample count first so the
/// pivot tolerance applies to O(1) quantities.
fn solve3<S: Scalar>(mut a: [[S; 3]; 3], mut b: [S; 3]) -> Result<[S; 3]> {
    for j in 0..3 {
        let mut best = j;
        for r in (j + 1)..3 {
            if a[r][j].abs() > a[best][j].abs() {
                best = r;
            }
        }
        if a[best][j].abs() < S::of(PIVOT_TOL) {
            return Err(Error::DegenerateData(format!(
                "design matrix is rank deficient: column '{}' is collinear with the others \
                 (pivot {} below {PIVOT_TOL})",
                COLUMN_NAMES[j],
                a[best][j].abs()
            )));
        }
        if best != j {
            a.swap(j, best);
            b.swap(j, best);
        }
        for r in (j + 1)..3 {
            let m = a[r][j] / a[j][j];
            let pivot_row = a[j];
            for (entry, pivot) in a[r].iter_mut().zip(pivot_row).skip(j) {
                let t = m * pivot;
                *entry -= t;
            }
            let t = m * b[j];
            b[r] -= t;
        }
    }
    let mut x = [S::zero(); 3];
    for j in (0..3).rev() {
        let mut acc = b[j];
        for c in (j + 1)..3 {
            acc -= a[j][c] * x[c];
        }
        x[j] = acc / a[j][j];
    }
    Ok(x)
}

/// Fits O_next = k q + beta o + lambda by ordinary least squares.
pub fn fit_occupancy_params<S: Scalar>(samples: &[RegressionSample<S>]) -> Result<FitResult<S>> {
    let excluded = samples.iter().filter(|s| s.clamped).count();
    let used: Vec<&RegressionSample<S>> = samples.iter().filter(|s| !s.clamped).collect();
    if used.len() < 3 {
        return Err(Error::DegenerateData(format!(
            "need at least 3 unclamped samples, got {} ({} excluded as clamped)",
            used.len(),
            excluded
        )));
    }
    for s in &used {
        for (name, v) in [("q", s.q), ("o", s.o), ("o_next", s.o_next)] {
            if !v.is_finite() {
                return Err(Error::DegenerateData(format!(
                    "non-finite {name} sample: {v}"
                )));
            }
        }
    }
    let n = S::of(used.len() as f64);
    let mut sqq = S::zero();
    let mut sqo = S::zero();
    let mut sq = S::zero();
    let mut soo = S::zero();
    let mut so = S::zero();
    let mut sqy = S::zero();
    let mut soy = S::zero();
    let mut sy = S::zero();
    for s in &used {
        sqq += s.q * s.q;
        sqo += s.q * s.o;
        sq += s.q;
        soo += s.o * s.o;
        so += s.o;
        sqy += s.q * s.o_next;
        soy += s.o * s.o_next;
        sy += s.o_next;
    }
    let a = [
        [sqq / n, sqo / n, sq / n],
        [sqo / n, soo / n, so / n],
        [sq / n, so / n, S::one()],
    ];
    let b = [sqy / n, soy / n, sy / n];
    let theta = solve3(a, b)?;
    let mut ss = S::zero();
    for s in &used {
        let e = s.o_next - (theta[0] * s.q + theta[1] * s.o + theta[2]);
        ss += e * e;
    }
    Ok(FitResult {
        k: theta[0],
        beta: theta[1],
        lambda: theta[2],
        rmse: (ss / n).sqrt(),
        n: used.len(),
        excluded,
    })
}

/// Reporting form of a fit, fixed at f64 for serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub k: f64,
    pub beta: f64,
    pub lambda: f64,
    pub rmse: f64,
    pub n: usize,
    pub excluded: usize,
}

/// Converts a fit into its reporting record.
pub fn fit_report<S: Scalar>(fit: &FitResult<S>) -> FitReport {
    FitReport {
        k: fit.k.to_f64_lossy(),
        beta: fit.beta.to_f64_lossy(),
        lambda: fit.lambda.to_f64_lossy(),
        rmse: fit.rmse.to_f64_lossy(),
        n: fit.n,
        excluded: fit.excluded,
    }
}

impl core::fmt::Display for FitReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "k = {}\nbeta = {}\nlambda = {}\nrmse = {}\nn = {}\nexcluded = {}",
            self.k, self.beta, self.lambda, self.rmse, self.n, self.excluded
        )
    }
}
