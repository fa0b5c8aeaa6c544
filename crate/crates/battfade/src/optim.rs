//! Bounded derivative-free simplex minimization (Nelder-Mead).
//!
//! The calibration objectives run simulations, so gradients are unavailable;
//! a simplex search with box bounds covers every fit in this crate. Candidate
//! points are projected onto the bounds, which also handles minima that sit
//! on a bound. The search is fully deterministic: identical inputs produce
//! bit-identical results.

use crate::error::{Error, Result};

/// Termination settings for [`minimize`].
///
/// Convergence requires both geometric and objective agreement: the simplex
/// diameter below `step_tolerance` and the objective spread below
/// `objective_tolerance * max(1, |f_best|)`. Either alone stops too early
/// (a simplex straddling a symmetric minimum has near-zero spread at a
/// large diameter).
#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Simplex diameter (max-norm) convergence threshold.
    pub step_tolerance: f64,
    /// Relative objective-spread convergence threshold.
    pub objective_tolerance: f64,
    /// Iteration cap; hitting it returns `converged = false` with the best
    /// point found.
    pub max_iterations: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            step_tolerance: 1e-8,
            objective_tolerance: 1e-12,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `objective` over the box `bounds` starting from `initial`.
///
/// The returned objective never exceeds the initial objective. `+inf`
/// objective values are legal (infinitely bad candidates, e.g. failed
/// simulations); `NaN` aborts the search with a fit error.
pub fn minimize<F>(
    mut objective: F,
    initial: &[f64],
    bounds: &[(f64, f64)],
    options: &MinimizeOptions,
) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = initial.len();
    if n == 0 {
        return Err(Error::Fit("cannot minimize over zero parameters".into()));
    }
    if bounds.len() != n {
        return Err(Error::Fit(format!(
            "got {} bounds for {n} parameters",
            bounds.len()
        )));
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) {
            return Err(Error::Fit(format!(
                "bound {i} must satisfy low < high, got [{lo}, {hi}]"
            )));
        }
        if !(initial[i] >= lo && initial[i] <= hi) {
            return Err(Error::Fit(format!(
                "initial[{i}] = {} outside bound [{lo}, {hi}]",
                initial[i]
            )));
        }
    }

    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let f = objective(x);
        if f.is_nan() {
            return Err(Error::Fit(format!("objective returned NaN at {x:?}")));
        }
        Ok(f)
    };

    let f0 = eval(initial)?;
    if !f0.is_finite() {
        return Err(Error::Fit(format!(
            "objective must be finite at the initial point, got {f0}"
        )));
    }

    // Initial simplex: perturb each coordinate by 5% of its magnitude
    // (0.00025 absolute when zero), flipping direction at a bound.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((initial.to_vec(), f0));
    for i in 0..n {
        let mut v = initial.to_vec();
        let step = if v[i] != 0.0 { 0.05 * v[i].abs() } else { 2.5e-4 };
        let up = (v[i] + step).min(bounds[i].1);
        v[i] = if up > initial[i] {
            up
        } else {
            (initial[i] - step).max(bounds[i].0)
        };
        let f = eval(&v)?;
        simplex.push((v, f));
    }
    sort_simplex(&mut simplex);

    let mut iterations = 0usize;
    let converged = loop {
        let diameter = simplex_diameter(&simplex);
        let spread = simplex[n].1 - simplex[0].1;
        let scale = simplex[0].1.abs().max(1.0);
        if diameter < options.step_tolerance && spread <= options.objective_tolerance * scale {
            break true;
        }
        if iterations >= options.max_iterations {
            break false;
        }
        iterations += 1;

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }

        let worst = simplex[n].0.clone();
        let f_best = simplex[0].1;
        let f_second = simplex[n - 1].1;
        let f_worst = simplex[n].1;

        let reflected = combine(&centroid, &worst, 2.0, -1.0, bounds);
        let f_reflected = eval(&reflected)?;

        if f_reflected < f_best {
            // Greedy expansion.
            let expanded = combine(&centroid, &worst, 3.0, -2.0, bounds);
            let f_expanded = eval(&expanded)?;
            if f_expanded < f_reflected {
                simplex[n] = (expanded, f_expanded);
            } else {
                simplex[n] = (reflected, f_reflected);
            }
        } else if f_reflected < f_second {
            simplex[n] = (reflected, f_reflected);
        } else {
            let (contracted, f_contracted) = if f_reflected < f_worst {
                // Outside contraction, halfway to the reflected point.
                let c = combine(&centroid, &reflected, 0.5, 0.5, bounds);
                let f = eval(&c)?;
                (c, f)
            } else {
                // Inside contraction, halfway back to the worst point.
                let c = combine(&centroid, &worst, 0.5, 0.5, bounds);
                let f = eval(&c)?;
                (c, f)
            };
            if f_contracted < f_worst.min(f_reflected) {
                simplex[n] = (contracted, f_contracted);
            } else {
                // Shrink everything toward the best vertex.
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let shrunk = combine(&best, &vertex.0, 0.5, 0.5, bounds);
                    let f = eval(&shrunk)?;
                    *vertex = (shrunk, f);
                }
            }
        }
        sort_simplex(&mut simplex);
    };

    Ok(MinimizeResult {
        x: simplex[0].0.clone(),
        objective: simplex[0].1,
        iterations,
        evaluations,
        converged,
    })
}

/// `a * wa + b * wb`, projected onto the bounds box.
fn combine(a: &[f64], b: &[f64], wa: f64, wb: f64, bounds: &[(f64, f64)]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .zip(bounds)
        .map(|((&x, &y), &(lo, hi))| (x * wa + y * wb).clamp(lo, hi))
        .collect()
}

fn sort_simplex(simplex: &mut [(Vec<f64>, f64)]) {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
}

fn simplex_diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(v, _)| {
            v.iter()
                .zip(best)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
