//! Levenberg–Marquardt fit of a single Lorentzian to `|S21|²`.

use nalgebra::{Matrix3, Vector3};

use super::peaks::q_3db;
use super::{FrequencyTrace, Resonance, ResonanceMethod, TraceError};

pub const DEFAULT_WINDOW_BANDWIDTHS: f64 = 5.0;
/// Convergence threshold on the largest relative parameter step.
pub const FIT_TOLERANCE: f64 = 1e-10;
pub const FIT_MAX_ITERATIONS: usize = 100;

const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e12;

/// `|S21(f)|² = A / (1 + 4Q²((f - f0)/f0)²)` with `p = (f0, Q, A)`.
fn model_and_gradient(f: f64, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let (f0, q, amp) = (p[0], p[1], p[2]);
    let x = (f - f0) / f0;
    let d = 1.0 + 4.0 * q * q * x * x;
    let y = amp / d;
    let d2 = d * d;
    let grad = Vector3::new(
        amp * 8.0 * q * q * x * f / (f0 * f0 * d2),
        -amp * 8.0 * q * x * x / d2,
        1.0 / d,
    );
    (y, grad)
}

struct Window<'a> {
    freqs: &'a [f64],
    power: Vec<f64>,
}

impl Window<'_> {
    fn cost(&self, p: &Vector3<f64>) -> f64 {
        self.freqs
            .iter()
            .zip(&self.power)
            .map(|(&f, &y)| {
                let r = model_and_gradient(f, p).0 - y;
                r * r
            })
            .sum()
    }

    /// Normal equations in scaled parameters `θ = p / scale`.
    fn normal_equations(&self, p: &Vector3<f64>, scale: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&f, &y) in self.freqs.iter().zip(&self.power) {
            let (m, g) = model_and_gradient(f, p);
            let j = g.component_mul(scale);
            jtj += j * j.transpose();
            jtr += j * (m - y);
        }
        (jtj, jtr)
    }
}

fn failure(reason: impl Into<String>, fallback: Option<Resonance>) -> TraceError {
    TraceError::FitFailure {
        reason: reason.into(),
        fallback,
    }
}

/// Least-squares Lorentzian fit around `peak_index`, seeded from [`q_3db`].
///
/// The window covers `window_bandwidths` loaded 3-dB bandwidths centered on
/// the 3-dB estimate. On failure the error carries the 3-dB resonance, if
/// one could be computed.
pub fn fit_lorentzian(
    trace: &FrequencyTrace,
    peak_index: usize,
    window_bandwidths: f64,
) -> Result<Resonance, TraceError> {
    if !(window_bandwidths >= 3.0) {
        return Err(failure(
            format!("window must span at least 3 bandwidths, got {window_bandwidths}"),
            None,
        ));
    }
    let seed = q_3db(trace, peak_index).map_err(|e| failure(format!("no 3-dB estimate: {e}"), None))?;

    let half = 0.5 * window_bandwidths * seed.bandwidth();
    let freqs = trace.freqs();
    let lo = freqs.partition_point(|&f| f < seed.f0 - half);
    let hi = freqs.partition_point(|&f| f <= seed.f0 + half);
    if hi - lo < 4 {
        return Err(failure(
            format!("only {} samples inside the fit window", hi - lo),
            Some(seed),
        ));
    }
    let window = Window {
        freqs: &freqs[lo..hi],
        power: trace.s21()[lo..hi].iter().map(|s| s.norm_sqr()).collect(),
    };

    let scale = Vector3::new(seed.f0, seed.q_loaded, seed.il_linear * seed.il_linear);
    let mut p = scale;
    let mut cost = window.cost(&p);
    let mut lambda = LAMBDA_START;

    for _ in 0..FIT_MAX_ITERATIONS {
        let (jtj, jtr) = window.normal_equations(&p, &scale);
        let converged;
        loop {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(f64::MIN_POSITIVE);
            }
            let step = damped
                .lu()
                .solve(&(-jtr))
                .ok_or_else(|| failure("singular normal equations (no curvature in window)", Some(seed)))?;
            let candidate = p + step.component_mul(&scale);
            let rel_change = (0..3)
                .map(|k| (step[k] * scale[k] / candidate[k]).abs())
                .fold(0.0, f64::max);
            if candidate.iter().any(|v| !v.is_finite()) || candidate[1] <= 0.0 {
                lambda *= 10.0;
            } else {
                let new_cost = window.cost(&candidate);
                if new_cost <= cost {
                    p = candidate;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    converged = rel_change < FIT_TOLERANCE;
                    break;
                }
                if rel_change < FIT_TOLERANCE {
                    converged = true;
                    break;
                }
                lambda *= 10.0;
            }
            if lambda > LAMBDA_MAX {
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }

    if p.iter().any(|v| !v.is_finite()) || p[1] <= 0.0 || p[2] <= 0.0 {
        return Err(failure(
            format!("fit diverged to f0 = {}, Q = {}, A = {}", p[0], p[1], p[2]),
            Some(seed),
        ));
    }
    Resonance::new(p[0], p[1], p[2].sqrt(), ResonanceMethod::LorentzianFit)
        .map_err(|e| failure(format!("fitted parameters rejected: {e}"), Some(seed)))
}
