use super::{FrequencyTrace, Resonance, ResonanceMethod, Side, TraceError};

/// Default minimum peak prominence for [`find_resonances`], dB.
pub const DEFAULT_PROMINENCE_DB: f64 = 3.0;
/// Half-power drop, `10·log10(2)` dB.
pub const HALF_POWER_DB: f64 = 3.010_299_956_639_812;
/// Insertion loss above which unloading is flagged as near-critical.
pub const NEAR_CRITICAL_IL: f64 = 0.9;

/// Indices of local maxima of `|S21|` (dB) with prominence of at least
/// `min_prominence_db`, in frequency order.
///
/// Prominence is the height of a peak above the higher of the two minima
/// that separate it from taller terrain (or the trace ends) on each side.
/// Flat-topped peaks report the middle sample of the plateau. Maxima on the
/// first or last sample are never reported.
pub fn find_resonances(trace: &FrequencyTrace, min_prominence_db: f64) -> Vec<usize> {
    let db = trace.s21_db();
    let n = db.len();
    let mut peaks = Vec::new();
    if n < 3 {
        return peaks;
    }
    let mut i = 1;
    while i < n - 1 {
        if db[i - 1] < db[i] {
            let mut ahead = i + 1;
            while ahead < n - 1 && db[ahead] == db[i] {
                ahead += 1;
            }
            if db[ahead] < db[i] {
                let peak = (i + ahead - 1) / 2;
                if prominence(&db, peak) >= min_prominence_db {
                    peaks.push(peak);
                }
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

fn prominence(db: &[f64], peak: usize) -> f64 {
    let height = db[peak];
    let mut left_min = height;
    for &v in db[..peak].iter().rev() {
        if v > height {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = height;
    for &v in &db[peak + 1..] {
        if v > height {
            break;
        }
        right_min = right_min.min(v);
    }
    height - left_min.max(right_min)
}

/// Vertex of the parabola through three points, as `(x, y)`. `None` when
/// the points are not strictly concave.
fn parabolic_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    // work relative to the middle abscissa to keep the arithmetic small
    let (u0, u2) = (x[0] - x[1], x[2] - x[1]);
    let (d0, d2) = (y[0] - y[1], y[2] - y[1]);
    // y - y1 = a u² + b u
    let det = u0 * u2 * (u0 - u2);
    if det == 0.0 {
        return None;
    }
    let a = (d0 * u2 - d2 * u0) / det;
    let b = (d2 * u0 * u0 - d0 * u2 * u2) / det;
    if !(a < 0.0) {
        return None;
    }
    let u = -b / (2.0 * a);
    if u < u0 || u > u2 {
        return None;
    }
    Some((x[1] + u, y[1] + a * u * u + b * u))
}

fn crossing(freqs: &[f64], db: &[f64], peak: usize, level: f64, side: Side) -> Result<f64, TraceError> {
    let n = db.len();
    let mut j = peak;
    loop {
        let next = match side {
            Side::Lower if j > 0 => j - 1,
            Side::Upper if j + 1 < n => j + 1,
            _ => return Err(TraceError::InsufficientSpan(side)),
        };
        if db[next] < level {
            // linear interpolation between `next` (below) and `j` (at or above)
            let t = (level - db[next]) / (db[j] - db[next]);
            return Ok(freqs[next] + t * (freqs[j] - freqs[next]));
        }
        j = next;
    }
}

/// Resonance from the half-power bandwidth around `peak_index`.
pub fn q_3db(trace: &FrequencyTrace, peak_index: usize) -> Result<Resonance, TraceError> {
    let n = trace.len();
    if peak_index == 0 || peak_index + 1 >= n {
        return Err(TraceError::BadPeakIndex(peak_index));
    }
    let freqs = trace.freqs();
    let db = trace.s21_db();
    let k = peak_index;
    let (f0, peak_db) = parabolic_vertex([freqs[k - 1], freqs[k], freqs[k + 1]], [db[k - 1], db[k], db[k + 1]])
        .unwrap_or((freqs[k], db[k]));
    let level = peak_db - HALF_POWER_DB;
    let f_lo = crossing(freqs, &db, k, level, Side::Lower)?;
    let f_hi = crossing(freqs, &db, k, level, Side::Upper)?;
    let q_loaded = f0 / (f_hi - f_lo);
    let il_linear = 10f64.powf(peak_db / 20.0);
    Resonance::new(f0, q_loaded, il_linear, ResonanceMethod::ThreeDb)
}

/// Unloaded Q together with the near-critical-coupling flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnloadedQ {
    pub q0: f64,
    pub near_critical: bool,
}

/// `Q₀ = Q_L/(1 - IL)` for symmetric two-port coupling.
pub fn unload_q(q_loaded: f64, il_linear: f64) -> Result<UnloadedQ, TraceError> {
    if !(q_loaded.is_finite() && q_loaded > 0.0) {
        return Err(TraceError::InvalidResonance(format!(
            "loaded Q must be positive, got {q_loaded}"
        )));
    }
    if il_linear >= 1.0 {
        return Err(TraceError::OverCoupled(il_linear));
    }
    if !(il_linear >= 0.0) {
        return Err(TraceError::InvalidResonance(format!(
            "insertion loss must be non-negative, got {il_linear}"
        )));
    }
    Ok(UnloadedQ {
        q0: q_loaded / (1.0 - il_linear),
        near_critical: il_linear > NEAR_CRITICAL_IL,
    })
}
