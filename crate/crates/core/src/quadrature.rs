//! Composite Gauss–Legendre product rules on axis-aligned boxes.
//!
//! Each axis is split into `cells` equal sub-intervals carrying a 4-point
//! Gauss–Legendre rule. Summation order is fixed, so results are bitwise
//! reproducible for a given cell count.

/// Nodes of the 4-point rule on [-1, 1].
const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_85,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_85,
];

/// Nodes per cell along one axis.
pub const NODES_PER_CELL: usize = GL4_NODES.len();

/// Abscissae and weights of the composite rule on `[lo, hi]`.
pub fn composite_rule(lo: f64, hi: f64, cells: usize) -> Vec<(f64, f64)> {
    assert!(cells > 0, "composite rule needs at least one cell");
    let width = (hi - lo) / cells as f64;
    let half = 0.5 * width;
    let mut out = Vec::with_capacity(cells * NODES_PER_CELL);
    for c in 0..cells {
        let mid = lo + (c as f64 + 0.5) * width;
        for (t, w) in GL4_NODES.iter().zip(GL4_WEIGHTS.iter()) {
            out.push((mid + half * t, half * w));
        }
    }
    out
}

/// Integral of `f(x, z)` over `[x0, x1] × [z0, z1]` with the product rule.
pub fn integrate_2d<F>(f: F, x_range: (f64, f64), z_range: (f64, f64), cells: usize) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let xs = composite_rule(x_range.0, x_range.1, cells);
    let zs = composite_rule(z_range.0, z_range.1, cells);
    let mut total = 0.0;
    for &(x, wx) in &xs {
        let mut row = 0.0;
        for &(z, wz) in &zs {
            row += wz * f(x, z);
        }
        total += wx * row;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_interval_length() {
        let s: f64 = composite_rule(-0.3, 1.7, 5).iter().map(|(_, w)| w).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_degree_seven() {
        let v: f64 = composite_rule(0.0, 2.0, 1).iter().map(|&(x, w)| w * x.powi(7)).sum();
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn trig_product_converges() {
        let exact = (1.0 - (2.0f64).cos()) * (3.0f64).sin();
        let v = integrate_2d(|x, z| x.sin() * z.cos(), (0.0, 2.0), (0.0, 3.0), 8);
        assert!(((v - exact) / exact).abs() < 1e-12);
    }
}
