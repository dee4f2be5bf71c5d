//! Weighted isotonic regression by pool-adjacent-violators, with the two bounded
//! variants used by the projection: a constant box, and a bound on the total
//! range `max - min`.

#[derive(Debug, Clone, Copy)]
struct Block {
    wy: f64,
    w: f64,
    len: usize,
}

impl Block {
    fn mean(&self, y_fallback: f64) -> f64 {
        if self.w > 0.0 {
            self.wy / self.w
        } else {
            y_fallback
        }
    }
}

/// Nondecreasing `x` minimizing `sum w_k (x_k - y_k)^2`.
pub fn pav(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    let mut blocks: Vec<Block> = Vec::with_capacity(y.len());
    for (&yk, &wk) in y.iter().zip(w) {
        let mut b = Block { wy: wk * yk, w: wk, len: 1 };
        while let Some(prev) = blocks.last() {
            if prev.mean(yk) >= b.mean(yk) {
                b = Block { wy: prev.wy + b.wy, w: prev.w + b.w, len: prev.len + b.len };
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(b);
    }
    let mut out = Vec::with_capacity(y.len());
    let mut k = 0;
    for b in blocks {
        let fallback = y[k..k + b.len].iter().sum::<f64>() / b.len as f64;
        let v = b.mean(fallback);
        out.extend(std::iter::repeat_n(v, b.len));
        k += b.len;
    }
    out
}

/// Isotonic regression constrained to `[lo, hi]`; equals the clamp of the free fit.
pub fn pav_box(y: &[f64], w: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    pav(y, w).into_iter().map(|v| v.clamp(lo, hi)).collect()
}

/// Isotonic regression with `x_last - x_first <= width`. The feasible set is the
/// union over `a` of the boxes `[a, a + width]`; for each `a` the optimum is the
/// clamped free fit, and the best `a` solves a monotone piecewise-linear equation.
pub fn pav_range(y: &[f64], w: &[f64], width: f64) -> Vec<f64> {
    let p = pav(y, w);
    let (pmin, pmax) = (p[0], p[p.len() - 1]);
    if pmax - pmin <= width {
        return p;
    }
    // Derivative (halved) of a -> sum w (clamp(p, a, a + width) - y)^2.
    let slope = |a: f64| -> f64 {
        let mut d = 0.0;
        for k in 0..p.len() {
            if p[k] < a {
                d += w[k] * (a - y[k]);
            } else if p[k] > a + width {
                d += w[k] * (a + width - y[k]);
            }
        }
        d
    };
    let (mut lo, mut hi) = (pmin - width, pmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut a = 0.5 * (lo + hi);
    // Between breakpoints the stationarity equation is linear: solve it exactly.
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..p.len() {
        if p[k] < a {
            num += w[k] * y[k];
            den += w[k];
        } else if p[k] > a + width {
            num += w[k] * (y[k] - width);
            den += w[k];
        }
    }
    if den > 0.0 {
        let exact = num / den;
        if (exact - a).abs() <= 1e-9 * (1.0 + a.abs()) {
            a = exact;
        }
    }
    p.into_iter().map(|v| v.clamp(a, a + width)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn objective(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
        x.iter().zip(y).zip(w).map(|((a, b), c)| c * (a - b) * (a - b)).sum()
    }

    #[test]
    fn textbook_cases() {
        assert_eq!(pav(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pav(&[3.0, 2.0, 1.0], &[1.0; 3]), vec![2.0; 3]);
        assert_eq!(pav(&[3.0, 1.0], &[1.0, 3.0]), vec![1.5, 1.5]);
        assert_eq!(pav_box(&[-1.0, -2.0], &[1.0, 1.0], 0.0, 5.0), vec![0.0, 0.0]);
    }

    #[test]
    fn range_bound_is_respected() {
        let y = [0.0, 1.0, 2.0, 3.0];
        let x = pav_range(&y, &[1.0; 4], 1.0);
        assert!((x[3] - x[0] - 1.0).abs() < 1e-12);
        // Symmetric data: the best window is centered.
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[3] - 2.0).abs() < 1e-9, "{x:?}");
    }

    proptest! {
        #[test]
        fn pav_is_monotone_and_beats_perturbations(
            y in proptest::collection::vec(-5.0f64..5.0, 1..40),
            seed in 0u64..1000,
        ) {
            let w: Vec<f64> = (0..y.len()).map(|k| 0.5 + ((k as u64 * 7919 + seed) % 13) as f64 / 13.0).collect();
            let x = pav(&y, &w);
            prop_assert!(x.windows(2).all(|p| p[0] <= p[1] + 1e-12));
            let best = objective(&x, &y, &w);
            // Any monotone competitor built by sorting a perturbation is no better.
            for shift in [-0.1, 0.05, 0.2] {
                let mut z: Vec<f64> = x.iter().enumerate().map(|(k, v)| v + shift * ((k % 3) as f64 - 1.0)).collect();
                z.sort_by(f64::total_cmp);
                prop_assert!(objective(&z, &y, &w) >= best - 1e-9);
            }
            // Weighted mean is preserved by pooling.
            let m0: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
            let m1: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!((m0 - m1).abs() < 1e-9);
        }

        #[test]
        fn range_fit_is_optimal_over_windows(
            y in proptest::collection::vec(-3.0f64..3.0, 2..30),
            width in 0.1f64..2.0,
        ) {
            let w = vec![1.0; y.len()];
            let x = pav_range(&y, &w, width);
            prop_assert!(x[x.len() - 1] - x[0] <= width + 1e-9);
            prop_assert!(x.windows(2).all(|p| p[0] <= p[1] + 1e-12));
            let best = objective(&x, &y, &w);
            let free = pav(&y, &w);
            for k in 0..=40 {
                let a = -6.0 + 0.3 * k as f64;
                let z: Vec<f64> = free.iter().map(|v| v.clamp(a, a + width)).collect();
                prop_assert!(objective(&z, &y, &w) >= best - 1e-9);
            }
        }
    }
}
