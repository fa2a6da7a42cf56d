use serde::{Deserialize, Serialize};

/// Log-spaced frequency grid used by the sampled passivity test and the
/// H∞ lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::log_spaced(1e-3, 1e3, Self::DEFAULT_POINTS)
    }
}

impl FrequencyGrid {
    pub const DEFAULT_POINTS: usize = 400;

    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Self {
        assert!(lo > 0.0 && hi > lo, "log grid needs 0 < lo < hi");
        let count = count.max(2);
        let (llo, lhi) = (lo.log10(), hi.log10());
        let points = (0..count)
            .map(|i| 10f64.powf(llo + (lhi - llo) * i as f64 / (count - 1) as f64))
            .collect();
        Self { points }
    }

    /// Arbitrary frequency list; negative and non-finite entries are dropped, the rest sorted.
    pub fn from_points(mut points: Vec<f64>) -> Self {
        points.retain(|w| w.is_finite() && *w >= 0.0);
        points.sort_by(f64::total_cmp);
        points.dedup();
        Self { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Golden-section search for a local maximum of `f` on `[lo, hi]` in log-frequency.
///
/// `f` returns `None` where it is undefined (e.g. on a pole); such points are
/// treated as -∞.
pub(crate) fn golden_max<F>(mut f: F, lo: f64, hi: f64, iters: usize) -> (f64, f64)
where
    F: FnMut(f64) -> Option<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut eval = |lw: f64| f(10f64.powf(lw)).unwrap_or(f64::NEG_INFINITY);
    let (mut a, mut b) = (lo.log10(), hi.log10());
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
        if (b - a).abs() < 1e-13 {
            break;
        }
    }
    if fc >= fd {
        (10f64.powf(c), fc)
    } else {
        (10f64.powf(d), fd)
    }
}

/// Bracket around index `i` of a sorted grid for local refinement.
pub(crate) fn bracket(points: &[f64], i: usize) -> (f64, f64) {
    let lo = if i > 0 { points[i - 1] } else { points[i] / 10.0 };
    let hi = if i + 1 < points.len() { points[i + 1] } else { points[i] * 10.0 };
    (lo.max(f64::MIN_POSITIVE), hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_spans_six_decades() {
        let g = FrequencyGrid::default();
        assert_eq!(g.len(), 400);
        assert!((g.points()[0] - 1e-3).abs() < 1e-18);
        assert!((g.points()[399] - 1e3).abs() < 1e-9);
        assert!(g.points().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn golden_search_finds_interior_peak() {
        let (w, v) = golden_max(|w| Some(-(w.ln() - 3f64.sqrt().ln()).powi(2)), 0.1, 10.0, 200);
        assert!((w - 3f64.sqrt()).abs() < 1e-6);
        assert!(v.abs() < 1e-12);
    }
}
