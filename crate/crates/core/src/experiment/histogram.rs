//! Shared-bin histograms and summary statistics.

use serde::Serialize;

/// Most bins a histogram may have; wider data gets coarser bins.
pub const MAX_BINS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub series_label: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins `values` on `edges`. Values outside the range are clamped into
    /// the first or last bin so that every value is counted.
    pub fn from_values(label: &str, edges: &[f64], values: &[f64]) -> Self {
        assert!(edges.len() >= 2, "at least one bin");
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &v in values {
            // first edge strictly greater than v, minus one
            let idx = edges.partition_point(|e| *e <= v);
            let bin = idx.saturating_sub(1).min(bins - 1);
            counts[bin] += 1;
        }
        Histogram {
            series_label: label.to_string(),
            bin_edges: edges.to_vec(),
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count divided by (total × bin width).
    pub fn densities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(&c, w)| {
                if total == 0.0 {
                    0.0
                } else {
                    c as f64 / (total * (w[1] - w[0]))
                }
            })
            .collect()
    }
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Shared bin edges: Freedman–Diaconis width from `reference`, spanning the
/// range of `all`. Falls back to Sturges' rule when the interquartile range
/// is zero, and to unit-width bins when every value is identical.
pub fn shared_edges(reference: &[f64], all: &[f64]) -> Vec<f64> {
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return vec![0.0, 1.0];
    }
    let span = hi - lo;
    let mut width = {
        let r = sorted(reference);
        if r.len() >= 2 {
            let iqr = quantile_sorted(&r, 0.75) - quantile_sorted(&r, 0.25);
            2.0 * iqr / (r.len() as f64).cbrt()
        } else {
            0.0
        }
    };
    if !(width.is_finite() && width > 0.0) {
        let n = all.len().max(1) as f64;
        width = span / (n.log2() + 1.0).ceil();
    }
    if !(width.is_finite() && width > 0.0) {
        return vec![lo - 0.5, lo + 0.5];
    }
    let mut bins = ((span / width).ceil() as usize).max(1);
    if bins > MAX_BINS {
        bins = MAX_BINS;
        width = span / bins as f64;
    }
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let last = edges.last_mut().expect("edges");
    if *last < hi {
        *last = hi;
    }
    edges
}

/// 1-Wasserstein distance between two histograms on the same bins, treating
/// each bin's mass as sitting uniformly within it.
pub fn wasserstein1(a: &Histogram, b: &Histogram) -> f64 {
    assert_eq!(a.bin_edges, b.bin_edges, "histograms must share bins");
    let (ta, tb) = (a.total() as f64, b.total() as f64);
    if ta == 0.0 || tb == 0.0 {
        return f64::NAN;
    }
    let mut fa = 0.0;
    let mut fb = 0.0;
    let mut dist = 0.0;
    for ((&ca, &cb), w) in a.counts.iter().zip(&b.counts).zip(a.bin_edges.windows(2)) {
        let width = w[1] - w[0];
        let (pa, pb) = (ca as f64 / ta, cb as f64 / tb);
        // CDF difference is linear within a bin
        let start = fa - fb;
        fa += pa;
        fb += pb;
        let end = fa - fb;
        dist += width * piecewise_abs_integral(start, end);
    }
    dist
}

/// Mean of |x| for x moving linearly from `a` to `b`.
fn piecewise_abs_integral(a: f64, b: f64) -> f64 {
    if a * b >= 0.0 {
        (a.abs() + b.abs()) / 2.0
    } else {
        (a * a + b * b) / (2.0 * (a.abs() + b.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub stdev: f64,
    pub iqr: f64,
}

impl Summary {
    /// Sample statistics; `stdev` uses the `n - 1` denominator (0 for n < 2).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                median: f64::NAN,
                stdev: f64::NAN,
                iqr: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stdev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        let s = sorted(values);
        Summary {
            n,
            mean,
            median: quantile_sorted(&s, 0.5),
            stdev,
            iqr: quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_everything() {
        let edges = [0.0, 1.0, 2.0];
        let h = Histogram::from_values("x", &edges, &[-1.0, 0.0, 0.5, 1.0, 2.0, 3.0]);
        assert_eq!(h.counts, vec![3, 3]);
        assert_eq!(h.total(), 6);
        let d = h.densities();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edges_cover_all_values_and_increase() {
        let reference: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let all: Vec<f64> = reference.iter().copied().chain([-5.0, 20.0]).collect();
        let e = shared_edges(&reference, &all);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(e[0], -5.0);
        assert!(*e.last().unwrap() >= 20.0);
        // Freedman–Diaconis: 2 * 4.95 / 100^(1/3)
        let fd = 2.0 * 4.95 / 100f64.cbrt();
        assert!((e[1] - e[0] - fd).abs() < 1e-9);
    }

    #[test]
    fn degenerate_edges() {
        assert_eq!(shared_edges(&[1.0, 1.0], &[1.0, 1.0]), vec![0.5, 1.5]);
        let e = shared_edges(&[1.0, 1.0, 1.0], &[1.0, 3.0]);
        assert!(e.len() >= 2 && e[0] == 1.0 && *e.last().unwrap() >= 3.0);
    }

    #[test]
    fn wasserstein_of_shifted_point_masses() {
        let edges: Vec<f64> = (0..=10).map(f64::from).collect();
        let a = Histogram::from_values("a", &edges, &[0.5; 10]);
        let b = Histogram::from_values("b", &edges, &[3.5; 10]);
        assert!((wasserstein1(&a, &b) - 3.0).abs() < 1e-12);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        assert!((wasserstein1(&a, &b) - wasserstein1(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.stdev - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.iqr, 1.5);
    }
}
