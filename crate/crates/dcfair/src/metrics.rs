//! Decision-centric evaluation of score sets.
//!
//! Fairness is measured as the area between per-group score distributions
//! over the decision region `[tau, 1]`: `abpc_tau` integrates the absolute
//! difference of kernel density estimates, `abcc_tau` integrates the
//! absolute difference of empirical CDFs exactly (no grid, no estimator).
//! Predictive quality is the area under the partial precision-recall curve
//! generated by thresholds at or above `tau`. Setting `tau = 0` recovers the
//! global ABPC / ABCC / average-precision values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned scores, labels, and protected-group flags for one dataset split.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
    protected: Vec<u8>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, protected: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != protected.len() {
            return Err(Error::Shape(format!(
                "misaligned score set: {} scores, {} labels, {} protected",
                scores.len(),
                labels.len(),
                protected.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::Domain("empty score set".into()));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Value("score outside [0, 1]".into()));
        }
        if labels.iter().chain(&protected).any(|&v| v > 1) {
            return Err(Error::Value("labels and protected flags must be 0/1".into()));
        }
        Ok(Self { scores, labels, protected })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn protected(&self) -> &[u8] {
        &self.protected
    }

    /// Scores belonging to protected group `g`.
    pub fn group_scores(&self, g: u8) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.protected)
            .filter(|(_, &s)| s == g)
            .map(|(&v, _)| v)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Empirical CDF
// ---------------------------------------------------------------------------

/// Right-continuous empirical CDF with explicit breakpoints.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::Domain("ecdf of empty sample".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    /// `F(x)` = fraction of the sample at or below `x`.
    pub fn value_at(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&v| v <= x);
        count as f64 / self.sorted.len() as f64
    }

    /// Sorted sample values (the jump locations).
    pub fn breakpoints(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// Convenience constructor.
pub fn ecdf(sample: &[f64]) -> Result<Ecdf> {
    Ecdf::new(sample)
}

// ---------------------------------------------------------------------------
// Kernel density estimation
// ---------------------------------------------------------------------------

/// Bandwidth selection for the Gaussian KDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Bandwidth {
    /// `0.9 * min(sigma, IQR / 1.34) * n^(-1/5)`, floored at 1e-3.
    Silverman,
    Fixed { h: f64 },
}

/// Evaluation grid for density-based metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Uniform grid points spanning `[0, 1]`.
    pub points: usize,
    pub bandwidth: Bandwidth,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 1001, bandwidth: Bandwidth::Silverman }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 101 {
            return Err(Error::Config(format!("grid points {} < 101", self.points)));
        }
        if let Bandwidth::Fixed { h } = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("fixed bandwidth {h} must be > 0")));
            }
        }
        Ok(())
    }
}

const BANDWIDTH_FLOOR: f64 = 1e-3;

fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb with a 1e-3 floor (degenerate spreads included).
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len();
    if n < 2 {
        return BANDWIDTH_FLOOR;
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sigma = var.sqrt();
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let iqr = interpolated_quantile(&sorted, 0.75) - interpolated_quantile(&sorted, 0.25);
    let spread = sigma.min(iqr / 1.34);
    (0.9 * spread * (n as f64).powf(-0.2)).max(BANDWIDTH_FLOOR)
}

/// Unnormalized Gaussian mixture density at each grid point.
pub fn kde_raw(sample: &[f64], grid_x: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * sample.len() as f64);
    grid_x
        .iter()
        .map(|&x| {
            sample
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// A density estimate evaluated on a grid over `[0, 1]`, renormalized so its
/// trapezoid integral is 1.
#[derive(Debug, Clone)]
pub struct DensityCurve {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

fn uniform_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

fn resolve_bandwidth(sample: &[f64], spec: &GridSpec) -> f64 {
    match spec.bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(sample),
        Bandwidth::Fixed { h } => h,
    }
}

fn kde_on_grid(sample: &[f64], grid_x: Vec<f64>, spec: &GridSpec) -> DensityCurve {
    let h = resolve_bandwidth(sample, spec);
    let mut density = kde_raw(sample, &grid_x, h);
    let mass = trapezoid(&grid_x, &density);
    if mass > 0.0 {
        for d in &mut density {
            *d /= mass;
        }
    }
    DensityCurve { x: grid_x, density, bandwidth: h }
}

/// Gaussian KDE on the spec's uniform grid, boundary mass renormalized onto
/// `[0, 1]`.
pub fn kde_pdf(sample: &[f64], spec: &GridSpec) -> Result<DensityCurve> {
    if sample.is_empty() {
        return Err(Error::Domain("kde of empty sample".into()));
    }
    spec.validate()?;
    Ok(kde_on_grid(sample, uniform_grid(spec.points), spec))
}

// ---------------------------------------------------------------------------
// ABPC_tau / ABCC_tau
// ---------------------------------------------------------------------------

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Spec(format!("tau {tau} not in [0, 1)")));
    }
    Ok(())
}

fn group_samples(set: &ScoreSet, op: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let g0 = set.group_scores(0);
    let g1 = set.group_scores(1);
    if g0.is_empty() || g1.is_empty() {
        return Err(Error::Domain(format!(
            "{op}: a protected group is empty ({} vs {})",
            g0.len(),
            g1.len()
        )));
    }
    Ok((g0, g1))
}

fn grid_with_tau(points: usize, tau: f64) -> Vec<f64> {
    let mut grid = uniform_grid(points);
    if let Err(pos) = grid.binary_search_by(|v| v.total_cmp(&tau)) {
        grid.insert(pos, tau);
    }
    grid
}

/// Area between the per-group score density estimates over `[tau, 1]`:
/// trapezoid integration of `|f0 - f1|` with `tau` inserted as an explicit
/// grid point. `tau = 0` gives the global ABPC.
pub fn abpc_tau(set: &ScoreSet, tau: f64, spec: &GridSpec) -> Result<f64> {
    check_tau(tau)?;
    spec.validate()?;
    let (g0, g1) = group_samples(set, "abpc_tau")?;
    let grid = grid_with_tau(spec.points, tau);
    let d0 = kde_on_grid(&g0, grid.clone(), spec);
    let d1 = kde_on_grid(&g1, grid, spec);

    let start = d0.x.partition_point(|&x| x < tau);
    let xs = &d0.x[start..];
    let diff: Vec<f64> = d0.density[start..]
        .iter()
        .zip(&d1.density[start..])
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(trapezoid(xs, &diff))
}

/// Area between the per-group empirical CDFs over `[tau, 1]`, integrated
/// exactly between merged breakpoints. `tau = 0` gives the global ABCC.
pub fn abcc_tau(set: &ScoreSet, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let (g0, g1) = group_samples(set, "abcc_tau")?;
    abcc_tau_samples(&g0, &g1, tau)
}

/// [`abcc_tau`] on raw per-group samples.
pub fn abcc_tau_samples(g0: &[f64], g1: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let f0 = Ecdf::new(g0)?;
    let f1 = Ecdf::new(g1)?;

    // merged jump locations inside (tau, 1]
    let mut cuts: Vec<f64> = f0
        .breakpoints()
        .iter()
        .chain(f1.breakpoints())
        .copied()
        .filter(|&v| v > tau && v < 1.0)
        .collect();
    cuts.sort_unstable_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    let mut left = tau;
    let mut level = (f0.value_at(tau) - f1.value_at(tau)).abs();
    for cut in cuts {
        total += (cut - left) * level;
        level = (f0.value_at(cut) - f1.value_at(cut)).abs();
        left = cut;
    }
    total += (1.0 - left) * level;
    Ok(total)
}

// ---------------------------------------------------------------------------
// Partial precision-recall
// ---------------------------------------------------------------------------

/// One point on the partial PR curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// PR points for every distinct score at or above `tau`, descending by
/// threshold, plus an anchor at `tau` itself.
#[derive(Debug, Clone)]
pub struct PartialPrCurve {
    pub tau: f64,
    pub points: Vec<PrPoint>,
}

/// Build the partial PR curve for thresholds in `[tau, 1]`.
pub fn partial_pr_curve(set: &ScoreSet, tau: f64) -> Result<PartialPrCurve> {
    check_tau(tau)?;
    let positives = set.labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::Domain("no positive labels".into()));
    }

    let mut pairs: Vec<(f64, u8)> = set
        .scores
        .iter()
        .zip(&set.labels)
        .map(|(&s, &y)| (s, y))
        .collect();
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut pp = 0usize;
    let mut idx = 0;
    while idx < pairs.len() && pairs[idx].0 >= tau {
        let threshold = pairs[idx].0;
        while idx < pairs.len() && pairs[idx].0 == threshold {
            pp += 1;
            tp += usize::from(pairs[idx].1);
            idx += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / pp as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    if let Some(last) = points.last().copied() {
        if last.threshold != tau {
            points.push(PrPoint { threshold: tau, ..last });
        }
    }
    Ok(PartialPrCurve { tau, points })
}

/// Area under the partial PR curve by the step rule
/// `sum_i (recall_i - recall_{i-1}) * precision_i` with `recall_0 = 0`,
/// walking thresholds from the highest down to `tau`. Returns 0 when no
/// score reaches `tau`; at `tau = 0` this is standard average precision.
pub fn auc_pr_tau(set: &ScoreSet, tau: f64) -> Result<f64> {
    let curve = partial_pr_curve(set, tau)?;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(area)
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

/// Point-estimate evaluation of one score set at one decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tau: f64,
    pub auc_pr_tau: f64,
    pub abpc_tau: f64,
    pub abcc_tau: f64,
    pub n: usize,
    pub group0_size: usize,
    pub group1_size: usize,
    pub positives: usize,
    /// Fraction of all scores at or above tau.
    pub share_above_tau: f64,
}

impl MetricReport {
    /// Flat `key=value` lines, one metric per line.
    pub fn to_key_value(&self) -> String {
        format!(
            "tau={}\nauc_pr_tau={}\nabpc_tau={}\nabcc_tau={}\nn={}\ngroup0_size={}\ngroup1_size={}\npositives={}\nshare_above_tau={}\n",
            self.tau,
            self.auc_pr_tau,
            self.abpc_tau,
            self.abcc_tau,
            self.n,
            self.group0_size,
            self.group1_size,
            self.positives,
            self.share_above_tau
        )
    }
}

/// Compute every decision-centric metric on one score set.
pub fn evaluate(set: &ScoreSet, tau: f64, grid: &GridSpec) -> Result<MetricReport> {
    let auc = auc_pr_tau(set, tau)?;
    let abpc = abpc_tau(set, tau, grid)?;
    let abcc = abcc_tau(set, tau)?;
    let g0 = set.protected.iter().filter(|&&s| s == 0).count();
    let above = set.scores.iter().filter(|&&s| s >= tau).count();
    Ok(MetricReport {
        tau,
        auc_pr_tau: auc,
        abpc_tau: abpc,
        abcc_tau: abcc,
        n: set.len(),
        group0_size: g0,
        group1_size: set.len() - g0,
        positives: set.labels.iter().filter(|&&y| y == 1).count(),
        share_above_tau: above as f64 / set.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::exact_w1;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize) -> ScoreSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
        let mut protected: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
        // guarantee both groups are present
        protected[0] = 0;
        protected[n - 1] = 1;
        ScoreSet::new(scores, labels, protected).unwrap()
    }

    #[test]
    fn ecdf_steps_and_ties() {
        let f = ecdf(&[0.5]).unwrap();
        assert_eq!(f.value_at(0.4), 0.0);
        assert_eq!(f.value_at(0.5), 1.0);

        let f = ecdf(&[0.2, 0.4, 0.4, 0.8]).unwrap();
        assert_eq!(f.value_at(0.4), 0.75);
        assert_eq!(f.value_at(0.39), 0.25);
        assert!(ecdf(&[]).is_err());
    }

    #[test]
    fn ecdf_matches_naive_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample: Vec<f64> = (0..57).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = ecdf(&sample).unwrap();
        for k in 0..100 {
            let x = k as f64 / 99.0;
            let naive = sample.iter().filter(|&&v| v <= x).count() as f64 / sample.len() as f64;
            assert_eq!(f.value_at(x), naive);
        }
    }

    #[test]
    fn kde_integral_is_one_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample: Vec<f64> = (0..40).map(|_| rng.random_range(0.05..0.95)).collect();
        let spec = GridSpec::default();
        let curve = kde_pdf(&sample, &spec).unwrap();
        assert_abs_diff_eq!(trapezoid(&curve.x, &curve.density), 1.0, epsilon = 1e-6);

        let symmetric: Vec<f64> = vec![0.3, 0.7, 0.45, 0.55, 0.5];
        let curve = kde_pdf(&symmetric, &spec).unwrap();
        let n = curve.x.len();
        for i in 0..n {
            assert_abs_diff_eq!(curve.density[i], curve.density[n - 1 - i], epsilon = 1e-9);
        }
    }

    #[test]
    fn kde_matches_closed_form_mixture() {
        let sample = [0.3, 0.7];
        let h = 0.05;
        let grid = uniform_grid(1001);
        let raw = kde_raw(&sample, &grid, h);
        for (&x, &d) in grid.iter().zip(&raw) {
            let phi = |c: f64| {
                let u = (x - c) / h;
                (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
            };
            let expected = 0.5 * (phi(0.3) + phi(0.7));
            assert_abs_diff_eq!(d, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn silverman_floors_degenerate_spread() {
        assert_eq!(silverman_bandwidth(&[0.5, 0.5, 0.5]), 1e-3);
        assert_eq!(silverman_bandwidth(&[0.5]), 1e-3);
        assert!(silverman_bandwidth(&[0.1, 0.5, 0.9, 0.3]) > 1e-3);
    }

    fn concentrated(center: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (center + rng.random_range(-0.01..0.01)).clamp(0.0, 1.0))
            .collect()
    }

    #[test]
    fn abpc_examples() {
        let g0 = concentrated(0.05, 40, 1);
        let g1 = concentrated(0.95, 40, 2);
        let scores: Vec<f64> = g0.iter().chain(&g1).copied().collect();
        let labels = vec![0u8; 80];
        let protected: Vec<u8> = (0..80).map(|i| (i >= 40) as u8).collect();
        let set = ScoreSet::new(scores, labels, protected).unwrap();
        let grid = GridSpec::default();

        let disjoint = abpc_tau(&set, 0.0, &grid).unwrap();
        assert!((disjoint - 2.0).abs() < 0.05, "{disjoint}");
        let half = abpc_tau(&set, 0.5, &grid).unwrap();
        assert!((half - 1.0).abs() < 0.05, "{half}");

        // identical group samples -> zero
        let same = concentrated(0.4, 30, 3);
        let scores: Vec<f64> = same.iter().chain(&same).copied().collect();
        let protected: Vec<u8> = (0..60).map(|i| (i >= 30) as u8).collect();
        let set = ScoreSet::new(scores, vec![0; 60], protected).unwrap();
        assert_abs_diff_eq!(abpc_tau(&set, 0.0, &grid).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn abcc_point_mass_examples() {
        assert_abs_diff_eq!(abcc_tau_samples(&[0.2], &[0.8], 0.0).unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(abcc_tau_samples(&[0.2], &[0.8], 0.5).unwrap(), 0.3, epsilon = 1e-12);
    }

    /// Midpoint Riemann sum of |F0 - F1| on a uniform grid over [tau, 1].
    fn abcc_riemann(g0: &[f64], g1: &[f64], tau: f64, cells: usize) -> f64 {
        let mut s0 = g0.to_vec();
        let mut s1 = g1.to_vec();
        s0.sort_unstable_by(f64::total_cmp);
        s1.sort_unstable_by(f64::total_cmp);
        let width = (1.0 - tau) / cells as f64;
        let (mut i, mut j) = (0usize, 0usize);
        let mut total = 0.0;
        for k in 0..cells {
            let x = tau + (k as f64 + 0.5) * width;
            while i < s0.len() && s0[i] <= x {
                i += 1;
            }
            while j < s1.len() && s1[j] <= x {
                j += 1;
            }
            let f0 = i as f64 / s0.len() as f64;
            let f1 = j as f64 / s1.len() as f64;
            total += (f0 - f1).abs() * width;
        }
        total
    }

    #[test]
    fn abcc_matches_fine_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let g0: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
            let g1: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
            let exact = abcc_tau_samples(&g0, &g1, 0.0).unwrap();
            let riemann = abcc_riemann(&g0, &g1, 0.0, 1_000_000);
            assert!((exact - riemann).abs() < 2e-6, "{exact} vs {riemann}");
        }
    }

    #[test]
    fn abcc_zero_equals_exact_w1() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [10usize, 37, 80] {
            let g0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let g1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let abcc = abcc_tau_samples(&g0, &g1, 0.0).unwrap();
            let w1 = exact_w1(&g0, &g1).unwrap();
            assert_abs_diff_eq!(abcc, w1, epsilon = 1e-9);
        }
    }

    #[test]
    fn auc_pr_worked_example() {
        let set = ScoreSet::new(
            vec![0.9, 0.8, 0.6, 0.4],
            vec![1, 0, 1, 1],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        assert_abs_diff_eq!(auc_pr_tau(&set, 0.5).unwrap(), 5.0 / 9.0, epsilon = 1e-12);

        // all scores below tau -> zero area
        let low = ScoreSet::new(vec![0.1, 0.2], vec![1, 0], vec![0, 1]).unwrap();
        assert_eq!(auc_pr_tau(&low, 0.5).unwrap(), 0.0);

        // no positives -> domain error
        let none = ScoreSet::new(vec![0.9, 0.2], vec![0, 0], vec![0, 1]).unwrap();
        assert!(matches!(auc_pr_tau(&none, 0.0), Err(Error::Domain(_))));
    }

    /// Average precision computed independently: for each positive, in
    /// descending-score order with ties grouped, accumulate precision steps.
    fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
        let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let npos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let mut tp = 0.0;
        let mut pp = 0.0;
        let mut area = 0.0;
        let mut idx = 0;
        while idx < pairs.len() {
            let t = pairs[idx].0;
            let mut new_tp = 0.0;
            let mut new_pp = 0.0;
            while idx < pairs.len() && pairs[idx].0 == t {
                new_pp += 1.0;
                new_tp += f64::from(pairs[idx].1);
                idx += 1;
            }
            let prev_recall = tp / npos;
            tp += new_tp;
            pp += new_pp;
            area += (tp / npos - prev_recall) * (tp / pp);
        }
        area
    }

    #[test]
    fn auc_pr_at_zero_is_average_precision() {
        for seed in 0..10u64 {
            let set = random_set(seed, 25);
            if set.labels().iter().all(|&y| y == 0) {
                continue;
            }
            let ap = average_precision(set.scores(), set.labels());
            assert_abs_diff_eq!(auc_pr_tau(&set, 0.0).unwrap(), ap, epsilon = 1e-12);
        }
    }

    #[test]
    fn pr_curve_has_anchor_and_monotone_recall() {
        let set = ScoreSet::new(
            vec![0.9, 0.8, 0.6, 0.4],
            vec![1, 0, 1, 1],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let curve = partial_pr_curve(&set, 0.5).unwrap();
        assert_eq!(curve.points.last().unwrap().threshold, 0.5);
        for pair in curve.points.windows(2) {
            assert!(pair[1].threshold <= pair[0].threshold);
            assert!(pair[1].recall >= pair[0].recall);
        }
    }

    #[test]
    fn evaluate_hand_example() {
        let set = ScoreSet::new(
            vec![0.9, 0.8, 0.6, 0.4, 0.3, 0.2, 0.75, 0.1],
            vec![1, 0, 1, 1, 0, 0, 1, 0],
            vec![0, 1, 0, 1, 0, 1, 0, 1],
        )
        .unwrap();
        let report = evaluate(&set, 0.0, &GridSpec::default()).unwrap();
        assert_eq!(report.n, 8);
        assert_eq!(report.group0_size, 4);
        assert_eq!(report.group1_size, 4);
        assert_eq!(report.positives, 4);
        assert_eq!(report.share_above_tau, 1.0);
        assert_abs_diff_eq!(report.abcc_tau, abcc_tau(&set, 0.0).unwrap(), epsilon = 0.0);
        assert_abs_diff_eq!(
            report.auc_pr_tau,
            average_precision(set.scores(), set.labels()),
            epsilon = 1e-12
        );
        let kv = report.to_key_value();
        assert!(kv.contains("auc_pr_tau=") && kv.contains("share_above_tau=1"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn tau_monotonicity(seed in 0u64..200) {
            let set = random_set(seed, 60);
            let grid = GridSpec::default();
            let taus = [0.0, 0.25, 0.5, 0.7, 0.8];
            let mut prev_abcc = f64::INFINITY;
            let mut prev_abpc = f64::INFINITY;
            for &tau in &taus {
                let abcc = abcc_tau(&set, tau).unwrap();
                let abpc = abpc_tau(&set, tau, &grid).unwrap();
                prop_assert!(abcc <= prev_abcc + 1e-12);
                prop_assert!(abpc <= prev_abpc + 1e-9);
                prev_abcc = abcc;
                prev_abpc = abpc;
            }
        }

        #[test]
        fn group_swap_symmetry(seed in 0u64..200) {
            let set = random_set(seed, 40);
            let swapped = ScoreSet::new(
                set.scores().to_vec(),
                set.labels().to_vec(),
                set.protected().iter().map(|&s| 1 - s).collect(),
            ).unwrap();
            let grid = GridSpec::default();
            prop_assert!((abcc_tau(&set, 0.3).unwrap() - abcc_tau(&swapped, 0.3).unwrap()).abs() < 1e-12);
            prop_assert!((abpc_tau(&set, 0.3, &grid).unwrap() - abpc_tau(&swapped, 0.3, &grid).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariance(seed in 0u64..200) {
            let set = random_set(seed, 30);
            let n = set.len();
            let perm: Vec<usize> = (0..n).rev().collect();
            let permuted = ScoreSet::new(
                perm.iter().map(|&i| set.scores()[i]).collect(),
                perm.iter().map(|&i| set.labels()[i]).collect(),
                perm.iter().map(|&i| set.protected()[i]).collect(),
            ).unwrap();
            if set.labels().iter().any(|&y| y == 1) {
                prop_assert!((auc_pr_tau(&set, 0.2).unwrap() - auc_pr_tau(&permuted, 0.2).unwrap()).abs() < 1e-12);
            }
            prop_assert!((abcc_tau(&set, 0.2).unwrap() - abcc_tau(&permuted, 0.2).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_pr_nonincreasing_in_tau(seed in 0u64..200) {
            let set = random_set(seed, 50);
            if set.labels().iter().any(|&y| y == 1) {
                let mut prev = f64::INFINITY;
                for tau in [0.0, 0.3, 0.6, 0.9] {
                    let v = auc_pr_tau(&set, tau).unwrap();
                    prop_assert!(v <= prev + 1e-12);
                    prev = v;
                }
            }
        }
    }
}
