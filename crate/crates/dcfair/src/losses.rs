//! Composite training objective: binary cross-entropy blended with a
//! Wasserstein unfairness penalty between per-group score distributions.
//!
//! The penalty comes in two flavors. `Global` compares the full score
//! distributions of the two protected groups; `DecisionCentric` compares only
//! the top-k% of scores within each group, so parity is pushed where
//! decisions are actually taken. The 1-Wasserstein distance is approximated
//! with entropically regularized optimal transport (Sinkhorn scaling in the
//! log domain); [`exact_w1`] provides the exact quantile-matching value used
//! as an oracle and for cross-validation against the metrics module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which unfairness penalty a training run applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FairnessMode {
    /// No penalty; the objective reduces to BCE.
    None,
    /// Penalty over the full per-group score distributions.
    Global,
    /// Penalty over the top-k% of scores within each protected group.
    DecisionCentric { k_pct: f64 },
}

impl FairnessMode {
    pub fn validate(&self) -> Result<()> {
        if let FairnessMode::DecisionCentric { k_pct } = self {
            if !(*k_pct > 0.0 && *k_pct <= 1.0) {
                return Err(Error::Spec(format!("k_pct {k_pct} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Settings for the entropic optimal-transport approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization strength.
    pub epsilon: f64,
    /// Iteration cap; hitting it is reported, not an error.
    pub max_iters: usize,
    /// Stop once the L1 marginal violation drops below this.
    pub convergence_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iters: 200,
            convergence_tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Output of one Sinkhorn solve between two score samples.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// Transport cost `<P, C>` of the final plan.
    pub distance: f64,
    /// d(distance)/d(a_i) with the plan held fixed.
    pub grad_a: Vec<f64>,
    /// d(distance)/d(b_j) with the plan held fixed.
    pub grad_b: Vec<f64>,
    /// Whether the marginal violation dropped below tolerance.
    pub converged: bool,
    /// Iterations actually run.
    pub iterations: usize,
}

/// Value breakdown of the composite objective on one batch.
#[derive(Debug, Clone)]
pub struct CompositeLossValue {
    pub total: f64,
    pub bce_part: f64,
    pub unfairness_part: f64,
    pub lambda: f64,
    /// Per-group selected counts (DecisionCentric only).
    pub k_effective: Option<(usize, usize)>,
    /// True when a group was absent or singleton after selection and the
    /// penalty was zeroed for this batch.
    pub penalty_skipped: bool,
    /// False when the Sinkhorn solve hit its iteration cap.
    pub sinkhorn_converged: bool,
}

const BCE_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy and its per-score gradient. Scores are clamped
/// to `[1e-12, 1 - 1e-12]` before the logs.
pub fn bce(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::Domain("bce on empty input".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let p = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = f64::from(y);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((-(y / p) + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Next selection size for a fraction of `n`: the ceiling of `frac * n`,
/// with results within 1e-9 of an integer snapped to it so binary-exact
/// fractions do not overcount.
pub fn ceil_fraction_count(frac: f64, n: usize) -> usize {
    let x = frac * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

/// Exact 1-Wasserstein distance between two empirical score samples via
/// quantile matching: the piecewise-constant quantile functions are
/// integrated over their merged probability breakpoints, which handles
/// unequal sample sizes exactly.
pub fn exact_w1(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample("exact_w1", a)?;
    check_sample("exact_w1", b)?;
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    let (n, m) = (sa.len(), sb.len());

    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // next breakpoint: min((i+1)/n, (j+1)/m), compared exactly
        let lhs = (i + 1) * m;
        let rhs = (j + 1) * n;
        let next_u = if lhs <= rhs {
            (i + 1) as f64 / n as f64
        } else {
            (j + 1) as f64 / m as f64
        };
        total += (next_u - u) * (sa[i] - sb[j]).abs();
        u = next_u;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    Ok(total)
}

fn check_sample(op: &str, sample: &[f64]) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::Domain(format!("{op}: empty sample")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Value(format!("{op}: non-finite sample value")));
    }
    Ok(())
}

fn lse2(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// `out[k] = logsumexp(vals[0..k])`, with `out[0] = -inf`.
fn prefix_lse(vals: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(vals.len() + 1);
    out.push(f64::NEG_INFINITY);
    let mut acc = f64::NEG_INFINITY;
    for &v in vals {
        acc = lse2(acc, v);
        out.push(acc);
    }
    out
}

/// `out[k] = logsumexp(vals[k..])`, with `out[len] = -inf`.
fn suffix_lse(vals: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; vals.len() + 1];
    let mut acc = f64::NEG_INFINITY;
    for k in (0..vals.len()).rev() {
        acc = lse2(acc, vals[k]);
        out[k] = acc;
    }
    out
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// For each `x_i` (ascending), `logsumexp_j[(pot_j - |x_i - y_j|) / eps]`
/// over ascending `y` with potentials `pot`. The absolute-value cost splits
/// at `y_j <= x_i`, so prefix/suffix log-sum-exp tables give each entry in
/// amortized constant time.
fn lse_abs_cost(x: &[f64], y: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
    let m = y.len();
    let plus: Vec<f64> = (0..m).map(|j| (pot[j] + y[j]) / eps).collect();
    let minus: Vec<f64> = (0..m).map(|j| (pot[j] - y[j]) / eps).collect();
    let pre = prefix_lse(&plus);
    let suf = suffix_lse(&minus);

    let mut out = Vec::with_capacity(x.len());
    let mut split = 0usize;
    for &xi in x {
        while split < m && y[split] <= xi {
            split += 1;
        }
        out.push(lse2(pre[split] - xi / eps, suf[split] + xi / eps));
    }
    out
}

struct SortedSample {
    values: Vec<f64>,
    order: Vec<usize>,
}

fn sort_with_order(sample: &[f64]) -> SortedSample {
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&p, &q| sample[p].total_cmp(&sample[q]));
    let values = order.iter().map(|&p| sample[p]).collect();
    SortedSample { values, order }
}

/// Entropically regularized 1-Wasserstein distance between the uniform
/// empirical measures on `a` and `b`, with cost `|a_i - b_j|`.
///
/// Updates run in the log domain until the L1 marginal violation drops below
/// `convergence_tol` or `max_iters` is reached (reported via `converged`).
/// The distance is `<P, C>` for the final plan; gradients use the envelope
/// rule with the plan held fixed: `d/da_i = sum_j P_ij * sign(a_i - b_j)`.
pub fn sinkhorn_w1(a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    check_sample("sinkhorn_w1", a)?;
    check_sample("sinkhorn_w1", b)?;
    cfg.validate()?;

    let sa = sort_with_order(a);
    let sb = sort_with_order(b);
    let (n, m) = (a.len(), b.len());
    let eps = cfg.epsilon;
    let ln_mu = -(n as f64).ln();
    let ln_nu = -(m as f64).ln();
    let mu = 1.0 / n as f64;

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    // row_lse[i] = logsumexp_j[(g_j - C_ij)/eps]; rows sum to mu right after
    // the f update, so the violation is measured against the refreshed g.
    let mut row_lse = lse_abs_cost(&sa.values, &sb.values, &g, eps);
    for iter in 1..=cfg.max_iters {
        iterations = iter;
        for i in 0..n {
            f[i] = eps * (ln_mu - row_lse[i]);
        }
        let col_lse = lse_abs_cost(&sb.values, &sa.values, &f, eps);
        for j in 0..m {
            g[j] = eps * (ln_nu - col_lse[j]);
        }
        row_lse = lse_abs_cost(&sa.values, &sb.values, &g, eps);
        let violation: f64 = (0..n)
            .map(|i| ((f[i] / eps + row_lse[i]).exp() - mu).abs())
            .sum();
        if violation < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    // Final plan pass: distance and both envelope gradients share one sweep.
    let mut distance = 0.0;
    let mut grad_a_sorted = vec![0.0; n];
    let mut grad_b_sorted = vec![0.0; m];
    for i in 0..n {
        let fi = f[i];
        let ai = sa.values[i];
        for j in 0..m {
            let c = (ai - sb.values[j]).abs();
            let p = ((fi + g[j] - c) / eps).exp();
            distance += p * c;
            let s = sign(ai - sb.values[j]);
            grad_a_sorted[i] += p * s;
            grad_b_sorted[j] -= p * s;
        }
    }

    let mut grad_a = vec![0.0; n];
    let mut grad_b = vec![0.0; m];
    for (pos, &orig) in sa.order.iter().enumerate() {
        grad_a[orig] = grad_a_sorted[pos];
    }
    for (pos, &orig) in sb.order.iter().enumerate() {
        grad_b[orig] = grad_b_sorted[pos];
    }

    Ok(SinkhornResult {
        distance,
        grad_a,
        grad_b,
        converged,
        iterations,
    })
}

/// Indices of the `ceil(k_pct * n)` largest scores, descending. Ties at the
/// cut are broken by taking later-indexed elements first.
pub fn top_fraction_indices(scores: &[f64], k_pct: f64) -> Result<Vec<usize>> {
    check_sample("top_fraction", scores)?;
    if !(k_pct > 0.0 && k_pct <= 1.0) {
        return Err(Error::Spec(format!("k_pct {k_pct} not in (0, 1]")));
    }
    let k = ceil_fraction_count(k_pct, scores.len()).max(1);
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&p, &q| scores[q].total_cmp(&scores[p]).then(q.cmp(&p)));
    idx.truncate(k);
    Ok(idx)
}

/// The top-k% score values themselves, descending.
pub fn top_fraction(scores: &[f64], k_pct: f64) -> Result<Vec<f64>> {
    Ok(top_fraction_indices(scores, k_pct)?
        .into_iter()
        .map(|i| scores[i])
        .collect())
}

/// Default lower clamp for the calibrated k%.
pub const DEFAULT_K_MIN: f64 = 0.02;

/// Result of calibrating k% against baseline validation scores.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedK {
    pub k_pct: f64,
    /// The unclamped validation fraction above tau.
    pub raw_fraction: f64,
    pub clamped: bool,
}

/// Fraction of validation scores at or above `tau`, irrespective of group,
/// clamped into `[k_min, 1]`.
pub fn calibrate_k_pct(validation_scores: &[f64], tau: f64, k_min: f64) -> Result<CalibratedK> {
    check_sample("calibrate_k_pct", validation_scores)?;
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Spec(format!("tau {tau} not in [0, 1)")));
    }
    let above = validation_scores.iter().filter(|&&s| s >= tau).count();
    let raw = above as f64 / validation_scores.len() as f64;
    let k_pct = raw.clamp(k_min, 1.0);
    Ok(CalibratedK {
        k_pct,
        raw_fraction: raw,
        clamped: raw < k_min,
    })
}

/// The composite objective `(1 - lambda) * BCE + lambda * unfairness` and
/// its per-score gradient.
///
/// The unfairness term is the Sinkhorn 1-Wasserstein distance between the
/// two protected groups' scores: the full samples under `Global`, the
/// per-group top-k% selections under `DecisionCentric`. Gradients flow only
/// to scores that participate in each term. A batch where either group has
/// fewer than two members after selection contributes no penalty; this is
/// flagged on the returned value, not an error.
pub fn composite_loss(
    scores: &[f64],
    labels: &[u8],
    protected: &[u8],
    lambda: f64,
    mode: &FairnessMode,
    cfg: &SinkhornConfig,
) -> Result<(CompositeLossValue, Vec<f64>)> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Spec(format!("lambda {lambda} not in [0, 1)")));
    }
    if scores.len() != protected.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} protected flags",
            scores.len(),
            protected.len()
        )));
    }
    mode.validate()?;
    let (bce_part, bce_grad) = bce(scores, labels)?;

    let mut unfairness_part = 0.0;
    let mut grad = vec![0.0; scores.len()];
    let mut k_effective = None;
    let mut penalty_skipped = false;
    let mut sinkhorn_converged = true;

    let penalty_members: Option<(Vec<usize>, Vec<usize>)> = match mode {
        FairnessMode::None => None,
        FairnessMode::Global => {
            let g0: Vec<usize> = (0..scores.len()).filter(|&i| protected[i] == 0).collect();
            let g1: Vec<usize> = (0..scores.len()).filter(|&i| protected[i] == 1).collect();
            Some((g0, g1))
        }
        FairnessMode::DecisionCentric { k_pct } => {
            let g0: Vec<usize> = (0..scores.len()).filter(|&i| protected[i] == 0).collect();
            let g1: Vec<usize> = (0..scores.len()).filter(|&i| protected[i] == 1).collect();
            let select = |group: &[usize]| -> Result<Vec<usize>> {
                if group.is_empty() {
                    return Ok(Vec::new());
                }
                let vals: Vec<f64> = group.iter().map(|&i| scores[i]).collect();
                Ok(top_fraction_indices(&vals, *k_pct)?
                    .into_iter()
                    .map(|local| group[local])
                    .collect())
            };
            let sel = (select(&g0)?, select(&g1)?);
            k_effective = Some((sel.0.len(), sel.1.len()));
            Some(sel)
        }
    };

    if let Some((sel0, sel1)) = penalty_members {
        if sel0.len() < 2 || sel1.len() < 2 {
            penalty_skipped = true;
        } else {
            let vals0: Vec<f64> = sel0.iter().map(|&i| scores[i]).collect();
            let vals1: Vec<f64> = sel1.iter().map(|&i| scores[i]).collect();
            let result = sinkhorn_w1(&vals0, &vals1, cfg)?;
            unfairness_part = result.distance;
            sinkhorn_converged = result.converged;
            for (&i, &g) in sel0.iter().zip(&result.grad_a) {
                grad[i] += g;
            }
            for (&i, &g) in sel1.iter().zip(&result.grad_b) {
                grad[i] += g;
            }
        }
    }

    let total = (1.0 - lambda) * bce_part + lambda * unfairness_part;
    for (gi, &bg) in grad.iter_mut().zip(&bce_grad) {
        *gi = (1.0 - lambda) * bg + lambda * *gi;
    }

    Ok((
        CompositeLossValue {
            total,
            bce_part,
            unfairness_part,
            lambda,
            k_effective,
            penalty_skipped,
            sinkhorn_converged,
        },
        grad,
    ))
}
