//! Validation signal: information gain, correlation analysis with
//! significance, kNN mutual information, and predictive R².
//!
//! All operations are pure functions of their inputs. Consistency metrics are
//! computed on posterior means, one latent dimension at a time.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::cevae::ElboReport;
use crate::fmath;
use crate::matrix::Matrix;
use crate::rng;

/// Default neighbor count for the Kraskov estimator.
pub const DEFAULT_KNN_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationError {
    InsufficientData { n: usize, min: usize },
    DegenerateInput { what: String },
    KTooLarge { n: usize, k: usize },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InsufficientData { n, min } => {
                write!(f, "need at least {min} observations, got {n}")
            }
            Self::DegenerateInput { what } => write!(f, "degenerate input: {what}"),
            Self::KTooLarge { n, k } => write!(f, "k = {k} must be smaller than n = {n}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ValidationError {}

pub type Result<T> = core::result::Result<T, ValidationError>;

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = core::f64::consts::PI;
        fmath::ln(pi / fmath::sin(pi * x)) - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        0.5 * fmath::ln(2.0 * core::f64::consts::PI) + (x + 0.5) * fmath::ln(t) - t
            + fmath::ln(acc)
    }
}

/// Continued fraction for the incomplete beta function (Lentz's method).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn betainc_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * fmath::ln(x)
        + b * fmath::ln(1.0 - x);
    let bt = fmath::exp(ln_bt);
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - bt * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom, via
/// `p = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    betainc_reg(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Digamma at positive integer arguments: `ψ(m) = −γ + Σ_{j<m} 1/j`.
fn digamma_table(max: usize) -> Vec<f64> {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut table = alloc::vec![0.0; max + 1];
    if max >= 1 {
        table[1] = -EULER_GAMMA;
        for m in 2..=max {
            table[m] = table[m - 1] + 1.0 / (m as f64 - 1.0);
        }
    }
    table
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

/// A correlation coefficient with its two-sided significance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

fn correlation_from_r(r: f64, n: usize) -> CorrelationResult {
    let r = r.clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * fmath::sqrt(df / (1.0 - r * r));
        t_two_sided_p(t, df)
    };
    CorrelationResult { r, p_value: p, n }
}

/// Sample Pearson correlation with a Student-t two-sided p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(ValidationError::InsufficientData { n: n.min(y.len()), min: 3 });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ValidationError::DegenerateInput {
            what: String::from("constant vector in correlation"),
        });
    }
    Ok(correlation_from_r(sxy / fmath::sqrt(sxx * syy), n))
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("NaN in rank input"));
    let mut ranks = alloc::vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average-ranked data, p-value via the
/// same t transform.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(ValidationError::InsufficientData { n: n.min(y.len()), min: 3 });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = fmath::sqrt(var);
    if std > 0.0 {
        values.iter().map(|v| (v - mean) / std).collect()
    } else {
        values.iter().map(|v| v - mean).collect()
    }
}

/// Kraskov estimator 1 of `I(X;Y)` in nats, clamped at zero from below.
///
/// Inputs are standardized (max-norm balls are scale-sensitive) and perturbed
/// by `1e-10`-scale seeded jitter to break exact ties. Neighbor counts use
/// strict inequality against the k-th neighbor's max-norm distance.
pub fn knn_mutual_information(x: &[f64], y: &[f64], k: usize, seed: u64) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(ValidationError::InsufficientData { n: n.min(y.len()), min: n.max(y.len()) });
    }
    if k == 0 || n <= k {
        return Err(ValidationError::KTooLarge { n, k });
    }
    let mut xs = standardize(x);
    let mut ys = standardize(y);
    let mut rng = rng::seeded(seed);
    for v in xs.iter_mut() {
        *v += 1e-10 * rng::standard_normal(&mut rng);
    }
    for v in ys.iter_mut() {
        *v += 1e-10 * rng::standard_normal(&mut rng);
    }

    let psi = digamma_table(n + 1);
    let mut acc = 0.0;
    let mut kth = alloc::vec![0.0f64; k];
    for i in 0..n {
        // k smallest joint max-norm distances to other points.
        let mut filled = 0usize;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = (xs[j] - xs[i]).abs().max((ys[j] - ys[i]).abs());
            if filled < k {
                kth[filled] = d;
                filled += 1;
                if filled == k {
                    kth.sort_by(|a, b| a.partial_cmp(b).unwrap());
                }
            } else if d < kth[k - 1] {
                let mut pos = k - 1;
                while pos > 0 && kth[pos - 1] > d {
                    kth[pos] = kth[pos - 1];
                    pos -= 1;
                }
                kth[pos] = d;
            }
        }
        let eps = kth[k - 1];
        let mut n_x = 0usize;
        let mut n_y = 0usize;
        for j in 0..n {
            if j == i {
                continue;
            }
            if (xs[j] - xs[i]).abs() < eps {
                n_x += 1;
            }
            if (ys[j] - ys[i]).abs() < eps {
                n_y += 1;
            }
        }
        acc += psi[n_x + 1] + psi[n_y + 1];
    }
    let mi = psi[k] + psi[n] - acc / n as f64;
    Ok(mi.max(0.0))
}

// ---------------------------------------------------------------------------
// Predictive R²
// ---------------------------------------------------------------------------

/// In-sample R² of the OLS fit, with a rank-deficiency note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Result {
    pub r_squared: f64,
    /// True when the normal equations were solved by pseudo-inverse after
    /// dropping near-zero eigenvalues (tolerance 1e-10 relative).
    pub rank_deficient: bool,
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in i + 1..p {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                if m[i][j].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[j][j] - m[i][i]) / (2.0 * m[i][j]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + fmath::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + fmath::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = t * c;
                for l in 0..p {
                    let mil = m[i][l];
                    let mjl = m[j][l];
                    m[i][l] = c * mil - s * mjl;
                    m[j][l] = s * mil + c * mjl;
                }
                for l in 0..p {
                    let mli = m[l][i];
                    let mlj = m[l][j];
                    m[l][i] = c * mli - s * mlj;
                    m[l][j] = s * mli + c * mlj;
                }
                for l in 0..p {
                    let vli = v[l][i];
                    let vlj = v[l][j];
                    v[l][i] = c * vli - s * vlj;
                    v[l][j] = s * vli + c * vlj;
                }
            }
        }
    }
    let eig = (0..p).map(|i| m[i][i]).collect();
    (eig, v)
}

/// OLS with intercept from the latent means to `u`; in-sample
/// `R² = 1 − SS_res/SS_tot`. A constant `u` yields `R² = 0` by definition.
/// Rank-deficient designs are solved by eigenvalue-truncated pseudo-inverse.
pub fn predictive_r2(z_mu: &Matrix, u: &[f64]) -> Result<R2Result> {
    let n = z_mu.rows();
    let latent = z_mu.cols();
    if u.len() != n || n <= latent + 1 {
        return Err(ValidationError::InsufficientData { n, min: latent + 2 });
    }
    let nf = n as f64;
    let u_mean = u.iter().sum::<f64>() / nf;
    let ss_tot: f64 = u.iter().map(|v| (v - u_mean) * (v - u_mean)).sum();
    if ss_tot == 0.0 {
        return Ok(R2Result { r_squared: 0.0, rank_deficient: false });
    }

    // Normal equations over [1, z] with intercept first.
    let p = latent + 1;
    let design = |r: usize, c: usize| -> f64 {
        if c == 0 {
            1.0
        } else {
            z_mu.get(r, c - 1)
        }
    };
    let mut a = alloc::vec![alloc::vec![0.0; p]; p];
    let mut b = alloc::vec![0.0; p];
    for r in 0..n {
        for i in 0..p {
            let di = design(r, i);
            b[i] += di * u[r];
            for j in i..p {
                a[i][j] += di * design(r, j);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }

    let (eig, vecs) = jacobi_eigen(&a);
    let max_eig = eig.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let tol = 1e-10 * max_eig.max(1e-300);
    let mut rank_deficient = false;
    // w = V diag(1/λ) Vᵀ b with small eigenvalues dropped.
    let mut vtb = alloc::vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            vtb[i] += vecs[j][i] * b[j];
        }
    }
    for i in 0..p {
        if eig[i].abs() > tol {
            vtb[i] /= eig[i];
        } else {
            vtb[i] = 0.0;
            rank_deficient = true;
        }
    }
    let mut w = alloc::vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            w[i] += vecs[i][j] * vtb[j];
        }
    }

    let mut ss_res = 0.0;
    for r in 0..n {
        let mut pred = 0.0;
        for i in 0..p {
            pred += w[i] * design(r, i);
        }
        let resid = u[r] - pred;
        ss_res += resid * resid;
    }
    Ok(R2Result { r_squared: 1.0 - ss_res / ss_tot, rank_deficient })
}

// ---------------------------------------------------------------------------
// Signal assembly
// ---------------------------------------------------------------------------

/// Per-latent-dimension consistency detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDimStat {
    pub dim: usize,
    pub pearson: f64,
    pub pearson_p: f64,
    pub spearman: f64,
    pub spearman_p: f64,
    pub mi: f64,
}

/// The validation signal: information gain plus latent-consistency summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSignal {
    pub delta_elbo: f64,
    /// Maximum absolute Spearman correlation across latent dimensions.
    pub rho_max: f64,
    /// Mean per-dimension kNN mutual information (nats).
    pub i_avg: f64,
    pub r_squared: f64,
    pub r2_rank_deficient: bool,
    pub per_dim: Vec<PerDimStat>,
}

impl ValidationSignal {
    /// Recomputes the scalar summaries from `per_dim`; they must match the
    /// stored values exactly.
    pub fn invariants_hold(&self) -> bool {
        let rho = self
            .per_dim
            .iter()
            .fold(0.0f64, |m, d| m.max(d.spearman.abs()));
        let mi = self.per_dim.iter().map(|d| d.mi).sum::<f64>()
            / self.per_dim.len().max(1) as f64;
        (rho - self.rho_max).abs() < 1e-12 && (mi - self.i_avg).abs() < 1e-12
    }
}

/// Information gain: augmented held-out ELBO minus baseline held-out ELBO.
/// Both reports must come from the same split under the same eval protocol.
pub fn info_gain(elbo_augmented: &ElboReport, elbo_baseline: &ElboReport) -> f64 {
    elbo_augmented.elbo - elbo_baseline.elbo
}

/// Assembles the round signal from the two ELBO reports, the baseline
/// posterior means, and the candidate confounder values (same split).
///
/// Latent dimensions that are numerically constant get zero correlation with
/// p = 1 rather than failing the whole signal.
pub fn build_signal(
    baseline_report: &ElboReport,
    augmented_report: &ElboReport,
    posterior_mu: &Matrix,
    u: &[f64],
    knn_k: usize,
    jitter_seed: u64,
) -> Result<ValidationSignal> {
    let latent = posterior_mu.cols();
    let mut per_dim = Vec::with_capacity(latent);
    for dim in 0..latent {
        let col = posterior_mu.col_vec(dim);
        let (pe, sp) = match (pearson(&col, u), spearman(&col, u)) {
            (Ok(pe), Ok(sp)) => (pe, sp),
            _ => (
                CorrelationResult { r: 0.0, p_value: 1.0, n: u.len() },
                CorrelationResult { r: 0.0, p_value: 1.0, n: u.len() },
            ),
        };
        let mi = knn_mutual_information(&col, u, knn_k, jitter_seed.wrapping_add(dim as u64))?;
        per_dim.push(PerDimStat {
            dim,
            pearson: pe.r,
            pearson_p: pe.p_value,
            spearman: sp.r,
            spearman_p: sp.p_value,
            mi,
        });
    }
    let rho_max = per_dim.iter().fold(0.0f64, |m, d| m.max(d.spearman.abs()));
    let i_avg = per_dim.iter().map(|d| d.mi).sum::<f64>() / latent.max(1) as f64;
    let r2 = predictive_r2(posterior_mu, u)?;
    Ok(ValidationSignal {
        delta_elbo: info_gain(augmented_report, baseline_report),
        rho_max,
        i_avg,
        r_squared: r2.r_squared,
        r2_rank_deficient: r2.rank_deficient,
        per_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn report_with_elbo(elbo: f64) -> ElboReport {
        ElboReport {
            elbo,
            recon_t: elbo / 2.0,
            recon_y: elbo / 2.0,
            kl: 0.0,
            mc_samples: 10,
            seed: 0,
        }
    }

    #[test]
    fn info_gain_paper_fixture() {
        let delta = info_gain(&report_with_elbo(-0.2501), &report_with_elbo(-0.2521));
        assert!((delta - 0.0020).abs() < 1e-12);
        assert_eq!(info_gain(&report_with_elbo(-0.3), &report_with_elbo(-0.3)), 0.0);
        let delta = info_gain(&report_with_elbo(-0.2489), &report_with_elbo(-0.2521));
        assert!((delta - 0.0032).abs() < 1e-12);
    }

    // Frozen oracle values computed with scipy.stats.t.sf and
    // scipy.special.betainc.
    #[test]
    fn t_p_values_match_reference() {
        let cases = [
            (2.0, 10.0, 0.07338803477074039),
            (0.5, 3.0, 0.651447964848151),
            (7.645, 19998.0, 2.18359171315666e-14),
            (1.0, 1.0, 0.49999999999999956),
            (3.3, 28.0, 0.0026404502512213323),
            (20.38, 19998.0, 2.133513953229424e-91),
        ];
        for (t, df, expected) in cases {
            let p = t_two_sided_p(t, df);
            assert!(
                (p - expected).abs() / expected < 1e-9,
                "t={t} df={df}: {p} vs {expected}"
            );
        }
    }

    #[test]
    fn betainc_matches_reference() {
        let cases = [
            (2.0, 3.0, 0.4, 0.5247999999999999),
            (0.5, 0.5, 0.25, 0.33333333333333337),
            (9999.0, 0.5, 0.97965, 2.062895523094831e-91),
            (5.0, 1.0, 0.9, 0.5904900000000001),
        ];
        for (a, b, x, expected) in cases {
            let got = betainc_reg(a, b, x);
            assert!(
                (got - expected).abs() / expected < 1e-9,
                "I_{x}({a},{b}): {got} vs {expected}"
            );
        }
    }

    #[test]
    fn pearson_self_and_negated() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap().r - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_constant_vector() {
        let x = vec![1.0; 5];
        let y = vec![0.1, 0.4, 0.3, 0.9, 0.2];
        assert!(matches!(
            pearson(&x, &y),
            Err(ValidationError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn correlations_match_scipy_fixture() {
        let x = [2.1, -0.3, 1.7, 3.3, -1.2, 0.5, 2.9, -0.8, 1.1, 0.2];
        let y = [1.0, 0.2, 1.4, 2.1, -0.9, 0.7, 1.6, 0.1, 0.3, 0.9];
        let pe = pearson(&x, &y).unwrap();
        assert!((pe.r - 0.9066337674176742).abs() < 1e-12);
        assert!((pe.p_value - 0.0002966397277099191).abs() < 1e-10);
        let sp = spearman(&x, &y).unwrap();
        assert!((sp.r - 0.9393939393939393).abs() < 1e-12);
        assert!((sp.p_value - 5.484052998513666e-5).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let x = [0.3, -1.2, 2.5, 0.7, -0.4, 1.9, 0.0, 3.3, -2.0, 1.1];
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v + 2.0).collect();
        let r = spearman(&cubed, &x).unwrap().r;
        assert!((r - 1.0).abs() < 1e-12);
    }

    // Brute-force oracle: rank both vectors, then run the covariance formula
    // directly.
    #[test]
    fn spearman_matches_rank_then_pearson_oracle() {
        let mut rng = rng::seeded(55);
        let x: Vec<f64> = (0..15).map(|_| rng::standard_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..15).map(|_| rng::standard_normal(&mut rng)).collect();
        let got = spearman(&x, &y).unwrap().r;

        let rx = average_ranks(&x);
        let ry = average_ranks(&y);
        let n = 15.0;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..15 {
            sxy += (rx[i] - mx) * (ry[i] - my);
            sxx += (rx[i] - mx) * (rx[i] - mx);
            syy += (ry[i] - my) * (ry[i] - my);
        }
        let oracle = sxy / (sxx * syy).sqrt();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn mi_independent_uniforms_near_zero() {
        let mut rng = rng::seeded(101);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng::uniform(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng::uniform(&mut rng)).collect();
        let mi = knn_mutual_information(&x, &y, 3, 1).unwrap();
        assert!(mi.abs() < 0.02, "mi {mi}");
    }

    // Analytic Gaussian MI: -0.5 ln(1 - rho^2) = 0.83037 nats at rho = 0.9.
    #[test]
    fn mi_bivariate_gaussian_matches_analytic() {
        let mut rng = rng::seeded(202);
        let n = 5000;
        let rho: f64 = 0.9;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let z1 = rng::standard_normal(&mut rng);
            let z2 = rng::standard_normal(&mut rng);
            x.push(z1);
            y.push(rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        }
        let mi = knn_mutual_information(&x, &y, 3, 2).unwrap();
        let analytic = -0.5 * (1.0 - rho * rho).ln();
        assert!((mi - analytic).abs() < 0.05, "mi {mi} vs analytic {analytic}");
    }

    #[test]
    fn mi_identical_vectors_is_large() {
        let mut rng = rng::seeded(303);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut rng)).collect();
        let mi = knn_mutual_information(&x, &x, 3, 3).unwrap();
        assert!(mi > 2.0, "mi {mi}");
    }

    #[test]
    fn mi_permutation_kills_dependence() {
        let mut rng = rng::seeded(404);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut rng)).collect();
        let mut y = x.clone();
        let perm = rng::shuffled_indices(n, &mut rng);
        y = perm.iter().map(|&i| y[i]).collect();
        let mi = knn_mutual_information(&x, &y, 3, 4).unwrap();
        assert!(mi < 0.05, "mi {mi}");
    }

    #[test]
    fn mi_rejects_k_not_below_n() {
        let x = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            knn_mutual_information(&x, &x, 3, 0),
            Err(ValidationError::KTooLarge { n: 3, k: 3 })
        ));
    }

    #[test]
    fn r2_exact_linear_relationship() {
        let mut rng = rng::seeded(7);
        let n = 50;
        let mut z = Matrix::zeros(n, 3);
        for v in z.data_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        let u: Vec<f64> = (0..n)
            .map(|r| 2.0 + 0.7 * z.get(r, 0) - 1.3 * z.get(r, 1) + 0.1 * z.get(r, 2))
            .collect();
        let r2 = predictive_r2(&z, &u).unwrap();
        assert!((r2.r_squared - 1.0).abs() < 1e-10);
        assert!(!r2.rank_deficient);
    }

    #[test]
    fn r2_constant_target_is_zero() {
        let mut rng = rng::seeded(8);
        let mut z = Matrix::zeros(10, 2);
        for v in z.data_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        let u = vec![3.5; 10];
        let r2 = predictive_r2(&z, &u).unwrap();
        assert_eq!(r2.r_squared, 0.0);
    }

    // Single-regressor R² equals the squared Pearson correlation; this is an
    // independent closed form for the 5-point hand dataset.
    #[test]
    fn r2_matches_normal_equations_oracle() {
        let z = Matrix::from_rows(&[
            vec![0.5],
            vec![-1.0],
            vec![2.0],
            vec![0.0],
            vec![1.5],
        ]);
        let u = vec![1.2, -0.3, 2.9, 0.4, 2.3];
        let r2 = predictive_r2(&z, &u).unwrap();
        let col = z.col_vec(0);
        let r = pearson(&col, &u).unwrap().r;
        assert!((r2.r_squared - r * r).abs() < 1e-10);
    }

    #[test]
    fn r2_rank_deficient_design_is_noted() {
        // Second latent dimension duplicates the first.
        let mut rng = rng::seeded(9);
        let n = 20;
        let mut z = Matrix::zeros(n, 2);
        for r in 0..n {
            let v = rng::standard_normal(&mut rng);
            z.set(r, 0, v);
            z.set(r, 1, v);
        }
        let u: Vec<f64> = (0..n).map(|r| 0.5 * z.get(r, 0) + 0.01 * r as f64).collect();
        let r2 = predictive_r2(&z, &u).unwrap();
        assert!(r2.rank_deficient);
        assert!(r2.r_squared > 0.9);
    }

    #[test]
    fn r2_nested_model_property() {
        let mut rng = rng::seeded(10);
        let n = 60;
        let mut z = Matrix::zeros(n, 4);
        for v in z.data_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        let u: Vec<f64> = (0..n)
            .map(|r| z.get(r, 0) * 0.4 - z.get(r, 2) * 0.9 + 0.3 * rng::standard_normal(&mut rng))
            .collect();
        let full = predictive_r2(&z, &u).unwrap().r_squared;
        for dim in 0..4 {
            let single = Matrix::from_vec(n, 1, z.col_vec(dim));
            let r2 = predictive_r2(&single, &u).unwrap().r_squared;
            assert!(full >= r2 - 1e-12, "full {full} < dim {dim} {r2}");
        }
    }

    #[test]
    fn signal_scalars_match_per_dim() {
        let mut rng = rng::seeded(11);
        let n = 200;
        let mut mu = Matrix::zeros(n, 3);
        for v in mu.data_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        let u: Vec<f64> = (0..n)
            .map(|r| mu.get(r, 1) + 0.5 * rng::standard_normal(&mut rng))
            .collect();
        let signal = build_signal(
            &report_with_elbo(-0.25),
            &report_with_elbo(-0.24),
            &mu,
            &u,
            3,
            0,
        )
        .unwrap();
        assert!(signal.invariants_hold());
        assert!((signal.delta_elbo - 0.01).abs() < 1e-12);
        assert!(signal.per_dim.len() == 3);
        // Dimension 1 drives u, so it carries the max correlation.
        assert_eq!(
            signal
                .per_dim
                .iter()
                .max_by(|a, b| a.spearman.abs().partial_cmp(&b.spearman.abs()).unwrap())
                .unwrap()
                .dim,
            1
        );
    }

    #[test]
    fn signal_with_u_equal_to_posterior_dim() {
        let mut rng = rng::seeded(12);
        let n = 100;
        let mut mu = Matrix::zeros(n, 2);
        for v in mu.data_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        let u = mu.col_vec(0);
        let signal = build_signal(
            &report_with_elbo(-0.25),
            &report_with_elbo(-0.25),
            &mu,
            &u,
            3,
            0,
        )
        .unwrap();
        assert!((signal.rho_max - 1.0).abs() < 1e-12);
        assert!((signal.r_squared - 1.0).abs() < 1e-10);
    }
}
