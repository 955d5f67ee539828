//! Curve fitting, rank correlation, significance and elbow detection.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Model {
    Linear,
    Quadratic,
    Cubic,
    /// `y = a * exp(b * x) + c`
    Exponential,
    /// `y = alpha * exp(-beta * x) + gamma`
    ExpDecay,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Linear => "linear",
            Model::Quadratic => "quadratic",
            Model::Cubic => "cubic",
            Model::Exponential => "exponential",
            Model::ExpDecay => "exp_decay",
        }
    }

    pub fn num_params(self) -> usize {
        match self {
            Model::Linear => 2,
            Model::Quadratic => 3,
            Model::Cubic => 4,
            Model::Exponential | Model::ExpDecay => 3,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub model: Model,
    /// Polynomials: coefficients from the constant term up.
    /// Exponential: `(a, b, c)`. ExpDecay: `(alpha, beta, gamma)`.
    pub params: Vec<f64>,
    pub r2: f64,
    /// F-test of the model against a constant mean.
    pub p_value: f64,
    /// `y - prediction`
    pub residuals: Vec<f64>,
    /// Set when `y` carries no variance to explain.
    pub degenerate: bool,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.model {
            Model::Linear | Model::Quadratic | Model::Cubic => {
                p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
            Model::Exponential => p[0] * libm::exp(p[1] * x) + p[2],
            Model::ExpDecay => p[0] * libm::exp(-p[1] * x) + p[2],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("x and y differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("x must be strictly increasing")]
    NotIncreasing,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("rank correlation is undefined for constant input")]
    ConstantInput,
    #[error("fit did not converge from any start; best SSE {}", best_sse(.best))]
    NonConvergence { best: Box<FitResult> },
    #[error("least-squares system is singular")]
    Singular,
    #[error("network never congests; extend candidates")]
    NeverCongests,
    #[error("candidate loads must be strictly increasing")]
    CandidatesNotIncreasing,
}

fn best_sse(f: &FitResult) -> f64 {
    f.residuals.iter().map(|r| r * r).sum()
}

fn check_xy(x: &[f64], y: &[f64], need: usize) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < need {
        return Err(AnalysisError::TooFewPoints { need, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

fn strictly_increasing(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] < w[1])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn total_ss(y: &[f64]) -> f64 {
    let m = mean(y);
    y.iter().map(|v| (v - m) * (v - m)).sum()
}

// ---------------------------------------------------------------------------
// Special functions

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
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

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f == f64::INFINITY {
        return 0.0;
    }
    betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// F-test p-value of a `k`-parameter model against the constant mean.
pub fn f_test_p_value(ss_tot: f64, ss_res: f64, n: usize, k: usize) -> f64 {
    if n <= k || k < 2 {
        return 1.0;
    }
    if ss_tot <= 0.0 {
        return 1.0;
    }
    if ss_res <= 0.0 {
        return 0.0;
    }
    let (d1, d2) = ((k - 1) as f64, (n - k) as f64);
    let explained = (ss_tot - ss_res).max(0.0);
    f_survival((explained / d1) / (ss_res / d2), d1, d2)
}

// ---------------------------------------------------------------------------
// Dense linear algebra for tiny systems

/// Least squares `min |A c - y|` via Householder QR. `cols` are the columns of A.
fn lstsq(cols: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = y.len();
    let k = cols.len();
    if m < k {
        return None;
    }
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut b = y.to_vec();
    let scale = a
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    for j in 0..k {
        let norm = libm::sqrt(a[j][j..].iter().map(|v| v * v).sum::<f64>());
        if norm <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(j) {
            let dot: f64 = v.iter().zip(&col[j..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (ci, vi) in col[j..].iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[j..]).map(|(p, q)| p * q).sum();
        let f = 2.0 * dot / vnorm2;
        for (bi, vi) in b[j..].iter_mut().zip(&v) {
            *bi -= f * vi;
        }
    }
    let mut c = vec![0.0; k];
    for j in (0..k).rev() {
        let s: f64 = ((j + 1)..k).map(|i| a[i][j] * c[i]).sum();
        c[j] = (b[j] - s) / a[j][j];
    }
    c.iter().all(|v| v.is_finite()).then_some(c)
}

/// Solves a 3x3 system with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = ((i + 1)..3).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

// ---------------------------------------------------------------------------
// Exponential fits

const GTOL: f64 = 1e-8;
const MAX_ITER: usize = 2000;

struct LmOutcome {
    p: [f64; 3],
    sse: f64,
    converged: bool,
}

fn exp_sse(t: &[f64], y: &[f64], p: &[f64; 3]) -> f64 {
    let s: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let r = p[0] * libm::exp(p[1] * ti) + p[2] - yi;
            r * r
        })
        .sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Levenberg-Marquardt on `a * exp(b t) + c` with Marquardt diagonal scaling.
/// Convergence: every Jacobian column is within cosine `GTOL` of orthogonal
/// to the residual, or no further decrease is representable.
fn levenberg_marquardt(t: &[f64], y: &[f64], p0: [f64; 3]) -> LmOutcome {
    let mut p = p0;
    let mut sse = exp_sse(t, y, &p);
    if !sse.is_finite() {
        return LmOutcome {
            p,
            sse,
            converged: false,
        };
    }
    let mut diag = [0.0f64; 3];
    let mut lambda = -1.0;
    for _ in 0..MAX_ITER {
        if sse == 0.0 {
            return LmOutcome {
                p,
                sse,
                converged: true,
            };
        }
        let mut jtj = [[0.0; 3]; 3];
        let mut g = [0.0; 3];
        for (&ti, &yi) in t.iter().zip(y) {
            let e = libm::exp(p[1] * ti);
            let r = p[0] * e + p[2] - yi;
            let j = [e, p[0] * ti * e, 1.0];
            for a in 0..3 {
                g[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let rnorm = libm::sqrt(sse);
        let gcos = (0..3)
            .filter(|&i| jtj[i][i] > 0.0)
            .map(|i| g[i].abs() / (rnorm * libm::sqrt(jtj[i][i])))
            .fold(0.0f64, f64::max);
        if gcos <= GTOL {
            return LmOutcome {
                p,
                sse,
                converged: true,
            };
        }
        for i in 0..3 {
            diag[i] = diag[i].max(jtj[i][i]);
        }
        let dmax = diag.iter().copied().fold(0.0f64, f64::max);
        if lambda < 0.0 {
            lambda = 1e-3;
        }
        loop {
            let mut a = jtj;
            for i in 0..3 {
                a[i][i] += lambda * diag[i].max(1e-300 * dmax.max(1.0));
            }
            let step = solve3(a, [-g[0], -g[1], -g[2]]);
            if let Some(d) = step {
                let cand = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                let cand_sse = exp_sse(t, y, &cand);
                if cand_sse < sse {
                    let pnorm = libm::sqrt(p.iter().map(|v| v * v).sum::<f64>());
                    let dnorm = libm::sqrt(d.iter().map(|v| v * v).sum::<f64>());
                    let tiny_step = dnorm <= 1e-15 * (pnorm + 1e-15);
                    let tiny_gain = sse - cand_sse <= 1e-15 * sse;
                    p = cand;
                    sse = cand_sse;
                    lambda = (lambda / 3.0).max(1e-12);
                    if tiny_step || tiny_gain {
                        return LmOutcome {
                            p,
                            sse,
                            converged: true,
                        };
                    }
                    break;
                }
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // No representable decrease left: a stationary point to
                // working precision.
                return LmOutcome {
                    p,
                    sse,
                    converged: true,
                };
            }
        }
    }
    LmOutcome {
        p,
        sse,
        converged: false,
    }
}

/// For a fixed rate, `a` and `c` enter linearly; solve them directly.
fn linear_amplitude(t: &[f64], y: &[f64], b: f64) -> Option<[f64; 3]> {
    let basis = t.iter().map(|&ti| libm::exp(b * ti)).collect::<Vec<_>>();
    let ones = vec![1.0; t.len()];
    let ac = lstsq(&[basis, ones], y)?;
    Some([ac[0], b, ac[1]])
}

/// Initial rate from a log-linear regression of `|y - c0|` on `t`.
fn initial_rate(t: &[f64], y: &[f64], c0: f64) -> f64 {
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &yi)| (yi - c0).abs() > 1e-12 * scale)
        .map(|(&ti, &yi)| (ti, libm::log((yi - c0).abs())))
        .collect();
    if pts.len() < 2 {
        return -1.0;
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if sxx == 0.0 {
        return -1.0;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let b = sxy / sxx;
    if b == 0.0 || !b.is_finite() {
        -1.0
    } else {
        b
    }
}

enum Anchor {
    LargestX,
    MinY,
}

/// Fits `a * exp(b x) + c`; returns `(a, b, c)` in original units plus SSE.
fn fit_exp_core(x: &[f64], y: &[f64], anchor: Anchor) -> Result<([f64; 3], f64), ([f64; 3], f64)> {
    let sx = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sx = if sx > 0.0 { sx } else { 1.0 };
    let t: Vec<f64> = x.iter().map(|v| v / sx).collect();
    let c0 = match anchor {
        Anchor::LargestX => {
            let i = (0..x.len()).max_by(|&i, &j| x[i].total_cmp(&x[j])).unwrap();
            y[i]
        }
        Anchor::MinY => y.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let b0 = initial_rate(&t, y, c0);
    let mut best: Option<LmOutcome> = None;
    let mut best_any: Option<LmOutcome> = None;
    for b in [b0, 0.5 * b0, 2.0 * b0, -b0] {
        let Some(start) = linear_amplitude(&t, y, b) else {
            continue;
        };
        let out = levenberg_marquardt(&t, y, start);
        let keep = |cur: &Option<LmOutcome>| cur.as_ref().is_none_or(|c| out.sse < c.sse);
        if out.converged {
            if keep(&best) {
                best = Some(out);
            }
        } else if keep(&best_any) {
            best_any = Some(out);
        }
    }
    let unscale = |p: [f64; 3]| [p[0], p[1] / sx, p[2]];
    match (best, best_any) {
        (Some(o), _) => Ok((unscale(o.p), o.sse)),
        (None, Some(o)) => Err((unscale(o.p), o.sse)),
        (None, None) => Err(([0.0, 0.0, mean(y)], total_ss(y))),
    }
}

fn finish_fit(model: Model, params: Vec<f64>, x: &[f64], y: &[f64]) -> FitResult {
    let mut fit = FitResult {
        model,
        params,
        r2: 0.0,
        p_value: 1.0,
        residuals: Vec::new(),
        degenerate: false,
    };
    fit.residuals = x.iter().zip(y).map(|(&xi, &yi)| yi - fit.predict(xi)).collect();
    let ss_res: f64 = fit.residuals.iter().map(|r| r * r).sum();
    let ss_tot = total_ss(y);
    if ss_tot == 0.0 {
        fit.degenerate = true;
        fit.r2 = 0.0;
        fit.p_value = 1.0;
    } else {
        fit.r2 = 1.0 - ss_res / ss_tot;
        fit.p_value = f_test_p_value(ss_tot, ss_res, y.len(), model.num_params());
    }
    fit
}

fn constant_fit(model: Model, x: &[f64], y: &[f64]) -> FitResult {
    let params = match model {
        Model::Linear => vec![y[0], 0.0],
        Model::Quadratic => vec![y[0], 0.0, 0.0],
        Model::Cubic => vec![y[0], 0.0, 0.0, 0.0],
        Model::Exponential | Model::ExpDecay => vec![0.0, 0.0, y[0]],
    };
    finish_fit(model, params, x, y)
}

/// Least-squares fit of `y = a * exp(b x) + c` over increasing `x`.
pub fn fit_exponential(x: &[f64], y: &[f64]) -> Result<FitResult, AnalysisError> {
    check_xy(x, y, 5)?;
    if !strictly_increasing(x) {
        return Err(AnalysisError::NotIncreasing);
    }
    if total_ss(y) == 0.0 {
        return Ok(constant_fit(Model::Exponential, x, y));
    }
    match fit_exp_core(x, y, Anchor::LargestX) {
        Ok((p, _)) => Ok(finish_fit(Model::Exponential, p.to_vec(), x, y)),
        Err((p, _)) => Err(AnalysisError::NonConvergence {
            best: Box::new(finish_fit(Model::Exponential, p.to_vec(), x, y)),
        }),
    }
}

/// Least-squares fit of `de = alpha * exp(-beta * dd) + gamma` over paired
/// marginal series. The p-value is the F-test against a constant mean.
pub fn fit_exp_decay(dd: &[f64], de: &[f64]) -> Result<FitResult, AnalysisError> {
    check_xy(dd, de, 5)?;
    if total_ss(de) == 0.0 {
        return Ok(constant_fit(Model::ExpDecay, dd, de));
    }
    let to_decay = |p: [f64; 3]| vec![p[0], -p[1], p[2]];
    match fit_exp_core(dd, de, Anchor::MinY) {
        Ok((p, _)) => Ok(finish_fit(Model::ExpDecay, to_decay(p), dd, de)),
        Err((p, _)) => Err(AnalysisError::NonConvergence {
            best: Box::new(finish_fit(Model::ExpDecay, to_decay(p), dd, de)),
        }),
    }
}

/// Polynomial least squares of the given degree (1..=3). The fit runs on `x`
/// mapped to `[-1, 1]`; reported coefficients are in original units.
pub fn fit_polynomial(x: &[f64], y: &[f64], degree: usize) -> Result<FitResult, AnalysisError> {
    let model = match degree {
        1 => Model::Linear,
        2 => Model::Quadratic,
        3 => Model::Cubic,
        _ => panic!("unsupported polynomial degree {degree}"),
    };
    check_xy(x, y, degree + 2)?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    let half = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let t: Vec<f64> = x.iter().map(|v| (v - mid) / half).collect();
    let cols: Vec<Vec<f64>> = (0..=degree)
        .map(|k| t.iter().map(|&ti| libm::pow(ti, k as f64)).collect())
        .collect();
    let ct = lstsq(&cols, y).ok_or(AnalysisError::Singular)?;
    // Expand sum c_k ((x - mid) / half)^k into powers of x.
    let mut coeffs = vec![0.0; degree + 1];
    let mut power = vec![1.0];
    for &c in &ct {
        for (i, &pv) in power.iter().enumerate() {
            coeffs[i] += c * pv;
        }
        let mut next = vec![0.0; power.len() + 1];
        for (i, &pv) in power.iter().enumerate() {
            next[i] += pv * (-mid / half);
            next[i + 1] += pv / half;
        }
        power = next;
    }
    Ok(finish_fit(model, coeffs, x, y))
}

/// Fits of all candidate families, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRanking {
    pub ranked: Vec<FitResult>,
    pub failures: Vec<(Model, AnalysisError)>,
}

/// R² gap under which two fits count as equally good.
pub const R2_TIE: f64 = 1e-9;

/// Fits linear, quadratic, cubic and exponential models and ranks them by
/// R², preferring fewer parameters on ties.
pub fn model_selection(x: &[f64], y: &[f64]) -> Result<ModelRanking, AnalysisError> {
    check_xy(x, y, 6)?;
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    let attempts = [
        (Model::Linear, fit_polynomial(x, y, 1)),
        (Model::Quadratic, fit_polynomial(x, y, 2)),
        (Model::Cubic, fit_polynomial(x, y, 3)),
        (Model::Exponential, fit_exponential(x, y)),
    ];
    for (model, res) in attempts {
        match res {
            Ok(f) => ranked.push(f),
            Err(e) => failures.push((model, e)),
        }
    }
    ranked.sort_by(|a, b| {
        if (a.r2 - b.r2).abs() <= R2_TIE {
            a.model
                .num_params()
                .cmp(&b.model.num_params())
                .then(a.model.cmp(&b.model))
        } else {
            b.r2.total_cmp(&a.r2)
        }
    });
    Ok(ModelRanking { ranked, failures })
}

// ---------------------------------------------------------------------------
// Rank correlation

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check_xy(x, y, 3)?;
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(AnalysisError::ConstantInput)
}

// ---------------------------------------------------------------------------
// Elbow detection

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elbow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    /// All points lie on the chord; `index` is then the first interior point.
    pub collinear: bool,
}

/// Point of maximum perpendicular distance to the chord joining the first
/// and last points, measured after min-max normalizing both axes. Ties go to
/// the smallest `x`.
pub fn elbow_point(x: &[f64], y: &[f64]) -> Result<Elbow, AnalysisError> {
    check_xy(x, y, 3)?;
    if !strictly_increasing(x) {
        return Err(AnalysisError::NotIncreasing);
    }
    let n = x.len();
    let (x0, x1) = (x[0], x[n - 1]);
    let ylo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let yhi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first_interior = Elbow {
        index: 1,
        x: x[1],
        y: y[1],
        collinear: true,
    };
    if yhi == ylo {
        return Ok(first_interior);
    }
    let nx = |v: f64| (v - x0) / (x1 - x0);
    let ny = |v: f64| (v - ylo) / (yhi - ylo);
    let (ay, by) = (ny(y[0]), ny(y[n - 1]));
    let (dx, dy) = (1.0, by - ay);
    let len = libm::hypot(dx, dy);
    let dist: Vec<f64> = (0..n)
        .map(|i| ((nx(x[i])) * dy - (ny(y[i]) - ay) * dx).abs() / len)
        .collect();
    let best = dist.iter().copied().fold(0.0f64, f64::max);
    if best <= 1e-12 {
        return Ok(first_interior);
    }
    let index = (0..n).find(|&i| dist[i] >= best - 1e-12 * best).unwrap();
    Ok(Elbow {
        index,
        x: x[index],
        y: y[index],
        collinear: false,
    })
}

// ---------------------------------------------------------------------------
// Traffic-load calibration

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoadCalibration {
    pub n_low: usize,
    pub n_high: usize,
    pub candidates: Vec<usize>,
    pub mean_teleports: Vec<f64>,
}

/// Picks the high load at the elbow of the teleport curve and the low load
/// as the largest candidate not above a third of it.
pub fn loads_from_teleports(
    candidates: &[usize],
    mean_teleports: &[f64],
) -> Result<LoadCalibration, AnalysisError> {
    if candidates.len() != mean_teleports.len() {
        return Err(AnalysisError::LengthMismatch {
            x: candidates.len(),
            y: mean_teleports.len(),
        });
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::CandidatesNotIncreasing);
    }
    if mean_teleports.iter().all(|&t| t == 0.0) {
        return Err(AnalysisError::NeverCongests);
    }
    let xs: Vec<f64> = candidates.iter().map(|&c| c as f64).collect();
    let elbow = elbow_point(&xs, mean_teleports)?;
    let n_high = candidates[elbow.index];
    let n_low = candidates
        .iter()
        .copied()
        .filter(|&c| 3 * c <= n_high)
        .max()
        .unwrap_or(candidates[0]);
    Ok(LoadCalibration {
        n_low,
        n_high,
        candidates: candidates.to_vec(),
        mean_teleports: mean_teleports.to_vec(),
    })
}
