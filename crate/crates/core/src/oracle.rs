//! Maximum throughput of the non-fragmenting equivalent system.
//!
//! With `S_n` the sum of `n` request sizes, the mean number of channels at
//! capacity is
//!
//! ```text
//! E(R) = 1 / sum_{n>=2} P(S_n > 1) / (n (n - 1))
//!      = 1 / sum_{n>=1} P(S_n <= 1 < S_{n+1}) / n
//! ```
//!
//! For sizes uniform on `(0, alpha]`, `P(S_n <= 1)` is the Irwin–Hall CDF
//! at `1 / alpha`. Its alternating series cancels catastrophically in
//! floating point, so small cases are evaluated in exact rational
//! arithmetic, larger ones in compensated `f64` with an error bound, and
//! anything beyond that by seeded Monte Carlo.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};
use thiserror::Error;

/// Terms are summed until `P(S_n > 1)` exceeds `1 - STOP_EPS`.
pub const STOP_EPS: f64 = 1e-12;

/// Unclamped CDF values outside `[-RANGE_TOL, 1 + RANGE_TOL]` signal
/// precision loss.
pub const RANGE_TOL: f64 = 1e-9;

pub const DEFAULT_TOL: f64 = 1e-6;

const STREAM_SERIES_A: u64 = 1 << 32;
const STREAM_SERIES_B: u64 = 2 << 32;
const STREAM_TERM: u64 = 3 << 32;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("precision loss evaluating the Irwin-Hall CDF (n = {n}, x = {x}): value {value}, error bound {bound:e}")]
    PrecisionLoss { n: u32, x: f64, value: f64, bound: f64 },
    #[error("series disagree for alpha = {alpha}: {first} vs {second} (allowed {allowed:e})")]
    CrossCheckFailure {
        alpha: f64,
        first: f64,
        second: f64,
        allowed: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
    Hybrid,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::MonteCarlo => "monte_carlo",
            Method::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub alpha: f64,
    pub expected_r: f64,
    pub method: Method,
    pub std_error: f64,
    pub terms_used: u32,
    /// `E(R)` from the second series.
    pub cross_check: f64,
}

impl OracleResult {
    /// `alpha expected_r method std_error terms_used`
    pub fn line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.alpha, self.expected_r, self.method, self.std_error, self.terms_used
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    /// Exact rational evaluation only when `1 / alpha` is at most this...
    pub exact_max_inv_alpha: f64,
    /// ...and `n` is at most this.
    pub exact_max_n: u32,
    pub mc_samples: u64,
    pub mc_partitions: u32,
    pub seed: u64,
    pub force_monte_carlo: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            exact_max_inv_alpha: 20.0,
            exact_max_n: 80,
            mc_samples: 10_000_000,
            mc_partitions: 16,
            seed: 0x4b52_1990,
            force_monte_carlo: false,
        }
    }
}

impl Policy {
    pub fn monte_carlo(samples: u64) -> Self {
        Policy {
            mc_samples: samples,
            force_monte_carlo: true,
            ..Policy::default()
        }
    }

    fn exact_alpha(&self, alpha: f64) -> bool {
        !self.force_monte_carlo && 1.0 / alpha <= self.exact_max_inv_alpha + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability {
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
}

/// The value of `x` as printed (shortest round-trip decimal), as a rational.
pub fn decimal_rational(x: f64) -> BigRational {
    let text = format!("{x}");
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let numer: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
    let denom = BigInt::from(10u32).pow(frac.len() as u32);
    let r = BigRational::new(numer, denom);
    if neg {
        -r
    } else {
        r
    }
}

fn binomials(n: u32) -> Vec<BigInt> {
    let mut row = Vec::with_capacity(n as usize + 1);
    let mut c = BigInt::one();
    row.push(c.clone());
    for k in 1..=n {
        c = c * BigInt::from(n - k + 1) / BigInt::from(k);
        row.push(c.clone());
    }
    row
}

fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn floor_u32(x: &BigRational) -> u32 {
    x.floor().to_integer().to_u32().unwrap_or(u32::MAX)
}

/// `P(U_1 + ... + U_n <= x)` for i.i.d. `Uniform(0, 1)`, exactly.
pub fn irwin_hall_cdf_exact(n: u32, x: &BigRational) -> BigRational {
    if !x.is_positive() {
        return BigRational::zero();
    }
    if *x >= BigRational::from_integer(BigInt::from(n)) {
        return BigRational::one();
    }
    let (p, q) = (x.numer(), x.denom());
    let c = binomials(n);
    let mut sum = BigInt::zero();
    for k in 0..=floor_u32(x).min(n) {
        let base = p - BigInt::from(k) * q;
        let term = &c[k as usize] * base.pow(n);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    BigRational::new(sum, q.pow(n) * factorial(n))
}

/// `P(S_n <= x < S_{n+1})` for `Uniform(0, 1)` sums, exactly, by integrating
/// the density of `S_n` against `P(U > x - s)`.
pub fn irwin_hall_straddle_exact(n: u32, x: &BigRational) -> BigRational {
    assert!(n >= 1);
    if !x.is_positive() {
        return BigRational::zero();
    }
    let c = binomials(n);
    let (n1, nn) = (
        BigRational::from_integer(BigInt::from(n + 1)),
        BigRational::from_integer(BigInt::from(n)),
    );
    let one = BigRational::one();
    let mut sum = BigRational::zero();
    for k in 0..=floor_u32(x).min(n) {
        // t = s - k runs over [max(c0, 0), c0 + 1] with c0 = x - 1 - k;
        // integrand t^(n-1) (t - c0).
        let c0 = x - &one - BigRational::from_integer(BigInt::from(k));
        let top = &c0 + &one;
        let antiderivative =
            |t: &BigRational| t.pow(n as i32 + 1) / &n1 - &c0 * t.pow(n as i32) / &nn;
        let mut piece = antiderivative(&top);
        if c0.is_positive() {
            piece -= antiderivative(&c0);
        }
        let term = BigRational::from_integer(c[k as usize].clone()) * piece;
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    sum / BigRational::from_integer(factorial(n - 1))
}

/// Alternating series in compensated `f64`, with a running error bound.
pub fn irwin_hall_cdf_f64(n: u32, x: f64) -> Result<f64, OracleError> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= f64::from(n) {
        return Ok(1.0);
    }
    let ln_nfact = ln_factorial(n as u64);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut bound = 0.0f64;
    for k in 0..=(x.floor() as u32).min(n) {
        let base = x - f64::from(k);
        if base <= 0.0 {
            continue;
        }
        let log_mag = ln_binomial(n as u64, k as u64) + f64::from(n) * base.ln() - ln_nfact;
        let mag = log_mag.exp();
        let term = if k % 2 == 0 { mag } else { -mag };
        // Neumaier summation
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        bound += mag * (log_mag.abs() + f64::from(n) + 4.0) * f64::EPSILON;
    }
    let value = sum + comp;
    if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&value) || bound > RANGE_TOL {
        return Err(OracleError::PrecisionLoss { n, x, value, bound });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Irwin–Hall CDF. Exact rational evaluation of the decimal value of `x`
/// for `n <= 80`, compensated `f64` beyond.
pub fn irwin_hall_cdf(n: u32, x: f64) -> Result<f64, OracleError> {
    if n == 0 {
        return Err(OracleError::InvalidArgument("n must be positive".into()));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(OracleError::InvalidArgument(format!("x = {x}")));
    }
    if n <= Policy::default().exact_max_n {
        let v = irwin_hall_cdf_exact(n, &decimal_rational(x));
        return Ok(v.to_f64().unwrap_or(f64::NAN).clamp(0.0, 1.0));
    }
    irwin_hall_cdf_f64(n, x)
}

fn partition_sizes(total: u64, parts: u32) -> Vec<u64> {
    let parts = u64::from(parts.max(1));
    (0..parts)
        .map(|i| total / parts + u64::from(i < total % parts))
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Monte-Carlo estimate of `P(S_n > 1)` with `S_n` a sum of `n` sizes
/// uniform on `(0, alpha]`.
pub fn p_sum_exceeds_one_mc(n: u32, alpha: f64, policy: &Policy) -> Probability {
    let parts = partition_sizes(policy.mc_samples, policy.mc_partitions);
    let hits: u64 = parts
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = stream_rng(policy.seed, STREAM_TERM + (u64::from(n) << 12) + i as u64);
            (0..m)
                .filter(|_| (0..n).map(|_| alpha * (1.0 - rng.gen::<f64>())).sum::<f64>() > 1.0)
                .count() as u64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let m = policy.mc_samples as f64;
    let p = hits as f64 / m;
    Probability {
        value: p,
        std_error: (p * (1.0 - p) / m).sqrt(),
        method: Method::MonteCarlo,
    }
}

/// `P(S_n > 1)`: exact when the policy allows, then compensated `f64`,
/// then Monte Carlo.
pub fn p_sum_exceeds_one(n: u32, alpha: f64, policy: &Policy) -> Result<Probability, OracleError> {
    if n == 0 || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(OracleError::InvalidArgument(format!("n = {n}, alpha = {alpha}")));
    }
    if policy.force_monte_carlo {
        return Ok(p_sum_exceeds_one_mc(n, alpha, policy));
    }
    if policy.exact_alpha(alpha) && n <= policy.exact_max_n {
        let x = decimal_rational(alpha).recip();
        let p = BigRational::one() - irwin_hall_cdf_exact(n, &x);
        return Ok(Probability {
            value: p.to_f64().unwrap_or(f64::NAN),
            std_error: 0.0,
            method: Method::Exact,
        });
    }
    match irwin_hall_cdf_f64(n, 1.0 / alpha) {
        Ok(cdf) => Ok(Probability {
            value: 1.0 - cdf,
            std_error: 0.0,
            method: Method::Exact,
        }),
        Err(OracleError::PrecisionLoss { .. }) => Ok(p_sum_exceeds_one_mc(n, alpha, policy)),
        Err(e) => Err(e),
    }
}

/// `sum_{n >= first} 1 / (n (n - 1)) = 1 / (first - 1)`.
pub fn telescoping_tail(first: u32) -> f64 {
    assert!(first >= 2);
    1.0 / f64::from(first - 1)
}

/// Maximum throughput `E(R)` for sizes uniform on `(0, alpha]`.
pub fn expected_r(alpha: f64, tol: f64, policy: &Policy) -> Result<OracleResult, OracleError> {
    if !(alpha > 0.0 && alpha <= 1.0) || !(tol > 0.0) {
        return Err(OracleError::InvalidArgument(format!("alpha = {alpha}, tol = {tol}")));
    }
    let result = if policy.exact_alpha(alpha) {
        series(alpha, policy)?
    } else {
        monte_carlo(alpha, policy)
    };
    let allowed = tol.max(3.0 * result.std_error * std::f64::consts::SQRT_2);
    if (result.expected_r - result.cross_check).abs() > allowed {
        return Err(OracleError::CrossCheckFailure {
            alpha,
            first: result.expected_r,
            second: result.cross_check,
            allowed,
        });
    }
    Ok(result)
}

/// Term-by-term evaluation of both series.
fn series(alpha: f64, policy: &Policy) -> Result<OracleResult, OracleError> {
    let x = decimal_rational(alpha).recip();
    let mut exceed = vec![0.0, 0.0]; // P(S_n > 1) indexed by n; P(S_1 > 1) = 0
    let mut variance = 0.0;
    let mut any_mc = false;
    let mut first = 0.0;
    let mut n = 2u32;
    let stop = loop {
        let p = p_sum_exceeds_one(n, alpha, policy)?;
        any_mc |= p.method == Method::MonteCarlo;
        let w = 1.0 / (f64::from(n) * f64::from(n - 1));
        variance += (w * p.std_error).powi(2);
        exceed.push(p.value);
        if p.value > 1.0 - STOP_EPS {
            first += telescoping_tail(n);
            break n;
        }
        first += w * p.value;
        n += 1;
    };

    let mut second = 0.0;
    for n in 1..=stop {
        let straddle = if n <= policy.exact_max_n {
            irwin_hall_straddle_exact(n, &x).to_f64().unwrap_or(f64::NAN)
        } else {
            exceed[n as usize + 1..].first().copied().unwrap_or(1.0) - exceed[n as usize]
        };
        second += straddle / f64::from(n);
    }

    let expected_r = 1.0 / first;
    Ok(OracleResult {
        alpha,
        expected_r,
        method: if any_mc { Method::Hybrid } else { Method::Exact },
        std_error: variance.sqrt() * expected_r * expected_r,
        terms_used: stop,
        cross_check: 1.0 / second,
    })
}

/// Per-path statistics: each path draws sizes until their sum exceeds 1.
/// With `N` the index of the first size that does not fit,
/// `sum_{n>=2} P(S_n > 1) / (n (n-1)) = E[1 / (N - 1)]`.
struct PathSample {
    mean_inv: f64,
    var_inv: f64,
    max_n: u32,
}

fn sample_paths(alpha: f64, policy: &Policy, stream_base: u64) -> PathSample {
    let parts = partition_sizes(policy.mc_samples, policy.mc_partitions);
    let partials: Vec<(f64, f64, u32)> = parts
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = stream_rng(policy.seed, stream_base + i as u64);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut max_n = 0;
            for _ in 0..m {
                let mut s = 0.0;
                let mut fit = 0u32;
                loop {
                    s += alpha * (1.0 - rng.gen::<f64>());
                    if s > 1.0 {
                        break;
                    }
                    fit += 1;
                }
                let inv = 1.0 / f64::from(fit.max(1));
                sum += inv;
                sum_sq += inv * inv;
                max_n = max_n.max(fit + 1);
            }
            (sum, sum_sq, max_n)
        })
        .collect();
    let m = policy.mc_samples as f64;
    let (sum, sum_sq, max_n) = partials
        .into_iter()
        .fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2.max(b.2)));
    let mean = sum / m;
    PathSample {
        mean_inv: mean,
        var_inv: (sum_sq / m - mean * mean).max(0.0),
        max_n,
    }
}

fn monte_carlo(alpha: f64, policy: &Policy) -> OracleResult {
    let a = sample_paths(alpha, policy, STREAM_SERIES_A);
    let b = sample_paths(alpha, policy, STREAM_SERIES_B);
    let m = policy.mc_samples as f64;
    let expected_r = 1.0 / a.mean_inv;
    OracleResult {
        alpha,
        expected_r,
        method: Method::MonteCarlo,
        std_error: (a.var_inv / m).sqrt() * expected_r * expected_r,
        terms_used: a.max_n,
        cross_check: 1.0 / b.mean_inv,
    }
}
