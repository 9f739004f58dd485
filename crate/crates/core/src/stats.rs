//! Aggregation of per-departure records.
//!
//! Counts observed at departure epochs (gaps, fragments, types, `G/R`) are
//! event-averaged. Quantities meant "at a random time" (channel count,
//! fragments per channel, sizes, first-gap position, the random-time gap
//! pmf) are weighted by how long the post-event state holds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::engine::{DepartureRecord, RunConfig, RNG_DERIVATION, RNG_NAME};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("degenerate sample: all values equal")]
    DegenerateSample,
    #[error("empty sample")]
    Empty,
}

/// Exact integer counts per integer value. Serialized as `[value, count]`
/// pairs in increasing value order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(u32, u64)>", into = "Vec<(u32, u64)>")]
pub struct Histogram {
    counts: BTreeMap<u32, u64>,
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: u32, count: u64) {
        if count > 0 {
            *self.counts.entry(value).or_insert(0) += count;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.counts.iter().map(|(&v, &c)| (v, c))
    }

    pub fn pmf(&self) -> Vec<(u32, f64)> {
        let n = self.total() as f64;
        self.iter().map(|(v, c)| (v, c as f64 / n)).collect()
    }

    pub fn mean(&self) -> f64 {
        let n = self.total() as f64;
        self.iter().map(|(v, c)| f64::from(v) * c as f64).sum::<f64>() / n
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let n = self.total() as f64;
        let mean = self.mean();
        let ss: f64 = self
            .iter()
            .map(|(v, c)| (f64::from(v) - mean).powi(2) * c as f64)
            .sum();
        (ss / n).sqrt()
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (v, c) in other.iter() {
            self.add(v, c);
        }
    }
}

/// Real-valued weights per integer value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct WeightedHistogram {
    weights: BTreeMap<u32, f64>,
}

impl WeightedHistogram {
    pub fn add(&mut self, value: u32, weight: f64) {
        *self.weights.entry(value).or_insert(0.0) += weight;
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.weights.iter().map(|(&v, &w)| (v, w))
    }

    pub fn pmf(&self) -> Vec<(u32, f64)> {
        let n = self.total();
        self.iter().map(|(v, w)| (v, w / n)).collect()
    }

    pub fn merge(&mut self, other: &WeightedHistogram) {
        for (v, w) in other.iter() {
            self.add(v, w);
        }
    }
}

impl From<Vec<(u32, u64)>> for Histogram {
    fn from(pairs: Vec<(u32, u64)>) -> Self {
        let mut h = Histogram::new();
        for (v, c) in pairs {
            h.add(v, c);
        }
        h
    }
}

impl From<Histogram> for Vec<(u32, u64)> {
    fn from(h: Histogram) -> Self {
        h.counts.into_iter().collect()
    }
}

impl From<Vec<(u32, f64)>> for WeightedHistogram {
    fn from(pairs: Vec<(u32, f64)>) -> Self {
        let mut h = WeightedHistogram::default();
        for (v, w) in pairs {
            h.add(v, w);
        }
        h
    }
}

impl From<WeightedHistogram> for Vec<(u32, f64)> {
    fn from(h: WeightedHistogram) -> Self {
        h.weights.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFitResult {
    pub mean: f64,
    pub std: f64,
    pub ks_distance: f64,
    /// `floor(1 / alpha)`.
    pub m: u32,
    pub beta_hat: f64,
    pub theta_hat: f64,
}

/// Fits a normal law to an integer-valued sample by its moments.
///
/// The KS distance compares the empirical CDF at each observed value `v`
/// with the normal CDF at `v + 0.5`, i.e. each integer stands for the unit
/// bin centred on it.
pub fn fit_normal(samples: &Histogram, m: u32) -> Result<NormalFitResult, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let mean = samples.mean();
    let std = samples.std();
    if samples.counts.len() < 2 || !(std > 0.0) {
        return Err(StatsError::DegenerateSample);
    }
    let normal = Normal::new(mean, std).map_err(|_| StatsError::DegenerateSample)?;
    let n = samples.total() as f64;
    let mut below = 0u64;
    let mut ks: f64 = 0.0;
    for (v, c) in samples.iter() {
        let lower = normal.cdf(f64::from(v) - 0.5);
        ks = ks.max((below as f64 / n - lower).abs());
        below += c;
        let upper = normal.cdf(f64::from(v) + 0.5);
        ks = ks.max((below as f64 / n - upper).abs());
    }
    let mf = f64::from(m.max(1));
    Ok(NormalFitResult {
        mean,
        std,
        ks_distance: ks.min(1.0),
        m,
        beta_hat: mean / (mf * mf),
        theta_hat: std / mf.powf(1.5),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaDiagnostics {
    pub first_half_mean: f64,
    pub second_half_mean: f64,
    /// `|second - first| / overall mean`.
    pub relative_gap: f64,
    /// Spearman correlation between event index and sigma over 100 evenly
    /// thinned points.
    pub trend_spearman: f64,
}

pub const TREND_POINTS: usize = 100;

pub fn sigma_stationarity(series: &[u32]) -> Option<SigmaDiagnostics> {
    if series.len() < 2 {
        return None;
    }
    let mid = series.len() / 2;
    let mean = |xs: &[u32]| xs.iter().map(|&x| f64::from(x)).sum::<f64>() / xs.len() as f64;
    let first = mean(&series[..mid]);
    let second = mean(&series[mid..]);
    let overall = mean(series);
    let points = TREND_POINTS.min(series.len());
    let thinned: Vec<f64> = (0..points)
        .map(|i| f64::from(series[i * series.len() / points]))
        .collect();
    let index: Vec<f64> = (0..points).map(|i| i as f64).collect();
    Some(SigmaDiagnostics {
        first_half_mean: first,
        second_half_mean: second,
        relative_gap: if overall > 0.0 {
            (second - first).abs() / overall
        } else {
            0.0
        },
        trend_spearman: spearman(&index, &thinned),
    })
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCountPmfs {
    /// Time-weighted: the gap count seen at a random time.
    pub random_time: WeightedHistogram,
    /// Gap count seen by the first admission after a departure.
    pub first_admission: Histogram,
    /// Gap count right after a departure, before admissions.
    pub post_departure: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub generator: String,
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub events: u64,
    pub measured_time: f64,
    /// Time-averaged number of channels.
    pub mean_r: f64,
    /// Channel count averaged over departure epochs.
    pub mean_r_events: f64,
    pub mean_g: f64,
    pub mean_f: f64,
    pub mean_admissions: f64,
    /// Time-averaged `F / R`.
    pub mean_frags_per_channel: f64,
    pub frags_per_channel_std: f64,
    /// Mean over departure epochs of `G / R`.
    pub mean_g_over_r: f64,
    /// `mean_g / mean_r_events`, for comparison.
    pub ratio_of_means_g_over_r: f64,
    /// Shares of type-0, type-1 and type-2 fragments.
    pub type_fractions: [f64; 3],
    pub mean_gap_size: f64,
    pub mean_fragment_size: f64,
    pub mean_first_gap_lo: f64,
    /// Departure epochs at which no gap touched the right end.
    pub right_end_occupied_events: u64,
    pub frags_per_channel_pmf: Histogram,
    pub total_fragments_pmf: Histogram,
    pub gap_count_pmfs: GapCountPmfs,
    pub sigma: Option<SigmaDiagnostics>,
    pub normal_fit: Option<NormalFitResult>,
    pub first_admission_fit: Option<NormalFitResult>,
    pub config: RunConfig,
    pub rng: RngInfo,
}

#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    events: u64,
    time: f64,
    sum_r_time: f64,
    sum_r: u64,
    sum_g: u64,
    sum_f: u64,
    sum_a: u64,
    sum_g_over_r: f64,
    sum_fpc_time: f64,
    types: [u64; 3],
    gap_time: f64,
    sum_gap_size_time: f64,
    frag_time: f64,
    sum_frag_size_time: f64,
    sum_first_gap_lo_time: f64,
    right_end_occupied: u64,
    frags_per_channel: Histogram,
    total_fragments: Histogram,
    gaps_random_time: WeightedHistogram,
    gaps_first_admission: Histogram,
    gaps_post_departure: Histogram,
    sigma_series: Vec<u32>,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn sigma_series(&self) -> &[u32] {
        &self.sigma_series
    }

    /// Adds one post-warmup departure. Time-weighted terms use `rec.hold`.
    pub fn record(&mut self, rec: &DepartureRecord) {
        let c = &rec.census;
        let dt = rec.hold;
        let r = f64::from(rec.r);
        self.events += 1;
        self.time += dt;
        self.sum_r_time += r * dt;
        self.sum_r += u64::from(rec.r);
        self.sum_g += u64::from(c.g);
        self.sum_f += u64::from(c.f);
        self.sum_a += u64::from(rec.a);
        if rec.r > 0 {
            self.sum_g_over_r += f64::from(c.g) / r;
            self.sum_fpc_time += f64::from(c.f) / r * dt;
        }
        self.types[0] += u64::from(c.n0);
        self.types[1] += u64::from(c.n1);
        self.types[2] += u64::from(c.n2);
        if c.g > 0 {
            self.gap_time += dt;
            self.sum_gap_size_time += rec.free_total / f64::from(c.g) * dt;
        }
        if c.f > 0 {
            self.frag_time += dt;
            self.sum_frag_size_time += (1.0 - rec.free_total) / f64::from(c.f) * dt;
        }
        self.sum_first_gap_lo_time += rec.first_gap_lo * dt;
        self.right_end_occupied += u64::from(c.i_end == 0);
        self.total_fragments.add(c.f, 1);
        self.gaps_random_time.add(c.g, dt);
        if let (true, Some(g)) = (rec.a > 0, rec.first_admit_gap_count) {
            self.gaps_first_admission.add(g, 1);
        }
        self.gaps_post_departure.add(rec.g_minus, 1);
        self.sigma_series.push(rec.sigma);
    }

    /// Adds the fragment counts of every active channel at one epoch.
    pub fn record_channels(&mut self, fragment_counts: impl Iterator<Item = u32>) {
        for n in fragment_counts {
            self.frags_per_channel.add(n, 1);
        }
    }

    /// Combines two accumulators. Sums are order-independent; the sigma
    /// series of `other` is appended.
    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.events += other.events;
        self.time += other.time;
        self.sum_r_time += other.sum_r_time;
        self.sum_r += other.sum_r;
        self.sum_g += other.sum_g;
        self.sum_f += other.sum_f;
        self.sum_a += other.sum_a;
        self.sum_g_over_r += other.sum_g_over_r;
        self.sum_fpc_time += other.sum_fpc_time;
        for i in 0..3 {
            self.types[i] += other.types[i];
        }
        self.gap_time += other.gap_time;
        self.sum_gap_size_time += other.sum_gap_size_time;
        self.frag_time += other.frag_time;
        self.sum_frag_size_time += other.sum_frag_size_time;
        self.sum_first_gap_lo_time += other.sum_first_gap_lo_time;
        self.right_end_occupied += other.right_end_occupied;
        self.frags_per_channel.merge(&other.frags_per_channel);
        self.total_fragments.merge(&other.total_fragments);
        self.gaps_random_time.merge(&other.gaps_random_time);
        self.gaps_first_admission.merge(&other.gaps_first_admission);
        self.gaps_post_departure.merge(&other.gaps_post_departure);
        self.sigma_series.extend_from_slice(&other.sigma_series);
    }

    pub fn summarize(&self, config: RunConfig) -> SummaryStats {
        let n = self.events.max(1) as f64;
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let type_total = self.types.iter().sum::<u64>() as f64;
        let type_fractions = if type_total > 0.0 {
            self.types.map(|t| t as f64 / type_total)
        } else {
            [0.0; 3]
        };
        let m = (1.0 / config.alpha).floor() as u32;
        let mean_g = self.sum_g as f64 / n;
        let mean_r_events = self.sum_r as f64 / n;
        SummaryStats {
            events: self.events,
            measured_time: self.time,
            mean_r: ratio(self.sum_r_time, self.time),
            mean_r_events,
            mean_g,
            mean_f: self.sum_f as f64 / n,
            mean_admissions: self.sum_a as f64 / n,
            mean_frags_per_channel: ratio(self.sum_fpc_time, self.time),
            frags_per_channel_std: if self.frags_per_channel.is_empty() {
                0.0
            } else {
                self.frags_per_channel.std()
            },
            mean_g_over_r: self.sum_g_over_r / n,
            ratio_of_means_g_over_r: ratio(mean_g, mean_r_events),
            type_fractions,
            mean_gap_size: ratio(self.sum_gap_size_time, self.gap_time),
            mean_fragment_size: ratio(self.sum_frag_size_time, self.frag_time),
            mean_first_gap_lo: ratio(self.sum_first_gap_lo_time, self.time),
            right_end_occupied_events: self.right_end_occupied,
            frags_per_channel_pmf: self.frags_per_channel.clone(),
            total_fragments_pmf: self.total_fragments.clone(),
            gap_count_pmfs: GapCountPmfs {
                random_time: self.gaps_random_time.clone(),
                first_admission: self.gaps_first_admission.clone(),
                post_departure: self.gaps_post_departure.clone(),
            },
            sigma: sigma_stationarity(&self.sigma_series),
            normal_fit: fit_normal(&self.total_fragments, m).ok(),
            first_admission_fit: fit_normal(&self.gaps_first_admission, m).ok(),
            config,
            rng: RngInfo {
                generator: RNG_NAME.into(),
                derivation: RNG_DERIVATION.into(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::Algorithm;
    use crate::spectrum::TypeCensus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(g: u32, r: u32, a: u32) -> DepartureRecord {
        DepartureRecord {
            k: 1,
            t: 0.0,
            a,
            exact_fits: 0,
            d0: 0,
            d1: 0,
            d2: 0,
            j: 0,
            j_end: 0,
            g_minus: g,
            r,
            census: TypeCensus {
                n2: 2 * r,
                f: 2 * r,
                g,
                i_end: 1,
                ..Default::default()
            },
            sigma: 2 * r + g,
            delta_sigma: 0,
            first_gap_lo: 0.5,
            first_admit_gap_count: (a > 0).then_some(g),
            free_total: 0.1,
            hold: 1.0,
        }
    }

    fn config() -> RunConfig {
        RunConfig::new(0.1, Algorithm::Ls, 0)
    }

    #[test]
    fn g_over_r_single() {
        let mut acc = StatsAccumulator::new();
        acc.record(&rec(5, 10, 1));
        assert_eq!(acc.summarize(config()).mean_g_over_r, 0.5);
    }

    #[test]
    fn g_over_r_is_mean_of_ratios() {
        let mut acc = StatsAccumulator::new();
        acc.record(&rec(1, 2, 1));
        acc.record(&rec(1, 4, 1));
        let s = acc.summarize(config());
        assert_eq!(s.mean_g_over_r, 0.375);
        assert!((s.ratio_of_means_g_over_r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_admission_leaves_first_admission_pmf() {
        let mut acc = StatsAccumulator::new();
        acc.record(&rec(3, 4, 0));
        let s = acc.summarize(config());
        assert!(s.gap_count_pmfs.first_admission.is_empty());
        assert_eq!(s.gap_count_pmfs.post_departure.total(), 1);
    }

    #[test]
    fn time_weighting() {
        let mut acc = StatsAccumulator::new();
        let mut a = rec(1, 2, 1);
        a.hold = 3.0;
        let mut b = rec(1, 6, 1);
        b.hold = 1.0;
        acc.record(&a);
        acc.record(&b);
        let s = acc.summarize(config());
        assert_eq!(s.mean_r, (2.0 * 3.0 + 6.0) / 4.0);
        assert_eq!(s.mean_r_events, 4.0);
        let pmf = s.gap_count_pmfs.random_time.pmf();
        assert_eq!(pmf, vec![(1, 1.0)]);
    }

    #[test]
    fn pmfs_sum_to_one() {
        let mut acc = StatsAccumulator::new();
        for i in 0..50 {
            let mut r = rec(i % 7 + 1, i % 5 + 1, i % 3);
            r.hold = 0.1 + f64::from(i % 4);
            acc.record(&r);
            acc.record_channels((0..(i % 5 + 1)).map(|c| c + 1));
        }
        let s = acc.summarize(config());
        let total = |p: Vec<(u32, f64)>| p.iter().map(|x| x.1).sum::<f64>();
        assert!((total(s.frags_per_channel_pmf.pmf()) - 1.0).abs() < 1e-12);
        assert!((total(s.total_fragments_pmf.pmf()) - 1.0).abs() < 1e-12);
        assert!((total(s.gap_count_pmfs.random_time.pmf()) - 1.0).abs() < 1e-12);
        assert!((total(s.gap_count_pmfs.first_admission.pmf()) - 1.0).abs() < 1e-12);
        assert!((total(s.gap_count_pmfs.post_departure.pmf()) - 1.0).abs() < 1e-12);
        assert!((s.type_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_matches_sequential() {
        let records: Vec<_> = (0..40).map(|i| rec(i % 6 + 1, i % 9 + 1, i % 2)).collect();
        let mut whole = StatsAccumulator::new();
        let mut left = StatsAccumulator::new();
        let mut right = StatsAccumulator::new();
        for (i, r) in records.iter().enumerate() {
            whole.record(r);
            if i < 17 {
                left.record(r)
            } else {
                right.record(r)
            }
        }
        left.merge(&right);
        let (a, b) = (whole.summarize(config()), left.summarize(config()));
        assert_eq!(a.total_fragments_pmf, b.total_fragments_pmf);
        assert_eq!(a.mean_g, b.mean_g);
        assert!((a.mean_g_over_r - b.mean_g_over_r).abs() < 1e-12);
        assert!((a.mean_r - b.mean_r).abs() < 1e-12);
    }

    fn binned_normal(mean: f64, std: f64, n: usize, seed: u64) -> Histogram {
        let normal = Normal::new(mean, std).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = Histogram::new();
        for _ in 0..n {
            let u: f64 = rng.gen_range(1e-12..1.0);
            h.add(normal.inverse_cdf(u).round() as u32, 1);
        }
        h
    }

    #[test]
    fn normal_fit_recovers_parameters() {
        let h = binned_normal(100.0, 15.0, 1_000_000, 4);
        let fit = fit_normal(&h, 10).unwrap();
        assert!((fit.mean - 100.0).abs() < 0.1, "{fit:?}");
        assert!((fit.std - 15.0).abs() < 0.1, "{fit:?}");
        assert!(fit.ks_distance < 0.01, "{fit:?}");
        assert!((fit.beta_hat - fit.mean / 100.0).abs() < 1e-12);
        assert!((fit.theta_hat - fit.std / 10f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn normal_fit_flags_bad_shapes() {
        let mut h = Histogram::new();
        h.add(7, 1000);
        assert_eq!(fit_normal(&h, 10), Err(StatsError::DegenerateSample));
        assert_eq!(fit_normal(&Histogram::new(), 10), Err(StatsError::Empty));
        // a two-point law is far from normal
        let mut h = Histogram::new();
        h.add(0, 500);
        h.add(100, 500);
        assert!(fit_normal(&h, 10).unwrap().ks_distance > 0.3);
    }

    #[test]
    fn stationary_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<u32> = (0..1_000_000).map(|_| rng.gen_range(50..150)).collect();
        let d = sigma_stationarity(&xs).unwrap();
        assert!(d.relative_gap < 0.01, "{d:?}");
        assert!(d.trend_spearman.abs() < 0.3, "{d:?}");
    }

    #[test]
    fn drifting_series() {
        let xs: Vec<u32> = (1..=1_000_000).collect();
        let d = sigma_stationarity(&xs).unwrap();
        // half means N/4 and 3N/4 against an overall mean of N/2
        assert!((d.relative_gap - 1.0).abs() < 1e-3, "{d:?}");
        assert!((d.trend_spearman - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_with_ties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 20.0, 30.0]) - 0.9486832980505138).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
