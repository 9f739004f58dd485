//! At-capacity discrete-event loop.
//!
//! The queue of waiting requests never empties: only its head is held, and
//! each admission draws the next request. State changes happen only at
//! departures. After each departure the head is admitted repeatedly while
//! it fits in the total free bandwidth, then the system blocks again.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{AllocError, Algorithm, Allocator};
use crate::spectrum::{ChannelId, Spectrum, SpectrumError, TypeCensus};
use crate::stats::{StatsAccumulator, SummaryStats};

/// One step of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep` of sweep cell (`alpha_index`, `alg_index`):
/// `splitmix64` folded over the base seed and each index in turn,
/// `s = splitmix64(s ^ index)`.
pub fn derive_seed(base: u64, alpha_index: u64, alg_index: u64, rep: u64) -> u64 {
    [alpha_index, alg_index, rep]
        .into_iter()
        .fold(splitmix64(base), |s, i| splitmix64(s ^ i))
}

/// Stream labels for the engine's generators.
pub const SIZE_STREAM: u64 = 0;
pub const RESIDENCE_STREAM: u64 = 1;

pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.3)";
pub const RNG_DERIVATION: &str = "ChaCha8Rng::seed_from_u64(seed) then set_stream(label); \
     sizes use label 0, residence times label 1; size = alpha * (1 - u), \
     residence = -ln(u) with u = gen::<f64>() redrawn while 0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub total_events: u64,
    pub warmup_events: u64,
    #[serde(default)]
    pub record_trace: bool,
    /// Run a full structural validation every this many events (0 = never).
    #[serde(default)]
    pub validate_every: u64,
}

impl RunConfig {
    pub fn new(alpha: f64, algorithm: Algorithm, seed: u64) -> Self {
        RunConfig {
            alpha,
            algorithm,
            seed,
            total_events: 2_000_000,
            warmup_events: 1_000_000,
            record_trace: false,
            validate_every: 0,
        }
    }

    pub fn events(mut self, total: u64, warmup: u64) -> Self {
        self.total_events = total;
        self.warmup_events = warmup;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(EngineError::Config(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if self.total_events == 0 {
            return Err(EngineError::Config("total_events must be positive".into()));
        }
        if self.warmup_events >= self.total_events {
            return Err(EngineError::Config(format!(
                "warmup_events {} must be below total_events {}",
                self.warmup_events, self.total_events
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt state at event {k}: {detail}")]
    CorruptState { k: u64, detail: String },
    #[error("trace output: {0}")]
    Io(#[from] io::Error),
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Request sizes, uniform on `(0, alpha]`.
#[derive(Debug, Clone)]
pub struct SizeStream {
    alpha: f64,
    rng: ChaCha8Rng,
}

impl SizeStream {
    pub fn new(alpha: f64, seed: u64) -> Self {
        SizeStream {
            alpha,
            rng: seeded(seed, SIZE_STREAM),
        }
    }

    pub fn draw(&mut self) -> f64 {
        loop {
            let x = self.alpha * (1.0 - self.rng.gen::<f64>());
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// Residence times, exponential with mean 1.
#[derive(Debug, Clone)]
pub struct ResidenceStream {
    rng: ChaCha8Rng,
}

impl ResidenceStream {
    pub fn new(seed: u64) -> Self {
        ResidenceStream {
            rng: seeded(seed, RESIDENCE_STREAM),
        }
    }

    pub fn draw(&mut self) -> f64 {
        loop {
            let u = self.rng.gen::<f64>();
            if u > 0.0 {
                return -u.ln();
            }
        }
    }
}

/// Source of request sizes and residence times.
pub trait Workload {
    fn next_size(&mut self) -> f64;
    fn next_residence(&mut self) -> f64;
}

#[derive(Debug, Clone)]
pub struct SeededWorkload {
    pub sizes: SizeStream,
    pub residences: ResidenceStream,
}

impl SeededWorkload {
    pub fn new(alpha: f64, seed: u64) -> Self {
        SeededWorkload {
            sizes: SizeStream::new(alpha, seed),
            residences: ResidenceStream::new(seed),
        }
    }
}

impl Workload for SeededWorkload {
    fn next_size(&mut self) -> f64 {
        self.sizes.draw()
    }

    fn next_residence(&mut self) -> f64 {
        self.residences.draw()
    }
}

/// Per-departure observables.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureRecord {
    pub k: u64,
    pub t: f64,
    /// Admissions at this departure.
    pub a: u32,
    /// Admissions whose last gap was used up exactly (no residual gap).
    pub exact_fits: u32,
    pub d0: u32,
    pub d1: u32,
    pub d2: u32,
    pub j: u32,
    pub j_end: u32,
    pub g_minus: u32,
    pub r: u32,
    pub census: TypeCensus,
    pub sigma: u32,
    pub delta_sigma: i64,
    pub first_gap_lo: f64,
    pub first_admit_gap_count: Option<u32>,
    pub free_total: f64,
    /// Time until the next departure; the post-event state holds this long.
    pub hold: f64,
}

impl DepartureRecord {
    /// `k t_k a d0 d1 d2 j g_minus r g f sigma`, tab separated.
    pub fn trace_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.k,
            self.t,
            self.a,
            self.d0,
            self.d1,
            self.d2,
            self.j,
            self.g_minus,
            self.r,
            self.census.g,
            self.census.f,
            self.sigma
        )
    }

    /// `delta_sigma = a - exact_fits - 2 d0 - d1 + j + j_end`.
    pub fn sigma_drift_holds(&self) -> bool {
        self.delta_sigma
            == i64::from(self.a) - i64::from(self.exact_fits) - 2 * i64::from(self.d0)
                - i64::from(self.d1)
                + i64::from(self.j)
                + i64::from(self.j_end)
    }

    /// `g_minus = g_prev - d0 + d2 + j + j_end`.
    pub fn post_departure_gaps_hold(&self, g_prev: u32) -> bool {
        i64::from(self.g_minus)
            == i64::from(g_prev) - i64::from(self.d0)
                + i64::from(self.d2)
                + i64::from(self.j)
                + i64::from(self.j_end)
    }
}

#[derive(Debug, Clone)]
pub struct Engine<W: Workload = SeededWorkload> {
    spectrum: Spectrum,
    allocator: Allocator,
    workload: W,
    departures: BinaryHeap<Reverse<(OrderedFloat<f64>, ChannelId)>>,
    head: f64,
    now: f64,
    k: u64,
    prev: TypeCensus,
    prev_r: u32,
    validate_every: u64,
}

impl Engine<SeededWorkload> {
    pub fn initial_fill(config: &RunConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let workload = SeededWorkload::new(config.alpha, config.seed);
        let mut engine = Engine::with_workload(config.algorithm, workload)?;
        engine.validate_every = config.validate_every;
        Ok(engine)
    }
}

impl<W: Workload> Engine<W> {
    /// Fills an empty spectrum with consecutive channels until the head
    /// request no longer fits. Time stays at 0 and no record is emitted.
    pub fn with_workload(algorithm: Algorithm, mut workload: W) -> Result<Self, EngineError> {
        let head = workload.next_size();
        let mut engine = Engine {
            spectrum: Spectrum::new(),
            allocator: Allocator::new(algorithm),
            workload,
            departures: BinaryHeap::new(),
            head,
            now: 0.0,
            k: 0,
            prev: TypeCensus::default(),
            prev_r: 0,
            validate_every: 0,
        };
        engine.admit()?;
        engine.prev = engine.spectrum.census();
        engine.prev_r = engine.spectrum.channel_count();
        Ok(engine)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn head_size(&self) -> f64 {
        self.head
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn events(&self) -> u64 {
        self.k
    }

    pub fn next_departure(&self) -> Option<f64> {
        self.departures.peek().map(|Reverse((t, _))| t.0)
    }

    #[doc(hidden)]
    pub fn spectrum_mut_for_test(&mut self) -> &mut Spectrum {
        &mut self.spectrum
    }

    fn corrupt(&self, detail: impl Into<String>) -> EngineError {
        EngineError::CorruptState {
            k: self.k,
            detail: detail.into(),
        }
    }

    /// Admits head-of-queue requests while they fit; returns
    /// (admissions, exact fits, gap count seen by the first admission).
    fn admit(&mut self) -> Result<(u32, u32, Option<u32>), EngineError> {
        let mut admitted = 0;
        let mut exact = 0;
        let mut first_gaps = None;
        while self.head <= self.spectrum.total_gap_size() {
            if admitted == 0 {
                first_gaps = Some(self.spectrum.gap_count());
            }
            let plan = self
                .allocator
                .plan(&self.spectrum, self.head)
                .map_err(|e: AllocError| self.corrupt(e.to_string()))?;
            let departure = self.now + self.workload.next_residence();
            let out = self
                .spectrum
                .carve(&plan, self.head, departure)
                .map_err(|e: SpectrumError| self.corrupt(e.to_string()))?;
            self.departures
                .push(Reverse((OrderedFloat(departure), out.channel)));
            admitted += 1;
            exact += u32::from(out.exact_fit);
            self.head = self.workload.next_size();
        }
        Ok((admitted, exact, first_gaps))
    }

    /// Processes the earliest departure and the admissions it enables.
    pub fn step(&mut self) -> Result<DepartureRecord, EngineError> {
        let Reverse((t, id)) = self
            .departures
            .pop()
            .ok_or_else(|| self.corrupt("no active channel"))?;
        self.k += 1;
        self.now = t.0;
        let released = self
            .spectrum
            .release(id)
            .map_err(|e| self.corrupt(e.to_string()))?;
        let (a, exact_fits, first_admit_gap_count) = self.admit()?;

        let census = self.spectrum.census();
        let r = self.spectrum.channel_count();
        let sigma = census.sigma();
        let rec = DepartureRecord {
            k: self.k,
            t: self.now,
            a,
            exact_fits,
            d0: released.d0,
            d1: released.d1,
            d2: released.d2,
            j: released.j,
            j_end: released.j_end,
            g_minus: released.g_minus,
            r,
            census,
            sigma,
            delta_sigma: i64::from(sigma) - i64::from(self.prev.sigma()),
            first_gap_lo: self.spectrum.first_gap_lo(),
            first_admit_gap_count,
            free_total: self.spectrum.total_gap_size(),
            hold: self.next_departure().map_or(0.0, |next| next - self.now),
        };
        self.check(&rec)?;
        self.prev = census;
        self.prev_r = r;
        Ok(rec)
    }

    fn check(&self, rec: &DepartureRecord) -> Result<(), EngineError> {
        let fail = |what: &str| Err(self.corrupt(format!("{what}; trace: {}", rec.trace_line())));
        if !rec.census.gap_identity_holds() {
            return fail("gap/type identity");
        }
        if !rec.sigma_drift_holds() {
            return fail("sigma drift identity");
        }
        if !rec.post_departure_gaps_hold(self.prev.g) {
            return fail("post-departure gap identity");
        }
        if i64::from(rec.r) - i64::from(self.prev_r) != i64::from(rec.a) - 1 {
            return fail("channel count change differs from a - 1");
        }
        if self.head <= rec.free_total {
            return fail("head of queue fits but was not admitted");
        }
        if self.validate_every > 0 && self.k.is_multiple_of(self.validate_every) {
            self.spectrum
                .validate()
                .map_err(|e| self.corrupt(format!("{e}; trace: {}", rec.trace_line())))?;
        }
        Ok(())
    }
}

/// Runs a full experiment and returns its summary.
pub fn run(config: &RunConfig) -> Result<SummaryStats, EngineError> {
    run_with_trace(config, None)
}

/// As [`run`]; when `trace` is given and `record_trace` is set, writes one
/// line per departure.
pub fn run_with_trace(
    config: &RunConfig,
    mut trace: Option<&mut dyn Write>,
) -> Result<SummaryStats, EngineError> {
    let mut engine = Engine::initial_fill(config)?;
    let mut acc = StatsAccumulator::new();
    for _ in 0..config.total_events {
        let rec = engine.step()?;
        if config.record_trace {
            if let Some(w) = trace.as_deref_mut() {
                writeln!(w, "{}", rec.trace_line())?;
            }
        }
        if rec.k > config.warmup_events {
            acc.record(&rec);
            acc.record_channels(engine.spectrum().channels().map(|c| c.fragments.len() as u32));
        }
    }
    Ok(acc.summarize(config.clone()))
}
