//! Gap-scan allocation strategies.
//!
//! All three scans fill whole gaps until the remainder fits in one gap,
//! where the last fragment is left-justified. They differ only in the order
//! gaps are visited:
//!
//! * linear: by position, from the left end;
//! * circular: by position, starting where the previous scan stopped and
//!   wrapping from the last gap to the first;
//! * largest-first: by decreasing length, ties broken by position.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::{GapRef, Segment, Spectrum, LENGTH_TOL, SLIVER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ls,
    Cs,
    Lfs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ls, Algorithm::Cs, Algorithm::Lfs];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ls => "ls",
            Algorithm::Cs => "cs",
            Algorithm::Lfs => "lfs",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ls" => Ok(Algorithm::Ls),
            "cs" => Ok(Algorithm::Cs),
            "lfs" => Ok(Algorithm::Lfs),
            other => Err(format!("unknown algorithm `{other}` (expected ls, cs or lfs)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub gap: GapRef,
    pub fill: f64,
}

/// Ordered gap fills for one request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapPlan {
    pub entries: Vec<PlanEntry>,
}

impl GapPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.fill).sum()
    }
}

/// Where the next circular scan starts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ScanCursor {
    #[default]
    StartOfSpectrum,
    /// A position inside the gap to start from, or the left edge of the
    /// segment after a gap that was used up.
    At(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("requested {requested} but only {available} is free")]
    Insufficient { requested: f64, available: f64 },
}

fn take<'a>(
    gaps: impl Iterator<Item = (GapRef, &'a Segment)>,
    size: f64,
    available: f64,
) -> Result<GapPlan, AllocError> {
    let mut plan = GapPlan::default();
    let mut remaining = size;
    for (gap, seg) in gaps {
        let len = seg.len();
        if remaining <= len {
            plan.entries.push(PlanEntry { gap, fill: remaining });
            return Ok(plan);
        }
        plan.entries.push(PlanEntry { gap, fill: len });
        remaining -= len;
        if remaining < SLIVER {
            return Ok(plan);
        }
    }
    // Tracked free total and the sum of gap lengths may differ by rounding.
    if remaining <= LENGTH_TOL && !plan.is_empty() {
        return Ok(plan);
    }
    Err(AllocError::Insufficient {
        requested: size,
        available,
    })
}

pub fn plan_linear(spectrum: &Spectrum, size: f64) -> Result<GapPlan, AllocError> {
    take(spectrum.gaps(), size, spectrum.total_gap_size())
}

pub fn plan_largest_first(spectrum: &Spectrum, size: f64) -> Result<GapPlan, AllocError> {
    take(spectrum.gaps_by_size(), size, spectrum.total_gap_size())
}

pub fn plan_circular(
    spectrum: &Spectrum,
    cursor: ScanCursor,
    size: f64,
) -> Result<(GapPlan, ScanCursor), AllocError> {
    let start = match cursor {
        ScanCursor::StartOfSpectrum => 0.0,
        ScanCursor::At(pos) => match spectrum.gap_containing(pos) {
            Some(g) => spectrum.segment(g).lo,
            None => pos,
        },
    };
    let order = spectrum.gaps_from(start).chain(spectrum.gaps_before(start));
    let plan = take(order, size, spectrum.total_gap_size())?;
    let last = plan.entries.last().expect("a successful plan is nonempty");
    let seg = spectrum.segment(last.gap);
    let next = if seg.len() - last.fill < SLIVER {
        ScanCursor::At(seg.hi)
    } else {
        ScanCursor::At(seg.lo + last.fill)
    };
    Ok((plan, next))
}

/// A configured scan together with the circular cursor it carries.
#[derive(Debug, Clone)]
pub struct Allocator {
    algorithm: Algorithm,
    cursor: ScanCursor,
}

impl Allocator {
    pub fn new(algorithm: Algorithm) -> Self {
        Allocator {
            algorithm,
            cursor: ScanCursor::StartOfSpectrum,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn cursor(&self) -> ScanCursor {
        self.cursor
    }

    pub fn plan(&mut self, spectrum: &Spectrum, size: f64) -> Result<GapPlan, AllocError> {
        match self.algorithm {
            Algorithm::Ls => plan_linear(spectrum, size),
            Algorithm::Lfs => plan_largest_first(spectrum, size),
            Algorithm::Cs => {
                let (plan, cursor) = plan_circular(spectrum, self.cursor, size)?;
                self.cursor = cursor;
                Ok(plan)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::ChannelId;

    /// Spectrum whose gaps are exactly `gaps`; everything else is occupied
    /// by single-fragment channels.
    fn with_gaps(gaps: &[(f64, f64)]) -> Spectrum {
        let mut s = Spectrum::new();
        let mut edges = vec![0.0];
        for &(lo, hi) in gaps {
            edges.push(lo);
            edges.push(hi);
        }
        edges.push(1.0);
        let mut to_free = Vec::new();
        let mut pos = 0.0;
        for (i, w) in edges.windows(2).enumerate() {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let g = s.gaps().next().unwrap().0;
            let fill = if w[1] == 1.0 { s.segment(g).len() } else { len };
            let out = s
                .carve(
                    &GapPlan {
                        entries: vec![PlanEntry { gap: g, fill }],
                    },
                    fill,
                    0.0,
                )
                .unwrap();
            if i % 2 == 1 {
                to_free.push(out.channel);
            }
            pos += len;
        }
        assert!((pos - 1.0).abs() < 1e-12);
        for id in to_free {
            s.release(id).unwrap();
        }
        let got: Vec<_> = s.gaps().map(|(_, g)| (g.lo, g.hi)).collect();
        assert_eq!(got.len(), gaps.len());
        for (a, b) in got.iter().zip(gaps) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12, "{got:?}");
        }
        s
    }

    fn spans(s: &Spectrum, plan: &GapPlan) -> Vec<(f64, f64)> {
        plan.entries
            .iter()
            .map(|e| (s.segment(e.gap).lo, e.fill))
            .collect()
    }

    fn assert_spans(got: Vec<(f64, f64)>, want: &[(f64, f64)]) {
        assert_eq!(got.len(), want.len(), "{got:?}");
        for (g, w) in got.iter().zip(want) {
            assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    const THREE: [(f64, f64); 3] = [(0.1, 0.2), (0.5, 0.6), (0.9, 1.0)];

    #[test]
    fn linear_scan() {
        let s = with_gaps(&THREE);
        let p = plan_linear(&s, 0.15).unwrap();
        assert_spans(spans(&s, &p), &[(0.1, 0.1), (0.5, 0.05)]);
        let p = plan_linear(&s, 0.1).unwrap();
        assert_eq!(p.len(), 1);
        let s = Spectrum::new();
        assert_spans(spans(&s, &plan_linear(&s, 0.4).unwrap()), &[(0.0, 0.4)]);
    }

    #[test]
    fn insufficient() {
        let s = with_gaps(&THREE);
        assert!(matches!(plan_linear(&s, 0.31), Err(AllocError::Insufficient { .. })));
        assert!(matches!(plan_largest_first(&s, 0.31), Err(AllocError::Insufficient { .. })));
        assert!(plan_circular(&s, ScanCursor::StartOfSpectrum, 0.31).is_err());
    }

    #[test]
    fn circular_scan_moves_cursor_to_residual() {
        let mut s = with_gaps(&THREE);
        let (p, c) = plan_circular(&s, ScanCursor::At(0.55), 0.12).unwrap();
        assert_spans(spans(&s, &p), &[(0.5, 0.1), (0.9, 0.02)]);
        s.carve(&p, 0.12, 0.0).unwrap();
        let ScanCursor::At(pos) = c else { panic!() };
        let g = s.gap_containing(pos).unwrap();
        assert!((s.segment(g).lo - 0.92).abs() < 1e-12 && s.segment(g).hi == 1.0);
    }

    #[test]
    fn circular_scan_wraps() {
        let s = with_gaps(&THREE);
        let (p, _) = plan_circular(&s, ScanCursor::At(0.95), 0.15).unwrap();
        assert_spans(spans(&s, &p), &[(0.9, 0.1), (0.1, 0.05)]);
    }

    #[test]
    fn circular_cursor_advances_after_exhausting_gap() {
        let mut s = with_gaps(&THREE);
        let (p, c) = plan_circular(&s, ScanCursor::At(0.5), 0.1).unwrap();
        s.carve(&p, 0.1, 0.0).unwrap();
        // (0.5, 0.6) is used up; the next scan starts at (0.9, 1.0).
        let (p, _) = plan_circular(&s, c, 0.05).unwrap();
        assert_spans(spans(&s, &p), &[(0.9, 0.05)]);

        // Exhausting the rightmost gap wraps to the first one.
        let (p, c) = plan_circular(&s, c, 0.1).unwrap();
        s.carve(&p, 0.1, 0.0).unwrap();
        let (p, _) = plan_circular(&s, c, 0.05).unwrap();
        assert_spans(spans(&s, &p), &[(0.1, 0.05)]);
    }

    #[test]
    fn circular_cursor_follows_merges() {
        let mut s = Spectrum::new();
        let mut alloc = Allocator::new(Algorithm::Cs);
        let mut ids = Vec::new();
        for x in [0.2, 0.3, 0.4] {
            let p = alloc.plan(&s, x).unwrap();
            ids.push(s.carve(&p, x, 0.0).unwrap().channel);
        }
        // Cursor sits in the tail gap (0.9, 1). Freeing the 0.4 channel
        // merges it into (0.5, 1); the scan must start there.
        s.release(ids[2]).unwrap();
        s.release(ids[0]).unwrap();
        let p = alloc.plan(&s, 0.1).unwrap();
        assert_spans(spans(&s, &p), &[(0.5, 0.1)]);
    }

    #[test]
    fn first_circular_plan_matches_linear() {
        let s = with_gaps(&THREE);
        let mut alloc = Allocator::new(Algorithm::Cs);
        assert_eq!(alloc.plan(&s, 0.25).unwrap(), plan_linear(&s, 0.25).unwrap());
    }

    #[test]
    fn largest_first_scan() {
        let s = with_gaps(&[(0.0, 0.05), (0.3, 0.42), (0.7, 0.78)]);
        assert_spans(
            spans(&s, &plan_largest_first(&s, 0.15).unwrap()),
            &[(0.3, 0.12), (0.7, 0.03)],
        );
        assert_spans(spans(&s, &plan_largest_first(&s, 0.10).unwrap()), &[(0.3, 0.10)]);
    }

    #[test]
    fn largest_first_tie_goes_left() {
        let mut s = Spectrum::new();
        // Equal-length gaps (0.1,0.2) and (0.4,0.5), built from exact binary
        // lengths so the tie is exact.
        let mut ids = Vec::new();
        for x in [0.125, 0.125, 0.25, 0.125, 0.375] {
            let p = plan_linear(&s, x).unwrap();
            ids.push(s.carve(&p, x, 0.0).unwrap().channel);
        }
        s.release(ids[1]).unwrap();
        s.release(ids[3]).unwrap();
        let p = plan_largest_first(&s, 0.15).unwrap();
        assert_spans(spans(&s, &p), &[(0.125, 0.125), (0.5, 0.025)]);
        assert_eq!(s.channel(ChannelId(1)).unwrap().fragments.len(), 1);
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("bf".parse::<Algorithm>().is_err());
    }
}
