//! Exact state of the normalized spectrum `[0, 1]`.
//!
//! The spectrum is an ordered, doubly linked sequence of segments. Each
//! segment is either a gap or a fragment owned by one channel. Segments
//! share endpoints exactly, so adjacency is decided by links rather than by
//! comparing floating-point positions.
//!
//! Two gap indices are kept alongside the list: one ordered by position
//! (linear and circular scans) and one ordered by decreasing length
//! (largest-first scan). The fragment type census is maintained
//! incrementally and can be recomputed from scratch with
//! [`Spectrum::recount`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::GapPlan;

/// Residual gaps shorter than this are absorbed into the fragment carved
/// before them.
pub const SLIVER: f64 = 1e-12;

/// Absolute tolerance on sums of lengths.
pub const LENGTH_TOL: f64 = 1e-9;

type Key = OrderedFloat<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u64);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Handle to a segment slot. Only meaningful for the spectrum that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentRef(u32);

/// A gap handle, as referenced by allocation plans.
pub type GapRef = SegmentRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupant {
    Gap,
    Channel(ChannelId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub occupant: Occupant,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_gap(&self) -> bool {
        self.occupant == Occupant::Gap
    }
}

#[derive(Debug, Clone)]
struct Node {
    seg: Segment,
    prev: Option<SegmentRef>,
    next: Option<SegmentRef>,
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub id: ChannelId,
    pub size: f64,
    pub fragments: Vec<SegmentRef>,
    pub departure_time: f64,
}

/// Fragment type counts and gap count.
///
/// `i_end` is the mirror image of `i_origin` for the right boundary. With a
/// gap touching 1 (always the case under linear scan) the general identity
/// `g = n0 + n1/2 + i_origin + i_end - 1` reduces to `g = n0 + n1/2 + i_origin`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCensus {
    pub n0: u32,
    pub n1: u32,
    pub n2: u32,
    pub f: u32,
    pub g: u32,
    pub i_origin: u32,
    pub i_end: u32,
}

impl TypeCensus {
    /// `2g == 2*n0 + n1 + 2*(i_origin + i_end - 1)`, in integers.
    pub fn gap_identity_holds(&self) -> bool {
        2 * i64::from(self.g)
            == 2 * i64::from(self.n0) + i64::from(self.n1)
                + 2 * (i64::from(self.i_origin) + i64::from(self.i_end) - 1)
    }

    /// The boundary-free form `g = n0 + n1/2 + i_origin`, valid whenever a
    /// gap touches the right end.
    pub fn origin_identity_holds(&self) -> bool {
        2 * i64::from(self.g)
            == 2 * i64::from(self.n0) + i64::from(self.n1) + 2 * i64::from(self.i_origin)
    }

    pub fn sigma(&self) -> u32 {
        self.f + self.g
    }
}

/// Type counts of the fragments of a released channel, measured just
/// before the release, and the gap count right after it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReleaseSummary {
    pub d0: u32,
    pub d1: u32,
    pub d2: u32,
    /// 1 iff a departing fragment starts at 0.
    pub j: u32,
    /// 1 iff a departing fragment ends at 1.
    pub j_end: u32,
    pub g_minus: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarveOutcome {
    pub channel: ChannelId,
    pub fragments: u32,
    /// The last gap of the plan was consumed entirely (no residual gap).
    pub exact_fit: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("plan infeasible: {0}")]
    PlanInfeasible(String),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    nodes: Vec<Node>,
    free_slots: Vec<SegmentRef>,
    head: SegmentRef,
    tail: SegmentRef,
    channels: BTreeMap<ChannelId, Channel>,
    gaps_by_pos: BTreeMap<Key, SegmentRef>,
    gaps_by_size: BTreeSet<(std::cmp::Reverse<Key>, Key, SegmentRef)>,
    types: [u32; 3],
    free_total: f64,
    next_id: u64,
}

impl Default for Spectrum {
    fn default() -> Self {
        Self::new()
    }
}

impl Spectrum {
    /// An empty spectrum: one gap covering `(0, 1)`.
    pub fn new() -> Self {
        let root = SegmentRef(0);
        let mut s = Spectrum {
            nodes: vec![Node {
                seg: Segment {
                    lo: 0.0,
                    hi: 1.0,
                    occupant: Occupant::Gap,
                },
                prev: None,
                next: None,
            }],
            free_slots: Vec::new(),
            head: root,
            tail: root,
            channels: BTreeMap::new(),
            gaps_by_pos: BTreeMap::new(),
            gaps_by_size: BTreeSet::new(),
            types: [0; 3],
            free_total: 1.0,
            next_id: 1,
        };
        s.index_gap(root);
        s
    }

    pub fn total_gap_size(&self) -> f64 {
        self.free_total
    }

    pub fn gap_count(&self) -> u32 {
        self.gaps_by_pos.len() as u32
    }

    pub fn channel_count(&self) -> u32 {
        self.channels.len() as u32
    }

    pub fn fragment_count(&self) -> u32 {
        self.types.iter().sum()
    }

    pub fn segment(&self, r: SegmentRef) -> &Segment {
        &self.nodes[r.0 as usize].seg
    }

    pub fn channel(&self, id: ChannelId) -> Option<&Channel> {
        self.channels.get(&id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.values()
    }

    /// Segments from left to right.
    pub fn segments(&self) -> impl Iterator<Item = &Segment> + '_ {
        let mut cur = Some(self.head);
        std::iter::from_fn(move || {
            let r = cur?;
            let node = &self.nodes[r.0 as usize];
            cur = node.next;
            Some(&node.seg)
        })
    }

    /// Gaps in increasing position order.
    pub fn gaps(&self) -> impl DoubleEndedIterator<Item = (GapRef, &Segment)> + '_ {
        self.gaps_by_pos.values().map(move |&r| (r, self.segment(r)))
    }

    /// Gaps starting at or after `pos`, in position order.
    pub fn gaps_from(&self, pos: f64) -> impl Iterator<Item = (GapRef, &Segment)> + '_ {
        self.gaps_by_pos
            .range(OrderedFloat(pos)..)
            .map(move |(_, &r)| (r, self.segment(r)))
    }

    /// Gaps starting strictly before `pos`, in position order.
    pub fn gaps_before(&self, pos: f64) -> impl Iterator<Item = (GapRef, &Segment)> + '_ {
        self.gaps_by_pos
            .range(..OrderedFloat(pos))
            .map(move |(_, &r)| (r, self.segment(r)))
    }

    /// The gap containing `pos`, if any.
    pub fn gap_containing(&self, pos: f64) -> Option<GapRef> {
        let (_, &r) = self.gaps_by_pos.range(..=OrderedFloat(pos)).next_back()?;
        let seg = self.segment(r);
        (pos < seg.hi).then_some(r)
    }

    /// Gaps by decreasing length; equal lengths by increasing position.
    pub fn gaps_by_size(&self) -> impl Iterator<Item = (GapRef, &Segment)> + '_ {
        self.gaps_by_size
            .iter()
            .map(move |&(_, _, r)| (r, self.segment(r)))
    }

    /// Start of the leftmost gap, or 1.0 when the spectrum is full.
    pub fn first_gap_lo(&self) -> f64 {
        self.gaps_by_pos
            .keys()
            .next()
            .map(|k| k.0)
            .unwrap_or(1.0)
    }

    pub fn is_gap(&self, r: SegmentRef) -> bool {
        self.nodes
            .get(r.0 as usize)
            .is_some_and(|n| n.seg.is_gap() && self.gaps_by_pos.get(&OrderedFloat(n.seg.lo)) == Some(&r))
    }

    /// Incrementally maintained census.
    pub fn census(&self) -> TypeCensus {
        let [n0, n1, n2] = self.types;
        TypeCensus {
            n0,
            n1,
            n2,
            f: n0 + n1 + n2,
            g: self.gap_count(),
            i_origin: u32::from(self.segment(self.head).is_gap()),
            i_end: u32::from(self.segment(self.tail).is_gap()),
        }
    }

    /// Census computed by walking the whole segment list.
    pub fn recount(&self) -> TypeCensus {
        let segs: Vec<&Segment> = self.segments().collect();
        let mut c = TypeCensus::default();
        for (i, s) in segs.iter().enumerate() {
            if s.is_gap() {
                c.g += 1;
                continue;
            }
            let left = i > 0 && !segs[i - 1].is_gap();
            let right = i + 1 < segs.len() && !segs[i + 1].is_gap();
            match u8::from(left) + u8::from(right) {
                0 => c.n0 += 1,
                1 => c.n1 += 1,
                _ => c.n2 += 1,
            }
        }
        c.f = c.n0 + c.n1 + c.n2;
        c.i_origin = u32::from(segs.first().is_some_and(|s| s.is_gap()));
        c.i_end = u32::from(segs.last().is_some_and(|s| s.is_gap()));
        c
    }

    /// The id the next carved channel will receive.
    pub fn next_channel_id(&self) -> ChannelId {
        ChannelId(self.next_id)
    }

    /// Turns the gaps named by `plan` into fragments of a new channel of
    /// `size`. Every entry but the last must fill its gap completely; the
    /// last one is left-justified in its gap.
    pub fn carve(
        &mut self,
        plan: &GapPlan,
        size: f64,
        departure_time: f64,
    ) -> Result<CarveOutcome, SpectrumError> {
        self.check_plan(plan, size)?;
        let id = ChannelId(self.next_id);
        self.next_id += 1;

        let last = plan.entries.len() - 1;
        let mut fragments = Vec::with_capacity(plan.entries.len());
        let mut carved = 0.0;
        let mut exact_fit = false;
        for (i, e) in plan.entries.iter().enumerate() {
            let seg = *self.segment(e.gap);
            let residual = seg.hi - (seg.lo + e.fill);
            let frag = if i < last || residual < SLIVER {
                if i == last {
                    exact_fit = true;
                }
                self.fill_gap(e.gap, id)
            } else {
                self.split_gap(e.gap, e.fill, id)
            };
            carved += self.segment(frag).len();
            fragments.push(frag);
        }
        let count = fragments.len() as u32;
        self.channels.insert(
            id,
            Channel {
                id,
                size: carved,
                fragments,
                departure_time,
            },
        );
        Ok(CarveOutcome {
            channel: id,
            fragments: count,
            exact_fit,
        })
    }

    fn check_plan(&self, plan: &GapPlan, size: f64) -> Result<(), SpectrumError> {
        if plan.entries.is_empty() {
            return Err(SpectrumError::PlanInfeasible("empty plan".into()));
        }
        let last = plan.entries.len() - 1;
        let mut seen = BTreeSet::new();
        let mut total = 0.0;
        for (i, e) in plan.entries.iter().enumerate() {
            if !self.is_gap(e.gap) {
                return Err(SpectrumError::PlanInfeasible(format!(
                    "entry {i} does not reference a live gap"
                )));
            }
            if !seen.insert(e.gap) {
                return Err(SpectrumError::PlanInfeasible(format!("entry {i} repeats a gap")));
            }
            let len = self.segment(e.gap).len();
            if !(e.fill > 0.0) || e.fill > len + SLIVER {
                return Err(SpectrumError::PlanInfeasible(format!(
                    "entry {i}: fill {} outside (0, {len}]",
                    e.fill
                )));
            }
            if i < last && e.fill < len - SLIVER {
                return Err(SpectrumError::PlanInfeasible(format!(
                    "entry {i}: only the last gap may be partially filled"
                )));
            }
            total += e.fill;
        }
        if (total - size).abs() > LENGTH_TOL {
            return Err(SpectrumError::PlanInfeasible(format!(
                "fills sum to {total}, requested {size}"
            )));
        }
        Ok(())
    }

    /// Releases every fragment of `id`, merging the freed space with
    /// neighbouring gaps.
    pub fn release(&mut self, id: ChannelId) -> Result<ReleaseSummary, SpectrumError> {
        let channel = self
            .channels
            .remove(&id)
            .ok_or(SpectrumError::UnknownChannel(id))?;
        let mut summary = ReleaseSummary::default();
        for &frag in &channel.fragments {
            match self.frag_type(frag) {
                Some(0) => summary.d0 += 1,
                Some(1) => summary.d1 += 1,
                Some(_) => summary.d2 += 1,
                None => {
                    return Err(SpectrumError::Invariant(format!(
                        "channel {id} references a non-fragment segment"
                    )))
                }
            }
            if frag == self.head {
                summary.j = 1;
            }
            if frag == self.tail {
                summary.j_end = 1;
            }
        }
        for &frag in &channel.fragments {
            self.free_fragment(frag);
        }
        if self.channels.is_empty() {
            // A single gap (0, 1) remains; drop accumulated rounding.
            self.free_total = 1.0;
        }
        summary.g_minus = self.gap_count();
        Ok(summary)
    }

    /// One line per segment: `lo hi occupant`, occupant `G` or a channel id.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for s in self.segments() {
            match s.occupant {
                Occupant::Gap => writeln!(out, "{} {} G", s.lo, s.hi),
                Occupant::Channel(c) => writeln!(out, "{} {} {}", s.lo, s.hi, c),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// Full structural validation. Linear in the number of segments.
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let bad = |m: String| Err(SpectrumError::Invariant(m));
        let segs: Vec<&Segment> = self.segments().collect();
        if segs.first().map(|s| s.lo) != Some(0.0) {
            return bad("first segment does not start at 0".into());
        }
        if segs.last().map(|s| s.hi) != Some(1.0) {
            return bad("last segment does not end at 1".into());
        }
        let mut total = 0.0;
        let mut gap_total = 0.0;
        for (i, s) in segs.iter().enumerate() {
            if !(s.lo < s.hi) {
                return bad(format!("segment {i} has non-positive length [{}, {})", s.lo, s.hi));
            }
            total += s.len();
            if s.is_gap() {
                gap_total += s.len();
            }
            if let Some(next) = segs.get(i + 1) {
                if next.lo != s.hi {
                    return bad(format!("segments {i} and {} are not contiguous", i + 1));
                }
                if s.is_gap() && next.is_gap() {
                    return bad(format!("adjacent gaps at {}", s.hi));
                }
                if !s.is_gap() && s.occupant == next.occupant {
                    return bad(format!("adjacent fragments of one channel at {}", s.hi));
                }
            }
        }
        if (total - 1.0).abs() > LENGTH_TOL {
            return bad(format!("lengths sum to {total}"));
        }
        if (gap_total - self.free_total).abs() > LENGTH_TOL {
            return bad(format!(
                "gap lengths sum to {gap_total}, tracked total {}",
                self.free_total
            ));
        }
        let recount = self.recount();
        if recount != self.census() {
            return bad(format!(
                "census drift: incremental {:?}, recount {:?}",
                self.census(),
                recount
            ));
        }
        if !recount.gap_identity_holds() {
            return bad(format!("gap identity fails for {recount:?}"));
        }
        if self.gaps_by_size.len() != self.gaps_by_pos.len()
            || self.gaps_by_pos.len() != recount.g as usize
        {
            return bad("gap indices out of step with the segment list".into());
        }
        for (&k, &r) in &self.gaps_by_pos {
            let s = self.segment(r);
            if !s.is_gap() || s.lo != k.0 {
                return bad(format!("stale position index entry at {}", k.0));
            }
            if !self
                .gaps_by_size
                .contains(&(std::cmp::Reverse(OrderedFloat(s.len())), k, r))
            {
                return bad(format!("gap at {} missing from size index", k.0));
            }
        }
        let mut fragment_refs = 0;
        for ch in self.channels.values() {
            if ch.fragments.is_empty() {
                return bad(format!("channel {} has no fragments", ch.id));
            }
            let mut sum = 0.0;
            for &f in &ch.fragments {
                let s = self.segment(f);
                if s.occupant != Occupant::Channel(ch.id) {
                    return bad(format!("channel {} references a foreign segment", ch.id));
                }
                sum += s.len();
            }
            if (sum - ch.size).abs() > LENGTH_TOL * ch.size.max(1.0) {
                return bad(format!("channel {} fragments sum to {sum}, size {}", ch.id, ch.size));
            }
            fragment_refs += ch.fragments.len();
        }
        if fragment_refs != recount.f as usize {
            return bad("fragments not owned by exactly one channel".into());
        }
        Ok(())
    }

    // --- internals -------------------------------------------------------

    fn node(&self, r: SegmentRef) -> &Node {
        &self.nodes[r.0 as usize]
    }

    fn node_mut(&mut self, r: SegmentRef) -> &mut Node {
        &mut self.nodes[r.0 as usize]
    }

    fn is_fragment(&self, r: Option<SegmentRef>) -> bool {
        r.is_some_and(|r| !self.segment(r).is_gap())
    }

    fn frag_type(&self, r: SegmentRef) -> Option<usize> {
        let n = self.node(r);
        if n.seg.is_gap() {
            return None;
        }
        Some(usize::from(self.is_fragment(n.prev)) + usize::from(self.is_fragment(n.next)))
    }

    fn untally(&mut self, r: Option<SegmentRef>) {
        if let Some(t) = r.and_then(|r| self.frag_type(r)) {
            self.types[t] -= 1;
        }
    }

    fn tally(&mut self, r: Option<SegmentRef>) {
        if let Some(t) = r.and_then(|r| self.frag_type(r)) {
            self.types[t] += 1;
        }
    }

    fn alloc_node(&mut self, node: Node) -> SegmentRef {
        match self.free_slots.pop() {
            Some(r) => {
                self.nodes[r.0 as usize] = node;
                r
            }
            None => {
                self.nodes.push(node);
                SegmentRef((self.nodes.len() - 1) as u32)
            }
        }
    }

    fn size_key(&self, r: SegmentRef) -> (std::cmp::Reverse<Key>, Key, SegmentRef) {
        let s = self.segment(r);
        (std::cmp::Reverse(OrderedFloat(s.len())), OrderedFloat(s.lo), r)
    }

    fn index_gap(&mut self, r: SegmentRef) {
        let lo = OrderedFloat(self.segment(r).lo);
        self.gaps_by_pos.insert(lo, r);
        let key = self.size_key(r);
        self.gaps_by_size.insert(key);
    }

    fn unindex_gap(&mut self, r: SegmentRef) {
        let lo = OrderedFloat(self.segment(r).lo);
        self.gaps_by_pos.remove(&lo);
        let key = self.size_key(r);
        self.gaps_by_size.remove(&key);
    }

    fn reindex_gap(&mut self, r: SegmentRef, f: impl FnOnce(&mut Segment)) {
        self.unindex_gap(r);
        f(&mut self.node_mut(r).seg);
        self.index_gap(r);
    }

    /// Converts a whole gap into a fragment of `id`.
    fn fill_gap(&mut self, gap: GapRef, id: ChannelId) -> SegmentRef {
        let (prev, next) = (self.node(gap).prev, self.node(gap).next);
        self.untally(prev);
        self.untally(next);
        self.unindex_gap(gap);
        self.free_total -= self.segment(gap).len();
        self.node_mut(gap).seg.occupant = Occupant::Channel(id);
        self.tally(prev);
        self.tally(Some(gap));
        self.tally(next);
        gap
    }

    /// Splits a gap into a left-justified fragment of `fill` and a residual gap.
    fn split_gap(&mut self, gap: GapRef, fill: f64, id: ChannelId) -> SegmentRef {
        let seg = *self.segment(gap);
        let cut = seg.lo + fill;
        let prev = self.node(gap).prev;
        self.untally(prev);
        self.unindex_gap(gap);
        let frag = self.alloc_node(Node {
            seg: Segment {
                lo: seg.lo,
                hi: cut,
                occupant: Occupant::Channel(id),
            },
            prev,
            next: Some(gap),
        });
        match prev {
            Some(p) => self.node_mut(p).next = Some(frag),
            None => self.head = frag,
        }
        let node = self.node_mut(gap);
        node.prev = Some(frag);
        node.seg.lo = cut;
        self.index_gap(gap);
        self.free_total -= cut - seg.lo;
        self.tally(prev);
        self.tally(Some(frag));
        frag
    }

    /// Turns a fragment into a gap and merges it with gap neighbours.
    fn free_fragment(&mut self, frag: SegmentRef) {
        let (prev, next) = (self.node(frag).prev, self.node(frag).next);
        self.untally(prev);
        self.untally(Some(frag));
        self.untally(next);
        self.free_total += self.segment(frag).len();
        self.node_mut(frag).seg.occupant = Occupant::Gap;

        let mut merged = frag;
        if let Some(p) = prev.filter(|&p| self.segment(p).is_gap()) {
            // Absorb `frag` into the gap on its left.
            let hi = self.segment(frag).hi;
            self.reindex_gap(p, |s| s.hi = hi);
            self.unlink(frag);
            merged = p;
        } else {
            self.index_gap(frag);
        }
        if let Some(n) = next.filter(|&n| self.segment(n).is_gap()) {
            let hi = self.segment(n).hi;
            self.unindex_gap(n);
            self.unlink(n);
            self.reindex_gap(merged, |s| s.hi = hi);
        }
        // Neighbouring fragments, if any, still border a gap on this side.
        self.tally(prev.filter(|&p| !self.segment(p).is_gap()));
        self.tally(next.filter(|&n| !self.segment(n).is_gap()));
    }

    fn unlink(&mut self, r: SegmentRef) {
        let (prev, next) = (self.node(r).prev, self.node(r).next);
        match prev {
            Some(p) => self.node_mut(p).next = next,
            None => self.head = next.expect("cannot unlink the only segment"),
        }
        match next {
            Some(n) => self.node_mut(n).prev = prev,
            None => self.tail = prev.expect("cannot unlink the only segment"),
        }
        self.free_slots.push(r);
    }

    #[doc(hidden)]
    /// Breaks the incremental census on purpose; used to exercise detectors.
    pub fn corrupt_census_for_test(&mut self) {
        self.types[2] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{GapPlan, PlanEntry};

    fn plan(entries: &[(GapRef, f64)]) -> GapPlan {
        GapPlan {
            entries: entries
                .iter()
                .map(|&(gap, fill)| PlanEntry { gap, fill })
                .collect(),
        }
    }

    fn first_gap(s: &Spectrum) -> GapRef {
        s.gaps().next().unwrap().0
    }

    fn carve_left(s: &mut Spectrum, size: f64) -> ChannelId {
        let g = first_gap(s);
        s.carve(&plan(&[(g, size)]), size, 0.0).unwrap().channel
    }

    /// Builds a state from consecutive left-justified channels, then
    /// releases the listed ones.
    fn layout(sizes: &[f64], release: &[usize]) -> (Spectrum, Vec<ChannelId>) {
        let mut s = Spectrum::new();
        let ids: Vec<_> = sizes.iter().map(|&x| carve_left(&mut s, x)).collect();
        for &i in release {
            s.release(ids[i]).unwrap();
        }
        (s, ids)
    }

    #[test]
    fn empty_spectrum() {
        let s = Spectrum::new();
        assert_eq!(s.dump(), "0 1 G\n");
        let c = s.census();
        assert_eq!(
            c,
            TypeCensus {
                g: 1,
                i_origin: 1,
                i_end: 1,
                ..Default::default()
            }
        );
        assert!(c.origin_identity_holds());
        assert_eq!(s.total_gap_size(), 1.0);
        s.validate().unwrap();
    }

    #[test]
    fn single_channel() {
        let (s, _) = layout(&[0.3], &[]);
        assert!((s.total_gap_size() - 0.7).abs() < 1e-12);
        let c = s.census();
        assert_eq!((c.n0, c.n1, c.n2, c.g, c.i_origin), (1, 0, 0, 1, 0));
        assert!(c.origin_identity_holds());
        s.validate().unwrap();
    }

    #[test]
    fn total_gap_size_sums_lengths() {
        // gaps (0.1,0.2) and (0.9,1.0)
        let (s, _) = layout(&[0.1, 0.1, 0.7], &[1]);
        let gaps: Vec<_> = s.gaps().map(|(_, g)| (g.lo, g.hi)).collect();
        let want = [(0.1, 0.2), (0.9, 1.0)];
        assert_eq!(gaps.len(), 2);
        for (got, want) in gaps.iter().zip(want) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
        assert!((s.total_gap_size() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn two_isolated_channels() {
        // [gap][frag][gap][frag][gap]
        let (s, _) = layout(&[0.1, 0.2, 0.1, 0.2], &[0, 2]);
        let c = s.census();
        assert_eq!((c.n0, c.n1, c.n2, c.g, c.i_origin), (2, 0, 0, 3, 1));
        assert!(c.origin_identity_holds());
        assert_eq!(c, s.recount());
    }

    /// u1, u2, u3 fill the left; u2 leaves; u4 takes u2's hole plus a
    /// piece after u3.
    fn figure_two() -> (Spectrum, ChannelId) {
        let (mut s, _) = layout(&[0.3, 0.25, 0.3], &[1]);
        let gaps: Vec<_> = s.gaps().map(|(r, g)| (r, g.len())).collect();
        let u4 = s
            .carve(&plan(&[(gaps[0].0, gaps[0].1), (gaps[1].0, 0.35 - gaps[0].1)]), 0.35, 0.0)
            .unwrap();
        assert_eq!(u4.fragments, 2);
        (s, u4.channel)
    }

    #[test]
    fn figure_two_census() {
        let (s, u4) = figure_two();
        let occ: Vec<_> = s.segments().map(|x| x.occupant).collect();
        assert_eq!(occ[1], Occupant::Channel(u4));
        assert_eq!(occ[3], Occupant::Channel(u4));
        assert_eq!(occ[4], Occupant::Gap);
        let c = s.census();
        assert_eq!((c.n0, c.n1, c.n2, c.g, c.i_origin), (0, 2, 2, 1, 0));
        assert!(c.origin_identity_holds());
        s.validate().unwrap();
    }

    #[test]
    fn figure_two_release() {
        let (mut s, u4) = figure_two();
        let before = s.census();
        let r = s.release(u4).unwrap();
        assert_eq!((r.d0, r.d1, r.d2, r.j, r.j_end), (0, 1, 1, 0, 0));
        assert_eq!(r.g_minus, 2);
        assert_eq!(r.g_minus + r.d0, before.g + r.d2 + r.j);
        s.validate().unwrap();
    }

    #[test]
    fn release_only_channel_resets() {
        let (mut s, ids) = layout(&[0.4], &[]);
        let r = s.release(ids[0]).unwrap();
        assert_eq!((r.d0, r.d1, r.d2, r.j, r.g_minus), (1, 0, 0, 1, 1));
        assert_eq!(s.dump(), "0 1 G\n");
        assert_eq!(s.total_gap_size(), 1.0);
    }

    #[test]
    fn carve_two_gaps() {
        let (mut s, _) = layout(&[0.1, 0.1, 0.3, 0.1, 0.3], &[1, 3]);
        // gaps (0.1,0.2), (0.5,0.6), (0.9,1.0)
        let g: Vec<_> = s.gaps().map(|(r, _)| r).collect();
        let first_len = s.segment(g[0]).len();
        let sigma = s.census().sigma();
        let out = s
            .carve(&plan(&[(g[0], first_len), (g[1], 0.15 - first_len)]), 0.15, 1.0)
            .unwrap();
        assert_eq!(out.fragments, 2);
        assert!(!out.exact_fit);
        assert_eq!(s.census().sigma(), sigma + 1);
        let ch = s.channel(out.channel).unwrap();
        let frags: Vec<_> = ch
            .fragments
            .iter()
            .map(|&f| (s.segment(f).lo, s.segment(f).hi))
            .collect();
        assert!((frags[0].0 - 0.1).abs() < 1e-12 && (frags[0].1 - 0.2).abs() < 1e-12);
        assert!((frags[1].0 - 0.5).abs() < 1e-12 && (frags[1].1 - 0.55).abs() < 1e-12);
        let residual = s.gaps().next().unwrap().1;
        assert!((residual.lo - 0.55).abs() < 1e-12 && (residual.hi - 0.6).abs() < 1e-12);
        s.validate().unwrap();
    }

    #[test]
    fn carve_from_empty_adds_one_to_sigma() {
        let mut s = Spectrum::new();
        let sigma = s.census().sigma();
        carve_left(&mut s, 0.4);
        assert_eq!(s.dump(), "0 0.4 1\n0.4 1 G\n");
        assert_eq!(s.census().sigma(), sigma + 1);
    }

    #[test]
    fn sliver_residual_is_absorbed() {
        let mut s = Spectrum::new();
        let g = first_gap(&s);
        let out = s.carve(&plan(&[(g, 1.0 - 1e-13)]), 1.0 - 1e-13, 0.0).unwrap();
        assert!(out.exact_fit);
        assert_eq!(s.gap_count(), 0);
        assert_eq!(s.dump(), "0 1 1\n");
        s.validate().unwrap();
    }

    #[test]
    fn infeasible_plans() {
        let (mut s, _) = layout(&[0.1, 0.1, 0.3], &[1]);
        let g: Vec<_> = s.gaps().map(|(r, _)| r).collect();
        // over-fill
        assert!(matches!(
            s.carve(&plan(&[(g[0], 0.2)]), 0.2, 0.0),
            Err(SpectrumError::PlanInfeasible(_))
        ));
        // partial non-last entry
        assert!(matches!(
            s.carve(&plan(&[(g[0], 0.05), (g[1], 0.05)]), 0.1, 0.0),
            Err(SpectrumError::PlanInfeasible(_))
        ));
        // sum mismatch
        assert!(matches!(
            s.carve(&plan(&[(g[1], 0.05)]), 0.1, 0.0),
            Err(SpectrumError::PlanInfeasible(_))
        ));
        s.validate().unwrap();
    }

    #[test]
    fn unknown_channel() {
        let mut s = Spectrum::new();
        assert_eq!(
            s.release(ChannelId(7)),
            Err(SpectrumError::UnknownChannel(ChannelId(7)))
        );
    }

    #[test]
    fn corrupted_census_is_detected() {
        let (mut s, _) = layout(&[0.2, 0.3], &[]);
        s.corrupt_census_for_test();
        assert!(s.validate().is_err());
    }
}
