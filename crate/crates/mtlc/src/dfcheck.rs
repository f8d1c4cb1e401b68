//! Deadlock-freedom reducibility over collections of channel sets.
//!
//! Each thread contributes the set of channel endpoints occurring in its
//! expression. A regular collection DF-reduces by merging the two sets
//! holding a dual endpoint pair while deleting both endpoints; a collection
//! is DF-reducible when every reduction path ends with all sets empty.
//! Reducibility is a sufficient condition for deadlock freedom, and it is
//! preserved by every evaluation rule of the interpreter, which the
//! per-step monitor checks shape by shape.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ast::{Endpoint, Polarity};

pub type ChannelSet = BTreeSet<Endpoint>;

/// A finite multiset of channel sets with stable indices, so witnesses can
/// name the thread a set came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Collection {
    pub sets: Vec<ChannelSet>,
}

impl Collection {
    pub fn new(sets: Vec<ChannelSet>) -> Collection {
        Collection { sets }
    }

    pub fn all_empty(&self) -> bool {
        self.sets.iter().all(|s| s.is_empty())
    }

    /// Multiset equality, ignoring set order.
    pub fn same_as(&self, other: &Collection) -> bool {
        let mut a: Vec<&ChannelSet> = self.sets.iter().collect();
        let mut b: Vec<&ChannelSet> = other.sets.iter().collect();
        a.sort();
        b.sort();
        a == b
    }

    /// Remove empty sets (reducibility is invariant under this).
    pub fn without_empty_sets(&self) -> Collection {
        Collection::new(
            self.sets
                .iter()
                .filter(|s| !s.is_empty())
                .cloned()
                .collect(),
        )
    }

    fn find(&self, ep: Endpoint) -> Option<usize> {
        self.sets.iter().position(|s| s.contains(&ep))
    }

    /// Channel ids that can currently drive a DF-reduction.
    pub fn reducible_ids(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for (i, s) in self.sets.iter().enumerate() {
            for ep in s {
                if ep.pol == Polarity::Pos {
                    if let Some(j) = self.find(ep.dual()) {
                        if i != j {
                            out.push(ep.id);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn self_looping_set(&self) -> Option<usize> {
        self.sets.iter().position(|s| {
            s.iter()
                .any(|ep| ep.pol == Polarity::Pos && s.contains(&ep.dual()))
        })
    }

    pub fn total_endpoints(&self) -> usize {
        self.sets.iter().map(|s| s.len()).sum()
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{{")?;
        for (i, s) in self.sets.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "[")?;
            for (j, ep) in s.iter().enumerate() {
                if j > 0 {
                    write!(f, " ")?;
                }
                match ep.pol {
                    Polarity::Pos => write!(f, "+{}", ep.id)?,
                    Polarity::Neg => write!(f, "-{}", ep.id)?,
                }
            }
            write!(f, "]")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DfError {
    NotRegular(String),
    NotReducibleVia(u64, String),
    BoundExceeded(usize),
}

impl fmt::Display for DfError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            DfError::NotRegular(msg) => write!(f, "collection is not regular: {msg}"),
            DfError::NotReducibleVia(id, msg) => {
                write!(f, "cannot DF-reduce via channel {id}: {msg}")
            }
            DfError::BoundExceeded(n) => {
                write!(f, "oracle bound exceeded: {n} endpoints")
            }
        }
    }
}

/// Regularity: sets pairwise disjoint, and each channel id contributes
/// either both endpoints to the union or neither.
pub fn is_regular(m: &Collection) -> bool {
    regularity_violation(m).is_none()
}

pub fn regularity_violation(m: &Collection) -> Option<String> {
    let mut seen: BTreeSet<Endpoint> = BTreeSet::new();
    for s in &m.sets {
        for ep in s {
            if !seen.insert(*ep) {
                return Some(format!("endpoint {ep} occurs in two sets"));
            }
        }
    }
    for ep in &seen {
        if !seen.contains(&ep.dual()) {
            return Some(format!(
                "unpaired endpoint: {ep} has no dual in the collection"
            ));
        }
    }
    None
}

/// One DF-reduction step via channel `id`: merge the two sets holding the
/// dual endpoints and delete both endpoints. The sets must be distinct.
pub fn df_reduce(m: &Collection, id: u64) -> Result<Collection, DfError> {
    let pos = Endpoint::pos(id);
    let neg = Endpoint::neg(id);
    let i1 = m
        .find(pos)
        .ok_or_else(|| DfError::NotReducibleVia(id, format!("{pos} absent")))?;
    let i2 = m
        .find(neg)
        .ok_or_else(|| DfError::NotReducibleVia(id, format!("{neg} absent")))?;
    if i1 == i2 {
        return Err(DfError::NotReducibleVia(
            id,
            "both endpoints sit in one set (self-loop)".to_string(),
        ));
    }
    let mut merged: ChannelSet = m.sets[i1].union(&m.sets[i2]).copied().collect();
    merged.remove(&pos);
    merged.remove(&neg);
    let mut sets = Vec::with_capacity(m.sets.len() - 1);
    for (i, s) in m.sets.iter().enumerate() {
        if i != i1 && i != i2 {
            sets.push(s.clone());
        }
    }
    sets.push(merged);
    Ok(Collection::new(sets))
}

/// Why a collection failed to DF-reduce.
#[derive(Clone, Debug, PartialEq)]
pub enum Witness {
    /// A set holding both endpoints of one channel; index into the normal
    /// form where it appeared.
    SelfLoop { set: ChannelSet },
    /// A DF-normal form that still holds channel pairs.
    NormalForm { collection: Collection },
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Witness::SelfLoop { set } => {
                let c = Collection::new(vec![set.clone()]);
                write!(f, "self-looping set {c}")
            }
            Witness::NormalForm { collection } => {
                write!(f, "stuck normal form {collection}")
            }
        }
    }
}

/// Result of deciding DF-reducibility, with the reduction trace taken and
/// a witness when the verdict is negative.
#[derive(Clone, Debug)]
pub struct DfVerdict {
    pub reducible: bool,
    pub witness: Option<Witness>,
    /// (channel id, merged set indices) per step of the greedy reduction.
    pub trace: Vec<(u64, usize, usize)>,
}

/// Decide DF-reducibility by one greedy maximal reduction sequence. A
/// single path suffices: reductions commute, so if some path gets stuck on
/// a nonempty normal form, all of them do.
///
/// Sets are merged in place and trace indices refer to positions in the
/// input collection, so a witness can name the thread a set came from.
/// Merging never enables a reduction that was not already possible, so one
/// pass over the channel ids in increasing order is maximal.
pub fn is_df_reducible(m: &Collection) -> Result<DfVerdict, DfError> {
    if let Some(msg) = regularity_violation(m) {
        return Err(DfError::NotRegular(msg));
    }
    let mut sets: Vec<ChannelSet> = m.sets.clone();
    let mut alive: Vec<bool> = vec![true; sets.len()];
    // where each channel's endpoints currently sit
    let mut locate: BTreeMap<u64, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for (i, s) in sets.iter().enumerate() {
        for ep in s {
            let slot = locate.entry(ep.id).or_insert((None, None));
            match ep.pol {
                Polarity::Pos => slot.0 = Some(i),
                Polarity::Neg => slot.1 = Some(i),
            }
        }
    }
    let ids: Vec<u64> = locate.keys().copied().collect();
    let mut trace = Vec::new();
    for id in ids {
        let (Some(i), Some(j)) = locate[&id] else {
            continue;
        };
        if i == j {
            continue; // self-loop, not reducible via this id
        }
        // merge the smaller set into the larger one
        let (keep, gone) = if sets[i].len() >= sets[j].len() {
            (i, j)
        } else {
            (j, i)
        };
        let moved = std::mem::take(&mut sets[gone]);
        for ep in moved {
            let slot = locate.get_mut(&ep.id).expect("endpoint located");
            match ep.pol {
                Polarity::Pos => slot.0 = Some(keep),
                Polarity::Neg => slot.1 = Some(keep),
            }
            sets[keep].insert(ep);
        }
        alive[gone] = false;
        sets[keep].remove(&Endpoint::pos(id));
        sets[keep].remove(&Endpoint::neg(id));
        locate.remove(&id);
        trace.push((id, i, j));
    }
    let normal_form = Collection::new(
        sets.iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(s, _)| s.clone())
            .collect(),
    );
    if normal_form.all_empty() {
        Ok(DfVerdict {
            reducible: true,
            witness: None,
            trace,
        })
    } else {
        let witness = match normal_form.self_looping_set() {
            Some(i) => Witness::SelfLoop {
                set: normal_form.sets[i].clone(),
            },
            None => Witness::NormalForm {
                collection: normal_form,
            },
        };
        Ok(DfVerdict {
            reducible: false,
            witness: Some(witness),
            trace,
        })
    }
}

/// The definition of DF-reducibility applied literally: reducible when
/// all sets are empty, or the collection is not normal and every successor
/// is reducible. Exponential; bounded, and used as the testing oracle for
/// the greedy decision procedure.
pub fn oracle_df_reducible(m: &Collection, max_endpoints: usize) -> Result<bool, DfError> {
    if let Some(msg) = regularity_violation(m) {
        return Err(DfError::NotRegular(msg));
    }
    if m.total_endpoints() > max_endpoints {
        return Err(DfError::BoundExceeded(m.total_endpoints()));
    }
    fn go(m: &Collection) -> bool {
        if m.all_empty() {
            return true;
        }
        let ids = m.reducible_ids();
        if ids.is_empty() {
            return false;
        }
        ids.iter().all(|&id| {
            let next = df_reduce(m, id).expect("id came from reducible_ids");
            go(&next)
        })
    }
    Ok(go(m))
}

pub const DEFAULT_ORACLE_BOUND: usize = 12;

// ---------------------------------------------------------------------
// the per-step monitor
// ---------------------------------------------------------------------

/// The shape of an evaluation step, as far as channel sets are concerned.
#[derive(Clone, Debug, PartialEq)]
pub enum StepShape {
    /// A step local to one thread; the collection must not change.
    Local,
    /// Thread creation: one set splits in two.
    Split,
    /// Thread exit: one empty set disappears.
    Exit,
    /// Channel creation: reducing the new collection via the fresh id must
    /// give back the old one.
    NewChannel { id: u64 },
    /// Two fresh pairs at once (the unsafe primitive); no shape law holds.
    NewChannelPair { id1: u64, id2: u64 },
    /// Value or tag transfer across a channel (possibly through a chain of
    /// forwarders): both collections reduce to the same thing via the
    /// chain's ids.
    Transfer { ids: Vec<u64> },
    /// Close handshake across a chain: all chain endpoints disappear from
    /// their sets.
    CloseChain { ids: Vec<u64> },
}

#[derive(Clone, Debug)]
pub struct MonitorViolation {
    pub message: String,
    pub prev: Collection,
    pub next: Collection,
}

impl fmt::Display for MonitorViolation {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(
            f,
            "{}; before {} after {}",
            self.message, self.prev, self.next
        )
    }
}

/// Check one step: the next collection must be regular and DF-reducible,
/// and must relate to the previous one according to the rule's shape.
pub fn monitor_step(
    prev: &Collection,
    shape: &StepShape,
    next: &Collection,
) -> Result<(), MonitorViolation> {
    let fail = |message: String| {
        Err(MonitorViolation {
            message,
            prev: prev.clone(),
            next: next.clone(),
        })
    };
    if let Some(msg) = regularity_violation(next) {
        return fail(format!("post-step collection not regular: {msg}"));
    }
    match is_df_reducible(next) {
        Ok(v) if v.reducible => {}
        Ok(v) => {
            let w = v.witness.map(|w| w.to_string()).unwrap_or_default();
            return fail(format!("post-step collection not DF-reducible: {w}"));
        }
        Err(e) => return fail(format!("reducibility check failed: {e}")),
    }
    match shape {
        StepShape::Local => {
            if !next.same_as(prev) {
                return fail("local step changed channel sets".to_string());
            }
        }
        StepShape::Exit => {
            let trimmed_prev = prev.sets.len();
            let trimmed_next = next.sets.len();
            if trimmed_prev != trimmed_next + 1 || !next.same_as(&drop_one_empty(prev)) {
                return fail("exit step must drop exactly one empty set".to_string());
            }
        }
        StepShape::Split => {
            if next.sets.len() != prev.sets.len() + 1 {
                return fail("split step must add one set".to_string());
            }
            let mut prev_union: Vec<Endpoint> = prev.sets.iter().flatten().copied().collect();
            let mut next_union: Vec<Endpoint> = next.sets.iter().flatten().copied().collect();
            prev_union.sort_unstable();
            next_union.sort_unstable();
            if prev_union != next_union {
                return fail("split step must preserve the endpoint union".to_string());
            }
        }
        StepShape::NewChannel { id } => match df_reduce(next, *id) {
            Ok(reduced) => {
                if !reduced.same_as(prev) {
                    return fail(format!(
                        "creation step: reducing via fresh channel {id} does not restore the previous collection"
                    ));
                }
            }
            Err(e) => return fail(format!("creation step: {e}")),
        },
        StepShape::NewChannelPair { .. } => {
            // deliberately no shape law: preservation is already broken,
            // and the reducibility check above is what flags it
        }
        StepShape::Transfer { ids } => {
            let mut a = prev.clone();
            let mut b = next.clone();
            for id in ids {
                a = match df_reduce(&a, *id) {
                    Ok(x) => x,
                    Err(e) => return fail(format!("transfer step (before): {e}")),
                };
                b = match df_reduce(&b, *id) {
                    Ok(x) => x,
                    Err(e) => return fail(format!("transfer step (after): {e}")),
                };
            }
            if !a.same_as(&b) {
                return fail(
                    "transfer step: collections disagree after reducing the chain".to_string(),
                );
            }
        }
        StepShape::CloseChain { ids } => {
            let mut expected: Vec<ChannelSet> = prev.sets.clone();
            for s in expected.iter_mut() {
                for id in ids {
                    s.remove(&Endpoint::pos(*id));
                    s.remove(&Endpoint::neg(*id));
                }
            }
            if !next.same_as(&Collection::new(expected)) {
                return fail("close step must remove exactly the chain endpoints".to_string());
            }
        }
    }
    Ok(())
}

fn drop_one_empty(m: &Collection) -> Collection {
    let mut dropped = false;
    let mut sets = Vec::with_capacity(m.sets.len().saturating_sub(1));
    for s in &m.sets {
        if !dropped && s.is_empty() {
            dropped = true;
            continue;
        }
        sets.push(s.clone());
    }
    Collection::new(sets)
}

// ---------------------------------------------------------------------
// the line-oriented exchange format used by `df-check`
// ---------------------------------------------------------------------

/// Parse a collection: one set per line, endpoints `+<id>` / `-<id>`
/// separated by whitespace, blank line for the empty set. Braces are
/// tolerated and ignored.
pub fn parse_collection(text: &str) -> Result<Collection, (usize, String)> {
    let mut sets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let cleaned = line.replace(['{', '}'], " ");
        let mut set = ChannelSet::new();
        for tok in cleaned.split_whitespace() {
            let (pol, digits) = match tok.split_at(1) {
                ("+", rest) => (Polarity::Pos, rest),
                ("-", rest) => (Polarity::Neg, rest),
                _ => {
                    return Err((
                        lineno + 1,
                        format!("expected `+<id>` or `-<id>`, found `{tok}`"),
                    ))
                }
            };
            let id: u64 = digits
                .parse()
                .map_err(|_| (lineno + 1, format!("bad channel id in `{tok}`")))?;
            set.insert(Endpoint { id, pol });
        }
        sets.push(set);
    }
    if sets.is_empty() {
        return Err((1, "empty input; a collection is non-empty".to_string()));
    }
    Ok(Collection::new(sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coll(sets: &[&[(u64, char)]]) -> Collection {
        Collection::new(
            sets.iter()
                .map(|s| {
                    s.iter()
                        .map(|&(id, c)| match c {
                            '+' => Endpoint::pos(id),
                            _ => Endpoint::neg(id),
                        })
                        .collect()
                })
                .collect(),
        )
    }

    #[test]
    fn regularity() {
        assert!(is_regular(&coll(&[&[(1, '+')], &[(1, '-')]])));
        assert!(!is_regular(&coll(&[&[(1, '+')], &[(1, '+'), (1, '-')]])));
        assert!(!is_regular(&coll(&[&[(1, '+')], &[(2, '-')]])));
    }

    #[test]
    fn reduce_basic() {
        let m = coll(&[&[(1, '+')], &[(1, '-')]]);
        let m2 = df_reduce(&m, 1).unwrap();
        assert!(m2.all_empty());
        assert_eq!(m2.sets.len(), 1);
    }

    #[test]
    fn reduce_merges_and_deletes() {
        let m = coll(&[&[(1, '+'), (2, '+')], &[(1, '-')], &[(2, '-')]]);
        let m2 = df_reduce(&m, 1).unwrap();
        let want = coll(&[&[(2, '-')], &[(2, '+')]]);
        assert!(m2.same_as(&want));
    }

    #[test]
    fn self_loop_not_reducible_via_that_id() {
        let m = coll(&[&[(1, '+'), (1, '-')]]);
        assert!(matches!(
            df_reduce(&m, 1),
            Err(DfError::NotReducibleVia(1, _))
        ));
        let v = is_df_reducible(&m).unwrap();
        assert!(!v.reducible);
        assert!(matches!(v.witness, Some(Witness::SelfLoop { .. })));
    }

    #[test]
    fn all_empty_is_reducible() {
        let m = Collection::new(vec![ChannelSet::new(), ChannelSet::new()]);
        assert!(is_df_reducible(&m).unwrap().reducible);
        assert!(oracle_df_reducible(&m, DEFAULT_ORACLE_BOUND).unwrap());
    }

    #[test]
    fn two_cycle_not_reducible() {
        // the n-pair lemma instance with n = 2
        let m = coll(&[&[(1, '+'), (2, '-')], &[(2, '+'), (1, '-')]]);
        let v = is_df_reducible(&m).unwrap();
        assert!(!v.reducible);
        assert!(!oracle_df_reducible(&m, DEFAULT_ORACLE_BOUND).unwrap());
    }

    #[test]
    fn chain_is_reducible() {
        let m = coll(&[&[(1, '+')], &[(1, '-'), (2, '+')], &[(2, '-')]]);
        assert!(is_df_reducible(&m).unwrap().reducible);
        assert!(oracle_df_reducible(&m, DEFAULT_ORACLE_BOUND).unwrap());
    }

    /// Enumerate all assignments of `pairs` channel pairs into `nsets`
    /// sets. Every assignment is regular by construction.
    fn enumerate(nsets: usize, pairs: usize) -> Vec<Collection> {
        let endpoints: Vec<Endpoint> = (1..=pairs as u64)
            .flat_map(|id| [Endpoint::pos(id), Endpoint::neg(id)])
            .collect();
        let mut out = Vec::new();
        let total = nsets.pow(endpoints.len() as u32);
        for mask in 0..total {
            let mut sets = vec![ChannelSet::new(); nsets];
            let mut m = mask;
            for ep in &endpoints {
                sets[m % nsets].insert(*ep);
                m /= nsets;
            }
            out.push(Collection::new(sets));
        }
        out
    }

    #[test]
    fn greedy_agrees_with_oracle_exhaustively() {
        let mut count = 0;
        for nsets in 1..=3 {
            for pairs in 0..=3 {
                for m in enumerate(nsets, pairs) {
                    let greedy = is_df_reducible(&m).unwrap().reducible;
                    let oracle = oracle_df_reducible(&m, DEFAULT_ORACLE_BOUND).unwrap();
                    assert_eq!(greedy, oracle, "disagreement on {m}");
                    count += 1;
                }
            }
        }
        assert!(count > 500, "exhaustive set unexpectedly small: {count}");
    }

    #[test]
    fn empty_set_removal_preserves_reducibility() {
        for nsets in 1..=3 {
            for pairs in 0..=2 {
                for m in enumerate(nsets, pairs) {
                    let a = is_df_reducible(&m).unwrap().reducible;
                    let trimmed = m.without_empty_sets();
                    if trimmed.sets.is_empty() {
                        continue;
                    }
                    let b = is_df_reducible(&trimmed).unwrap().reducible;
                    assert_eq!(a, b, "empty-set removal changed verdict on {m}");
                }
            }
        }
    }

    #[test]
    fn monitor_accepts_creation_and_close() {
        // creation: {[]} -> {[-1]; [+1]}
        let prev = Collection::new(vec![ChannelSet::new()]);
        let next = coll(&[&[(1, '-')], &[(1, '+')]]);
        monitor_step(&prev, &StepShape::NewChannel { id: 1 }, &next).unwrap();

        // close: {[+1]; [-1]} -> {[]; []}
        let prev = coll(&[&[(1, '+')], &[(1, '-')]]);
        let next = Collection::new(vec![ChannelSet::new(), ChannelSet::new()]);
        monitor_step(&prev, &StepShape::CloseChain { ids: vec![1] }, &next).unwrap();
    }

    #[test]
    fn monitor_flags_self_loop() {
        let prev = coll(&[&[(1, '+')], &[(1, '-')]]);
        let next = coll(&[&[(1, '+'), (1, '-')]]);
        let err = monitor_step(&prev, &StepShape::Local, &next).unwrap_err();
        assert!(err.message.contains("not DF-reducible"));
    }

    #[test]
    fn parse_format() {
        let m = parse_collection("+1\n-1\n").unwrap();
        assert!(is_df_reducible(&m).unwrap().reducible);
        let m = parse_collection("{+1 -2}\n{+2 -1}\n").unwrap();
        assert!(!is_df_reducible(&m).unwrap().reducible);
        // blank line is the empty set
        let m = parse_collection("+1 -1\n\n").unwrap();
        assert_eq!(m.sets.len(), 2);
        assert!(parse_collection("bogus\n").is_err());
    }

    fn arb_regular(max_pairs: u64, max_sets: usize) -> impl Strategy<Value = Collection> {
        (1..=max_pairs, 1..=max_sets).prop_flat_map(|(pairs, nsets)| {
            proptest::collection::vec(0..nsets, (2 * pairs) as usize).prop_map(move |assignment| {
                let mut sets = vec![ChannelSet::new(); nsets];
                for (k, &slot) in assignment.iter().enumerate() {
                    let id = (k as u64) / 2 + 1;
                    let ep = if k % 2 == 0 {
                        Endpoint::pos(id)
                    } else {
                        Endpoint::neg(id)
                    };
                    sets[slot].insert(ep);
                }
                Collection::new(sets)
            })
        })
    }

    proptest! {
        /// Every negative verdict carries a checkable witness: either a
        /// set holding a dual pair, or a stuck normal form in which every
        /// channel sits in the same set as its dual.
        #[test]
        fn negative_verdicts_have_checkable_witnesses(m in arb_regular(5, 4)) {
            let v = is_df_reducible(&m).unwrap();
            prop_assume!(!v.reducible);
            match v.witness.expect("witness present iff not reducible") {
                Witness::SelfLoop { set } => {
                    prop_assert!(set
                        .iter()
                        .any(|ep| ep.pol == Polarity::Pos && set.contains(&ep.dual())));
                }
                Witness::NormalForm { collection } => {
                    prop_assert!(!collection.all_empty());
                    for set in &collection.sets {
                        for ep in set {
                            prop_assert!(set.contains(&ep.dual()));
                        }
                    }
                }
            }
        }

        #[test]
        fn greedy_agrees_with_oracle_randomly(m in arb_regular(5, 4)) {
            let greedy = is_df_reducible(&m).unwrap().reducible;
            let oracle = oracle_df_reducible(&m, 16).unwrap();
            prop_assert_eq!(greedy, oracle);
        }

        /// A regular collection of n sets whose union holds at least n
        /// channel pairs is never DF-reducible.
        #[test]
        fn n_pairs_lemma(m in arb_regular(4, 4)) {
            let n = m.sets.len();
            let pair_count = m
                .sets
                .iter()
                .flatten()
                .filter(|ep| ep.pol == Polarity::Pos)
                .count();
            prop_assume!(pair_count >= n);
            prop_assert!(!is_df_reducible(&m).unwrap().reducible);
        }
    }
}
