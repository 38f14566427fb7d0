//! Per-node dissemination state machines.
//!
//! Five protocols are supported. Broadcast relays every fresh message to all
//! neighbors except the forwarder. Fixed probability flips an independent
//! coin per neighbor; probabilistic broadcast flips a single coin for the
//! whole neighbor set. Dandelion routes a message through a stem phase
//! (exactly one random relay per hop) before flooding it in the fluff
//! phase, and the `+-` variant adds a fail-safe: a stem relay that never
//! observes the fluff copy of a message re-broadcasts it itself after a
//! timeout.
//!
//! Coins are parameterized directly by the forward probability `p`; a
//! formulation in terms of a drop threshold `t` maps to `p = 1 - t`.
//!
//! A per-node cache suppresses duplicates and a per-message TTL bounds relay
//! depth, so dissemination always terminates on a finite graph.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::chain::Block;
use crate::overlay::NodeId;
use crate::rng::SimRng;

/// Unique message identifier. Block announcements reuse the block id;
/// probe messages use a disjoint id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MsgId(pub u64);

impl MsgId {
    const PROBE_BIT: u64 = 1 << 63;

    pub fn for_block(block_id: crate::chain::BlockId) -> MsgId {
        MsgId(block_id.0)
    }

    pub fn for_probe(origin: NodeId) -> MsgId {
        MsgId(Self::PROBE_BIT | origin.0 as u64)
    }
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgKind {
    /// Announcement of a freshly mined block.
    Block,
    /// Payload-free probe used by dissemination-only experiments.
    Probe,
}

/// Dandelion phase flag; `None` for all other protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Stem,
    Fluff,
    None,
}

/// A disseminated unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub id: MsgId,
    pub kind: MsgKind,
    pub origin: NodeId,
    /// Carried block for `kind == Block`; the block id doubles as the
    /// block reference.
    pub block: Option<Block>,
    /// Remaining hop budget; a message with `ttl == 0` is never relayed.
    pub ttl: u32,
    /// Hops traveled so far; the origin's own emission is hop 1.
    pub hops: u32,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Broadcast,
    FixedProbability,
    ProbabilisticBroadcast,
    Dandelion,
    DandelionPlusMinus,
}

impl Protocol {
    pub fn is_dandelion(self) -> bool {
        matches!(self, Protocol::Dandelion | Protocol::DandelionPlusMinus)
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Broadcast => "broadcast",
            Protocol::FixedProbability => "fixed_probability",
            Protocol::ProbabilisticBroadcast => "probabilistic_broadcast",
            Protocol::Dandelion => "dandelion",
            Protocol::DandelionPlusMinus => "dandelion_pm",
        }
    }
}

/// Dissemination protocol and its tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub protocol: Protocol,
    /// Forward probability for the probabilistic protocols.
    pub p: f64,
    /// Stem length for the Dandelion variants.
    pub stem_hops: u32,
    /// Fail-safe timeout in propagation sub-steps (Dandelion+- only).
    pub failsafe_timeout: u32,
    /// Initial TTL stamped on fresh messages.
    pub ttl_init: u32,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            protocol: Protocol::Broadcast,
            p: 1.0,
            stem_hops: 2,
            failsafe_timeout: 20,
            ttl_init: 16,
        }
    }
}

impl ProtocolParams {
    /// Phase stamped on a message the moment its origin creates it.
    pub fn initial_phase(&self) -> Phase {
        if self.protocol.is_dandelion() {
            Phase::Stem
        } else {
            Phase::None
        }
    }
}

/// Result of presenting a message id to the duplicate-suppression cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Duplicate,
}

#[derive(Debug, Clone)]
struct StemWatch {
    deadline: u64,
    msg: Message,
}

/// Per-node gossip state: the seen-cache plus pending fail-safe watches.
#[derive(Debug, Clone, Default)]
pub struct GossipState {
    seen: HashSet<MsgId>,
    // BTreeMap so fail-safe firings drain in canonical id order.
    stem_pending: BTreeMap<MsgId, StemWatch>,
}

impl GossipState {
    pub fn new() -> GossipState {
        GossipState::default()
    }

    /// Record a message id; the first presentation is fresh, all later ones
    /// are duplicates.
    pub fn accept(&mut self, id: MsgId) -> Freshness {
        if self.seen.insert(id) {
            Freshness::Fresh
        } else {
            Freshness::Duplicate
        }
    }

    pub fn has_seen(&self, id: MsgId) -> bool {
        self.seen.contains(&id)
    }

    /// Register a fail-safe watch for a stem-phase message: if no fluff copy
    /// of `m.id` is observed by `now + failsafe_timeout`, the stored copy is
    /// returned by `failsafe_tick` for self-broadcast. Duplicate watches for
    /// the same id are ignored.
    pub fn stem_watch(&mut self, m: &Message, now: u64, params: &ProtocolParams) {
        if params.protocol != Protocol::DandelionPlusMinus || m.phase != Phase::Stem {
            return;
        }
        self.stem_pending.entry(m.id).or_insert(StemWatch {
            deadline: now + params.failsafe_timeout as u64,
            msg: *m,
        });
    }

    /// Cancel the watch for `id` because a fluff copy came back.
    pub fn fluff_seen(&mut self, id: MsgId) {
        self.stem_pending.remove(&id);
    }

    /// Fire every watch whose deadline has passed. The returned messages are
    /// the stored stem copies switched to fluff phase, ready to be broadcast
    /// by the owning node; fired watches are removed.
    pub fn failsafe_tick(&mut self, now: u64) -> Vec<Message> {
        let due: Vec<MsgId> = self
            .stem_pending
            .iter()
            .filter(|(_, w)| w.deadline <= now)
            .map(|(&id, _)| id)
            .collect();
        due.into_iter()
            .map(|id| {
                let mut msg = self.stem_pending.remove(&id).expect("due id present").msg;
                msg.phase = Phase::Fluff;
                msg
            })
            .collect()
    }

    pub fn pending_watches(&self) -> usize {
        self.stem_pending.len()
    }
}

/// Forwarding decision for one accepted (or fail-safe re-broadcast) message.
///
/// Every emitted copy carries `ttl = m.ttl - 1` and `hops = m.hops + 1`; a
/// message with `ttl == 0` produces no forwards. An empty list is a valid
/// outcome.
pub fn decide_forwards(
    params: &ProtocolParams,
    m: &Message,
    from: Option<NodeId>,
    nbrs: &[NodeId],
    rng: &mut SimRng,
) -> Vec<(NodeId, Message)> {
    if m.ttl == 0 {
        return Vec::new();
    }
    let relayed = |phase: Phase| Message {
        ttl: m.ttl - 1,
        hops: m.hops + 1,
        phase,
        ..*m
    };
    let eligible = || nbrs.iter().copied().filter(|&n| Some(n) != from);

    match params.protocol {
        Protocol::Broadcast => eligible().map(|n| (n, relayed(Phase::None))).collect(),
        Protocol::FixedProbability => eligible()
            .filter(|_| rng.coin(params.p))
            .map(|n| (n, relayed(Phase::None)))
            .collect(),
        Protocol::ProbabilisticBroadcast => {
            if rng.coin(params.p) {
                eligible().map(|n| (n, relayed(Phase::None))).collect()
            } else {
                Vec::new()
            }
        }
        Protocol::Dandelion | Protocol::DandelionPlusMinus => {
            if m.phase == Phase::Stem && m.hops < params.stem_hops {
                // Single random relay; fall back to the forwarder when it is
                // the only neighbor.
                let cands: Vec<NodeId> = eligible().collect();
                let target = if cands.is_empty() {
                    from.filter(|f| nbrs.contains(f))
                } else {
                    Some(cands[rng.index(cands.len())])
                };
                target.map(|t| (t, relayed(Phase::Stem))).into_iter().collect()
            } else {
                // Stem budget exhausted (or already fluff): flood.
                eligible().map(|n| (n, relayed(Phase::Fluff))).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamPurpose;

    fn probe(origin: u32, ttl: u32, hops: u32, phase: Phase) -> Message {
        Message {
            id: MsgId::for_probe(NodeId(origin)),
            kind: MsgKind::Probe,
            origin: NodeId(origin),
            block: None,
            ttl,
            hops,
            phase,
        }
    }

    fn ids(v: &[(NodeId, Message)]) -> Vec<u32> {
        v.iter().map(|(n, _)| n.0).collect()
    }

    fn params(protocol: Protocol, p: f64) -> ProtocolParams {
        ProtocolParams {
            protocol,
            p,
            ..ProtocolParams::default()
        }
    }

    fn rng(tag: u64) -> SimRng {
        SimRng::derive(tag, StreamPurpose::Gossip, &[])
    }

    #[test]
    fn accept_fresh_then_duplicate() {
        let mut gs = GossipState::new();
        let a = MsgId(1);
        let b = MsgId(2);
        assert_eq!(gs.accept(a), Freshness::Fresh);
        assert_eq!(gs.accept(a), Freshness::Duplicate);
        assert_eq!(gs.accept(b), Freshness::Fresh);
    }

    #[test]
    fn broadcast_excludes_forwarder() {
        let nbrs = [NodeId(1), NodeId(2), NodeId(3), NodeId(6)];
        let out = decide_forwards(
            &params(Protocol::Broadcast, 1.0),
            &probe(0, 8, 1, Phase::None),
            Some(NodeId(6)),
            &nbrs,
            &mut rng(1),
        );
        assert_eq!(ids(&out), vec![1, 2, 3]);
        for (_, m) in &out {
            assert_eq!(m.ttl, 7);
            assert_eq!(m.hops, 2);
        }
    }

    #[test]
    fn fixed_probability_degenerate() {
        let nbrs = [NodeId(1), NodeId(2)];
        let m = probe(0, 8, 1, Phase::None);
        let out = decide_forwards(
            &params(Protocol::FixedProbability, 1.0),
            &m,
            Some(NodeId(1)),
            &nbrs,
            &mut rng(2),
        );
        assert_eq!(ids(&out), vec![2]);
        let out = decide_forwards(
            &params(Protocol::FixedProbability, 0.0),
            &m,
            Some(NodeId(1)),
            &nbrs,
            &mut rng(3),
        );
        assert!(out.is_empty());
    }

    #[test]
    fn probabilistic_broadcast_is_all_or_nothing() {
        let nbrs = [NodeId(1), NodeId(2), NodeId(3)];
        let m = probe(0, 8, 1, Phase::None);
        let mut r = rng(4);
        for _ in 0..200 {
            let out = decide_forwards(
                &params(Protocol::ProbabilisticBroadcast, 0.5),
                &m,
                Some(NodeId(1)),
                &nbrs,
                &mut r,
            );
            assert!(out.is_empty() || ids(&out) == vec![2, 3]);
        }
    }

    #[test]
    fn ttl_zero_never_relays() {
        let nbrs = [NodeId(1), NodeId(2)];
        for proto in [
            Protocol::Broadcast,
            Protocol::FixedProbability,
            Protocol::ProbabilisticBroadcast,
            Protocol::Dandelion,
        ] {
            let out = decide_forwards(
                &params(proto, 1.0),
                &probe(0, 0, 3, Phase::Fluff),
                None,
                &nbrs,
                &mut rng(5),
            );
            assert!(out.is_empty(), "{proto:?} relayed at ttl 0");
        }
    }

    #[test]
    fn dandelion_stem_single_relay() {
        let nbrs = [NodeId(1), NodeId(2), NodeId(3)];
        let p = ProtocolParams {
            protocol: Protocol::Dandelion,
            stem_hops: 2,
            ..ProtocolParams::default()
        };
        let mut r = rng(6);
        for _ in 0..200 {
            let out = decide_forwards(&p, &probe(0, 8, 0, Phase::Stem), Some(NodeId(1)), &nbrs, &mut r);
            assert_eq!(out.len(), 1);
            let (target, fwd) = out[0];
            assert!(target == NodeId(2) || target == NodeId(3));
            assert_eq!(fwd.phase, Phase::Stem);
            assert_eq!(fwd.hops, 1);
        }
    }

    #[test]
    fn dandelion_stem_falls_back_to_forwarder() {
        let nbrs = [NodeId(4)];
        let p = ProtocolParams {
            protocol: Protocol::Dandelion,
            stem_hops: 4,
            ..ProtocolParams::default()
        };
        let out = decide_forwards(&p, &probe(0, 8, 1, Phase::Stem), Some(NodeId(4)), &nbrs, &mut rng(7));
        assert_eq!(ids(&out), vec![4]);
    }

    #[test]
    fn dandelion_transitions_to_fluff_after_stem_budget() {
        let nbrs = [NodeId(1), NodeId(2), NodeId(3)];
        let p = ProtocolParams {
            protocol: Protocol::Dandelion,
            stem_hops: 2,
            ..ProtocolParams::default()
        };
        let out = decide_forwards(&p, &probe(0, 8, 2, Phase::Stem), Some(NodeId(1)), &nbrs, &mut rng(8));
        assert_eq!(ids(&out), vec![2, 3]);
        assert!(out.iter().all(|(_, m)| m.phase == Phase::Fluff));
    }

    #[test]
    fn fluff_copies_flood() {
        let nbrs = [NodeId(1), NodeId(2), NodeId(3)];
        let p = params(Protocol::DandelionPlusMinus, 1.0);
        let out = decide_forwards(&p, &probe(0, 8, 5, Phase::Fluff), Some(NodeId(2)), &nbrs, &mut rng(9));
        assert_eq!(ids(&out), vec![1, 3]);
    }

    #[test]
    fn fixed_probability_binomial_mean() {
        // Oracle: mean forward count for d eligible neighbors is d * p.
        let nbrs: Vec<NodeId> = (1..=7).map(NodeId).collect(); // 6 eligible + forwarder
        let p = params(Protocol::FixedProbability, 0.5);
        let m = probe(0, 8, 1, Phase::None);
        let mut r = rng(10);
        let trials = 100_000;
        let total: usize = (0..trials)
            .map(|_| decide_forwards(&p, &m, Some(NodeId(7)), &nbrs, &mut r).len())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 3.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn stem_watch_registers_deadline() {
        let mut gs = GossipState::new();
        let p = params(Protocol::DandelionPlusMinus, 1.0);
        let m = probe(0, 8, 1, Phase::Stem);
        gs.stem_watch(&m, 3, &p);
        assert_eq!(gs.pending_watches(), 1);
        // Before the deadline nothing fires.
        assert!(gs.failsafe_tick(12).is_empty());
        // Deadline is now + failsafe_timeout = 23 with the default timeout of 20.
        let fired = gs.failsafe_tick(23);
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].phase, Phase::Fluff);
        assert_eq!(gs.pending_watches(), 0);
    }

    #[test]
    fn stem_watch_ignores_fluff_and_duplicates() {
        let mut gs = GossipState::new();
        let p = params(Protocol::DandelionPlusMinus, 1.0);
        gs.stem_watch(&probe(0, 8, 1, Phase::Fluff), 3, &p);
        assert_eq!(gs.pending_watches(), 0);
        let stem = probe(0, 8, 1, Phase::Stem);
        gs.stem_watch(&stem, 3, &p);
        gs.stem_watch(&stem, 5, &p);
        assert_eq!(gs.pending_watches(), 1);
        // Still the original deadline: fires at 23, not 25.
        assert_eq!(gs.failsafe_tick(23).len(), 1);
    }

    #[test]
    fn failsafe_cancelled_by_fluff_receipt() {
        let mut gs = GossipState::new();
        let p = params(Protocol::DandelionPlusMinus, 1.0);
        let m = probe(0, 8, 1, Phase::Stem);
        gs.stem_watch(&m, 3, &p);
        gs.fluff_seen(m.id);
        assert!(gs.failsafe_tick(23).is_empty());
    }

    #[test]
    fn failsafe_fires_in_msg_id_order() {
        let mut gs = GossipState::new();
        let p = params(Protocol::DandelionPlusMinus, 1.0);
        let mut b = probe(5, 8, 1, Phase::Stem);
        b.id = MsgId(500);
        let mut a = probe(3, 8, 1, Phase::Stem);
        a.id = MsgId(300);
        gs.stem_watch(&b, 0, &p);
        gs.stem_watch(&a, 0, &p);
        let fired = gs.failsafe_tick(100);
        assert_eq!(fired.iter().map(|m| m.id).collect::<Vec<_>>(), vec![MsgId(300), MsgId(500)]);
    }
}
