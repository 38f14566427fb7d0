//! Node behaviors: honest miners, pools, the majority-hashrate attacker,
//! the selfish miner, Sybil relays and passive relays.
//!
//! The majority attacker follows the honest protocol with an outsized
//! hash-rate; its advantage comes purely from mining power plus the
//! universal own-blocks fork tie-break. The selfish miner withholds mined
//! blocks on a private chain and releases the whole chain once it leads the
//! public ledger by the configured number of blocks, abandoning it whenever
//! the public chain catches up. Sybil nodes never mine; they relay normally
//! except that messages originated by the designated victim are swallowed.

use thiserror::Error;

use crate::chain::{mine_tick, Block, BlockId, BlockTree, MiningParams};
use crate::engine::{EventKind, Outbox};
use crate::gossip::{
    decide_forwards, Freshness, GossipState, Message, MsgId, MsgKind, Phase, Protocol,
    ProtocolParams,
};
use crate::overlay::NodeId;
use crate::rng::{SimRng, StreamPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleKind {
    Honest,
    Pool,
    Attacker51,
    Selfish,
    Sybil,
    Passive,
}

/// A node's role and mining power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Role {
    pub kind: RoleKind,
    pub hashrate: f64,
}

impl Role {
    fn non_miner(kind: RoleKind) -> Role {
        Role { kind, hashrate: 0.0 }
    }

    pub fn is_miner(&self) -> bool {
        matches!(
            self.kind,
            RoleKind::Honest | RoleKind::Pool | RoleKind::Attacker51 | RoleKind::Selfish
        )
    }

    /// True for nodes whose block receipts count toward global adjudication.
    pub fn is_honest(&self) -> bool {
        !matches!(self.kind, RoleKind::Attacker51 | RoleKind::Selfish | RoleKind::Sybil)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    FiftyOne,
    SelfishMining,
    Sybil,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::FiftyOne => "fifty_one",
            AttackKind::SelfishMining => "selfish_mining",
            AttackKind::Sybil => "sybil",
        }
    }
}

/// Attack scenario configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub attack: AttackKind,
    /// Hash-rate fraction assigned to the attacker node.
    pub attacker_hashrate: f64,
    pub pools_enabled: bool,
    pub pool_count: u32,
    /// Aggregate share of the non-attacker hash-rate held by the pools.
    pub pool_aggregate_share: f64,
    /// Private-chain lead at which the selfish miner releases.
    pub selfish_lead: u32,
    /// Fraction of nodes acting as Sybil relays.
    pub sybil_fraction: f64,
    /// Message originator targeted by the Sybil filter.
    pub victim: NodeId,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            attack: AttackKind::None,
            attacker_hashrate: 0.0,
            pools_enabled: false,
            pool_count: 9,
            pool_aggregate_share: 0.804,
            selfish_lead: 2,
            sybil_fraction: 0.0,
            victim: NodeId(0),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("attacker_hashrate {0} must lie in [0,1)")]
    HashrateOutOfRange(f64),
    #[error("miner_fraction {0} must lie in (0,1]")]
    MinerFractionOutOfRange(f64),
    #[error("{miners} miners cannot host an attacker plus {pools} pools and at least one regular miner")]
    TooFewMiners { miners: u32, pools: u32 },
    #[error("victim id {victim} out of range for {n} nodes")]
    VictimOutOfRange { victim: u32, n: u32 },
    #[error("sybil_fraction {0} must lie in [0,1)")]
    SybilFractionOutOfRange(f64),
}

/// Assign a role to every node.
///
/// The attacker (when the scenario has one) receives exactly
/// `attacker_hashrate`; the remaining `1 - h` is split among honest miners.
/// With pools enabled, `pool_count` designated nodes share
/// `pool_aggregate_share * (1 - h)` equally and the other miners share the
/// rest equally. Which nodes mine, pool, or attack is drawn uniformly from
/// the seed. Sybil scenarios disable mining entirely: no hash-rate is
/// assigned and `sybil_fraction * n` non-victim nodes become Sybil relays.
pub fn assign_hashrates(
    n: u32,
    miner_fraction: f64,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<Role>, AgentError> {
    let mut rng = SimRng::derive(seed, StreamPurpose::Assign, &[]);

    if cfg.attack == AttackKind::Sybil {
        if cfg.victim.0 >= n {
            return Err(AgentError::VictimOutOfRange {
                victim: cfg.victim.0,
                n,
            });
        }
        if !(0.0..1.0).contains(&cfg.sybil_fraction) {
            return Err(AgentError::SybilFractionOutOfRange(cfg.sybil_fraction));
        }
        let count = ((cfg.sybil_fraction * n as f64).round() as usize).min(n as usize - 1);
        let mut candidates: Vec<u32> = (0..n).filter(|&v| v != cfg.victim.0).collect();
        rng.shuffle(&mut candidates);
        let mut roles = vec![Role::non_miner(RoleKind::Passive); n as usize];
        for &v in candidates.iter().take(count) {
            roles[v as usize] = Role::non_miner(RoleKind::Sybil);
        }
        return Ok(roles);
    }

    if !(miner_fraction > 0.0 && miner_fraction <= 1.0) {
        return Err(AgentError::MinerFractionOutOfRange(miner_fraction));
    }
    let has_attacker = matches!(cfg.attack, AttackKind::FiftyOne | AttackKind::SelfishMining);
    let h = if has_attacker { cfg.attacker_hashrate } else { 0.0 };
    if !(0.0..1.0).contains(&h) {
        return Err(AgentError::HashrateOutOfRange(h));
    }

    let miner_count = ((miner_fraction * n as f64).round() as u32).clamp(1, n);
    let pool_count = if cfg.pools_enabled { cfg.pool_count } else { 0 };
    let reserved = u32::from(has_attacker) + pool_count;
    if miner_count < reserved + 1 {
        return Err(AgentError::TooFewMiners {
            miners: miner_count,
            pools: pool_count,
        });
    }
    let regular_count = miner_count - reserved;

    let pool_rate = if pool_count > 0 {
        cfg.pool_aggregate_share * (1.0 - h) / pool_count as f64
    } else {
        0.0
    };
    let honest_share = if pool_count > 0 {
        (1.0 - cfg.pool_aggregate_share) * (1.0 - h)
    } else {
        1.0 - h
    };
    let regular_rate = honest_share / regular_count as f64;

    let mut ids: Vec<u32> = (0..n).collect();
    rng.shuffle(&mut ids);
    let mut roles = vec![Role::non_miner(RoleKind::Passive); n as usize];
    let mut next = 0usize;
    if has_attacker {
        let kind = if cfg.attack == AttackKind::SelfishMining {
            RoleKind::Selfish
        } else {
            RoleKind::Attacker51
        };
        roles[ids[next] as usize] = Role { kind, hashrate: h };
        next += 1;
    }
    for _ in 0..pool_count {
        roles[ids[next] as usize] = Role {
            kind: RoleKind::Pool,
            hashrate: pool_rate,
        };
        next += 1;
    }
    for _ in 0..regular_count {
        roles[ids[next] as usize] = Role {
            kind: RoleKind::Honest,
            hashrate: regular_rate,
        };
        next += 1;
    }
    Ok(roles)
}

/// Outcome of the Sybil relay filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Drop,
    ProcessNormally,
}

/// Sybil nodes swallow messages created by the victim and handle everything
/// else per the dissemination protocol. Honest nodes never filter.
pub fn sybil_relay_filter(role: &Role, m: &Message, victim: NodeId) -> FilterDecision {
    if role.kind == RoleKind::Sybil && m.origin == victim {
        FilterDecision::Drop
    } else {
        FilterDecision::ProcessNormally
    }
}

/// Withheld private chain of a selfish miner.
#[derive(Debug, Clone)]
pub struct SelfishState {
    /// Parent-linked path of withheld blocks rooted at `fork_base`.
    pub private_chain: Vec<Block>,
    /// Public block the private chain diverges from.
    pub fork_base: BlockId,
    pub episodes_finalized: u32,
}

impl Default for SelfishState {
    fn default() -> Self {
        SelfishState {
            private_chain: Vec::new(),
            fork_base: BlockId::GENESIS,
            episodes_finalized: 0,
        }
    }
}

/// One simulated node: its role plus all per-node state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: NodeId,
    pub role: Role,
    pub gossip: GossipState,
    /// This node's view of the public chain.
    pub view: BlockTree,
    pub selfish: SelfishState,
}

impl Agent {
    pub fn new(id: NodeId, role: Role) -> Agent {
        Agent {
            id,
            role,
            gossip: GossipState::new(),
            view: BlockTree::new(Some(id)),
            selfish: SelfishState::default(),
        }
    }

    /// Honest mining-phase behavior (also used by pools and the majority
    /// attacker): draw the mining coin and, on success, build on the best
    /// tip of the own view and disseminate the block.
    pub fn honest_step(
        &mut self,
        step: u32,
        now: u64,
        mining: &MiningParams,
        proto: &ProtocolParams,
        nbrs: &[NodeId],
        seed: u64,
        out: &mut Outbox,
    ) {
        let mut mine_rng = SimRng::derive(seed, StreamPurpose::Mining, &[self.id.0 as u64, step as u64]);
        if !mine_tick(self.role.hashrate, mining, &mut mine_rng) {
            return;
        }
        let parent = self.view.select_tip();
        let height = self.view.height_of(parent).expect("tip exists") + 1;
        let block = Block {
            id: BlockId::for_mint(step, self.id),
            parent: Some(parent),
            miner: Some(self.id),
            height,
            mined_step: step,
        };
        out.event(EventKind::BlockMined { block });
        self.view.insert_block(block).expect("own block attaches to own tip");
        out.event(EventKind::BlockAccepted { id: block.id });
        let mut grng = self.gossip_rng(seed, step, 0);
        self.originate(
            Message {
                id: MsgId::for_block(block.id),
                kind: MsgKind::Block,
                origin: self.id,
                block: Some(block),
                ttl: proto.ttl_init,
                hops: 0,
                phase: proto.initial_phase(),
            },
            now,
            proto,
            nbrs,
            &mut grng,
            out,
        );
    }

    /// Selfish mining-phase behavior: abandon the private chain when the
    /// public ledger has caught up, mine on the private tip, and release the
    /// whole private chain once it leads the public height by
    /// `cfg.selfish_lead` or more.
    pub fn selfish_step(
        &mut self,
        step: u32,
        now: u64,
        mining: &MiningParams,
        cfg: &AttackConfig,
        proto: &ProtocolParams,
        nbrs: &[NodeId],
        seed: u64,
        out: &mut Outbox,
    ) {
        let public_best = self.view.best_height();
        if let Some(tip) = self.selfish.private_chain.last() {
            if public_best >= tip.height {
                out.event(EventKind::SelfishAbandon {
                    blocks: self.selfish.private_chain.len() as u32,
                });
                self.selfish.private_chain.clear();
            }
        }

        let mut mine_rng = SimRng::derive(seed, StreamPurpose::Mining, &[self.id.0 as u64, step as u64]);
        if mine_tick(self.role.hashrate, mining, &mut mine_rng) {
            let (parent, parent_height) = match self.selfish.private_chain.last() {
                Some(b) => (b.id, b.height),
                None => {
                    let tip = self.view.select_tip();
                    self.selfish.fork_base = tip;
                    (tip, self.view.height_of(tip).expect("tip exists"))
                }
            };
            let block = Block {
                id: BlockId::for_mint(step, self.id),
                parent: Some(parent),
                miner: Some(self.id),
                height: parent_height + 1,
                mined_step: step,
            };
            out.event(EventKind::BlockMined { block });
            self.selfish.private_chain.push(block);
        }

        let lead = match self.selfish.private_chain.last() {
            Some(tip) => tip.height as i64 - self.view.best_height() as i64,
            None => return,
        };
        if lead >= cfg.selfish_lead as i64 {
            out.event(EventKind::SelfishRelease {
                blocks: self.selfish.private_chain.len() as u32,
            });
            self.selfish.episodes_finalized += 1;
            let released = std::mem::take(&mut self.selfish.private_chain);
            let mut grng = self.gossip_rng(seed, step, 0);
            for block in released {
                self.view.insert_block(block).expect("released chain attaches in order");
                out.event(EventKind::BlockAccepted { id: block.id });
                self.originate(
                    Message {
                        id: MsgId::for_block(block.id),
                        kind: MsgKind::Block,
                        origin: self.id,
                        block: Some(block),
                        ttl: proto.ttl_init,
                        hops: 0,
                        phase: proto.initial_phase(),
                    },
                    now,
                    proto,
                    nbrs,
                    &mut grng,
                    out,
                );
            }
            self.selfish.fork_base = self.view.select_tip();
        }
    }

    /// Emit the probe message measured by dissemination-only experiments.
    pub fn probe_step(
        &mut self,
        step: u32,
        now: u64,
        proto: &ProtocolParams,
        nbrs: &[NodeId],
        seed: u64,
        out: &mut Outbox,
    ) {
        let msg = Message {
            id: MsgId::for_probe(self.id),
            kind: MsgKind::Probe,
            origin: self.id,
            block: None,
            ttl: proto.ttl_init,
            hops: 0,
            phase: proto.initial_phase(),
        };
        out.event(EventKind::ProbeSent { id: msg.id });
        let mut grng = self.gossip_rng(seed, step, 0);
        self.originate(msg, now, proto, nbrs, &mut grng, out);
    }

    /// Common origination path: the creator counts as having received its
    /// own message, registers the fail-safe watch when applicable, and then
    /// forwards with no excluded neighbor.
    fn originate(
        &mut self,
        msg: Message,
        now: u64,
        proto: &ProtocolParams,
        nbrs: &[NodeId],
        grng: &mut SimRng,
        out: &mut Outbox,
    ) {
        self.gossip.accept(msg.id);
        self.gossip.stem_watch(&msg, now, proto);
        for (to, fwd) in decide_forwards(proto, &msg, None, nbrs, grng) {
            out.send(to, fwd);
        }
    }

    /// Process one inbox arrival: fail-safe cancellation, duplicate
    /// suppression, the Sybil filter, chain insertion for block messages,
    /// fail-safe registration for stem relays, then protocol forwarding.
    pub fn handle_message(
        &mut self,
        msg: &Message,
        from: NodeId,
        now: u64,
        proto: &ProtocolParams,
        victim: NodeId,
        nbrs: &[NodeId],
        grng: &mut SimRng,
        out: &mut Outbox,
    ) {
        if proto.protocol == Protocol::DandelionPlusMinus && msg.phase == Phase::Fluff {
            // Observing the fluff copy means the message survived the stem.
            self.gossip.fluff_seen(msg.id);
        }
        let fresh = self.gossip.accept(msg.id);
        out.message_received(msg.id, from, fresh == Freshness::Fresh);
        if fresh == Freshness::Duplicate {
            return;
        }
        if sybil_relay_filter(&self.role, msg, victim) == FilterDecision::Drop {
            out.event(EventKind::SybilDrop { id: msg.id });
            return;
        }
        match msg.kind {
            MsgKind::Block => {
                let block = msg.block.expect("block messages carry their block");
                let (_, inserted) = self
                    .view
                    .insert_block(block)
                    .expect("relayed blocks are well-formed");
                for id in inserted {
                    out.event(EventKind::BlockAccepted { id });
                }
            }
            MsgKind::Probe => out.event(EventKind::ProbeAccepted { id: msg.id }),
        }
        if msg.phase == Phase::Stem && msg.hops < proto.stem_hops {
            // Pure stem relays watch for the fluff echo; the relay that
            // itself starts the fluff phase needs no recovery.
            self.gossip.stem_watch(msg, now, proto);
        }
        for (to, fwd) in decide_forwards(proto, msg, Some(from), nbrs, grng) {
            out.send(to, fwd);
        }
    }

    /// Fire due fail-safe watches and flood the recovered messages.
    pub fn failsafe_phase(
        &mut self,
        now: u64,
        proto: &ProtocolParams,
        nbrs: &[NodeId],
        grng: &mut SimRng,
        out: &mut Outbox,
    ) {
        for msg in self.gossip.failsafe_tick(now) {
            out.event(EventKind::FailsafeFired { id: msg.id });
            for (to, fwd) in decide_forwards(proto, &msg, None, nbrs, grng) {
                out.send(to, fwd);
            }
        }
    }

    fn gossip_rng(&self, seed: u64, step: u32, sub_step: u32) -> SimRng {
        SimRng::derive(
            seed,
            StreamPurpose::Gossip,
            &[self.id.0 as u64, step as u64, sub_step as u64],
        )
    }
}
