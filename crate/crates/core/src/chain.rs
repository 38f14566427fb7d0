//! Block mining model and fork-tree maintenance.
//!
//! Proof-of-Work is abstracted to a per-step Bernoulli draw: a miner holding
//! hash-rate fraction `f` mines a block in a mining step with probability
//! `blocks_per_step * f`, so the network-wide expectation per step equals
//! `blocks_per_step` (0.5 by default, i.e. one block roughly every two
//! steps). Several miners can succeed in the same step, each building on its
//! own view of the best tip; that is how forks arise.
//!
//! `BlockTree` serves both as a per-node chain view and as the omniscient
//! end-of-run tree used for metric adjudication. Fork choice is longest
//! chain; height ties prefer the branch carrying the most blocks mined by
//! the view's owner, then the earliest-received tip, then the smallest
//! block id.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::overlay::NodeId;
use crate::rng::SimRng;

/// Unique block identifier, encoding `(mining step, miner id)` so that runs
/// are reproducible without a content hash. Genesis is id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u64);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    /// Id of the block mined by `miner` at `step`. Distinct from genesis for
    /// every `(step, miner)` pair.
    pub fn for_mint(step: u32, miner: NodeId) -> BlockId {
        BlockId(((step as u64 + 1) << 32) | miner.0 as u64)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A mined block. The parent pointer stands in for the hash link; genesis
/// has no parent and no miner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub miner: Option<NodeId>,
    pub height: u32,
    pub mined_step: u32,
}

impl Block {
    pub fn genesis() -> Block {
        Block {
            id: BlockId::GENESIS,
            parent: None,
            miner: None,
            height: 0,
            mined_step: 0,
        }
    }
}

/// Mining-process parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningParams {
    /// Expected blocks mined network-wide per mining step.
    pub blocks_per_step: f64,
    /// Number of mining steps in a run.
    pub total_steps: u32,
    /// Fraction of nodes that mine.
    pub miner_fraction: f64,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            blocks_per_step: 0.5,
            total_steps: 2000,
            miner_fraction: 0.1,
        }
    }
}

/// One mining draw: succeed with probability `blocks_per_step * hashrate`.
///
/// The caller must have validated `blocks_per_step * hashrate <= 1`.
#[inline]
pub fn mine_tick(hashrate: f64, params: &MiningParams, rng: &mut SimRng) -> bool {
    debug_assert!((0.0..=1.0).contains(&hashrate));
    debug_assert!(params.blocks_per_step * hashrate <= 1.0 + 1e-12);
    rng.coin(params.blocks_per_step * hashrate)
}

/// Outcome of inserting a block into a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The block extends the tip this view currently considers best.
    ExtendedBest,
    /// The block attaches elsewhere, creating or deepening a fork.
    CreatedOrDeepenedFork,
    /// The block id is already present; the tree is unchanged.
    Duplicate,
    /// The parent is unknown; the block is buffered and will be inserted
    /// when the parent arrives.
    Orphan,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("block {id} height {height} inconsistent with parent height {parent_height}")]
    InconsistentHeight {
        id: BlockId,
        height: u32,
        parent_height: u32,
    },
    #[error("tree is empty")]
    Empty,
}

#[derive(Debug, Clone)]
struct TreeNode {
    block: Block,
    /// Receipt sequence number in this view (insertion order).
    receipt: u64,
    /// Number of blocks mined by the view owner on the root-to-here path.
    own_on_path: u32,
}

/// A block tree: one genesis root, parent/child indexes, orphan buffer and
/// per-view receipt ordering.
#[derive(Debug, Clone)]
pub struct BlockTree {
    nodes: HashMap<BlockId, TreeNode>,
    children: HashMap<BlockId, Vec<BlockId>>,
    /// Blocks without children, maintained incrementally.
    tips: Vec<BlockId>,
    /// Buffered blocks keyed by their missing parent.
    orphans: HashMap<BlockId, Vec<Block>>,
    owner: Option<NodeId>,
    next_receipt: u64,
}

impl BlockTree {
    /// New tree holding only genesis. `owner` is the node whose mined blocks
    /// break height ties in `select_tip`; pass `None` for the global
    /// adjudication tree.
    pub fn new(owner: Option<NodeId>) -> BlockTree {
        let mut tree = BlockTree {
            nodes: HashMap::new(),
            children: HashMap::new(),
            tips: vec![BlockId::GENESIS],
            orphans: HashMap::new(),
            owner,
            next_receipt: 1,
        };
        tree.nodes.insert(
            BlockId::GENESIS,
            TreeNode {
                block: Block::genesis(),
                receipt: 0,
                own_on_path: 0,
            },
        );
        tree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.nodes.get(&id).map(|n| &n.block)
    }

    pub fn children(&self, id: BlockId) -> &[BlockId] {
        self.children.get(&id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Insert a block, assigning the next receipt sequence number. Buffered
    /// orphans waiting on this block are inserted recursively; the returned
    /// list holds every id that actually entered the tree, in receipt order.
    pub fn insert_block(&mut self, b: Block) -> Result<(InsertOutcome, Vec<BlockId>), ChainError> {
        let receipt = self.next_receipt;
        self.insert_with_receipt(b, receipt)
    }

    /// Insert with an explicit receipt number, used when assembling the
    /// global tree from a trace. Orphan unlocks reuse the same number.
    pub fn insert_with_receipt(
        &mut self,
        b: Block,
        receipt: u64,
    ) -> Result<(InsertOutcome, Vec<BlockId>), ChainError> {
        if self.nodes.contains_key(&b.id) {
            return Ok((InsertOutcome::Duplicate, Vec::new()));
        }
        let parent = match b.parent {
            Some(p) => p,
            // A parentless non-genesis block can never attach.
            None => return Ok((InsertOutcome::Orphan, Vec::new())),
        };
        let parent_node = match self.nodes.get(&parent) {
            Some(n) => n,
            None => {
                self.orphans.entry(parent).or_default().push(b);
                return Ok((InsertOutcome::Orphan, Vec::new()));
            }
        };
        if b.height != parent_node.block.height + 1 {
            return Err(ChainError::InconsistentHeight {
                id: b.id,
                height: b.height,
                parent_height: parent_node.block.height,
            });
        }

        let best_before = self.select_tip();
        let mut inserted = Vec::new();
        self.attach(b, receipt, &mut inserted)?;
        let outcome = if parent == best_before {
            InsertOutcome::ExtendedBest
        } else {
            InsertOutcome::CreatedOrDeepenedFork
        };
        Ok((outcome, inserted))
    }

    fn attach(&mut self, b: Block, receipt: u64, inserted: &mut Vec<BlockId>) -> Result<(), ChainError> {
        let parent = b.parent.expect("attach requires a parent");
        let own_parent = self.nodes[&parent].own_on_path;
        let own = own_parent + u32::from(self.owner.is_some() && b.miner == self.owner);
        self.nodes.insert(
            b.id,
            TreeNode {
                block: b,
                receipt,
                own_on_path: own,
            },
        );
        // Sentinel receipts (never-received blocks in the global tree) must
        // not wrap the counter.
        self.next_receipt = self.next_receipt.max(receipt.saturating_add(1));
        self.children.entry(parent).or_default().push(b.id);
        if let Some(pos) = self.tips.iter().position(|&t| t == parent) {
            self.tips.swap_remove(pos);
        }
        self.tips.push(b.id);
        inserted.push(b.id);

        // Unlock orphans in their buffered (receipt) order.
        if let Some(waiting) = self.orphans.remove(&b.id) {
            for child in waiting {
                if child.height != b.height + 1 {
                    return Err(ChainError::InconsistentHeight {
                        id: child.id,
                        height: child.height,
                        parent_height: b.height,
                    });
                }
                let r = self.next_receipt;
                self.attach(child, r, inserted)?;
            }
        }
        Ok(())
    }

    /// Number of blocks buffered as orphans.
    pub fn orphan_count(&self) -> usize {
        self.orphans.values().map(|v| v.len()).sum()
    }

    /// The tip this view mines on: among maximum-height tips, the one whose
    /// root-to-tip path holds the most owner-mined blocks; ties broken by
    /// earliest receipt, then smallest id.
    pub fn select_tip(&self) -> BlockId {
        use std::cmp::Reverse;
        self.tips
            .iter()
            .max_by_key(|&&tip| {
                let node = &self.nodes[&tip];
                (
                    node.block.height,
                    node.own_on_path,
                    Reverse(node.receipt),
                    Reverse(tip),
                )
            })
            .copied()
            .expect("tree always holds genesis")
    }

    pub fn height_of(&self, id: BlockId) -> Option<u32> {
        self.nodes.get(&id).map(|n| n.block.height)
    }

    pub fn best_height(&self) -> u32 {
        self.tips
            .iter()
            .map(|t| self.nodes[t].block.height)
            .max()
            .unwrap_or(0)
    }

    /// Root-to-tip path of maximum height; height ties broken by earliest
    /// receipt of the tip, then smallest id. Includes genesis.
    pub fn main_chain(&self) -> Vec<BlockId> {
        use std::cmp::Reverse;
        let tip = self
            .tips
            .iter()
            .max_by_key(|&&tip| {
                let node = &self.nodes[&tip];
                (node.block.height, Reverse(node.receipt), Reverse(tip))
            })
            .copied()
            .expect("tree always holds genesis");
        let mut path = Vec::new();
        let mut cur = Some(tip);
        while let Some(id) = cur {
            path.push(id);
            cur = self.nodes[&id].block.parent;
        }
        path.reverse();
        path
    }

    /// Text dump: one `block_id parent_id miner height mined_step` line per
    /// block, in receipt order. Genesis prints sentinel `-` fields.
    pub fn dump<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut rows: Vec<&TreeNode> = self.nodes.values().collect();
        rows.sort_unstable_by_key(|n| (n.receipt, n.block.id));
        for n in rows {
            let parent = n
                .block
                .parent
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".to_string());
            let miner = n
                .block
                .miner
                .map(|m| m.to_string())
                .unwrap_or_else(|| "-".to_string());
            writeln!(
                w,
                "{} {} {} {} {}",
                n.block.id, parent, miner, n.block.height, n.block.mined_step
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamPurpose;

    fn block(id: u64, parent: BlockId, miner: u32, height: u32) -> Block {
        Block {
            id: BlockId(id),
            parent: Some(parent),
            miner: Some(NodeId(miner)),
            height,
            mined_step: height,
        }
    }

    #[test]
    fn mine_tick_degenerate_rates() {
        let params = MiningParams {
            blocks_per_step: 0.5,
            ..MiningParams::default()
        };
        let mut rng = SimRng::derive(1, StreamPurpose::Mining, &[0]);
        for _ in 0..100 {
            assert!(!mine_tick(0.0, &params, &mut rng));
        }
        let forced = MiningParams {
            blocks_per_step: 1.0,
            ..params
        };
        for _ in 0..100 {
            assert!(mine_tick(1.0, &forced, &mut rng));
        }
    }

    #[test]
    fn mine_tick_full_hashrate_rate_is_half() {
        let params = MiningParams::default();
        let mut rng = SimRng::derive(2, StreamPurpose::Mining, &[0]);
        let n = 100_000;
        let mined = (0..n).filter(|_| mine_tick(1.0, &params, &mut rng)).count();
        let rate = mined as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.006, "rate {rate}");
    }

    #[test]
    fn mine_tick_fractional_hashrate_monte_carlo() {
        // Oracle: Bernoulli mean = blocks_per_step * hashrate = 0.1.
        let params = MiningParams::default();
        let mut rng = SimRng::derive(3, StreamPurpose::Mining, &[1]);
        let n = 100_000;
        let mined = (0..n).filter(|_| mine_tick(0.2, &params, &mut rng)).count();
        let rate = mined as f64 / n as f64;
        assert!((rate - 0.100).abs() < 0.003, "rate {rate}");
    }

    #[test]
    fn insert_extends_best_tip() {
        let mut t = BlockTree::new(Some(NodeId(0)));
        let (outcome, ids) = t.insert_block(block(1, BlockId::GENESIS, 0, 1)).unwrap();
        assert_eq!(outcome, InsertOutcome::ExtendedBest);
        assert_eq!(ids, vec![BlockId(1)]);
        assert_eq!(t.select_tip(), BlockId(1));
    }

    #[test]
    fn insert_second_child_creates_fork() {
        let mut t = BlockTree::new(Some(NodeId(0)));
        t.insert_block(block(1, BlockId::GENESIS, 0, 1)).unwrap();
        t.insert_block(block(2, BlockId(1), 0, 2)).unwrap();
        // Sibling of block 2 attaches to non-tip block 1.
        let (outcome, _) = t.insert_block(block(3, BlockId(1), 1, 2)).unwrap();
        assert_eq!(outcome, InsertOutcome::CreatedOrDeepenedFork);
        assert_eq!(t.children(BlockId(1)), &[BlockId(2), BlockId(3)]);
    }

    #[test]
    fn insert_duplicate_leaves_tree_unchanged() {
        let mut t = BlockTree::new(None);
        t.insert_block(block(1, BlockId::GENESIS, 0, 1)).unwrap();
        let before = t.len();
        let (outcome, ids) = t.insert_block(block(1, BlockId::GENESIS, 0, 1)).unwrap();
        assert_eq!(outcome, InsertOutcome::Duplicate);
        assert!(ids.is_empty());
        assert_eq!(t.len(), before);
    }

    #[test]
    fn orphan_buffered_until_parent_arrives() {
        let mut t = BlockTree::new(None);
        let (outcome, _) = t.insert_block(block(2, BlockId(1), 0, 2)).unwrap();
        assert_eq!(outcome, InsertOutcome::Orphan);
        assert_eq!(t.orphan_count(), 1);
        assert!(!t.contains(BlockId(2)));

        let (_, ids) = t.insert_block(block(1, BlockId::GENESIS, 0, 1)).unwrap();
        assert_eq!(ids, vec![BlockId(1), BlockId(2)]);
        assert_eq!(t.orphan_count(), 0);
        assert_eq!(t.best_height(), 2);
    }

    #[test]
    fn malformed_height_rejected() {
        let mut t = BlockTree::new(None);
        let err = t.insert_block(block(1, BlockId::GENESIS, 0, 5)).unwrap_err();
        assert_eq!(
            err,
            ChainError::InconsistentHeight {
                id: BlockId(1),
                height: 5,
                parent_height: 0
            }
        );
    }

    #[test]
    fn select_tip_single_chain() {
        let mut t = BlockTree::new(Some(NodeId(9)));
        let mut parent = BlockId::GENESIS;
        for h in 1..=5 {
            let b = block(h as u64, parent, 0, h);
            t.insert_block(b).unwrap();
            parent = b.id;
        }
        assert_eq!(t.select_tip(), parent);
        assert_eq!(t.best_height(), 5);
    }

    #[test]
    fn select_tip_prefers_own_blocks_on_tied_heights() {
        // Two height-3 branches; branch A holds 2 blocks mined by the owner.
        let me = NodeId(7);
        let mut t = BlockTree::new(Some(me));
        t.insert_block(block(10, BlockId::GENESIS, 7, 1)).unwrap();
        t.insert_block(block(11, BlockId(10), 7, 2)).unwrap();
        t.insert_block(block(12, BlockId(11), 3, 3)).unwrap();
        t.insert_block(block(20, BlockId::GENESIS, 1, 1)).unwrap();
        t.insert_block(block(21, BlockId(20), 2, 2)).unwrap();
        t.insert_block(block(22, BlockId(21), 3, 3)).unwrap();
        assert_eq!(t.select_tip(), BlockId(12));
    }

    #[test]
    fn select_tip_receipt_breaks_twin_forks() {
        // Equal own-mined counts (zero); branch received first wins.
        let mut t = BlockTree::new(Some(NodeId(0)));
        t.insert_block(block(20, BlockId::GENESIS, 1, 1)).unwrap();
        t.insert_block(block(21, BlockId(20), 2, 2)).unwrap();
        t.insert_block(block(22, BlockId(21), 3, 3)).unwrap();
        t.insert_block(block(10, BlockId::GENESIS, 4, 1)).unwrap();
        t.insert_block(block(11, BlockId(10), 5, 2)).unwrap();
        t.insert_block(block(12, BlockId(11), 6, 3)).unwrap();
        // Branch rooted at 20 was received first even though 12 < 22.
        assert_eq!(t.select_tip(), BlockId(22));
    }

    #[test]
    fn main_chain_genesis_only() {
        let t = BlockTree::new(None);
        assert_eq!(t.main_chain(), vec![BlockId::GENESIS]);
    }

    #[test]
    fn main_chain_strict_height_dominance() {
        let mut t = BlockTree::new(None);
        let mut parent = BlockId::GENESIS;
        for h in 1..=10u32 {
            let b = block(h as u64, parent, 0, h);
            t.insert_block(b).unwrap();
            parent = b.id;
        }
        // 3-block side fork off genesis.
        t.insert_block(block(100, BlockId::GENESIS, 1, 1)).unwrap();
        t.insert_block(block(101, BlockId(100), 1, 2)).unwrap();
        t.insert_block(block(102, BlockId(101), 1, 3)).unwrap();
        let chain = t.main_chain();
        assert_eq!(chain.len(), 11); // genesis + 10
        assert_eq!(*chain.last().unwrap(), BlockId(10));
    }

    #[test]
    fn main_chain_balanced_fork_earliest_receipt_wins() {
        let mut t = BlockTree::new(None);
        t.insert_block(block(50, BlockId::GENESIS, 1, 1)).unwrap();
        t.insert_block(block(40, BlockId::GENESIS, 2, 1)).unwrap();
        let chain = t.main_chain();
        // Block 50 was received first; the larger id does not matter.
        assert_eq!(chain, vec![BlockId::GENESIS, BlockId(50)]);
    }

    #[test]
    fn dump_lists_blocks_in_receipt_order() {
        let mut t = BlockTree::new(None);
        t.insert_block(block(1, BlockId::GENESIS, 4, 1)).unwrap();
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "0 - - 0 0\n1 0 4 1 1\n");
    }
}
