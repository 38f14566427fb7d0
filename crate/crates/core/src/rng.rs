//! Deterministic counter-based random streams.
//!
//! Every stream is derived from the global seed plus a derivation tuple
//! (purpose tag, agent id, step, sub-step). Streams with equal tuples yield
//! identical sequences; streams with different tuples are independent. This
//! keeps results independent of worker count and scheduling: no agent ever
//! draws from a stream another agent touches.
//!
//! The generator is splitmix64: the state advances by a fixed increment and
//! the output is a bijective finalizer of the state, i.e. a pure counter
//! construction. Not cryptographic; never use for secrets.

/// Purpose tags separating the random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Graph construction (one stream per generation attempt).
    Topology,
    /// Role / hash-rate / sybil-set assignment.
    Assign,
    /// Per-miner mining draws.
    Mining,
    /// Per-agent message forwarding decisions.
    Gossip,
    /// Per-run seeds inside a parameter sweep.
    Sweep,
    /// Victim rotation across sweep repetitions.
    Victim,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Topology => 1,
            StreamPurpose::Assign => 2,
            StreamPurpose::Mining => 3,
            StreamPurpose::Gossip => 4,
            StreamPurpose::Sweep => 5,
            StreamPurpose::Victim => 6,
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer; a strong 64-bit mixing bijection.
#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream with a single 64-bit counter state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    /// Derive a stream from the global seed and a derivation tuple.
    ///
    /// Each element of `parts` is mixed into the state through the
    /// finalizer, so nearby tuples (consecutive agent ids, steps) still
    /// produce unrelated streams.
    pub fn derive(seed: u64, purpose: StreamPurpose, parts: &[u64]) -> Self {
        let mut state = mix64(seed ^ mix64(purpose.tag()));
        for &p in parts {
            state = mix64(state.wrapping_add(GOLDEN_GAMMA) ^ mix64(p));
        }
        SimRng { state }
    }

    /// Next 64-bit value.
    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Coin with success probability `p` (clamped to [0, 1]).
    #[inline(always)]
    pub fn coin(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in [0, n). `n` must be nonzero.
    ///
    /// Modulo reduction; the bias is below 2^-40 for every n used here.
    #[inline(always)]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
