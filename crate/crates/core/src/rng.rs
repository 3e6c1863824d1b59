//! Counter-based random streams.
//!
//! Every random quantity in a run is a pure function of the master seed and a
//! small tuple of counters (replica id, purpose tag, time, site). Nothing is
//! drawn from a shared sequential stream, so results do not depend on the
//! number of workers or on the order in which sites are visited.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The SplitMix64 finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline(always)]
pub fn point_extend(state: u64, coord: i64) -> u64 {
    mix64(state.wrapping_add((coord as u64).wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

/// A node in the seed-derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

/// Purpose tags keep streams for different roles disjoint.
pub mod tag {
    pub const ENVIRONMENT: u64 = 1;
    pub const SPINE_PATH: u64 = 2;
    pub const SPINE_TILT: u64 = 3;
    pub const PLANE_ENVIRONMENT: u64 = 4;
    pub const AUX: u64 = 5;
    pub const SPINE_BACKGROUND: u64 = 6;
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        StreamKey(mix64(master_seed ^ GOLDEN))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn child(self, tag: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(tag.wrapping_add(GOLDEN))))
    }

    /// Key for replica `id` under this master key.
    pub fn replica(self, id: u64) -> Self {
        self.child(0x5245_504c_0000_0000 ^ id)
    }

    /// Hash of a space-time point `(time, site)` under this key.
    #[inline(always)]
    pub fn point(self, time: u32, site: &[i64]) -> u64 {
        let (last, prefix) = site.split_last().expect("site has at least one coordinate");
        point_extend(self.point_prefix(time, prefix), *last)
    }

    /// Partial hash of `(time, prefix)`; [`point_extend`] with the last
    /// coordinate completes it to [`StreamKey::point`].
    #[inline(always)]
    pub fn point_prefix(self, time: u32, prefix: &[i64]) -> u64 {
        let mut h = mix64(self.0 ^ (time as u64).wrapping_mul(GOLDEN));
        for &c in prefix {
            h = point_extend(h, c);
        }
        h
    }

    pub fn rng(self) -> SplitMix64 {
        SplitMix64::new(self.0)
    }
}

/// Small, fast generator; one is created per space-time point.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }
}

impl RngCore for SplitMix64 {
    #[inline(always)]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline(always)]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
