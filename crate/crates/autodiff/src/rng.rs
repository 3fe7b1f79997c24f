//! Deterministic random number generation.
//!
//! Two generators cover every source of randomness in the workspace:
//! a sequential SplitMix64 stream for initialization, shuffling and
//! synthetic data, and a stateless counter hash for dropout masks so a
//! mask depends only on its key, never on evaluation order.

/// SplitMix64: tiny, fast, and passes BigCrush for this use.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream for a labeled sub-task.
    pub fn fork(&self, label: u64) -> Self {
        Self {
            state: mix(self.state ^ mix(label)),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn range(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(i + 1);
            items.swap(i, j);
        }
    }
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless uniform draw in [0, 1) keyed by (seed, layer, step, index).
///
/// Dropout masks use this so that a given key always produces the same
/// mask regardless of thread count or op ordering.
pub fn counter_uniform(seed: u64, layer: u64, step: u64, index: u64) -> f64 {
    let h = mix(seed ^ mix(layer ^ mix(step ^ mix(index ^ 0x5851_f42d_4c95_7f2d))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
