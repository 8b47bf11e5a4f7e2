//! Counter-based seeded random numbers.
//!
//! Every source of randomness in the crate (synthetic clips, frozen feature
//! banks, model initialization, RANSAC sampling) derives from a `u64` seed
//! through this module, so results are reproducible across platforms and
//! independent of evaluation order. The core primitive is SplitMix64, which
//! maps a counter to a well-mixed 64-bit word.

/// SplitMix64 finalizer: maps `x` to a well-mixed 64-bit value.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream key from a seed and a stream label.
///
/// Stream labels keep unrelated consumers (e.g. per-frame flicker vs.
/// grating phases) decorrelated even when they share the config seed.
pub fn derive_key(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// A stateless counter-keyed generator: `value(i)` is a pure function of
/// `(key, i)`.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: derive_key(seed, stream),
        }
    }

    pub fn value(&self, counter: u64) -> u64 {
        splitmix64(self.key.wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    /// Uniform in `[0, 1)`.
    pub fn unit_f64(&self, counter: u64) -> f64 {
        // 53 mantissa bits.
        (self.value(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&self, counter: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64(counter)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn index(&self, counter: u64, n: usize) -> usize {
        (self.value(counter) % n as u64) as usize
    }
}

/// A sequential stream over a [`CounterRng`], for call sites that just want
/// "the next value".
#[derive(Debug, Clone)]
pub struct SeededStream {
    rng: CounterRng,
    counter: u64,
}

impl SeededStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            rng: CounterRng::new(seed, stream),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.rng.value(self.counter);
        self.counter += 1;
        v
    }

    pub fn next_unit_f64(&mut self) -> f64 {
        let v = self.rng.unit_f64(self.counter);
        self.counter += 1;
        v
    }

    pub fn next_range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit_f64()
    }

    pub fn next_index(&mut self, n: usize) -> usize {
        let v = self.rng.index(self.counter, n);
        self.counter += 1;
        v
    }
}
