//! Counter-based seeded RNG. Identical seeds give identical draw sequences on
//! every platform, which is what the byte-identical rerun guarantee rests on.
//!
//! The generator is splitmix64 (a Weyl-sequence counter pushed through a
//! finalizer); normal draws use Box-Muller so the output never depends on a
//! platform library.

#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { state: seed }
    }

    /// A decorrelated child stream. Used to hand each sweep cell or worker
    /// its own stream without sharing state.
    pub fn derive(&self, tag: u64) -> RngStream {
        let mut child = RngStream::new(self.state ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        // burn one output so derive(0) differs from the parent
        child.next_u64();
        child
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // f64 multiply keeps the draw count at exactly one u64 per call
        let u = self.uniform();
        ((u * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box-Muller. Each call consumes exactly two
    /// uniforms; the sine branch is discarded to keep the stream stateless.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
