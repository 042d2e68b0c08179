//! Seeded normal generator used for weight initialisation.
//!
//! The recipe is fixed so other implementations can reproduce weights bit for
//! bit:
//!
//! * SplitMix64 state update `state += 0x9E3779B97F4A7C15`, output mixed with
//!   the usual `(z ^ z>>30) * 0xBF58476D1CE4E5B9`, `(z ^ z>>27) * 0x94D049BB133111EB`,
//!   `z ^ z>>31`.
//! * Uniform in (0, 1]: `((x >> 11) + 1) * 2^-53`.
//! * One standard normal per two uniforms: `sqrt(-2 ln u1) * cos(2π u2)`,
//!   evaluated in f64, scaled by the std and rounded to f32.

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform sample in (0, 1].
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal sample (Box-Muller, cosine branch only).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_unit();
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fill `out` with `N(0, std^2)` samples rounded to f32.
    pub fn fill_normal(&mut self, out: &mut [f32], std: f64) {
        for v in out.iter_mut() {
            *v = (self.next_normal() * std) as f32;
        }
    }
}
