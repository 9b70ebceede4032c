//! Deterministic random number generation.
//!
//! Everything that samples — corpus generation, encoder noise, latent draws,
//! nucleus sampling, batch shuffling — goes through [`Prng`], a xoshiro256++
//! stream seeded via splitmix64. No global state, no platform dependence:
//! the same seed produces the same bits everywhere, which is what the
//! reproducibility contracts (bit-identical corpora, checkpoints, reports)
//! rest on.

/// splitmix64 step, used for seeding and for hashing key parts together.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// xoshiro256++ generator with Box-Muller normal sampling.
#[derive(Debug, Clone)]
pub struct Prng {
    s: [u64; 4],
    /// Spare normal deviate from the last Box-Muller pair.
    cached_normal: Option<f64>,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Prng {
            s,
            cached_normal: None,
        }
    }

    /// Derives an independent stream from a seed and a key path, e.g.
    /// `(corpus_seed, [procedure_index, step_index])` for per-step encoder
    /// noise. Mixing goes through splitmix64 so nearby keys decorrelate.
    pub fn derive(seed: u64, key: &[u64]) -> Self {
        let mut sm = seed ^ 0x6a09e667f3bcc908;
        let mut acc = splitmix64(&mut sm);
        for &k in key {
            sm ^= k.wrapping_mul(0x9e3779b97f4a7c15);
            acc ^= splitmix64(&mut sm);
        }
        Prng::new(acc)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // 53 high bits -> exactly representable dyadic rational in [0,1).
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection sampling to avoid modulo bias.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0,1] so ln is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Samples an index from explicit weights (assumed non-negative, summing
    /// to something positive). Used by grammar walks and nucleus sampling.
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0);
        let mut x = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            x -= w;
            if x < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
