/// Counter-based deterministic generator. Each draw is a stateless mix of
/// (key, counter), so substreams for a class or iteration can be derived
/// from labels without sequencing coupling between callers.
#[derive(Debug, Clone)]
pub struct SeededRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix(key: u64, counter: u64) -> u64 {
    splitmix(splitmix(key ^ counter.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN))
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { key: splitmix(seed.wrapping_add(GOLDEN)), counter: 0, spare_normal: None }
    }

    /// Derive an independent substream keyed by a label and an index.
    /// The parent stream is not advanced.
    pub fn substream(&self, label: &str, index: u64) -> SeededRng {
        let mut k = self.key;
        for b in label.as_bytes() {
            k = splitmix(k ^ (*b as u64).wrapping_mul(GOLDEN));
        }
        SeededRng::new(splitmix(k ^ index.wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller, caching the paired draw.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        // u1 in (0, 1] so ln is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| self.next_normal() * std).collect()
    }

    /// Uniform integer in [0, bound) by rejection.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
