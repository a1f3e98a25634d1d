use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// Generator family recorded alongside every seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngAlgorithm {
    /// ChaCha with 8 rounds: counter based, identical streams on every platform.
    ChaCha8,
}

impl RngAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            RngAlgorithm::ChaCha8 => "chacha8",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub algorithm: RngAlgorithm,
}

/// Seeded random stream. Independent sub-streams are derived with [`SeededRng::fork`].
#[derive(Clone, Debug)]
pub struct SeededRng {
    state: RngState,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            state: RngState { seed, algorithm: RngAlgorithm::ChaCha8 },
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A stream keyed by `(seed, stream)` that does not overlap the parent stream.
    pub fn fork(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.wrapping_add(1));
        Self { state: RngState { seed, algorithm: RngAlgorithm::ChaCha8 }, inner }
    }

    pub fn state(&self) -> RngState {
        self.state
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let d = Poisson::new(mean).expect("positive poisson mean");
        d.sample(&mut self.inner) as u64
    }

    /// Index drawn from an unnormalized categorical distribution.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
