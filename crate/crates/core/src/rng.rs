//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, step)`: the ChaCha key comes from
//! the seed, the stream selects the ChaCha nonce, and the step fixes the word
//! position. Draws therefore do not depend on the order in which paths or
//! steps are generated, which keeps parallel runs bitwise reproducible.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream carrying the Gaussian increments of path `path`.
pub fn increment_stream(path: u64) -> u64 {
    2 * path
}

/// Stream carrying the draws of the initial law of path `path`.
pub fn initial_stream(path: u64) -> u64 {
    2 * path + 1
}

/// Random access Gaussian and uniform generator on one stream.
#[derive(Clone, Debug)]
pub struct CounterRng {
    rng: ChaCha8Rng,
    words_per_step: u128,
}

impl CounterRng {
    /// `values_per_step` is the number of standard normals (or uniforms)
    /// consumed by one step; it fixes the stride between steps.
    pub fn new(seed: u64, stream: u64, values_per_step: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        // each Box-Muller pair reads two u64, i.e. four 32-bit words
        let pairs = values_per_step.div_ceil(2).max(1) as u128;
        Self {
            rng,
            words_per_step: 4 * pairs,
        }
    }

    fn seek(&mut self, step: u64) {
        let target = step as u128 * self.words_per_step;
        if self.rng.get_word_pos() != target {
            self.rng.set_word_pos(target);
        }
    }

    /// Uniform on `(0, 1]`, never zero so logarithms stay finite.
    fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 1)`.
    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fills `out` with independent standard normals belonging to `step`.
    pub fn normals(&mut self, step: u64, out: &mut [f64]) {
        self.seek(step);
        for pair in out.chunks_mut(2) {
            let r = (-2.0 * self.open_unit().ln()).sqrt();
            let theta = std::f64::consts::TAU * self.unit();
            pair[0] = r * theta.cos();
            if pair.len() > 1 {
                pair[1] = r * theta.sin();
            }
        }
    }

    /// Fills `out` with independent uniforms on `[0, 1)` belonging to `step`.
    pub fn uniforms(&mut self, step: u64, out: &mut [f64]) {
        self.seek(step);
        for v in out.iter_mut() {
            *v = self.unit();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let mut a = CounterRng::new(7, 3, 3);
        let mut b = CounterRng::new(7, 3, 3);
        let mut seq = Vec::new();
        for step in 0..50 {
            let mut buf = [0.0; 3];
            a.normals(step, &mut buf);
            seq.push(buf);
        }
        for step in (0..50).rev() {
            let mut buf = [0.0; 3];
            b.normals(step, &mut buf);
            assert_eq!(buf, seq[step as usize]);
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = CounterRng::new(1, increment_stream(0), 1);
        let mut b = CounterRng::new(1, increment_stream(1), 1);
        let (mut x, mut y) = ([0.0], [0.0]);
        a.normals(0, &mut x);
        b.normals(0, &mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn normal_moments() {
        let mut g = CounterRng::new(11, 0, 2);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for step in 0..n / 2 {
            let mut buf = [0.0; 2];
            g.normals(step as u64, &mut buf);
            for v in buf {
                s1 += v;
                s2 += v * v;
            }
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
