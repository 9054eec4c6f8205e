//! Seeded 2-D gradient noise with octave summation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Improved-Perlin lattice with a seeded permutation table.
pub struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    /// Noise at a point; roughly within [-1, 1], exactly 0 on lattice points.
    pub fn get(&self, x: f64, y: f64) -> f64 {
        let xf = x.floor();
        let yf = y.floor();
        let xi = (xf as i64 & 255) as usize;
        let yi = (yf as i64 & 255) as usize;
        let (dx, dy) = (x - xf, y - yf);
        let (u, v) = (fade(dx), fade(dy));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let x1 = lerp(grad(aa, dx, dy), grad(ba, dx - 1.0, dy), u);
        let x2 = lerp(grad(ab, dx, dy - 1.0), grad(bb, dx - 1.0, dy - 1.0), u);
        lerp(x1, x2, v)
    }

    /// Fractal sum: frequency doubles and amplitude halves per octave.
    pub fn fbm(&self, x: f64, y: f64, octaves: u32) -> f64 {
        let mut total = 0.0;
        let mut freq = 1.0;
        let mut amp = 1.0;
        for _ in 0..octaves {
            total += amp * self.get(x * freq, y * freq);
            freq *= 2.0;
            amp *= 0.5;
        }
        total
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn grad(hash: u8, x: f64, y: f64) -> f64 {
    match hash & 7 {
        0 => x + y,
        1 => -x + y,
        2 => x - y,
        3 => -x - y,
        4 => x,
        5 => -x,
        6 => y,
        _ => -y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_on_lattice_and_bounded() {
        let p = Perlin::new(7);
        assert_eq!(p.get(3.0, 5.0), 0.0);
        for i in 0..500 {
            let v = p.get(i as f64 * 0.137, i as f64 * 0.291);
            assert!(v.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn seeded() {
        let (a, b, c) = (Perlin::new(1), Perlin::new(1), Perlin::new(2));
        assert_eq!(a.fbm(1.3, 2.7, 4), b.fbm(1.3, 2.7, 4));
        assert_ne!(a.fbm(1.3, 2.7, 4), c.fbm(1.3, 2.7, 4));
    }
}
