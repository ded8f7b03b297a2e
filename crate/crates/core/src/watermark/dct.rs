//! Orthonormal 8x8 type-II DCT.
//!
//! The forward transform is `C = M B M^T` with the orthonormal basis
//! `M[k][n] = s_k cos(pi (2n+1) k / 16)`, `s_0 = sqrt(1/8)`,
//! `s_k = 1/2` otherwise; the inverse is `B = M^T C M`. Orthonormality
//! means a coefficient edit of magnitude `e` adds exactly `e^2` of pixel
//! energy to the block, which is what makes the embedding's distortion
//! accounting simple.

use crate::scalar::Real;

pub const BLOCK: usize = 8;

type Block<T> = [[T; BLOCK]; BLOCK];

/// Precomputed basis for one scalar type.
#[derive(Debug, Clone)]
pub struct Dct8<T> {
    m: Block<T>,
}

impl<T: Real> Dct8<T> {
    pub fn new() -> Self {
        let mut m = [[T::zero(); BLOCK]; BLOCK];
        for (k, row) in m.iter_mut().enumerate() {
            let scale = if k == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                0.5
            };
            for (n, v) in row.iter_mut().enumerate() {
                let angle = std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / 16.0;
                *v = T::of(scale * angle.cos());
            }
        }
        Dct8 { m }
    }

    pub fn forward(&self, block: &Block<T>) -> Block<T> {
        // tmp = M * block
        let mut tmp = [[T::zero(); BLOCK]; BLOCK];
        for u in 0..BLOCK {
            for x in 0..BLOCK {
                let mut acc = T::zero();
                for y in 0..BLOCK {
                    acc += self.m[u][y] * block[y][x];
                }
                tmp[u][x] = acc;
            }
        }
        // out = tmp * M^T
        let mut out = [[T::zero(); BLOCK]; BLOCK];
        for u in 0..BLOCK {
            for v in 0..BLOCK {
                let mut acc = T::zero();
                for x in 0..BLOCK {
                    acc += tmp[u][x] * self.m[v][x];
                }
                out[u][v] = acc;
            }
        }
        out
    }

    pub fn inverse(&self, coefs: &Block<T>) -> Block<T> {
        // tmp = M^T * coefs
        let mut tmp = [[T::zero(); BLOCK]; BLOCK];
        for y in 0..BLOCK {
            for v in 0..BLOCK {
                let mut acc = T::zero();
                for u in 0..BLOCK {
                    acc += self.m[u][y] * coefs[u][v];
                }
                tmp[y][v] = acc;
            }
        }
        // out = tmp * M
        let mut out = [[T::zero(); BLOCK]; BLOCK];
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                let mut acc = T::zero();
                for v in 0..BLOCK {
                    acc += tmp[y][v] * self.m[v][x];
                }
                out[y][x] = acc;
            }
        }
        out
    }

    /// Single coefficient `(u, v)` of the forward transform; cheaper than
    /// a full transform when only a pair is inspected.
    pub fn coefficient(&self, block: &Block<T>, u: usize, v: usize) -> T {
        let mut acc = T::zero();
        for y in 0..BLOCK {
            let mut row = T::zero();
            for x in 0..BLOCK {
                row += self.m[v][x] * block[y][x];
            }
            acc += self.m[u][y] * row;
        }
        acc
    }

    /// Pixel-domain basis function of coefficient `(u, v)`:
    /// `basis[y][x] = M[u][y] * M[v][x]`. Adding `e * basis` to a block
    /// adds exactly `e` to coefficient `(u, v)` and nothing else.
    pub fn basis(&self, u: usize, v: usize) -> Block<T> {
        let mut out = [[T::zero(); BLOCK]; BLOCK];
        for (y, row) in out.iter_mut().enumerate() {
            for (x, val) in row.iter_mut().enumerate() {
                *val = self.m[u][y] * self.m[v][x];
            }
        }
        out
    }
}

impl<T: Real> Default for Dct8<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn random_block(rng: &mut StreamRng) -> Block<f64> {
        let mut b = [[0.0; BLOCK]; BLOCK];
        for row in &mut b {
            for v in row.iter_mut() {
                *v = rng.unit_f64();
            }
        }
        b
    }

    #[test]
    fn inverse_undoes_forward() {
        let dct = Dct8::<f64>::new();
        let mut rng = StreamRng::new(1, "dct/roundtrip");
        for _ in 0..32 {
            let b = random_block(&mut rng);
            let back = dct.inverse(&dct.forward(&b));
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    assert!((b[y][x] - back[y][x]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transform_preserves_energy() {
        // Orthonormality: sum of squares is invariant.
        let dct = Dct8::<f64>::new();
        let mut rng = StreamRng::new(2, "dct/energy");
        let b = random_block(&mut rng);
        let c = dct.forward(&b);
        let eb: f64 = b.iter().flatten().map(|v| v * v).sum();
        let ec: f64 = c.iter().flatten().map(|v| v * v).sum();
        assert!((eb - ec).abs() < 1e-12);
    }

    #[test]
    fn dc_term_is_scaled_mean() {
        let dct = Dct8::<f64>::new();
        let b = [[0.5; BLOCK]; BLOCK];
        let c = dct.forward(&b);
        // DC of a constant block is 8 * value; every AC term vanishes.
        assert!((c[0][0] - 4.0).abs() < 1e-12);
        for (u, row) in c.iter().enumerate() {
            for (v, val) in row.iter().enumerate() {
                if (u, v) != (0, 0) {
                    assert!(val.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coefficient_matches_full_transform() {
        let dct = Dct8::<f64>::new();
        let mut rng = StreamRng::new(3, "dct/coef");
        let b = random_block(&mut rng);
        let full = dct.forward(&b);
        for u in 0..BLOCK {
            for v in 0..BLOCK {
                assert!((dct.coefficient(&b, u, v) - full[u][v]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_injects_a_single_coefficient() {
        let dct = Dct8::<f64>::new();
        let mut rng = StreamRng::new(4, "dct/basis");
        let mut b = random_block(&mut rng);
        let before = dct.forward(&b);
        let basis = dct.basis(3, 1);
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                b[y][x] += 0.25 * basis[y][x];
            }
        }
        let after = dct.forward(&b);
        for u in 0..BLOCK {
            for v in 0..BLOCK {
                let expected = if (u, v) == (3, 1) { 0.25 } else { 0.0 };
                assert!((after[u][v] - before[u][v] - expected).abs() < 1e-12);
            }
        }
    }
}
