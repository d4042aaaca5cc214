//! Sobol low-discrepancy sequence with random access by index.
//!
//! Point `i` is the XOR of the direction numbers selected by the bits of the
//! Gray code `i ^ (i >> 1)`, which reproduces the order of the usual
//! sequential Gray-code construction. An optional digital shift (XOR with a
//! seeded random word per dimension) randomizes the set while keeping its
//! low-discrepancy structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sobol_table::{MAX_DEG, MAX_DIMS, MINIT, POLY};

const BITS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SobolError {
    #[error("Sobol dimension {0} not supported (1..={MAX_DIMS})")]
    Dimension(usize),
}

#[derive(Clone, Debug)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl Sobol {
    /// Unscrambled sequence in `dims` dimensions.
    pub fn new(dims: usize) -> Result<Self, SobolError> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(SobolError::Dimension(dims));
        }
        Ok(Sobol {
            directions: (0..dims).map(directions).collect(),
            shift: vec![0; dims],
        })
    }

    /// Sequence with a digital shift drawn from `seed`.
    pub fn shifted(dims: usize, seed: u64) -> Result<Self, SobolError> {
        let mut s = Self::new(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut s.shift {
            *w = rng.random();
        }
        Ok(s)
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// The `index`-th point, each coordinate in `[0, 1)`.
    pub fn point(&self, index: u32) -> Vec<f64> {
        let mut out = vec![0.0; self.dims()];
        self.fill(index, &mut out);
        out
    }

    pub fn fill(&self, index: u32, out: &mut [f64]) {
        let gray = index ^ (index >> 1);
        let scale = 1.0 / (1u64 << BITS) as f64;
        for (d, slot) in out.iter_mut().enumerate() {
            let v = &self.directions[d];
            let mut x = self.shift[d];
            let mut g = gray;
            let mut k = 0;
            while g != 0 {
                if g & 1 == 1 {
                    x ^= v[k];
                }
                g >>= 1;
                k += 1;
            }
            *slot = x as f64 * scale;
        }
    }
}

fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    let poly = POLY[dim];
    let deg = (u32::BITS - poly.leading_zeros() - 1) as usize;
    if deg == 0 {
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    debug_assert!(deg <= MAX_DEG);
    for k in 0..deg.min(BITS) {
        v[k] = MINIT[dim][k] << (BITS - 1 - k);
    }
    for k in deg..BITS {
        let mut x = v[k - deg] ^ (v[k - deg] >> deg);
        for i in 1..deg {
            if (poly >> (deg - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMS: [usize; 8] = [0, 1, 2, 9, 40, 63, 100, 127];

    // Reference values from an independent Joe–Kuo implementation
    // (unscrambled, Gray-code order).
    const REFERENCE: [(u32, [f64; 8]); 4] = [
        (3, [0.25, 0.75, 0.75, 0.25, 0.75, 0.25, 0.75, 0.75]),
        (
            77,
            [
                0.8359375, 0.8359375, 0.0078125, 0.4296875, 0.8203125, 0.8828125, 0.8984375,
                0.4140625,
            ],
        ),
        (
            500,
            [
                0.439453125,
                0.064453125,
                0.345703125,
                0.138671875,
                0.806640625,
                0.439453125,
                0.599609375,
                0.322265625,
            ],
        ),
        (
            1023,
            [
                0.0009765625,
                0.7529296875,
                0.6123046875,
                0.8505859375,
                0.6318359375,
                0.0400390625,
                0.2373046875,
                0.7001953125,
            ],
        ),
    ];

    #[test]
    fn matches_reference_points() {
        let s = Sobol::new(128).unwrap();
        for (idx, expected) in REFERENCE {
            let p = s.point(idx);
            for (d, e) in DIMS.iter().zip(expected) {
                assert_eq!(p[*d], e, "index {idx} dim {d}");
            }
        }
    }

    #[test]
    fn first_points() {
        let s = Sobol::new(5).unwrap();
        assert_eq!(s.point(0), vec![0.0; 5]);
        assert_eq!(s.point(1), vec![0.5; 5]);
        assert_eq!(s.point(2), vec![0.75, 0.25, 0.25, 0.25, 0.75]);
        assert_eq!(s.point(4), vec![0.375, 0.375, 0.625, 0.875, 0.375]);
    }

    #[test]
    fn first_dimension_is_stratified() {
        // any 2^m consecutive-from-zero points hit each dyadic cell once
        let s = Sobol::new(3).unwrap();
        let m = 6;
        let mut seen = vec![false; 1 << m];
        for i in 0..(1u32 << m) {
            for d in 0..3 {
                let cell = (s.point(i)[d] * (1 << m) as f64) as usize;
                if d == 0 {
                    assert!(!seen[cell]);
                    seen[cell] = true;
                }
            }
        }
    }

    #[test]
    fn shift_is_deterministic_and_in_range() {
        let a = Sobol::shifted(7, 42).unwrap();
        let b = Sobol::shifted(7, 42).unwrap();
        let c = Sobol::shifted(7, 43).unwrap();
        assert_eq!(a.point(11), b.point(11));
        assert_ne!(a.point(11), c.point(11));
        assert!(a.point(5).iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn dimension_limits() {
        assert_eq!(Sobol::new(0).unwrap_err(), SobolError::Dimension(0));
        assert!(Sobol::new(129).is_err());
    }
}
