//! Sobol' points in Gray-code order with an optional random digital shift.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::sobol_table::{MAX_DEGREE, MAX_DIM, M_INIT, POLY};
use super::{norm_inv_fill, Draws, PointSource};
use crate::error::{Result, SisError};

const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

/// Largest dimension supported by the bundled direction numbers.
pub const SOBOL_MAX_DIM: usize = MAX_DIM;

/// A digitally shifted Sobol' sequence.
///
/// Points are produced in Gray-code order starting from the zero point. The shift
/// is XOR-ed onto the 32-bit fixed-point representation of every coordinate.
#[derive(Clone, Debug)]
pub struct SobolSource {
    dim: usize,
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    // Index of the next point to emit.
    index: u64,
    cursor: usize,
}

impl SobolSource {
    /// Unshifted sequence.
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_shift(dim, vec![0; dim])
    }

    /// Sequence with a digital shift drawn from `seed`.
    pub fn shifted(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.next_u32()).collect();
        Self::with_shift(dim, shift)
    }

    pub fn with_shift(dim: usize, shift: Vec<u32>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(SisError::invalid(format!(
                "sobol dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if shift.len() != dim {
            return Err(SisError::invalid("shift length must equal the dimension"));
        }
        let directions = (0..dim).map(direction_numbers).collect();
        Ok(Self {
            dim,
            directions,
            shift,
            state: vec![0; dim],
            index: 0,
            cursor: dim,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> &[u32] {
        &self.shift
    }

    /// Advances to the next point, returning its shifted fixed-point coordinates.
    fn advance(&mut self) {
        if self.index > 0 {
            let c = self.index.trailing_zeros() as usize;
            assert!(c < BITS, "sobol sequence exhausted");
            for (x, v) in self.state.iter_mut().zip(&self.directions) {
                *x ^= v[c];
            }
        }
        self.index += 1;
        self.cursor = 0;
    }

    /// Next point as values `(x ⊕ Δ) / 2³²` in [0,1).
    pub fn next_point(&mut self) -> Vec<f64> {
        self.advance();
        self.state
            .iter()
            .zip(&self.shift)
            .map(|(&x, &s)| (x ^ s) as f64 * SCALE)
            .collect()
    }

    #[inline]
    fn next_bits(&mut self) -> u32 {
        assert!(
            self.cursor < self.dim,
            "sobol point of dimension {} exhausted",
            self.dim
        );
        let bits = self.state[self.cursor] ^ self.shift[self.cursor];
        self.cursor += 1;
        bits
    }
}

impl Draws for SobolSource {
    /// Centre of the 2⁻³² cell holding the shifted coordinate, so the value is in (0,1).
    #[inline]
    fn uniform(&mut self) -> f64 {
        (self.next_bits() as f64 + 0.5) * SCALE
    }

    fn fill_normals(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.uniform();
        }
        norm_inv_fill(out);
    }
}

impl PointSource for SobolSource {
    fn start_point(&mut self) {
        self.advance();
    }
}

fn direction_numbers(j: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    let poly = POLY[j] as u32;
    let degree = (32 - poly.leading_zeros() - 1) as usize;
    if degree == 0 {
        // First coordinate: van der Corput.
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    debug_assert!(degree <= MAX_DEGREE);
    let m = &M_INIT[j];
    for k in 0..degree.min(BITS) {
        v[k] = (m[k] as u32) << (BITS - 1 - k);
    }
    for k in degree..BITS {
        let mut x = v[k - degree] ^ (v[k - degree] >> degree);
        for i in 1..degree {
            // Interior coefficient of x^(degree - i).
            if (poly >> (degree - i)) & 1 == 1 {
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

    #[test]
    fn first_dimension_is_van_der_corput_in_gray_order() {
        let mut s = SobolSource::new(1).unwrap();
        let pts: Vec<f64> = (0..4).map(|_| s.next_point()[0]).collect();
        assert_eq!(pts, vec![0.0, 0.5, 0.75, 0.25]);
    }

    #[test]
    fn second_dimension_matches_reference() {
        // Dimension 2 of the Joe-Kuo set in Gray-code order.
        let mut s = SobolSource::new(2).unwrap();
        let pts: Vec<f64> = (0..4).map(|_| s.next_point()[1]).collect();
        assert_eq!(pts, vec![0.0, 0.5, 0.25, 0.75]);
    }

    #[test]
    fn each_dyadic_block_is_a_net() {
        // The first 2^k points hit every interval of length 2^-k exactly once per coordinate.
        let k = 8;
        let mut s = SobolSource::new(40).unwrap();
        let pts: Vec<Vec<f64>> = (0..1 << k).map(|_| s.next_point()).collect();
        for j in 0..40 {
            let mut hits = vec![0; 1 << k];
            for p in &pts {
                hits[(p[j] * (1 << k) as f64) as usize] += 1;
            }
            assert!(hits.iter().all(|&h| h == 1), "coordinate {j}");
        }
    }

    #[test]
    fn shift_is_xor_on_fixed_point() {
        let shift: Vec<u32> = vec![0x9e37_79b9, 0x1234_5678];
        let mut plain = SobolSource::new(2).unwrap();
        let mut shifted = SobolSource::with_shift(2, shift.clone()).unwrap();
        for _ in 0..64 {
            let p = plain.next_point();
            let q = shifted.next_point();
            for j in 0..2 {
                let bits = (p[j] * 4_294_967_296.0) as u32;
                assert_eq!(q[j], (bits ^ shift[j]) as f64 * SCALE);
                assert!((0.0..1.0).contains(&q[j]));
            }
        }
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(SobolSource::new(0).is_err());
        assert!(SobolSource::new(SOBOL_MAX_DIM + 1).is_err());
        assert!(SobolSource::new(SOBOL_MAX_DIM).is_ok());
    }
}
