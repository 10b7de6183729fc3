//! Uniform random sources (pseudo-random and digitally shifted Sobol'),
//! stratified uniforms and scalar distribution primitives.
//!
//! Samplers consume randomness through [`Draws`]. A [`PointSource`] additionally
//! groups draws into points: each call to [`PointSource::start_point`] begins a
//! fresh vector, and successive draws read its coordinates in order. For the
//! pseudo-random source the grouping is immaterial; for Sobol' it fixes which
//! coordinate drives which input, coordinate 1 always being the index `T`.

mod dist;
mod sobol;
#[rustfmt::skip]
mod sobol_table;

pub use dist::{
    chi_square_cdf, chi_square_quantile, chi_square_survival, inv_gamma_cdf,
    inv_gamma_survival, inv_gamma_upper_quantile, std_normal_cdf, std_normal_ln_pdf,
    std_normal_pdf, std_normal_quantile, std_normal_survival, std_normal_upper_quantile,
    student_t_quantile, two_sided_z,
};
pub(crate) use dist::norm_inv;
pub use sobol::{SobolSource, SOBOL_MAX_DIM};

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};

/// A stream of uniform and standard normal variates.
pub trait Draws {
    /// Uniform variate in the open interval (0,1).
    fn uniform(&mut self) -> f64;

    fn normal(&mut self) -> f64 {
        norm_inv(self.uniform())
    }

    fn fill_normals(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.normal();
        }
    }

    fn fill_uniforms(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.uniform();
        }
    }
}

/// A [`Draws`] whose variates are grouped into points.
pub trait PointSource: Draws {
    fn start_point(&mut self);
}

pub(crate) fn norm_inv_fill(out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = norm_inv(*x);
    }
}

/// Pseudo-random source backed by xoshiro256++; normals use the ziggurat method.
#[derive(Clone, Debug)]
pub struct PseudoSource {
    rng: Xoshiro256PlusPlus,
}

impl PseudoSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }
}

impl Draws for PseudoSource {
    #[inline]
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn fill_normals(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = StandardNormal.sample(&mut self.rng);
        }
    }
}

impl PointSource for PseudoSource {
    #[inline]
    fn start_point(&mut self) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Pseudo,
    Sobol,
}

impl std::str::FromStr for SourceKind {
    type Err = SisError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo" => Ok(SourceKind::Pseudo),
            "sobol" => Ok(SourceKind::Sobol),
            other => Err(SisError::invalid(format!("unknown rng kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SourceKind::Pseudo => "pseudo",
            SourceKind::Sobol => "sobol",
        })
    }
}

/// Uniform source selected at run time.
#[derive(Clone, Debug)]
pub struct UniformSource {
    kind: SourceKind,
    dimension: usize,
    seed: u64,
    inner: Inner,
}

#[derive(Clone, Debug)]
enum Inner {
    Pseudo(PseudoSource),
    Sobol(SobolSource),
}

impl UniformSource {
    /// `dimension` is the number of coordinates per point. For Sobol' sources the
    /// `seed` draws the digital shift.
    pub fn new(kind: SourceKind, dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(SisError::invalid("source dimension must be positive"));
        }
        let inner = match kind {
            SourceKind::Pseudo => Inner::Pseudo(PseudoSource::new(seed)),
            SourceKind::Sobol => Inner::Sobol(SobolSource::shifted(dimension, seed)?),
        };
        Ok(Self {
            kind,
            dimension,
            seed,
            inner,
        })
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next point in [0,1)^dimension.
    pub fn next_point(&mut self) -> Vec<f64> {
        match &mut self.inner {
            Inner::Pseudo(p) => (0..self.dimension).map(|_| p.uniform()).collect(),
            Inner::Sobol(s) => s.next_point(),
        }
    }
}

impl Draws for UniformSource {
    #[inline]
    fn uniform(&mut self) -> f64 {
        match &mut self.inner {
            Inner::Pseudo(p) => p.uniform(),
            Inner::Sobol(s) => s.uniform(),
        }
    }

    #[inline]
    fn normal(&mut self) -> f64 {
        match &mut self.inner {
            Inner::Pseudo(p) => p.normal(),
            Inner::Sobol(s) => s.normal(),
        }
    }

    fn fill_normals(&mut self, out: &mut [f64]) {
        match &mut self.inner {
            Inner::Pseudo(p) => p.fill_normals(out),
            Inner::Sobol(s) => s.fill_normals(out),
        }
    }
}

impl PointSource for UniformSource {
    #[inline]
    fn start_point(&mut self) {
        match &mut self.inner {
            Inner::Pseudo(p) => p.start_point(),
            Inner::Sobol(s) => s.start_point(),
        }
    }
}

/// One value per equiprobable stratum: `vᵢ = (i − 1 + Uᵢ)/n`, i = 1..n.
pub fn stratified_stream(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(SisError::invalid("stratified stream needs n >= 1"));
    }
    let mut src = PseudoSource::new(seed);
    Ok(stratify(n, || src.uniform()))
}

pub(crate) fn stratify(n: usize, mut draw: impl FnMut() -> f64) -> Vec<f64> {
    let inv = 1.0 / n as f64;
    (0..n).map(|i| stratum_value(i, draw(), inv)).collect()
}

/// Value in stratum `i` (0-based) of width `inv_n` for the within-stratum uniform `u`.
#[inline]
pub fn stratum_value(i: usize, u: f64, inv_n: f64) -> f64 {
    // Guard against rounding up onto the next stratum's left edge.
    let lo = i as f64 * inv_n;
    let v = (i as f64 + u) * inv_n;
    let hi = (i + 1) as f64 * inv_n;
    if v >= hi {
        lo + (hi - lo) * 0.5
    } else {
        v.max(lo)
    }
}

/// Derives an independent 64-bit seed for sub-stream `stream` of `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_points_progress() {
        let mut s = UniformSource::new(SourceKind::Pseudo, 3, 11).unwrap();
        let a = s.next_point();
        let b = s.next_point();
        assert_ne!(a, b);
        assert!(a.iter().chain(&b).all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn same_seed_same_stream() {
        for kind in [SourceKind::Pseudo, SourceKind::Sobol] {
            let mut a = UniformSource::new(kind, 5, 99).unwrap();
            let mut b = UniformSource::new(kind, 5, 99).unwrap();
            for _ in 0..100 {
                assert_eq!(a.next_point(), b.next_point());
            }
        }
    }

    #[test]
    fn sobol_prefix_property() {
        let mut small = UniformSource::new(SourceKind::Sobol, 3, 0).unwrap();
        let mut large = SobolSource::with_shift(7, {
            let mut s = SobolSource::shifted(3, 0).unwrap().shift().to_vec();
            s.extend([1, 2, 3, 4]);
            s
        })
        .unwrap();
        for _ in 0..200 {
            let p = small.next_point();
            let q = large.next_point();
            assert_eq!(&q[..3], &p[..]);
        }
    }

    #[test]
    fn stratified_single_value() {
        let v = stratified_stream(1, 3).unwrap();
        assert_eq!(v.len(), 1);
        assert!((0.0..1.0).contains(&v[0]));
    }

    #[test]
    fn stratified_midpoints() {
        assert_eq!(stratify(4, || 0.5), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn stratified_deciles_are_flat() {
        let v = stratified_stream(10, 12345).unwrap();
        let mut hist = [0; 10];
        for x in &v {
            hist[(x * 10.0) as usize] += 1;
        }
        assert_eq!(hist, [1; 10]);
    }

    #[test]
    fn stratified_rejects_zero() {
        assert!(matches!(
            stratified_stream(0, 1),
            Err(SisError::InvalidArgument(_))
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
