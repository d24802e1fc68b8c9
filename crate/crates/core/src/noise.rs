//! Reproducible Brownian increments.
//!
//! Every increment is a pure function of `(seed, h, index)`:
//!
//! 1. The 64-bit `seed` is the Philox4x32-10 key (low word first) and the
//!    128-bit counter is `[lo32(index / 2), hi32(index / 2), 0, 0]`.
//! 2. The four output words form two 64-bit lanes, `out[1] << 32 | out[0]`
//!    and `out[3] << 32 | out[2]`; increment `index` uses lane `index % 2`.
//! 3. The top 52 bits `m` of the lane map to `u = (m + 0.5) / 2^52`, which lies
//!    strictly inside `(0, 1)` and is exactly representable.
//! 4. `z = Φ⁻¹(u)` by Wichura's AS 241 (PPND16) rational approximation and the
//!    increment is `sqrt(h) * z`.
//!
//! Only IEEE-754 `+ - * /`, `sqrt` and `ln` are involved, so sequences replay
//! bit-for-bit on any platform whose `ln` is correctly rounded (glibc, musl,
//! macOS libm all agree on the inputs that occur here).
//!
//! Ensemble paths get their own key through [`EnsembleSeeding::path_seed`].

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let p0 = u64::from(PHILOX_M0) * u64::from(ctr[0]);
        let p1 = u64::from(PHILOX_M1) * u64::from(ctr[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lane_bits(seed: u64, index: u64) -> u64 {
    let block = philox_block(seed, index >> 1);
    select_lane(&block, index)
}

fn philox_block(seed: u64, block: u64) -> [u32; 4] {
    philox4x32_10(
        [block as u32, (block >> 32) as u32, 0, 0],
        [seed as u32, (seed >> 32) as u32],
    )
}

fn select_lane(block: &[u32; 4], index: u64) -> u64 {
    if index & 1 == 0 {
        (u64::from(block[1]) << 32) | u64::from(block[0])
    } else {
        (u64::from(block[3]) << 32) | u64::from(block[2])
    }
}

/// Open-interval uniform from the top 52 bits.
pub fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

/// Standard normal draw at position `index` of the stream keyed by `seed`.
pub fn standard_normal_at(seed: u64, index: u64) -> f64 {
    inverse_normal_cdf(bits_to_open_unit(lane_bits(seed, index)))
}

/// Inverse standard normal CDF, AS 241 (PPND16), relative accuracy about 1e-16.
///
/// `p` must lie in `(0, 1)`; the endpoints map to `∓∞`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_854_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_879e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Scalar Brownian increments `ΔB_k ~ N(0, h)` for one path.
///
/// The state is fully described by `(seed, h, index)`; the cached Philox block
/// only avoids recomputing the second lane.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    seed: u64,
    h: f64,
    sqrt_h: f64,
    index: u64,
    cache: Option<(u64, [u32; 4])>,
}

impl IncrementStream {
    pub fn new(seed: u64, h: f64) -> Self {
        Self::at(seed, h, 0)
    }

    /// Stream positioned so that the next call returns increment `index`.
    pub fn at(seed: u64, h: f64, index: u64) -> Self {
        assert!(
            h >= 0.0 && h.is_finite(),
            "step size must be finite and >= 0"
        );
        Self {
            seed,
            h,
            sqrt_h: h.sqrt(),
            index,
            cache: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Standard normal behind the next increment, advancing the cursor.
    pub fn next_standard(&mut self) -> f64 {
        let block_id = self.index >> 1;
        let block = match self.cache {
            Some((id, block)) if id == block_id => block,
            _ => {
                let block = philox_block(self.seed, block_id);
                self.cache = Some((block_id, block));
                block
            }
        };
        let bits = select_lane(&block, self.index);
        self.index += 1;
        inverse_normal_cdf(bits_to_open_unit(bits))
    }

    pub fn next_increment(&mut self) -> f64 {
        self.sqrt_h * self.next_standard()
    }
}

/// Maps a base seed and a path index to a per-path Philox key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleSeeding {
    pub base_seed: u64,
}

impl EnsembleSeeding {
    pub fn new(base_seed: u64) -> Self {
        Self { base_seed }
    }

    /// `mix64(base_seed + mix64((path + 1) * 0x9E3779B97F4A7C15))`, wrapping arithmetic.
    pub fn path_seed(&self, path: usize) -> u64 {
        let p = (path as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
        mix64(self.base_seed.wrapping_add(mix64(p)))
    }

    pub fn stream(&self, path: usize, h: f64) -> IncrementStream {
        IncrementStream::new(self.path_seed(path), h)
    }

    /// Two handles over the same increment sequence (common random numbers).
    pub fn coupled_pair(&self, path: usize, h: f64) -> (IncrementStream, IncrementStream) {
        let s = self.stream(path, h);
        (s.clone(), s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0; 4], [0; 2]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn inverse_cdf_round_trips_through_erfc() {
        use libm::erfc;
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let z = inverse_normal_cdf(p);
            let back = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
            assert!(
                (back - p).abs() < 1e-14 * p.max(1e-3),
                "p={p} z={z} back={back}"
            );
        }
        for &p in &[1e-300, 1e-100, 1e-20, 1e-10, 1e-5] {
            let z = inverse_normal_cdf(p);
            let back = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
            assert!(((back - p) / p).abs() < 1e-12, "p={p}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn open_unit_never_hits_endpoints() {
        assert!(bits_to_open_unit(0) > 0.0);
        assert!(bits_to_open_unit(u64::MAX) < 1.0);
    }

    #[test]
    fn zero_step_gives_zero_increments() {
        let mut s = IncrementStream::new(7, 0.0);
        for _ in 0..100 {
            assert_eq!(s.next_increment(), 0.0);
        }
    }

    #[test]
    fn fixed_seed_replays() {
        let a: Vec<f64> = {
            let mut s = IncrementStream::new(42, 0.01);
            (0..3).map(|_| s.next_increment()).collect()
        };
        let b: Vec<f64> = {
            let mut s = IncrementStream::new(42, 0.01);
            (0..3).map(|_| s.next_increment()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruct_at_index() {
        let mut s = IncrementStream::new(99, 0.3);
        let all: Vec<f64> = (0..64).map(|_| s.next_increment()).collect();
        for k in [0u64, 1, 2, 17, 33, 63] {
            let mut r = IncrementStream::at(99, 0.3, k);
            assert_eq!(r.next_increment().to_bits(), all[k as usize].to_bits());
            assert_eq!(
                (0.3f64.sqrt() * standard_normal_at(99, k)).to_bits(),
                all[k as usize].to_bits()
            );
        }
    }

    #[test]
    fn sample_moments_match_normal() {
        let n = 1_000_000;
        let h = 0.25;
        let mut s = IncrementStream::new(2024, h);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = s.next_increment();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * 0.5 / 1000.0, "mean {mean}");
        assert!((var - h).abs() < 0.02 * h, "var {var}");
    }

    #[test]
    fn coupled_pair_shares_increments() {
        let seeding = EnsembleSeeding::new(5);
        let (mut a, mut b) = seeding.coupled_pair(3, 0.1);
        for _ in 0..100 {
            assert_eq!(a.next_increment().to_bits(), b.next_increment().to_bits());
        }
    }

    #[test]
    fn distinct_paths_differ() {
        let seeding = EnsembleSeeding::new(5);
        let firsts: Vec<f64> = (0..100)
            .map(|p| seeding.stream(p, 1.0).next_increment())
            .collect();
        for i in 0..firsts.len() {
            for j in i + 1..firsts.len() {
                assert_ne!(firsts[i], firsts[j]);
            }
        }
        assert_eq!(seeding.path_seed(10), EnsembleSeeding::new(5).path_seed(10));
    }
}
