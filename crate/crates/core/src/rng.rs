//! Deterministic random number streams for parallel Monte Carlo.
//!
//! Every path owns a counter-based stream keyed by `(master_seed,
//! path_index, lane)`, so ensembles are reproducible independently of the
//! worker count and of the order in which paths are scheduled. Gaussian
//! increments are produced by applying the inverse normal CDF to uniform
//! draws, which keeps the draw count per step fixed (one `u64` per
//! variate) and the stream layout stable across runs.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of independent lanes reserved per path index.
///
/// Lane 0 drives the prelimit path, lanes 1..4 are reserved for limit
/// constructions that need several independent sources (auxiliary Brownian
/// motion, interface Brownian motion, spare).
pub const LANES: u64 = 4;

/// Lane of the prelimit path noise.
pub const LANE_MAIN: u64 = 0;
/// Lane of the limit construction's own driving noise.
pub const LANE_AUX: u64 = 1;
/// Lane of the interface Brownian motion W0.
pub const LANE_INTERFACE: u64 = 2;

/// Factory for the per-path streams of one ensemble.
#[derive(Clone, Copy, Debug)]
pub struct PathStreams {
    master_seed: u64,
}

impl PathStreams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Stream for `path_index` on `lane < LANES`.
    pub fn stream(&self, path_index: u64, lane: u64) -> ChaCha8Rng {
        assert!(lane < LANES, "lane {lane} out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path_index.wrapping_mul(LANES) + lane);
        rng
    }

    /// Main simulation stream for `path_index`.
    pub fn main(&self, path_index: u64) -> ChaCha8Rng {
        self.stream(path_index, 0)
    }
}

/// Maps a raw `u64` to the open interval (0, 1).
///
/// Uses 52 bits with a half-step offset: (i + 1/2) * 2^-52 lies in
/// [2^-53, 1 - 2^-53] and every value is exactly representable, so 0 and
/// 1 are never returned and the inverse CDF below stays finite.
#[inline]
pub fn uniform_open01(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / 4503599627370496.0)
}

/// One standard normal variate via inverse CDF.
#[inline]
pub fn next_gaussian<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    normal_inverse_cdf(uniform_open01(rng.next_u64()))
}

/// Fills `out` with independent standard normal variates.
#[inline]
pub fn fill_gaussian<R: RngCore + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for z in out.iter_mut() {
        *z = next_gaussian(rng);
    }
}

/// Inverse of the standard normal CDF (Wichura's algorithm AS 241,
/// PPND16 variant). Absolute accuracy is close to machine precision for
/// p in (0, 1).
pub fn normal_inverse_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "p must lie in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = crate::poly_eval![
            r,
            3.387_132_872_796_366_608e0,
            1.331_416_678_917_843_774_5e2,
            1.971_590_950_306_551_442_7e3,
            1.373_169_376_550_946_112_5e4,
            4.592_195_393_154_987_145_7e4,
            6.726_577_092_700_870_085_3e4,
            3.343_057_558_358_812_810_5e4,
            2.509_080_928_730_122_672_7e3
        ];
        let den = crate::poly_eval![
            r,
            1.0,
            4.231_333_070_160_091_125_2e1,
            6.871_870_074_920_579_083e2,
            5.394_196_021_424_751_107_7e3,
            2.121_379_430_158_659_586_7e4,
            3.930_789_580_009_271_061e4,
            2.872_908_573_572_194_267_4e4,
            5.226_495_278_852_854_561e3
        ];
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        let num = crate::poly_eval![
            r,
            1.423_437_110_749_683_577_34e0,
            4.630_337_846_156_545_295_9e0,
            5.769_497_221_460_691_405_5e0,
            3.647_848_324_763_204_605_04e0,
            1.270_458_252_452_368_382_58e0,
            2.417_807_251_774_506_117_7e-1,
            2.272_384_498_926_918_458_33e-2,
            7.745_450_142_783_414_076_4e-4
        ];
        let den = crate::poly_eval![
            r,
            1.0,
            2.053_191_626_637_758_821_87e0,
            1.676_384_830_183_803_849_4e0,
            6.897_673_349_851_000_045_5e-1,
            1.481_039_764_274_800_745_9e-1,
            1.519_866_656_361_645_719_66e-2,
            5.475_938_084_995_344_946e-4,
            1.050_750_071_644_416_843_24e-9
        ];
        num / den
    } else {
        let r = r - 5.0;
        let num = crate::poly_eval![
            r,
            6.657_904_643_501_103_777_2e0,
            5.463_784_911_164_114_369_9e0,
            1.784_826_539_917_291_335_8e0,
            2.965_605_718_285_048_912_3e-1,
            2.653_218_952_657_612_309_3e-2,
            1.242_660_947_388_078_438_6e-3,
            2.711_555_568_743_487_578_15e-5,
            2.010_334_399_292_288_132_65e-7
        ];
        let den = crate::poly_eval![
            r,
            1.0,
            5.998_322_065_558_879_376_9e-1,
            1.369_298_809_227_358_053_1e-1,
            1.487_536_129_085_061_485_25e-2,
            7.868_691_311_456_132_591e-4,
            1.846_318_317_510_054_681_8e-5,
            1.421_511_758_316_445_888_7e-7,
            2.044_263_103_389_939_785_64e-15
        ];
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Horner evaluation, coefficients listed from degree 0 upward.
#[macro_export]
macro_rules! poly_eval {
    ($x:expr, $c0:expr $(, $c:expr)*) => {{
        let x = $x;
        let coeffs = [$c0 $(, $c)*];
        let mut acc = 0.0f64;
        for &c in coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }};
}
