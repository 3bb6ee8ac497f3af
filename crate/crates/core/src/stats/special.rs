//! Special functions and distribution functions used by the tests.
//!
//! Everything here is written against `f64` and targets ~1e-13 relative
//! accuracy over the argument ranges the analysis pipeline produces.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS[0];
        let t = x + 7.5;
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Log of the beta function.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized lower incomplete gamma P(a, x) by its power series.
///
/// Converges for every `x >= 0`, slowly once `x` is far above `a`.
pub fn gamma_p_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction.
///
/// Converges for every `x > 0`, quickly once `x > a + 1`.
pub fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    // f = b1 + a1/(b2 + a2/(b3 + ...)), b_i = x + 2i - 1 - a, a_i = -i(i - a)
    let mut b = x + 1.0 - a;
    let mut f = if b.abs() < TINY { TINY } else { b };
    let mut c = f;
    let mut d = 0.0;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = b + an * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    let h = 1.0 / f;
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Complementary error function.
///
/// Power series for erf below 2.5, continued fraction above.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        for i in 1..MAX_ITER {
            let n = i as f64;
            term *= -x2 / n;
            let contrib = term / (2.0 * n + 1.0);
            sum += contrib;
            if contrib.abs() <= EPS * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / PI.sqrt() * sum
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for i in 1..MAX_ITER {
            let an = i as f64 / 2.0;
            d = x + an * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = x + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (-x * x).exp() / PI.sqrt() / f
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile (Wichura's AS 241, PPND16).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2_509.080_928_730_122_7 + 33_430.575_583_588_13) * r
                + 67_265.770_927_008_7)
                * r
                + 45_921.953_931_549_87)
                * r
                + 13_731.693_765_509_46)
                * r
                + 1_971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((r * 5_226.495_278_852_545 + 28_729.085_735_721_943) * r
                + 39_307.895_800_092_71)
                * r
                + 21_213.794_301_586_597)
                * r
                + 5_394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// CDF of the F distribution.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    beta_inc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

/// Upper tail of the F distribution, evaluated directly rather than as 1 - cdf.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    beta_inc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))
}

/// CDF of the chi-squared distribution.
pub fn chi2_cdf(x: f64, k: f64) -> f64 {
    gamma_p(k / 2.0, x / 2.0)
}

/// Upper tail of the chi-squared distribution.
pub fn chi2_sf(x: f64, k: f64) -> f64 {
    gamma_q(k / 2.0, x / 2.0)
}

/// Two-sided p-value of Student's t.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    beta_inc(df / 2.0, 0.5, df / (df + t * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..20 {
            assert!(close(ln_gamma(n as f64), fact.ln(), 1e-12), "n={n}");
            fact *= n as f64;
        }
        assert!(close(ln_gamma(0.5), PI.sqrt().ln(), 1e-13));
    }

    #[test]
    fn normal_values_match_reference() {
        // scipy.stats.norm.cdf
        let cases = [
            (-8.0, 6.22096057427174e-16),
            (-1.5, 0.06680720126885807),
            (0.0, 0.5),
            (0.3, 0.6179114221889526),
            (2.0, 0.9772498680518208),
            (6.0, 0.9999999990134123),
        ];
        for (z, want) in cases {
            let got = normal_cdf(z);
            assert!((got - want).abs() <= 1e-14_f64.max(want * 1e-12), "z={z} got={got}");
        }
    }

    #[test]
    fn erfc_agrees_with_incomplete_gamma() {
        for i in 0..60 {
            let x = i as f64 * 0.1;
            let via_gamma = gamma_q(0.5, x * x);
            assert!(close(erfc(x), via_gamma, 1e-14), "x={x}");
        }
    }

    #[test]
    fn normal_quantile_matches_reference() {
        // scipy.stats.norm.ppf
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959963984540054),
            (1e-10, -6.361340902404056),
            (0.02, -2.053748910631823),
            (0.999999, 4.753424308817087),
        ];
        for (p, want) in cases {
            assert!(close(normal_quantile(p), want, 1e-12), "p={p}");
        }
        for i in 1..200 {
            let p = i as f64 / 200.0;
            assert!(close(normal_cdf(normal_quantile(p)), p, 1e-14));
        }
    }

    #[test]
    fn f_distribution_matches_reference() {
        // scipy.stats.f.cdf / f.sf
        let cases = [
            (3.0, 2.0, 6.0, 0.875),
            (0.8, 1.0, 4.0, 0.5783517448238059),
            (2.5, 3.0, 181.6, 0.9389887352108729),
            (5.134, 3.0, 340.0, 0.9982548776413472),
        ];
        for (x, d1, d2, want) in cases {
            assert!(close(f_cdf(x, d1, d2), want, 1e-12));
            assert!(close(f_sf(x, d1, d2), 1.0 - want, 1e-12));
        }
    }

    #[test]
    fn f_tails_sum_to_one() {
        for &d1 in &[1.0, 2.0, 3.0, 7.5] {
            for &d2 in &[2.0, 6.0, 40.0, 181.6, 340.0] {
                for i in 0..80 {
                    let x = i as f64 * 0.25;
                    let total = f_cdf(x, d1, d2) + f_sf(x, d1, d2);
                    assert!(close(total, 1.0, 1e-12), "x={x} d1={d1} d2={d2}");
                }
            }
        }
    }

    #[test]
    fn chi2_series_and_fraction_agree() {
        for &k in &[1.0, 2.0, 3.0, 5.0, 10.0, 30.0] {
            for i in 1..60 {
                let x = i as f64 * 0.5;
                let a = k / 2.0;
                // the fraction cancels catastrophically well below the mean
                if x < k / 2.0 {
                    continue;
                }
                let series = gamma_p_series(a, x / 2.0);
                let fraction = 1.0 - gamma_q_continued_fraction(a, x / 2.0);
                assert!(close(series, fraction, 1e-10), "k={k} x={x}");
            }
        }
    }

    #[test]
    fn chi2_matches_reference() {
        // scipy.stats.chi2.sf
        let cases = [
            (3.857142857142857, 1.0, 0.04953461343562649),
            (7.5, 3.0, 0.0575584519726364),
            (0.2, 2.0, 0.9048374180359595),
            (30.0, 10.0, 0.000856641210775301),
        ];
        for (x, k, want) in cases {
            assert!(close(chi2_sf(x, k), want, 1e-13), "x={x} k={k}");
        }
    }
}
