//! Studentized range distribution.
//!
//! `P(Q <= q; k, df)` is evaluated as a double integral: the inner integral is
//! the distribution of the range of `k` standard normals, the outer integral
//! averages it over the density of `s = sqrt(chi2_df / df)`. Both use
//! composite 16-point Gauss-Legendre quadrature.

use super::special::{ln_gamma, normal_cdf, normal_pdf};

const GL_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_095,
];

/// Degrees of freedom above which the scale is treated as exactly 1.
const DF_INFINITE: f64 = 50_000.0;

fn gauss_legendre<F: FnMut(f64) -> f64>(lo: f64, hi: f64, panels: usize, mut f: F) -> f64 {
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        let mut acc = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            acc += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += acc * half;
    }
    total
}

/// Quadrature grid for the inner integral over the normal location `z`.
struct RangeGrid {
    z: Vec<f64>,
    weight: Vec<f64>,
    cdf: Vec<f64>,
}

impl RangeGrid {
    fn new() -> Self {
        let (lo, hi, panels) = (-8.5, 8.5, 24);
        let width = (hi - lo) / panels as f64;
        let half = 0.5 * width;
        let mut z = Vec::with_capacity(panels * 16);
        let mut weight = Vec::with_capacity(panels * 16);
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * width;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                for node in [mid - half * x, mid + half * x] {
                    z.push(node);
                    weight.push(w * half * normal_pdf(node));
                }
            }
        }
        let cdf = z.iter().map(|&v| normal_cdf(v)).collect();
        Self { z, weight, cdf }
    }

    /// P(range of k iid standard normals <= w).
    fn range_cdf(&self, w: f64, k: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..self.z.len() {
            let diff = self.cdf[i] - normal_cdf(self.z[i] - w);
            if diff > 0.0 {
                total += self.weight[i] * diff.powf(k - 1.0);
            }
        }
        (k * total).clamp(0.0, 1.0)
    }
}

/// Log density of `s = sqrt(X / df)` with `X ~ chi2(df)`.
fn ln_scale_density(s: f64, df: f64) -> f64 {
    let half = df / 2.0;
    std::f64::consts::LN_2 + half * half.ln() - ln_gamma(half) + (df - 1.0) * s.ln()
        - half * s * s
}

/// Integration bounds for the scale density, trimmed where the density falls
/// below `exp(-40)` of its peak.
fn scale_bounds(df: f64) -> (f64, f64) {
    let mode = ((df - 1.0).max(0.0) / df).sqrt();
    let peak = if mode > 0.0 {
        ln_scale_density(mode, df)
    } else {
        ln_scale_density(1e-12, df).max(ln_scale_density(1e-3, df))
    };
    let step = 0.25 / df.sqrt();
    let mut hi = mode.max(step);
    while ln_scale_density(hi, df) > peak - 40.0 {
        hi += step;
    }
    let mut lo = mode;
    while lo > 0.0 && ln_scale_density(lo, df) > peak - 40.0 {
        lo -= step;
    }
    (lo.max(0.0), hi)
}

/// CDF of the studentized range statistic for `k` groups and `df` error
/// degrees of freedom.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2, "studentized range needs at least two groups");
    if q <= 0.0 || q.is_nan() {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    let kf = k as f64;
    let grid = RangeGrid::new();
    if df >= DF_INFINITE {
        return grid.range_cdf(q, kf);
    }
    let (lo, hi) = scale_bounds(df);
    let value = gauss_legendre(lo, hi, 16, |s| {
        if s <= 0.0 {
            return 0.0;
        }
        ln_scale_density(s, df).exp() * grid.range_cdf(q * s, kf)
    });
    value.clamp(0.0, 1.0)
}

/// Upper tail `P(Q > q)`.
pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - studentized_range_cdf(q, k, df)).clamp(0.0, 1.0)
}
