use super::special::{chi2_sf, f_sf, normal_quantile, normal_sf};
use super::{
    mean, median, rank_with_ties, variance, Degeneracy, SampleGroups, StatsError, TestKind,
    TestResult,
};

// Royston (1995) AS R94 polynomial coefficients.
const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Half-vector of Shapiro-Wilk coefficients for the upper order statistics,
/// largest first.
fn shapiro_coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an = n as f64;
    let m: Vec<f64> = (1..=half)
        .map(|i| -normal_quantile((i as f64 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) + m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = poly(&C2, rsn) + m[1] / ssumm2;
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = m[i] / fac;
    }
    a
}

/// Shapiro-Wilk normality test with Royston's AS R94 p-value approximation.
pub fn shapiro_wilk(values: &[f64]) -> Result<TestResult, StatsError> {
    let n = values.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    if n > 5000 {
        return Err(StatsError::TooMany(n));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range.is_nan() || range <= 1e-19 * x[n - 1].abs().max(1.0) {
        return Err(StatsError::ZeroVariance);
    }

    let a = shapiro_coefficients(n);
    let numerator: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (x[n - 1 - i] - x[i]))
        .sum();
    let norm_a: f64 = 2.0 * a.iter().map(|v| v * v).sum::<f64>();
    let xm = mean(&x);
    let ss: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let w = (numerator * numerator / (norm_a * ss)).min(1.0);

    let an = n as f64;
    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let w1 = 1.0 - w;
        if w1 <= 0.0 {
            1.0
        } else {
            let mut y = w1.ln();
            let (m, s) = if n <= 11 {
                let gamma = poly(&G, an);
                if y >= gamma {
                    return Ok(TestResult::new(TestKind::ShapiroWilk, w, an, 0.0, 1e-99));
                }
                y = -(gamma - y).ln();
                (poly(&C3, an), poly(&C4, an).exp())
            } else {
                let xx = an.ln();
                (poly(&C5, xx), poly(&C6, xx).exp())
            };
            normal_sf((y - m) / s)
        }
    };
    Ok(TestResult::new(TestKind::ShapiroWilk, w, an, 0.0, p))
}

struct OneWay {
    ssb: f64,
    ssw: f64,
    df1: f64,
    df2: f64,
}

fn one_way_sums(groups: &[&[f64]]) -> OneWay {
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / total as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    OneWay {
        ssb,
        ssw,
        df1: (groups.len() - 1) as f64,
        df2: (total - groups.len()) as f64,
    }
}

/// Center used for Levene's absolute deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeveneCenter {
    /// Classic Levene.
    #[default]
    Mean,
    /// Brown-Forsythe variant.
    Median,
}

/// Classic (mean-centered) Levene test.
pub fn levene(groups: &SampleGroups) -> Result<TestResult, StatsError> {
    levene_centered(groups, LeveneCenter::Mean)
}

pub fn levene_centered(
    groups: &SampleGroups,
    center: LeveneCenter,
) -> Result<TestResult, StatsError> {
    groups.check(2)?;
    let deviations: Vec<Vec<f64>> = groups
        .groups
        .iter()
        .map(|g| {
            let c = match center {
                LeveneCenter::Mean => mean(&g.values),
                LeveneCenter::Median => median(&g.values),
            };
            g.values.iter().map(|v| (v - c).abs()).collect()
        })
        .collect();
    if deviations.iter().flatten().all(|d| *d == 0.0) {
        return Err(StatsError::DegenerateGroups);
    }
    let slices: Vec<&[f64]> = deviations.iter().map(Vec::as_slice).collect();
    let ow = one_way_sums(&slices);
    if ow.ssw == 0.0 {
        return Ok(
            TestResult::new(TestKind::Levene, f64::INFINITY, ow.df1, ow.df2, 0.0)
                .flagged(Degeneracy::ZeroWithinVariance),
        );
    }
    let w = (ow.ssb / ow.df1) / (ow.ssw / ow.df2);
    Ok(TestResult::new(TestKind::Levene, w, ow.df1, ow.df2, f_sf(w, ow.df1, ow.df2)))
}

/// Classic one-way ANOVA.
///
/// Zero within-group variance does not fail: identical data gives `F = 0,
/// p = 1`, separated constant groups give `F = inf, p = 0`, both flagged.
pub fn anova_oneway(groups: &SampleGroups) -> Result<TestResult, StatsError> {
    groups.check(2)?;
    let slices: Vec<&[f64]> = groups.groups.iter().map(|g| g.values.as_slice()).collect();
    let ow = one_way_sums(&slices);
    let scale = slices
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let negligible = 1e-24 * scale * scale * groups.total() as f64;
    if ow.ssw <= negligible {
        return Ok(if ow.ssb <= negligible {
            TestResult::new(TestKind::AnovaOneway, 0.0, ow.df1, ow.df2, 1.0)
                .flagged(Degeneracy::AllEqual)
        } else {
            TestResult::new(TestKind::AnovaOneway, f64::INFINITY, ow.df1, ow.df2, 0.0)
                .flagged(Degeneracy::ZeroWithinVariance)
        });
    }
    let f = (ow.ssb / ow.df1) / (ow.ssw / ow.df2);
    Ok(TestResult::new(TestKind::AnovaOneway, f, ow.df1, ow.df2, f_sf(f, ow.df1, ow.df2)))
}

/// Welch's heteroscedastic one-way ANOVA with Welch-Satterthwaite `df2`.
pub fn welch_anova(groups: &SampleGroups) -> Result<TestResult, StatsError> {
    groups.check(2)?;
    let stats: Vec<(f64, f64, f64)> = groups
        .groups
        .iter()
        .map(|g| (g.values.len() as f64, mean(&g.values), variance(&g.values)))
        .collect();
    if stats.iter().all(|(_, _, v)| *v == 0.0) {
        return Err(StatsError::AllZeroVariance);
    }
    if let Some(g) = groups
        .groups
        .iter()
        .zip(&stats)
        .find(|(_, (_, _, v))| *v == 0.0)
    {
        return Err(StatsError::ZeroGroupVariance(g.0.label.clone()));
    }
    let k = stats.len() as f64;
    let weights: Vec<f64> = stats.iter().map(|(n, _, v)| n / v).collect();
    let w_sum: f64 = weights.iter().sum();
    let weighted_mean = weights
        .iter()
        .zip(&stats)
        .map(|(w, (_, m, _))| w * m)
        .sum::<f64>()
        / w_sum;
    let between = weights
        .iter()
        .zip(&stats)
        .map(|(w, (_, m, _))| w * (m - weighted_mean).powi(2))
        .sum::<f64>()
        / (k - 1.0);
    let lambda = weights
        .iter()
        .zip(&stats)
        .map(|(w, (n, _, _))| (1.0 - w / w_sum).powi(2) / (n - 1.0))
        .sum::<f64>();
    let f = between / (1.0 + 2.0 * (k - 2.0) / (k * k - 1.0) * lambda);
    let df1 = k - 1.0;
    let df2 = (k * k - 1.0) / (3.0 * lambda);
    Ok(TestResult::new(TestKind::WelchAnova, f, df1, df2, f_sf(f, df1, df2)))
}

/// Kruskal-Wallis H with tie correction, p from chi-squared(k - 1).
pub fn kruskal_wallis(groups: &SampleGroups) -> Result<TestResult, StatsError> {
    groups.check(1)?;
    let n_total = groups.total();
    if n_total < 5 {
        return Err(StatsError::TooFew {
            needed: 5,
            got: n_total,
        });
    }
    let pooled: Vec<f64> = groups.groups.iter().flat_map(|g| g.values.iter().copied()).collect();
    let (ranks, tie_sum) = rank_with_ties(&pooled);
    let n = n_total as f64;
    let correction = 1.0 - tie_sum / (n * n * n - n);
    if correction <= 0.0 {
        return Err(StatsError::AllTied);
    }
    let mut offset = 0;
    let mut sum_term = 0.0;
    for g in &groups.groups {
        let r: f64 = ranks[offset..offset + g.values.len()].iter().sum();
        sum_term += r * r / g.values.len() as f64;
        offset += g.values.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum_term - 3.0 * (n + 1.0)) / correction).max(0.0);
    let df = (groups.groups.len() - 1) as f64;
    Ok(TestResult::new(TestKind::KruskalWallis, h, df, 0.0, chi2_sf(h, df)))
}
