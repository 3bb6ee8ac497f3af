use super::ptukey::studentized_range_sf;
use super::special::normal_sf;
use super::{
    kruskal_wallis, mean, rank_with_ties, PairwiseComparison, PosthocMethod, SampleGroups,
    StatsError,
};

fn pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |a| (a + 1..k).map(move |b| (a, b)))
}

/// Dunn's pairwise rank test with Bonferroni adjustment over all
/// `k(k-1)/2` pairs.
pub fn dunn_bonferroni(groups: &SampleGroups) -> Result<Vec<PairwiseComparison>, StatsError> {
    // same preconditions as the omnibus test
    kruskal_wallis(groups)?;
    let pooled: Vec<f64> = groups.groups.iter().flat_map(|g| g.values.iter().copied()).collect();
    let (ranks, tie_sum) = rank_with_ties(&pooled);
    let n = pooled.len() as f64;
    let mut mean_ranks = Vec::with_capacity(groups.groups.len());
    let mut offset = 0;
    for g in &groups.groups {
        mean_ranks.push(mean(&ranks[offset..offset + g.values.len()]));
        offset += g.values.len();
    }
    let k = groups.groups.len();
    let comparisons = (k * (k - 1) / 2) as f64;
    let variance_unit = n * (n + 1.0) / 12.0 - tie_sum / (12.0 * (n - 1.0));
    Ok(pairs(k)
        .map(|(a, b)| {
            let (ga, gb) = (&groups.groups[a], &groups.groups[b]);
            let diff = mean_ranks[a] - mean_ranks[b];
            let se = (variance_unit
                * (1.0 / ga.values.len() as f64 + 1.0 / gb.values.len() as f64))
                .sqrt();
            let z = diff / se;
            let p = 2.0 * normal_sf(z.abs());
            PairwiseComparison {
                group_a: ga.label.clone(),
                group_b: gb.label.clone(),
                estimate: diff,
                statistic: z,
                p_adjusted: (p * comparisons).min(1.0),
                method: PosthocMethod::DunnBonferroni,
            }
        })
        .collect())
}

/// Tukey's HSD (Tukey-Kramer for unequal sizes) using the pooled
/// within-group mean square.
pub fn tukey_hsd(groups: &SampleGroups) -> Result<Vec<PairwiseComparison>, StatsError> {
    groups.check(2)?;
    let k = groups.groups.len();
    let n_total = groups.total();
    let df = (n_total - k) as f64;
    let means: Vec<f64> = groups.groups.iter().map(|g| mean(&g.values)).collect();
    let ssw: f64 = groups
        .groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.values.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let msw = ssw / df;
    let identical = means.windows(2).all(|w| w[0] == w[1]);
    if msw <= 0.0 && !identical {
        return Err(StatsError::ZeroWithinVariance);
    }
    Ok(pairs(k)
        .map(|(a, b)| {
            let (ga, gb) = (&groups.groups[a], &groups.groups[b]);
            let diff = means[a] - means[b];
            let (q, p) = if diff == 0.0 {
                (0.0, 1.0)
            } else {
                let se = (msw / 2.0
                    * (1.0 / ga.values.len() as f64 + 1.0 / gb.values.len() as f64))
                    .sqrt();
                let q = diff.abs() / se;
                (q, studentized_range_sf(q, k, df))
            };
            PairwiseComparison {
                group_a: ga.label.clone(),
                group_b: gb.label.clone(),
                estimate: diff,
                statistic: q,
                p_adjusted: p.clamp(0.0, 1.0),
                method: PosthocMethod::TukeyHsd,
            }
        })
        .collect())
}
