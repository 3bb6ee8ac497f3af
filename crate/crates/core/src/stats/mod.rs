//! Hypothesis tests and the per-measure analysis decision tree.

mod analysis;
mod omnibus;
mod posthoc;
pub mod ptukey;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{analyze_measure, AnalysisOptions, AnalysisPath, AnalysisResult, NormalityMode};
pub use omnibus::{
    anova_oneway, kruskal_wallis, levene, levene_centered, shapiro_wilk, welch_anova, LeveneCenter,
};
pub use posthoc::{dunn_bonferroni, tukey_hsd};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("at most 5000 observations are supported, got {0}")]
    TooMany(usize),
    #[error("all values are identical")]
    ZeroVariance,
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group `{label}` has {got} observations, need at least {needed}")]
    GroupTooSmall { label: String, got: usize, needed: usize },
    #[error("all absolute deviations are zero")]
    DegenerateGroups,
    #[error("every group has zero variance")]
    AllZeroVariance,
    #[error("group `{0}` has zero variance; Welch weights are undefined")]
    ZeroGroupVariance(String),
    #[error("within-group variance is zero")]
    ZeroWithinVariance,
    #[error("all values are tied")]
    AllTied,
    #[error("non-finite value in group `{0}`")]
    NonFinite(String),
}

/// Which test produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ShapiroWilk,
    Levene,
    AnovaOneway,
    WelchAnova,
    KruskalWallis,
}

/// Marks a result computed from degenerate data rather than failing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Every observation equal: statistic 0, p = 1.
    AllEqual,
    /// Groups differ but have no spread: statistic infinite, p = 0.
    ZeroWithinVariance,
    /// A downstream test could not run and a fallback was used.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<Degeneracy>,
}

impl TestResult {
    fn new(test: TestKind, statistic: f64, df1: f64, df2: f64, p: f64) -> Self {
        Self {
            test,
            statistic,
            df1,
            df2,
            p: p.clamp(0.0, 1.0),
            flag: None,
        }
    }

    fn flagged(mut self, flag: Degeneracy) -> Self {
        self.flag = Some(flag);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosthocMethod {
    TukeyHsd,
    DunnBonferroni,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub group_a: String,
    pub group_b: String,
    /// Mean difference (Tukey) or mean-rank difference (Dunn), a minus b.
    pub estimate: f64,
    /// Studentized range `q` (Tukey) or signed `z` (Dunn).
    pub statistic: f64,
    pub p_adjusted: f64,
    pub method: PosthocMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    pub values: Vec<f64>,
}

/// Observations of one measure split by condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroups {
    pub measure_id: String,
    pub groups: Vec<Group>,
}

impl SampleGroups {
    pub fn new(measure_id: impl Into<String>) -> Self {
        Self {
            measure_id: measure_id.into(),
            groups: Vec::new(),
        }
    }

    pub fn with_group(mut self, label: impl Into<String>, values: Vec<f64>) -> Self {
        self.groups.push(Group {
            label: label.into(),
            values,
        });
        self
    }

    /// Convenience for unlabeled fixtures: groups are labelled `g0`, `g1`, ...
    pub fn from_slices(groups: &[&[f64]]) -> Self {
        groups
            .iter()
            .enumerate()
            .fold(Self::new("unnamed"), |acc, (i, g)| acc.with_group(format!("g{i}"), g.to_vec()))
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    fn check(&self, min_size: usize) -> Result<(), StatsError> {
        if self.groups.len() < 2 {
            return Err(StatsError::TooFewGroups(self.groups.len()));
        }
        for g in &self.groups {
            if g.values.len() < min_size {
                return Err(StatsError::GroupTooSmall {
                    label: g.label.clone(),
                    got: g.values.len(),
                    needed: min_size,
                });
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite(g.label.clone()));
            }
        }
        Ok(())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(values: &[f64]) -> f64 {
    variance(values).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Average ranks (1-based) with ties sharing the mean rank, plus the tie
/// correction sum `sum(t^3 - t)`.
fn rank_with_ties(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_sum)
}
