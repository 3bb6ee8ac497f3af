use serde::{Deserialize, Serialize};

use super::{
    anova_oneway, dunn_bonferroni, kruskal_wallis, levene_centered, mean, shapiro_wilk, std_dev,
    tukey_hsd, welch_anova, Degeneracy, LeveneCenter, PairwiseComparison, PosthocMethod,
    SampleGroups, StatsError, TestKind, TestResult,
};

/// Which branch of the decision tree produced the omnibus result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisPath {
    /// Normality rejected: Kruskal-Wallis followed by Dunn/Bonferroni.
    Nonparametric,
    /// Normal but heteroscedastic: Welch ANOVA followed by Tukey HSD.
    Welch,
    /// Normal and homoscedastic: one-way ANOVA followed by Tukey HSD.
    Classic,
}

/// What the Shapiro-Wilk step is run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalityMode {
    /// One test on residuals pooled across groups, each residual divided by
    /// its group's standard deviation.
    #[default]
    PooledStandardized,
    /// One test on raw residuals `value - group mean` pooled across groups.
    PooledResiduals,
    /// One test per group; normality is rejected if any group rejects.
    PerGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub alpha: f64,
    pub normality: NormalityMode,
    pub levene_center: LeveneCenter,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            normality: NormalityMode::default(),
            levene_center: LeveneCenter::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub measure_id: String,
    pub normality: Vec<TestResult>,
    pub homogeneity: Option<TestResult>,
    pub omnibus: TestResult,
    pub posthoc: Vec<PairwiseComparison>,
    pub path: AnalysisPath,
    /// Human-readable notes about degenerate data and fallbacks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AnalysisResult {
    /// `true` when the omnibus test and post-hoc method match the path.
    pub fn is_consistent(&self) -> bool {
        let (test, method) = match self.path {
            AnalysisPath::Nonparametric => (TestKind::KruskalWallis, PosthocMethod::DunnBonferroni),
            AnalysisPath::Welch => (TestKind::WelchAnova, PosthocMethod::TukeyHsd),
            AnalysisPath::Classic => (TestKind::AnovaOneway, PosthocMethod::TukeyHsd),
        };
        self.omnibus.test == test && self.posthoc.iter().all(|c| c.method == method)
    }

    /// Whether the homogeneity test accepted equal variances, if it ran.
    pub fn homogeneous(&self, alpha: f64) -> Option<bool> {
        self.homogeneity.as_ref().map(|h| h.p >= alpha)
    }
}

enum Normality {
    Normal,
    NotNormal,
    /// Every group is constant, so no spread is left to test.
    NoSpread,
}

fn assess_normality(
    groups: &SampleGroups,
    mode: NormalityMode,
    alpha: f64,
    results: &mut Vec<TestResult>,
    notes: &mut Vec<String>,
) -> Result<Normality, StatsError> {
    let pooled = |standardize: bool| -> Vec<f64> {
        groups
            .groups
            .iter()
            .flat_map(|g| {
                let m = mean(&g.values);
                let sd = std_dev(&g.values);
                let scale = if standardize && sd > 0.0 { sd } else { 1.0 };
                g.values.iter().map(move |v| (v - m) / scale)
            })
            .collect()
    };
    let single = |values: Vec<f64>, results: &mut Vec<TestResult>| match shapiro_wilk(&values) {
        Ok(r) => {
            let normal = r.p >= alpha;
            results.push(r);
            Ok(if normal { Normality::Normal } else { Normality::NotNormal })
        }
        Err(StatsError::ZeroVariance) => Ok(Normality::NoSpread),
        Err(e) => Err(e),
    };
    match mode {
        NormalityMode::PooledStandardized => single(pooled(true), results),
        NormalityMode::PooledResiduals => single(pooled(false), results),
        NormalityMode::PerGroup => {
            let mut any_spread = false;
            let mut rejected = false;
            for g in &groups.groups {
                match shapiro_wilk(&g.values) {
                    Ok(r) => {
                        any_spread = true;
                        rejected |= r.p < alpha;
                        results.push(r);
                    }
                    Err(StatsError::ZeroVariance) => {
                        notes.push(format!("group `{}` is constant; skipped normality", g.label));
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(match (any_spread, rejected) {
                (false, _) => Normality::NoSpread,
                (true, true) => Normality::NotNormal,
                (true, false) => Normality::Normal,
            })
        }
    }
}

fn classic_branch(
    groups: &SampleGroups,
    notes: &mut Vec<String>,
) -> Result<(TestResult, Vec<PairwiseComparison>), StatsError> {
    let omnibus = anova_oneway(groups)?;
    let posthoc = match tukey_hsd(groups) {
        Ok(p) => p,
        Err(StatsError::ZeroWithinVariance) => {
            notes.push("Tukey HSD skipped: zero within-group variance".into());
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    Ok((omnibus, posthoc))
}

/// Runs the full decision tree for one measure.
///
/// Shapiro-Wilk first; if normality is rejected, Kruskal-Wallis with Dunn's
/// test. Otherwise Levene; unequal variances lead to Welch's ANOVA, equal
/// variances to the classic one-way ANOVA, both followed by Tukey's HSD.
pub fn analyze_measure(
    groups: &SampleGroups,
    options: &AnalysisOptions,
) -> Result<AnalysisResult, StatsError> {
    groups.check(3)?;
    let alpha = options.alpha;
    let mut normality = Vec::new();
    let mut notes = Vec::new();
    let assessed = assess_normality(groups, options.normality, alpha, &mut normality, &mut notes)?;

    let finish = |path, homogeneity, omnibus, posthoc, notes| AnalysisResult {
        measure_id: groups.measure_id.clone(),
        normality: normality.clone(),
        homogeneity,
        omnibus,
        posthoc,
        path,
        notes,
    };

    match assessed {
        Normality::NotNormal => {
            let (omnibus, posthoc) = match kruskal_wallis(groups) {
                Ok(h) => (h, dunn_bonferroni(groups)?),
                Err(StatsError::AllTied) => {
                    notes.push("all values tied".into());
                    let df = (groups.groups.len() - 1) as f64;
                    let r = TestResult::new(TestKind::KruskalWallis, 0.0, df, 0.0, 1.0)
                        .flagged(Degeneracy::AllEqual);
                    (r, Vec::new())
                }
                Err(e) => return Err(e),
            };
            Ok(finish(AnalysisPath::Nonparametric, None, omnibus, posthoc, notes))
        }
        Normality::NoSpread => {
            notes.push("every group is constant; normality and homogeneity not testable".into());
            let (omnibus, posthoc) = classic_branch(groups, &mut notes)?;
            Ok(finish(AnalysisPath::Classic, None, omnibus, posthoc, notes))
        }
        Normality::Normal => {
            let homogeneity = match levene_centered(groups, options.levene_center) {
                Ok(r) => Some(r),
                Err(StatsError::DegenerateGroups) => {
                    notes.push("Levene undefined: all deviations zero".into());
                    None
                }
                Err(e) => return Err(e),
            };
            let heterogeneous = homogeneity.as_ref().is_some_and(|h| h.p < alpha);
            if heterogeneous {
                match welch_anova(groups) {
                    Ok(omnibus) => {
                        let (_, posthoc) = classic_branch(groups, &mut notes)?;
                        return Ok(finish(AnalysisPath::Welch, homogeneity, omnibus, posthoc, notes));
                    }
                    Err(StatsError::ZeroGroupVariance(label)) => {
                        notes.push(format!(
                            "Welch ANOVA undefined (group `{label}` has zero variance); fell back to one-way ANOVA"
                        ));
                    }
                    Err(e) => return Err(e),
                }
                let (mut omnibus, posthoc) = classic_branch(groups, &mut notes)?;
                omnibus.flag.get_or_insert(Degeneracy::Fallback);
                return Ok(finish(AnalysisPath::Classic, homogeneity, omnibus, posthoc, notes));
            }
            let (omnibus, posthoc) = classic_branch(groups, &mut notes)?;
            Ok(finish(AnalysisPath::Classic, homogeneity, omnibus, posthoc, notes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::special::normal_quantile;

    fn normal_scores(n: usize) -> Vec<f64> {
        (1..=n)
            .map(|i| normal_quantile((i as f64 - 0.375) / (n as f64 + 0.25)))
            .collect()
    }

    fn affine(base: &[f64], loc: f64, scale: f64) -> Vec<f64> {
        base.iter().map(|z| loc + scale * z).collect()
    }

    #[test]
    fn requires_three_per_group() {
        let g = SampleGroups::from_slices(&[&[1.0, 2.0], &[1.0, 2.0, 3.0]]);
        assert!(matches!(
            analyze_measure(&g, &AnalysisOptions::default()),
            Err(StatsError::GroupTooSmall { .. })
        ));
    }

    #[test]
    fn skewed_goes_nonparametric() {
        let expo: Vec<f64> = (1..=30).map(|i| -(1.0 - (i as f64 - 0.5) / 30.0).ln()).collect();
        let g = SampleGroups::new("skewed")
            .with_group("a", expo.clone())
            .with_group("b", affine(&expo, 0.5, 1.0))
            .with_group("c", affine(&expo, 0.2, 1.0));
        let r = analyze_measure(&g, &AnalysisOptions::default()).unwrap();
        assert_eq!(r.path, AnalysisPath::Nonparametric);
        assert!(r.homogeneity.is_none());
        assert!(r.is_consistent());
    }

    #[test]
    fn heteroscedastic_goes_welch() {
        let z = normal_scores(30);
        let g = SampleGroups::new("hetero")
            .with_group("a", affine(&z, 0.0, 1.0))
            .with_group("b", affine(&z, 0.3, 5.0))
            .with_group("c", affine(&z, -0.2, 1.0));
        let r = analyze_measure(&g, &AnalysisOptions::default()).unwrap();
        assert_eq!(r.path, AnalysisPath::Welch);
        assert_eq!(r.homogeneous(0.05), Some(false));
        assert!(r.is_consistent());
    }

    #[test]
    fn homoscedastic_goes_classic() {
        let z = normal_scores(30);
        let g = SampleGroups::new("homo")
            .with_group("a", affine(&z, 0.0, 1.0))
            .with_group("b", affine(&z, 0.8, 1.0))
            .with_group("c", affine(&z, -0.2, 1.0));
        let r = analyze_measure(&g, &AnalysisOptions::default()).unwrap();
        assert_eq!(r.path, AnalysisPath::Classic);
        assert_eq!(r.homogeneous(0.05), Some(true));
        assert_eq!(r.posthoc.len(), 3);
        assert!(r.is_consistent());
    }

    #[test]
    fn raw_residual_pooling_rejects_scale_mixtures() {
        let z = normal_scores(30);
        let g = SampleGroups::new("hetero")
            .with_group("a", affine(&z, 0.0, 1.0))
            .with_group("b", affine(&z, 0.3, 5.0))
            .with_group("c", affine(&z, -0.2, 1.0));
        let opts = AnalysisOptions {
            normality: NormalityMode::PooledResiduals,
            ..Default::default()
        };
        let r = analyze_measure(&g, &opts).unwrap();
        assert_eq!(r.path, AnalysisPath::Nonparametric);
    }

    #[test]
    fn per_group_mode_runs_one_test_per_group() {
        let z = normal_scores(20);
        let g = SampleGroups::new("m")
            .with_group("a", affine(&z, 0.0, 1.0))
            .with_group("b", affine(&z, 1.0, 1.0));
        let opts = AnalysisOptions {
            normality: NormalityMode::PerGroup,
            ..Default::default()
        };
        let r = analyze_measure(&g, &opts).unwrap();
        assert_eq!(r.normality.len(), 2);
        assert_eq!(r.path, AnalysisPath::Classic);
    }

    #[test]
    fn all_zero_is_flagged_not_fatal() {
        let g = SampleGroups::from_slices(&[&[0.0; 4], &[0.0; 4], &[0.0; 5]]);
        let r = analyze_measure(&g, &AnalysisOptions::default()).unwrap();
        assert_eq!(r.path, AnalysisPath::Classic);
        assert_eq!(r.omnibus.statistic, 0.0);
        assert_eq!(r.omnibus.p, 1.0);
        assert_eq!(r.omnibus.flag, Some(Degeneracy::AllEqual));
    }

    #[test]
    fn constant_but_different_groups() {
        let g = SampleGroups::from_slices(&[&[1.0; 3], &[2.0; 3], &[3.0; 3]]);
        let r = analyze_measure(&g, &AnalysisOptions::default()).unwrap();
        assert_eq!(r.omnibus.p, 0.0);
        assert!(r.posthoc.is_empty());
        assert!(r.is_consistent());
    }
}
