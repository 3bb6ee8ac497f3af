//! Study protocol: condition assignment, session timing, exclusions,
//! participant CSV files and the per-measure report table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::measures::{delta, BatteryPhase, DeltaScores, Measure, MeasuresError, ScaleBattery, ScaleSet};
use crate::stats::{
    analyze_measure, levene_centered, mean, std_dev, AnalysisOptions, AnalysisPath, AnalysisResult,
    SampleGroups, StatsError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("condition weights must be finite, non-negative and not all zero")]
    ZeroWeights,
    #[error("condition `{condition}` has {got} participants; at least 3 are needed")]
    InsufficientGroups { condition: Condition, got: usize },
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("participant `{0}` has no post-intervention battery")]
    MissingPost(String),
    #[error("measure `{measure}`: {source}")]
    Stats {
        measure: Measure,
        #[source]
        source: StatsError,
    },
    #[error(transparent)]
    Measures(#[from] MeasuresError),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    FutureYou,
    Chat,
    Questionnaire,
    Control,
}

impl Condition {
    /// Report column order.
    pub const ALL: [Condition; 4] = [
        Condition::FutureYou,
        Condition::Chat,
        Condition::Questionnaire,
        Condition::Control,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Condition::FutureYou => "future_you",
            Condition::Chat => "chat",
            Condition::Questionnaire => "questionnaire",
            Condition::Control => "control",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::FutureYou => "Future You",
            Condition::Chat => "Chat",
            Condition::Questionnaire => "Questionnaire",
            Condition::Control => "Control",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Condition::FutureYou => "life-story survey, aged portrait and a chat with the future self",
            Condition::Chat => "chat with a generic assistant",
            Condition::Questionnaire => "life-story survey without any chat",
            Condition::Control => "pre and post scales only",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, ExperimentError> {
        Self::ALL
            .into_iter()
            .find(|c| c.id() == id)
            .ok_or_else(|| ExperimentError::UnknownCondition(id.to_string()))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

pub fn equal_weights() -> BTreeMap<Condition, f64> {
    Condition::ALL.into_iter().map(|c| (c, 1.0)).collect()
}

/// Deterministic weighted assignment from a hash of `(seed, participant_id)`.
pub fn assign_condition(
    participant_id: &str,
    weights: &BTreeMap<Condition, f64>,
    seed: u64,
) -> Result<Condition, ExperimentError> {
    if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(ExperimentError::ZeroWeights);
    }
    let total: f64 = weights.values().sum();
    if total <= 0.0 {
        return Err(ExperimentError::ZeroWeights);
    }
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(participant_id.as_bytes())
        .finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    let u = (bits >> 11) as f64 / (1u64 << 53) as f64;
    let target = u * total;
    let mut cumulative = 0.0;
    let mut last = None;
    for c in Condition::ALL {
        let w = weights.get(&c).copied().unwrap_or(0.0);
        if w == 0.0 {
            continue;
        }
        cumulative += w;
        last = Some(c);
        if target < cumulative {
            return Ok(c);
        }
    }
    Ok(last.expect("some weight is positive"))
}

/// Minimum and maximum minutes of the intervention, where the protocol
/// sets any.
pub fn session_time_bounds(condition: Condition) -> Option<(u32, u32)> {
    match condition {
        Condition::FutureYou => Some((10, 30)),
        Condition::Chat | Condition::Questionnaire | Condition::Control => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFlag {
    UnderMinimum,
    OverMaximum,
}

impl TimeFlag {
    pub fn id(self) -> &'static str {
        match self {
            TimeFlag::UnderMinimum => "under_minimum",
            TimeFlag::OverMaximum => "over_maximum",
        }
    }
}

/// Flags a session outside its condition's time bounds; such records are
/// kept in the analysis.
pub fn time_flag(condition: Condition, started: DateTime<Utc>, ended: DateTime<Utc>) -> Option<TimeFlag> {
    let (min, max) = session_time_bounds(condition)?;
    let seconds = (ended - started).num_seconds();
    if seconds < i64::from(min) * 60 {
        Some(TimeFlag::UnderMinimum)
    } else if seconds > i64::from(max) * 60 {
        Some(TimeFlag::OverMaximum)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub condition: Condition,
    pub pre: ScaleBattery,
    pub post: Option<ScaleBattery>,
    pub attention_passed: bool,
    pub technical_issue: bool,
    pub demographics: BTreeMap<String, String>,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
}

impl ParticipantRecord {
    pub fn time_flag(&self) -> Option<TimeFlag> {
        self.ended_at.and_then(|end| time_flag(self.condition, self.started_at, end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    AttentionCheck,
    TechnicalIssue,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exclusions {
    pub kept: Vec<ParticipantRecord>,
    pub excluded: Vec<(ParticipantRecord, Vec<ExclusionReason>)>,
}

/// Drops attention-check failures, technical issues and records without a
/// post battery, preserving order.
pub fn apply_exclusions(records: Vec<ParticipantRecord>) -> Exclusions {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        let mut reasons = Vec::new();
        if !r.attention_passed {
            reasons.push(ExclusionReason::AttentionCheck);
        }
        if r.technical_issue {
            reasons.push(ExclusionReason::TechnicalIssue);
        }
        if r.post.is_none() {
            reasons.push(ExclusionReason::Incomplete);
        }
        if reasons.is_empty() {
            kept.push(r);
        } else {
            excluded.push((r, reasons));
        }
    }
    Exclusions { kept, excluded }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub participant_id: String,
    pub condition: Condition,
    pub deltas: DeltaScores,
}

pub fn deltas_of(records: &[ParticipantRecord], set: &ScaleSet) -> Result<Vec<DeltaRecord>, ExperimentError> {
    records
        .iter()
        .map(|r| {
            let post = r
                .post
                .as_ref()
                .ok_or_else(|| ExperimentError::MissingPost(r.participant_id.clone()))?;
            Ok(DeltaRecord {
                participant_id: r.participant_id.clone(),
                condition: r.condition,
                deltas: delta(&r.pre, post, set)?,
            })
        })
        .collect()
}

/// Significance marks: * p<.05, ** p<.01, *** p<.001, **** p<.0001.
pub fn stars(p: f64) -> &'static str {
    if p < 1e-4 {
        "****"
    } else if p < 1e-3 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Four decimals, or two-digit scientific notation below 1e-4.
pub fn format_p(p: f64) -> String {
    if p >= 1e-4 || p == 0.0 {
        return format!("{p:.4}");
    }
    let s = format!("{p:.2e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn format_cell(m: f64, sd: f64) -> String {
    format!("{m:.2} ± {sd:.2}")
}

pub fn path_label(path: AnalysisPath) -> &'static str {
    match path {
        AnalysisPath::Welch => "Welch",
        AnalysisPath::Classic => "One-way",
        AnalysisPath::Nonparametric => "Kruskal-Wallis",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub measure: Measure,
    /// Levene verdict at alpha; `None` when it could not be computed.
    pub homogeneity: Option<bool>,
    pub path: AnalysisPath,
    pub statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub summaries: Vec<ConditionSummary>,
    pub stars: String,
    pub analysis: AnalysisResult,
}

pub const REPORT_HEADER: [&str; 10] = [
    "Measure",
    "Homogeneity",
    "ANOVA Type",
    "F-statistic",
    "p-value",
    "Future You",
    "Chat",
    "Questionnaire",
    "Control",
    "df",
];

impl ReportRow {
    /// Formatted cells, in [`REPORT_HEADER`] order.
    pub fn cells(&self) -> Vec<String> {
        let homogeneity = match self.homogeneity {
            Some(true) => "Yes",
            Some(false) => "No",
            None => "n/a",
        };
        // Kruskal-Wallis reports a single chi-square df.
        let df = if self.path == AnalysisPath::Nonparametric {
            format!("{}", self.df1)
        } else if self.df2.fract() == 0.0 {
            format!("{},{}", self.df1, self.df2)
        } else {
            format!("{},{:.2}", self.df1, self.df2)
        };
        let mut cells = vec![
            self.measure.label().to_string(),
            homogeneity.to_string(),
            path_label(self.path).to_string(),
            format!("{:.3}", self.statistic),
            format!("{}{}", format_p(self.p), self.stars),
        ];
        cells.extend(self.summaries.iter().map(|s| format_cell(s.mean, s.sd)));
        cells.push(df);
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub alpha: f64,
    pub n_per_condition: BTreeMap<Condition, usize>,
    pub rows: Vec<ReportRow>,
}

/// Deltas of the given (already filtered) records, analyzed per measure.
pub fn build_report(
    records: &[ParticipantRecord],
    set: &ScaleSet,
    options: &AnalysisOptions,
) -> Result<Report, ExperimentError> {
    build_report_from_deltas(&deltas_of(records, set)?, options)
}

pub fn build_report_from_deltas(
    records: &[DeltaRecord],
    options: &AnalysisOptions,
) -> Result<Report, ExperimentError> {
    let mut n_per_condition = BTreeMap::new();
    for c in Condition::ALL {
        let got = records.iter().filter(|r| r.condition == c).count();
        if got < 3 {
            return Err(ExperimentError::InsufficientGroups { condition: c, got });
        }
        n_per_condition.insert(c, got);
    }
    let mut rows = Vec::with_capacity(Measure::ALL.len());
    for measure in Measure::ALL {
        let mut groups = SampleGroups::new(measure.id());
        for c in Condition::ALL {
            let values = records
                .iter()
                .filter(|r| r.condition == c)
                .map(|r| r.deltas.get(measure))
                .collect();
            groups = groups.with_group(c.id(), values);
        }
        let analysis =
            analyze_measure(&groups, options).map_err(|source| ExperimentError::Stats { measure, source })?;
        let homogeneity = match &analysis.homogeneity {
            Some(t) => Some(t.p >= options.alpha),
            None => levene_centered(&groups, options.levene_center)
                .ok()
                .map(|t| t.p >= options.alpha),
        };
        let summaries = Condition::ALL
            .iter()
            .zip(&groups.groups)
            .map(|(c, g)| ConditionSummary {
                condition: *c,
                n: g.values.len(),
                mean: mean(&g.values),
                sd: std_dev(&g.values),
            })
            .collect();
        let omnibus = &analysis.omnibus;
        rows.push(ReportRow {
            measure,
            homogeneity,
            path: analysis.path,
            statistic: omnibus.statistic,
            df1: omnibus.df1,
            df2: omnibus.df2,
            p: omnibus.p,
            summaries,
            stars: stars(omnibus.p).to_string(),
            analysis,
        });
    }
    Ok(Report {
        alpha: options.alpha,
        n_per_condition,
        rows,
    })
}

impl Report {
    /// Column-aligned plain text.
    pub fn to_text(&self) -> String {
        let mut table: Vec<Vec<String>> = vec![REPORT_HEADER.iter().map(|s| s.to_string()).collect()];
        table.extend(self.rows.iter().map(ReportRow::cells));
        let widths: Vec<usize> = (0..REPORT_HEADER.len())
            .map(|i| table.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (ri, row) in table.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if ri == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        let counts: Vec<String> = self
            .n_per_condition
            .iter()
            .map(|(c, n)| format!("{} n={n}", c.label()))
            .collect();
        out.push_str(&format!(
            "\n{}\n* p<0.05; ** p<0.01; *** p<0.001; **** p<0.0001\n",
            counts.join(", ")
        ));
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = REPORT_HEADER.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.cells().join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fixed_columns() -> [&'static str; 7] {
    [
        "participant_id",
        "condition",
        "attention_passed",
        "technical_issue",
        "started_at",
        "ended_at",
        "time_flag",
    ]
}

/// Writes one row per participant: the fixed columns, `demo_<key>` for
/// every demographic key, `pre_<item>` and `post_<item>` responses, then
/// `delta_<measure>` (empty unless both batteries are complete).
pub fn write_participants_csv<W: Write>(
    records: &[ParticipantRecord],
    set: &ScaleSet,
    out: W,
) -> Result<(), ExperimentError> {
    let demo_keys: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.demographics.keys().map(String::as_str))
        .collect();
    let pre_items = set.item_ids(BatteryPhase::Pre);
    let post_items = set.item_ids(BatteryPhase::Post);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = fixed_columns().iter().map(|s| s.to_string()).collect();
    header.extend(demo_keys.iter().map(|k| format!("demo_{k}")));
    header.extend(pre_items.iter().map(|i| format!("pre_{i}")));
    header.extend(post_items.iter().map(|i| format!("post_{i}")));
    header.extend(Measure::ALL.iter().map(|m| format!("delta_{}", m.id())));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.participant_id.clone(),
            r.condition.id().to_string(),
            r.attention_passed.to_string(),
            r.technical_issue.to_string(),
            r.started_at.to_rfc3339(),
            r.ended_at.map(|t| t.to_rfc3339()).unwrap_or_default(),
            r.time_flag().map(|f| f.id().to_string()).unwrap_or_default(),
        ];
        row.extend(demo_keys.iter().map(|k| r.demographics.get(*k).cloned().unwrap_or_default()));
        row.extend(pre_items.iter().map(|i| {
            r.pre.responses.get(*i).map(u8::to_string).unwrap_or_default()
        }));
        row.extend(post_items.iter().map(|i| {
            r.post
                .as_ref()
                .and_then(|b| b.responses.get(*i))
                .map(u8::to_string)
                .unwrap_or_default()
        }));
        match r.post.as_ref().map(|post| delta(&r.pre, post, set)) {
            Some(Ok(d)) => row.extend(Measure::ALL.iter().map(|m| d.get(*m).to_string())),
            _ => row.extend(Measure::ALL.iter().map(|_| String::new())),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ExperimentError::Csv(e.to_string()))?;
    Ok(())
}

fn parse_bool(s: &str, col: &str) -> Result<bool, ExperimentError> {
    s.parse()
        .map_err(|_| ExperimentError::Csv(format!("column {col}: `{s}` is not true/false")))
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, ExperimentError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| ExperimentError::Csv(format!("timestamp `{s}`: {e}")))
}

pub fn read_participants_csv<R: Read>(input: R) -> Result<Vec<ParticipantRecord>, ExperimentError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for col in fixed_columns() {
        if !header.iter().any(|h| h == col) {
            return Err(ExperimentError::Csv(format!("missing column {col}")));
        }
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |col: &str| -> &str {
            header
                .iter()
                .position(|h| h == col)
                .and_then(|i| row.get(i))
                .unwrap_or_default()
        };
        let mut pre = ScaleBattery::new(BatteryPhase::Pre);
        let mut post = ScaleBattery::new(BatteryPhase::Post);
        let mut demographics = BTreeMap::new();
        for (h, v) in header.iter().zip(row.iter()) {
            if v.is_empty() {
                continue;
            }
            let response = |item: &str| -> Result<(String, u8), ExperimentError> {
                let value = v
                    .parse::<u8>()
                    .map_err(|_| ExperimentError::Csv(format!("column {h}: `{v}` is not a response")))?;
                Ok((item.to_string(), value))
            };
            if let Some(k) = h.strip_prefix("demo_") {
                demographics.insert(k.to_string(), v.to_string());
            } else if let Some(item) = h.strip_prefix("pre_") {
                let (k, val) = response(item)?;
                pre.responses.insert(k, val);
            } else if let Some(item) = h.strip_prefix("post_") {
                let (k, val) = response(item)?;
                post.responses.insert(k, val);
            }
        }
        let ended = get("ended_at");
        records.push(ParticipantRecord {
            participant_id: get("participant_id").to_string(),
            condition: Condition::from_id(get("condition"))?,
            pre,
            post: (!post.responses.is_empty()).then_some(post),
            attention_passed: parse_bool(get("attention_passed"), "attention_passed")?,
            technical_issue: parse_bool(get("technical_issue"), "technical_issue")?,
            demographics,
            started_at: parse_time(get("started_at"))?,
            ended_at: if ended.is_empty() { None } else { Some(parse_time(ended)?) },
        });
    }
    Ok(records)
}

/// `participant_id, condition` and one column per measure id.
pub fn write_deltas_csv<W: Write>(records: &[DeltaRecord], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["participant_id".to_string(), "condition".to_string()];
    header.extend(Measure::ALL.iter().map(|m| m.id().to_string()));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.participant_id.clone(), r.condition.id().to_string()];
        row.extend(Measure::ALL.iter().map(|m| r.deltas.get(*m).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ExperimentError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_deltas_csv<R: Read>(input: R) -> Result<Vec<DeltaRecord>, ExperimentError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExperimentError::Csv(format!("missing column {name}")))
    };
    let id_col = column("participant_id")?;
    let cond_col = column("condition")?;
    let measure_cols: Vec<(Measure, usize)> = Measure::ALL
        .iter()
        .map(|m| column(m.id()).map(|i| (*m, i)))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let mut per_measure = BTreeMap::new();
        for (m, i) in &measure_cols {
            let raw = row.get(*i).unwrap_or_default();
            let v: f64 = raw
                .parse()
                .map_err(|_| ExperimentError::Csv(format!("column {}: `{raw}` is not a number", m.id())))?;
            per_measure.insert(*m, v);
        }
        out.push(DeltaRecord {
            participant_id: row.get(id_col).unwrap_or_default().to_string(),
            condition: Condition::from_id(row.get(cond_col).unwrap_or_default())?,
            deltas: DeltaScores::from_map(per_measure)?,
        });
    }
    Ok(out)
}

/// Reads either a participant CSV or a deltas CSV, by header.
pub fn read_any_csv(text: &str, set: &ScaleSet) -> Result<Vec<DeltaRecord>, ExperimentError> {
    let first = text.lines().next().unwrap_or_default();
    if first.split(',').any(|h| h == "attention_passed") {
        let kept = apply_exclusions(read_participants_csv(text.as_bytes())?).kept;
        deltas_of(&kept, set)
    } else {
        read_deltas_csv(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap()
    }

    #[test]
    fn degenerate_weights() {
        let mut w: BTreeMap<Condition, f64> = Condition::ALL.into_iter().map(|c| (c, 0.0)).collect();
        assert!(matches!(assign_condition("a", &w, 1), Err(ExperimentError::ZeroWeights)));
        w.insert(Condition::FutureYou, 1.0);
        for i in 0..200 {
            assert_eq!(assign_condition(&format!("p{i}"), &w, 9).unwrap(), Condition::FutureYou);
        }
        w.insert(Condition::Chat, -1.0);
        assert!(assign_condition("a", &w, 1).is_err());
    }

    #[test]
    fn assignment_is_deterministic_and_balanced() {
        let w = equal_weights();
        assert_eq!(assign_condition("p7", &w, 3).unwrap(), assign_condition("p7", &w, 3).unwrap());
        let mut counts: BTreeMap<Condition, usize> = BTreeMap::new();
        let n = 100_000;
        for i in 0..n {
            *counts.entry(assign_condition(&format!("participant-{i}"), &w, 42).unwrap()).or_default() += 1;
        }
        for c in Condition::ALL {
            let share = counts[&c] as f64 / n as f64;
            assert!((share - 0.25).abs() < 0.01, "{c}: {share}");
        }
    }

    #[test]
    fn time_bounds() {
        assert_eq!(session_time_bounds(Condition::FutureYou), Some((10, 30)));
        assert_eq!(session_time_bounds(Condition::Control), None);
        assert_eq!(session_time_bounds(Condition::Questionnaire), None);
        let c = Condition::FutureYou;
        assert_eq!(time_flag(c, t0(), t0() + chrono::Duration::minutes(9)), Some(TimeFlag::UnderMinimum));
        assert_eq!(time_flag(c, t0(), t0() + chrono::Duration::minutes(10)), None);
        assert_eq!(time_flag(c, t0(), t0() + chrono::Duration::minutes(31)), Some(TimeFlag::OverMaximum));
        assert_eq!(time_flag(Condition::Chat, t0(), t0()), None);
    }

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.0017), "0.0017");
        assert_eq!(format_p(1.76e-5), "1.76e-05");
        assert_eq!(format_p(6.58e-6), "6.58e-06");
        assert_eq!(format_p(0.00012), "0.0001");
        assert_eq!(format_p(1.0), "1.0000");
        assert_eq!(format_p(3.2e-120), "3.20e-120");
        assert_eq!(stars(0.0017), "**");
        assert_eq!(stars(0.00012), "***");
        assert_eq!(stars(2.49e-5), "****");
        assert_eq!(stars(0.0573), "");
        assert_eq!(stars(0.049), "*");
        assert_eq!(format_cell(-0.63, 1.2), "-0.63 ± 1.20");
    }

    fn record(id: &str, attention: bool, technical: bool) -> ParticipantRecord {
        ParticipantRecord {
            participant_id: id.into(),
            condition: Condition::Control,
            pre: ScaleBattery::new(BatteryPhase::Pre),
            post: Some(ScaleBattery::new(BatteryPhase::Post)),
            attention_passed: attention,
            technical_issue: technical,
            demographics: BTreeMap::new(),
            started_at: t0(),
            ended_at: None,
        }
    }

    #[test]
    fn exclusions_keep_order_and_reasons() {
        let records = vec![
            record("a", true, false),
            record("b", false, false),
            record("c", true, true),
            record("d", true, false),
            record("e", false, true),
        ];
        let ex = apply_exclusions(records);
        let kept: Vec<&str> = ex.kept.iter().map(|r| r.participant_id.as_str()).collect();
        assert_eq!(kept, ["a", "d"]);
        assert_eq!(
            ex.excluded[2].1,
            [ExclusionReason::AttentionCheck, ExclusionReason::TechnicalIssue]
        );
        assert!(apply_exclusions(vec![record("x", false, false)]).kept.is_empty());
        assert!(apply_exclusions(Vec::new()).kept.is_empty());
    }

    fn zero_deltas(c: Condition, i: usize) -> DeltaRecord {
        DeltaRecord {
            participant_id: format!("{c}-{i}"),
            condition: c,
            deltas: DeltaScores::from_map(Measure::ALL.iter().map(|m| (*m, 0.0)).collect()).unwrap(),
        }
    }

    #[test]
    fn all_zero_report() {
        let records: Vec<DeltaRecord> = Condition::ALL
            .iter()
            .flat_map(|c| (0..4).map(move |i| zero_deltas(*c, i)))
            .collect();
        let report = build_report_from_deltas(&records, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 15);
        for row in &report.rows {
            assert_eq!(row.statistic, 0.0);
            assert_eq!(row.p, 1.0);
            assert_eq!(row.stars, "");
            assert_eq!(row.cells()[5], "0.00 ± 0.00");
        }
    }

    #[test]
    fn insufficient_groups() {
        let records: Vec<DeltaRecord> = Condition::ALL
            .iter()
            .flat_map(|c| (0..if *c == Condition::Chat { 2 } else { 5 }).map(move |i| zero_deltas(*c, i)))
            .collect();
        assert!(matches!(
            build_report_from_deltas(&records, &AnalysisOptions::default()),
            Err(ExperimentError::InsufficientGroups { condition: Condition::Chat, got: 2 })
        ));
    }

    #[test]
    fn deltas_csv_round_trip() {
        let mut r = zero_deltas(Condition::Chat, 1);
        r.deltas.per_measure.insert(Measure::Anxious, -0.1 + 1.0 / 3.0);
        let mut buf = Vec::new();
        write_deltas_csv(&[r.clone()], &mut buf).unwrap();
        assert_eq!(read_deltas_csv(buf.as_slice()).unwrap(), vec![r]);
    }

    #[test]
    fn participants_csv_round_trip() {
        let set = ScaleSet::default();
        let mut r = record("p1", true, false);
        for id in set.item_ids(BatteryPhase::Pre) {
            r.pre.responses.insert(id.into(), 3);
        }
        let mut post = ScaleBattery::new(BatteryPhase::Post);
        for id in set.item_ids(BatteryPhase::Post) {
            post.responses.insert(id.into(), 5);
        }
        r.post = Some(post);
        r.ended_at = Some(t0() + chrono::Duration::minutes(12));
        r.demographics.insert("gender".into(), "female".into());
        let mut buf = Vec::new();
        write_participants_csv(&[r.clone()], &set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("participant_id,condition,attention_passed,technical_issue,started_at,ended_at,time_flag,demo_gender,pre_eac_happy"));
        assert_eq!(read_participants_csv(text.as_bytes()).unwrap(), vec![r]);
    }
}
