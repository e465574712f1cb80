//! Batch screening outputs: traffic-light verdicts, flag summaries, group
//! breakdowns, firm co-bidding matrices and cluster suspicioucy rates.
//!
//! Counts are kept as integers; percentages are only formed for display,
//! rounded half-up.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FirmId, Tender, TenderId};
use crate::models::{ModelArtifact, ModelError};
use crate::screens::{self, ScreenConfig, ScreenVector};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("InvalidThresholds: need 0 < {low} < {high} < 1")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("InvalidProbability: {0} is not in [0, 1]")]
    InvalidProbability(f64),
    #[error("EmptyInput: no verdicts")]
    EmptyInput,
    #[error("TooManyFirms: {count} firms exceed the enumeration limit of {max}")]
    TooManyFirms { count: usize, max: usize },
    #[error("UnknownTender: verdict for `{0}` has no tender")]
    UnknownTender(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Light {
    Green,
    Suspicious,
    VerySuspicious,
}

impl Light {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Green => "green",
            Self::Suspicious => "suspicious",
            Self::VerySuspicious => "very_suspicious",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 0.5, high: 0.7 }
    }
}

impl Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, ReportError> {
        let t = Self { low, high };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if 0.0 < self.low && self.low < self.high && self.high < 1.0 {
            Ok(())
        } else {
            Err(ReportError::InvalidThresholds {
                low: self.low,
                high: self.high,
            })
        }
    }
}

pub fn traffic_light(probability: f64, thresholds: Thresholds) -> Result<Light, ReportError> {
    thresholds.validate()?;
    if !(0.0..=1.0).contains(&probability) {
        return Err(ReportError::InvalidProbability(probability));
    }
    Ok(if probability < thresholds.low {
        Light::Green
    } else if probability < thresholds.high {
        Light::Suspicious
    } else {
        Light::VerySuspicious
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub tender_id: TenderId,
    pub probability: f64,
    pub light: Light,
    pub model_id: String,
}

impl Verdict {
    pub fn flagged_at(&self, threshold: f64) -> bool {
        self.probability >= threshold
    }
}

/// Integer percentage of `num / den`, rounded half-up.
pub fn percent_rounded(num: usize, den: usize) -> u64 {
    let (n, d) = (num as u128, den as u128);
    ((200 * n + d) / (2 * d)) as u64
}

/// `num / den` as a percentage with one decimal, rounded half-up: "8.5".
pub fn percent_one_decimal(num: usize, den: usize) -> String {
    let (n, d) = (num as u128, den as u128);
    let tenths = (2000 * n + d) / (2 * d);
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// "102 (8.5%)".
pub fn count_share(count: usize, total: usize) -> String {
    if total == 0 {
        return format!("{count} (n/a)");
    }
    format!("{count} ({}%)", percent_one_decimal(count, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub threshold: f64,
    pub total: usize,
    pub flagged: usize,
    pub not_flagged: usize,
}

impl Summary {
    pub fn flagged_display(&self) -> String {
        count_share(self.flagged, self.total)
    }

    pub fn not_flagged_display(&self) -> String {
        count_share(self.not_flagged, self.total)
    }

    pub fn flagged_share(&self) -> f64 {
        self.flagged as f64 / self.total as f64
    }
}

/// Flagged (`probability >= threshold`) versus not flagged.
pub fn summarize(verdicts: &[Verdict], threshold: f64) -> Result<Summary, ReportError> {
    if verdicts.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let flagged = verdicts.iter().filter(|v| v.flagged_at(threshold)).count();
    Ok(Summary {
        threshold,
        total: verdicts.len(),
        flagged,
        not_flagged: verdicts.len() - flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Region,
    Procedure,
    Year,
}

impl GroupBy {
    pub const ALL: [GroupBy; 3] = [Self::Region, Self::Procedure, Self::Year];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Region => "region",
            Self::Procedure => "procedure",
            Self::Year => "year",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }

    pub fn key(&self, tender: &Tender) -> String {
        let known = match self {
            Self::Region => tender.region.clone().filter(|r| !r.is_empty()),
            Self::Procedure => match tender.procedure {
                crate::data::Procedure::Unknown => None,
                p => Some(p.as_str().to_string()),
            },
            Self::Year => tender.date.year().map(|y| y.to_string()),
        };
        known.unwrap_or_else(|| UNKNOWN_GROUP.to_string())
    }
}

pub const UNKNOWN_GROUP: &str = "unknown";
pub const ALL_GROUP: &str = "All";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub total: usize,
    pub flagged: usize,
    pub not_flagged: usize,
}

impl GroupRow {
    /// "27 (8.7%) / 283 (91.3%)".
    pub fn display(&self) -> String {
        format!(
            "{} / {}",
            count_share(self.flagged, self.total),
            count_share(self.not_flagged, self.total)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBreakdown {
    pub group_by: GroupBy,
    pub threshold: f64,
    pub min_group_size: usize,
    /// Groups in key order, "unknown" last; only groups above the size filter.
    pub groups: Vec<GroupRow>,
    /// Every verdict, regardless of the filter.
    pub all: GroupRow,
}

fn tender_index(dataset: &Dataset) -> HashMap<&TenderId, &Tender> {
    dataset.tenders.iter().map(|t| (&t.tender_id, t)).collect()
}

/// Flag shares per group. Groups with `min_group_size` or fewer tenders are
/// left out of `groups` but still counted in `all`.
pub fn cluster_breakdown(
    verdicts: &[Verdict],
    dataset: &Dataset,
    group_by: GroupBy,
    threshold: f64,
    min_group_size: usize,
) -> Result<ClusterBreakdown, ReportError> {
    if verdicts.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let index = tender_index(dataset);
    let mut counts: BTreeMap<(bool, String), (usize, usize)> = BTreeMap::new();
    for v in verdicts {
        let t = index
            .get(&v.tender_id)
            .ok_or_else(|| ReportError::UnknownTender(v.tender_id.0.clone()))?;
        let key = group_by.key(t);
        let e = counts.entry((key == UNKNOWN_GROUP, key)).or_default();
        e.0 += 1;
        e.1 += usize::from(v.flagged_at(threshold));
    }
    let row = |group: String, total: usize, flagged: usize| GroupRow {
        group,
        total,
        flagged,
        not_flagged: total - flagged,
    };
    let all_flagged = verdicts.iter().filter(|v| v.flagged_at(threshold)).count();
    Ok(ClusterBreakdown {
        group_by,
        threshold,
        min_group_size,
        groups: counts
            .into_iter()
            .filter(|(_, (total, _))| *total > min_group_size)
            .map(|((_, key), (total, flagged))| row(key, total, flagged))
            .collect(),
        all: row(ALL_GROUP.to_string(), verdicts.len(), all_flagged),
    })
}

/// Orders ids like "firm2" before "firm10" by comparing digit runs
/// numerically.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(&cb) {
        let ord = if *da && *db {
            let (ta, tb) = (sa.trim_start_matches('0'), sb.trim_start_matches('0'));
            ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb))
        } else {
            sa.cmp(sb)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub suspicious: usize,
    pub total: usize,
}

impl Cell {
    /// "22% (7/32)".
    pub fn display(&self) -> String {
        format!(
            "{}% ({}/{})",
            percent_rounded(self.suspicious, self.total),
            self.suspicious,
            self.total
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub threshold: f64,
    pub min_suspicious: usize,
    pub firms: Vec<FirmId>,
    /// `cells[i][j - i]` holds pair `(i, j)` for `j >= i`; `None` when the two
    /// firms never bid in the same tender.
    pub cells: Vec<Vec<Option<Cell>>>,
}

impl InteractionMatrix {
    pub fn cell(&self, i: usize, j: usize) -> Option<Cell> {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.cells.get(a).and_then(|row| row.get(b - a)).copied().flatten()
    }

    pub fn index_of(&self, firm: &str) -> Option<usize> {
        self.firms.iter().position(|f| f.as_str() == firm)
    }

    /// Upper-triangular text table with "P% (s/t)" cells.
    pub fn render(&self) -> String {
        let k = self.firms.len();
        let mut grid = vec![vec![String::new(); k + 1]; k + 1];
        for (i, f) in self.firms.iter().enumerate() {
            grid[0][i + 1] = f.to_string();
            grid[i + 1][0] = f.to_string();
            for j in i..k {
                grid[i + 1][j + 1] = self.cell(i, j).map(|c| c.display()).unwrap_or_default();
            }
        }
        let widths: Vec<usize> = (0..=k)
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Per-tender suspicious flag looked up by id.
fn flag_map(verdicts: &[Verdict], threshold: f64) -> HashMap<&TenderId, bool> {
    verdicts.iter().map(|v| (&v.tender_id, v.flagged_at(threshold))).collect()
}

/// Firms with at least `min_suspicious` suspicious tenders that also bid
/// alongside another such firm. Only tenders with a verdict are counted.
pub fn interaction_matrix(
    dataset: &Dataset,
    verdicts: &[Verdict],
    threshold: f64,
    min_suspicious: usize,
) -> InteractionMatrix {
    let flags = flag_map(verdicts, threshold);
    let screened: Vec<(&Tender, bool)> = dataset
        .tenders
        .iter()
        .filter_map(|t| flags.get(&t.tender_id).map(|&f| (t, f)))
        .collect();

    let mut own: HashMap<&FirmId, Cell> = HashMap::new();
    for (t, flagged) in &screened {
        let firms: HashSet<&FirmId> = t.firms().collect();
        for f in firms {
            let c = own.entry(f).or_insert(Cell { suspicious: 0, total: 0 });
            c.total += 1;
            c.suspicious += usize::from(*flagged);
        }
    }
    let heavy: HashSet<&FirmId> = own
        .iter()
        .filter(|(_, c)| c.suspicious >= min_suspicious)
        .map(|(f, _)| *f)
        .collect();
    let mut partners: HashSet<&FirmId> = HashSet::new();
    for (t, _) in &screened {
        let present: Vec<&FirmId> = t.firms().filter(|f| heavy.contains(f)).collect();
        let distinct: HashSet<&FirmId> = present.iter().copied().collect();
        if distinct.len() >= 2 {
            partners.extend(distinct);
        }
    }
    let mut firms: Vec<&FirmId> = partners.into_iter().collect();
    firms.sort_by(|a, b| {
        own[b]
            .suspicious
            .cmp(&own[a].suspicious)
            .then_with(|| natural_cmp(a.as_str(), b.as_str()))
    });
    let pos: HashMap<&FirmId, usize> = firms.iter().enumerate().map(|(i, f)| (*f, i)).collect();
    let k = firms.len();
    let mut cells: Vec<Vec<Option<Cell>>> = (0..k).map(|i| vec![None; k - i]).collect();
    for (i, f) in firms.iter().enumerate() {
        cells[i][0] = Some(own[f]);
    }
    for (t, flagged) in &screened {
        let mut idx: Vec<usize> = t.firms().filter_map(|f| pos.get(f).copied()).collect();
        idx.sort_unstable();
        idx.dedup();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let c = cells[i][j - i].get_or_insert(Cell { suspicious: 0, total: 0 });
                c.total += 1;
                c.suspicious += usize::from(*flagged);
            }
        }
    }
    InteractionMatrix {
        threshold,
        min_suspicious,
        firms: firms.into_iter().cloned().collect(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Tenders with at least one cluster firm.
    WithDiagonal,
    /// Tenders with at least two cluster firms.
    WithoutDiagonal,
}

impl ClusterMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WithDiagonal => "with_diagonal",
            Self::WithoutDiagonal => "without_diagonal",
        }
    }

    pub fn min_members(&self) -> u32 {
        match self {
            Self::WithDiagonal => 1,
            Self::WithoutDiagonal => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRate {
    pub cluster: Vec<FirmId>,
    pub mode: ClusterMode,
    pub suspicious: usize,
    pub total: usize,
    pub rate: Option<f64>,
    /// Empty and single-firm clusters.
    pub degenerate: bool,
}

pub const DEFAULT_MAX_FIRMS: usize = 20;

/// Tender count per exact set of cluster firms present (bitmask over
/// `firms`), split into `(suspicious, total)`.
fn mask_counts(firms: &[FirmId], dataset: &Dataset, verdicts: &[Verdict], threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let flags = flag_map(verdicts, threshold);
    let bit: HashMap<&FirmId, usize> = firms.iter().enumerate().map(|(i, f)| (f, i)).collect();
    let size = 1usize << firms.len();
    let (mut sus, mut tot) = (vec![0usize; size], vec![0usize; size]);
    for t in &dataset.tenders {
        let Some(&flagged) = flags.get(&t.tender_id) else {
            continue;
        };
        let mask = t.firms().filter_map(|f| bit.get(f)).fold(0usize, |m, &b| m | (1 << b));
        tot[mask] += 1;
        sus[mask] += usize::from(flagged);
    }
    (sus, tot)
}

/// In-place subset sums: `v[t] = sum of v[m] over m ⊆ t`.
fn subset_sums(v: &mut [usize], k: usize) {
    for b in 0..k {
        for t in 0..v.len() {
            if t & (1 << b) != 0 {
                v[t] += v[t ^ (1 << b)];
            }
        }
    }
}

/// Suspicioucy rate of every subset of `firms` (including the empty and
/// single-firm clusters), ranked by rate (undefined last), then larger
/// total, then cluster ids.
pub fn suspicioucy_rates(
    firms: &[FirmId],
    dataset: &Dataset,
    verdicts: &[Verdict],
    threshold: f64,
    mode: ClusterMode,
    max_firms: usize,
) -> Result<Vec<ClusterRate>, ReportError> {
    let k = firms.len();
    if k > max_firms || k >= usize::BITS as usize - 1 {
        return Err(ReportError::TooManyFirms { count: k, max: max_firms });
    }
    let mut ordered = firms.to_vec();
    ordered.sort_by(|a, b| natural_cmp(a.as_str(), b.as_str()));
    ordered.dedup();
    let k = ordered.len();
    let (mut sus, mut tot) = mask_counts(&ordered, dataset, verdicts, threshold);
    subset_sums(&mut sus, k);
    subset_sums(&mut tot, k);
    let full = (1usize << k) - 1;

    // Tenders meeting the cluster with fewer than the required members are
    // counted through subset sums over the complement.
    let count = |g: &[usize], s: usize| -> usize {
        let outside = full & !s;
        let none = g[outside];
        let mut miss = none;
        if mode == ClusterMode::WithoutDiagonal {
            for b in 0..k {
                if s & (1 << b) != 0 {
                    miss += g[outside | (1 << b)] - none;
                }
            }
        }
        g[full] - miss
    };

    let mut out: Vec<ClusterRate> = (0..=full)
        .map(|s| {
            let total = count(&tot, s);
            let suspicious = count(&sus, s);
            ClusterRate {
                cluster: (0..k).filter(|b| s & (1 << b) != 0).map(|b| ordered[b].clone()).collect(),
                mode,
                suspicious,
                total,
                rate: (total > 0).then(|| suspicious as f64 / total as f64),
                degenerate: s.count_ones() <= 1,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let by_rate = match (a.rate, b.rate) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_rate.then_with(|| b.total.cmp(&a.total)).then_with(|| {
            let ka: Vec<&str> = a.cluster.iter().map(FirmId::as_str).collect();
            let kb: Vec<&str> = b.cluster.iter().map(FirmId::as_str).collect();
            ka.iter()
                .zip(&kb)
                .map(|(x, y)| natural_cmp(x, y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or_else(|| ka.len().cmp(&kb.len()))
        })
    });
    Ok(out)
}

/// Scores every tender with the model. Tenders whose screens cannot be
/// computed or stay undefined are returned separately with the reason.
pub fn score_dataset(
    model: &ModelArtifact,
    model_id: &str,
    dataset: &Dataset,
    screen_config: &ScreenConfig,
    thresholds: Thresholds,
) -> Result<(Vec<Verdict>, Vec<(TenderId, String)>), ReportError> {
    thresholds.validate()?;
    let mut verdicts = Vec::with_capacity(dataset.len());
    let mut skipped = Vec::new();
    for t in &dataset.tenders {
        let screens: ScreenVector = match screens::compute_screens(t, screen_config) {
            Ok(s) => s,
            Err(e) => {
                skipped.push((t.tender_id.clone(), e.name().to_string()));
                continue;
            }
        };
        if !screens.is_complete() {
            skipped.push((t.tender_id.clone(), "UndefinedScreen".to_string()));
            continue;
        }
        let probability = model.predict_screens(&screens)?;
        verdicts.push(Verdict {
            tender_id: t.tender_id.clone(),
            probability,
            light: traffic_light(probability, thresholds)?,
            model_id: model_id.to_string(),
        });
    }
    Ok((verdicts, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub thresholds: Thresholds,
    pub min_group_size: usize,
    pub min_suspicious: usize,
    pub max_firms: usize,
    /// Clusters kept per mode in the report (all are enumerated).
    pub top_clusters: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            min_group_size: 0,
            min_suspicious: 3,
            max_firms: DEFAULT_MAX_FIRMS,
            top_clusters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub model_id: String,
    pub options: ReportOptions,
    pub verdicts: Vec<Verdict>,
    pub skipped: Vec<(TenderId, String)>,
    pub summary_low: Summary,
    pub summary_high: Summary,
    pub clusters: Vec<ClusterBreakdown>,
    pub interactions: InteractionMatrix,
    /// `None` when the matrix holds more firms than `max_firms`.
    pub suspicioucy_with_diagonal: Option<Vec<ClusterRate>>,
    pub suspicioucy_without_diagonal: Option<Vec<ClusterRate>>,
    pub n_clusters: usize,
}

/// All batch outputs at the low threshold, plus the high-threshold summary.
pub fn screening_report(
    dataset: &Dataset,
    verdicts: Vec<Verdict>,
    skipped: Vec<(TenderId, String)>,
    model_id: &str,
    options: &ReportOptions,
) -> Result<ScreeningReport, ReportError> {
    let t = options.thresholds;
    t.validate()?;
    let summary_low = summarize(&verdicts, t.low)?;
    let summary_high = summarize(&verdicts, t.high)?;
    let clusters = GroupBy::ALL
        .into_iter()
        .map(|g| cluster_breakdown(&verdicts, dataset, g, t.low, options.min_group_size))
        .collect::<Result<Vec<_>, _>>()?;
    let interactions = interaction_matrix(dataset, &verdicts, t.low, options.min_suspicious);
    let rates = |mode| match suspicioucy_rates(&interactions.firms, dataset, &verdicts, t.low, mode, options.max_firms) {
        Ok(mut v) => Ok(Some({
            v.truncate(options.top_clusters);
            v
        })),
        Err(ReportError::TooManyFirms { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    let with = rates(ClusterMode::WithDiagonal)?;
    let without = rates(ClusterMode::WithoutDiagonal)?;
    let n_clusters = if with.is_some() { 1usize << interactions.firms.len() } else { 0 };
    Ok(ScreeningReport {
        model_id: model_id.to_string(),
        options: *options,
        verdicts,
        skipped,
        summary_low,
        summary_high,
        clusters,
        interactions,
        suspicioucy_with_diagonal: with,
        suspicioucy_without_diagonal: without,
        n_clusters,
    })
}

impl ScreeningReport {
    /// Human-readable tables.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Model {}", self.model_id);
        let _ = writeln!(out, "\nSuspicious tenders");
        for s in [&self.summary_low, &self.summary_high] {
            let _ = writeln!(
                out,
                "  threshold {:.2}: suspicious {}  /  not suspicious {}",
                s.threshold,
                s.flagged_display(),
                s.not_flagged_display()
            );
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "  ({} tenders could not be screened)", self.skipped.len());
        }
        for c in &self.clusters {
            let _ = writeln!(out, "\nBy {} (threshold {:.2})", c.group_by.as_str(), c.threshold);
            let width = c.groups.iter().map(|g| g.group.len()).max().unwrap_or(0).max(ALL_GROUP.len());
            for g in c.groups.iter().chain(std::iter::once(&c.all)) {
                let _ = writeln!(out, "  {:<width$}  {}", g.group, g.display());
            }
        }
        let _ = writeln!(
            out,
            "\nFirm interactions (firms with >= {} suspicious tenders)",
            self.interactions.min_suspicious
        );
        if self.interactions.firms.is_empty() {
            let _ = writeln!(out, "  none");
        } else {
            out.push_str(&self.interactions.render());
        }
        for (label, rates) in [
            ("with diagonal", &self.suspicioucy_with_diagonal),
            ("without diagonal", &self.suspicioucy_without_diagonal),
        ] {
            let _ = writeln!(out, "\nSuspicioucy rates, {label}");
            match rates {
                None => {
                    let _ = writeln!(out, "  too many firms to enumerate");
                }
                Some(rates) => {
                    let _ = writeln!(out, "  {} clusters enumerated", self.n_clusters);
                    for r in rates.iter().filter(|r| !r.degenerate) {
                        let ids: Vec<&str> = r.cluster.iter().map(FirmId::as_str).collect();
                        let _ = writeln!(
                            out,
                            "  {{{}}}  {}",
                            ids.join(", "),
                            Cell {
                                suspicious: r.suspicious,
                                total: r.total
                            }
                            .display()
                        );
                    }
                }
            }
        }
        out
    }
}

pub fn write_verdicts_csv<W: Write>(verdicts: &[Verdict], writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tender_id", "probability", "light", "model_id"])?;
    for v in verdicts {
        w.write_record([
            v.tender_id.as_str(),
            &v.probability.to_string(),
            v.light.as_str(),
            &v.model_id,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bid, Procedure};

    fn tender(id: &str, firms: &[&str]) -> Tender {
        let bids = firms
            .iter()
            .enumerate()
            .map(|(i, f)| Bid {
                tender_id: TenderId::from(id),
                firm_id: FirmId::from(*f),
                amount: 100.0 + i as f64,
                variant_id: None,
            })
            .collect();
        Tender::new(TenderId::from(id), bids)
    }

    fn verdict(id: &str, p: f64) -> Verdict {
        Verdict {
            tender_id: TenderId::from(id),
            probability: p,
            light: traffic_light(p, Thresholds::default()).unwrap(),
            model_id: "m".into(),
        }
    }

    #[test]
    fn lights() {
        let t = Thresholds::default();
        assert_eq!(traffic_light(0.3, t).unwrap(), Light::Green);
        assert_eq!(traffic_light(0.55, t).unwrap(), Light::Suspicious);
        assert_eq!(traffic_light(0.85, t).unwrap(), Light::VerySuspicious);
        assert_eq!(traffic_light(0.5, t).unwrap(), Light::Suspicious);
        assert_eq!(traffic_light(0.7, t).unwrap(), Light::VerySuspicious);
        assert!(matches!(
            traffic_light(0.5, Thresholds { low: 0.7, high: 0.5 }),
            Err(ReportError::InvalidThresholds { .. })
        ));
        assert!(traffic_light(1.2, t).is_err());
    }

    #[test]
    fn display_rounding() {
        assert_eq!(count_share(102, 1206), "102 (8.5%)");
        assert_eq!(count_share(1104, 1206), "1104 (91.5%)");
        assert_eq!(count_share(0, 7), "0 (0.0%)");
        assert_eq!(Cell { suspicious: 7, total: 32 }.display(), "22% (7/32)");
        assert_eq!(Cell { suspicious: 1, total: 8 }.display(), "13% (1/8)");
        assert_eq!(percent_one_decimal(1, 16), "6.3");
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["f10", "f2", "f1", "g", "f02"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, vec!["f1", "f02", "f2", "f10", "g"]);
    }

    #[test]
    fn breakdown_with_unknown_group() {
        let mut tenders: Vec<Tender> = (0..12).map(|i| tender(&format!("t{i}"), &["a", "b", "c"])).collect();
        for t in tenders.iter_mut().take(10) {
            t.procedure = Procedure::Open;
        }
        let ds = Dataset::new(tenders, "x").unwrap();
        let verdicts: Vec<Verdict> = (0..12)
            .map(|i| verdict(&format!("t{i}"), if i < 2 || i == 11 { 0.9 } else { 0.1 }))
            .collect();
        let b = cluster_breakdown(&verdicts, &ds, GroupBy::Procedure, 0.5, 0).unwrap();
        assert_eq!(b.groups[0].group, "open");
        assert_eq!(b.groups[0].display(), "2 (20.0%) / 8 (80.0%)");
        assert_eq!(b.groups[1].group, UNKNOWN_GROUP);
        assert_eq!((b.all.total, b.all.flagged), (12, 3));
        let filtered = cluster_breakdown(&verdicts, &ds, GroupBy::Procedure, 0.5, 2).unwrap();
        assert_eq!(filtered.groups.len(), 1);
    }

    #[test]
    fn matrix_on_small_fixture() {
        let ds = Dataset::new(
            vec![
                tender("t1", &["a", "b", "x"]),
                tender("t2", &["a", "b", "y"]),
                tender("t3", &["a", "b", "x"]),
                tender("t4", &["a", "x", "y"]),
                tender("t5", &["c", "x", "y"]),
            ],
            "x",
        )
        .unwrap();
        let verdicts = vec![
            verdict("t1", 0.9),
            verdict("t2", 0.9),
            verdict("t3", 0.8),
            verdict("t4", 0.2),
            verdict("t5", 0.6),
        ];
        let m = interaction_matrix(&ds, &verdicts, 0.5, 3);
        let ids: Vec<&str> = m.firms.iter().map(FirmId::as_str).collect();
        // a: 3 of 4, b: 3 of 3, x: 3 of 4; y has 2 suspicious and c 1.
        assert_eq!(ids, vec!["a", "b", "x"]);
        assert_eq!(m.cell(0, 0).unwrap(), Cell { suspicious: 3, total: 4 });
        assert_eq!(m.cell(0, 1).unwrap(), Cell { suspicious: 3, total: 3 });
        assert_eq!(m.cell(1, 2).unwrap(), Cell { suspicious: 2, total: 2 });
        assert_eq!(m.cell(2, 0), m.cell(0, 2));
        assert!(m.render().contains("100% (3/3)"));
    }

    fn brute(firms: &[FirmId], ds: &Dataset, v: &[Verdict], mode: ClusterMode) -> HashMap<Vec<FirmId>, (usize, usize)> {
        let mut out = HashMap::new();
        for s in 0..(1usize << firms.len()) {
            let cluster: Vec<FirmId> = (0..firms.len()).filter(|b| s & (1 << b) != 0).map(|b| firms[b].clone()).collect();
            let (mut sus, mut tot) = (0, 0);
            for t in &ds.tenders {
                let Some(vd) = v.iter().find(|x| x.tender_id == t.tender_id) else { continue };
                let present: HashSet<&FirmId> = t.firms().filter(|f| cluster.contains(f)).collect();
                if present.len() as u32 >= mode.min_members() {
                    tot += 1;
                    sus += usize::from(vd.probability >= 0.5);
                }
            }
            out.insert(cluster, (sus, tot));
        }
        out
    }

    #[test]
    fn suspicioucy_matches_brute_force() {
        let ds = Dataset::new(
            vec![
                tender("t1", &["a", "b", "z"]),
                tender("t2", &["a", "c", "z"]),
                tender("t3", &["b", "c", "a"]),
                tender("t4", &["z", "y", "x"]),
                tender("t5", &["c", "y", "x"]),
            ],
            "x",
        )
        .unwrap();
        let v = vec![
            verdict("t1", 0.9),
            verdict("t2", 0.1),
            verdict("t3", 0.6),
            verdict("t4", 0.7),
            verdict("t5", 0.2),
        ];
        let firms: Vec<FirmId> = ["a", "b", "c"].into_iter().map(FirmId::from).collect();
        for mode in [ClusterMode::WithDiagonal, ClusterMode::WithoutDiagonal] {
            let rates = suspicioucy_rates(&firms, &ds, &v, 0.5, mode, 20).unwrap();
            assert_eq!(rates.len(), 8);
            let oracle = brute(&firms, &ds, &v, mode);
            for r in &rates {
                assert_eq!(oracle[&r.cluster], (r.suspicious, r.total), "{:?}", r.cluster);
                assert_eq!(r.degenerate, r.cluster.len() <= 1);
            }
            let empty = rates.iter().find(|r| r.cluster.is_empty()).unwrap();
            assert_eq!((empty.total, empty.rate), (0, None));
            assert!(rates.windows(2).all(|w| match (w[0].rate, w[1].rate) {
                (Some(a), Some(b)) => a >= b,
                (None, Some(_)) => false,
                _ => true,
            }));
        }
        let many: Vec<FirmId> = (0..21).map(|i| FirmId(format!("f{i}"))).collect();
        assert!(matches!(
            suspicioucy_rates(&many, &ds, &v, 0.5, ClusterMode::WithDiagonal, 20),
            Err(ReportError::TooManyFirms { count: 21, max: 20 })
        ));
    }

    #[test]
    fn summary_partition() {
        let v: Vec<Verdict> = [0.1, 0.55, 0.75, 0.9].iter().enumerate().map(|(i, &p)| verdict(&format!("t{i}"), p)).collect();
        let low = summarize(&v, 0.5).unwrap();
        let high = summarize(&v, 0.7).unwrap();
        assert_eq!((low.flagged, low.not_flagged), (3, 1));
        assert_eq!((high.flagged, high.not_flagged), (2, 2));
        assert!(matches!(summarize(&[], 0.5), Err(ReportError::EmptyInput)));
    }
}
