//! Tender/bid domain model, CSV ingestion and wrangling.
//!
//! Ingestion builds one [`Tender`] per distinct `tender_id` without dropping
//! anything; [`wrangle`] then keeps each firm's lowest variant and removes
//! tenders left with fewer than three bids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of bids a tender needs for every screen to be defined.
pub const MIN_BIDS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {reason}")]
    UnparsableRow { row: u64, reason: String },
    #[error("row {row}: bid value {value} is not strictly positive")]
    NonPositiveBid { row: u64, value: f64 },
    #[error("duplicate tender id `{0}`")]
    DuplicateTender(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, Hash, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(TenderId);
string_id!(FirmId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Open,
    Invitation,
    #[default]
    Unknown,
}

impl Procedure {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "" | "unknown" | "na" => Some(Self::Unknown),
            "open" | "open_procedure" => Some(Self::Open),
            "invitation" | "on_invitation" | "invited" | "procedure_on_invitation" => {
                Some(Self::Invitation)
            }
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Open => "open",
            Self::Invitation => "invitation",
            Self::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Cartel,
    Competition,
    #[default]
    Unknown,
}

impl Label {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "" | "unknown" | "na" => Some(Self::Unknown),
            "1" | "cartel" | "collusion" | "true" => Some(Self::Cartel),
            "0" | "competition" | "competitive" | "false" => Some(Self::Competition),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cartel => "cartel",
            Self::Competition => "competition",
            Self::Unknown => "unknown",
        }
    }

    /// `Some(1)` for cartel, `Some(0)` for competition.
    pub fn as_binary(&self) -> Option<u8> {
        match self {
            Self::Cartel => Some(1),
            Self::Competition => Some(0),
            Self::Unknown => None,
        }
    }
}

/// Calendar date of a tender. Sources often carry only the year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum TenderDate {
    #[default]
    Unknown,
    Year(i32),
    Day(NaiveDate),
}

impl TenderDate {
    pub fn parse(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        if raw.is_empty() || raw.eq_ignore_ascii_case("unknown") {
            return Some(Self::Unknown);
        }
        if let Ok(day) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
            return Some(Self::Day(day));
        }
        if raw.len() == 4 {
            if let Ok(year) = raw.parse::<i32>() {
                return Some(Self::Year(year));
            }
        }
        None
    }

    pub fn year(&self) -> Option<i32> {
        use chrono::Datelike;
        match self {
            Self::Unknown => None,
            Self::Year(y) => Some(*y),
            Self::Day(d) => Some(d.year()),
        }
    }
}

impl fmt::Display for TenderDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unknown => Ok(()),
            Self::Year(y) => write!(f, "{y:04}"),
            Self::Day(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

impl Serialize for TenderDate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Unknown => s.serialize_none(),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for TenderDate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        match raw {
            None => Ok(Self::Unknown),
            Some(s) => Self::parse(&s)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid date `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub tender_id: TenderId,
    pub firm_id: FirmId,
    pub amount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tender {
    pub tender_id: TenderId,
    #[serde(default)]
    pub date: TenderDate,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub procedure: Procedure,
    pub bids: Vec<Bid>,
    #[serde(default)]
    pub label: Label,
}

impl Tender {
    /// Builds a tender and sorts its bids ascending (stable).
    pub fn new(tender_id: TenderId, bids: Vec<Bid>) -> Self {
        let mut tender = Self {
            tender_id,
            date: TenderDate::Unknown,
            region: None,
            procedure: Procedure::Unknown,
            bids,
            label: Label::Unknown,
        };
        tender.sort_bids();
        tender
    }

    pub fn sort_bids(&mut self) {
        self.bids.sort_by(|a, b| a.amount.total_cmp(&b.amount));
    }

    pub fn amounts(&self) -> Vec<f64> {
        self.bids.iter().map(|b| b.amount).collect()
    }

    pub fn firms(&self) -> impl Iterator<Item = &FirmId> {
        self.bids.iter().map(|b| &b.firm_id)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WranglingLog {
    pub dropped_tenders: usize,
    pub collapsed_variants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Dataset {
    pub tenders: Vec<Tender>,
    pub provenance: String,
    pub wrangling_log: WranglingLog,
}

impl Dataset {
    /// Validates tender-id uniqueness.
    pub fn new(tenders: Vec<Tender>, provenance: impl Into<String>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for t in &tenders {
            if !seen.insert(&t.tender_id) {
                return Err(DataError::DuplicateTender(t.tender_id.0.clone()));
            }
        }
        Ok(Self {
            tenders,
            provenance: provenance.into(),
            wrangling_log: WranglingLog::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.tenders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tenders.is_empty()
    }

    pub fn get(&self, id: &TenderId) -> Option<&Tender> {
        self.tenders.iter().find(|t| &t.tender_id == id)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Tender> {
        self.tenders.iter().filter(|t| t.label != Label::Unknown)
    }
}

/// Column names in the input file. Only `tender_id`, `firm_id` and
/// `bid_value` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub delimiter: char,
    pub tender_id: String,
    pub firm_id: String,
    pub bid_value: String,
    pub date: String,
    pub region: String,
    pub procedure: String,
    pub variant_id: String,
    pub label: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            tender_id: "tender_id".into(),
            firm_id: "firm_id".into(),
            bid_value: "bid_value".into(),
            date: "date".into(),
            region: "region".into(),
            procedure: "procedure".into(),
            variant_id: "variant_id".into(),
            label: "label".into(),
        }
    }
}

struct Columns {
    tender_id: usize,
    firm_id: usize,
    bid_value: usize,
    date: Option<usize>,
    region: Option<usize>,
    procedure: Option<usize>,
    variant_id: Option<usize>,
    label: Option<usize>,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<Self, DataError> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let required = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
        Ok(Self {
            tender_id: required(&schema.tender_id)?,
            firm_id: required(&schema.firm_id)?,
            bid_value: required(&schema.bid_value)?,
            date: find(&schema.date),
            region: find(&schema.region),
            procedure: find(&schema.procedure),
            variant_id: find(&schema.variant_id),
            label: find(&schema.label),
        })
    }
}

fn field<'r>(record: &'r csv::StringRecord, idx: Option<usize>) -> &'r str {
    idx.and_then(|i| record.get(i)).map(str::trim).unwrap_or("")
}

/// Merges a per-row metadata value into the tender: the first non-blank
/// value wins, a later conflicting non-blank value is an error.
fn merge_meta<T: PartialEq + Copy + Default + fmt::Debug>(
    slot: &mut T,
    value: T,
    row: u64,
    name: &str,
) -> Result<(), DataError> {
    let unknown = T::default();
    if value == unknown {
        return Ok(());
    }
    if *slot == unknown {
        *slot = value;
        Ok(())
    } else if *slot != value {
        Err(DataError::UnparsableRow {
            row,
            reason: format!("conflicting {name} for tender ({:?} vs {:?})", *slot, value),
        })
    } else {
        Ok(())
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut dataset = ingest_reader(file, schema)?;
    dataset.provenance = path.display().to_string();
    Ok(dataset)
}

/// Reads tenders from any CSV source. Row numbers in errors are 1-based file
/// lines (the header is line 1).
pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, schema)?;

    let mut order: Vec<TenderId> = Vec::new();
    let mut tenders: HashMap<TenderId, Tender> = HashMap::new();
    let mut seen_bids: HashSet<(TenderId, FirmId, Option<String>)> = HashSet::new();

    for result in rdr.records() {
        let record = result?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| DataError::UnparsableRow { row, reason };

        let tender_id = field(&record, Some(cols.tender_id));
        let firm_id = field(&record, Some(cols.firm_id));
        if tender_id.is_empty() {
            return Err(bad("empty tender_id".into()));
        }
        if firm_id.is_empty() {
            return Err(bad("empty firm_id".into()));
        }
        let raw_value = field(&record, Some(cols.bid_value));
        let amount: f64 = raw_value
            .parse()
            .map_err(|_| bad(format!("bid value `{raw_value}` is not a number")))?;
        if !amount.is_finite() {
            return Err(bad(format!("bid value `{raw_value}` is not finite")));
        }
        if amount <= 0.0 {
            return Err(DataError::NonPositiveBid { row, value: amount });
        }
        let variant = field(&record, cols.variant_id);
        let variant_id = (!variant.is_empty()).then(|| variant.to_string());

        let raw_date = field(&record, cols.date);
        let date = TenderDate::parse(raw_date).ok_or_else(|| bad(format!("invalid date `{raw_date}`")))?;
        let raw_proc = field(&record, cols.procedure);
        let procedure =
            Procedure::parse(raw_proc).ok_or_else(|| bad(format!("invalid procedure `{raw_proc}`")))?;
        let raw_label = field(&record, cols.label);
        let label = Label::parse(raw_label).ok_or_else(|| bad(format!("invalid label `{raw_label}`")))?;
        let region = field(&record, cols.region);

        let tid = TenderId::from(tender_id);
        let fid = FirmId::from(firm_id);
        if !seen_bids.insert((tid.clone(), fid.clone(), variant_id.clone())) {
            return Err(bad(format!(
                "duplicate bid for tender `{tid}`, firm `{fid}`, variant {variant_id:?}"
            )));
        }

        let tender = tenders.entry(tid.clone()).or_insert_with(|| {
            order.push(tid.clone());
            Tender::new(tid.clone(), Vec::new())
        });
        merge_meta(&mut tender.date, date, row, "date")?;
        merge_meta(&mut tender.procedure, procedure, row, "procedure")?;
        merge_meta(&mut tender.label, label, row, "label")?;
        if !region.is_empty() {
            match &tender.region {
                None => tender.region = Some(region.to_string()),
                Some(r) if r != region => {
                    return Err(bad(format!("conflicting region for tender ({r} vs {region})")))
                }
                Some(_) => {}
            }
        }
        tender.bids.push(Bid {
            tender_id: tid,
            firm_id: fid,
            amount,
            variant_id,
        });
    }

    let tenders = order
        .into_iter()
        .map(|id| {
            let mut t = tenders.remove(&id).expect("tender recorded in order");
            t.sort_bids();
            t
        })
        .collect();
    Ok(Dataset {
        tenders,
        provenance: String::new(),
        wrangling_log: WranglingLog::default(),
    })
}

/// Keeps each firm's lowest bid per tender and drops tenders with fewer than
/// [`MIN_BIDS`] bids. Counts accumulate into the existing log.
pub fn wrangle(dataset: &Dataset) -> Dataset {
    let mut log = dataset.wrangling_log;
    let mut kept = Vec::with_capacity(dataset.tenders.len());
    for tender in &dataset.tenders {
        let (collapsed, removed) = collapse_variants(tender);
        log.collapsed_variants += removed;
        if collapsed.bids.len() < MIN_BIDS {
            log.dropped_tenders += 1;
        } else {
            kept.push(collapsed);
        }
    }
    Dataset {
        tenders: kept,
        provenance: dataset.provenance.clone(),
        wrangling_log: log,
    }
}

/// Returns the tender with one bid per firm (its lowest; first in input
/// order on ties) and the number of bids removed.
pub fn collapse_variants(tender: &Tender) -> (Tender, usize) {
    let mut best: HashMap<&FirmId, usize> = HashMap::new();
    for (i, bid) in tender.bids.iter().enumerate() {
        best.entry(&bid.firm_id)
            .and_modify(|j| {
                if bid.amount < tender.bids[*j].amount {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    let removed = tender.bids.len() - keep.len();
    let mut out = Tender {
        bids: keep.into_iter().map(|i| tender.bids[i].clone()).collect(),
        ..tender.clone()
    };
    out.sort_bids();
    (out, removed)
}

/// Writes the dataset in the ingestion schema (default column names).
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "tender_id",
        "firm_id",
        "bid_value",
        "date",
        "region",
        "procedure",
        "variant_id",
        "label",
    ])?;
    for t in &dataset.tenders {
        let date = t.date.to_string();
        for b in &t.bids {
            let amount = b.amount.to_string();
            w.write_record([
                t.tender_id.as_str(),
                b.firm_id.as_str(),
                amount.as_str(),
                date.as_str(),
                t.region.as_deref().unwrap_or(""),
                t.procedure.as_str(),
                b.variant_id.as_deref().unwrap_or(""),
                t.label.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}
