//! Bid-distribution screens and the expanded feature set.
//!
//! Every screen is computed on the bids sorted ascending, `b_1 <= ... <= b_n`.
//! Standard deviations use the sample (`n - 1`) convention throughout.

use std::io::Write;

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Tender, TenderId, MIN_BIDS};

pub const SCREEN_NAMES: [&str; 8] = ["cv", "spd", "diffp", "rd", "rdalt", "rdnor", "skew", "kstest"];
pub const N_SCREENS: usize = SCREEN_NAMES.len();
/// 8 raw screens, 8 squares and 28 pairwise products.
pub const N_EXPANDED: usize = N_SCREENS * 2 + N_SCREENS * (N_SCREENS - 1) / 2;

pub const DEFAULT_SENTINEL: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScreenError {
    #[error("TooFewBids: {0} bids given, at least 3 required")]
    TooFewBids(usize),
    #[error("InvalidBid: bid {0} is not a strictly positive finite number")]
    InvalidBid(f64),
    #[error("DegenerateTender: screen `{0}` has a zero denominator")]
    DegenerateTender(&'static str),
    #[error("UndefinedScreen: screen `{0}` is undefined")]
    UndefinedScreen(&'static str),
    #[error("SchemaMismatch: expected {expected} features, got {got}")]
    FeatureLength { expected: usize, got: usize },
}

impl ScreenError {
    /// Stable error name echoed by the HTTP service.
    pub fn name(&self) -> &'static str {
        match self {
            Self::TooFewBids(_) => "TooFewBids",
            Self::InvalidBid(_) => "InvalidBid",
            Self::DegenerateTender(_) => "DegenerateTender",
            Self::UndefinedScreen(_) => "UndefinedScreen",
            Self::FeatureLength { .. } => "SchemaMismatch",
        }
    }
}

/// What to do when a screen's denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DegeneracyPolicy {
    /// Fail with [`ScreenError::DegenerateTender`].
    Strict,
    /// Substitute `sentinel` for a positive numerator and 0 for a zero one.
    Cap { sentinel: f64 },
    /// Leave the screen undefined; the tender is unusable for modeling.
    Drop,
}

impl Default for DegeneracyPolicy {
    fn default() -> Self {
        Self::Cap {
            sentinel: DEFAULT_SENTINEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ScreenConfig {
    pub policy: DegeneracyPolicy,
    /// Use `(b_i - mean) / sd` instead of `b_i / sd` in the KS statistic.
    pub kstest_centered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenVector {
    pub cv: Option<f64>,
    pub spd: Option<f64>,
    pub diffp: Option<f64>,
    pub rd: Option<f64>,
    pub rdalt: Option<f64>,
    pub rdnor: Option<f64>,
    pub skew: Option<f64>,
    pub kstest: Option<f64>,
    pub n_bids: usize,
}

impl ScreenVector {
    /// Screens in canonical order.
    pub fn values(&self) -> [Option<f64>; N_SCREENS] {
        [
            self.cv,
            self.spd,
            self.diffp,
            self.rd,
            self.rdalt,
            self.rdnor,
            self.skew,
            self.kstest,
        ]
    }

    pub fn from_values(values: [f64; N_SCREENS], n_bids: usize) -> Self {
        let [cv, spd, diffp, rd, rdalt, rdnor, skew, kstest] = values.map(Some);
        Self {
            cv,
            spd,
            diffp,
            rd,
            rdalt,
            rdnor,
            skew,
            kstest,
            n_bids,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.values().iter().all(Option::is_some)
    }

    pub fn to_array(&self) -> Result<[f64; N_SCREENS], ScreenError> {
        let vals = self.values();
        let mut out = [0.0; N_SCREENS];
        for (i, v) in vals.iter().enumerate() {
            out[i] = v.ok_or(ScreenError::UndefinedScreen(SCREEN_NAMES[i]))?;
        }
        Ok(out)
    }
}

fn sample_sd(xs: &[f64], mean: f64) -> f64 {
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn degenerate(
    name: &'static str,
    numerator: f64,
    policy: DegeneracyPolicy,
) -> Result<Option<f64>, ScreenError> {
    match policy {
        DegeneracyPolicy::Strict => Err(ScreenError::DegenerateTender(name)),
        DegeneracyPolicy::Cap { sentinel } => Ok(Some(if numerator > 0.0 { sentinel } else { 0.0 })),
        DegeneracyPolicy::Drop => Ok(None),
    }
}

pub fn compute_screens(tender: &Tender, config: &ScreenConfig) -> Result<ScreenVector, ScreenError> {
    screens_from_bids(&tender.amounts(), config)
}

/// Computes all screens from raw bid amounts in any order.
pub fn screens_from_bids(bids: &[f64], config: &ScreenConfig) -> Result<ScreenVector, ScreenError> {
    let n = bids.len();
    if n < MIN_BIDS {
        return Err(ScreenError::TooFewBids(n));
    }
    if let Some(&bad) = bids.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        return Err(ScreenError::InvalidBid(bad));
    }
    let mut b = bids.to_vec();
    b.sort_by(f64::total_cmp);
    let policy = config.policy;
    let nf = n as f64;
    let lowest = b[0];
    let second = b[1];
    let highest = b[n - 1];
    let all_equal = lowest == highest;
    let losing_equal = second == highest;

    let m = mean(&b);
    let sd = if all_equal { 0.0 } else { sample_sd(&b, m) };
    let gap = second - lowest;

    let cv = Some(sd / m);
    let spd = Some((highest - lowest) / lowest);
    let diffp = Some(gap / lowest);

    let (rd, rdalt) = if losing_equal {
        (
            degenerate("rd", gap, policy)?,
            degenerate("rdalt", gap, policy)?,
        )
    } else {
        let losing = &b[1..];
        let sd_losing = sample_sd(losing, mean(losing));
        // Consecutive differences of the losing bids telescope to b_n - b_2.
        let mean_gap_losing = (highest - second) / (nf - 2.0);
        (Some(gap / sd_losing), Some(gap / mean_gap_losing))
    };

    let rdnor = if all_equal {
        degenerate("rdnor", gap, policy)?
    } else {
        Some(gap / ((highest - lowest) / (nf - 1.0)))
    };

    let skew = if all_equal {
        Some(0.0)
    } else {
        let cubes: f64 = b.iter().map(|x| ((x - m) / sd).powi(3)).sum();
        Some(nf / ((nf - 1.0) * (nf - 2.0)) * cubes)
    };

    let kstest = if all_equal {
        degenerate("kstest", lowest, policy)?
    } else {
        let shift = if config.kstest_centered { m } else { 0.0 };
        let mut d_plus = f64::NEG_INFINITY;
        let mut d_minus = f64::NEG_INFINITY;
        for (i, x) in b.iter().enumerate() {
            let z = (x - shift) / sd;
            let rank = (i + 1) as f64 / (nf + 1.0);
            d_plus = d_plus.max(z - rank);
            d_minus = d_minus.max(rank - z);
        }
        Some(d_plus.max(d_minus))
    };

    Ok(ScreenVector {
        cv,
        spd,
        diffp,
        rd,
        rdalt,
        rdnor,
        skew,
        kstest,
        n_bids: n,
    })
}

/// Which representation of the screens a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    RawScreens,
    Expanded,
}

impl FeatureMode {
    pub fn len(&self) -> usize {
        match self {
            Self::RawScreens => N_SCREENS,
            Self::Expanded => N_EXPANDED,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            Self::RawScreens => SCREEN_NAMES.iter().map(|s| s.to_string()).collect(),
            Self::Expanded => expanded_names(),
        }
    }

    pub fn features(&self, screens: &ScreenVector) -> Result<Vec<f64>, ScreenError> {
        let raw = screens.to_array()?;
        Ok(match self {
            Self::RawScreens => raw.to_vec(),
            Self::Expanded => expand_array(&raw),
        })
    }
}

fn expanded_names() -> Vec<String> {
    let mut names: Vec<String> = SCREEN_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(SCREEN_NAMES.iter().map(|s| format!("{s}^2")));
    for i in 0..N_SCREENS {
        for j in i + 1..N_SCREENS {
            names.push(format!("{}*{}", SCREEN_NAMES[i], SCREEN_NAMES[j]));
        }
    }
    names
}

/// Raw screens, then squares, then products `x_i * x_j` for `i < j`.
pub fn expand_array(raw: &[f64; N_SCREENS]) -> Vec<f64> {
    let mut out = Vec::with_capacity(N_EXPANDED);
    out.extend_from_slice(raw);
    out.extend(raw.iter().map(|x| x * x));
    for i in 0..N_SCREENS {
        for j in i + 1..N_SCREENS {
            out.push(raw[i] * raw[j]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.names.len()))?;
        for (k, v) in self.names.iter().zip(&self.values) {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

pub fn expand_features(screens: &ScreenVector) -> Result<FeatureVector, ScreenError> {
    Ok(FeatureVector {
        names: expanded_names(),
        values: FeatureMode::Expanded.features(screens)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenedTender {
    pub tender_id: TenderId,
    pub screens: ScreenVector,
}

/// Screens every tender in parallel; output follows input order.
pub fn screen_all(tenders: &[Tender], config: &ScreenConfig) -> Result<Vec<ScreenedTender>, ScreenError> {
    tenders
        .par_iter()
        .map(|t| {
            Ok(ScreenedTender {
                tender_id: t.tender_id.clone(),
                screens: compute_screens(t, config)?,
            })
        })
        .collect()
}

/// One row per tender; undefined screens are written as empty cells.
pub fn write_screens_csv<W: Write>(rows: &[ScreenedTender], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["tender_id", "n_bids"];
    header.extend(SCREEN_NAMES);
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.tender_id.0.clone(), row.screens.n_bids.to_string()];
        rec.extend(
            row.screens
                .values()
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
