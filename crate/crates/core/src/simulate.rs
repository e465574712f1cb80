//! Synthetic labeled tenders.
//!
//! Competitive tenders: every firm bids its cost times an independent
//! log-normal markup with mean 1 and standard deviation
//! `competitive_markup_sd`. Cartel tenders: the designated winner bids cost
//! times `1 + cartel_markup`, and every cover bid lies uniformly in
//! `[w (1 + d), w (1 + d + cartel_cover_spread)]` with
//! `d = cartel_winner_discount`. Covers therefore cluster tightly above an
//! isolated winning bid, which depresses the CV and raises the
//! distance-based screens.

use chrono::{Days, NaiveDate};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Bid, Dataset, FirmId, Label, Procedure, Tender, TenderDate, TenderId, MIN_BIDS};
use crate::rng::unit_rng;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_tenders: usize,
    pub cartel_share: f64,
    pub min_bids: usize,
    pub max_bids: usize,
    pub competitive_markup_sd: f64,
    pub cartel_markup: f64,
    pub cartel_cover_spread: f64,
    pub cartel_winner_discount: f64,
    /// Project costs are log-uniform on this range.
    pub cost_range: (f64, f64),
    pub seed: u64,
    pub regions: Vec<String>,
    pub procedures: Vec<Procedure>,
    /// Inclusive year range for tender dates.
    pub years: (i32, i32),
    pub firm_pool: usize,
    /// When set, cartel tenders draw all bidders from these firms and
    /// competitive tenders draw from the rest of the pool.
    pub cartel_firms: Option<Vec<FirmId>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tenders: 1500,
            cartel_share: 0.5,
            min_bids: 3,
            max_bids: 7,
            competitive_markup_sd: 0.06,
            cartel_markup: 0.05,
            cartel_cover_spread: 0.08,
            cartel_winner_discount: 0.01,
            cost_range: (1e5, 1e7),
            seed: 7,
            regions: ["A", "B", "C", "D", "E", "F", "G"].into_iter().map(String::from).collect(),
            procedures: vec![Procedure::Open, Procedure::Invitation],
            years: (2015, 2021),
            firm_pool: 200,
            cartel_firms: None,
        }
    }
}

/// Pool firm `k` (0-based) is named `F001`, `F002`, ...
pub fn firm_name(k: usize) -> FirmId {
    FirmId(format!("F{:03}", k + 1))
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.cartel_share) {
            return bad("cartel_share must be in [0, 1]");
        }
        if self.min_bids < MIN_BIDS || self.max_bids < self.min_bids {
            return bad("bid range must satisfy 3 <= min_bids <= max_bids");
        }
        if !(self.competitive_markup_sd > 0.0 && self.competitive_markup_sd.is_finite()) {
            return bad("competitive_markup_sd must be positive");
        }
        for (v, name) in [
            (self.cartel_cover_spread, "cartel_cover_spread"),
            (self.cartel_winner_discount, "cartel_winner_discount"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if self.cartel_cover_spread == 0.0 && self.cartel_winner_discount == 0.0 {
            return bad("cartel bids would all be equal");
        }
        if !(self.cartel_markup > -1.0 && self.cartel_markup.is_finite()) {
            return bad("cartel_markup must exceed -1");
        }
        let (lo, hi) = self.cost_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("cost_range must be positive and ordered");
        }
        if self.regions.is_empty() || self.procedures.is_empty() {
            return bad("regions and procedures must be non-empty");
        }
        if self.years.0 > self.years.1 || NaiveDate::from_ymd_opt(self.years.0, 1, 1).is_none() {
            return bad("years must be an ordered valid range");
        }
        if let Some(cartel) = &self.cartel_firms {
            if cartel.len() < self.min_bids {
                return bad("cartel_firms must hold at least min_bids firms");
            }
            let pool: Vec<FirmId> = (0..self.firm_pool).map(firm_name).collect();
            if cartel.iter().any(|f| !pool.contains(f)) {
                return bad("cartel_firms must be pool firms");
            }
            if self.firm_pool - cartel.len() < self.max_bids {
                return bad("firm_pool leaves too few competitive firms");
            }
        } else if self.firm_pool < self.max_bids {
            return bad("firm_pool must be at least max_bids");
        }
        Ok(())
    }
}

fn tender_date(rng: &mut impl Rng, years: (i32, i32)) -> TenderDate {
    let year = rng.random_range(years.0..=years.1);
    let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("validated year");
    let len = if NaiveDate::from_ymd_opt(year, 2, 29).is_some() { 366 } else { 365 };
    TenderDate::Day(start + Days::new(rng.random_range(0..len)))
}

/// Generates a labeled dataset; identical for identical configs.
pub fn generate(config: &SimConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let n = config.n_tenders;
    let n_cartel = (config.cartel_share * n as f64).round() as usize;
    let mut is_cartel: Vec<bool> = (0..n).map(|i| i < n_cartel).collect();
    is_cartel.shuffle(&mut unit_rng(config.seed, &[u64::MAX]));

    let pool: Vec<FirmId> = (0..config.firm_pool).map(firm_name).collect();
    let (cartel_pool, competitive_pool): (Vec<FirmId>, Vec<FirmId>) = match &config.cartel_firms {
        Some(set) => (
            set.clone(),
            pool.iter().filter(|f| !set.contains(f)).cloned().collect(),
        ),
        None => (pool.clone(), pool),
    };
    let s2 = (1.0 + config.competitive_markup_sd.powi(2)).ln();
    let markup = LogNormal::new(-s2 / 2.0, s2.sqrt()).expect("validated sd");
    let (cost_lo, cost_hi) = (config.cost_range.0.ln(), config.cost_range.1.ln());
    let width = (n.max(1)).to_string().len().max(5);

    let tenders = is_cartel
        .iter()
        .enumerate()
        .map(|(i, &cartel)| {
            let mut rng = unit_rng(config.seed, &[i as u64]);
            let id = TenderId(format!("T{:0width$}", i + 1));
            let firms_from = if cartel { &cartel_pool } else { &competitive_pool };
            let k = rng.random_range(config.min_bids..=config.max_bids).min(firms_from.len());
            let firms: Vec<FirmId> = index::sample(&mut rng, firms_from.len(), k)
                .into_iter()
                .map(|j| firms_from[j].clone())
                .collect();
            let cost = if cost_hi > cost_lo { rng.random_range(cost_lo..cost_hi) } else { cost_lo }.exp();
            let amounts: Vec<f64> = if cartel {
                let winner = cost * (1.0 + config.cartel_markup);
                let lo = config.cartel_winner_discount;
                let hi = lo + config.cartel_cover_spread;
                let mut v = vec![winner];
                v.extend((1..k).map(|_| {
                    let d = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    winner * (1.0 + d)
                }));
                v
            } else {
                (0..k).map(|_| cost * markup.sample(&mut rng)).collect()
            };
            let bids = firms
                .into_iter()
                .zip(amounts)
                .map(|(firm_id, amount)| Bid {
                    tender_id: id.clone(),
                    firm_id,
                    amount,
                    variant_id: None,
                })
                .collect();
            let mut t = Tender::new(id, bids);
            t.date = tender_date(&mut rng, config.years);
            t.region = Some(config.regions[rng.random_range(0..config.regions.len())].clone());
            t.procedure = config.procedures[rng.random_range(0..config.procedures.len())];
            t.label = if cartel { Label::Cartel } else { Label::Competition };
            t
        })
        .collect();
    Ok(Dataset::new(tenders, format!("simulated (seed {})", config.seed)).expect("unique generated ids"))
}
