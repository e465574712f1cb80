#![allow(dead_code)]

use bidscreen::data::{Bid, Dataset, FirmId, Label, Tender, TenderId};
use bidscreen::models::{self, CartConfig, ExampleSet, ModelArtifact, TrainConfig};
use bidscreen::rng::unit_rng;
use bidscreen::screens::{self, FeatureMode, ScreenConfig};
use rand::Rng;

/// Tenders labeled cartel exactly when their CV is below 0.053.
pub fn cv_rule_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = unit_rng(seed, &[]);
    let tenders = (0..n)
        .map(|i| {
            let id = TenderId(format!("C{i:05}"));
            let k = rng.random_range(3..=8);
            let spread = rng.random_range(0.005..0.12);
            let bids: Vec<Bid> = (0..k)
                .map(|j| Bid {
                    tender_id: id.clone(),
                    firm_id: FirmId(format!("F{j}")),
                    amount: 1e5 * (1.0 + spread * rng.random_range(-1.7..1.7)),
                    variant_id: None,
                })
                .collect();
            let mut t = Tender::new(id, bids);
            let cv = screens::screens_from_bids(&t.amounts(), &ScreenConfig::default())
                .unwrap()
                .cv
                .unwrap();
            t.label = if cv < 0.053 { Label::Cartel } else { Label::Competition };
            t
        })
        .collect();
    Dataset::new(tenders, "cv rule").unwrap()
}

/// A one-split tree on `cv` near 0.053.
pub fn cv_tree() -> ModelArtifact {
    let data = cv_rule_dataset(1500, 1);
    let (set, _) = ExampleSet::from_dataset(&data, FeatureMode::RawScreens, &ScreenConfig::default()).unwrap();
    let model = models::train(&set, &TrainConfig::Cart(CartConfig::default())).unwrap();
    assert_eq!(model.as_cart().unwrap().tree.depth(), 1);
    model
}
