//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every PASS/FAIL line is printed
//! even when all checks pass. A positional argument filters criteria by
//! substring.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bidscreen::data::{Bid, Dataset, FirmId, Label, Tender, TenderId};
use bidscreen::evaluation::{self, compute_metrics, percentile, Confusion, MetricName, ResampleOptions};
use bidscreen::models::{
    self, CartConfig, ExampleSet, Family, ForestConfig, ModelArtifact, Parameters, TrainConfig,
};
use bidscreen::reporting::{
    self, Cell, ClusterMode, Thresholds, Verdict, DEFAULT_MAX_FIRMS,
};
use bidscreen::rng::unit_rng;
use bidscreen::screens::{self, FeatureMode, ScreenConfig, ScreenVector, SCREEN_NAMES};
use bidscreen::simulate::{self, SimConfig};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Straight-line transcription of the screen formulas, used as an oracle.

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

/// [cv, spd, diffp, rd, rdalt, rdnor, skew, kstest] of non-degenerate bids.
fn oracle(bids: &[f64]) -> [f64; 8] {
    let mut b = bids.to_vec();
    b.sort_by(f64::total_cmp);
    let n = b.len();
    let nf = n as f64;
    let m = mean(&b);
    let sd = sample_sd(&b);
    let cv = sd / m;
    let spd = (b[n - 1] - b[0]) / b[0];
    let diffp = (b[1] - b[0]) / b[0];
    let rd = (b[1] - b[0]) / sample_sd(&b[1..]);
    // 1-based: sum_{i=2}^{n-1} (b_{i+1} - b_i) / (n - 2)
    let mut s_alt = 0.0;
    for i in 2..n {
        s_alt += b[i] - b[i - 1];
    }
    let rdalt = (b[1] - b[0]) / (s_alt / (nf - 2.0));
    let mut s_nor = 0.0;
    for i in 1..n {
        s_nor += b[i] - b[i - 1];
    }
    let rdnor = (b[1] - b[0]) / (s_nor / (nf - 1.0));
    let m3 = b.iter().map(|v| (v - m).powi(3)).sum::<f64>() / nf;
    let m2 = b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
    let g1 = m3 / m2.powf(1.5);
    let skew = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let mut d_plus = f64::NEG_INFINITY;
    let mut d_minus = f64::NEG_INFINITY;
    for (k, v) in b.iter().enumerate() {
        let rank = (k + 1) as f64 / (nf + 1.0);
        d_plus = d_plus.max(v / sd - rank);
        d_minus = d_minus.max(rank - v / sd);
    }
    [cv, spd, diffp, rd, rdalt, rdnor, skew, d_plus.max(d_minus)]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn random_bids(rng: &mut impl Rng) -> Vec<f64> {
    let n = rng.random_range(3..=10);
    let scale = 10f64.powf(rng.random_range(4.0..7.0));
    (0..n).map(|_| scale * rng.random_range(0.7..1.4)).collect()
}

fn strict() -> ScreenConfig {
    ScreenConfig {
        policy: screens::DegeneracyPolicy::Strict,
        kstest_centered: false,
    }
}

fn screen_oracle() -> Check {
    const TOL: f64 = 1e-12;
    let start = Instant::now();
    let mut rng = unit_rng(11, &[]);
    let mut worst = 0.0f64;
    for t in 0..1000 {
        let bids = random_bids(&mut rng);
        let got = screens::screens_from_bids(&bids, &strict()).map_err(|e| format!("tender {t}: {e}"))?;
        let want = oracle(&bids);
        for (k, (g, w)) in got.values().iter().zip(want).enumerate() {
            let g = g.ok_or_else(|| format!("tender {t}: {} undefined", SCREEN_NAMES[k]))?;
            ensure!(
                rel_close(g, w, TOL),
                "tender {t} {}: {g} vs oracle {w}",
                SCREEN_NAMES[k]
            );
            if w != 0.0 {
                worst = worst.max((g - w).abs() / w.abs());
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "1000 tenders x 8 screens within {TOL:e} relative (worst {worst:.1e}) in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn verdict_models() -> Result<Vec<ModelArtifact>, String> {
    let data = simulate::generate(&SimConfig {
        n_tenders: 400,
        seed: 21,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for family in [Family::Logit, Family::Cart, Family::RandomForest, Family::GradientBoosting] {
        let config = match family {
            Family::RandomForest => TrainConfig::RandomForest(ForestConfig {
                n_trees: 200,
                seed: 3,
                ..ForestConfig::default()
            }),
            f => f.default_config(3),
        };
        let (set, _) = ExampleSet::from_dataset(&data, family.default_feature_mode(), &ScreenConfig::default())
            .map_err(|e| e.to_string())?;
        out.push(models::train(&set, &config).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn scale_permutation_invariance() -> Check {
    const TOL: f64 = 1e-9;
    let models = verdict_models()?;
    let thresholds = Thresholds::default();
    let data = simulate::generate(&SimConfig {
        n_tenders: 500,
        seed: 99,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let config = ScreenConfig::default();
    let mut rng = unit_rng(5, &[]);
    let mut verdict_checks = 0usize;
    for t in &data.tenders {
        let base = t.amounts();
        let reference = screens::screens_from_bids(&base, &config).map_err(|e| e.to_string())?;
        let lights = |s: &ScreenVector| -> Result<Vec<_>, String> {
            models
                .iter()
                .map(|m| {
                    let p = m.predict_screens(s).map_err(|e| e.to_string())?;
                    reporting::traffic_light(p, thresholds).map_err(|e| e.to_string())
                })
                .collect()
        };
        let reference_lights = lights(&reference)?;
        for c in [1e-3, 1.0, 1e3] {
            let mut orders = vec![base.clone(), base.iter().rev().copied().collect::<Vec<_>>()];
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rng);
            orders.push(shuffled);
            for bids in orders {
                let scaled: Vec<f64> = bids.iter().map(|b| b * c).collect();
                let s = screens::screens_from_bids(&scaled, &config).map_err(|e| e.to_string())?;
                for (k, (a, b)) in s.values().iter().zip(reference.values()).enumerate() {
                    let (a, b) = (a.unwrap(), b.unwrap());
                    ensure!(
                        (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0),
                        "{} {}: {a} vs {b} at c = {c}",
                        t.tender_id,
                        SCREEN_NAMES[k]
                    );
                }
                ensure!(
                    lights(&s)? == reference_lights,
                    "{}: verdict changed at c = {c}",
                    t.tender_id
                );
                verdict_checks += models.len();
            }
        }
    }
    Ok(format!(
        "500 tenders x 3 scales x 3 orderings: screens within {TOL:e}, {verdict_checks} verdicts identical (logit, cart, forest, boosting)"
    ))
}

// ---------------------------------------------------------------------------

fn fig4_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = unit_rng(seed, &[]);
    let tenders = (0..n)
        .map(|i| {
            let id = TenderId(format!("C{i:05}"));
            let k = rng.random_range(3..=10);
            let cost = 10f64.powf(rng.random_range(4.0..7.0));
            let spread = rng.random_range(0.005..0.12);
            let bids: Vec<Bid> = (0..k)
                .map(|j| Bid {
                    tender_id: id.clone(),
                    firm_id: FirmId(format!("F{j}")),
                    amount: cost * (1.0 + spread * rng.random_range(-1.7..1.7)),
                    variant_id: None,
                })
                .collect();
            let mut t = Tender::new(id, bids);
            let cv = oracle(&t.amounts())[0];
            let mut cartel = cv < 0.053;
            if rng.random_bool(0.05) {
                cartel = !cartel;
            }
            t.label = if cartel { Label::Cartel } else { Label::Competition };
            t
        })
        .collect();
    Dataset::new(tenders, "cv rule").expect("unique ids")
}

fn fig4_recovery() -> Check {
    let start = Instant::now();
    let data = fig4_dataset(2000, 4);
    let (set, _) = ExampleSet::from_dataset(&data, FeatureMode::RawScreens, &ScreenConfig::default())
        .map_err(|e| e.to_string())?;
    let (train, test) = evaluation::split(&set, 0.75, 7).map_err(|e| e.to_string())?;
    let model = models::train(
        &train,
        &TrainConfig::Cart(CartConfig {
            seed: 7,
            ..CartConfig::default()
        }),
    )
    .map_err(|e| e.to_string())?;
    let cart = model.as_cart().ok_or("not a tree")?;
    let depth = cart.tree.depth();
    ensure!(depth == 1, "tree depth {depth}\n{}", cart.render());
    let split = cart.tree.root().split.ok_or("root is a leaf")?;
    let feature = &cart.feature_names[split.feature as usize];
    ensure!(feature == "cv", "root splits on {feature}");
    ensure!(
        (split.threshold - 0.053).abs() <= 0.01,
        "threshold {} outside 0.053 +/- 0.01",
        split.threshold
    );
    let preds = evaluation::predictions(&model, &test).map_err(|e| e.to_string())?;
    let ccr = compute_metrics(&preds, 0.5).map_err(|e| e.to_string())?.ccr;
    ensure!(ccr >= 0.90, "test CCR {ccr:.3}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "depth 1, cv >= {:.4}, test CCR {ccr:.3}, {:.1}s",
        split.threshold,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

struct Benchmark {
    forest_preds: Vec<(f64, u8)>,
    super_preds: Vec<(f64, u8)>,
    super_model: ModelArtifact,
}

fn benchmark() -> Result<Benchmark, String> {
    let data = simulate::generate(&SimConfig::default()).map_err(|e| e.to_string())?;
    let (set, _) = ExampleSet::from_dataset(&data, FeatureMode::Expanded, &ScreenConfig::default())
        .map_err(|e| e.to_string())?;
    let (train, test) = evaluation::split(&set, 0.75, 7).map_err(|e| e.to_string())?;
    let forest = models::train(&train, &Family::RandomForest.default_config(7)).map_err(|e| e.to_string())?;
    let super_model = models::train(&train, &Family::SuperLearner.default_config(7)).map_err(|e| e.to_string())?;
    Ok(Benchmark {
        forest_preds: evaluation::predictions(&forest, &test).map_err(|e| e.to_string())?,
        super_preds: evaluation::predictions(&super_model, &test).map_err(|e| e.to_string())?,
        super_model,
    })
}

fn benchmark_performance(b: &Benchmark) -> Check {
    let rf = compute_metrics(&b.forest_preds, 0.5).map_err(|e| e.to_string())?.ccr;
    let sl = compute_metrics(&b.super_preds, 0.5).map_err(|e| e.to_string())?.ccr;
    ensure!(rf >= 0.75, "forest CCR {rf:.3}");
    ensure!(sl >= 0.75, "super learner CCR {sl:.3}");
    let Parameters::SuperLearner(m) = &b.super_model.parameters else {
        return Err("not a super learner".into());
    };
    let best = m
        .learners
        .iter()
        .filter_map(|l| l.stacking_loss)
        .fold(f64::INFINITY, f64::min);
    ensure!(
        m.stacking_loss <= best,
        "ensemble stacking loss {} above best base learner {best}",
        m.stacking_loss
    );
    Ok(format!(
        "test CCR forest {rf:.3}, super learner {sl:.3}; stacking loss {:.6} <= best base {best:.6}",
        m.stacking_loss
    ))
}

fn threshold_sweep(b: &Benchmark) -> Check {
    let sweep = evaluation::threshold_sweep(&b.forest_preds, &[0.5, 0.7]).map_err(|e| e.to_string())?;
    let (lo, hi) = (sweep[0], sweep[1]);
    let (f5, f7) = (lo.fpr.ok_or("fpr undefined")?, hi.fpr.ok_or("fpr undefined")?);
    ensure!(f7 < f5, "FPR {f7:.3} at 0.7 not below {f5:.3} at 0.5");
    let change = (hi.ccr - lo.ccr).abs();
    ensure!(change < 0.05, "CCR moved {:.1} points", change * 100.0);
    Ok(format!(
        "forest FPR {f5:.3} -> {f7:.3}, CCR {:.3} -> {:.3} ({:.1} points)",
        lo.ccr,
        hi.ccr,
        change * 100.0
    ))
}

// ---------------------------------------------------------------------------

type Ratio = Option<(usize, usize)>;

/// (tp, fp, fn, tn, ccr, precision, recall, f1, fpr), each ratio written out
/// by hand.
#[rustfmt::skip]
const FIXTURES: [(usize, usize, usize, usize, (usize, usize), Ratio, Ratio, Ratio, Ratio); 20] = [
    (5, 0, 0, 5,       (10, 10),   Some((5, 5)),     Some((5, 5)),     Some((10, 10)),   Some((0, 5))),
    (3, 1, 2, 4,       (7, 10),    Some((3, 4)),     Some((3, 5)),     Some((6, 9)),     Some((1, 5))),
    (0, 0, 0, 10,      (10, 10),   None,             None,             None,             Some((0, 10))),
    (0, 0, 10, 0,      (0, 10),    None,             Some((0, 10)),    None,             None),
    (10, 0, 0, 0,      (10, 10),   Some((10, 10)),   Some((10, 10)),   Some((20, 20)),   None),
    (0, 10, 0, 0,      (0, 10),    Some((0, 10)),    None,             None,             Some((10, 10))),
    (0, 5, 5, 0,       (0, 10),    Some((0, 5)),     Some((0, 5)),     None,             Some((5, 5))),
    (1, 1, 1, 1,       (2, 4),     Some((1, 2)),     Some((1, 2)),     Some((2, 4)),     Some((1, 2))),
    (7, 2, 1, 10,      (17, 20),   Some((7, 9)),     Some((7, 8)),     Some((14, 17)),   Some((2, 12))),
    (185, 20, 3, 167,  (352, 375), Some((185, 205)), Some((185, 188)), Some((370, 393)), Some((20, 187))),
    (2, 0, 8, 10,      (12, 20),   Some((2, 2)),     Some((2, 10)),    Some((4, 12)),    Some((0, 10))),
    (8, 12, 0, 0,      (8, 20),    Some((8, 20)),    Some((8, 8)),     Some((16, 28)),   Some((12, 12))),
    (0, 3, 0, 7,       (7, 10),    Some((0, 3)),     None,             None,             Some((3, 10))),
    (4, 0, 0, 0,       (4, 4),     Some((4, 4)),     Some((4, 4)),     Some((8, 8)),     None),
    (0, 0, 4, 6,       (6, 10),    None,             Some((0, 4)),     None,             Some((0, 6))),
    (50, 25, 25, 50,   (100, 150), Some((50, 75)),   Some((50, 75)),   Some((100, 150)), Some((25, 75))),
    (9, 1, 0, 0,       (9, 10),    Some((9, 10)),    Some((9, 9)),     Some((18, 19)),   Some((1, 1))),
    (1, 0, 99, 900,    (901, 1000), Some((1, 1)),    Some((1, 100)),   Some((2, 101)),   Some((0, 900))),
    (33, 17, 11, 39,   (72, 100),  Some((33, 50)),   Some((33, 44)),   Some((66, 94)),   Some((17, 56))),
    (6, 4, 2, 0,       (6, 12),    Some((6, 10)),    Some((6, 8)),     Some((12, 18)),   Some((4, 4))),
];

fn metrics_fixtures() -> Check {
    let frac = |r: Ratio| r.map(|(n, d)| n as f64 / d as f64);
    for (k, &(tp, fp, fn_, tn, ccr, precision, recall, f1, fpr)) in FIXTURES.iter().enumerate() {
        let mut preds = Vec::new();
        preds.extend(std::iter::repeat_n((0.9, 1u8), tp));
        preds.extend(std::iter::repeat_n((0.9, 0u8), fp));
        preds.extend(std::iter::repeat_n((0.1, 1u8), fn_));
        preds.extend(std::iter::repeat_n((0.1, 0u8), tn));
        let m = compute_metrics(&preds, 0.5).map_err(|e| e.to_string())?;
        ensure!(m.confusion == Confusion { tp, fp, fn_, tn }, "fixture {k}: confusion {:?}", m.confusion);
        ensure!(m.ccr == frac(Some(ccr)).unwrap(), "fixture {k}: ccr {}", m.ccr);
        ensure!(m.precision == frac(precision), "fixture {k}: precision {:?}", m.precision);
        ensure!(m.recall == frac(recall), "fixture {k}: recall {:?}", m.recall);
        ensure!(m.f1 == frac(f1), "fixture {k}: f1 {:?}", m.f1);
        ensure!(m.fpr == frac(fpr), "fixture {k}: fpr {:?}", m.fpr);
    }
    Ok("20 confusion fixtures match exactly, undefined ratios reported as undefined".into())
}

// ---------------------------------------------------------------------------

fn resampling() -> Check {
    let data = simulate::generate(&SimConfig {
        n_tenders: 300,
        seed: 8,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let (set, _) = ExampleSet::from_dataset(&data, FeatureMode::RawScreens, &ScreenConfig::default())
        .map_err(|e| e.to_string())?;
    let options = ResampleOptions {
        replicates: 200,
        seed: 17,
        ..ResampleOptions::default()
    };
    let config = Family::Cart.default_config(0);
    let (a, reps_a) = evaluation::resample_intervals(&set, &config, &options).map_err(|e| e.to_string())?;
    let (b, reps_b) = evaluation::resample_intervals(&set, &config, &options).map_err(|e| e.to_string())?;
    ensure!(a == b && reps_a == reps_b, "reruns differ");
    ensure!(a.replicates == 200 && reps_a.len() == 200, "wrong replicate count");
    for name in MetricName::ALL {
        let mut v: Vec<f64> = reps_a.iter().filter_map(|r| r.get(name)).collect();
        let Some(iv) = a.get(name) else {
            ensure!(v.is_empty(), "{} interval missing", name.as_str());
            continue;
        };
        v.sort_by(f64::total_cmp);
        let median = percentile(&v, 0.5);
        ensure!(iv.median == median, "{}: median {} vs replicates {median}", name.as_str(), iv.median);
        ensure!(
            iv.lower <= median && median <= iv.upper,
            "{}: [{}, {}] misses the median {median}",
            name.as_str(),
            iv.lower,
            iv.upper
        );
    }
    Ok(format!(
        "B = 200 reruns identical; CCR median {:.3} in [{:.3}, {:.3}]",
        a.ccr.unwrap().median,
        a.ccr.unwrap().lower,
        a.ccr.unwrap().upper
    ))
}

// ---------------------------------------------------------------------------

fn fixture_tender(id: &str, firms: &[&str]) -> Tender {
    let tid = TenderId::from(id);
    let bids = firms
        .iter()
        .enumerate()
        .map(|(i, f)| Bid {
            tender_id: tid.clone(),
            firm_id: FirmId::from(*f),
            amount: 100.0 + 10.0 * i as f64,
            variant_id: None,
        })
        .collect();
    Tender::new(tid, bids)
}

fn verdict(id: &str, p: f64) -> Verdict {
    Verdict {
        tender_id: TenderId::from(id),
        probability: p,
        light: reporting::traffic_light(p, Thresholds::default()).unwrap(),
        model_id: "fixture".into(),
    }
}

fn brute_force(firms: &[FirmId], data: &Dataset, verdicts: &[Verdict], mode: ClusterMode) -> Vec<(Vec<FirmId>, usize, usize)> {
    let need = match mode {
        ClusterMode::WithDiagonal => 1,
        ClusterMode::WithoutDiagonal => 2,
    };
    let mut out = Vec::new();
    for mask in 0..(1usize << firms.len()) {
        let cluster: Vec<FirmId> = (0..firms.len()).filter(|b| mask & (1 << b) != 0).map(|b| firms[b].clone()).collect();
        let (mut s, mut t) = (0, 0);
        for v in verdicts {
            let tender = data.get(&v.tender_id).unwrap();
            let members = cluster.iter().filter(|f| tender.firms().any(|g| g == *f)).count();
            if members >= need {
                t += 1;
                s += usize::from(v.probability >= 0.5);
            }
        }
        out.push((cluster, s, t));
    }
    out
}

fn suspicioucy() -> Check {
    let tenders = vec![
        fixture_tender("t1", &["A", "B", "C"]),
        fixture_tender("t2", &["A", "B", "X"]),
        fixture_tender("t3", &["C", "D", "E"]),
        fixture_tender("t4", &["A", "D", "Y"]),
        fixture_tender("t5", &["B", "E", "Z"]),
        fixture_tender("t6", &["A", "B", "C", "D", "E"]),
        fixture_tender("t7", &["X", "Y", "Z"]),
        fixture_tender("t8", &["E", "X", "Y"]),
        fixture_tender("t9", &["A", "C", "E"]),
        fixture_tender("t10", &["B", "D", "Z"]),
    ];
    let data = Dataset::new(tenders, "fixture").unwrap();
    let probs = [0.9, 0.8, 0.2, 0.6, 0.1, 0.95, 0.3, 0.55, 0.7, 0.4];
    let verdicts: Vec<Verdict> = probs.iter().enumerate().map(|(i, p)| verdict(&format!("t{}", i + 1), *p)).collect();
    let firms: Vec<FirmId> = ["A", "B", "C", "D", "E"].into_iter().map(FirmId::from).collect();
    for mode in [ClusterMode::WithDiagonal, ClusterMode::WithoutDiagonal] {
        let got = reporting::suspicioucy_rates(&firms, &data, &verdicts, 0.5, mode, DEFAULT_MAX_FIRMS)
            .map_err(|e| e.to_string())?;
        ensure!(got.len() == 32, "{} clusters in {}", got.len(), mode.as_str());
        for (cluster, s, t) in brute_force(&firms, &data, &verdicts, mode) {
            let r = got
                .iter()
                .find(|r| r.cluster == cluster)
                .ok_or_else(|| format!("cluster {cluster:?} missing"))?;
            ensure!(
                r.suspicious == s && r.total == t,
                "{} {cluster:?}: {}/{} vs brute force {s}/{t}",
                mode.as_str(),
                r.suspicious,
                r.total
            );
            let want = (t > 0).then(|| s as f64 / t as f64);
            ensure!(r.rate == want, "{} {cluster:?}: rate {:?}", mode.as_str(), r.rate);
        }
    }

    let start = Instant::now();
    let big: Vec<Tender> = (0..300)
        .map(|i| {
            let a = format!("G{}", i % 12);
            let b = format!("G{}", (i * 7 + 3) % 12);
            let c = format!("G{}", (i * 5 + 1) % 12);
            let mut names = vec![a, b, c];
            names.sort();
            names.dedup();
            names.push("outsider".into());
            names.push("other".into());
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            fixture_tender(&format!("b{i}"), &refs)
        })
        .collect();
    let big = Dataset::new(big, "twelve").unwrap();
    let big_verdicts: Vec<Verdict> = (0..300).map(|i| verdict(&format!("b{i}"), if i % 3 == 0 { 0.8 } else { 0.2 })).collect();
    let twelve: Vec<FirmId> = (0..12).map(|i| FirmId(format!("G{i}"))).collect();
    let mut counts = Vec::new();
    for mode in [ClusterMode::WithDiagonal, ClusterMode::WithoutDiagonal] {
        let rates = reporting::suspicioucy_rates(&twelve, &big, &big_verdicts, 0.5, mode, DEFAULT_MAX_FIRMS)
            .map_err(|e| e.to_string())?;
        counts.push(rates.len());
    }
    let elapsed = start.elapsed();
    ensure!(counts == [4096, 4096], "cluster counts {counts:?}");
    ensure!(elapsed < Duration::from_secs(1), "12-firm enumeration took {elapsed:?}");
    Ok(format!(
        "5 firms: 32 subsets x 2 modes match brute force; 12 firms: 4096 clusters per mode in {:.0} ms",
        elapsed.as_secs_f64() * 1000.0
    ))
}

// ---------------------------------------------------------------------------

fn table_formats() -> Check {
    let cell = Cell {
        suspicious: 7,
        total: 32,
    }
    .display();
    ensure!(cell == "22% (7/32)", "cell renders {cell:?}");
    let verdicts: Vec<Verdict> = (0..1206)
        .map(|i| verdict(&format!("s{i}"), if i < 102 { 0.9 } else { 0.1 }))
        .collect();
    let summary = reporting::summarize(&verdicts, 0.5).map_err(|e| e.to_string())?;
    let shown = summary.flagged_display();
    ensure!(shown == "102 (8.5%)", "summary renders {shown:?}");
    Ok(format!("{cell:?} and {shown:?}"))
}

// ---------------------------------------------------------------------------

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bidscreen"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    run_cli(dir, &["simulate", "--seed", "7", "--output", "tenders.csv"])?;
    run_cli(
        dir,
        &["train", "--input", "tenders.csv", "--family", "random_forest", "--seed", "7", "--output", "model.json"],
    )?;
    run_cli(
        dir,
        &["evaluate", "--input", "tenders.csv", "--family", "random_forest", "--seed", "7", "--output", "evaluation.json"],
    )?;
    run_cli(
        dir,
        &["report", "--model", "model.json", "--input", "tenders.csv", "--threshold", "0.5", "--output", "report.json"],
    )?;
    ["tenders.csv", "model.json", "evaluation.json", "report.json"]
        .into_iter()
        .map(|f| Ok((f.to_string(), fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?)))
        .collect()
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let once = start.elapsed();
    let second = pipeline(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure!(x == y, "{name} differs between runs");
    }
    let model: ModelArtifact =
        ModelArtifact::from_json(std::str::from_utf8(&first[1].1).unwrap()).map_err(|e| e.to_string())?;
    let Parameters::RandomForest(forest) = &model.parameters else {
        return Err("model is not a forest".into());
    };
    ensure!(forest.trees.len() == 1000, "{} trees", forest.trees.len());
    ensure!(once < Duration::from_secs(300), "pipeline took {once:?}");
    Ok(format!(
        "simulate -> train -> evaluate -> report with 1000 trees in {:.1}s; rerun byte-identical ({} files)",
        once.as_secs_f64(),
        first.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let selected = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut results: Vec<(String, Result<String, String>, Duration)> = Vec::new();
    let mut run = |name: &str, check: &dyn Fn() -> Check| {
        if !selected(name) {
            return;
        }
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        match &outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => println!("FAIL {name}: {why}"),
        }
        results.push((name.to_string(), outcome, elapsed));
    };

    run("screen-oracle-equivalence", &screen_oracle);
    run("scale-permutation-invariance", &scale_permutation_invariance);
    run("tree-cv-threshold-recovery", &fig4_recovery);
    if selected("benchmark-performance") || selected("threshold-sweep") {
        match benchmark() {
            Ok(b) => {
                run("benchmark-performance", &|| benchmark_performance(&b));
                run("threshold-sweep", &|| threshold_sweep(&b));
            }
            Err(e) => {
                run("benchmark-performance", &|| Err(e.clone()));
                run("threshold-sweep", &|| Err(e.clone()));
            }
        }
    }
    run("metrics-fixtures", &metrics_fixtures);
    run("resampling-determinism", &resampling);
    run("suspicioucy-enumeration", &suspicioucy);
    run("table-formats", &table_formats);
    run("end-to-end-cli", &end_to_end);

    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
