//! Brute-force optimum of the three-input press problem and response
//! invariants checked against an independent evaluation of the formulas.

use pressopt_core::acquisition::TargetSpec;
use pressopt_core::press::{Decision, PressModel, ProgressSnapshot};
use pressopt_core::NamedValues;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/press_oracle.json");

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Oracle {
    grid_steps: usize,
    free: Vec<String>,
    fixed: NamedValues,
    objective: f64,
    design: NamedValues,
}

fn brute_force() -> Oracle {
    let model = PressModel::default();
    let target = TargetSpec::default();
    let free = model.three_input_schema();
    let (objective, design) = model.grid_optimum(&free, 20, |l| target.scalarize(l)).unwrap();
    Oracle {
        grid_steps: 20,
        free: free.iter().map(|s| s.name.clone()).collect(),
        fixed: model.defaults.clone(),
        objective,
        design,
    }
}

#[test]
fn stored_optimum_is_reproducible() {
    let fresh = brute_force();
    if std::env::var_os("REGENERATE_ORACLE").is_some() {
        std::fs::write(FIXTURE, serde_json::to_string_pretty(&fresh).unwrap() + "\n").unwrap();
    }
    let stored: Oracle = serde_json::from_str(&std::fs::read_to_string(FIXTURE).unwrap()).unwrap();
    assert_eq!(stored.objective.to_bits(), fresh.objective.to_bits());
    assert_eq!(stored, fresh);
}

/// The response written out by hand, without the model's helpers.
fn reference(p: f64, db: f64, fr: f64, d: f64, rp: f64) -> [f64; 7] {
    let zp = (p - 50.0) / 250.0;
    let zdb = (db - 50.0) / 200.0;
    let zfr = (fr - 0.05) / 0.15;
    let zd = (d - 0.6) / 1.4;
    let zrp = (rp - 160.0) / 180.0;
    let r = 0.5 * zp + 0.3 * zdb + 0.2 * zfr;
    let c = 0.6 * zd + 0.4 * (1.0 - zrp);
    let s = [
        5.0 * (0.30 - r).max(0.0),
        6.0 * (0.25 - r).max(0.0),
        4.0 * (0.35 - r).max(0.0),
        2.5 + c - 6.0 * (r - (0.35 + 0.3 * c)).abs(),
        5.0 * (r - c).max(0.0),
        5.0 * (r - c - 0.10).max(0.0),
        6.0 * (r - c - 0.25).max(0.0),
    ];
    let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let total: f64 = e.iter().sum();
    let mut out = [0.0; 7];
    for j in 0..7 {
        out[j] = 100.0 * e[j] / total;
    }
    out
}

fn random_point(rng: &mut ChaCha8Rng) -> NamedValues {
    NamedValues::new()
        .with("p", rng.random_range(50.0..=300.0))
        .with("db", rng.random_range(50.0..=250.0))
        .with("db_count", rng.random_range(0.0..=100.0))
        .with("Fr", rng.random_range(0.05..=0.20))
        .with("D", rng.random_range(0.6..=2.0))
        .with("Rp", [160.0, 220.0, 280.0, 340.0][rng.random_range(0..4)])
}

#[test]
fn matches_the_reference_response() {
    let model = PressModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let x = random_point(&mut rng);
        let g = |n| x.get(n).unwrap();
        let want = reference(g("p"), g("db"), g("Fr"), g("D"), g("Rp"));
        let got = model.evaluate_final(&x).unwrap();
        for j in 0..7 {
            assert!((got[j] - want[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn shares_sum_to_one_hundred_everywhere() {
    let model = PressModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let l = model.evaluate_final(&random_point(&mut rng)).unwrap();
        assert!((l.iter().sum::<f64>() - 100.0).abs() <= 1e-9);
    }
}

#[test]
fn cracks_never_heal_during_a_run() {
    let model = PressModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x = random_point(&mut rng);
        let mut last = -1.0;
        let mut watch = |s: &ProgressSnapshot| {
            assert!(s.targets[6] >= last);
            last = s.targets[6];
            Decision::Continue
        };
        let a = model.simulate(&x, Some(&mut watch)).unwrap();
        let b = model.simulate(&x, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.energy_j, model.step_energy_j() * model.steps as f64);
    }
}
