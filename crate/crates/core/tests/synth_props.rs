use cellaug::db::{heard_count_histogram, MAX_ASU, MAX_READINGS};
use cellaug::synth::{generate, mean_rss_dbm, TestbedSpec};
use cellaug::{load_database, save_database};
use statrs::distribution::{ContinuousCDF, Normal};

/// Distribution of the heard-tower count at one point: independent
/// Bernoulli towers (Poisson-binomial), conditioned on at least one heard
/// tower and capped at `max_heard`.
pub fn heard_count_oracle(spec: &TestbedSpec, x: f64, y: f64) -> Vec<f64> {
    let phi = Normal::new(0.0, 1.0).unwrap();
    let mut dist = vec![1.0];
    for t in &spec.towers {
        let mean = mean_rss_dbm(t, x, y, spec.path_loss_exponent, spec.reference_distance_m);
        let p = 1.0 - phi.cdf((spec.sensitivity_dbm - mean) / spec.shadowing_db);
        let mut next = vec![0.0; dist.len() + 1];
        for (k, &q) in dist.iter().enumerate() {
            next[k] += q * (1.0 - p);
            next[k + 1] += q * p;
        }
        dist = next;
    }
    let heard_any = 1.0 - dist[0];
    let mut capped = vec![0.0; spec.max_heard + 1];
    for (k, &q) in dist.iter().enumerate().skip(1) {
        capped[k.min(spec.max_heard)] += q / heard_any;
    }
    capped
}

/// Largest per-bin gap between the empirical heard-count histogram over
/// 1000 scans and the oracle, over a few desk locations.
pub fn heard_count_max_gap() -> f64 {
    let spec = TestbedSpec {
        scans_per_location: 1000,
        ..TestbedSpec::default_desk()
    };
    let db = generate(&spec).unwrap();
    let mut worst: f64 = 0.0;
    for id in [0u32, 7, 14, 21, 35] {
        let loc = db.location(id).unwrap();
        let oracle = heard_count_oracle(&spec, loc.x, loc.y);
        let hist = heard_count_histogram(loc);
        for (k, &want) in oracle.iter().enumerate() {
            let got = hist.get(&k).copied().unwrap_or(0.0);
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

#[test]
fn heard_counts_follow_the_poisson_binomial_oracle() {
    let gap = heard_count_max_gap();
    assert!(gap <= 0.05, "max bin gap {gap}");
}

#[test]
fn desk_heard_counts_are_spread_out() {
    let db = generate(&TestbedSpec::default_desk()).unwrap();
    let mut counts = [0usize; MAX_READINGS + 1];
    for scan in db.locations().iter().flat_map(|l| &l.scans) {
        counts[scan.readings().len()] += 1;
    }
    let total = db.scan_count() as f64;
    let up_to_five = counts[..=5].iter().sum::<usize>() as f64 / total;
    assert!(
        up_to_five > 0.2 && up_to_five < 0.8,
        "≤5 towers in {up_to_five} of scans"
    );
}

#[test]
fn generated_scans_respect_caps_and_reproduce() {
    let spec = TestbedSpec::default_desk();
    let a = generate(&spec).unwrap();
    for scan in a.locations().iter().flat_map(|l| &l.scans) {
        assert!((1..=MAX_READINGS).contains(&scan.readings().len()));
        assert!(scan.readings().iter().all(|r| r.asu <= MAX_ASU));
    }
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    save_database(&a, &p1).unwrap();
    save_database(&generate(&spec).unwrap(), &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(load_database(&p1).unwrap(), a);
    let other = generate(&TestbedSpec { seed: 7, ..spec }).unwrap();
    assert_ne!(other, a);
}

#[test]
fn strongest_towers_win_truncation() {
    let spec = TestbedSpec {
        shadowing_db: 0.0,
        max_heard: 3,
        scans_per_location: 2,
        ..TestbedSpec::default_desk()
    };
    let db = generate(&spec).unwrap();
    for loc in db.locations() {
        let mut means: Vec<(f64, &str)> = spec
            .towers
            .iter()
            .map(|t| (mean_rss_dbm(t, loc.x, loc.y, 3.0, 1.0), t.id.as_str()))
            .collect();
        means.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut want: Vec<&str> = means[..3].iter().map(|m| m.1).collect();
        want.sort_unstable();
        let mut got: Vec<&str> = loc.scans[0].readings().iter().map(|r| r.tower.as_str()).collect();
        got.sort_unstable();
        assert_eq!(got, want, "location {}", loc.location_id);
        assert_eq!(loc.scans[0].readings(), loc.scans[1].readings());
    }
}
