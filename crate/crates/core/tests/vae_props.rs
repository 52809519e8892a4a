mod common;

use cellaug::rng::stream;
use cellaug::vae::{kl_to_standard_normal, train_vae, VaeBundle, VaeConfig};
use common::{correlated_location, joint_structure, location_vectors};
use proptest::prelude::*;

#[test]
fn vae_captures_joint_structure_that_sampling_misses() {
    let (vae, sampling) = joint_structure();
    assert!(vae > 0.5, "vae correlation {vae}");
    assert!(sampling.abs() < 0.15, "sampling correlation {sampling}");
}

#[test]
fn training_lowers_the_loss_and_learns_silent_towers() {
    let loc = correlated_location(100, 0.5, 3);
    let model = train_vae(&location_vectors(&loc), 0, &VaeConfig::default()).unwrap();
    let tenth = model.trace.len() / 10;
    let head = model.trace[..tenth].iter().sum::<f64>() / tenth as f64;
    let tail = model.trace[model.trace.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    assert!(tail < head, "first {head}, last {tail}");
    let out = model.generate(&mut stream(3, "gen", 0), 10_000).unwrap();
    let c_mean = out.iter().map(|v| v.values[2]).sum::<f64>() / out.len() as f64;
    assert!(c_mean < 0.05, "tower C mean {c_mean}");
    assert!(out
        .iter()
        .all(|v| v.location_id == 0 && v.values.iter().all(|x| (0.0..=1.0).contains(x))));
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let loc = correlated_location(20, 0.0, 5);
    let cfg = VaeConfig {
        epochs: 50,
        seed: 4,
        ..VaeConfig::default()
    };
    let a = train_vae(&location_vectors(&loc), 0, &cfg).unwrap();
    let b = train_vae(&location_vectors(&loc), 0, &cfg).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.json");
    let bundle = VaeBundle { models: vec![a] };
    bundle.save(&path).unwrap();
    assert_eq!(VaeBundle::load(&path).unwrap(), bundle);
}

proptest! {
    #[test]
    fn kl_is_non_negative(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..8)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_to_standard_normal(&mu, &lv) >= 0.0);
    }
}
