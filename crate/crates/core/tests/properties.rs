use std::f64::consts::PI;

use candle_core::{Device, Tensor};
use fplab::analysis::minutiae::{Minutia, MinutiaKind, MinutiaSet};
use fplab::analysis::{ks_one_sided, leakage_search, match_minutiae, LeakageItem, MatcherConfig};
use fplab::binarizer::{binarize_oracle, recon_loss, ridge_map_to_gray};
use fplab::domain::{
    read_manifest_unverified, sample_noise, write_manifest, BinaryRidgeMap, DatasetManifest, GrayFingerprint,
    ManifestRecord, NoiseKind, NoiseTriple, Ppi,
};
use fplab::embedding::{identification_rates, tar_at_far};
use fplab::tps::{grid_points, tps_solve};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force_ks(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| ecdf(a, x) - ecdf(b, x))
        .fold(0.0, f64::max)
}

fn random_minutiae(rng: &mut ChaCha8Rng, n: usize) -> MinutiaSet {
    let mut set = MinutiaSet::empty(512, 512, Ppi::P500);
    set.minutiae = (0..n)
        .map(|_| Minutia {
            x: rng.random_range(96.0..416.0),
            y: rng.random_range(96.0..416.0),
            angle: rng.random_range(0.0..2.0 * PI),
            kind: if rng.random_bool(0.5) { MinutiaKind::Ending } else { MinutiaKind::Bifurcation },
            quality: 80.0,
        })
        .collect();
    set.sort();
    set
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn stripe_map(period: usize, angle: f64, phase: f64) -> BinaryRidgeMap {
    let n = 256;
    let (c, s) = (angle.cos(), angle.sin());
    let bits = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            let t = (x * c + y * s + phase).rem_euclid(period as f64);
            (t < period as f64 / 2.0) as u8
        })
        .collect();
    BinaryRidgeMap::new(n, n, Ppi::P250, bits).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gray_images_reject_values_outside_the_unit_interval(
        v in prop_oneof![-10.0f32..-1e-3, 1.001f32..10.0],
        at in 0usize..64,
    ) {
        let mut px = vec![0.5f32; 64];
        px[at] = v;
        prop_assert!(GrayFingerprint::new(8, 8, Ppi::P250, px).is_err());
    }

    #[test]
    fn binary_maps_reject_non_binary_values(v in 2u8.., at in 0usize..64) {
        let mut px = vec![1u8; 64];
        px[at] = v;
        prop_assert!(BinaryRidgeMap::new(8, 8, Ppi::P250, px).is_err());
    }

    #[test]
    fn noise_is_a_pure_function_of_its_seed(seed in any::<u64>()) {
        let a = sample_noise(NoiseKind::Id, seed);
        let _ = sample_noise(NoiseKind::Texture, seed ^ 1);
        let b = sample_noise(NoiseKind::Id, seed);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn noise_triples_regenerate_bit_exactly(id in any::<u64>(), d in any::<u64>(), t in any::<u64>()) {
        let a = NoiseTriple::from_seeds(id, d, t);
        let b = NoiseTriple::from_seeds(a.seed_id, a.seed_distort, a.seed_texture);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn manifests_round_trip_64_bit_seeds(seeds in proptest::collection::vec(any::<(u64, u64, u64)>(), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(dir.path(), "cfg");
        for (i, (a, b, c)) in seeds.iter().enumerate() {
            m.records.push(ManifestRecord {
                id: i as u64 / 3,
                imp: i as u64 % 3,
                seed_id: *a,
                seed_distort: *b,
                seed_texture: *c,
                path: format!("{i}.png"),
                sha256: "0".repeat(64),
            });
        }
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&m, &path).unwrap();
        let back = read_manifest_unverified(&path).unwrap();
        prop_assert_eq!(back.records, m.records);
        prop_assert_eq!(back.generator_config_hash, m.generator_config_hash);
    }

    #[test]
    fn tps_interpolates_control_points_without_regularization(seed in any::<u64>(), n in 3usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = grid_points(256, 256, n);
        let dst: Vec<[f64; 2]> = src
            .iter()
            .map(|p| [p[0] + rng.random_range(-8.0..8.0), p[1] + rng.random_range(-8.0..8.0)])
            .collect();
        let params = tps_solve(&src, &dst, 0.0).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let m = params.map(*s);
            prop_assert!((m[0] - d[0]).abs() < 1e-6 && (m[1] - d[1]).abs() < 1e-6);
        }
        prop_assert!(params.side_condition_residual() < 1e-8);
    }

    #[test]
    fn ks_matches_the_brute_force_ecdf_oracle(
        a in proptest::collection::vec(0u8..20, 1..50),
        b in proptest::collection::vec(0u8..20, 1..50),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = ks_one_sided(&a, &b).unwrap();
        prop_assert_eq!(r.d, brute_force_ks(&a, &b));
    }

    #[test]
    fn matcher_scores_are_bounded_and_rigid_invariant(
        seed in any::<u64>(),
        theta in -0.3f64..0.3,
        tx in -20.0f64..20.0,
        ty in -20.0f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_minutiae(&mut rng, 30);
        let mut b = a.clone();
        b.minutiae.truncate(20);
        b.minutiae.extend(random_minutiae(&mut rng, 10).minutiae);
        b.sort();
        let s = match_minutiae(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        let moved = match_minutiae(&a.transformed(theta, [tx, ty]), &b.transformed(theta, [tx, ty]));
        prop_assert!((s - moved).abs() < 0.02, "{} vs {}", s, moved);
    }

    #[test]
    fn rank_curves_never_decrease(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gallery: Vec<((usize, u64), Vec<f32>)> = (0..20u64).map(|i| ((0, i), unit_vector(&mut rng, 16))).collect();
        let probes: Vec<(u64, Vec<f32>)> = (0..20u64).map(|i| (i, unit_vector(&mut rng, 16))).collect();
        let ranks: Vec<usize> = (1..=20).collect();
        let curve = identification_rates(&probes, &gallery, &ranks).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].rate <= w[1].rate));
        prop_assert_eq!(curve.last().unwrap().rate, 100.0);
    }

    #[test]
    fn tar_never_decreases_with_far(
        genuine in proptest::collection::vec(0.0f64..1.0, 1..100),
        imposter in proptest::collection::vec(0.0f64..1.0, 100..300),
    ) {
        let points = tar_at_far(&genuine, &imposter, &[0.5, 0.01, 0.1, 0.05]).unwrap();
        prop_assert!(points.windows(2).all(|w| w[0].far <= w[1].far && w[0].tar <= w[1].tar));
        prop_assert!(points.iter().all(|p| (0.0..=100.0).contains(&p.tar)));
    }

    #[test]
    fn reconstruction_loss_is_nonnegative_and_zero_on_labels(
        labels in proptest::collection::vec(0u8..2, 16),
        noise in proptest::collection::vec(0.0f32..1.0, 16),
    ) {
        let t: Vec<f32> = labels.iter().map(|&v| v as f32).collect();
        let target = Tensor::from_vec(t.clone(), (1, 1, 4, 4), &Device::Cpu).unwrap();
        let pred = Tensor::from_vec(noise, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let l = recon_loss(&pred, &target).unwrap().to_scalar::<f32>().unwrap();
        prop_assert!(l >= 0.0);
        let exact = recon_loss(&target, &target).unwrap().to_scalar::<f32>().unwrap();
        prop_assert_eq!(exact, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn oracle_is_idempotent_on_its_own_output(period in 8usize..12, angle in 0.0f64..PI, phase in 0.0f64..8.0) {
        let img = ridge_map_to_gray(&stripe_map(period, angle, phase));
        let once = binarize_oracle(&img);
        let twice = binarize_oracle(&ridge_map_to_gray(&once));
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn disabled_first_stage_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let item = |id: u64, rng: &mut ChaCha8Rng| LeakageItem {
        id,
        path: format!("{id}.png"),
        embedding: unit_vector(rng, 32),
        minutiae: random_minutiae(rng, 25),
    };
    let train: Vec<LeakageItem> = (0..100).map(|i| item(i, &mut rng)).collect();
    let mut synth: Vec<LeakageItem> = (0..100).map(|i| item(1000 + i, &mut rng)).collect();
    synth[17].minutiae = train[42].minutiae.clone();
    let cfg = MatcherConfig::default();
    let report = leakage_search(&synth, &train, f64::NEG_INFINITY, 0.3, &cfg).unwrap();
    let mut exhaustive = std::collections::BTreeSet::new();
    for (i, s) in synth.iter().enumerate() {
        for (j, t) in train.iter().enumerate() {
            if fplab::analysis::match_minutiae_with(&s.minutiae, &t.minutiae, &cfg) >= 0.3 {
                exhaustive.insert((i, j));
            }
        }
    }
    assert_eq!(report.stage1_passed, 100 * 100);
    assert_eq!(report.flagged_keys(), exhaustive);
    assert!(exhaustive.contains(&(17, 42)));
}
