use avnav::acoustics::{
    add_depth_noise, add_noise, add_noise_unclamped, ild_gains, make_signature, relative_distance, render,
    SignatureSet, MIN_SIGNATURE_DISTANCE, NUM_CATEGORIES,
};
use avnav::seed;
use proptest::prelude::*;

#[test]
fn categories_are_separated() {
    for ds in [0u64, 1, 17, 12345] {
        let set = SignatureSet::generate(ds, NUM_CATEGORIES, 8, 8).unwrap();
        for i in 0..NUM_CATEGORIES {
            for j in i + 1..NUM_CATEGORIES {
                assert!(relative_distance(&set.signatures[i], &set.signatures[j]) >= MIN_SIGNATURE_DISTANCE);
            }
        }
    }
    let a = make_signature(0, 5, 16, 16).unwrap();
    let b = make_signature(1, 5, 16, 16).unwrap();
    assert!(relative_distance(&a, &b) >= MIN_SIGNATURE_DISTANCE);
}

#[test]
fn hard_left_energy_ratio_is_81() {
    let s = make_signature(2, 9, 8, 8).unwrap();
    let r = render(&s, 3.0, std::f64::consts::FRAC_PI_2, 0.0, 0.8);
    let (l, rr) = r.energy();
    // Direct evaluation of the gain formula.
    let expected = (0.5f64 * (1.0 + 0.8)).powi(2) / (0.5f64 * (1.0 - 0.8)).powi(2);
    assert!((l / rr - expected).abs() < 1e-3, "{}", l / rr);
    assert!((expected - 81.0).abs() < 1e-9);
}

fn measured_snr(snr: f64, draws: usize) -> f64 {
    let set = SignatureSet::generate(4, NUM_CATEGORIES, 8, 8).unwrap();
    let mut rng = seed::stream(99, "noise", snr as u64);
    let (mut signal, mut noise) = (0.0f64, 0.0f64);
    for i in 0..draws {
        let sig = &set.signatures[i % NUM_CATEGORIES];
        let clean = render(sig, (i % 9) as f64, 0.3 * i as f64, 0.2, 0.8);
        let noisy = add_noise_unclamped(&clean, snr, &mut rng).unwrap();
        for (c, n) in clean.left.iter().chain(&clean.right).zip(noisy.left.iter().chain(&noisy.right)) {
            signal += f64::from(*c).powi(2);
            noise += (f64::from(*n) - f64::from(*c)).powi(2);
        }
    }
    10.0 * (signal / noise).log10()
}

#[test]
fn noise_hits_requested_snr() {
    for snr in [20.0, 30.0, 40.0, 50.0] {
        let m = measured_snr(snr, 1000);
        assert!((m - snr).abs() <= 0.5, "requested {snr} dB, measured {m}");
    }
}

#[test]
fn clamped_noise_is_nonnegative() {
    let s = make_signature(0, 0, 8, 8).unwrap();
    let clean = render(&s, 8.0, 1.0, 0.0, 0.8);
    let mut rng = seed::stream(1, "noise", 0);
    let noisy = add_noise(&clean, 0.0, &mut rng).unwrap();
    assert!(noisy.is_valid());
    assert!(noisy.left.iter().any(|&v| v == 0.0));
}

#[test]
fn depth_noise_statistics() {
    let mut rng = seed::stream(3, "noise", 0);
    let depth = vec![5.0f32; 16];
    let mut sq = 0.0f64;
    let mut n = 0usize;
    for _ in 0..5000 {
        for (a, b) in add_depth_noise(&depth, 0.1, 10.0, &mut rng).iter().zip(&depth) {
            sq += f64::from(a - b).powi(2);
            n += 1;
        }
    }
    let std = (sq / n as f64).sqrt();
    assert!((std - 0.1).abs() < 0.003, "{std}");
    let zeros = add_depth_noise(&[0.0; 16], 0.5, 10.0, &mut rng);
    assert!(zeros.iter().all(|&v| v >= 0.0));
}

proptest! {
    #[test]
    fn gains_sum_to_one(alpha in -3.2f64..3.2, beta in 0f64..1.57, k in 0f64..0.999) {
        let (l, r) = ild_gains(alpha, beta, k);
        prop_assert!((l + r - 1.0).abs() < 1e-15);
        prop_assert!(l > 0.0 && r > 0.0);
    }

    #[test]
    fn energy_falls_with_distance(d1 in 0f64..30.0, gap in 0.01f64..10.0, cat in 0usize..12, alpha in -3.0f64..3.0) {
        let s = make_signature(cat, 7, 8, 8).unwrap();
        let e = |d: f64| { let (l, r) = render(&s, d, alpha, 0.1, 0.8).energy(); l + r };
        prop_assert!(e(d1) > e(d1 + gap));
    }

    /// Category changes the envelope but not the spatial factors.
    #[test]
    fn spatial_factors_independent_of_category(d in 0f64..10.0, alpha in -3.0f64..3.0, beta in 0f64..1.5, a in 0usize..12, b in 0usize..12) {
        let (sa, sb) = (make_signature(a, 3, 8, 8).unwrap(), make_signature(b, 3, 8, 8).unwrap());
        let (ra, rb) = (render(&sa, d, alpha, beta, 0.8), render(&sb, d, alpha, beta, 0.8));
        let ratio = |r: &avnav::acoustics::BinauralSpectrogram, s: &avnav::acoustics::CategorySignature| {
            (f64::from(r.left[5]) / f64::from(s.envelope[5]), f64::from(r.right[5]) / f64::from(s.envelope[5]))
        };
        let (x, y) = (ratio(&ra, &sa), ratio(&rb, &sb));
        prop_assert!((x.0 - y.0).abs() < 1e-6 && (x.1 - y.1).abs() < 1e-6);
    }
}
