mod common;

use bidir_mimo::channel::{effective_channel, sample_channels, TopologySpec};
use bidir_mimo::filters::{DecodingOrder, FilterBank, Init, Kind};
use bidir_mimo::linalg::{c64, CMat, CVec};
use bidir_mimo::multiplier::SecularFunction;
use bidir_mimo::objectives::{mmse_trace_direct, mmse_trace_spectrum, potential_pair};
use bidir_mimo::training::{detect_offsets, gen_pilots, modulo, thp_encode, DEFAULT_TAU};
use common::*;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn column_scaling_never_raises_mmse(seed in any::<u64>(), n in 2usize..5, k in 1usize..6, col in 0usize..6, beta in 1.0f64..4.0, snr_db in -5.0f64..30.0) {
        let mut r = rng(seed);
        let h = gauss_mat(&mut r, n, k);
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        let mut scaled = h.clone();
        let col = col % k;
        scaled.column_mut(col).scale_mut(beta.sqrt());
        let (before, l0) = mmse_trace_spectrum(&h, sigma2);
        let (after, l1) = mmse_trace_spectrum(&scaled, sigma2);
        prop_assert!(after <= before + 1e-12);
        for (a, b) in l0.iter().zip(&l1) {
            prop_assert!(*b >= *a - 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn trace_spectrum_agrees_with_inversion(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, sigma2 in 0.01f64..10.0) {
        let mut r = rng(seed);
        let h = gauss_mat(&mut r, n, k);
        let direct = mmse_trace_direct(&h, sigma2).unwrap();
        prop_assert!((mmse_trace_spectrum(&h, sigma2).0 - direct).abs() < 1e-10 * (1.0 + direct));
    }

    #[test]
    fn secular_function_decreases(seed in any::<u64>(), n in 1usize..5, rank in 0usize..5, terms in 1usize..4, d1 in 0.0f64..5.0, d2 in 0.0f64..5.0) {
        let mut r = rng(seed);
        let parts: Vec<(CMat, CVec)> = (0..terms).map(|_| (psd(&mut r, n, rank.min(n)), gauss_vec(&mut r, n))).collect();
        let f = SecularFunction::new(&parts).unwrap();
        let lo = -f.lambda_min() + 1e-6 + d1.min(d2);
        let hi = -f.lambda_min() + 1e-6 + d1.max(d2) + 1e-9;
        prop_assert!(f.eval(hi) <= f.eval(lo) * (1.0 + 1e-12));
    }

    #[test]
    fn thp_offsets_reconstruct_pilots(seed in any::<u64>(), k in 1usize..5, n in 1usize..20, taps in 0.0f64..4.0) {
        let mut r = rng(seed);
        let s = gen_pilots(k, n, seed);
        let mut b = CMat::identity(k, k);
        for i in 0..k {
            for j in 0..i {
                b[(i, j)] = gauss(&mut r, taps);
            }
        }
        let alpha: Vec<_> = (0..k).map(|_| c64(0.2, 0.0) + gauss(&mut r, 1.0)).collect();
        let order = DecodingOrder::natural(k);
        let (enc, z) = thp_encode(&s, &b, &alpha, DEFAULT_TAU, &order).unwrap();
        for kk in 0..k {
            for t in 0..n {
                let mut rebuilt = enc[(kk, t)] - z[(kk, t)];
                for i in kk + 1..k {
                    rebuilt += (b[(i, kk)] / alpha[kk]).conj() * enc[(i, t)];
                }
                prop_assert!((rebuilt - s[(kk, t)]).norm() < 1e-12 * (1.0 + taps * 10.0));
                let e = enc[(kk, t)];
                let half = DEFAULT_TAU / 2.0;
                prop_assert!(e.re >= -half && e.re < half && e.im >= -half && e.im < half);
                let (mr, mi) = (z[(kk, t)].re / DEFAULT_TAU, z[(kk, t)].im / DEFAULT_TAU);
                prop_assert!((mr - mr.round()).abs() < 1e-12 && (mi - mi.round()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn modulo_is_a_lattice_shift(re in -50.0f64..50.0, im in -50.0f64..50.0, tau in 0.5f64..5.0) {
        let (w, z) = modulo(c64(re, im), tau);
        prop_assert!(w.re >= -tau / 2.0 && w.re < tau / 2.0);
        prop_assert!(w.im >= -tau / 2.0 && w.im < tau / 2.0);
        prop_assert!(((z.re / tau) - (z.re / tau).round()).abs() < 1e-9);
        prop_assert!((w - z - c64(re, im)).norm() < 1e-9);
    }

    #[test]
    fn noiseless_offset_detection_is_exact(seed in any::<u64>(), n in 1usize..30, gain_re in 0.1f64..3.0, gain_im in -3.0f64..3.0) {
        let mut r = rng(seed);
        let s = CVec::from_fn(n, |_, _| qpsk(&mut r));
        let z = CVec::from_fn(n, |_, _| {
            let m = |r: &mut rand_chacha::ChaCha8Rng| f64::from(rand::Rng::random_range(r, -3i32..=3));
            c64(DEFAULT_TAU * m(&mut r), DEFAULT_TAU * m(&mut r))
        });
        let gain = c64(gain_re, gain_im);
        let u = (&z + &s) * gain;
        let z_hat = detect_offsets(&u, gain, &s, DEFAULT_TAU);
        prop_assert!((z_hat - z).norm() < 1e-9);
    }

    #[test]
    fn potentials_agree_on_tied_banks(seed in any::<u64>(), cells in 1usize..3, k in 1usize..4, rho in 0.1f64..5.0, beta in 0.1f64..5.0, successive in any::<bool>()) {
        let spec = TopologySpec::uniform(cells, k, 3, 2, 0.3);
        let ch = sample_channels(&spec, seed).unwrap();
        let mut r = rng(seed);
        let mut bank = FilterBank::initial(&spec, Init::Random { seed });
        bank.g = (0..spec.num_users()).map(|_| gauss_vec(&mut r, 3)).collect();
        bank.t = bank.g.clone();
        bank.r = bank.v.clone();
        let kind = if successive { Kind::Successive } else { Kind::Linear };
        let (f, b) = potential_pair(&ch, &bank, rho, beta, kind).unwrap();
        prop_assert!((f - b).abs() <= 1e-9 * f.abs().max(1.0));
    }
}

#[test]
fn logdet_rate_matches_spectral_oracle() {
    use bidir_mimo::objectives::sum_rate_logdet;
    for seed in 0..20 {
        let spec = TopologySpec::single_cell(4, 4, 2, 0.05);
        let ch = sample_channels(&spec, seed).unwrap();
        let bank = FilterBank::initial(&spec, Init::Random { seed });
        let h = effective_channel(&ch, &bank.v).unwrap();
        let want = spectral_logdet(&h, 0.05);
        assert!(rel(sum_rate_logdet(&ch, &bank.v, 0.05).unwrap(), want) < 1e-10);
    }
}

#[test]
fn successive_rates_add_up_to_logdet() {
    // Chain rule: MMSE successive cancellation is capacity-achieving for fixed precoders.
    use bidir_mimo::filters::{Direction, Structure};
    use bidir_mimo::mmse::uplink_rx_update;
    use bidir_mimo::objectives::user_sinr_rates;
    for seed in 0..20 {
        let spec = TopologySpec::single_cell(4, 3, 2, 0.1);
        let ch = sample_channels(&spec, seed).unwrap();
        let mut bank = FilterBank::initial(&spec, Init::Random { seed });
        bank.g = uplink_rx_update(&ch, &bank, 0.1, Kind::Successive).unwrap().g;
        let rates: f64 = user_sinr_rates(&ch, &bank, Structure::new(Kind::Successive, Direction::Uplink)).iter().sum();
        let h = effective_channel(&ch, &bank.v).unwrap();
        assert!(rel(rates, spectral_logdet(&h, 0.1)) < 1e-9);
    }
}

#[test]
fn linear_mmse_sum_equals_trace_formula() {
    use bidir_mimo::mmse::uplink_rx_update;
    use bidir_mimo::objectives::uplink_mses;
    for seed in 0..20 {
        let spec = TopologySpec::single_cell(4, 4, 2, 0.2);
        let ch = sample_channels(&spec, seed).unwrap();
        let mut bank = FilterBank::initial(&spec, Init::Random { seed });
        bank.g = uplink_rx_update(&ch, &bank, 0.2, Kind::Linear).unwrap().g;
        let sum: f64 = uplink_mses(&ch, &bank, 0.2, Kind::Linear).iter().sum();
        let h = effective_channel(&ch, &bank.v).unwrap();
        assert!(rel(sum, mmse_trace_spectrum(&h, 0.2).0) < 1e-10);
    }
}
