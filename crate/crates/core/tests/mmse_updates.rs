mod common;

use bidir_mimo::channel::{sample_channels, ChannelSet, TopologySpec};
use bidir_mimo::filters::{FilterBank, Init, Kind};
use bidir_mimo::linalg::{c64, CMat, CVec};
use bidir_mimo::mmse::{downlink_rx_update, downlink_tx_update, uplink_rx_update, uplink_tx_update};
use bidir_mimo::objectives::uplink_mses;
use common::*;

fn random_bank(spec: &TopologySpec, seed: u64) -> FilterBank {
    let mut bank = FilterBank::initial(spec, Init::Random { seed });
    let mut r = rng(seed ^ 0xabc);
    let n = spec.bts_antennas;
    bank.g = (0..spec.num_users()).map(|_| gauss_vec(&mut r, n)).collect();
    bank.t = (0..spec.num_users())
        .map(|_| gauss_vec(&mut r, n) * c64((spec.bts_power / (n * spec.users_per_cell) as f64).sqrt(), 0.0))
        .collect();
    bank.r = bank.v.clone();
    bank
}

fn topologies() -> Vec<TopologySpec> {
    vec![
        TopologySpec::single_cell(4, 4, 2, 0.1),
        TopologySpec::single_cell(4, 3, 2, 0.01),
        TopologySpec::uniform(2, 2, 3, 2, 0.05),
        TopologySpec::uniform(2, 3, 3, 3, 0.2),
    ]
}

/// Receiver-side transmit terms `(A, b)` of user `u`, assembled from the
/// explicit list of receivers whose estimates contain the user's signal.
fn uplink_tx_terms(ch: &ChannelSet, bank: &FilterBank, kind: Kind, u: usize) -> (CMat, CVec) {
    let k_cell = ch.users_per_cell();
    let (c, k) = (u / k_cell, u % k_cell);
    let nk = ch.user_antennas(k);
    let mut a = CMat::zeros(nk, nk);
    for j in 0..ch.num_cells() * k_cell {
        let (cj, kj) = (j / k_cell, j % k_cell);
        let cancelled = kind == Kind::Successive && cj == c && bank.order.before(kj).contains(&k);
        if !cancelled {
            let w = ch.link(cj, c, k).adjoint() * &bank.g[j];
            a += &w * w.adjoint();
        }
    }
    (a, ch.direct(c, k).adjoint() * &bank.g[u])
}

#[test]
fn uplink_receivers_match_wiener_oracle() {
    for (t, spec) in topologies().into_iter().enumerate() {
        let ch = sample_channels(&spec, 100 + t as u64).unwrap();
        let bank = random_bank(&spec, t as u64);
        for kind in [Kind::Linear, Kind::Successive] {
            let rx = uplink_rx_update(&ch, &bank, spec.uplink_noise_var, kind).unwrap();
            for u in 0..spec.num_users() {
                let want = wiener_uplink(&ch, &bank, spec.uplink_noise_var, kind, u);
                assert!(vec_rel(&rx.g[u], &want) < 1e-8, "topology {t} {kind:?} user {u}");
            }
        }
    }
}

#[test]
fn feedback_taps_equal_cancelled_interference() {
    let spec = TopologySpec::uniform(2, 3, 4, 2, 0.1);
    let ch = sample_channels(&spec, 9).unwrap();
    let bank = random_bank(&spec, 2);
    let rx = uplink_rx_update(&ch, &bank, spec.uplink_noise_var, Kind::Successive).unwrap();
    for c in 0..2 {
        let b = &rx.feedback[c];
        for k in 0..3 {
            assert_eq!(b[(k, k)], c64(1.0, 0.0));
            for i in 0..3 {
                let gk = &rx.g[c * 3 + k];
                let want = if i < k { gk.dotc(&(ch.direct(c, i) * &bank.v[c * 3 + i])) } else if i == k { c64(1.0, 0.0) } else { c64(0.0, 0.0) };
                assert!((b[(k, i)] - want).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn closed_form_mse_matches_simulation() {
    for (t, spec) in [TopologySpec::single_cell(3, 3, 2, 0.3), TopologySpec::uniform(2, 2, 3, 2, 0.3)].into_iter().enumerate() {
        let ch = sample_channels(&spec, 40 + t as u64).unwrap();
        let mut bank = random_bank(&spec, 5);
        for kind in [Kind::Linear, Kind::Successive] {
            bank.g = uplink_rx_update(&ch, &bank, spec.uplink_noise_var, kind).unwrap().g;
            let closed = uplink_mses(&ch, &bank, spec.uplink_noise_var, kind);
            let mc = mc_uplink_mses(&ch, &bank, spec.uplink_noise_var, kind, 200_000, 77);
            for (a, b) in closed.iter().zip(&mc) {
                assert!(rel(*b, *a) < 0.02, "{kind:?}: closed {a} vs simulated {b}");
            }
        }
    }
}

#[test]
fn uplink_precoders_minimise_on_the_sphere() {
    for (t, spec) in topologies().into_iter().enumerate() {
        let ch = sample_channels(&spec, 300 + t as u64).unwrap();
        let bank = random_bank(&spec, 10 + t as u64);
        for kind in [Kind::Linear, Kind::Successive] {
            let tx = uplink_tx_update(&ch, &bank, &spec.user_powers, kind).unwrap();
            for u in 0..spec.num_users() {
                let (a, b) = uplink_tx_terms(&ch, &bank, kind, u);
                let p = spec.user_powers[u % spec.users_per_cell];
                assert!(rel(tx.x[u].norm_squared(), p) < 1e-9);
                let ours = quad(&a, &b, &tx.x[u]);
                let (_, best) = sphere_min_one(&a, &b, p, 6, u as u64);
                let scale = b.norm() * p.sqrt() + a.norm() * p;
                assert!(ours <= best + 1e-9 * scale, "topology {t} {kind:?} user {u}: {ours} vs oracle {best}");
                // stationarity: (A + mu I) x = b, unless on the boundary where b has no bottom component
                let resid = &a * &tx.x[u] + &tx.x[u] * c64(tx.mu[u], 0.0) - &b;
                assert!(resid.norm() <= 1e-8 * (b.norm() + a.norm() * p.sqrt()), "KKT residual {}", resid.norm());
            }
        }
    }
}

#[test]
fn hard_case_precoder_fills_power() {
    // The first-decoded user of a single cell has a rank-one quadratic; with two
    // antennas the multiplier hits -lambda_min.
    let spec = TopologySpec::single_cell(3, 4, 2, 0.1);
    let ch = sample_channels(&spec, 8).unwrap();
    let mut bank = FilterBank::initial(&spec, Init::Basis);
    bank.g = uplink_rx_update(&ch, &bank, 0.1, Kind::Successive).unwrap().g;
    // a larger g shrinks the unconstrained minimiser below unit norm
    bank.g[0] *= c64(10.0, 0.0);
    let tx = uplink_tx_update(&ch, &bank, &spec.user_powers, Kind::Successive).unwrap();
    let (a, b) = uplink_tx_terms(&ch, &bank, Kind::Successive, 0);
    assert!(tx.boundary[0]);
    let (_, best) = sphere_min_one(&a, &b, 1.0, 8, 1);
    assert!(quad(&a, &b, &tx.x[0]) <= best + 1e-9 * (a.norm() + b.norm()));
    assert!(rel(tx.x[0].norm_squared(), 1.0) < 1e-9);
}

#[test]
fn downlink_precoders_minimise_under_sum_power() {
    for (t, spec) in topologies().into_iter().enumerate() {
        let ch = sample_channels(&spec, 500 + t as u64).unwrap();
        let bank = random_bank(&spec, 20 + t as u64);
        let k_cell = spec.users_per_cell;
        for kind in [Kind::Linear, Kind::Successive] {
            let tx = downlink_tx_update(&ch, &bank, spec.bts_power, kind).unwrap();
            for c in 0..spec.num_cells {
                // terms of BTS c: user (c, k)'s own signature and everything that
                // hears BTS c's stream k
                let terms: Vec<(CMat, CVec)> = (0..k_cell)
                    .map(|k| {
                        let mut a = CMat::zeros(spec.bts_antennas, spec.bts_antennas);
                        for j in 0..spec.num_users() {
                            let (cj, kj) = (j / k_cell, j % k_cell);
                            let precompensated = kind == Kind::Successive && cj == c && bank.order.before(k).contains(&kj);
                            if !precompensated {
                                let s = ch.link(c, cj, kj) * &bank.r[j];
                                a += &s * s.adjoint();
                            }
                        }
                        (a, ch.direct(c, k) * &bank.r[c * k_cell + k])
                    })
                    .collect();
                let mine = &tx.x[c * k_cell..(c + 1) * k_cell];
                let total: f64 = mine.iter().map(|x| x.norm_squared()).sum();
                assert!(rel(total, spec.bts_power) < 1e-9);
                let ours: f64 = terms.iter().zip(mine).map(|((a, b), x)| quad(a, b, x)).sum();
                let (_, best) = sphere_min(&terms, spec.bts_power, 6, c as u64);
                let scale: f64 = terms.iter().map(|(a, b)| a.norm() * spec.bts_power + b.norm() * spec.bts_power.sqrt()).sum();
                assert!(ours <= best + 1e-9 * scale, "topology {t} {kind:?} cell {c}: {ours} vs {best}");
            }
        }
    }
}

#[test]
fn downlink_receivers_match_wiener_oracle() {
    for (t, spec) in topologies().into_iter().enumerate() {
        let ch = sample_channels(&spec, 700 + t as u64).unwrap();
        let bank = random_bank(&spec, 30 + t as u64);
        let k_cell = spec.users_per_cell;
        for kind in [Kind::Linear, Kind::Successive] {
            let (r, _) = downlink_rx_update(&ch, &bank, &spec.user_noise_vars, kind).unwrap();
            for u in 0..spec.num_users() {
                let (c, k) = (u / k_cell, u % k_cell);
                let nk = spec.user_antennas[k];
                let mut cov = CMat::identity(nk, nk) * c64(spec.user_noise_vars[k], 0.0);
                for j in 0..spec.num_users() {
                    let (cj, kj) = (j / k_cell, j % k_cell);
                    let precompensated = kind == Kind::Successive && cj == c && bank.order.before(kj).contains(&k);
                    if !precompensated {
                        let s = ch.link(cj, c, k).adjoint() * &bank.t[j];
                        cov += &s * s.adjoint();
                    }
                }
                let want = cg_solve(&cov, &(ch.direct(c, k).adjoint() * &bank.t[u]));
                assert!(vec_rel(&r[u], &want) < 1e-8);
            }
        }
    }
}
