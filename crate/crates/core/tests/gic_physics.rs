mod common;

use gicshield::gic::{effective_gic, solve_gic, solve_gic_with, FloatingPolicy};
use gicshield::{bundled, derive_dc_network, materialize_xi, GicError, GmdScenario, Placement};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_networks_satisfy_circuit_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x61c);
    for case in 0..100 {
        if let Err(e) = common::check_physics(&mut rng) {
            panic!("network {case}: {e}");
        }
    }
}

#[test]
fn bundled_networks_match_the_dense_solve() {
    for name in bundled::NAMES {
        let ac = bundled::by_name(name).unwrap();
        let dc = derive_dc_network(&ac).unwrap();
        let xi = materialize_xi(&dc, &GmdScenario::field(10.0, 45.0)).unwrap();
        let z = vec![0.0; dc.n_substations()];
        let sparse = solve_gic_with(&dc, &xi, &z, FloatingPolicy::Reject).unwrap();
        let dense = common::dense_voltages(&dc, &xi, &z);
        let scale = dense.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in sparse.vd.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-10 * scale, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn blocking_every_substation_is_a_floating_network() {
    let ac = bundled::case5();
    let dc = derive_dc_network(&ac).unwrap();
    let xi = materialize_xi(&dc, &GmdScenario::field(10.0, 45.0)).unwrap();
    let err = solve_gic(&dc, &xi, &Placement::all(dc.n_substations())).unwrap_err();
    assert!(matches!(err, GicError::FloatingNetwork { .. }), "{err}");
}

#[test]
fn effective_gic_on_signed_values() {
    let e = effective_gic(&[0.0, -3.2, 4.5]);
    assert_eq!(e.i_eff, vec![0.0, 3.2, 4.5]);
}
