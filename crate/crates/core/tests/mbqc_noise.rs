//! Acceptance rate of the [4,2,2] session under Werner input pairs, against
//! a direct count over Pauli error patterns.

use qnetsim::backends::BackendKind;
use qnetsim::mbqc::run_once;
use qnetsim::zoo::states::werner_pair;

/// Probability that independent single-qubit Pauli errors on the four code
/// qubits commute with both XXXX and ZZZZ. A Werner pair of fidelity f is
/// the perfect pair with I, X, Y, Z on one half at weights f, (1-f)/3 each.
fn undetected(f: f64) -> f64 {
    let w = [f, (1.0 - f) / 3.0, (1.0 - f) / 3.0, (1.0 - f) / 3.0];
    // (has X part, has Z part) for I, X, Y, Z
    let parts = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let mut total = 0.0;
    for pattern in 0..256usize {
        let ps: Vec<usize> = (0..4).map(|q| (pattern >> (2 * q)) & 3).collect();
        let xs: usize = ps.iter().map(|&p| parts[p].0).sum();
        let zs: usize = ps.iter().map(|&p| parts[p].1).sum();
        if xs.is_multiple_of(2) && zs.is_multiple_of(2) {
            total += ps.iter().map(|&p| w[p]).product::<f64>();
        }
    }
    total
}

#[test]
fn werner_inputs_are_rejected_at_the_predicted_rate() {
    let f = 0.7;
    let trials = 4000;
    let mut accepted = 0;
    for seed in 0..trials {
        let (o, _) = run_once(seed, BackendKind::Stabilizer, |c| c.pairstate = werner_pair(f).unwrap()).unwrap();
        accepted += o.success as usize;
    }
    let p = undetected(f);
    let rate = accepted as f64 / trials as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((rate - p).abs() < 3.0 * sigma, "acceptance {rate} vs {p} (sigma {sigma})");
}

#[test]
fn perfect_inputs_are_always_accepted() {
    assert!((undetected(1.0) - 1.0).abs() < 1e-15);
    for seed in 0..20 {
        let (o, _) = run_once(seed, BackendKind::Stabilizer, |c| c.pairstate = werner_pair(1.0).unwrap()).unwrap();
        assert!(o.success);
    }
}
