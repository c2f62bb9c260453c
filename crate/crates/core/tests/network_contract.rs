//! The compiled network must reproduce the engine on every head.

mod support;

use centroid_core::ilt::evaluate_all;
use centroid_core::instances::{random_feasible_t, random_nonneg_orthonormal, random_sign_mixed_orthonormal};
use centroid_core::network::{compile, NetworkSpec};
use centroid_core::oracle::lasserre_slice_volume;
use centroid_core::rng::seeded;
use centroid_core::{Error, MeasurementSystem, Wide};
use rand::Rng as _;

fn rel_gap(a: Wide, b: Wide) -> f64 {
    if a.is_zero() && b.is_zero() {
        return 0.0;
    }
    ((a - b).abs() / a.abs().max_mag(b.abs())).to_f64()
}

trait MaxMag {
    fn max_mag(self, other: Wide) -> Wide;
}

impl MaxMag for Wide {
    fn max_mag(self, other: Wide) -> Wide {
        if self > other {
            self
        } else {
            other
        }
    }
}

#[test]
fn forward_matches_engine_on_random_instances() {
    let mut rng = seeded(201);
    let mut checked = 0;
    while checked < 50 {
        let n = rng.random_range(3..=7);
        let m = rng.random_range(1..=3.min(n - 1));
        let v = if rng.random_bool(0.7) {
            random_nonneg_orthonormal(n, m, &mut rng)
        } else {
            random_sign_mixed_orthonormal(n, m, &mut rng)
        };
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let net = compile(&sys).unwrap();
        for _ in 0..5 {
            let (t, _) = random_feasible_t(&v, &mut rng);
            let e = evaluate_all(&sys, &t).unwrap();
            let f = net.forward(&t).unwrap().evaluation;
            assert!(rel_gap(e.volume, f.volume) <= 1e-12, "volume N={n} M={m}");
            for k in 0..n {
                assert!(rel_gap(e.moments[k], f.moments[k]) <= 1e-12, "moment {k} N={n} M={m}");
            }
            checked += 1;
        }
        let back = NetworkSpec::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
    }
}

#[test]
fn terminal_degree_is_n_minus_m_on_volume_heads() {
    // Dense bases: every denominator row depends on every coordinate, so each layer
    // consumes exactly one row. (Sparse bases carry rows and end with lower degrees.)
    let mut rng = seeded(202);
    for (n, m) in [(4, 1), (5, 2), (6, 3)] {
        let sys = MeasurementSystem::from_orthonormal_basis(&random_sign_mixed_orthonormal(n, m, &mut rng)).unwrap();
        let net = compile(&sys).unwrap();
        let mut stack: Vec<usize> = net.heads.volume.iter().map(|e| e.node).collect();
        while let Some(id) = stack.pop() {
            let node = &net.nodes[id];
            if node.layer == m {
                assert_eq!(node.activation.degree() as usize, n - m);
            }
            stack.extend(&node.children);
        }
        assert!(net.stats().dedup_ratio <= 1.0);
        assert_eq!(net.stats().nodes_per_layer.len(), m);
    }
}

#[test]
fn hand_written_single_layer_network() {
    // N = 2, M = 1, a = (0.6, 0.8): vertex shifts z = (0.6, 0.8, 0), ReP(1) units,
    // weights 1/∏_{n'≠n}(z_{n'} − z_n).
    let z: [f64; 3] = [0.6, 0.8, 0.0];
    let w = |n: usize| -> f64 { (0..3).filter(|&k| k != n).map(|k| 1.0 / (z[k] - z[n])).product() };
    let node = |id: usize| {
        format!(
            r#"{{"id": {id}, "layer": 1, "act": {{"kind": "rep", "degree": 1}}, "affine": [{}, 1.0],
                "mult": {{"sign": 1, "log": 0.0}}, "children": []}}"#,
            -z[id]
        )
    };
    let edge = |id: usize| {
        let v = w(id);
        format!(r#"{{"node": {id}, "weight": {{"sign": {}, "log": {}}}}}"#, v.signum() as i8, v.abs().ln())
    };
    let json = format!(
        r#"{{"version": 1, "N": 2, "M": 1, "nodes": [{}, {}, {}],
            "heads": {{"volume": [{}, {}, {}], "moments": [[], []]}}}}"#,
        node(0),
        node(1),
        node(2),
        edge(0),
        edge(1),
        edge(2)
    );
    let net = NetworkSpec::from_json(&json).unwrap();
    for t in [0.1, 0.3, 0.65, 0.7, 0.79] {
        let got = net.forward(&[t]).unwrap().evaluation.volume.to_f64();
        let want = lasserre_slice_volume(&[0.6, 0.8], t).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-12), "t={t}: {got} vs {want}");
    }
}

#[test]
fn malformed_documents() {
    let sys = MeasurementSystem::from_orthonormal_basis(
        &centroid_core::Matrix::from_columns(&[vec![0.6, 0.8, 0.0]]).unwrap(),
    )
    .unwrap();
    let json = compile(&sys).unwrap().to_json();
    assert!(matches!(NetworkSpec::from_json(&json[..json.len() - 10]), Err(Error::CorruptDocument(_))));
    assert!(matches!(NetworkSpec::from_json("not json"), Err(Error::CorruptDocument(_))));
    let bad_layer = json.replacen("\"layer\": 1", "\"layer\": 4", 1);
    assert!(matches!(NetworkSpec::from_json(&bad_layer), Err(Error::SchemaMismatch(_))));
}
