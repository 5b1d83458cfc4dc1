use cspez_core::cspez::mc_cspez;
use cspez_core::surrogate::{generate_labels, latin_hypercube, ParameterRanges};
use cspez_core::RngStream;

#[test]
fn labels_agree_with_a_larger_independent_run() {
    let configs = latin_hypercube(10, &ParameterRanges::default(), &mut RngStream::new(31)).unwrap();
    let n = 10_000;
    let ts = generate_labels(&configs, n, &RngStream::new(32), 1).unwrap();
    let mut other = RngStream::new(999);
    for (c, &p) in configs.iter().zip(&ts.labels) {
        let q = mc_cspez(&c.belief, &c.evader, 10 * n, &mut other).unwrap().probability;
        let pooled = (p + 10.0 * q) / 11.0;
        let sigma = (pooled * (1.0 - pooled) * (1.0 / n as f64 + 1.0 / (10 * n) as f64)).sqrt();
        assert!((p - q).abs() <= 3.0 * sigma.max(1.0 / n as f64), "{p} vs {q} (σ {sigma:e})");
    }
}

#[test]
fn labelling_is_independent_of_worker_count() {
    let configs = latin_hypercube(40, &ParameterRanges::default(), &mut RngStream::new(4)).unwrap();
    let a = generate_labels(&configs, 1000, &RngStream::new(5), 1).unwrap();
    let b = generate_labels(&configs, 1000, &RngStream::new(5), 3).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.features, b.features);
}
