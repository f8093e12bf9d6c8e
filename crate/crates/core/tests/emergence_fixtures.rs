//! Emergence suite on a geometric Brownian ensemble.

use gtprob::emergence::{emergence_suite, EmergenceThresholds};
use gtprob::paths::gen_geometric_brownian;
use gtprob::timechange::{normalize_path, TimeChangedPath};
use rayon::prelude::*;

#[test]
fn geometric_brownian_passes_after_normalization() {
    let ens: Vec<TimeChangedPath> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let p = gen_geometric_brownian(80_000 + s, 1.0, 1e-6, 1.0, 1.0).unwrap();
            normalize_path(&p, 0.001, None).unwrap()
        })
        .collect();
    let r = emergence_suite(&ens, &[0.01], 0.01, EmergenceThresholds::default()).unwrap();
    let d = &r.per_ds[0];
    assert!(r.pass, "{d:?}");
    assert!((0.8..=1.2).contains(&d.variance_ratio));
}
