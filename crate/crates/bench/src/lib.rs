//! Fixtures shared by the benchmarks.

use ipslab_core::dynamics::glauber_heat_bath;
use ipslab_core::{DenseMeasure, Potential, RateFamily, Specification, Torus};

/// Heat-bath Glauber on a ring of `n` sites with a non-product start.
pub fn glauber_ring(n: usize) -> (Torus, Specification, RateFamily, DenseMeasure) {
    let spec = Specification::new(Potential::ising(0.5, 0.1, 1)).expect("valid potential");
    let rates = glauber_heat_bath(&spec).expect("valid rates");
    let torus = Torus::ring(n).expect("valid ring");
    let nu = DenseMeasure::product(&torus, torus.full_window(), &[0.7, 0.3])
        .and_then(|m| m.soften(0.2))
        .expect("valid measure");
    let tilted = nu
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * (1.0 + 0.5 * ((i % 7) as f64 / 7.0)))
        .collect();
    let nu = DenseMeasure::from_unnormalized(torus.clone(), torus.full_window(), 2, tilted)
        .and_then(|m| m.translation_average())
        .expect("valid measure");
    (torus, spec, rates, nu)
}
