//! Translation-invariant jump-rate families, their generators on tori, the
//! regularity checks and the averaged finite-window dynamics.

pub mod averaged;
pub mod builtins;
pub mod conditions;
pub mod generator;
pub mod rates;

pub use averaged::{averaged_dynamics, AveragedDynamics};
pub use builtins::{contact, cyclic_clock, exclusion, flip, glauber_heat_bath, glauber_metropolis};
pub use conditions::{check_conditions, detailed_balance_defect, ConditionReport};
pub use generator::{apply_generator, generator_matrix, GeneratorMatrix, PlacedRates, Placement};
pub use rates::{RateFamily, RateFamilySpec, Rule, RuleSpec};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Torus;
    use crate::gibbs::{torus_gibbs, Potential, Specification};
    use crate::measure::{Config, Encoder};

    #[test]
    fn generator_kills_constants() {
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let rates = glauber_heat_bath(&spec).unwrap();
        let t = Torus::ring(4).unwrap();
        for idx in 0..16 {
            let eta = Config::from_index(t.full_window(), 2, idx).unwrap();
            assert_eq!(apply_generator(&rates, &t, |_| 3.5, &eta).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_flip_on_indicator() {
        let t = Torus::ring(1).unwrap();
        let rates = flip(2, 1.0, 1).unwrap();
        let eta = Config::new(t.full_window(), vec![2]).unwrap();
        let f = |c: &Config| if c.values()[0] == 1 { 1.0 } else { 0.0 };
        assert_eq!(apply_generator(&rates, &t, f, &eta).unwrap(), 1.0);
    }

    #[test]
    fn glauber_magnetization_matches_dense_matrix() {
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let rates = glauber_heat_bath(&spec).unwrap();
        let t = Torus::ring(4).unwrap();
        let q = generator_matrix(&rates, &t).unwrap().to_dense();
        let enc = Encoder::new(2, 4).unwrap();
        let mag: Vec<f64> = (0..16)
            .map(|i| (0..4).map(|k| if enc.digit(i, k) == 0 { 1.0 } else { -1.0 }).sum())
            .collect();
        let f = nalgebra::DVector::from_vec(mag.clone());
        let qf = &q * f;
        for idx in 0..16 {
            let eta = Config::from_index(t.full_window(), 2, idx).unwrap();
            let m = |c: &Config| c.values().iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).sum();
            let v = apply_generator(&rates, &t, m, &eta).unwrap();
            assert!((v - qf[idx]).abs() < 1e-13);
        }
    }

    #[test]
    fn small_generators() {
        let one = Torus::ring(1).unwrap();
        let g = generator_matrix(&flip(2, 1.0, 1).unwrap(), &one).unwrap().to_dense();
        assert_eq!(g, nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));

        let g = generator_matrix(&cyclic_clock(3, 1.0, 0.0, 1).unwrap(), &one).unwrap().to_dense();
        let expected = nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0],
        );
        assert_eq!(g, expected);
    }

    #[test]
    fn asep_one_particle_on_three_ring() {
        let t = Torus::ring(3).unwrap();
        let g = generator_matrix(&exclusion(0.7, 0.3, 1).unwrap(), &t).unwrap();
        // one particle (state index 1) at site 0, 1 or 2: configs 100, 010, 001
        // in 0-based states are 4, 2, 1
        let at = [4usize, 2, 1];
        for (k, &from) in at.iter().enumerate() {
            let right = at[(k + 1) % 3];
            let left = at[(k + 2) % 3];
            assert!((g.get(from, right) - 0.7).abs() < 1e-15);
            assert!((g.get(from, left) - 0.3).abs() < 1e-15);
            assert!((g.get(from, from) + 1.0).abs() < 1e-15);
        }
        assert!(g.row_sum_defect() < 1e-12);
    }

    #[test]
    fn torus_too_small_for_dependence() {
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let rates = glauber_heat_bath(&spec).unwrap();
        assert!(generator_matrix(&rates, &Torus::ring(2).unwrap()).is_err());
    }

    #[test]
    fn heat_bath_stationary_is_gibbs() {
        let spec = Specification::new(Potential::ising(0.5, 0.3, 1)).unwrap();
        let t = Torus::ring(5).unwrap();
        let g = generator_matrix(&glauber_heat_bath(&spec).unwrap(), &t).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        assert!(g.left_mul(mu.weights()).iter().all(|x| x.abs() < 1e-15));
        assert!(g.row_sum_defect() < 1e-12);
        assert_eq!(g.communicating_classes().len(), 1);
    }
}
