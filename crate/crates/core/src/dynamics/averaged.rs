use crate::error::{Error, Result};
use crate::geometry::Window;
use crate::measure::{config_string, state_count, DenseMeasure, Encoder};

use super::generator::{GeneratorMatrix, PlacedRates};
use super::rates::RateFamily;

/// One placement of the averaged dynamics: rates indexed by
/// `eta_Lambda * targets + target`.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedPlacement {
    pub rule: usize,
    pub anchor: usize,
    /// Position inside the window of every shape site, `None` outside.
    pub shape_positions: Vec<Option<usize>>,
    pub targets: usize,
    pub rates: Vec<f64>,
}

/// The finite-window dynamics
/// `c_Delta(eta_Lambda, xi) = ∫ mu(d sigma | eta_Lambda) c_Delta(eta_Lambda sigma, xi)`
/// for every placement whose shape meets `Lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedDynamics {
    pub window: Window,
    pub q: usize,
    pub placements: Vec<AveragedPlacement>,
    mu: DenseMeasure,
}

impl AveragedDynamics {
    /// Generator on the configurations of the window. A jump of a shape that
    /// sticks out of the window changes the window part only.
    pub fn generator(&self) -> Result<GeneratorMatrix> {
        let enc = Encoder::new(self.q, self.window.len())?;
        let mut rows = vec![Vec::new(); enc.states()];
        for pl in &self.placements {
            let te = Encoder::new(self.q, pl.shape_positions.len())?;
            for (eta, row) in rows.iter_mut().enumerate() {
                for t in 0..pl.targets {
                    let v = pl.rates[eta * pl.targets + t];
                    if v <= 0.0 {
                        continue;
                    }
                    let to = pl
                        .shape_positions
                        .iter()
                        .enumerate()
                        .filter_map(|(j, k)| k.map(|k| (j, k)))
                        .fold(eta, |i, (j, k)| enc.with_digit(i, k, te.digit(t, j)));
                    row.push((to, v));
                }
            }
        }
        GeneratorMatrix::from_rows(self.mu.torus().clone(), self.window.clone(), self.q, rows)
    }

    /// `max_j |(mu_Lambda Q_Lambda)_j|`.
    pub fn invariance_defect(&self) -> Result<f64> {
        let m = self.mu.marginal(&self.window)?;
        let g = self.generator()?;
        Ok(g.left_mul(m.weights()).iter().fold(0.0, |a, x| a.max(x.abs())))
    }
}

pub fn averaged_dynamics(rates: &RateFamily, mu: &DenseMeasure, lam: &Window) -> Result<AveragedDynamics> {
    if !mu.is_full_torus() {
        return Err(Error::InvalidMeasure("averaging needs a full-torus measure".into()));
    }
    let placed = PlacedRates::new(rates, mu.torus())?;
    let q = rates.q();
    let proj = mu.projection(lam)?;
    let n_lam = state_count(q, lam.len())?;
    let marg = mu.marginal(lam)?;
    if let Some(c) = marg.weights().iter().position(|&p| p <= 0.0) {
        let enc = Encoder::new(q, lam.len())?;
        return Err(Error::NullCylinder(format!(
            "{} on {:?}; soften the measure first",
            config_string(&enc.decode(c), q),
            lam.sites()
        )));
    }
    let mut placements = Vec::new();
    for p in placed.meeting(lam) {
        let pl = &placed.placements()[p];
        let r = &rates.rules()[pl.rule];
        let t = r.targets();
        let mut acc = vec![0.0; n_lam * t];
        for (idx, &w) in mu.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let ctx = placed.context(p, idx);
            let row = proj[idx] * t;
            for s in 0..t {
                acc[row + s] += w * r.rate(ctx, s);
            }
        }
        for (eta, chunk) in acc.chunks_mut(t).enumerate() {
            for v in chunk {
                *v /= marg.weights()[eta];
            }
        }
        placements.push(AveragedPlacement {
            rule: pl.rule,
            anchor: pl.anchor,
            shape_positions: pl.shape_sites.iter().map(|&s| lam.position(s)).collect(),
            targets: t,
            rates: acc,
        });
    }
    Ok(AveragedDynamics {
        window: lam.clone(),
        q,
        placements,
        mu: mu.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtins::*;
    use crate::dynamics::generator::generator_matrix;
    use crate::geometry::Torus;
    use crate::gibbs::{torus_gibbs, Potential, Specification};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn local_rates_are_unchanged() {
        let t = Torus::ring(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = DenseMeasure::random(&t, t.full_window(), 2, &mut rng).unwrap();
        let rates = cyclic_clock(2, 1.0, 0.3, 1).unwrap();
        let lam = Window::new(vec![1, 2, 3]);
        let avg = averaged_dynamics(&rates, &mu, &lam).unwrap();
        assert_eq!(avg.placements.len(), 3);
        let r = &rates.rules()[0];
        let enc = Encoder::new(2, 3).unwrap();
        for pl in &avg.placements {
            let k = pl.shape_positions[0].unwrap();
            for eta in 0..8 {
                for s in 0..2 {
                    let expected = r.rate(enc.digit(eta, k), s);
                    assert!((pl.rates[eta * 2 + s] - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_rates_stay_zero() {
        let t = Torus::ring(4).unwrap();
        let mu = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        let avg = averaged_dynamics(&flip(2, 0.0, 1).unwrap(), &mu, &Window::new(vec![0, 1])).unwrap();
        assert!(avg.placements.iter().all(|p| p.rates.iter().all(|&r| r == 0.0)));
        assert_eq!(avg.generator().unwrap().nnz(), 0);
    }

    #[test]
    fn glauber_window_marginal_is_invariant() {
        let t = Torus::ring(6).unwrap();
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        let rates = glauber_heat_bath(&spec).unwrap();
        let avg = averaged_dynamics(&rates, &mu, &Window::new(vec![0, 1, 2])).unwrap();
        assert!(avg.invariance_defect().unwrap() <= 1e-10);
        assert!(avg.generator().unwrap().row_sum_defect() <= 1e-12);
    }

    #[test]
    fn exclusion_window_with_protruding_bonds() {
        let t = Torus::ring(5).unwrap();
        let rates = exclusion(0.7, 0.3, 1).unwrap();
        let g = generator_matrix(&rates, &t).unwrap();
        // uniform product is stationary for exclusion on a ring
        let mu = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        assert!(g.left_mul(mu.weights()).iter().all(|x| x.abs() < 1e-15));
        let avg = averaged_dynamics(&rates, &mu, &Window::new(vec![1, 2])).unwrap();
        assert_eq!(avg.placements.len(), 3);
        assert!(avg.invariance_defect().unwrap() <= 1e-12);
    }

    #[test]
    fn null_context_is_an_error() {
        let t = Torus::ring(3).unwrap();
        let pm = DenseMeasure::point_mass(
            &t,
            2,
            &crate::measure::Config::constant(t.full_window(), 1).unwrap(),
        )
        .unwrap();
        let r = flip(2, 1.0, 1).unwrap();
        assert!(matches!(
            averaged_dynamics(&r, &pm, &Window::single(0)),
            Err(Error::NullCylinder(_))
        ));
    }
}
