use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Torus;
use crate::gibbs::{torus_gibbs, Specification};
use crate::measure::{config_string, state_count};

use super::generator::generator_matrix;
use super::rates::RateFamily;

/// Largest probe state space used by the irreducibility check.
pub const PROBE_CAP: usize = 1 << 20;

/// A jump whose reversal has zero total rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapWitness {
    pub rule: usize,
    pub context: String,
    pub target: String,
}

/// Two probe-torus configurations with no positive-rate path between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityWitness {
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub finitely_many_types: bool,
    pub uniform_continuity: bool,
    pub no_traps: bool,
    pub trap_witness: Option<TrapWitness>,
    pub min_rate: bool,
    pub min_positive_rate: Option<f64>,
    /// `None` when the probe torus exceeds [`PROBE_CAP`] configurations.
    pub irreducible: Option<bool>,
    pub irreducibility_witness: Option<ReachabilityWitness>,
    pub conserved_quantity: bool,
    pub probe_sides: Vec<usize>,
}

/// Checks the regularity conditions by exhaustive enumeration over every
/// rule's contexts, and irreducibility as strong connectivity of the jump
/// graph on a probe torus of side `2 * range + 2`.
pub fn check_conditions(rates: &RateFamily) -> Result<ConditionReport> {
    let q = rates.q();
    let mut trap_witness = None;
    let mut min_positive: Option<f64> = None;
    let mut conserved = true;
    'rules: for (k, r) in rates.rules().iter().enumerate() {
        if let Some(m) = r.min_positive() {
            min_positive = Some(min_positive.map_or(m, |x| x.min(m)));
        }
        for c in 0..r.contexts() {
            for t in 0..r.targets() {
                if r.rate(c, t) <= 0.0 {
                    continue;
                }
                let here = r.current_target(c).expect("dep contains shape");
                if count_states(&r.target_encoder().decode(here), q)
                    != count_states(&r.target_encoder().decode(t), q)
                {
                    conserved = false;
                }
                let back = r.flipped_context(c, t).expect("dep contains shape");
                if trap_witness.is_none() && r.total(back) <= 0.0 {
                    trap_witness = Some(TrapWitness {
                        rule: k,
                        context: config_string(&r.context_encoder().decode(c), q),
                        target: config_string(&r.target_encoder().decode(t), q),
                    });
                }
            }
            if trap_witness.is_some() && !conserved {
                break 'rules;
            }
        }
    }
    if min_positive.is_none() {
        // the zero dynamics moves nothing, so nothing is conserved or broken
        conserved = true;
    }

    let side = 2 * rates.range() + 2;
    let probe = Torus::cubic(rates.dim(), side)?;
    let (irreducible, witness) = match state_count(q, probe.len()) {
        Ok(n) if n <= PROBE_CAP => {
            let g = generator_matrix(rates, &probe)?;
            let classes = g.communicating_classes();
            if classes.len() == 1 {
                (Some(true), None)
            } else {
                let enc = crate::measure::Encoder::new(q, probe.len())?;
                // a closed class other than the one holding state 0 cannot reach it
                let (from, to) = match classes.iter().find(|(c, closed)| *closed && c[0] != 0) {
                    Some((c, _)) => (c[0], 0),
                    None => {
                        let other = classes.iter().find(|(c, _)| c[0] != 0).unwrap().0[0];
                        let zero_closed = classes.iter().any(|(c, closed)| *closed && c[0] == 0);
                        if zero_closed {
                            (0, other)
                        } else {
                            (other, 0)
                        }
                    }
                };
                (
                    Some(false),
                    Some(ReachabilityWitness {
                        from: config_string(&enc.decode(from), q),
                        to: config_string(&enc.decode(to), q),
                    }),
                )
            }
        }
        _ => (None, None),
    };
    Ok(ConditionReport {
        finitely_many_types: true,
        uniform_continuity: true,
        no_traps: trap_witness.is_none(),
        trap_witness,
        min_rate: true,
        min_positive_rate: min_positive,
        irreducible,
        irreducibility_witness: witness,
        conserved_quantity: conserved && min_positive.is_some(),
        probe_sides: probe.sides().to_vec(),
    })
}

fn count_states(states: &[u8], q: usize) -> Vec<usize> {
    let mut h = vec![0; q];
    for &s in states {
        h[s as usize] += 1;
    }
    h
}

/// `max |mu(eta) Q(eta, xi) - mu(xi) Q(xi, eta)|` over all jumps, `mu` the
/// torus Gibbs measure of `spec`.
pub fn detailed_balance_defect(rates: &RateFamily, spec: &Specification, torus: &Torus) -> Result<f64> {
    let mu = torus_gibbs(spec.potential(), torus)?;
    let g = generator_matrix(rates, torus)?;
    let w = mu.weights();
    let mut worst: f64 = 0.0;
    for i in 0..g.n_states() {
        let (cols, vals) = g.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            worst = worst.max((w[i] * v - w[j] * g.get(j, i)).abs());
        }
    }
    Ok(worst)
}
