//! Finite-range translation-invariant potentials, the specifications
//! `gamma_Lambda ∝ exp(-H_Lambda)` they induce, torus Gibbs measures and the
//! DLR checkers.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Shape, Torus, Window};
use crate::measure::{config_string, parse_config_string, state_count, Config, DenseMeasure, Encoder};

/// One interaction shape with its energy table, indexed by configurations
/// on the shape in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTerm {
    pub shape: Shape,
    pub energies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    q: usize,
    dim: usize,
    terms: Vec<InteractionTerm>,
}

/// Text form of a potential: energies keyed by config-string, missing
/// entries are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub q: usize,
    pub dim: usize,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub shape: Vec<Vec<i64>>,
    #[serde(default)]
    pub table: BTreeMap<String, f64>,
}

fn spin(state: usize) -> f64 {
    if state == 0 {
        1.0
    } else {
        -1.0
    }
}

impl Potential {
    /// Shapes are moved so that their smallest point is the origin.
    pub fn new(q: usize, dim: usize, terms: Vec<InteractionTerm>) -> Result<Self> {
        if q < 2 {
            return Err(Error::Config(format!("q must be at least 2, got {q}")));
        }
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            if t.shape.dim() != dim || t.shape.is_empty() {
                return Err(Error::Config(format!(
                    "interaction shape {} is empty or not {dim}-dimensional",
                    t.shape
                )));
            }
            let states = state_count(q, t.shape.len())?;
            if t.energies.len() != states {
                return Err(Error::Config(format!(
                    "shape {} needs {states} energies, got {}",
                    t.shape,
                    t.energies.len()
                )));
            }
            if t.energies.iter().any(|e| !e.is_finite()) {
                return Err(Error::Config(format!("non-finite energy on shape {}", t.shape)));
            }
            let shift = t.shape.min_point().unwrap().neg();
            out.push(InteractionTerm {
                shape: t.shape.translate(&shift),
                energies: t.energies,
            });
        }
        Ok(Potential { q, dim, terms: out })
    }

    pub fn zero(q: usize, dim: usize) -> Self {
        Potential {
            q,
            dim,
            terms: Vec::new(),
        }
    }

    /// Nearest-neighbour Ising model, state 1 being spin `+1`:
    /// `Phi_{x,x+e} = -beta s_x s_{x+e}` and `Phi_{x} = -field s_x`.
    pub fn ising(beta: f64, field: f64, dim: usize) -> Self {
        let mut terms = Vec::new();
        for a in 0..dim {
            let mut e = vec![0; dim];
            e[a] = 1;
            let shape = Shape::new(dim, vec![Point::origin(dim), Point(e)]).unwrap();
            let energies = (0..4).map(|c| -beta * spin(c / 2) * spin(c % 2)).collect();
            terms.push(InteractionTerm { shape, energies });
        }
        if field != 0.0 {
            terms.push(InteractionTerm {
                shape: Shape::origin(dim),
                energies: vec![-field, field],
            });
        }
        Potential { q: 2, dim, terms }
    }

    /// Single-site potential `Phi_{x}(s) = h[s]`.
    pub fn single_site(h: Vec<f64>, dim: usize) -> Result<Self> {
        let q = h.len();
        Potential::new(
            q,
            dim,
            vec![InteractionTerm {
                shape: Shape::origin(dim),
                energies: h,
            }],
        )
    }

    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        let mut terms = Vec::new();
        for (k, t) in spec.terms.iter().enumerate() {
            let shape = Shape::new(spec.dim, t.shape.iter().cloned().map(Point).collect())
                .map_err(|e| Error::Config(format!("terms[{k}].shape: {e}")))?;
            let mut energies = vec![0.0; state_count(spec.q, shape.len())?];
            let enc = Encoder::new(spec.q, shape.len())?;
            for (key, &e) in &t.table {
                let states = parse_config_string(key, shape.len(), spec.q)
                    .map_err(|e| Error::Config(format!("terms[{k}].table: {e}")))?;
                energies[enc.encode(&states)] = e;
            }
            terms.push(InteractionTerm { shape, energies });
        }
        Potential::new(spec.q, spec.dim, terms)
    }

    pub fn to_spec(&self) -> PotentialSpec {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let enc = Encoder::new(self.q, t.shape.len()).unwrap();
                let table = t
                    .energies
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| **e != 0.0)
                    .map(|(c, &e)| (config_string(&enc.decode(c), self.q), e))
                    .collect();
                TermSpec {
                    shape: t.shape.iter().map(|p| p.0.clone()).collect(),
                    table,
                }
            })
            .collect();
        PotentialSpec {
            q: self.q,
            dim: self.dim,
            terms,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: PotentialSpec =
            toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Potential::from_spec(&spec)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[InteractionTerm] {
        &self.terms
    }

    /// Largest extent of an interaction shape along any axis.
    pub fn range(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.shape.diameter() as usize)
            .max()
            .unwrap_or(0)
    }

    /// `B = sum_{A ∋ 0} sup |Phi_A|`.
    pub fn interaction_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.shape.len() as f64 * t.energies.iter().fold(0.0f64, |m, e| m.max(e.abs())))
            .sum()
    }

    /// Every translate `A ∋ 0` of every shape, as points of `Z^d`.
    pub fn neighborhood_of_origin(&self) -> Shape {
        let mut pts = vec![Point::origin(self.dim)];
        for t in &self.terms {
            for s in t.shape.iter() {
                for p in t.shape.iter() {
                    pts.push(p.sub(s));
                }
            }
        }
        Shape::new(self.dim, pts).unwrap()
    }
}

/// A potential laid out on a torus: every translate of every shape, once.
#[derive(Clone, Debug)]
pub struct PlacedPotential {
    q: usize,
    placements: Vec<(usize, Vec<usize>)>,
    energies: Vec<Vec<f64>>,
    touching: Vec<Vec<usize>>,
    enc: Vec<Encoder>,
}

impl PlacedPotential {
    pub fn new(potential: &Potential, torus: &Torus) -> Result<Self> {
        if torus.dim() != potential.dim {
            return Err(Error::Geometry(format!(
                "{}-dimensional potential on a {}-dimensional torus",
                potential.dim,
                torus.dim()
            )));
        }
        let r = potential.range();
        if r > 0 && torus.min_side() <= 2 * r {
            return Err(Error::TorusTooSmall(format!(
                "sides {:?} must exceed twice the interaction range {r}",
                torus.sides()
            )));
        }
        let mut placements = Vec::new();
        let mut touching = vec![Vec::new(); torus.len()];
        for (k, t) in potential.terms.iter().enumerate() {
            for a in 0..torus.len() {
                let sites = torus.place(&t.shape, a);
                for &s in &sites {
                    touching[s].push(placements.len());
                }
                placements.push((k, sites));
            }
        }
        let enc = potential
            .terms
            .iter()
            .map(|t| Encoder::new(potential.q, t.shape.len()))
            .collect::<Result<_>>()?;
        Ok(PlacedPotential {
            q: potential.q,
            placements,
            energies: potential.terms.iter().map(|t| t.energies.clone()).collect(),
            touching,
            enc,
        })
    }

    fn placement_energy(&self, p: usize, state: &[u8]) -> f64 {
        let (k, sites) = &self.placements[p];
        let idx = sites
            .iter()
            .enumerate()
            .map(|(j, &s)| state[s] as usize * self.enc[*k].place(j))
            .sum::<usize>();
        self.energies[*k][idx]
    }

    /// Total energy of a full-torus configuration.
    pub fn energy(&self, state: &[u8]) -> f64 {
        (0..self.placements.len())
            .map(|p| self.placement_energy(p, state))
            .sum()
    }

    fn meeting(&self, lam: &Window) -> Vec<usize> {
        let mut ps: Vec<usize> = lam
            .iter()
            .flat_map(|&s| self.touching[s].iter().copied())
            .collect();
        ps.sort_unstable();
        ps.dedup();
        ps
    }

    /// `H_Lambda`: the placements meeting `lam`.
    pub fn local_energy(&self, lam: &Window, state: &[u8]) -> f64 {
        self.meeting(lam)
            .into_iter()
            .map(|p| self.placement_energy(p, state))
            .sum()
    }

    /// All sites of placements meeting `lam`, including `lam` itself.
    pub fn neighborhood(&self, lam: &Window) -> Window {
        let mut sites: Vec<usize> = lam.sites().to_vec();
        for p in self.meeting(lam) {
            sites.extend_from_slice(&self.placements[p].1);
        }
        Window::new(sites)
    }

    /// `-H_Lambda(sigma eta_{Lambda^c})` for every `sigma` on `lam`.
    pub fn neg_local_energies(&self, lam: &Window, state: &[u8]) -> Vec<f64> {
        let ps = self.meeting(lam);
        let enc = Encoder::new(self.q, lam.len()).expect("window within cap");
        let mut st = state.to_vec();
        (0..enc.states())
            .map(|c| {
                for (k, &s) in lam.iter().enumerate() {
                    st[s] = enc.digit(c, k) as u8;
                }
                -ps.iter().map(|&p| self.placement_energy(p, &st)).sum::<f64>()
            })
            .collect()
    }

    /// `gamma_Lambda(. | eta_{Lambda^c})` as a vector over configurations of
    /// `lam`.
    pub fn conditional(&self, lam: &Window, state: &[u8]) -> Vec<f64> {
        let mut w = self.neg_local_energies(lam, state);
        let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for x in &mut w {
            *x = (*x - m).exp();
        }
        let z: f64 = w.iter().sum();
        for x in &mut w {
            *x /= z;
        }
        w
    }
}

/// A finite-range specification backed by a potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    potential: Potential,
    nonnull_delta: f64,
}

impl Specification {
    pub fn new(potential: Potential) -> Result<Self> {
        let delta = exact_nonnull_delta(&potential)?;
        Ok(Specification {
            potential,
            nonnull_delta: delta,
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn q(&self) -> usize {
        self.potential.q
    }

    /// `inf_eta min_sigma gamma_0(sigma | eta_{0^c})`.
    pub fn nonnull_delta(&self) -> f64 {
        self.nonnull_delta
    }

    pub fn place(&self, torus: &Torus) -> Result<PlacedPotential> {
        PlacedPotential::new(&self.potential, torus)
    }

    /// `gamma_Lambda(inner | boundary)`; `boundary` must fix every site of
    /// every interaction meeting `lam` outside `lam`.
    pub fn gamma(&self, torus: &Torus, inner: &Config, boundary: &Config) -> Result<f64> {
        let lam = inner.window();
        let placed = self.place(torus)?;
        let need = placed.neighborhood(lam).difference(lam);
        if !need.is_subset(boundary.window()) {
            return Err(Error::BoundaryIncomplete(format!(
                "sites {:?} are not fixed",
                need.difference(boundary.window()).sites()
            )));
        }
        let mut state = vec![0u8; torus.len()];
        for (&s, v) in boundary.window().iter().zip(boundary.states()) {
            if !lam.contains(s) {
                state[s] = v;
            }
        }
        let table = placed.conditional(lam, &state);
        Ok(table[inner.index(self.q())?])
    }
}

fn exact_nonnull_delta(potential: &Potential) -> Result<f64> {
    let nb = potential.neighborhood_of_origin();
    let side = 2 * nb.radius() as usize + 2 * potential.range() + 1;
    let torus = Torus::cubic(potential.dim, side.max(3))?;
    let placed = PlacedPotential::new(potential, &torus)?;
    let nb_sites = torus.embed(&nb)?;
    let origin = Window::single(0);
    let boundary = nb_sites.difference(&origin);
    let enc = Encoder::new(potential.q, boundary.len())?;
    let mut state = vec![0u8; torus.len()];
    let mut delta = f64::INFINITY;
    for c in 0..enc.states() {
        for (k, &s) in boundary.iter().enumerate() {
            state[s] = enc.digit(c, k) as u8;
        }
        for p in placed.conditional(&origin, &state) {
            delta = delta.min(p);
        }
    }
    Ok(delta)
}

/// `log Z` of the Boltzmann weights on the torus.
pub fn log_partition_function(potential: &Potential, torus: &Torus) -> Result<f64> {
    let (neg_h, m) = neg_energies(potential, torus)?;
    let z: f64 = neg_h.iter().map(|x| (x - m).exp()).sum();
    Ok(m + z.ln())
}

fn neg_energies(potential: &Potential, torus: &Torus) -> Result<(Vec<f64>, f64)> {
    let placed = PlacedPotential::new(potential, torus)?;
    let enc = Encoder::new(potential.q, torus.len())?;
    let neg_h: Vec<f64> = (0..enc.states())
        .into_par_iter()
        .map(|idx| -placed.energy(&enc.decode(idx)))
        .collect();
    let m = neg_h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((neg_h, m))
}

/// Boltzmann measure `exp(-H)/Z` on the full torus.
pub fn torus_gibbs(potential: &Potential, torus: &Torus) -> Result<DenseMeasure> {
    let (neg_h, m) = neg_energies(potential, torus)?;
    let w = neg_h.into_iter().map(|x| (x - m).exp()).collect();
    DenseMeasure::from_unnormalized(torus.clone(), torus.full_window(), potential.q, w)
}

/// Full-torus state of a configuration of `m`'s window (other sites 0).
fn embed_state(m: &DenseMeasure, enc: &Encoder, idx: usize, state: &mut [u8]) {
    for (k, &s) in m.window().iter().enumerate() {
        state[s] = enc.digit(idx, k) as u8;
    }
}

fn check_covers(m: &DenseMeasure, placed: &PlacedPotential, lam: &Window) -> Result<()> {
    let nb = placed.neighborhood(lam);
    if !nb.is_subset(m.window()) {
        return Err(Error::BoundaryIncomplete(format!(
            "measure window does not contain the neighbourhood {:?}",
            nb.sites()
        )));
    }
    Ok(())
}

/// `max_{eta_Lambda} |m(gamma_Lambda(eta_Lambda | .)) - m(eta_Lambda)|`.
pub fn dlr_defect(m: &DenseMeasure, spec: &Specification, lam: &Window) -> Result<f64> {
    let placed = spec.place(m.torus())?;
    check_covers(m, &placed, lam)?;
    let enc = m.encoder();
    let proj = m.projection(lam)?;
    let lam_states = state_count(m.q(), lam.len())?;
    let mut lhs = vec![0.0; lam_states];
    let mut rhs = vec![0.0; lam_states];
    let mut state = vec![0u8; m.torus().len()];
    for idx in 0..enc.states() {
        let p = m.weights()[idx];
        rhs[proj[idx]] += p;
        if p == 0.0 {
            continue;
        }
        embed_state(m, &enc, idx, &mut state);
        for (c, g) in placed.conditional(lam, &state).into_iter().enumerate() {
            lhs[c] += p * g;
        }
    }
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `max |log gamma_Delta(eta_Delta|.)/gamma_Delta(sigma_Delta|.) -
/// log m(eta_Delta|.)/m(sigma_Delta|.)|` over contexts of positive mass.
/// A context where exactly one of the two cylinders is null gives `+inf`.
pub fn conditional_ratio_defect(m: &DenseMeasure, spec: &Specification, delta: &Window) -> Result<f64> {
    let placed = spec.place(m.torus())?;
    check_covers(m, &placed, delta)?;
    let enc = m.encoder();
    let q = m.q();
    let pos: Vec<usize> = delta.iter().map(|&s| m.window().position(s).unwrap()).collect();
    let denc = Encoder::new(q, delta.len())?;
    let mut state = vec![0u8; m.torus().len()];
    let mut worst: f64 = 0.0;
    for idx in 0..enc.states() {
        // one representative per context: delta digits all zero
        if pos.iter().any(|&k| enc.digit(idx, k) != 0) {
            continue;
        }
        let members: Vec<usize> = (0..denc.states())
            .map(|c| {
                pos.iter()
                    .enumerate()
                    .fold(idx, |acc, (j, &k)| acc + denc.digit(c, j) * enc.place(k))
            })
            .collect();
        let mass: Vec<f64> = members.iter().map(|&i| m.weights()[i]).collect();
        if mass.iter().all(|&x| x == 0.0) {
            continue;
        }
        if mass.iter().any(|&x| x == 0.0) {
            return Ok(f64::INFINITY);
        }
        embed_state(m, &enc, idx, &mut state);
        let log_g = placed.neg_local_energies(delta, &state);
        for a in 0..members.len() {
            for b in 0..a {
                let lg = log_g[a] - log_g[b];
                let lm = mass[a].ln() - mass[b].ln();
                worst = worst.max((lg - lm).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> Torus {
        Torus::ring(n).unwrap()
    }

    #[test]
    fn zero_potential_gives_uniform() {
        let t = ring(3);
        let spec = Specification::new(Potential::zero(3, 1)).unwrap();
        let lam = Window::new(vec![0, 1]);
        let inner = Config::new(lam.clone(), vec![2, 3]).unwrap();
        let bnd = Config::new(Window::single(2), vec![1]).unwrap();
        assert!((spec.gamma(&t, &inner, &bnd).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        assert!(mu.weights().iter().all(|&w| (w - 1.0 / 27.0).abs() < 1e-15));
        assert!((spec.nonnull_delta() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ising_single_site_conditional() {
        let beta: f64 = 0.5;
        let spec = Specification::new(Potential::ising(beta, 0.0, 1)).unwrap();
        let t = ring(5);
        let inner = Config::new(Window::single(0), vec![1]).unwrap();
        let bnd = Config::new(Window::new(vec![1, 4]), vec![1, 1]).unwrap();
        let g = spec.gamma(&t, &inner, &bnd).unwrap();
        let expected = (2.0 * beta).exp() / ((2.0 * beta).exp() + (-2.0 * beta).exp());
        assert!((g - expected).abs() < 1e-15);
        let incomplete = Config::new(Window::single(1), vec![1]).unwrap();
        assert!(matches!(
            spec.gamma(&t, &inner, &incomplete),
            Err(Error::BoundaryIncomplete(_))
        ));
    }

    #[test]
    fn properness_and_consistency() {
        let spec = Specification::new(Potential::ising(0.7, 0.3, 1)).unwrap();
        let t = ring(7);
        let placed = spec.place(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lam = Window::new(vec![1, 2, 3]);
        let delta = Window::new(vec![2]);
        for _ in 0..20 {
            let state: Vec<u8> = (0..7).map(|_| rng.random_range(0..2)).collect();
            let g = placed.conditional(&lam, &state);
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // gamma_Lambda(gamma_Delta(eta_Delta|.)|eta) = gamma_Lambda(eta_Delta|eta)
            let enc = Encoder::new(2, 3).unwrap();
            for target in 0..2usize {
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                for c in 0..8 {
                    let mut st = state.clone();
                    for k in 0..3 {
                        st[lam.sites()[k]] = enc.digit(c, k) as u8;
                    }
                    lhs += g[c] * placed.conditional(&delta, &st)[target];
                    if enc.digit(c, 1) == target {
                        rhs += g[c];
                    }
                }
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonnull_delta_bounds() {
        for (beta, h) in [(0.5, 0.0), (1.0, 0.4), (0.2, -1.0)] {
            let pot = Potential::ising(beta, h, 2);
            let spec = Specification::new(pot.clone()).unwrap();
            let b = pot.interaction_bound();
            assert!(spec.nonnull_delta() >= (-2.0 * b).exp() / 2.0);
            assert!(spec.nonnull_delta() > 0.0);
        }
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let e = (-1.0f64).exp() / ((-1.0f64).exp() + 1.0f64.exp());
        assert!((spec.nonnull_delta() - e).abs() < 1e-15);
    }

    #[test]
    fn partition_function_matches_transfer_matrix() {
        for (n, beta, h) in [(4usize, 0.5, 0.0), (6, 0.3, 0.2), (7, -0.4, 0.1)] {
            let pot = Potential::ising(beta, h, 1);
            let log_z = log_partition_function(&pot, &ring(n)).unwrap();
            // T[s,s'] = exp(beta s s' + h (s + s') / 2)
            let s = [1.0f64, -1.0];
            let t: Vec<Vec<f64>> = s
                .iter()
                .map(|&a| s.iter().map(|&b| (beta * a * b + h * (a + b) / 2.0).exp()).collect())
                .collect();
            let mut p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
            for _ in 0..n {
                p = (0..2)
                    .map(|i| (0..2).map(|j| (0..2).map(|k| p[i][k] * t[k][j]).sum()).collect())
                    .collect();
            }
            let z = p[0][0] + p[1][1];
            assert!((log_z - z.ln()).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn field_potential_is_a_product() {
        let t = ring(3);
        let pot = Potential::single_site(vec![0.7, 0.0], 1).unwrap();
        let mu = torus_gibbs(&pot, &t).unwrap();
        let p1 = (-0.7f64).exp() / ((-0.7f64).exp() + 1.0);
        let prod = DenseMeasure::product(&t, t.full_window(), &[p1, 1.0 - p1]).unwrap();
        assert!(mu.sup_distance(&prod) < 1e-15);
    }

    #[test]
    fn torus_too_small() {
        let pot = Potential::ising(0.5, 0.0, 1);
        assert!(matches!(torus_gibbs(&pot, &ring(2)), Err(Error::TorusTooSmall(_))));
    }

    #[test]
    fn dlr_defect_examples() {
        let t = ring(6);
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        for i in 0..6 {
            assert!(dlr_defect(&mu, &spec, &Window::single(i)).unwrap() <= 1e-12);
        }
        assert!(dlr_defect(&mu, &spec, &Window::new(vec![1, 2, 4])).unwrap() <= 1e-12);
        let u = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        // single sites are balanced by spin-flip symmetry, pairs are not
        assert!(dlr_defect(&u, &spec, &Window::single(0)).unwrap() < 1e-15);
        assert!(dlr_defect(&u, &spec, &Window::new(vec![0, 1])).unwrap() > 1e-3);
    }

    #[test]
    fn dlr_defect_zero_potential_against_brute_force() {
        let t = ring(4);
        let spec = Specification::new(Potential::zero(2, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DenseMeasure::random(&t, t.full_window(), 2, &mut rng).unwrap();
        // m(uniform(.)) = 1/2 for each state, so the defect is max |1/2 - m(eta_0)|
        let m0 = m.marginal(&Window::single(0)).unwrap();
        let brute = m0.weights().iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
        let d = dlr_defect(&m, &spec, &Window::single(0)).unwrap();
        assert!((d - brute).abs() < 1e-14);
    }

    #[test]
    fn conditional_ratio_examples() {
        let t = ring(5);
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        assert!(conditional_ratio_defect(&mu, &spec, &Window::single(2)).unwrap() <= 1e-10);

        let p = 0.8f64;
        let zero = Specification::new(Potential::zero(2, 1)).unwrap();
        let prod = DenseMeasure::product(&t, t.full_window(), &[p, 1.0 - p]).unwrap();
        let d = conditional_ratio_defect(&prod, &zero, &Window::single(0)).unwrap();
        assert!((d - (p / (1.0 - p)).ln().abs()).abs() < 1e-12);

        let pm = DenseMeasure::point_mass(&t, 2, &Config::constant(t.full_window(), 1).unwrap()).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [0.5, 0.8, 0.95, 0.999] {
            let w = pm
                .weights()
                .iter()
                .zip(mu.weights())
                .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
                .collect();
            let mix = DenseMeasure::new(t.clone(), t.full_window(), 2, w).unwrap();
            let d = conditional_ratio_defect(&mix, &spec, &Window::single(0)).unwrap();
            assert!(d > 0.0 && d < last);
            last = d;
        }
    }

    #[test]
    fn ratio_agreement_implies_dlr() {
        let t = ring(5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let beta = rng.random_range(-1.0..1.0);
            let h = rng.random_range(-1.0..1.0);
            let spec = Specification::new(Potential::ising(beta, h, 1)).unwrap();
            let mu = torus_gibbs(spec.potential(), &t).unwrap();
            let other = DenseMeasure::random(&t, t.full_window(), 2, &mut rng).unwrap();
            for m in [&mu, &other] {
                let r = conditional_ratio_defect(m, &spec, &Window::single(0)).unwrap();
                let d = dlr_defect(m, &spec, &Window::single(0)).unwrap();
                if r <= 1e-12 {
                    assert!(d <= 1e-12);
                } else {
                    assert!(d > 0.0);
                }
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let src = r#"
            q = 2
            dim = 1
            [[terms]]
            shape = [[0], [1]]
            table = { "11" = -0.5, "12" = 0.5, "21" = 0.5, "22" = -0.5 }
        "#;
        let pot = Potential::from_toml_str(src).unwrap();
        assert_eq!(pot, Potential::ising(0.5, 0.0, 1));
        let again = Potential::from_spec(&pot.to_spec()).unwrap();
        assert_eq!(again, pot);
        assert!(Potential::from_toml_str("q = 2\ndim = 1\n[[terms]]\nshape = [[0]]\ntable = { \"3\" = 1.0 }").is_err());
    }
}
