use crate::error::{Error, Result};
use crate::geometry::{Point, Shape, Torus, Window};
use crate::gibbs::{PlacedPotential, Specification};

use super::rates::{RateFamily, Rule};

/// Single-site rule whose rate for `(context, target)` is `f` applied to
/// `-H_0` over all single-site values, read on a probe torus.
fn single_site_from_energies(
    spec: &Specification,
    f: impl Fn(&[f64], usize, usize) -> f64,
) -> Result<RateFamily> {
    let pot = spec.potential();
    let d = pot.dim();
    let dep = pot.neighborhood_of_origin();
    let side = 2 * dep.radius() as usize + 2 * pot.range() + 1;
    let torus = Torus::cubic(d, side.max(3))?;
    let placed = PlacedPotential::new(pot, &torus)?;
    let sites: Vec<usize> = dep.iter().map(|p| torus.site(p)).collect();
    let origin = dep.position(&Point::origin(d)).unwrap();
    let rule = Rule::from_fn(pot.q(), Shape::origin(d), dep.clone(), |ctx, target| {
        let mut state = vec![0u8; torus.len()];
        for (&s, &v) in sites.iter().zip(ctx) {
            state[s] = v;
        }
        let neg_h = placed.neg_local_energies(&Window::single(0), &state);
        f(&neg_h, ctx[origin] as usize, target[0] as usize)
    })?;
    RateFamily::new(pot.q(), d, vec![rule])
}

/// Heat-bath Glauber dynamics: `c(eta, sigma_0) = gamma_0(sigma_0 | eta)`.
pub fn glauber_heat_bath(spec: &Specification) -> Result<RateFamily> {
    single_site_from_energies(spec, |neg_h, _, t| {
        let m = neg_h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = neg_h.iter().map(|x| (x - m).exp()).sum();
        (neg_h[t] - m).exp() / z
    })
}

/// Metropolis Glauber dynamics: `c(eta, sigma_0) = min(1, exp(-(H_0(sigma
/// eta) - H_0(eta))))`.
pub fn glauber_metropolis(spec: &Specification) -> Result<RateFamily> {
    single_site_from_energies(spec, |neg_h, cur, t| (neg_h[t] - neg_h[cur]).exp().min(1.0))
}

/// Nearest-neighbour exclusion on `{1,2}^{Z^d}`, state 2 being a particle:
/// a particle hops along `+e_a` at rate `p_right` and along `-e_a` at rate
/// `p_left` when the target site is empty.
pub fn exclusion(p_right: f64, p_left: f64, dim: usize) -> Result<RateFamily> {
    if !(p_right >= 0.0 && p_left >= 0.0) {
        return Err(Error::Config("hopping rates must be non-negative".into()));
    }
    let mut rules = Vec::new();
    for a in 0..dim {
        let mut e = vec![0; dim];
        e[a] = 1;
        let bond = Shape::new(dim, vec![Point::origin(dim), Point(e)])?;
        rules.push(Rule::from_fn(2, bond.clone(), bond, |c, t| match (c, t) {
            ([1, 0], [0, 1]) => p_right,
            ([0, 1], [1, 0]) => p_left,
            _ => 0.0,
        })?);
    }
    RateFamily::new(2, dim, rules)
}

/// Cyclic clock: `s -> s+1 mod q` at `forward`, `s -> s-1 mod q` at
/// `backward`, independently at every site.
pub fn cyclic_clock(q: usize, forward: f64, backward: f64, dim: usize) -> Result<RateFamily> {
    let o = Shape::origin(dim);
    let rule = Rule::from_fn(q, o.clone(), o, |c, t| {
        let (s, t) = (c[0] as usize, t[0] as usize);
        let mut r = 0.0;
        if t == (s + 1) % q {
            r += forward;
        }
        if t == (s + q - 1) % q {
            r += backward;
        }
        r
    })?;
    RateFamily::new(q, dim, vec![rule])
}

/// Every site jumps to each other state at `rate`.
pub fn flip(q: usize, rate: f64, dim: usize) -> Result<RateFamily> {
    let o = Shape::origin(dim);
    let rule = Rule::from_fn(q, o.clone(), o, |_, _| rate)?;
    RateFamily::new(q, dim, vec![rule])
}

/// Contact-process toy with trap states (state 2 infected): infection at
/// `infection` per infected neighbour, recovery at `recovery`.
pub fn contact(infection: f64, recovery: f64, dim: usize) -> Result<RateFamily> {
    let mut pts = vec![Point::origin(dim)];
    for a in 0..dim {
        for s in [-1, 1] {
            let mut e = vec![0; dim];
            e[a] = s;
            pts.push(Point(e));
        }
    }
    let dep = Shape::new(dim, pts)?;
    let origin = dep.position(&Point::origin(dim)).unwrap();
    let rule = Rule::from_fn(2, Shape::origin(dim), dep, |c, t| {
        let sick = c.iter().enumerate().filter(|&(k, &v)| k != origin && v == 1).count();
        match (c[origin], t[0]) {
            (0, 1) => infection * sick as f64,
            (1, 0) => recovery,
            _ => 0.0,
        }
    })?;
    RateFamily::new(2, dim, vec![rule])
}
