//! Relative entropy and the entropy-loss functionals built on it.
//!
//! All functionals read `Delta^c` and `Lambda \ Delta` on the torus carrying
//! the measure. Values are extended reals: `0 * log(0 / x)` and terms of zero
//! weight are `0`, a jump of positive weight into a configuration of zero
//! mass gives `-inf`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{detailed_balance_defect, PlacedRates, RateFamily};
use crate::error::{Error, Result};
use crate::geometry::{ball, make_box_family, BoxFamily, Torus, Window};
use crate::gibbs::Specification;
use crate::measure::{config_string, pairwise_sum, DenseMeasure, Encoder};

/// `Psi(u) = -u log u + u - 1`, with `Psi(0) = -1`.
pub fn psi(u: f64) -> f64 {
    if u == 0.0 {
        -1.0
    } else {
        -u * u.ln() + u - 1.0
    }
}

/// `a * Psi(b / a) = -b log(b / a) + b - a` for `a, b >= 0`, extended by its
/// limits: `0` at `a = b = 0` and `-inf` at `a = 0 < b`.
pub fn psi_perspective(a: f64, b: f64) -> f64 {
    match (a > 0.0, b > 0.0) {
        (true, true) => -b * (b / a).ln() + b - a,
        (true, false) => -a,
        (false, true) => f64::NEG_INFINITY,
        (false, false) => 0.0,
    }
}

mod ext_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("not an extended real: {t}"))),
            },
        }
    }
}

/// One contribution: centre site (when the functional sums over centres),
/// placed transition shape and target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub site: Option<usize>,
    pub rule: usize,
    pub anchor: usize,
    pub shape_sites: Vec<usize>,
    pub target: String,
    #[serde(with = "ext_real")]
    pub value: f64,
}

/// An extended-real value with its per-term breakdown. Breakdown values
/// already carry the division by `normalization`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    #[serde(with = "ext_real")]
    pub value: f64,
    pub breakdown: Vec<Term>,
    pub normalization: f64,
}

impl EntropyReport {
    fn from_terms(terms: Vec<Term>, normalization: f64) -> Self {
        let vals: Vec<f64> = terms.iter().map(|t| t.value).collect();
        EntropyReport {
            value: pairwise_sum(&vals),
            breakdown: terms,
            normalization,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `|value - sum of breakdown|`, zero for non-finite values.
    pub fn breakdown_defect(&self) -> f64 {
        if !self.value.is_finite() {
            return 0.0;
        }
        let s: f64 = self.breakdown.iter().map(|t| t.value).sum();
        (self.value - s).abs()
    }
}

/// `h_Lambda(nu | mu) = sum nu log(nu / mu)` over configurations of `lam`;
/// `+inf` when `nu` charges a configuration `mu` does not.
pub fn local_relative_entropy(nu: &DenseMeasure, mu: &DenseMeasure, lam: &Window) -> Result<f64> {
    if nu.torus() != mu.torus() || nu.q() != mu.q() {
        return Err(Error::InvalidMeasure("measures live on different spaces".into()));
    }
    let a = nu.marginal(lam)?;
    let b = mu.marginal(lam)?;
    let terms: Vec<f64> = a
        .weights()
        .iter()
        .zip(b.weights())
        .map(|(&x, &y)| {
            if x == 0.0 {
                0.0
            } else if y == 0.0 {
                f64::INFINITY
            } else {
                x * (x / y).ln()
            }
        })
        .collect();
    Ok(pairwise_sum(&terms).max(0.0))
}

/// `h_Lambda / |Lambda|` along a schedule of windows.
pub fn entropy_density_estimate(
    nu: &DenseMeasure,
    mu: &DenseMeasure,
    schedule: &[Window],
) -> Result<Vec<(Window, f64)>> {
    schedule
        .iter()
        .map(|w| Ok((w.clone(), local_relative_entropy(nu, mu, w)? / w.len() as f64)))
        .collect()
}

struct Setup<'a> {
    nu: &'a DenseMeasure,
    placed: PlacedRates,
    by_site: Vec<Vec<usize>>,
}

impl<'a> Setup<'a> {
    fn new(nu: &'a DenseMeasure, rates: &RateFamily) -> Result<Self> {
        if !nu.is_full_torus() {
            return Err(Error::InvalidMeasure(
                "entropy-loss functionals need a full-torus measure".into(),
            ));
        }
        if nu.q() != rates.q() {
            return Err(Error::InvalidMeasure(format!(
                "measure over {} states, rates over {}",
                nu.q(),
                rates.q()
            )));
        }
        let placed = PlacedRates::new(rates, nu.torus())?;
        let mut by_site = vec![Vec::new(); nu.torus().len()];
        for (p, pl) in placed.placements().iter().enumerate() {
            for &s in &pl.shape_sites {
                by_site[s].push(p);
            }
        }
        Ok(Setup { nu, placed, by_site })
    }

    fn q(&self) -> usize {
        self.nu.q()
    }

    fn target_string(&self, p: usize, t: usize) -> String {
        let r = &self.placed.rates().rules()[self.placed.placements()[p].rule];
        config_string(&r.target_encoder().decode(t), self.q())
    }

    /// For every centre `i` and placement `p` whose shape contains `i`, and
    /// every target: `(scale / |Delta|) * sum_eta nu(eta) c(eta, sigma) * f`.
    fn centred_terms<F>(&self, centres: &Window, scale: f64, f: F) -> Result<Vec<Term>>
    where
        F: Fn(usize, usize, usize, usize, f64) -> Result<f64> + Sync,
    {
        let pairs: Vec<(usize, usize)> = centres
            .iter()
            .flat_map(|&i| self.by_site[i].iter().map(move |&p| (i, p)))
            .collect();
        let chunks: Vec<Result<Vec<Term>>> = pairs
            .par_iter()
            .map(|&(i, p)| {
                let pl = &self.placed.placements()[p];
                let w = scale / pl.shape_sites.len() as f64;
                let sums = self.jump_sums(p, &f)?;
                Ok(sums
                    .into_iter()
                    .enumerate()
                    .map(|(t, s)| Term {
                        site: Some(i),
                        rule: pl.rule,
                        anchor: pl.anchor,
                        shape_sites: pl.shape_sites.clone(),
                        target: self.target_string(p, t),
                        value: if s == 0.0 { 0.0 } else { w * s },
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::new();
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// `sum_eta nu(eta) c_p(eta, sigma) f(p, eta, sigma, sigma eta, c)` per
    /// target `sigma`, skipping terms of zero weight.
    fn jump_sums<F>(&self, p: usize, f: &F) -> Result<Vec<f64>>
    where
        F: Fn(usize, usize, usize, usize, f64) -> Result<f64>,
    {
        let r = &self.placed.rates().rules()[self.placed.placements()[p].rule];
        let t = r.targets();
        let mut acc = vec![Vec::new(); t];
        for (idx, &w) in self.nu.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let ctx = self.placed.context(p, idx);
            for (s, a) in acc.iter_mut().enumerate() {
                let c = r.rate(ctx, s);
                if c <= 0.0 {
                    continue;
                }
                let to = self.placed.jump(p, idx, s);
                a.push(w * c * f(p, idx, s, to, c)?);
            }
        }
        Ok(acc.iter().map(|a| pairwise_sum(a)).collect())
    }
}

/// Marginal of a full-torus measure on a window, indexed by full states.
struct View {
    proj: Vec<usize>,
    marg: Vec<f64>,
}

impl View {
    fn new(nu: &DenseMeasure, lam: &Window) -> Result<Self> {
        Ok(View {
            proj: nu.projection(lam)?,
            marg: nu.marginal(lam)?.into_weights(),
        })
    }

    #[inline]
    fn at(&self, idx: usize) -> f64 {
        self.marg[self.proj[idx]]
    }
}

fn ln_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        f64::NAN
    } else {
        (a / b).ln()
    }
}

fn trap_error(s: &Setup, p: usize, idx: usize, t: usize) -> Error {
    let pl = &s.placed.placements()[p];
    Error::TrapState(format!(
        "rule {} at site {}: jump to {} from {} cannot be undone",
        pl.rule,
        pl.anchor,
        s.target_string(p, t),
        config_string(&s.placed.encoder().decode(idx), s.q())
    ))
}

/// `(d/dt)|_{t=0} h_Lambda(nu P_t | mu)` for the torus dynamics: the sum over
/// placed jumps meeting `Lambda` of
/// `nu(eta) c(eta, sigma) [l(sigma eta) - l(eta)]`, `l = log(nu_Lambda / mu_Lambda)`.
///
/// When some `l` is infinite the value is computed from the flows
/// `(nu Q)_Lambda(omega)` instead and the breakdown is left empty; it is `NaN`
/// when `nu_Lambda` charges a configuration `mu_Lambda` does not.
pub fn entropy_loss_finite(
    nu: &DenseMeasure,
    mu: &DenseMeasure,
    rates: &RateFamily,
    lam: &Window,
) -> Result<EntropyReport> {
    if nu.torus() != mu.torus() {
        return Err(Error::InvalidMeasure("measures live on different tori".into()));
    }
    let s = Setup::new(nu, rates)?;
    let vn = View::new(nu, lam)?;
    let mm = mu.marginal(lam)?.into_weights();
    let ell: Vec<f64> = vn
        .marg
        .iter()
        .zip(&mm)
        .map(|(&a, &b)| if a > 0.0 { ln_ratio(a, b) } else { f64::NEG_INFINITY })
        .collect();
    let meeting = s.placed.meeting(lam);

    let finite = {
        let reach: Vec<bool> = {
            let mut r = vec![false; ell.len()];
            for (idx, &w) in nu.weights().iter().enumerate() {
                if w > 0.0 {
                    r[vn.proj[idx]] = true;
                    for &p in &meeting {
                        let rule = &rates.rules()[s.placed.placements()[p].rule];
                        let ctx = s.placed.context(p, idx);
                        for t in 0..rule.targets() {
                            if rule.rate(ctx, t) > 0.0 {
                                r[vn.proj[s.placed.jump(p, idx, t)]] = true;
                            }
                        }
                    }
                }
            }
            r
        };
        reach.iter().zip(&ell).all(|(&r, &l)| !r || l.is_finite())
    };

    if finite {
        let f = |_: usize, idx: usize, _: usize, to: usize, _: f64| Ok(ell[vn.proj[to]] - ell[vn.proj[idx]]);
        let chunks: Vec<Result<Vec<Term>>> = meeting
            .par_iter()
            .map(|&p| {
                let pl = &s.placed.placements()[p];
                Ok(s.jump_sums(p, &f)?
                    .into_iter()
                    .enumerate()
                    .map(|(t, v)| Term {
                        site: None,
                        rule: pl.rule,
                        anchor: pl.anchor,
                        shape_sites: pl.shape_sites.clone(),
                        target: s.target_string(p, t),
                        value: v,
                    })
                    .collect())
            })
            .collect();
        let mut terms = Vec::new();
        for c in chunks {
            terms.extend(c?);
        }
        return Ok(EntropyReport::from_terms(terms, 1.0));
    }

    let mut flow = vec![0.0; ell.len()];
    for (idx, &w) in nu.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for &p in &meeting {
            let rule = &rates.rules()[s.placed.placements()[p].rule];
            let ctx = s.placed.context(p, idx);
            for t in 0..rule.targets() {
                let c = rule.rate(ctx, t);
                if c > 0.0 {
                    flow[vn.proj[s.placed.jump(p, idx, t)]] += w * c;
                    flow[vn.proj[idx]] -= w * c;
                }
            }
        }
    }
    let terms: Vec<f64> = flow
        .iter()
        .zip(vn.marg.iter().zip(&mm))
        .map(|(&fl, (&a, &b))| match (a > 0.0, b > 0.0) {
            (true, false) => f64::NAN,
            _ if fl == 0.0 => 0.0,
            (true, true) => fl * (a / b).ln(),
            (false, true) => f64::NEG_INFINITY,
            (false, false) => f64::INFINITY,
        })
        .collect();
    Ok(EntropyReport {
        value: pairwise_sum(&terms),
        breakdown: Vec::new(),
        normalization: 1.0,
    })
}

/// `g_L^Lambda(nu) = sum_{i in Lambda} sum_{Delta ∋ i} 1/|Delta| sum_sigma
/// ∫ nu c log[nu(sigma_{Delta∩Lambda} eta_{Lambda\Delta}) / nu(eta_Lambda)]`.
pub fn finite_entropy_loss(nu: &DenseMeasure, rates: &RateFamily, lam: &Window) -> Result<EntropyReport> {
    centred_log_ratio(nu, rates, lam, lam, 1.0)
}

fn centred_log_ratio(
    nu: &DenseMeasure,
    rates: &RateFamily,
    centres: &Window,
    lam: &Window,
    norm: f64,
) -> Result<EntropyReport> {
    let s = Setup::new(nu, rates)?;
    let v = View::new(nu, lam)?;
    let terms = s.centred_terms(centres, 1.0 / norm, |_, idx, _, to, _| Ok(ln_ratio(v.at(to), v.at(idx))))?;
    Ok(EntropyReport::from_terms(terms, norm))
}

/// Specific entropy loss
/// `sum_{Delta ∋ 0} sum_xi ∫ nu c (1/|Delta|) log[nu(xi_Delta | eta_{Delta^c}) / nu(eta_Delta | eta_{Delta^c})]`
/// read at the origin of the torus.
pub fn specific_entropy_loss(nu: &DenseMeasure, rates: &RateFamily) -> Result<EntropyReport> {
    let delta = nu.non_nullness_constant()?;
    if delta <= 0.0 {
        return Err(Error::NotNonNull { delta });
    }
    let full = nu.torus().full_window();
    centred_log_ratio(nu, rates, &Window::single(0), &full, 1.0)
}

/// Specific energy loss from the specification:
/// `sum_{Delta ∋ 0} sum_xi ∫ nu c (1/|Delta|) [H_Delta(xi_Delta eta) - H_Delta(eta)]`.
pub fn specific_energy_loss(nu: &DenseMeasure, rates: &RateFamily, spec: &Specification) -> Result<f64> {
    let s = Setup::new(nu, rates)?;
    if spec.q() != nu.q() {
        return Err(Error::InvalidMeasure("specification and measure disagree on q".into()));
    }
    let pot = spec.place(nu.torus())?;
    let enc = s.placed.encoder();
    let shapes: Vec<Window> = s
        .placed
        .placements()
        .iter()
        .map(|pl| Window::new(pl.shape_sites.clone()))
        .collect();
    let terms = s.centred_terms(&Window::single(0), 1.0, |p, idx, _, to, _| {
        let a = enc.decode(to);
        let b = enc.decode(idx);
        Ok(pot.local_energy(&shapes[p], &a) - pot.local_energy(&shapes[p], &b))
    })?;
    Ok(EntropyReport::from_terms(terms, 1.0).value)
}

/// Specific energy loss read off the flows: `-(1/N) sum_omega (nu Q)(omega) log mu(omega)`
/// on the full torus.
pub fn specific_energy_loss_direct(nu: &DenseMeasure, rates: &RateFamily, mu: &DenseMeasure) -> Result<f64> {
    let s = Setup::new(nu, rates)?;
    if !mu.is_full_torus() || mu.torus() != nu.torus() {
        return Err(Error::InvalidMeasure("mu must be a full-torus measure on the same torus".into()));
    }
    let lm: Vec<f64> = mu.weights().iter().map(|&m| m.ln()).collect();
    let all: Vec<usize> = (0..s.placed.placements().len()).collect();
    let parts: Vec<Result<f64>> = all
        .par_iter()
        .map(|&p| {
            let sums = s.jump_sums(p, &|_, idx, _, to, _| Ok(lm[idx] - lm[to]))?;
            Ok(pairwise_sum(&sums))
        })
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&parts) / nu.torus().len() as f64)
}

/// The boxes `Lambda_n`, `tilde Lambda_n` placed at the origin of the torus.
#[derive(Clone, Debug)]
pub struct PlacedBoxes {
    pub family: BoxFamily,
    pub outer: Window,
    pub inner: Window,
}

pub fn place_boxes(torus: &Torus, n: u32) -> Result<PlacedBoxes> {
    let family = make_box_family(n, torus.dim())?;
    let outer = torus.embed(&family.outer)?;
    let inner = torus.embed(&family.inner)?;
    Ok(PlacedBoxes { family, outer, inner })
}

/// `tilde g_L^n(nu)`: the entropy loss of `Lambda_n` with centres restricted
/// to `tilde Lambda_n`, divided by `|Lambda_n|`.
pub fn g_tilde(nu: &DenseMeasure, rates: &RateFamily, n: u32) -> Result<EntropyReport> {
    let b = place_boxes(nu.torus(), n)?;
    centred_log_ratio(nu, rates, &b.inner, &b.outer, b.outer.len() as f64)
}

/// `sum_r c_r q^{|Delta_r|} |Lambda_n \ tilde Lambda_n| / |Lambda_n|`, an upper
/// bound for `g_L^{Lambda_n}(nu)/|Lambda_n| - tilde g_L^n(nu)`.
pub fn boundary_bound(rates: &RateFamily, n: u32) -> Result<f64> {
    let fam = make_box_family(n, rates.dim())?;
    let q = rates.q() as f64;
    let per_site: f64 = rates
        .rules()
        .iter()
        .map(|r| r.sup_total() * q.powi(r.shape().len() as i32))
        .sum();
    let outer = fam.outer.len() as f64;
    Ok(per_site * (outer - fam.inner.len() as f64) / outer)
}

/// `|Lambda| log(1/delta) sum_{Delta ∋ 0} c_Delta`, the bound on
/// `|g_L^Lambda(nu)|` for a measure with non-nullness constant `delta`.
pub fn entropy_loss_bound(rates: &RateFamily, delta: f64, volume: usize) -> f64 {
    volume as f64 * (1.0 / delta).ln() * rates.total_rate_bound()
}

/// The two parts of the box entropy loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrDecomposition {
    pub s_n: EntropyReport,
    pub r_n: EntropyReport,
    /// `r(L, nu)`, the density of `r_n` read at the origin.
    #[serde(with = "ext_real")]
    pub r_density: f64,
    /// `|Lambda_n| tilde g_L^n(nu)` computed on its own.
    #[serde(with = "ext_real")]
    pub g_tilde_total: f64,
    #[serde(with = "ext_real")]
    pub defect: f64,
}

/// `s_n + r_n = |Lambda_n| tilde g_L^n(nu)` with
/// `r_n = sum ∫ nu c log[q^{|Delta|} c^sigma(eta) / c(sigma_Delta eta_{Delta^c})]`.
pub fn s_r_decomposition(nu: &DenseMeasure, rates: &RateFamily, n: u32) -> Result<SrDecomposition> {
    let s = Setup::new(nu, rates)?;
    let b = place_boxes(nu.torus(), n)?;
    let v = View::new(nu, &b.outer)?;
    let q = s.q() as f64;
    let back = |p: usize, idx: usize, t: usize, to: usize| -> Result<f64> {
        let c = s.placed.total(p, to);
        if c <= 0.0 {
            return Err(trap_error(&s, p, idx, t));
        }
        Ok(c)
    };
    let qk = |p: usize| q.powi(s.placed.placements()[p].shape_sites.len() as i32);
    let s_terms = s.centred_terms(&b.inner, 1.0, |p, idx, t, to, c| {
        let cb = back(p, idx, t, to)?;
        Ok(-ln_ratio(v.at(idx) * qk(p) * c, v.at(to) * cb))
    })?;
    let r_of = |p: usize, idx: usize, t: usize, to: usize, c: f64| -> Result<f64> {
        let cb = back(p, idx, t, to)?;
        Ok((qk(p) * c / cb).ln())
    };
    let r_terms = s.centred_terms(&b.inner, 1.0, r_of)?;
    let r_density = EntropyReport::from_terms(s.centred_terms(&Window::single(0), 1.0, r_of)?, 1.0).value;
    let s_n = EntropyReport::from_terms(s_terms, 1.0);
    let r_n = EntropyReport::from_terms(r_terms, 1.0);
    let g_tilde_total = g_tilde(nu, rates, n)?.value * b.outer.len() as f64;
    let defect = (s_n.value + r_n.value - g_tilde_total).abs();
    Ok(SrDecomposition {
        s_n,
        r_n,
        r_density,
        g_tilde_total,
        defect,
    })
}

/// Rates truncated to `ball` (offsets from each rule's origin):
/// `inf` over every completion outside the ball.
pub fn truncated_rates(rates: &RateFamily, ball: &crate::geometry::Shape) -> RateFamily {
    rates.truncated(ball)
}

/// The Psi-form approximation `f_n(nu)` of `s_n`: for each centre `i`,
/// placement `Delta ∋ i`, target `sigma` and box configuration `eta`,
/// `q^{-|Delta|} |Delta|^{-1} tilde c(eta_{B \ Delta} sigma_{B ∩ Delta}) a Psi(b / a)`
/// with `a = nu(sigma_Delta eta_{Lambda_n \ Delta})`,
/// `b = ∫ nu 1_eta q^{|Delta|} c^sigma / c(sigma_Delta xi_{Delta^c})` and the
/// rates truncated to the ball `B_{n-1}(i)`.
pub fn f_n(nu: &DenseMeasure, rates: &RateFamily, n: u32) -> Result<EntropyReport> {
    if n == 0 {
        return Err(Error::Geometry("f_n needs n >= 1".into()));
    }
    let s = Setup::new(nu, rates)?;
    let boxes = place_boxes(nu.torus(), n)?;
    let lam = &boxes.outer;
    let lenc = Encoder::new(s.q(), lam.len())?;
    let proj = nu.projection(lam)?;
    let marg = nu.marginal(lam)?.into_weights();
    let q = s.q() as f64;
    let torus = nu.torus();

    let pairs: Vec<(usize, usize)> = boxes
        .inner
        .iter()
        .flat_map(|&i| s.by_site[i].iter().map(move |&p| (i, p)))
        .collect();
    let chunks: Vec<Result<Vec<Term>>> = pairs
        .par_iter()
        .map(|&(i, p)| {
            let pl = &s.placed.placements()[p];
            let rule = &rates.rules()[pl.rule];
            let j = pl.shape_sites.iter().position(|&x| x == i).unwrap();
            let centre = &rule.shape().points()[j];
            let trunc = rule.truncated(&ball(centre, (n - 1) as u64));
            let tdep: Vec<usize> = torus
                .place(trunc.dep(), pl.anchor)
                .into_iter()
                .map(|site| {
                    lam.position(site).ok_or_else(|| {
                        Error::TorusTooSmall(format!("truncation ball around {i} leaves the box"))
                    })
                })
                .collect::<Result<_>>()?;
            let shape_pos: Vec<Option<usize>> = pl.shape_sites.iter().map(|&x| lam.position(x)).collect();
            let te = rule.target_encoder();
            let qk = q.powi(pl.shape_sites.len() as i32);
            let scale = 1.0 / (qk * pl.shape_sites.len() as f64);
            let mut out = Vec::with_capacity(rule.targets());
            for t in 0..rule.targets() {
                let mut bsum = vec![0.0; marg.len()];
                for (idx, &w) in nu.weights().iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let c = s.placed.rate(p, idx, t);
                    if c <= 0.0 {
                        continue;
                    }
                    let to = s.placed.jump(p, idx, t);
                    let cb = s.placed.total(p, to);
                    if cb <= 0.0 {
                        return Err(trap_error(&s, p, idx, t));
                    }
                    bsum[proj[idx]] += w * qk * c / cb;
                }
                let mut acc = Vec::with_capacity(marg.len());
                for (eta, &b) in bsum.iter().enumerate() {
                    let put = shape_pos
                        .iter()
                        .enumerate()
                        .filter_map(|(k, pos)| pos.map(|pos| (k, pos)))
                        .fold(eta, |e, (k, pos)| lenc.with_digit(e, pos, te.digit(t, k)));
                    let a = marg[put];
                    let ctx: usize = tdep
                        .iter()
                        .enumerate()
                        .map(|(m, &pos)| lenc.digit(put, pos) * trunc.context_encoder().place(m))
                        .sum();
                    let ct = trunc.total(ctx);
                    if ct > 0.0 {
                        acc.push(ct * psi_perspective(a, b));
                    }
                }
                out.push(Term {
                    site: Some(i),
                    rule: pl.rule,
                    anchor: pl.anchor,
                    shape_sites: pl.shape_sites.clone(),
                    target: s.target_string(p, t),
                    value: scale * pairwise_sum(&acc),
                });
            }
            Ok(out)
        })
        .collect();
    let mut terms = Vec::new();
    for c in chunks {
        terms.extend(c?);
    }
    Ok(EntropyReport::from_terms(terms, 1.0))
}

/// `G(n) = prod_{l >= n} ((2^{l+2} - 2) / (2^{l+2} - 1))^d`, truncated once a
/// factor exceeds `1 - 1e-14`. Returns the product and a bound on the
/// relative error of the truncation.
pub fn volume_compensation(n: u32, d: usize) -> (f64, f64) {
    let mut log_g: f64 = 0.0;
    let mut l = n;
    loop {
        let m = 2f64.powi(l as i32 + 2);
        let factor = (m - 2.0) / (m - 1.0);
        if factor > 1.0 - 1e-14 {
            // remaining factors satisfy 1 - f_l < 2^{-(l+1)}, so the tail
            // log-product is above -d 2^{-l}
            let tail = d as f64 * 2f64.powi(-(l as i32));
            return (log_g.exp(), tail);
        }
        log_g += d as f64 * factor.ln();
        l += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenPoint {
    pub n: u32,
    #[serde(with = "ext_real")]
    pub f_n: f64,
    pub g: f64,
    #[serde(with = "ext_real")]
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenSequence {
    pub points: Vec<JensenPoint>,
    /// Largest increase of the normalized sequence, `0` if non-increasing.
    pub max_increase: f64,
    /// Largest `f_n - 2^d f_{n-1}`, `0` if the doubling bound holds.
    pub max_doubling_excess: f64,
}

/// `G(n) f_n(nu) / (2^{n+1} - 1)^d` for `n = 1..=n_max`.
pub fn jensen_monotone_sequence(nu: &DenseMeasure, rates: &RateFamily, n_max: u32) -> Result<JensenSequence> {
    let d = nu.torus().dim();
    let mut points = Vec::new();
    for n in 1..=n_max {
        let f = f_n(nu, rates, n)?.value;
        let (g, _) = volume_compensation(n, d);
        let vol = 2f64.powi(n as i32 + 1) - 1.0;
        points.push(JensenPoint {
            n,
            f_n: f,
            g,
            normalized: g * f / vol.powi(d as i32),
        });
    }
    let mut max_increase: f64 = 0.0;
    let mut max_doubling_excess: f64 = 0.0;
    for w in points.windows(2) {
        let inc = w[1].normalized - w[0].normalized;
        let exc = w[1].f_n - 2f64.powi(d as i32) * w[0].f_n;
        if inc.is_nan() || exc.is_nan() {
            max_increase = f64::NAN;
            max_doubling_excess = f64::NAN;
            continue;
        }
        if inc.is_finite() {
            max_increase = max_increase.max(inc);
        }
        if exc.is_finite() {
            max_doubling_excess = max_doubling_excess.max(exc);
        }
    }
    Ok(JensenSequence {
        points,
        max_increase,
        max_doubling_excess,
    })
}

/// The reversible split of the box entropy loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversibleDecomposition {
    pub s_n: EntropyReport,
    pub r_n: EntropyReport,
    /// `r(L, nu)` read at the origin.
    #[serde(with = "ext_real")]
    pub r_rev: f64,
    #[serde(with = "ext_real")]
    pub rho: f64,
    /// `|r_rev + rho|`.
    #[serde(with = "ext_real")]
    pub identity_defect: f64,
    /// `|s_n + r_n - |Lambda_n| tilde g_L^n(nu)|`.
    #[serde(with = "ext_real")]
    pub split_defect: f64,
}

/// Largest detailed-balance defect accepted by [`reversible_decomposition`].
pub const REVERSIBILITY_TOL: f64 = 1e-10;

/// `s_n`, `r_n` with the reverse rate `c^{eta_Delta}(sigma_Delta eta_{Delta^c})`
/// in place of `q^{-|Delta|} c(sigma_Delta eta_{Delta^c})`, and the identity
/// `r + rho = 0`.
pub fn reversible_decomposition(
    nu: &DenseMeasure,
    rates: &RateFamily,
    spec: &Specification,
    n: u32,
) -> Result<ReversibleDecomposition> {
    let db = detailed_balance_defect(rates, spec, nu.torus())?;
    if db > REVERSIBILITY_TOL {
        return Err(Error::NotReversible(db));
    }
    let s = Setup::new(nu, rates)?;
    let b = place_boxes(nu.torus(), n)?;
    let v = View::new(nu, &b.outer)?;
    let reverse = |p: usize, idx: usize, t: usize, to: usize| -> Result<f64> {
        let c = s.placed.rate(p, to, s.placed.current_target(p, idx));
        if c <= 0.0 {
            return Err(trap_error(&s, p, idx, t));
        }
        Ok(c)
    };
    let s_terms = s.centred_terms(&b.inner, 1.0, |p, idx, t, to, c| {
        let cb = reverse(p, idx, t, to)?;
        Ok(-ln_ratio(v.at(idx) * c, v.at(to) * cb))
    })?;
    let r_of = |p: usize, idx: usize, t: usize, to: usize, c: f64| -> Result<f64> { Ok((c / reverse(p, idx, t, to)?).ln()) };
    let r_terms = s.centred_terms(&b.inner, 1.0, r_of)?;
    let r_rev = EntropyReport::from_terms(s.centred_terms(&Window::single(0), 1.0, r_of)?, 1.0).value;
    let rho = specific_energy_loss(nu, rates, spec)?;
    let s_n = EntropyReport::from_terms(s_terms, 1.0);
    let r_n = EntropyReport::from_terms(r_terms, 1.0);
    let g_total = g_tilde(nu, rates, n)?.value * b.outer.len() as f64;
    Ok(ReversibleDecomposition {
        split_defect: (s_n.value + r_n.value - g_total).abs(),
        identity_defect: (r_rev + rho).abs(),
        s_n,
        r_n,
        r_rev,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::*;
    use crate::gibbs::{torus_gibbs, Potential};
    use crate::measure::Config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_ti(t: &Torus, q: usize, seed: u64, eps: f64) -> DenseMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMeasure::random(t, t.full_window(), q, &mut rng)
            .unwrap()
            .translation_average()
            .unwrap()
            .soften(eps)
            .unwrap()
    }

    fn random_full(t: &Torus, q: usize, seed: u64) -> DenseMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMeasure::random(t, t.full_window(), q, &mut rng).unwrap()
    }

    #[test]
    fn psi_shape() {
        assert_eq!(psi(1.0), 0.0);
        assert_eq!(psi(0.0), -1.0);
        for k in 0..200 {
            let u = k as f64 * 0.05;
            assert!(psi(u) <= 0.0);
            // concavity on a grid
            let (a, b) = (psi(u), psi(u + 0.1));
            assert!(psi(u + 0.05) >= 0.5 * (a + b) - 1e-15);
        }
        assert_eq!(psi_perspective(0.0, 0.0), 0.0);
        assert_eq!(psi_perspective(0.0, 1.0), f64::NEG_INFINITY);
        assert!((psi_perspective(2.0, 3.0) - 2.0 * psi(1.5)).abs() < 1e-15);
    }

    #[test]
    fn relative_entropy_values() {
        let t = Torus::ring(3).unwrap();
        let w = t.full_window();
        let nu = DenseMeasure::product(&t, w.clone(), &[0.75, 0.25]).unwrap();
        let mu = DenseMeasure::uniform(&t, w.clone(), 2).unwrap();
        let h = local_relative_entropy(&nu, &mu, &Window::single(1)).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 0.130812).abs() < 1e-6);
        assert_eq!(local_relative_entropy(&nu, &nu, &w).unwrap(), 0.0);

        let pm = DenseMeasure::point_mass(&t, 2, &Config::constant(w.clone(), 1).unwrap()).unwrap();
        let pm2 = DenseMeasure::point_mass(&t, 2, &Config::constant(w.clone(), 2).unwrap()).unwrap();
        assert_eq!(local_relative_entropy(&pm, &pm2, &w).unwrap(), f64::INFINITY);

        // additivity: constant density for products
        let dens = entropy_density_estimate(&nu, &mu, &[Window::single(0), Window::new(vec![0, 1]), w]).unwrap();
        for (_, v) in dens {
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn ising_density_decreases() {
        let t = Torus::ring(8).unwrap();
        let mu = torus_gibbs(&Potential::ising(0.8, 0.0, 1), &t).unwrap();
        let nu = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        let sched = [
            Window::single(0),
            Window::new(vec![7, 0, 1]),
            Window::new(vec![6, 7, 0, 1, 2]),
        ];
        let d = entropy_density_estimate(&nu, &mu, &sched).unwrap();
        // single site: Ising marginal at zero field is uniform
        assert!(d[0].1.abs() < 1e-14);
        assert!(d[1].1 > d[0].1 && d[2].1 > d[1].1);
    }

    #[test]
    fn flip_closed_form() {
        let p: f64 = 0.75;
        for n in [1, 3, 4] {
            let t = Torus::ring(n).unwrap();
            let w = t.full_window();
            let nu = DenseMeasure::product(&t, w.clone(), &[p, 1.0 - p]).unwrap();
            let mu = DenseMeasure::uniform(&t, w.clone(), 2).unwrap();
            let rates = flip(2, 1.0, 1).unwrap();
            let g = entropy_loss_finite(&nu, &mu, &rates, &w).unwrap();
            let expected = (1.0 - 2.0 * p) * (p / (1.0 - p)).ln();
            assert!((g.value / n as f64 - expected).abs() < 1e-12);
            assert!((expected + 0.549306).abs() < 1e-6);
            assert!(g.breakdown_defect() < 1e-12);
            let s = specific_entropy_loss(&nu, &rates).unwrap();
            assert!((s.value - expected).abs() < 1e-12);
            let half = DenseMeasure::product(&t, w.clone(), &[0.5, 0.5]).unwrap();
            assert!(entropy_loss_finite(&half, &mu, &rates, &w).unwrap().value.abs() < 1e-15);
        }
    }

    #[test]
    fn stationary_means_no_loss() {
        let spec = Specification::new(Potential::ising(0.5, 0.2, 1)).unwrap();
        let t = Torus::ring(5).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        let rates = glauber_heat_bath(&spec).unwrap();
        let g = entropy_loss_finite(&mu, &mu, &rates, &t.full_window()).unwrap();
        assert!(g.value.abs() < 1e-14);
        for seed in 0..5 {
            let nu = random_full(&t, 2, seed).soften(0.1).unwrap();
            for lam in [t.full_window(), Window::new(vec![0, 1])] {
                let g = entropy_loss_finite(&nu, &mu, &rates, &lam).unwrap();
                assert!(g.value <= 1e-12, "{}", g.value);
            }
        }
    }

    #[test]
    fn null_target_gives_minus_infinity() {
        let t = Torus::ring(2).unwrap();
        let w = t.full_window();
        let pm = DenseMeasure::point_mass(&t, 2, &Config::constant(w.clone(), 1).unwrap()).unwrap();
        let mu = DenseMeasure::uniform(&t, w.clone(), 2).unwrap();
        let rates = flip(2, 1.0, 1).unwrap();
        let g = entropy_loss_finite(&pm, &mu, &rates, &w).unwrap();
        assert_eq!(g.value, f64::NEG_INFINITY);
        assert!(g.breakdown.is_empty());
        let t3 = Torus::ring(3).unwrap();
        let pm = DenseMeasure::point_mass(&t3, 2, &Config::constant(t3.full_window(), 1).unwrap()).unwrap();
        assert_eq!(g_tilde(&pm, &rates, 1).unwrap().value, f64::NEG_INFINITY);
        let json = g.to_json().unwrap();
        assert!(EntropyReport::from_json(&json).unwrap().value == f64::NEG_INFINITY);
    }

    #[test]
    fn decomposition_on_the_torus() {
        let spec = Specification::new(Potential::ising(0.6, 0.1, 1)).unwrap();
        let t = Torus::ring(5).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        let full = t.full_window();
        for rates in [glauber_heat_bath(&spec).unwrap(), glauber_metropolis(&spec).unwrap()] {
            for seed in 0..3 {
                let nu = random_ti(&t, 2, seed, 0.05);
                let g = entropy_loss_finite(&nu, &mu, &rates, &full).unwrap().value;
                let rho = specific_energy_loss(&nu, &rates, &spec).unwrap();
                let rho_direct = specific_energy_loss_direct(&nu, &rates, &mu).unwrap();
                assert!((rho - rho_direct).abs() < 1e-12);
                let ent = finite_entropy_loss(&nu, &rates, &full).unwrap().value;
                assert!((g - (rho * 5.0 + ent)).abs() < 1e-10);
                let gs = specific_entropy_loss(&nu, &rates).unwrap().value;
                assert!((ent - 5.0 * gs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn energy_loss_trivial_cases() {
        let t = Torus::ring(4).unwrap();
        let nu = random_full(&t, 3, 3);
        let zero = Specification::new(Potential::zero(3, 1)).unwrap();
        let clock = cyclic_clock(3, 1.0, 0.2, 1).unwrap();
        assert_eq!(specific_energy_loss(&nu, &clock, &zero).unwrap(), 0.0);
        let spec = Specification::new(Potential::ising(0.5, 0.0, 1)).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        let hb = glauber_heat_bath(&spec).unwrap();
        let rho = specific_energy_loss(&mu, &hb, &spec).unwrap();
        let gs = specific_entropy_loss(&mu, &hb).unwrap().value;
        assert!((rho + gs).abs() < 1e-12);
    }

    #[test]
    fn s_r_split() {
        let t = Torus::ring(7).unwrap();
        let spec = Specification::new(Potential::ising(0.5, 0.2, 1)).unwrap();
        for rates in [glauber_heat_bath(&spec).unwrap(), cyclic_clock(2, 1.0, 0.0, 1).unwrap()] {
            for n in [1, 2] {
                let nu = random_ti(&t, 2, 11 + n as u64, 0.05);
                let d = s_r_decomposition(&nu, &rates, n).unwrap();
                assert!(d.defect < 1e-10, "{}", d.defect);
            }
        }
        // single-site flip: every active term is log 2
        let flip1 = flip(2, 1.0, 1).unwrap();
        let nu = random_ti(&t, 2, 5, 0.1);
        let d = s_r_decomposition(&nu, &flip1, 1).unwrap();
        assert!((d.r_density - 2f64.ln()).abs() < 1e-14);
        assert!((d.r_n.value - 2f64.ln()).abs() < 1e-14);
        let u = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        let d = s_r_decomposition(&u, &flip1, 2).unwrap();
        assert!(d.g_tilde_total.abs() < 1e-14);
        assert!((d.s_n.value + d.r_n.value).abs() < 1e-14);
        let d = s_r_decomposition(&nu, &RateFamily::zero(2, 1), 1).unwrap();
        assert_eq!((d.s_n.value, d.r_n.value), (0.0, 0.0));
    }

    #[test]
    fn traps_are_refused() {
        let t = Torus::ring(5).unwrap();
        let nu = random_ti(&t, 2, 1, 0.1);
        let r = exclusion(1.0, 0.0, 1).unwrap();
        assert!(matches!(s_r_decomposition(&nu, &r, 1), Err(Error::TrapState(_))));
    }

    #[test]
    fn truncation_takes_minimum() {
        let spec = Specification::new(Potential::ising(0.7, 0.0, 1)).unwrap();
        let hb = glauber_heat_bath(&spec).unwrap();
        let same = truncated_rates(&hb, &ball(&crate::geometry::Point(vec![0]), 1));
        assert_eq!(same, hb);
        let half = truncated_rates(&hb, &crate::geometry::Shape::line(&[0, 1]));
        let (orig, tr) = (&hb.rules()[0], &half.rules()[0]);
        assert_eq!(tr.dep(), &crate::geometry::Shape::line(&[0, 1]));
        let oe = orig.context_encoder();
        let te = tr.context_encoder();
        for c in 0..tr.contexts() {
            for s in 0..2 {
                let brute = (0..2)
                    .map(|left| {
                        let ctx = oe.encode(&[left as u8, te.digit(c, 0) as u8, te.digit(c, 1) as u8]);
                        orig.rate(ctx, s)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(tr.rate(c, s), brute);
            }
        }
        let z = truncated_rates(&RateFamily::zero(2, 1), &crate::geometry::Shape::origin(1));
        assert!(z.rules().is_empty());
    }

    /// Term-by-term evaluation of `f_n` straight from its definition, with
    /// configurations of the box enumerated as full-torus sums.
    fn f_n_brute(nu: &DenseMeasure, rates: &RateFamily, n: u32) -> f64 {
        let t = nu.torus();
        let b = place_boxes(t, n).unwrap();
        let enc = nu.encoder();
        let q = nu.q();
        let mut total = 0.0;
        for &i in b.inner.iter() {
            for (k, rule) in rates.rules().iter().enumerate() {
                for (j, off) in rule.shape().points().iter().enumerate() {
                    let anchor = t.translate(i, &off.neg());
                    let shape = t.place(rule.shape(), anchor);
                    let dep = t.place(rule.dep(), anchor);
                    let _ = k;
                    let trunc = rule.truncated(&ball(&rule.shape().points()[j], (n - 1) as u64));
                    let tdep = t.place(trunc.dep(), anchor);
                    let qk = (q as f64).powi(shape.len() as i32);
                    for sigma in 0..rule.targets() {
                        let sig = rule.target_encoder().decode(sigma);
                        let lam_enc = Encoder::new(q, b.outer.len()).unwrap();
                        for eta in 0..lam_enc.states() {
                            let mut st = lam_enc.decode(eta);
                            for (m, &s) in shape.iter().enumerate() {
                                if let Some(pos) = b.outer.position(s) {
                                    st[pos] = sig[m];
                                }
                            }
                            let (mut a, mut bb) = (0.0, 0.0);
                            for x in 0..enc.states() {
                                let xs = enc.decode(x);
                                let inside = b.outer.iter().enumerate().all(|(m, &s)| xs[s] == st[m]);
                                if inside {
                                    a += nu.weights()[x];
                                }
                                let at_eta = b.outer.iter().enumerate().all(|(m, &s)| xs[s] as usize == lam_enc.digit(eta, m));
                                if at_eta {
                                    let ctx: Vec<u8> = dep.iter().map(|&s| xs[s]).collect();
                                    let c = rule.rate(rule.context_encoder().encode(&ctx), sigma);
                                    if c > 0.0 {
                                        let mut ys = xs.clone();
                                        for (m, &s) in shape.iter().enumerate() {
                                            ys[s] = sig[m];
                                        }
                                        let cy: Vec<u8> = dep.iter().map(|&s| ys[s]).collect();
                                        let cb = rule.total(rule.context_encoder().encode(&cy));
                                        bb += nu.weights()[x] * qk * c / cb;
                                    }
                                }
                            }
                            let tctx: Vec<u8> = tdep.iter().map(|&s| st[b.outer.position(s).unwrap()]).collect();
                            let ct = trunc.total(trunc.context_encoder().encode(&tctx));
                            if ct > 0.0 {
                                total += ct * a * psi(bb / a) / (qk * shape.len() as f64);
                            }
                        }
                    }
                }
            }
        }
        total
    }

    #[test]
    fn f_n_against_brute_force() {
        let t = Torus::ring(5).unwrap();
        let spec = Specification::new(Potential::ising(0.5, 0.3, 1)).unwrap();
        let hb = glauber_heat_bath(&spec).unwrap();
        for seed in 0..3 {
            let nu = random_full(&t, 2, seed).soften(0.2).unwrap();
            let v = f_n(&nu, &hb, 1).unwrap().value;
            let brute = f_n_brute(&nu, &hb, 1);
            assert!(v < 0.0);
            assert!((v - brute).abs() < 1e-12, "{v} vs {brute}");
        }
        let ex = exclusion(0.7, 0.3, 1).unwrap();
        let nu = random_full(&t, 2, 9).soften(0.2).unwrap();
        assert!((f_n(&nu, &ex, 1).unwrap().value - f_n_brute(&nu, &ex, 1)).abs() < 1e-12);
    }

    #[test]
    fn f_n_simple_values() {
        let t = Torus::ring(7).unwrap();
        let nu = random_ti(&t, 2, 4, 0.1);
        assert_eq!(f_n(&nu, &RateFamily::zero(2, 1), 2).unwrap().value, 0.0);
        // uniform measure under the symmetric flip: f_n equals s_n, which is
        // -log 2 per centre because of the q^{|Delta|} inside the logarithm
        let u = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        let fl = flip(2, 1.0, 1).unwrap();
        for n in [1, 2] {
            let f = f_n(&u, &fl, n).unwrap().value;
            let s = s_r_decomposition(&u, &fl, n).unwrap().s_n.value;
            let centres = place_boxes(&t, n).unwrap().inner.len() as f64;
            assert!((f - s).abs() < 1e-13);
            assert!((f + centres * 2f64.ln()).abs() < 1e-13);
        }
    }

    #[test]
    fn f_n_equals_s_n_for_local_rates() {
        // the clock depends on the shape only, so truncation changes nothing
        let t = Torus::ring(7).unwrap();
        let clock = cyclic_clock(3, 1.0, 0.4, 1).unwrap();
        let nu = random_ti(&t, 3, 8, 0.1);
        // 3^7 states; box n = 1 is enough here
        let f = f_n(&nu, &clock, 1).unwrap().value;
        let s = s_r_decomposition(&nu, &clock, 1).unwrap().s_n.value;
        assert!((f - s).abs() < 1e-11);
    }

    #[test]
    fn volume_compensation_product() {
        let (g1, tail) = volume_compensation(1, 1);
        assert!(tail < 1e-12);
        let mut brute = 1.0f64;
        for l in 1..60 {
            let m = 2f64.powi(l + 2);
            brute *= (m - 2.0) / (m - 1.0);
        }
        assert!((g1 - brute).abs() < 1e-12);
        let mut prev = 0.0;
        for n in 1..20 {
            let (g, _) = volume_compensation(n, 2);
            assert!(g > prev && g < 1.0);
            prev = g;
        }
        assert!(1.0 - volume_compensation(40, 1).0 < 1e-11);
    }

    #[test]
    fn jensen_doubling_on_ring() {
        let t = Torus::ring(7).unwrap();
        let spec = Specification::new(Potential::ising(0.5, 0.2, 1)).unwrap();
        let rates = [glauber_heat_bath(&spec).unwrap(), cyclic_clock(2, 1.0, 0.3, 1).unwrap()];
        for r in &rates {
            for seed in 0..4 {
                let nu = random_ti(&t, 2, 100 + seed, 0.05);
                let j = jensen_monotone_sequence(&nu, r, 2).unwrap();
                assert!(j.max_increase <= 1e-9, "{:?}", j);
                assert!(j.max_doubling_excess <= 1e-9);
                assert!(j.points.iter().all(|p| p.f_n <= 0.0));
            }
        }
    }

    #[test]
    fn g_tilde_dominates_box_loss() {
        let t = Torus::ring(7).unwrap();
        let spec = Specification::new(Potential::ising(0.5, 0.2, 1)).unwrap();
        let hb = glauber_heat_bath(&spec).unwrap();
        for seed in 0..4 {
            let nu = random_full(&t, 2, seed).soften(0.1).unwrap();
            for n in [1, 2] {
                let b = place_boxes(&t, n).unwrap();
                let gt = g_tilde(&nu, &hb, n).unwrap();
                let g = finite_entropy_loss(&nu, &hb, &b.outer).unwrap().value;
                let bound = boundary_bound(&hb, n).unwrap();
                assert!(gt.value >= g / b.outer.len() as f64 - bound - 1e-12);
                let delta = nu.non_nullness_constant().unwrap();
                assert!(g.abs() <= entropy_loss_bound(&hb, delta, b.outer.len()));
            }
        }
        let u = DenseMeasure::uniform(&t, t.full_window(), 2).unwrap();
        assert!(g_tilde(&u, &flip(2, 1.0, 1).unwrap(), 2).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn reversible_identity() {
        let t = Torus::ring(7).unwrap();
        let spec = Specification::new(Potential::ising(0.4, 0.3, 1)).unwrap();
        let mu = torus_gibbs(spec.potential(), &t).unwrap();
        for rates in [glauber_heat_bath(&spec).unwrap(), glauber_metropolis(&spec).unwrap()] {
            let nu = random_full(&t, 2, 21).soften(0.05).unwrap();
            let d = reversible_decomposition(&nu, &rates, &spec, 1).unwrap();
            assert!(d.identity_defect < 1e-12);
            assert!(d.split_defect < 1e-10);
            // the box of n = 2 is the whole ring, where detailed balance makes
            // every logarithm in s_n vanish
            let d = reversible_decomposition(&mu, &rates, &spec, 2).unwrap();
            assert!(d.s_n.value.abs() < 1e-12);
        }
        let zero = Specification::new(Potential::zero(2, 1)).unwrap();
        let fl = flip(2, 1.0, 1).unwrap();
        let nu = random_full(&t, 2, 2);
        let d = reversible_decomposition(&nu, &fl, &zero, 1).unwrap();
        assert_eq!((d.r_rev, d.rho), (0.0, 0.0));
        let clock = cyclic_clock(3, 1.0, 0.0, 1).unwrap();
        let z3 = Specification::new(Potential::zero(3, 1)).unwrap();
        let nu3 = random_full(&Torus::ring(3).unwrap(), 3, 0);
        assert!(matches!(
            reversible_decomposition(&nu3, &clock, &z3, 1),
            Err(Error::NotReversible(_))
        ));
    }

    #[test]
    fn specific_entropy_loss_rejects_null() {
        let t = Torus::ring(3).unwrap();
        let pm = DenseMeasure::point_mass(&t, 2, &Config::constant(t.full_window(), 1).unwrap()).unwrap();
        assert!(matches!(
            specific_entropy_loss(&pm, &flip(2, 1.0, 1).unwrap()),
            Err(Error::NotNonNull { .. })
        ));
    }
}
