//! Master-equation evolution, stationary measures, the finite-difference
//! entropy oracle and kinetic Monte Carlo.

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{generator_matrix, GeneratorMatrix, RateFamily};
use crate::entropy::{entropy_loss_finite, local_relative_entropy};
use crate::error::{Error, Result};
use crate::geometry::{Torus, Window};
use crate::measure::{pairwise_sum, DenseMeasure, Encoder};

/// Total-variation budget for the Poisson truncation of one call to [`evolve`].
pub const UNIFORMIZATION_TOL: f64 = 1e-12;

/// Largest `Lambda * dt` per uniformization step.
const MAX_STEP_MASS: f64 = 50.0;

/// Off-diagonal part of `Q^T` in CSR form, for gathering products.
struct Transposed {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Transposed {
    fn new(q: &GeneratorMatrix) -> Self {
        let n = q.n_states();
        let mut count = vec![0usize; n + 1];
        for i in 0..n {
            for &j in q.row(i).0 {
                count[j + 1] += 1;
            }
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let indptr = count.clone();
        let mut fill = count;
        let mut indices = vec![0; indptr[n]];
        let mut values = vec![0.0; indptr[n]];
        for i in 0..n {
            let (cols, vals) = q.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                indices[fill[j]] = i;
                values[fill[j]] = v;
                fill[j] += 1;
            }
        }
        Transposed { indptr, indices, values }
    }

    /// `(v Q)_j`, computed per column in parallel.
    fn left_mul(&self, q: &GeneratorMatrix, v: &[f64]) -> Vec<f64> {
        let diag = q.diag();
        (0..v.len())
            .into_par_iter()
            .map(|j| {
                let (a, b) = (self.indptr[j], self.indptr[j + 1]);
                let mut s = v[j] * diag[j];
                for k in a..b {
                    s += v[self.indices[k]] * self.values[k];
                }
                s
            })
            .collect()
    }
}

fn check_same_space(nu: &DenseMeasure, q: &GeneratorMatrix) -> Result<()> {
    if nu.torus() != q.torus() || nu.window() != q.window() || nu.q() != q.q() {
        return Err(Error::InvalidMeasure(
            "measure and generator live on different state spaces".into(),
        ));
    }
    Ok(())
}

/// Poisson weights `P(N = k)`, `N ~ Poisson(lambda)`, for `k = 0..=K` with
/// `K` the first index where the remaining tail is provably below `tol`.
fn poisson_weights(lambda: f64, tol: f64) -> Vec<f64> {
    let mut w = vec![(-lambda).exp()];
    let mut k = 0usize;
    loop {
        let last = w[k];
        // P(N > k) <= P(N = k) * r / (1 - r') with r = lambda/(k+1), r' = lambda/(k+2)
        if (k as f64 + 2.0) > lambda {
            let r = lambda / (k as f64 + 1.0);
            let rr = lambda / (k as f64 + 2.0);
            if last * r / (1.0 - rr) <= tol {
                return w;
            }
        }
        k += 1;
        w.push(last * lambda / k as f64);
    }
}

/// `nu0 exp(t Q)` by uniformization: `sum_k Poisson(k; Lambda t) nu0 P^k`
/// with `P = I + Q / Lambda`, split into steps of `Lambda dt <= 50`.
pub fn evolve(nu0: &DenseMeasure, q: &GeneratorMatrix, t: f64) -> Result<DenseMeasure> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    check_same_space(nu0, q)?;
    let lambda = q.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(nu0.clone());
    }
    let tq = Transposed::new(q);
    let steps = ((lambda * t) / MAX_STEP_MASS).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let weights = poisson_weights(lambda * dt, UNIFORMIZATION_TOL / steps as f64);
    let mut v = nu0.weights().to_vec();
    for _ in 0..steps {
        let mut out: Vec<f64> = v.iter().map(|x| x * weights[0]).collect();
        let mut cur = v;
        for &w in &weights[1..] {
            let qv = tq.left_mul(q, &cur);
            cur = cur.iter().zip(&qv).map(|(a, b)| (a + b / lambda).max(0.0)).collect();
            out.par_iter_mut().zip(&cur).for_each(|(o, c)| *o += w * c);
        }
        v = out;
    }
    DenseMeasure::from_unnormalized(nu0.torus().clone(), nu0.window().clone(), nu0.q(), v)
}

/// `v exp(t Q)` for a signed vector and any real `t`, by the Taylor series;
/// meant for `|t| * max_exit_rate` of order one or less.
pub fn propagate_signed(v: &[f64], q: &GeneratorMatrix, t: f64) -> Vec<f64> {
    let tq = Transposed::new(q);
    let mut out = v.to_vec();
    let mut term = v.to_vec();
    let scale: f64 = v.iter().map(|x| x.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    for k in 1..500 {
        let qt = tq.left_mul(q, &term);
        term = qt.into_iter().map(|x| x * t / k as f64).collect();
        let norm: f64 = term.iter().map(|x| x.abs()).sum();
        for (o, x) in out.iter_mut().zip(&term) {
            *o += x;
        }
        if norm <= 1e-18 * scale {
            break;
        }
    }
    out
}

/// Stationary measures, one per closed communicating class.
pub fn stationary(q: &GeneratorMatrix) -> Result<Vec<DenseMeasure>> {
    let classes = q.communicating_classes();
    let mut out = Vec::new();
    for (class, closed) in classes {
        if !closed {
            continue;
        }
        let pi = class_stationary(q, &class)?;
        let mut w = vec![0.0; q.n_states()];
        for (&i, &p) in class.iter().zip(&pi) {
            w[i] = p;
        }
        out.push(DenseMeasure::from_unnormalized(
            q.torus().clone(),
            q.window().clone(),
            q.q(),
            w,
        )?);
    }
    Ok(out)
}

/// Dense solver bound for a single class.
const DENSE_CLASS_CAP: usize = 4096;
/// Classes up to this size also get a singular-value check.
const SVD_CAP: usize = 1024;

fn class_stationary(q: &GeneratorMatrix, class: &[usize]) -> Result<Vec<f64>> {
    let m = class.len();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    if m > DENSE_CLASS_CAP {
        return Err(Error::TooLarge {
            states: m as u128,
            cap: DENSE_CLASS_CAP,
        });
    }
    let pos = |i: usize| class.binary_search(&i).ok();
    let mut qt = DMatrix::<f64>::zeros(m, m);
    for (a, &i) in class.iter().enumerate() {
        qt[(a, a)] = q.diag()[i];
        let (cols, vals) = q.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if let Some(b) = pos(j) {
                qt[(b, a)] = v;
            }
        }
    }
    if m <= SVD_CAP {
        let sv = qt.clone().singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = 1e-12 * s[m - 1].max(1.0) * m as f64;
        if s[1] <= tol {
            return Err(Error::RankAmbiguity { singular_values: s });
        }
    }
    let scale = qt.amax().max(1.0);
    let mut a = qt;
    for c in 0..m {
        a[(m - 1, c)] = scale;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = scale;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::RankAmbiguity { singular_values: Vec::new() })?;
    Ok(x.iter().map(|&p| if p < 0.0 && p > -1e-13 { 0.0 } else { p }).collect())
}

/// Decay rate and magnitude of the slowest non-stationary mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralGap {
    /// `min -Re(lambda)` over non-zero eigenvalues.
    pub rate: f64,
    /// `min |lambda|` over non-zero eigenvalues.
    pub magnitude: f64,
}

/// Largest generator handled by [`spectral_gap`].
pub const SPECTRAL_CAP: usize = 2048;

pub fn spectral_gap(q: &GeneratorMatrix) -> Result<SpectralGap> {
    let n = q.n_states();
    if n > SPECTRAL_CAP {
        return Err(Error::TooLarge {
            states: n as u128,
            cap: SPECTRAL_CAP,
        });
    }
    let dense = q.to_dense();
    let ev = [f64::EPSILON, 1e-13, 1e-11]
        .iter()
        .find_map(|&eps| Schur::try_new(dense.clone(), eps, 200 * n.max(10)))
        .ok_or_else(|| Error::Indeterminate("eigenvalue iteration did not converge".into()))?
        .complex_eigenvalues();
    let scale = q.max_exit_rate().max(1.0);
    let mut rate = f64::INFINITY;
    let mut magnitude = f64::INFINITY;
    for z in ev.iter() {
        if z.norm() <= 1e-9 * scale {
            continue;
        }
        rate = rate.min(-z.re);
        magnitude = magnitude.min(z.norm());
    }
    if !rate.is_finite() {
        return Err(Error::Indeterminate("generator has no non-zero eigenvalue".into()));
    }
    Ok(SpectralGap { rate, magnitude })
}

/// A Richardson-extrapolated central difference with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    pub value: f64,
    pub error: f64,
}

/// Steps of the central differences.
pub const FD_STEPS: [f64; 2] = [1e-3, 5e-4];

/// `(d/dt)|_{t=0} h_Lambda(nu exp(tQ) | mu)` by central differences at
/// `dt in {1e-3, 5e-4}` and Richardson extrapolation.
pub fn entropy_derivative_oracle(
    nu: &DenseMeasure,
    mu: &DenseMeasure,
    q: &GeneratorMatrix,
    lam: &Window,
) -> Result<FdEstimate> {
    check_same_space(nu, q)?;
    let h = |t: f64| -> Result<f64> {
        let w = propagate_signed(nu.weights(), q, t);
        if w.iter().any(|&x| x < 0.0) {
            return Err(Error::Indeterminate(format!(
                "backward propagation to t = {t} leaves the simplex"
            )));
        }
        let m = DenseMeasure::from_unnormalized(nu.torus().clone(), nu.window().clone(), nu.q(), w)?;
        local_relative_entropy(&m, mu, lam)
    };
    let d = |dt: f64| -> Result<f64> { Ok((h(dt)? - h(-dt)?) / (2.0 * dt)) };
    let coarse = d(FD_STEPS[0])?;
    let fine = d(FD_STEPS[1])?;
    let ratio = (FD_STEPS[0] / FD_STEPS[1]).powi(2);
    let value = (ratio * fine - coarse) / (ratio - 1.0);
    Ok(FdEstimate {
        value,
        error: (value - fine).abs(),
    })
}

/// A measure-valued path on a time grid with entropy diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub measures: Vec<DenseMeasure>,
    /// Diagnostic windows; the full torus is always first.
    pub windows: Vec<Window>,
    /// `h[k][w]`: relative entropy on window `w` at time `k`.
    pub h: Vec<Vec<f64>>,
    /// Per-site full-torus entropy loss at each time.
    pub g: Vec<f64>,
    /// `violations[k][w]`: `h` rose by more than [`MONOTONE_TOL`] since the previous time.
    pub violations: Vec<Vec<bool>>,
    /// Whether the full-torus relative entropy was non-increasing.
    pub monotone: bool,
    pub max_increase: f64,
}

/// Increase of `h` tolerated before a grid step is flagged.
pub const MONOTONE_TOL: f64 = 1e-10;

/// Size guard for embedding measures in JSON output.
pub const JSON_MEASURE_CAP: usize = 1 << 20;

impl Trajectory {
    pub fn final_measure(&self) -> Option<&DenseMeasure> {
        self.measures.last()
    }

    /// JSON with or without the measures; refuses to embed more than
    /// [`JSON_MEASURE_CAP`] weights in total.
    pub fn to_json(&self, with_measures: bool) -> Result<String> {
        if with_measures {
            let total: usize = self.measures.iter().map(|m| m.len()).sum();
            if total > JSON_MEASURE_CAP {
                return Err(Error::TooLarge {
                    states: total as u128,
                    cap: JSON_MEASURE_CAP,
                });
            }
            Ok(serde_json::to_string_pretty(self)?)
        } else {
            let mut lean = self.clone();
            lean.measures.clear();
            Ok(serde_json::to_string_pretty(&lean)?)
        }
    }
}

/// Evolves `nu0` along `grid` under `rates` on its torus, recording `h` of
/// each window relative to `reference` and the per-site entropy loss.
pub fn run_trajectory(
    nu0: &DenseMeasure,
    rates: &RateFamily,
    grid: &[f64],
    windows: &[Window],
    reference: &DenseMeasure,
) -> Result<Trajectory> {
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("time grid must be non-negative and strictly increasing".into()));
    }
    let torus = nu0.torus();
    let q = generator_matrix(rates, torus)?;
    let full = torus.full_window();
    let mut all = vec![full.clone()];
    all.extend(windows.iter().filter(|w| **w != full).cloned());

    let mut measures = Vec::with_capacity(grid.len());
    let mut cur = nu0.clone();
    let mut last_t = 0.0;
    for &t in grid {
        cur = evolve(&cur, &q, t - last_t)?;
        last_t = t;
        measures.push(cur.clone());
    }
    let n = torus.len() as f64;
    let diag: Vec<Result<(Vec<f64>, f64)>> = measures
        .par_iter()
        .map(|m| {
            let h = all
                .iter()
                .map(|w| local_relative_entropy(m, reference, w))
                .collect::<Result<Vec<f64>>>()?;
            let g = entropy_loss_finite(m, reference, rates, &full)?.value / n;
            Ok((h, g))
        })
        .collect();
    let mut h = Vec::new();
    let mut g = Vec::new();
    for d in diag {
        let (a, b) = d?;
        h.push(a);
        g.push(b);
    }
    let mut violations = vec![vec![false; all.len()]];
    let mut max_increase: f64 = 0.0;
    for k in 1..h.len() {
        violations.push(
            (0..all.len())
                .map(|w| h[k][w] > h[k - 1][w] + MONOTONE_TOL)
                .collect(),
        );
        max_increase = max_increase.max(h[k][0] - h[k - 1][0]);
    }
    let monotone = violations.iter().all(|v| !v[0]);
    Ok(Trajectory {
        times: grid.to_vec(),
        measures,
        windows: all,
        h,
        g,
        violations,
        monotone,
        max_increase,
    })
}

/// Empirical window marginal from independent kinetic Monte Carlo paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GillespieEstimate {
    pub measure: DenseMeasure,
    /// `sqrt(p (1 - p) / n_paths)` per window configuration.
    pub std_errors: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub events: u64,
}

struct Site {
    rule: usize,
    dep: Vec<usize>,
    shape: Vec<usize>,
}

/// Runs `n_paths` independent paths of `rates` on `torus` up to `t_end`,
/// each started from `init(rng)` (0-based states of every site), and
/// tallies the configuration on `window`. Path `k` uses ChaCha8 stream `k`
/// of `seed`, so results do not depend on the thread count.
pub fn gillespie_sample<F>(
    rates: &RateFamily,
    torus: &Torus,
    init: F,
    t_end: f64,
    n_paths: usize,
    window: &Window,
    seed: u64,
) -> Result<GillespieEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<u8> + Sync,
{
    if t_end < 0.0 {
        return Err(Error::NegativeTime(t_end));
    }
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    for r in rates.rules() {
        if !torus.fits(&r.support()) {
            return Err(Error::TorusTooSmall(format!("rule support {} on {:?}", r.support(), torus.sides())));
        }
    }
    let q = rates.q();
    let wenc = Encoder::new(q, window.len())?;
    let mut placements = Vec::new();
    for (k, r) in rates.rules().iter().enumerate() {
        for a in 0..torus.len() {
            placements.push(Site {
                rule: k,
                dep: torus.place(r.dep(), a),
                shape: torus.place(r.shape(), a),
            });
        }
    }
    let mut watchers = vec![Vec::new(); torus.len()];
    for (p, pl) in placements.iter().enumerate() {
        for &s in &pl.dep {
            watchers[s].push(p);
        }
    }
    let context = |pl: &Site, st: &[u8]| -> usize {
        let ce = rates.rules()[pl.rule].context_encoder();
        pl.dep
            .iter()
            .enumerate()
            .map(|(j, &s)| st[s] as usize * ce.place(j))
            .sum()
    };

    let results: Vec<Result<(usize, u64)>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut st = init(&mut rng);
            if st.len() != torus.len() || st.iter().any(|&v| v as usize >= q) {
                return Err(Error::Config("initial sampler returned a bad configuration".into()));
            }
            let mut ctx: Vec<usize> = placements.iter().map(|pl| context(pl, &st)).collect();
            let mut tot: Vec<f64> = placements
                .iter()
                .zip(&ctx)
                .map(|(pl, &c)| rates.rules()[pl.rule].total(c))
                .collect();
            let mut t = 0.0;
            let mut events = 0u64;
            loop {
                let total = pairwise_sum(&tot);
                if total <= 0.0 {
                    break;
                }
                t += Exp::new(total).unwrap().sample(&mut rng);
                if t > t_end {
                    break;
                }
                let mut u = rng.random::<f64>() * total;
                let mut p = tot.len() - 1;
                for (k, &x) in tot.iter().enumerate() {
                    if u < x {
                        p = k;
                        break;
                    }
                    u -= x;
                }
                if tot[p] <= 0.0 {
                    p = tot.iter().rposition(|&x| x > 0.0).unwrap();
                    u = 0.0;
                }
                let pl = &placements[p];
                let r = &rates.rules()[pl.rule];
                let mut target = r.targets() - 1;
                let mut v = u;
                for s in 0..r.targets() {
                    let c = r.rate(ctx[p], s);
                    if v < c {
                        target = s;
                        break;
                    }
                    v -= c;
                }
                while r.rate(ctx[p], target) <= 0.0 {
                    target -= 1;
                }
                let te = r.target_encoder();
                for (j, &s) in pl.shape.iter().enumerate() {
                    st[s] = te.digit(target, j) as u8;
                }
                events += 1;
                let mut touched: Vec<usize> = pl.shape.iter().flat_map(|&s| watchers[s].iter().copied()).collect();
                touched.sort_unstable();
                touched.dedup();
                for k in touched {
                    ctx[k] = context(&placements[k], &st);
                    tot[k] = rates.rules()[placements[k].rule].total(ctx[k]);
                }
            }
            let cell: usize = window
                .iter()
                .enumerate()
                .map(|(j, &s)| st[s] as usize * wenc.place(j))
                .sum();
            Ok((cell, events))
        })
        .collect();
    let mut counts = vec![0u64; wenc.states()];
    let mut events = 0;
    for r in results {
        let (c, e) = r?;
        counts[c] += 1;
        events += e;
    }
    let n = n_paths as f64;
    let w: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let std_errors = w.iter().map(|&p| (p * (1.0 - p) / n).sqrt()).collect();
    Ok(GillespieEstimate {
        measure: DenseMeasure::from_unnormalized(torus.clone(), window.clone(), q, w)?,
        std_errors,
        n_paths,
        seed,
        events,
    })
}

/// Independent product sampler: every site drawn from `p` (0-based states).
pub fn product_sampler(p: Vec<f64>, sites: usize) -> impl Fn(&mut ChaCha8Rng) -> Vec<u8> + Sync {
    move |rng: &mut ChaCha8Rng| {
        (0..sites)
            .map(|_| {
                let mut u = rng.random::<f64>();
                let mut s = p.len() - 1;
                for (k, &x) in p.iter().enumerate() {
                    if u < x {
                        s = k;
                        break;
                    }
                    u -= x;
                }
                s as u8
            })
            .collect()
    }
}
