use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Torus, Window};
use crate::measure::{Config, Encoder};

use super::rates::RateFamily;

/// A rule placed at one anchor of a torus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub rule: usize,
    pub anchor: usize,
    pub dep_sites: Vec<usize>,
    pub shape_sites: Vec<usize>,
}

/// A rate family laid out on a torus, with full-torus index arithmetic.
#[derive(Clone, Debug)]
pub struct PlacedRates {
    rates: RateFamily,
    torus: Torus,
    enc: Encoder,
    placements: Vec<Placement>,
}

impl PlacedRates {
    pub fn new(rates: &RateFamily, torus: &Torus) -> Result<Self> {
        if torus.dim() != rates.dim() {
            return Err(Error::Geometry(format!(
                "{}-dimensional rates on a {}-dimensional torus",
                rates.dim(),
                torus.dim()
            )));
        }
        for r in rates.rules() {
            if !torus.fits(&r.support()) {
                return Err(Error::TorusTooSmall(format!(
                    "dependence window {} wraps onto itself on sides {:?}",
                    r.support(),
                    torus.sides()
                )));
            }
        }
        let enc = Encoder::new(rates.q(), torus.len())?;
        let mut placements = Vec::new();
        for (k, r) in rates.rules().iter().enumerate() {
            for a in 0..torus.len() {
                placements.push(Placement {
                    rule: k,
                    anchor: a,
                    dep_sites: torus.place(r.dep(), a),
                    shape_sites: torus.place(r.shape(), a),
                });
            }
        }
        Ok(PlacedRates {
            rates: rates.clone(),
            torus: torus.clone(),
            enc,
            placements,
        })
    }

    pub fn rates(&self) -> &RateFamily {
        &self.rates
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn encoder(&self) -> &Encoder {
        &self.enc
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn n_states(&self) -> usize {
        self.enc.states()
    }

    /// Context index of placement `p` in the full-torus state `idx`.
    #[inline]
    pub fn context(&self, p: usize, idx: usize) -> usize {
        let pl = &self.placements[p];
        let r = &self.rates.rules()[pl.rule];
        pl.dep_sites
            .iter()
            .enumerate()
            .map(|(j, &s)| self.enc.digit(idx, s) * r.context_encoder().place(j))
            .sum()
    }

    /// State reached by writing `target` on the placed shape.
    #[inline]
    pub fn jump(&self, p: usize, idx: usize, target: usize) -> usize {
        let pl = &self.placements[p];
        let te = self.rates.rules()[pl.rule].target_encoder();
        pl.shape_sites
            .iter()
            .enumerate()
            .fold(idx, |i, (j, &s)| self.enc.with_digit(i, s, te.digit(target, j)))
    }

    /// Current values on the placed shape, as a target index.
    #[inline]
    pub fn current_target(&self, p: usize, idx: usize) -> usize {
        let pl = &self.placements[p];
        let te = self.rates.rules()[pl.rule].target_encoder();
        pl.shape_sites
            .iter()
            .enumerate()
            .map(|(j, &s)| self.enc.digit(idx, s) * te.place(j))
            .sum()
    }

    pub fn rate(&self, p: usize, idx: usize, target: usize) -> f64 {
        let r = &self.rates.rules()[self.placements[p].rule];
        r.rate(self.context(p, idx), target)
    }

    pub fn total(&self, p: usize, idx: usize) -> f64 {
        let r = &self.rates.rules()[self.placements[p].rule];
        r.total(self.context(p, idx))
    }

    /// `sum_{i in centers} sum_{Delta ∋ i} 1/|Delta|` regrouped per
    /// placement: `(placement, #{shape sites in centers} / |shape|)`.
    pub fn center_weights(&self, centers: &Window) -> Vec<(usize, f64)> {
        self.placements
            .iter()
            .enumerate()
            .filter_map(|(p, pl)| {
                let hits = pl.shape_sites.iter().filter(|&&s| centers.contains(s)).count();
                (hits > 0).then(|| (p, hits as f64 / pl.shape_sites.len() as f64))
            })
            .collect()
    }

    /// Placements whose shape meets `lam`.
    pub fn meeting(&self, lam: &Window) -> Vec<usize> {
        (0..self.placements.len())
            .filter(|&p| self.placements[p].shape_sites.iter().any(|&s| lam.contains(s)))
            .collect()
    }

    /// Off-diagonal jumps out of `idx`, unmerged: `(placement, target, to, rate)`.
    pub fn jumps_from(&self, idx: usize) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for p in 0..self.placements.len() {
            let r = &self.rates.rules()[self.placements[p].rule];
            let ctx = self.context(p, idx);
            for t in 0..r.targets() {
                let v = r.rate(ctx, t);
                if v > 0.0 {
                    let to = self.jump(p, idx, t);
                    if to != idx {
                        out.push((p, t, to, v));
                    }
                }
            }
        }
        out
    }
}

/// Sparse generator `Q` (off-diagonal CSR plus diagonal) on the
/// configurations of a window of a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    torus: Torus,
    window: Window,
    q: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    /// Assembles from per-row off-diagonal entries; duplicates are summed
    /// and the diagonal is minus the row sum.
    pub fn from_rows(
        torus: Torus,
        window: Window,
        q: usize,
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        let n = Encoder::new(q, window.len())?.states();
        if rows.len() != n {
            return Err(Error::InvalidMeasure(format!("{} rows for {n} states", rows.len())));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut diag = Vec::with_capacity(n);
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut sum = 0.0;
            let start = indices.len();
            for (j, v) in row {
                if j >= n || v < 0.0 || !v.is_finite() {
                    return Err(Error::InvalidMeasure(format!("bad generator entry ({i}, {j}) = {v}")));
                }
                if j == i || v == 0.0 {
                    continue;
                }
                if indices.len() > start && *indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                }
                sum += v;
            }
            diag.push(-sum);
            indptr.push(indices.len());
        }
        Ok(GeneratorMatrix {
            torus,
            window,
            q,
            indptr,
            indices,
            values,
            diag,
        })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_states(&self) -> usize {
        self.diag.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Off-diagonal entries of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// Largest exit rate `max_i |Q_ii|`.
    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, d| m.max(-d))
    }

    /// `max_i |sum_j Q_ij|`.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.n_states())
            .map(|i| (self.row(i).1.iter().sum::<f64>() + self.diag[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Row vector times generator, `(nu Q)_j`.
    pub fn left_mul(&self, nu: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = nu.iter().zip(&self.diag).map(|(a, d)| a * d).collect();
        for (i, &a) in nu.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[j] += a * v;
            }
        }
        out
    }

    /// Generator applied to a function, `(Q f)_i`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n_states())
            .into_par_iter()
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .map(|(&j, &v)| v * (f[j] - f[i]))
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Communicating classes with a flag telling whether each is closed.
    pub fn communicating_classes(&self) -> Vec<(Vec<usize>, bool)> {
        let n = self.n_states();
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, self.nnz());
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for i in 0..n {
            for &j in self.row(i).0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
        let mut class_of = vec![0usize; n];
        let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        classes.sort_by_key(|c| c[0]);
        for (k, c) in classes.iter().enumerate() {
            for &i in c {
                class_of[i] = k;
            }
        }
        classes
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                let closed = c
                    .iter()
                    .all(|&i| self.row(i).0.iter().all(|&j| class_of[j] == k));
                (c, closed)
            })
            .collect()
    }
}

/// Master-equation generator of `rates` on the full torus.
pub fn generator_matrix(rates: &RateFamily, torus: &Torus) -> Result<GeneratorMatrix> {
    let placed = PlacedRates::new(rates, torus)?;
    generator_from_placed(&placed)
}

pub fn generator_from_placed(placed: &PlacedRates) -> Result<GeneratorMatrix> {
    let rows: Vec<Vec<(usize, f64)>> = (0..placed.n_states())
        .into_par_iter()
        .map(|idx| {
            placed
                .jumps_from(idx)
                .into_iter()
                .map(|(_, _, to, v)| (to, v))
                .collect()
        })
        .collect();
    let torus = placed.torus().clone();
    let window = torus.full_window();
    GeneratorMatrix::from_rows(torus, window, placed.rates().q(), rows)
}

/// `Lf(eta)` for a function on full-torus configurations.
pub fn apply_generator(
    rates: &RateFamily,
    torus: &Torus,
    f: impl Fn(&Config) -> f64,
    eta: &Config,
) -> Result<f64> {
    if eta.window() != &torus.full_window() {
        return Err(Error::InvalidMeasure("eta must be a full-torus configuration".into()));
    }
    let placed = PlacedRates::new(rates, torus)?;
    let q = rates.q();
    let idx = eta.index(q)?;
    let here = f(eta);
    let mut total = 0.0;
    for (_, _, to, v) in placed.jumps_from(idx) {
        let xi = Config::from_index(torus.full_window(), q, to)?;
        total += v * (f(&xi) - here);
    }
    Ok(total)
}
