//! Dense probability measures on `{1..q}^W` for a window `W` of a torus.
//!
//! Configurations are indexed in mixed radix over the window's ascending
//! site order, the first site being the most significant digit. Internally
//! states are `0..q`; the public [`Config`] type and config-strings use the
//! labels `1..=q`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Torus, Window};

/// Largest number of configurations a dense object may enumerate.
pub const STATE_CAP: usize = 1 << 24;

/// Tolerance for the normalization check at construction.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// `q^len`, refusing anything above [`STATE_CAP`].
pub fn state_count(q: usize, len: usize) -> Result<usize> {
    let mut n: u128 = 1;
    for _ in 0..len {
        n *= q as u128;
        if n > STATE_CAP as u128 {
            let full = (q as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
            return Err(Error::TooLarge {
                states: full,
                cap: STATE_CAP,
            });
        }
    }
    Ok(n as usize)
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// The local state space `{1, ..., q}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Alphabet(usize);

impl Alphabet {
    pub fn new(q: usize) -> Result<Self> {
        if !(2..=255).contains(&q) {
            return Err(Error::InvalidMeasure(format!(
                "alphabet size must lie in 2..=255, got {q}"
            )));
        }
        Ok(Alphabet(q))
    }

    pub fn q(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for Alphabet {
    type Error = Error;
    fn try_from(q: usize) -> Result<Self> {
        Alphabet::new(q)
    }
}

impl From<Alphabet> for usize {
    fn from(a: Alphabet) -> usize {
        a.0
    }
}

/// Mixed-radix encoder for configurations on a window of a given length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    q: usize,
    place: Vec<usize>,
    states: usize,
}

impl Encoder {
    pub fn new(q: usize, len: usize) -> Result<Self> {
        let states = state_count(q, len)?;
        let mut place = vec![1; len];
        for k in (0..len.saturating_sub(1)).rev() {
            place[k] = place[k + 1] * q;
        }
        Ok(Encoder { q, place, states })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.place.len()
    }

    pub fn is_empty(&self) -> bool {
        self.place.is_empty()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn place(&self, k: usize) -> usize {
        self.place[k]
    }

    #[inline]
    pub fn digit(&self, idx: usize, k: usize) -> usize {
        (idx / self.place[k]) % self.q
    }

    #[inline]
    pub fn with_digit(&self, idx: usize, k: usize, v: usize) -> usize {
        idx - self.digit(idx, k) * self.place[k] + v * self.place[k]
    }

    pub fn decode(&self, idx: usize) -> Vec<u8> {
        (0..self.len()).map(|k| self.digit(idx, k) as u8).collect()
    }

    pub fn encode(&self, digits: &[u8]) -> usize {
        digits
            .iter()
            .zip(&self.place)
            .map(|(&d, &p)| d as usize * p)
            .sum()
    }
}

/// Renders 0-based states as a config-string of labels `1..=q`.
pub fn config_string(states: &[u8], q: usize) -> String {
    let labels = states.iter().map(|&s| (s as usize + 1).to_string());
    if q >= 10 {
        labels.collect::<Vec<_>>().join(",")
    } else {
        labels.collect()
    }
}

/// Parses a config-string into 0-based states.
pub fn parse_config_string(s: &str, len: usize, q: usize) -> Result<Vec<u8>> {
    let s = s.trim();
    let parts: Vec<&str> = if s.contains(',') || q >= 10 {
        s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect()
    } else {
        s.char_indices().map(|(i, c)| &s[i..i + c.len_utf8()]).collect()
    };
    if parts.len() != len {
        return Err(Error::Config(format!(
            "config-string {s:?} has {} states, expected {len}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|p| {
            let v: usize = p
                .parse()
                .map_err(|_| Error::Config(format!("bad state {p:?} in config-string {s:?}")))?;
            if v == 0 || v > q {
                return Err(Error::Config(format!(
                    "state {v} in config-string {s:?} outside 1..={q}"
                )));
            }
            Ok((v - 1) as u8)
        })
        .collect()
}

/// A configuration on a window, with states labelled `1..=q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Config {
    window: Window,
    values: Vec<u8>,
}

impl Config {
    pub fn new(window: Window, values: Vec<u8>) -> Result<Self> {
        if window.len() != values.len() {
            return Err(Error::InvalidMeasure(format!(
                "config has {} values for a window of {} sites",
                values.len(),
                window.len()
            )));
        }
        if values.contains(&0) {
            return Err(Error::InvalidMeasure("states are labelled from 1".into()));
        }
        Ok(Config { window, values })
    }

    /// Same state on every site.
    pub fn constant(window: Window, state: u8) -> Result<Self> {
        let n = window.len();
        Config::new(window, vec![state; n])
    }

    pub fn from_index(window: Window, q: usize, idx: usize) -> Result<Self> {
        let enc = Encoder::new(q, window.len())?;
        if idx >= enc.states() {
            return Err(Error::InvalidMeasure(format!("index {idx} out of range")));
        }
        let values = enc.decode(idx).into_iter().map(|s| s + 1).collect();
        Ok(Config { window, values })
    }

    pub fn parse(window: Window, q: usize, s: &str) -> Result<Self> {
        let states = parse_config_string(s, window.len(), q)?;
        Ok(Config {
            window,
            values: states.into_iter().map(|s| s + 1).collect(),
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn value_at(&self, site: usize) -> Option<u8> {
        self.window.position(site).map(|k| self.values[k])
    }

    /// 0-based states.
    pub fn states(&self) -> Vec<u8> {
        self.values.iter().map(|v| v - 1).collect()
    }

    pub fn index(&self, q: usize) -> Result<usize> {
        if self.values.iter().any(|&v| v as usize > q) {
            return Err(Error::InvalidMeasure(format!(
                "config {self} has a state above q = {q}"
            )));
        }
        Ok(Encoder::new(q, self.window.len())?.encode(&self.states()))
    }

    pub fn to_config_string(&self, q: usize) -> String {
        config_string(&self.states(), q)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.values.iter().copied().max().unwrap_or(1) as usize;
        write!(f, "{}", config_string(&self.states(), q.max(2)))
    }
}

/// A probability vector over all configurations of a window of a torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMeasure {
    torus: Torus,
    window: Window,
    q: Alphabet,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    format: String,
    torus: Torus,
    window: Window,
    q: Alphabet,
    len: usize,
}

impl DenseMeasure {
    /// Validates shape, non-negativity and normalization.
    pub fn new(torus: Torus, window: Window, q: usize, weights: Vec<f64>) -> Result<Self> {
        let m = Self::unchecked(torus, window, q, weights)?;
        let s = pairwise_sum(&m.weights);
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {s}, not 1"
            )));
        }
        Ok(m)
    }

    /// Divides by the total mass.
    pub fn from_unnormalized(
        torus: Torus,
        window: Window,
        q: usize,
        mut weights: Vec<f64>,
    ) -> Result<Self> {
        let s = pairwise_sum(&weights);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidMeasure(format!("total mass {s}")));
        }
        for w in &mut weights {
            *w /= s;
        }
        Self::unchecked(torus, window, q, weights)
    }

    fn unchecked(torus: Torus, window: Window, q: usize, weights: Vec<f64>) -> Result<Self> {
        let q = Alphabet::new(q)?;
        if let Some(&s) = window.iter().find(|&&s| s >= torus.len()) {
            return Err(Error::Geometry(format!("site {s} is not on the torus")));
        }
        let states = state_count(q.q(), window.len())?;
        if weights.len() != states {
            return Err(Error::InvalidMeasure(format!(
                "{} weights for {states} configurations",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not a probability")));
        }
        Ok(DenseMeasure {
            torus,
            window,
            q,
            weights,
        })
    }

    pub fn uniform(torus: &Torus, window: Window, q: usize) -> Result<Self> {
        let states = state_count(q, window.len())?;
        Self::new(torus.clone(), window, q, vec![1.0 / states as f64; states])
    }

    pub fn point_mass(torus: &Torus, q: usize, config: &Config) -> Result<Self> {
        let idx = config.index(q)?;
        let states = state_count(q, config.window().len())?;
        let mut w = vec![0.0; states];
        w[idx] = 1.0;
        Self::new(torus.clone(), config.window().clone(), q, w)
    }

    /// I.i.d. product of the single-site law `p` (indexed by 0-based state).
    pub fn product(torus: &Torus, window: Window, p: &[f64]) -> Result<Self> {
        let per_site = vec![p.to_vec(); window.len()];
        Self::product_sites(torus, window, &per_site)
    }

    /// Independent sites with their own single-site laws.
    pub fn product_sites(torus: &Torus, window: Window, laws: &[Vec<f64>]) -> Result<Self> {
        let q = laws.first().map(Vec::len).unwrap_or(2);
        if laws.len() != window.len() || laws.iter().any(|l| l.len() != q) {
            return Err(Error::InvalidMeasure(
                "one law of length q per window site is required".into(),
            ));
        }
        for l in laws {
            let s: f64 = l.iter().sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL || l.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidMeasure(format!("{l:?} is not a probability vector")));
            }
        }
        let enc = Encoder::new(q, window.len())?;
        let w = (0..enc.states())
            .map(|idx| (0..enc.len()).map(|k| laws[k][enc.digit(idx, k)]).product())
            .collect();
        Self::from_unnormalized(torus.clone(), window, q, w)
    }

    /// Random weights with i.i.d. exponential entries (a flat Dirichlet draw).
    pub fn random<R: Rng + ?Sized>(
        torus: &Torus,
        window: Window,
        q: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let states = state_count(q, window.len())?;
        let w = (0..states).map(|_| Exp1.sample(rng)).collect();
        Self::from_unnormalized(torus.clone(), window, q, w)
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn q(&self) -> usize {
        self.q.q()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_full_torus(&self) -> bool {
        self.window.len() == self.torus.len()
    }

    pub fn encoder(&self) -> Encoder {
        Encoder::new(self.q(), self.window.len()).expect("validated at construction")
    }

    pub fn prob(&self, config: &Config) -> Result<f64> {
        if config.window() == &self.window {
            return Ok(self.weights[config.index(self.q())?]);
        }
        let m = self.marginal(config.window())?;
        Ok(m.weights[config.index(self.q())?])
    }

    /// For every configuration of this window, the index of its restriction
    /// to `sub`.
    pub fn projection(&self, sub: &Window) -> Result<Vec<usize>> {
        projection_map(&self.window, sub, self.q())
    }

    pub fn marginal(&self, sub: &Window) -> Result<DenseMeasure> {
        if sub == &self.window {
            return Ok(self.clone());
        }
        let proj = self.projection(sub)?;
        let mut w = vec![0.0; state_count(self.q(), sub.len())?];
        for (idx, &p) in proj.iter().enumerate() {
            w[p] += self.weights[idx];
        }
        DenseMeasure::from_unnormalized(self.torus.clone(), sub.clone(), self.q(), w)
    }

    /// Law of the remaining sites given the cylinder `given`.
    pub fn conditional(&self, given: &Config) -> Result<DenseMeasure> {
        let g = given.window();
        if !g.is_subset(&self.window) {
            return Err(Error::NotContained(format!(
                "{:?} is not inside {:?}",
                g.sites(),
                self.window.sites()
            )));
        }
        let rest = self.window.difference(g);
        let q = self.q();
        let gstates = given.states();
        let enc = self.encoder();
        let gpos: Vec<usize> = g.iter().map(|&s| self.window.position(s).unwrap()).collect();
        let proj = self.projection(&rest)?;
        let mut w = vec![0.0; state_count(q, rest.len())?];
        for (idx, &p) in proj.iter().enumerate() {
            if gpos
                .iter()
                .zip(&gstates)
                .all(|(&k, &v)| enc.digit(idx, k) == v as usize)
            {
                w[p] += self.weights[idx];
            }
        }
        let mass = pairwise_sum(&w);
        if mass <= 0.0 {
            return Err(Error::NullCylinder(format!(
                "{} on {:?}",
                given.to_config_string(q),
                g.sites()
            )));
        }
        DenseMeasure::from_unnormalized(self.torus.clone(), rest, q, w)
    }

    /// The image measure under the torus translation `x -> x + by`.
    pub fn translate(&self, by: &Point) -> Result<DenseMeasure> {
        self.require_full_torus("translate")?;
        let perm = translation_permutation(&self.torus, self.q(), by)?;
        let mut w = vec![0.0; self.weights.len()];
        for (idx, &j) in perm.iter().enumerate() {
            w[j] = self.weights[idx];
        }
        Ok(DenseMeasure {
            weights: w,
            ..self.clone()
        })
    }

    /// `(1/N) sum_i m o theta_i^{-1}` over all torus translations.
    pub fn translation_average(&self) -> Result<DenseMeasure> {
        self.require_full_torus("translation_average")?;
        let n = self.torus.len();
        let mut w = vec![0.0; self.weights.len()];
        for site in 0..n {
            let by = self.torus.coords(site);
            let perm = translation_permutation(&self.torus, self.q(), &by)?;
            for (idx, &j) in perm.iter().enumerate() {
                w[j] += self.weights[idx] / n as f64;
            }
        }
        DenseMeasure::from_unnormalized(self.torus.clone(), self.window.clone(), self.q(), w)
    }

    /// Largest weight change under a unit translation along any axis.
    pub fn translation_defect(&self) -> Result<f64> {
        let d = self.torus.dim();
        let mut worst: f64 = 0.0;
        for a in 0..d {
            let mut e = vec![0; d];
            e[a] = 1;
            let t = self.translate(&Point(e))?;
            worst = worst.max(self.sup_distance(&t));
        }
        Ok(worst)
    }

    /// `min_{i, eta} m(eta_i | eta_{i^c})` over contexts of positive mass.
    pub fn non_nullness_constant(&self) -> Result<f64> {
        self.require_full_torus("non_nullness_constant")?;
        let enc = self.encoder();
        let q = self.q();
        let mut delta = f64::INFINITY;
        for k in 0..enc.len() {
            for idx in 0..enc.states() {
                if enc.digit(idx, k) != 0 {
                    continue;
                }
                let step = enc.place(k);
                let cell: Vec<f64> = (0..q).map(|v| self.weights[idx + v * step]).collect();
                let z: f64 = cell.iter().sum();
                if z <= 0.0 {
                    continue;
                }
                for p in cell {
                    delta = delta.min(p / z);
                }
            }
        }
        Ok(if delta.is_finite() { delta } else { 0.0 })
    }

    /// `(1 - eps) m + eps * uniform`.
    pub fn soften(&self, eps: f64) -> Result<DenseMeasure> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidMeasure(format!("softening {eps} outside [0, 1]")));
        }
        let u = 1.0 / self.weights.len() as f64;
        let w = self
            .weights
            .iter()
            .map(|&p| (1.0 - eps) * p + eps * u)
            .collect();
        DenseMeasure::from_unnormalized(self.torus.clone(), self.window.clone(), self.q(), w)
    }

    pub fn total_variation(&self, other: &DenseMeasure) -> Result<f64> {
        self.require_same_space(other)?;
        let diffs: Vec<f64> = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(0.5 * pairwise_sum(&diffs))
    }

    pub fn sup_distance(&self, other: &DenseMeasure) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `sum_k 2^{-k} TV(m1|W_k, m2|W_k)` with `k` counted from 1.
    pub fn weak_distance(&self, other: &DenseMeasure, schedule: &[Window]) -> Result<f64> {
        if self.torus != other.torus || self.q != other.q {
            return Err(Error::InvalidMeasure(
                "weak distance needs measures on a common torus".into(),
            ));
        }
        let mut total = 0.0;
        let mut scale = 1.0;
        for w in schedule {
            scale *= 0.5;
            total += scale * self.marginal(w)?.total_variation(&other.marginal(w)?)?;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DenseMeasure = serde_json::from_str(s)?;
        DenseMeasure::new(m.torus, m.window, m.q.q(), m.weights)
    }

    /// Writes little-endian `f64` weights to `path` and a JSON header to
    /// `path` with `.json` appended.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.weights.len());
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&bytes)?;
        let header = RawHeader {
            format: "f64-le".into(),
            torus: self.torus.clone(),
            window: self.window.clone(),
            q: self.q,
            len: self.weights.len(),
        };
        fs::write(raw_header_path(path), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let header: RawHeader = serde_json::from_str(&fs::read_to_string(raw_header_path(path))?)?;
        if header.format != "f64-le" {
            return Err(Error::InvalidMeasure(format!("unknown format {}", header.format)));
        }
        let bytes = fs::read(path)?;
        if bytes.len() != 8 * header.len {
            return Err(Error::InvalidMeasure(format!(
                "{} bytes for {} weights",
                bytes.len(),
                header.len
            )));
        }
        let weights = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DenseMeasure::new(header.torus, header.window, header.q.q(), weights)
    }

    fn require_full_torus(&self, what: &str) -> Result<()> {
        if !self.is_full_torus() {
            return Err(Error::InvalidMeasure(format!(
                "{what} needs a measure on the full torus"
            )));
        }
        Ok(())
    }

    fn require_same_space(&self, other: &DenseMeasure) -> Result<()> {
        if self.window != other.window || self.q != other.q || self.torus != other.torus {
            return Err(Error::InvalidMeasure(
                "measures live on different configuration spaces".into(),
            ));
        }
        Ok(())
    }
}

fn raw_header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Index of the restriction to `sub` for every configuration of `window`.
pub fn projection_map(window: &Window, sub: &Window, q: usize) -> Result<Vec<usize>> {
    if !sub.is_subset(window) {
        return Err(Error::NotContained(format!(
            "{:?} is not inside {:?}",
            sub.sites(),
            window.sites()
        )));
    }
    let enc = Encoder::new(q, window.len())?;
    let sub_enc = Encoder::new(q, sub.len())?;
    let pos: Vec<usize> = sub.iter().map(|&s| window.position(s).unwrap()).collect();
    Ok((0..enc.states())
        .map(|idx| {
            pos.iter()
                .enumerate()
                .map(|(j, &k)| enc.digit(idx, k) * sub_enc.place(j))
                .sum()
        })
        .collect())
}

/// Where each full-torus configuration goes under the translation `by`.
pub fn translation_permutation(torus: &Torus, q: usize, by: &Point) -> Result<Vec<usize>> {
    let n = torus.len();
    let enc = Encoder::new(q, n)?;
    let target: Vec<usize> = (0..n).map(|i| enc.place(torus.translate(i, by))).collect();
    Ok((0..enc.states())
        .map(|idx| (0..n).map(|i| enc.digit(idx, i) * target[i]).sum())
        .collect())
}
