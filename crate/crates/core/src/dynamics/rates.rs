use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Shape};
use crate::measure::{config_string, parse_config_string, Encoder};

/// One translation-invariant transition type: jumps on `shape`, rates that
/// read the configuration on `dep`.
///
/// The table is indexed by `context * targets + target`, the context being
/// the configuration on `dep` and the target a configuration on `shape`,
/// both in canonical order. Entries whose target equals the current values
/// on `shape` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    q: usize,
    shape: Shape,
    dep: Shape,
    table: Vec<f64>,
    shape_in_dep: Option<Vec<usize>>,
    ctx_enc: Encoder,
    target_enc: Encoder,
}

impl Rule {
    /// `dep` must contain `shape`; diagonal entries are forced to zero.
    pub fn new(q: usize, shape: Shape, dep: Shape, mut table: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Config("a transition shape must be non-empty".into()));
        }
        if !shape.is_subset(&dep) {
            return Err(Error::Config(format!(
                "dependence window {dep} does not contain the shape {shape}"
            )));
        }
        let ctx_enc = Encoder::new(q, dep.len())?;
        let target_enc = Encoder::new(q, shape.len())?;
        if table.len() != ctx_enc.states() * target_enc.states() {
            return Err(Error::Config(format!(
                "rate table for shape {shape} and window {dep} needs {} entries, got {}",
                ctx_enc.states() * target_enc.states(),
                table.len()
            )));
        }
        if let Some(r) = table.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::Config(format!("rate {r} is not a finite non-negative number")));
        }
        let pos: Vec<usize> = shape.iter().map(|p| dep.position(p).unwrap()).collect();
        let targets = target_enc.states();
        for ctx in 0..ctx_enc.states() {
            let here: usize = pos
                .iter()
                .enumerate()
                .map(|(j, &k)| ctx_enc.digit(ctx, k) * target_enc.place(j))
                .sum();
            table[ctx * targets + here] = 0.0;
        }
        Ok(Rule {
            q,
            shape,
            dep,
            table,
            shape_in_dep: Some(pos),
            ctx_enc,
            target_enc,
        })
    }

    /// Builds the table from `f(context, target)` on 0-based states.
    pub fn from_fn(
        q: usize,
        shape: Shape,
        dep: Shape,
        f: impl Fn(&[u8], &[u8]) -> f64,
    ) -> Result<Self> {
        let ce = Encoder::new(q, dep.len())?;
        let te = Encoder::new(q, shape.len())?;
        let mut table = Vec::with_capacity(ce.states() * te.states());
        for c in 0..ce.states() {
            let ctx = ce.decode(c);
            for t in 0..te.states() {
                table.push(f(&ctx, &te.decode(t)));
            }
        }
        Rule::new(q, shape, dep, table)
    }

    fn raw(q: usize, shape: Shape, dep: Shape, table: Vec<f64>) -> Self {
        let shape_in_dep = shape
            .iter()
            .map(|p| dep.position(p))
            .collect::<Option<Vec<usize>>>();
        Rule {
            ctx_enc: Encoder::new(q, dep.len()).unwrap(),
            target_enc: Encoder::new(q, shape.len()).unwrap(),
            q,
            shape,
            dep,
            table,
            shape_in_dep,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dep(&self) -> &Shape {
        &self.dep
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn contexts(&self) -> usize {
        self.ctx_enc.states()
    }

    pub fn targets(&self) -> usize {
        self.target_enc.states()
    }

    pub fn context_encoder(&self) -> &Encoder {
        &self.ctx_enc
    }

    pub fn target_encoder(&self) -> &Encoder {
        &self.target_enc
    }

    /// Positions of the shape points inside `dep`, when `dep` contains the
    /// shape.
    pub fn shape_in_dep(&self) -> Option<&[usize]> {
        self.shape_in_dep.as_deref()
    }

    #[inline]
    pub fn rate(&self, ctx: usize, target: usize) -> f64 {
        self.table[ctx * self.targets() + target]
    }

    /// `c_Delta(eta) = sum_sigma c_Delta(eta, sigma)`.
    pub fn total(&self, ctx: usize) -> f64 {
        let t = self.targets();
        self.table[ctx * t..(ctx + 1) * t].iter().sum()
    }

    /// `c_Delta = sup_eta c_Delta(eta)`.
    pub fn sup_total(&self) -> f64 {
        (0..self.contexts()).map(|c| self.total(c)).fold(0.0, f64::max)
    }

    /// Smallest positive entry.
    pub fn min_positive(&self) -> Option<f64> {
        self.table
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .fold(None, |m, r| Some(m.map_or(r, |m: f64| m.min(r))))
    }

    /// Context reached by writing `target` on the shape.
    pub fn flipped_context(&self, ctx: usize, target: usize) -> Option<usize> {
        let pos = self.shape_in_dep.as_ref()?;
        Some(pos.iter().enumerate().fold(ctx, |c, (j, &k)| {
            self.ctx_enc
                .with_digit(c, k, self.target_enc.digit(target, j))
        }))
    }

    /// Target equal to the current values on the shape.
    pub fn current_target(&self, ctx: usize) -> Option<usize> {
        let pos = self.shape_in_dep.as_ref()?;
        Some(
            pos.iter()
                .enumerate()
                .map(|(j, &k)| self.ctx_enc.digit(ctx, k) * self.target_enc.place(j))
                .sum(),
        )
    }

    pub fn support(&self) -> Shape {
        self.dep.union(&self.shape)
    }

    /// Moves the rule so that the smallest shape point is the origin.
    fn canonical(self) -> Rule {
        let shift = self.shape.min_point().unwrap().neg();
        Rule::raw(
            self.q,
            self.shape.translate(&shift),
            self.dep.translate(&shift),
            self.table,
        )
    }

    /// Same rates, read through a larger dependence window.
    fn widen(&self, dep: &Shape) -> Rule {
        let ce = Encoder::new(self.q, dep.len()).unwrap();
        let pos: Vec<usize> = self.dep.iter().map(|p| dep.position(p).unwrap()).collect();
        let t = self.targets();
        let mut table = Vec::with_capacity(ce.states() * t);
        for c in 0..ce.states() {
            let old: usize = pos
                .iter()
                .enumerate()
                .map(|(j, &k)| ce.digit(c, k) * self.ctx_enc.place(j))
                .sum();
            table.extend_from_slice(&self.table[old * t..(old + 1) * t]);
        }
        Rule::raw(self.q, self.shape.clone(), dep.clone(), table)
    }

    /// `inf_xi c(eta_B xi_{B^c}, sigma)`: the minimum over every completion
    /// outside `ball` (given relative to the rule's origin). The result
    /// depends on `dep ∩ ball` only, which need not contain the shape.
    pub fn truncated(&self, ball: &Shape) -> Rule {
        let inner = self.dep.intersection(ball);
        if inner.len() == self.dep.len() {
            return self.clone();
        }
        let ie = Encoder::new(self.q, inner.len()).unwrap();
        let inner_pos: Vec<usize> = inner.iter().map(|p| self.dep.position(p).unwrap()).collect();
        let t = self.targets();
        let mut table = vec![f64::INFINITY; ie.states() * t];
        for c in 0..self.contexts() {
            let ic: usize = inner_pos
                .iter()
                .enumerate()
                .map(|(j, &k)| self.ctx_enc.digit(c, k) * ie.place(j))
                .sum();
            for s in 0..t {
                let r = &mut table[ic * t + s];
                *r = r.min(self.rate(c, s));
            }
        }
        Rule::raw(self.q, self.shape.clone(), inner, table)
    }
}

/// A finite list of transition types with pairwise distinct canonical
/// shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFamily {
    q: usize,
    dim: usize,
    rules: Vec<Rule>,
}

impl RateFamily {
    /// Canonicalizes every rule and merges rules with the same shape by
    /// adding their rates.
    pub fn new(q: usize, dim: usize, rules: Vec<Rule>) -> Result<Self> {
        let mut by_shape: BTreeMap<Vec<Point>, Vec<Rule>> = BTreeMap::new();
        for r in rules {
            if r.q != q || r.shape.dim() != dim || r.dep.dim() != dim {
                return Err(Error::Config(format!(
                    "rule on {} does not match q = {q}, d = {dim}",
                    r.shape
                )));
            }
            let r = r.canonical();
            by_shape.entry(r.shape.points().to_vec()).or_default().push(r);
        }
        let mut merged = Vec::new();
        for (_, group) in by_shape {
            if group.len() == 1 {
                merged.extend(group);
                continue;
            }
            let dep = group.iter().fold(Shape::empty(dim), |acc, r| acc.union(&r.dep));
            let widened: Vec<Rule> = group.iter().map(|r| r.widen(&dep)).collect();
            let mut table = vec![0.0; widened[0].table.len()];
            for r in &widened {
                for (a, b) in table.iter_mut().zip(&r.table) {
                    *a += b;
                }
            }
            merged.push(Rule::raw(q, widened[0].shape.clone(), dep, table));
        }
        Ok(RateFamily {
            q,
            dim,
            rules: merged,
        })
    }

    pub fn zero(q: usize, dim: usize) -> Self {
        RateFamily {
            q,
            dim,
            rules: Vec::new(),
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Largest extent of `dep ∪ shape` along any axis.
    pub fn range(&self) -> usize {
        self.rules
            .iter()
            .map(|r| r.support().diameter() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Largest Euclidean distance from a shape point to a point of the
    /// rule's support, rounded up.
    pub fn reach(&self) -> u64 {
        let mut best = 0i64;
        for r in &self.rules {
            let sup = r.support();
            for s in r.shape.iter() {
                for p in sup.iter() {
                    best = best.max(p.sub(s).norm2());
                }
            }
        }
        (best as f64).sqrt().ceil() as u64
    }

    /// `sum_{Delta ∋ 0} c_Delta`.
    pub fn total_rate_bound(&self) -> f64 {
        self.rules
            .iter()
            .map(|r| r.shape.len() as f64 * r.sup_total())
            .sum()
    }

    /// Every rule truncated to `ball` (relative to the rule's origin).
    pub fn truncated(&self, ball: &Shape) -> RateFamily {
        RateFamily {
            q: self.q,
            dim: self.dim,
            rules: self.rules.iter().map(|r| r.truncated(ball)).collect(),
        }
    }

    pub fn to_spec(&self) -> RateFamilySpec {
        RateFamilySpec {
            q: self.q,
            dim: self.dim,
            rules: self
                .rules
                .iter()
                .map(|r| {
                    let mut table = BTreeMap::new();
                    for c in 0..r.contexts() {
                        for t in 0..r.targets() {
                            let v = r.rate(c, t);
                            if v != 0.0 {
                                let key = format!(
                                    "{}->{}",
                                    config_string(&r.ctx_enc.decode(c), self.q),
                                    config_string(&r.target_enc.decode(t), self.q)
                                );
                                table.insert(key, v);
                            }
                        }
                    }
                    RuleSpec {
                        shape: r.shape.iter().map(|p| p.0.clone()).collect(),
                        dep_window: r.dep.iter().map(|p| p.0.clone()).collect(),
                        table,
                    }
                })
                .collect(),
        }
    }

    pub fn from_spec(spec: &RateFamilySpec) -> Result<Self> {
        let mut rules = Vec::new();
        for (k, r) in spec.rules.iter().enumerate() {
            let field = |what: &str, e: Error| Error::Config(format!("rules[{k}].{what}: {e}"));
            let shape = Shape::new(spec.dim, r.shape.iter().cloned().map(Point).collect())
                .map_err(|e| field("shape", e))?;
            let dep = Shape::new(spec.dim, r.dep_window.iter().cloned().map(Point).collect())
                .map_err(|e| field("dep_window", e))?;
            let ce = Encoder::new(spec.q, dep.len())?;
            let te = Encoder::new(spec.q, shape.len())?;
            let mut table = vec![0.0; ce.states() * te.states()];
            for (key, &v) in &r.table {
                let (c, t) = key.split_once("->").ok_or_else(|| {
                    Error::Config(format!("rules[{k}].table: key {key:?} is not \"context->target\""))
                })?;
                let c = parse_config_string(c, dep.len(), spec.q).map_err(|e| field("table", e))?;
                let t = parse_config_string(t, shape.len(), spec.q).map_err(|e| field("table", e))?;
                table[ce.encode(&c) * te.states() + te.encode(&t)] = v;
            }
            rules.push(Rule::new(spec.q, shape, dep, table).map_err(|e| field("table", e))?);
        }
        RateFamily::new(spec.q, spec.dim, rules)
    }
}

/// Text form of an inline rate family. Table keys read
/// `"<context on dep_window>-><target on shape>"`; missing entries are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFamilySpec {
    pub q: usize,
    pub dim: usize,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub shape: Vec<Vec<i64>>,
    pub dep_window: Vec<Vec<i64>>,
    #[serde(default)]
    pub table: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ball;

    fn flip_rule(q: usize, rate: f64) -> Rule {
        Rule::from_fn(q, Shape::line(&[0]), Shape::line(&[0]), |_, _| rate).unwrap()
    }

    #[test]
    fn diagonal_is_zeroed() {
        let r = flip_rule(3, 1.0);
        for c in 0..3 {
            assert_eq!(r.rate(c, c), 0.0);
            assert_eq!(r.total(c), 2.0);
        }
    }

    #[test]
    fn dep_must_contain_shape() {
        assert!(Rule::new(2, Shape::line(&[0, 1]), Shape::line(&[0]), vec![0.0; 8]).is_err());
        assert!(Rule::new(2, Shape::line(&[0]), Shape::line(&[0]), vec![0.0; 3]).is_err());
        assert!(Rule::new(2, Shape::line(&[0]), Shape::line(&[0]), vec![0.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn canonicalization_and_merging() {
        let a = Rule::from_fn(2, Shape::line(&[3]), Shape::line(&[2, 3]), |c, _| c[0] as f64).unwrap();
        let b = flip_rule(2, 1.0);
        let fam = RateFamily::new(2, 1, vec![a, b]).unwrap();
        assert_eq!(fam.rules().len(), 1);
        let r = &fam.rules()[0];
        assert_eq!(r.shape(), &Shape::line(&[0]));
        assert_eq!(r.dep(), &Shape::line(&[-1, 0]));
        // context (left neighbour, self): total = [left] + 1
        for c in 0..4 {
            let left = c / 2;
            assert_eq!(r.total(c), left as f64 + 1.0);
        }
    }

    #[test]
    fn truncation() {
        // rate depends on both neighbours
        let r = Rule::from_fn(2, Shape::line(&[0]), Shape::line(&[-1, 0, 1]), |c, _| {
            1.0 + c[0] as f64 + 2.0 * c[2] as f64
        })
        .unwrap();
        assert_eq!(r.truncated(&ball(&Point(vec![0]), 1)), r);
        let t = r.truncated(&Shape::line(&[-1, 0]));
        assert_eq!(t.dep(), &Shape::line(&[-1, 0]));
        // exhaustive min over the right neighbour
        for c in 0..4 {
            for s in 0..2 {
                let brute = (0..2)
                    .map(|x| r.rate(c * 2 + x, s))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(t.rate(c, s), brute);
            }
        }
        let zero = RateFamily::zero(2, 1).truncated(&Shape::line(&[0]));
        assert!(zero.rules().is_empty());
    }

    #[test]
    fn truncation_below_the_shape_sees_the_diagonal() {
        let r = flip_rule(2, 1.0);
        let t = r.truncated(&Shape::empty(1));
        assert!(t.shape_in_dep().is_none());
        assert_eq!(t.table(), &[0.0, 0.0]);
    }

    #[test]
    fn spec_round_trip() {
        let r = Rule::from_fn(3, Shape::line(&[0]), Shape::line(&[0, 1]), |c, t| {
            (c[1] + 2 * t[0]) as f64 * 0.25
        })
        .unwrap();
        let fam = RateFamily::new(3, 1, vec![r]).unwrap();
        let back = RateFamily::from_spec(&fam.to_spec()).unwrap();
        assert_eq!(back, fam);
    }
}
