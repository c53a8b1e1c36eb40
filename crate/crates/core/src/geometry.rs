//! Lattice geometry: points of `Z^d`, finite shapes, periodic tori and the
//! dyadic box families used by the volume-monotonicity arguments.
//!
//! Two kinds of site sets appear everywhere:
//!
//! * [`Shape`] is a finite set of offsets in `Z^d` (interaction shapes, jump
//!   shapes, boxes, balls). It knows nothing about boundary conditions.
//! * [`Window`] is a finite set of sites of a concrete [`Torus`], obtained by
//!   placing a shape somewhere on it.
//!
//! Both keep their elements in canonical (lexicographic, resp. ascending
//! index) order, and every configuration index in the crate is derived from
//! that order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<i64>);

impl Point {
    pub fn origin(dim: usize) -> Self {
        Point(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> Point {
        Point(self.0.iter().map(|a| -a).collect())
    }

    /// Squared Euclidean norm.
    pub fn norm2(&self) -> i64 {
        self.0.iter().map(|a| a * a).sum()
    }

    /// Largest absolute coordinate.
    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|a| a.abs()).max().unwrap_or(0)
    }
}

impl From<Vec<i64>> for Point {
    fn from(v: Vec<i64>) -> Self {
        Point(v)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A finite set of points of `Z^d` in lexicographic order, without duplicates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Shape {
    dim: usize,
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Shape {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        let dim = points.first().map(Point::dim).ok_or_else(|| {
            Error::Geometry("a shape given as a bare point list must be non-empty".into())
        })?;
        Shape::new(dim, points)
    }
}

impl From<Shape> for Vec<Point> {
    fn from(s: Shape) -> Self {
        s.points
    }
}

impl Shape {
    pub fn new(dim: usize, mut points: Vec<Point>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Geometry("dimension must be positive".into()));
        }
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::Geometry(format!(
                "point {p} does not have dimension {dim}"
            )));
        }
        points.sort();
        points.dedup();
        Ok(Shape { dim, points })
    }

    pub fn empty(dim: usize) -> Self {
        Shape {
            dim,
            points: Vec::new(),
        }
    }

    /// The single point `0`.
    pub fn origin(dim: usize) -> Self {
        Shape {
            dim,
            points: vec![Point::origin(dim)],
        }
    }

    /// Shape from one-dimensional offsets.
    pub fn line(offsets: &[i64]) -> Self {
        Shape::new(1, offsets.iter().map(|&x| Point(vec![x])).collect())
            .expect("one-dimensional points")
    }

    /// The hypercube `[lo, hi]^d` (empty when `lo > hi`).
    pub fn cube(dim: usize, lo: i64, hi: i64) -> Self {
        Shape::box_between(&vec![lo; dim], &vec![hi; dim])
    }

    /// The box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
    pub fn box_between(lo: &[i64], hi: &[i64]) -> Self {
        let dim = lo.len();
        if lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Shape::empty(dim);
        }
        let mut points = Vec::new();
        let mut cur: Vec<i64> = lo.to_vec();
        loop {
            points.push(Point(cur.clone()));
            let mut axis = dim;
            loop {
                if axis == 0 {
                    // lexicographic generation order is already sorted
                    return Shape { dim, points };
                }
                axis -= 1;
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.points.binary_search(p).is_ok()
    }

    /// Position of `p` in canonical order.
    pub fn position(&self, p: &Point) -> Option<usize> {
        self.points.binary_search(p).ok()
    }

    pub fn is_subset(&self, other: &Shape) -> bool {
        self.points.iter().all(|p| other.contains(p))
    }

    pub fn translate(&self, by: &Point) -> Shape {
        // translation preserves lexicographic order
        Shape {
            dim: self.dim,
            points: self.points.iter().map(|p| p.add(by)).collect(),
        }
    }

    /// All translates `self + a` for `a` in `anchors`.
    pub fn translates(&self, anchors: &Shape) -> Vec<Shape> {
        anchors.iter().map(|a| self.translate(a)).collect()
    }

    pub fn union(&self, other: &Shape) -> Shape {
        let mut pts = self.points.clone();
        pts.extend(other.points.iter().cloned());
        Shape::new(self.dim, pts).expect("same dimension")
    }

    pub fn intersection(&self, other: &Shape) -> Shape {
        Shape {
            dim: self.dim,
            points: self
                .points
                .iter()
                .filter(|p| other.contains(p))
                .cloned()
                .collect(),
        }
    }

    pub fn difference(&self, other: &Shape) -> Shape {
        Shape {
            dim: self.dim,
            points: self
                .points
                .iter()
                .filter(|p| !other.contains(p))
                .cloned()
                .collect(),
        }
    }

    /// Lexicographically smallest point.
    pub fn min_point(&self) -> Option<&Point> {
        self.points.first()
    }

    /// Largest sup-norm of any point (0 for the empty shape).
    pub fn radius(&self) -> i64 {
        self.points.iter().map(Point::sup_norm).max().unwrap_or(0)
    }

    /// Largest coordinate difference along any axis.
    pub fn diameter(&self) -> i64 {
        (0..self.dim)
            .map(|a| {
                let lo = self.points.iter().map(|p| p.0[a]).min().unwrap_or(0);
                let hi = self.points.iter().map(|p| p.0[a]).max().unwrap_or(0);
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, p) in self.points.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

/// Euclidean ball `{ j : |center - j| <= radius }`.
pub fn ball(center: &Point, radius: u64) -> Shape {
    let d = center.dim();
    let r = radius as i64;
    let cube = Shape::cube(d, -r, r);
    let points = cube
        .iter()
        .filter(|p| p.norm2() <= r * r)
        .map(|p| p.add(center))
        .collect();
    Shape::new(d, points).expect("dimension of center")
}

/// The periodic lattice `Z/L_1 x ... x Z/L_d`.
///
/// Sites are numbered in mixed radix with axis 0 most significant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Torus {
    sides: Vec<usize>,
    strides: Vec<usize>,
    n_sites: usize,
}

impl TryFrom<Vec<usize>> for Torus {
    type Error = Error;
    fn try_from(sides: Vec<usize>) -> Result<Self> {
        Torus::new(sides)
    }
}

impl From<Torus> for Vec<usize> {
    fn from(t: Torus) -> Self {
        t.sides
    }
}

impl Torus {
    pub fn new(sides: Vec<usize>) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::Geometry("torus needs at least one axis".into()));
        }
        if sides.contains(&0) {
            return Err(Error::Geometry("torus sides must be positive".into()));
        }
        let n_sites = sides
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| Error::Geometry("torus site count overflows".into()))?;
        let mut strides = vec![1; sides.len()];
        for a in (0..sides.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * sides[a + 1];
        }
        Ok(Torus {
            sides,
            strides,
            n_sites,
        })
    }

    /// One-dimensional ring with `n` sites.
    pub fn ring(n: usize) -> Result<Self> {
        Torus::new(vec![n])
    }

    /// `d`-dimensional torus with all sides equal to `side`.
    pub fn cubic(d: usize, side: usize) -> Result<Self> {
        Torus::new(vec![side; d])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn min_side(&self) -> usize {
        *self.sides.iter().min().expect("non-empty")
    }

    /// Number of sites `N`.
    pub fn len(&self) -> usize {
        self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Canonical representative coordinates in `[0, L_a)`.
    pub fn coords(&self, site: usize) -> Point {
        Point(
            self.sides
                .iter()
                .zip(&self.strides)
                .map(|(&l, &s)| ((site / s) % l) as i64)
                .collect(),
        )
    }

    /// Site index of a point of `Z^d`, reduced modulo the sides.
    pub fn site(&self, p: &Point) -> usize {
        debug_assert_eq!(p.dim(), self.dim());
        p.0.iter()
            .zip(&self.sides)
            .zip(&self.strides)
            .map(|((&c, &l), &s)| (c.rem_euclid(l as i64) as usize) * s)
            .sum()
    }

    /// The site reached from `site` by the translation `by`.
    pub fn translate(&self, site: usize, by: &Point) -> usize {
        self.site(&self.coords(site).add(by))
    }

    /// Places `shape` with its origin at `anchor`. Sites may coincide if
    /// the torus is too small; see [`Torus::embed`] for the checked version.
    pub fn place(&self, shape: &Shape, anchor: usize) -> Vec<usize> {
        let a = self.coords(anchor);
        shape.iter().map(|p| self.site(&p.add(&a))).collect()
    }

    /// Places `shape` at `anchor`, failing if two points land on the same
    /// site.
    pub fn embed_at(&self, shape: &Shape, anchor: usize) -> Result<Window> {
        let sites = self.place(shape, anchor);
        let w = Window::new(sites.clone());
        if w.len() != sites.len() {
            return Err(Error::TorusTooSmall(format!(
                "shape {shape} overlaps itself on torus {:?}",
                self.sides
            )));
        }
        Ok(w)
    }

    /// Places `shape` at the origin site.
    pub fn embed(&self, shape: &Shape) -> Result<Window> {
        self.embed_at(shape, 0)
    }

    /// Whether every translate of `shape` occupies `|shape|` distinct sites.
    pub fn fits(&self, shape: &Shape) -> bool {
        self.embed(shape).is_ok()
    }

    /// Translates `shape + i` for all `i` in `anchors`, with wrap-around.
    pub fn translates_of(&self, shape: &Shape, anchors: &Window) -> Vec<Window> {
        anchors
            .iter()
            .map(|&a| Window::new(self.place(shape, a)))
            .collect()
    }

    /// All sites.
    pub fn full_window(&self) -> Window {
        Window {
            sites: (0..self.n_sites).collect(),
        }
    }
}

/// A finite set of torus sites in ascending order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct Window {
    sites: Vec<usize>,
}

impl From<Vec<usize>> for Window {
    fn from(v: Vec<usize>) -> Self {
        Window::new(v)
    }
}

impl From<Window> for Vec<usize> {
    fn from(w: Window) -> Self {
        w.sites
    }
}

impl Window {
    pub fn new(mut sites: Vec<usize>) -> Self {
        sites.sort_unstable();
        sites.dedup();
        Window { sites }
    }

    pub fn single(site: usize) -> Self {
        Window { sites: vec![site] }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.sites.iter()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    pub fn position(&self, site: usize) -> Option<usize> {
        self.sites.binary_search(&site).ok()
    }

    pub fn is_subset(&self, other: &Window) -> bool {
        self.sites.iter().all(|&s| other.contains(s))
    }

    pub fn union(&self, other: &Window) -> Window {
        let mut v = self.sites.clone();
        v.extend_from_slice(&other.sites);
        Window::new(v)
    }

    pub fn intersection(&self, other: &Window) -> Window {
        Window {
            sites: self
                .sites
                .iter()
                .copied()
                .filter(|&s| other.contains(s))
                .collect(),
        }
    }

    pub fn difference(&self, other: &Window) -> Window {
        Window {
            sites: self
                .sites
                .iter()
                .copied()
                .filter(|&s| !other.contains(s))
                .collect(),
        }
    }

    pub fn intersects(&self, other: &Window) -> bool {
        self.sites.iter().any(|&s| other.contains(s))
    }
}

/// The dyadic boxes `Λ_n = [-2^n+1, 2^n-1]^d`, their shrunken versions
/// `[-2^n+n+1, 2^n-n-1]^d`, and the `2^d` disjoint subcubes of side `2^n-1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxFamily {
    pub n: u32,
    pub dim: usize,
    pub outer: Shape,
    pub inner: Shape,
    pub subcubes: Vec<Shape>,
    pub inner_subcubes: Vec<Shape>,
}

/// Builds the box family of level `n` with inner subcubes centred inside
/// their subcubes (left margin `floor(n/2)`).
pub fn make_box_family(n: u32, d: usize) -> Result<BoxFamily> {
    make_box_family_with_offset(n, d, (n / 2) as i64)
}

/// Same as [`make_box_family`], with an explicit left margin of each inner
/// subcube inside its subcube. The margin must lie in `0..=n`.
pub fn make_box_family_with_offset(n: u32, d: usize, margin: i64) -> Result<BoxFamily> {
    if n == 0 || d == 0 {
        return Err(Error::Geometry("box family needs n >= 1 and d >= 1".into()));
    }
    if !(0..=n as i64).contains(&margin) {
        return Err(Error::Geometry(format!(
            "inner subcube margin {margin} outside 0..={n}"
        )));
    }
    let two_n = 1i64
        .checked_shl(n)
        .filter(|&v| v > 0 && v < (1 << 40))
        .ok_or_else(|| Error::Geometry(format!("side length 2^{n} overflows")))?;
    let side = (2 * two_n - 1) as usize;
    side.checked_pow(d as u32)
        .ok_or_else(|| Error::Geometry(format!("box volume {side}^{d} overflows")))?;

    let half = two_n - 1;
    let inner_half = two_n - n as i64 - 1;
    let outer = Shape::cube(d, -half, half);
    let inner = Shape::cube(d, -inner_half, inner_half);

    let sub_side = two_n - 1;
    let inner_sub_side = two_n - n as i64 - 1;
    let mut subcubes = Vec::with_capacity(1 << d);
    let mut inner_subcubes = Vec::with_capacity(1 << d);
    for k in 0..(1usize << d) {
        let lo: Vec<i64> = (0..d)
            .map(|a| if (k >> (d - 1 - a)) & 1 == 0 { -half } else { 1 })
            .collect();
        let hi: Vec<i64> = lo.iter().map(|l| l + sub_side - 1).collect();
        let ilo: Vec<i64> = lo.iter().map(|l| l + margin).collect();
        let ihi: Vec<i64> = ilo.iter().map(|l| l + inner_sub_side - 1).collect();
        subcubes.push(Shape::box_between(&lo, &hi));
        inner_subcubes.push(Shape::box_between(&ilo, &ihi));
    }
    if inner_subcubes
        .iter()
        .zip(&subcubes)
        .any(|(i, s)| !i.is_subset(s))
    {
        return Err(Error::Geometry(format!(
            "margin {margin} pushes an inner subcube out of its subcube"
        )));
    }
    Ok(BoxFamily {
        n,
        dim: d,
        outer,
        inner,
        subcubes,
        inner_subcubes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_family_level_one_in_one_dimension() {
        let f = make_box_family(1, 1).unwrap();
        assert_eq!(f.outer, Shape::line(&[-1, 0, 1]));
        assert_eq!(f.inner, Shape::line(&[0]));
    }

    #[test]
    fn box_family_level_two_in_one_dimension() {
        let f = make_box_family(2, 1).unwrap();
        assert_eq!(f.outer, Shape::line(&[-3, -2, -1, 0, 1, 2, 3]));
        assert_eq!(f.inner, Shape::line(&[-1, 0, 1]));
        assert_eq!(f.subcubes[0], Shape::line(&[-3, -2, -1]));
        assert_eq!(f.subcubes[1], Shape::line(&[1, 2, 3]));
        assert_eq!(f.inner_subcubes[0], Shape::line(&[-2]));
    }

    #[test]
    fn box_family_level_one_square() {
        let f = make_box_family(1, 2).unwrap();
        assert_eq!(f.outer.len(), 9);
        assert_eq!(f.subcubes.len(), 4);
        // brute force: disjoint, unit squares, inside the 3x3 box
        for (a, s) in f.subcubes.iter().enumerate() {
            assert_eq!(s.len(), 1);
            assert!(s.is_subset(&f.outer));
            for t in &f.subcubes[a + 1..] {
                assert!(s.intersection(t).is_empty());
            }
        }
        // level one has empty inner subcubes (side 2 - 1 - 1 = 0)
        assert!(f.inner_subcubes.iter().all(Shape::is_empty));
    }

    #[test]
    fn box_family_rejects_bad_input() {
        assert!(make_box_family(0, 1).is_err());
        assert!(make_box_family(1, 0).is_err());
        assert!(make_box_family(62, 1).is_err());
        assert!(make_box_family_with_offset(2, 1, 3).is_err());
    }

    #[test]
    fn box_family_volumes() {
        for n in 1..=4u32 {
            for d in 1..=2usize {
                let f = make_box_family(n, d).unwrap();
                let side = (1i64 << (n + 1)) - 1;
                assert_eq!(f.outer.len() as i64, side.pow(d as u32));
                let union = f
                    .subcubes
                    .iter()
                    .fold(Shape::empty(d), |acc, s| acc.union(s));
                assert_eq!(union.len() as i64, (side - 1).pow(d as u32));
                let inner_union = f
                    .inner_subcubes
                    .iter()
                    .fold(Shape::empty(d), |acc, s| acc.union(s));
                assert_eq!(
                    inner_union.len(),
                    f.inner_subcubes.iter().map(Shape::len).sum::<usize>()
                );
            }
        }
    }

    #[test]
    fn balls() {
        assert_eq!(ball(&Point::origin(2), 0).len(), 1);
        assert_eq!(ball(&Point::origin(2), 1).len(), 5);
        // brute force count of |j| <= 2 in Z^2
        let mut count = 0;
        for x in -3i64..=3 {
            for y in -3i64..=3 {
                if x * x + y * y <= 4 {
                    count += 1;
                }
            }
        }
        assert_eq!(ball(&Point::origin(2), 2).len(), count);
        assert_eq!(count, 13);
    }

    #[test]
    fn ball_inside_translated_box() {
        for n in 1..=4u32 {
            let f = make_box_family(n, 2).unwrap();
            let c = Point(vec![3, -5]);
            assert!(ball(&c, n as u64).is_subset(&f.outer.translate(&c)));
        }
    }

    #[test]
    fn translates() {
        let single = Shape::line(&[0]);
        let t = single.translates(&Shape::line(&[0, 1]));
        assert_eq!(t, vec![Shape::line(&[0]), Shape::line(&[1])]);

        let ring = Torus::ring(3).unwrap();
        let pair = Shape::line(&[0, 1]);
        assert_eq!(
            ring.translates_of(&pair, &Window::single(0)),
            vec![Window::new(vec![0, 1])]
        );
        assert_eq!(
            ring.translates_of(&pair, &Window::single(2)),
            vec![Window::new(vec![2, 0])]
        );
    }

    #[test]
    fn torus_indexing() {
        let t = Torus::new(vec![3, 4]).unwrap();
        assert_eq!(t.len(), 12);
        for s in 0..t.len() {
            assert_eq!(t.site(&t.coords(s)), s);
        }
        assert_eq!(t.site(&Point(vec![-1, -1])), t.site(&Point(vec![2, 3])));
        let by = Point(vec![1, 2]);
        for s in 0..t.len() {
            assert_eq!(t.translate(t.translate(s, &by), &by.neg()), s);
        }
        assert!(Torus::new(vec![]).is_err());
        assert!(Torus::new(vec![2, 0]).is_err());
    }

    #[test]
    fn embedding_detects_self_overlap() {
        let ring = Torus::ring(2).unwrap();
        assert!(ring.embed(&Shape::line(&[-1, 0, 1])).is_err());
        assert!(Torus::ring(3).unwrap().fits(&Shape::line(&[-1, 0, 1])));
    }
}
