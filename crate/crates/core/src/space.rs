//! Finite metric measure spaces carrying a symmetric Dirichlet form.
//!
//! A [`Space`] is a finite point set with a probability measure `m`, a metric
//! `d`, and symmetric edge conductances `c`. The quadratic form
//! `E(f,g) = 1/2 * sum_{x,y} c(x,y) (f(x)-f(y)) (g(x)-g(y))` is a Dirichlet
//! form on L^2(m); its generator and carre du champ are implemented here,
//! together with constructors for cycles, discrete tori, Sierpinski-gasket
//! graphs and spaces loaded from files.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Real-valued function on the points of a [`Space`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    /// Wraps raw values; every entry must be finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { context: "field values" });
        }
        Ok(Self { values })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { values: vec![value; n] }
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    /// Indicator of a single point.
    pub fn indicator(n: usize, x: usize) -> Self {
        let mut values = vec![0.0; n];
        values[x] = 1.0;
        Self { values }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self { values: (0..n).map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.len(), other.len());
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    /// Inner product in L^2(m).
    pub fn dot_m(&self, other: &Field, measure: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(measure)
            .map(|((&a, &b), &m)| a * b * m)
            .sum()
    }

    pub fn norm_l2_m(&self, measure: &[f64]) -> f64 {
        self.dot_m(self, measure).max(0.0).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of checking a space against its invariants. Violations are data,
/// not failures.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Finite point set with probability measure, metric and symmetric
/// conductances. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Space {
    points: Vec<String>,
    coords: Option<Vec<[f64; 2]>>,
    metric: DMatrix<f64>,
    measure: Vec<f64>,
    conductance: DMatrix<f64>,
    // cached adjacency: (neighbor index, conductance) for c > 0
    neighbors: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize, f64)>,
}

impl Space {
    /// Builds a space and rejects it unless [`validate_space`] passes.
    pub fn new(
        points: Vec<String>,
        coords: Option<Vec<[f64; 2]>>,
        metric: DMatrix<f64>,
        measure: Vec<f64>,
        conductance: DMatrix<f64>,
    ) -> Result<Self> {
        let space = Self::new_unchecked(points, coords, metric, measure, conductance);
        let report = validate_space(&space);
        if report.is_valid() {
            Ok(space)
        } else {
            Err(CoreError::InvalidSpace(report.violations.join("; ")))
        }
    }

    /// Builds a space without checking the value-level invariants.
    /// Dimensions must still be consistent.
    pub fn new_unchecked(
        points: Vec<String>,
        coords: Option<Vec<[f64; 2]>>,
        metric: DMatrix<f64>,
        measure: Vec<f64>,
        conductance: DMatrix<f64>,
    ) -> Self {
        let n = points.len();
        assert_eq!(metric.nrows(), n, "metric rows");
        assert_eq!(metric.ncols(), n, "metric cols");
        assert_eq!(measure.len(), n, "measure length");
        assert_eq!(conductance.nrows(), n, "conductance rows");
        assert_eq!(conductance.ncols(), n, "conductance cols");
        if let Some(c) = &coords {
            assert_eq!(c.len(), n, "coords length");
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut edges = Vec::new();
        for x in 0..n {
            for y in 0..n {
                let c = conductance[(x, y)];
                if x != y && c > 0.0 {
                    neighbors[x].push((y, c));
                    if x < y {
                        edges.push((x, y, c));
                    }
                }
            }
        }
        Self { points, coords, metric, measure, conductance, neighbors, edges }
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.metric[(x, y)]
    }

    pub fn conductance(&self) -> &DMatrix<f64> {
        &self.conductance
    }

    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.neighbors[x]
    }

    /// Conductance edges with x < y.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Gershgorin bound on the spectral radius of the generator:
    /// |lambda| <= 2 max_x (1/m(x)) sum_y c(x,y).
    pub fn generator_norm_bound(&self) -> f64 {
        (0..self.n())
            .map(|x| {
                let row: f64 = self.neighbors[x].iter().map(|&(_, c)| c).sum();
                2.0 * row / self.measure[x]
            })
            .fold(0.0_f64, f64::max)
    }

    /// Checks a field against this space's size.
    pub fn check_field(&self, f: &Field) -> Result<()> {
        if f.len() != self.n() {
            Err(CoreError::FieldLength { expected: self.n(), found: f.len() })
        } else {
            Ok(())
        }
    }
}

/// Checks every invariant of [`Space`] and reports violations.
pub fn validate_space(s: &Space) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = s.n();
    if n < 2 {
        report.violations.push(format!("space must have at least 2 points, has {n}"));
    }

    if s.measure.iter().any(|&m| m <= 0.0 || !m.is_finite()) {
        report.violations.push("measure not strictly positive".into());
    }
    let mass: f64 = s.measure.iter().sum();
    if (mass - 1.0).abs() > 1e-10 {
        report.violations.push(format!("measure not normalized: total mass {mass}"));
    }

    let mut symmetric = true;
    let mut nonneg = true;
    let mut zero_diag = true;
    for x in 0..n {
        if s.conductance[(x, x)] != 0.0 {
            zero_diag = false;
        }
        for y in 0..n {
            let c = s.conductance[(x, y)];
            if !c.is_finite() || c < 0.0 {
                nonneg = false;
            }
            if (c - s.conductance[(y, x)]).abs() > 0.0 {
                symmetric = false;
            }
        }
    }
    if !symmetric {
        report.violations.push("conductance not symmetric".into());
    }
    if !nonneg {
        report.violations.push("conductance has negative or non-finite entries".into());
    }
    if !zero_diag {
        report.violations.push("conductance diagonal not zero".into());
    }

    if !is_connected(s) {
        report.violations.push("conductance graph not connected".into());
    }

    // metric axioms
    let mut metric_ok = true;
    for x in 0..n {
        for y in 0..n {
            let d = s.metric[(x, y)];
            if !d.is_finite() || d < 0.0 || (s.metric[(y, x)] - d).abs() > 1e-12 {
                metric_ok = false;
            }
            if x == y && d != 0.0 {
                metric_ok = false;
            }
            if x != y && d <= 0.0 {
                metric_ok = false;
            }
        }
    }
    if !metric_ok {
        report.violations.push("metric not a symmetric positive distance".into());
    } else {
        'tri: for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if s.metric[(x, y)] > s.metric[(x, z)] + s.metric[(z, y)] + 1e-12 {
                        report
                            .violations
                            .push(format!("triangle inequality fails at ({x},{y},{z})"));
                        break 'tri;
                    }
                }
            }
        }
    }

    report
}

fn is_connected(s: &Space) -> bool {
    let n = s.n();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(x) = stack.pop() {
        for &(y, _) in s.neighbors(x) {
            if !seen[y] {
                seen[y] = true;
                count += 1;
                stack.push(y);
            }
        }
    }
    count == n
}

/// Applies the generator: `(L f)(x) = (1/m(x)) sum_y c(x,y) (f(y) - f(x))`.
///
/// Self-adjoint and non-positive in the m-weighted inner product; constants
/// are harmonic.
pub fn generator_apply(s: &Space, f: &Field) -> Field {
    debug_assert_eq!(f.len(), s.n());
    let v = f.values();
    Field::from_fn(s.n(), |x| {
        let acc: f64 = s.neighbors(x).iter().map(|&(y, c)| c * (v[y] - v[x])).sum();
        acc / s.measure[x]
    })
}

/// Carre du champ:
/// `Gamma(f,g)(x) = (1/(2 m(x))) sum_y c(x,y) (f(x)-f(y)) (g(x)-g(y))`.
pub fn carre_du_champ(s: &Space, f: &Field, g: &Field) -> Field {
    debug_assert_eq!(f.len(), s.n());
    debug_assert_eq!(g.len(), s.n());
    let fv = f.values();
    let gv = g.values();
    Field::from_fn(s.n(), |x| {
        let acc: f64 = s
            .neighbors(x)
            .iter()
            .map(|&(y, c)| c * (fv[x] - fv[y]) * (gv[x] - gv[y]))
            .sum();
        acc / (2.0 * s.measure[x])
    })
}

/// Dirichlet energy `E(f,g)` as the direct double sum over edges.
///
/// Agrees exactly (to round-off) with `<-L f, g>_m` and with the integral of
/// the carre du champ.
pub fn energy(s: &Space, f: &Field, g: &Field) -> f64 {
    let fv = f.values();
    let gv = g.values();
    s.edges()
        .iter()
        .map(|&(x, y, c)| c * (fv[x] - fv[y]) * (gv[x] - gv[y]))
        .sum()
}

/// Lipschitz constant over conductance edges: `max |f(x)-f(y)| / d(x,y)`.
pub fn lipschitz_constant(s: &Space, f: &Field) -> f64 {
    let v = f.values();
    s.edges()
        .iter()
        .map(|&(x, y, _)| (v[x] - v[y]).abs() / s.metric[(x, y)])
        .fold(0.0_f64, f64::max)
}

/// Kinds of built-in spaces.
#[derive(Clone, Debug, PartialEq)]
pub enum SpaceKind {
    /// Ring of `n` points on a circle of circumference 1.
    Cycle { n: usize },
    /// `n x n` periodic grid on the unit 2-torus.
    Torus2d { n: usize },
    /// Sierpinski-gasket graph at the given subdivision level.
    Gasket { level: usize },
    /// Load from a structured text file.
    File { path: String },
}

/// Specification for [`build_space`]: a kind plus an optional multiplier on
/// the default conductance normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    pub scaling: Option<f64>,
}

impl SpaceSpec {
    pub fn new(kind: SpaceKind) -> Self {
        Self { kind, scaling: None }
    }

    pub fn with_scaling(kind: SpaceKind, scaling: f64) -> Self {
        Self { kind, scaling: Some(scaling) }
    }
}

/// Builds one of the concrete space families.
///
/// Lattice conductances are normalized so the generator is the plain
/// second-difference operator on a mesh of spacing 1/n (c = n^(2-D) per edge
/// in dimension D); the gasket uses unit conductances. `spec.scaling`
/// multiplies that default.
pub fn build_space(spec: &SpaceSpec) -> Result<Space> {
    let scale = spec.scaling.unwrap_or(1.0);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CoreError::InvalidArgument(format!(
            "conductance scaling must be positive, got {scale}"
        )));
    }
    match &spec.kind {
        SpaceKind::Cycle { n } => build_cycle(*n, scale),
        SpaceKind::Torus2d { n } => build_torus2d(*n, scale),
        SpaceKind::Gasket { level } => build_gasket(*level, scale),
        SpaceKind::File { path } => {
            let space = crate::io::load_space(path)?;
            let report = validate_space(&space);
            if report.is_valid() {
                Ok(space)
            } else {
                Err(CoreError::InvalidSpace(report.violations.join("; ")))
            }
        }
    }
}

fn build_cycle(n: usize, scale: f64) -> Result<Space> {
    if n < 3 {
        return Err(CoreError::InvalidArgument(format!("cycle needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let points: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let radius = 1.0 / (2.0 * std::f64::consts::PI);
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / nf;
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect();
    let measure = vec![1.0 / nf; n];
    let c_edge = scale * nf;
    let mut conductance = DMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        conductance[(i, j)] = c_edge;
        conductance[(j, i)] = c_edge;
    }
    // shortest path along the ring, edge length 1/n
    let metric = DMatrix::from_fn(n, n, |i, j| {
        let k = (i as i64 - j as i64).unsigned_abs() as usize;
        let hops = k.min(n - k) as f64;
        hops / nf
    });
    Space::new(points, Some(coords), metric, measure, conductance)
}

fn build_torus2d(n: usize, scale: f64) -> Result<Space> {
    if n < 3 {
        return Err(CoreError::InvalidArgument(format!("torus2d needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let count = n * n;
    let idx = |i: usize, j: usize| i * n + j;
    let points: Vec<String> = (0..n)
        .flat_map(|i| (0..n).map(move |j| format!("{i},{j}")))
        .collect();
    let coords: Vec<[f64; 2]> = (0..n)
        .flat_map(|i| (0..n).map(move |j| [i as f64 / nf, j as f64 / nf]))
        .collect();
    let measure = vec![1.0 / (nf * nf); count];
    let c_edge = scale; // n^(2-D) with D = 2
    let mut conductance = DMatrix::zeros(count, count);
    for i in 0..n {
        for j in 0..n {
            let a = idx(i, j);
            for (ni, nj) in [((i + 1) % n, j), (i, (j + 1) % n)] {
                let b = idx(ni, nj);
                conductance[(a, b)] = c_edge;
                conductance[(b, a)] = c_edge;
            }
        }
    }
    let ring = |a: usize, b: usize| {
        let k = (a as i64 - b as i64).unsigned_abs() as usize;
        k.min(n - k) as f64
    };
    let metric = DMatrix::from_fn(count, count, |a, b| {
        let (ai, aj) = (a / n, a % n);
        let (bi, bj) = (b / n, b % n);
        (ring(ai, bi) + ring(aj, bj)) / nf
    });
    Space::new(points, Some(coords), metric, measure, conductance)
}

/// Sierpinski-gasket graph. Level 0 is a triangle; each level subdivides
/// every small triangle into three. Vertices 3(3^L+1)/2, edges 3^(L+1).
fn build_gasket(level: usize, scale: f64) -> Result<Space> {
    if level > 9 {
        return Err(CoreError::InvalidArgument(format!(
            "gasket level {level} too large for a dense representation"
        )));
    }
    // integer coordinates in the basis {(1,0), (1/2, sqrt(3)/2)} scaled by 2^level
    let denom = 1i64 << level;
    type P = (i64, i64);
    let mut triangles: Vec<(P, P, P)> = vec![((0, 0), (denom, 0), (0, denom))];
    for _ in 0..level {
        let mut next = Vec::with_capacity(triangles.len() * 3);
        for &(a, b, c) in &triangles {
            let mab = ((a.0 + b.0) / 2, (a.1 + b.1) / 2);
            let mac = ((a.0 + c.0) / 2, (a.1 + c.1) / 2);
            let mbc = ((b.0 + c.0) / 2, (b.1 + c.1) / 2);
            next.push((a, mab, mac));
            next.push((mab, b, mbc));
            next.push((mac, mbc, c));
        }
        triangles = next;
    }

    let mut keys: Vec<P> = triangles
        .iter()
        .flat_map(|&(a, b, c)| [a, b, c])
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let index: HashMap<P, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let n = keys.len();

    let mut conductance = DMatrix::zeros(n, n);
    for &(a, b, c) in &triangles {
        for (u, v) in [(a, b), (a, c), (b, c)] {
            let (i, j) = (index[&u], index[&v]);
            conductance[(i, j)] = scale;
            conductance[(j, i)] = scale;
        }
    }

    let points: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let coords: Vec<[f64; 2]> = keys
        .iter()
        .map(|&(a, b)| {
            let x = a as f64 / denom as f64 + 0.5 * b as f64 / denom as f64;
            let y = 3f64.sqrt() / 2.0 * b as f64 / denom as f64;
            [x, y]
        })
        .collect();
    let measure = vec![1.0 / n as f64; n];
    // graph distance with edge length 2^-level, so the outer triangle keeps unit side
    let metric = shortest_path_metric(&conductance, 1.0 / denom as f64)?;
    Space::new(points, Some(coords), metric, measure, conductance)
}

/// All-pairs hop distance scaled by a common edge length (BFS per source).
pub fn shortest_path_metric(conductance: &DMatrix<f64>, edge_len: f64) -> Result<DMatrix<f64>> {
    let n = conductance.nrows();
    let mut metric = DMatrix::zeros(n, n);
    let mut queue = std::collections::VecDeque::new();
    for src in 0..n {
        let mut hops = vec![usize::MAX; n];
        hops[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(x) = queue.pop_front() {
            for y in 0..n {
                if y != x && conductance[(x, y)] > 0.0 && hops[y] == usize::MAX {
                    hops[y] = hops[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        for y in 0..n {
            if hops[y] == usize::MAX {
                return Err(CoreError::InvalidSpace(
                    "conductance graph not connected".into(),
                ));
            }
            metric[(src, y)] = hops[y] as f64 * edge_len;
        }
    }
    Ok(metric)
}

/// Random connected graph with uniform-ish random conductances and measure,
/// deterministic in the seed. Used by identity studies and tests.
pub fn random_connected_space(n: usize, seed: u64) -> Result<Space> {
    if n < 2 {
        return Err(CoreError::InvalidArgument("need n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ((2.0 * (n as f64).ln()) / n as f64).min(1.0);
    for _attempt in 0..200 {
        let mut conductance = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in (x + 1)..n {
                if rng.gen::<f64>() < p {
                    let c = rng.gen_range(0.5..1.5);
                    conductance[(x, y)] = c;
                    conductance[(y, x)] = c;
                }
            }
        }
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let measure: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if let Ok(metric) = shortest_path_metric(&conductance, 1.0) {
            let points = (0..n).map(|i| i.to_string()).collect();
            return Space::new(points, None, metric, measure, conductance);
        }
    }
    Err(CoreError::InvalidArgument(format!(
        "could not draw a connected graph on {n} points"
    )))
}

/// Hand-checkable two-point space: m = (1/2, 1/2), one unit edge, d(0,1) = 1.
pub fn two_point_space() -> Space {
    let conductance = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let metric = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    Space::new(
        vec!["0".into(), "1".into()],
        None,
        metric,
        vec![0.5, 0.5],
        conductance,
    )
    .expect("two-point space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Field {
        Field::from_fn(n, |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn two_point_generator_by_hand() {
        let s = two_point_space();
        let f = Field::new(vec![0.0, 1.0]).unwrap();
        let lf = generator_apply(&s, &f);
        assert_abs_diff_eq!(lf.get(0), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(lf.get(1), -2.0, epsilon = 1e-14);
    }

    #[test]
    fn two_point_carre_du_champ_by_hand() {
        let s = two_point_space();
        let f = Field::new(vec![0.0, 1.0]).unwrap();
        let g = carre_du_champ(&s, &f, &f);
        assert_abs_diff_eq!(g.get(0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.get(1), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn two_point_energy_three_ways() {
        let s = two_point_space();
        let f = Field::new(vec![0.0, 1.0]).unwrap();
        let e = energy(&s, &f, &f);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-14);
        let minus_lf = generator_apply(&s, &f).scale(-1.0);
        assert_abs_diff_eq!(minus_lf.dot_m(&f, s.measure()), e, epsilon = 1e-14);
        let gamma_mass: f64 = carre_du_champ(&s, &f, &f)
            .values()
            .iter()
            .zip(s.measure())
            .map(|(&g, &m)| g * m)
            .sum();
        assert_abs_diff_eq!(gamma_mass, e, epsilon = 1e-14);
    }

    #[test]
    fn constants_are_harmonic() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 12 })).unwrap();
        let f = Field::constant(12, 3.7);
        assert_eq!(generator_apply(&s, &f).sup_norm(), 0.0);
        let g = Field::from_fn(12, |x| (x as f64).sin());
        assert_eq!(carre_du_champ(&s, &f, &g).sup_norm(), 0.0);
        assert_eq!(energy(&s, &f, &g), 0.0);
    }

    #[test]
    fn cycle_four_shape() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 4 })).unwrap();
        assert_eq!(s.n(), 4);
        for x in 0..4 {
            assert_abs_diff_eq!(s.measure()[x], 0.25, epsilon = 1e-15);
            assert_eq!(s.neighbors(x).len(), 2);
        }
    }

    #[test]
    fn cycle_sine_is_an_eigenvector() {
        // oracle: direct evaluation of the three-point second difference on
        // sin(2 pi x / n) gives eigenvalue 2 n^2 (1 - cos(2 pi / n))
        let n = 16;
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n })).unwrap();
        let f = Field::from_fn(n, |x| (2.0 * std::f64::consts::PI * x as f64 / n as f64).sin());
        let lf = generator_apply(&s, &f);
        let nf = n as f64;
        let lambda = 2.0 * nf * nf * (1.0 - (2.0 * std::f64::consts::PI / nf).cos());
        for x in 0..n {
            assert_abs_diff_eq!(lf.get(x), -lambda * f.get(x), epsilon = 1e-9);
        }
        // the eigenvalue approaches (2 pi)^2 from below as n grows
        assert!(lambda < 4.0 * std::f64::consts::PI.powi(2));
        assert!((lambda - 4.0 * std::f64::consts::PI.powi(2)).abs() < 1.0);
    }

    #[test]
    fn gasket_small_levels() {
        let g1 = build_space(&SpaceSpec::new(SpaceKind::Gasket { level: 1 })).unwrap();
        assert_eq!(g1.n(), 6);
        assert_eq!(g1.edges().len(), 9);
        let g2 = build_space(&SpaceSpec::new(SpaceKind::Gasket { level: 2 })).unwrap();
        assert_eq!(g2.n(), 15);
        assert_eq!(g2.edges().len(), 27);
    }

    #[test]
    fn torus_shape() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Torus2d { n: 4 })).unwrap();
        assert_eq!(s.n(), 16);
        for x in 0..16 {
            assert_eq!(s.neighbors(x).len(), 4);
        }
    }

    #[test]
    fn validate_flags_bad_measure_and_asymmetry() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 8 })).unwrap();
        assert!(validate_space(&s).is_valid());

        let doubled = Space::new_unchecked(
            s.points().to_vec(),
            None,
            s.metric().clone(),
            s.measure().iter().map(|m| 2.0 * m).collect(),
            s.conductance().clone(),
        );
        let report = validate_space(&doubled);
        assert!(report.violations.iter().any(|v| v.contains("measure not normalized")));

        let mut c = s.conductance().clone();
        c[(0, 1)] += 0.5;
        let askew = Space::new_unchecked(
            s.points().to_vec(),
            None,
            s.metric().clone(),
            s.measure().to_vec(),
            c,
        );
        let report = validate_space(&askew);
        assert!(report.violations.iter().any(|v| v.contains("conductance not symmetric")));
    }

    #[test]
    fn integration_by_parts_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for space in [
            build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 16 })).unwrap(),
            random_connected_space(20, 3).unwrap(),
        ] {
            for _ in 0..50 {
                let f = random_field(space.n(), &mut rng);
                let g = random_field(space.n(), &mut rng);
                let e = energy(&space, &f, &g);
                let via_gen = generator_apply(&space, &f).scale(-1.0).dot_m(&g, space.measure());
                let via_gamma: f64 = carre_du_champ(&space, &f, &g)
                    .values()
                    .iter()
                    .zip(space.measure())
                    .map(|(&v, &m)| v * m)
                    .sum();
                let tol = 1e-10 * (1.0 + e.abs());
                assert!((via_gen - e).abs() <= tol, "generator route: {via_gen} vs {e}");
                assert!((via_gamma - e).abs() <= tol, "gamma route: {via_gamma} vs {e}");
            }
        }
    }

    #[test]
    fn discrete_leibniz_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_connected_space(24, 5).unwrap();
        for _ in 0..50 {
            let a = random_field(s.n(), &mut rng);
            let b = random_field(s.n(), &mut rng);
            let lhs = generator_apply(&s, &a.mul(&b));
            let rhs = a
                .mul(&generator_apply(&s, &b))
                .add(&b.mul(&generator_apply(&s, &a)))
                .add(&carre_du_champ(&s, &a, &b).scale(2.0));
            let scale = 1.0 + lhs.sup_norm();
            assert!(lhs.sub(&rhs).sup_norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn pointwise_cauchy_schwarz() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = build_space(&SpaceSpec::new(SpaceKind::Gasket { level: 2 })).unwrap();
        for _ in 0..50 {
            let f = random_field(s.n(), &mut rng);
            let g = random_field(s.n(), &mut rng);
            let gfg = carre_du_champ(&s, &f, &g);
            let gff = carre_du_champ(&s, &f, &f);
            let ggg = carre_du_champ(&s, &g, &g);
            for x in 0..s.n() {
                assert!(gfg.get(x).abs() <= (gff.get(x) * ggg.get(x)).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn markovian_contraction_under_clamps() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 10 })).unwrap();
        let clamps: Vec<(&str, fn(f64) -> f64)> = vec![
            ("unit clamp", |r| r.clamp(0.0, 1.0)),
            ("abs", f64::abs),
            ("soft threshold", |r| r.signum() * (r.abs() - 0.3).max(0.0)),
            ("tanh", f64::tanh),
            ("cap", |r| r.min(0.7)),
        ];
        for _ in 0..40 {
            let f = random_field(s.n(), &mut rng);
            let before = energy(&s, &f, &f);
            for (name, eta) in &clamps {
                let after = energy(&s, &f.map(eta), &f.map(eta));
                assert!(after <= before + 1e-12 * (1.0 + before), "{name}");
            }
        }
    }

    #[test]
    fn lipschitz_constant_two_point() {
        let s = two_point_space();
        let f = Field::new(vec![0.2, 0.9]).unwrap();
        assert_abs_diff_eq!(lipschitz_constant(&s, &f), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn random_space_is_valid_and_deterministic() {
        let a = random_connected_space(30, 42).unwrap();
        let b = random_connected_space(30, 42).unwrap();
        assert!(validate_space(&a).is_valid());
        assert_eq!(a.conductance(), b.conductance());
        assert_eq!(a.measure(), b.measure());
    }
}
