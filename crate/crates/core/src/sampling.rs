//! Collocation point generation over axis-aligned boxes.
//!
//! All randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`;
//! independent streams of one seed are selected with `set_stream`, so every
//! sampler is reproducible from `(seed, stream)` alone.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid point count: {0}")]
    InvalidCount(String),
    #[error("no boundary facets selected")]
    EmptyFacets,
    #[error("facet axis {0} out of range")]
    BadFacet(usize),
}

/// Independent random stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Spatial,
    Temporal,
    Parametric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub kind: AxisKind,
}

impl Axis {
    pub fn new(name: &str, low: f64, high: f64, kind: AxisKind) -> Self {
        Axis {
            name: name.to_string(),
            low,
            high,
            kind,
        }
    }

    pub fn len(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.low && x <= self.high
    }
}

/// Axis-aligned box; `low < high` on every axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    axes: Vec<Axis>,
}

impl BoxDomain {
    pub fn new(axes: Vec<Axis>) -> Result<Self, SamplingError> {
        for a in &axes {
            if !(a.low < a.high) || !a.low.is_finite() || !a.high.is_finite() {
                return Err(SamplingError::InvalidBox(format!(
                    "axis {} has bounds [{}, {}]",
                    a.name, a.low, a.high
                )));
            }
        }
        Ok(BoxDomain { axes })
    }

    /// The zero-dimensional box, used for problems without parameters.
    pub fn empty() -> Self {
        BoxDomain { axes: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && self.axes.iter().zip(p).all(|(a, &x)| a.contains(x))
    }

    /// True when `p` lies on the facet (within `tol` of the face).
    pub fn on_facet(&self, p: &[f64], facet: Facet, tol: f64) -> bool {
        let a = &self.axes[facet.axis];
        let face = match facet.side {
            Side::Low => a.low,
            Side::High => a.high,
        };
        self.contains(p) && (p[facet.axis] - face).abs() <= tol
    }

    /// All `2 * dim` facets.
    pub fn facets(&self) -> Vec<Facet> {
        (0..self.dim())
            .flat_map(|axis| [Facet::low(axis), Facet::high(axis)])
            .collect()
    }

    /// (d-1)-dimensional measure of a facet.
    pub fn facet_measure(&self, facet: Facet) -> f64 {
        self.axes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != facet.axis)
            .map(|(_, a)| a.len())
            .product()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Facet {
    pub axis: usize,
    pub side: Side,
}

impl Facet {
    pub fn low(axis: usize) -> Self {
        Facet {
            axis,
            side: Side::Low,
        }
    }

    pub fn high(axis: usize) -> Self {
        Facet {
            axis,
            side: Side::High,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Tensor grid including the box corners.
    Grid,
    /// Tensor grid of cell centres; never touches the boundary.
    InteriorGrid,
    LatinHypercube,
    UniformRandom,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Equispaced,
    UniformRandom,
}

/// Points stored row-major, with the box and sampler that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    coords: Vec<f64>,
    dim: usize,
    pub domain: BoxDomain,
    pub sampler: SamplerKind,
    pub seed: u64,
}

impl PointSet {
    pub fn from_rows(
        domain: BoxDomain,
        rows: &[Vec<f64>],
        sampler: SamplerKind,
        seed: u64,
    ) -> Self {
        let dim = domain.dim();
        let coords = rows
            .iter()
            .inspect(|r| assert_eq!(r.len(), dim, "row width differs from box"))
            .flatten()
            .copied()
            .collect();
        PointSet {
            coords,
            dim,
            domain,
            sampler,
            seed,
        }
    }

    /// The single empty point; stands in for the parameter set of a
    /// non-parametric problem.
    pub fn singleton_empty() -> Self {
        PointSet {
            coords: Vec::new(),
            dim: 0,
            domain: BoxDomain::empty(),
            sampler: SamplerKind::Grid,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            1
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// One CSV row per point, columns named after the box axes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.domain.axes().iter().map(|a| a.name.as_str()))?;
        for p in self.iter() {
            w.write_record(p.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn linspace(low: f64, high: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (low + high)];
    }
    (0..n)
        .map(|k| {
            if k + 1 == n {
                high
            } else {
                low + (high - low) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn cell_centres(low: f64, high: f64, n: usize) -> Vec<f64> {
    let h = (high - low) / n as f64;
    (0..n).map(|k| low + (k as f64 + 0.5) * h).collect()
}

/// Tensor product of per-axis coordinate lists; the last axis varies fastest.
fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
    for values in axes {
        rows = rows
            .into_iter()
            .flat_map(|r| {
                values.iter().map(move |&v| {
                    let mut r = r.clone();
                    r.push(v);
                    r
                })
            })
            .collect();
    }
    rows
}

/// Factorizes `n` into one count per axis with the product exactly `n`,
/// choosing the split whose per-axis spacing is most uniform.
pub fn grid_shape(domain: &BoxDomain, n: usize) -> Vec<usize> {
    let d = domain.dim();
    if d == 0 {
        return Vec::new();
    }
    if d == 1 {
        return vec![n];
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack = vec![(Vec::<usize>::new(), n)];
    while let Some((prefix, rest)) = stack.pop() {
        if prefix.len() + 1 == d {
            let mut shape = prefix;
            shape.push(rest);
            let spacings: Vec<f64> = shape
                .iter()
                .zip(domain.axes())
                .map(|(&k, a)| (a.len() / k as f64).ln())
                .collect();
            let mean = spacings.iter().sum::<f64>() / d as f64;
            let spread: f64 = spacings.iter().map(|s| (s - mean).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| spread < *b - 1e-12) {
                best = Some((spread, shape));
            }
            continue;
        }
        for k in (1..=rest).rev().filter(|k| rest % k == 0) {
            let mut p = prefix.clone();
            p.push(k);
            stack.push((p, rest / k));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

/// Equispaced tensor grid including the endpoints of every axis. An axis
/// with a single point uses its midpoint.
pub fn cartesian_grid(domain: &BoxDomain, n_per_axis: &[usize]) -> Result<PointSet, SamplingError> {
    check_shape(domain, n_per_axis, 1)?;
    let axes: Vec<Vec<f64>> = domain
        .axes()
        .iter()
        .zip(n_per_axis)
        .map(|(a, &n)| linspace(a.low, a.high, n))
        .collect();
    Ok(PointSet::from_rows(
        domain.clone(),
        &tensor(&axes),
        SamplerKind::Grid,
        0,
    ))
}

/// Equispaced tensor grid of cell centres (offset by half a cell from the
/// boundary).
pub fn interior_grid(domain: &BoxDomain, n_per_axis: &[usize]) -> Result<PointSet, SamplingError> {
    check_shape(domain, n_per_axis, 1)?;
    let axes: Vec<Vec<f64>> = domain
        .axes()
        .iter()
        .zip(n_per_axis)
        .map(|(a, &n)| cell_centres(a.low, a.high, n))
        .collect();
    Ok(PointSet::from_rows(
        domain.clone(),
        &tensor(&axes),
        SamplerKind::InteriorGrid,
        0,
    ))
}

fn check_shape(domain: &BoxDomain, n: &[usize], min: usize) -> Result<(), SamplingError> {
    if n.len() != domain.dim() {
        return Err(SamplingError::InvalidCount(format!(
            "{} counts for a {}-dimensional box",
            n.len(),
            domain.dim()
        )));
    }
    if let Some(k) = n.iter().find(|&&k| k < min) {
        return Err(SamplingError::InvalidCount(format!(
            "{k} points on an axis, need at least {min}"
        )));
    }
    Ok(())
}

/// Stratified sample: projected onto any axis, exactly one point falls in
/// each of the `n` equal-width strata.
pub fn latin_hypercube(domain: &BoxDomain, n: usize, seed: u64) -> Result<PointSet, SamplingError> {
    if n == 0 {
        return Err(SamplingError::InvalidCount(
            "need at least one point".into(),
        ));
    }
    let mut rng = rng_stream(seed, 1);
    let d = domain.dim();
    let mut coords = vec![0.0; n * d];
    for (j, a) in domain.axes().iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let h = a.len() / n as f64;
        for (i, &k) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            let lo = a.low + k as f64 * h;
            // keep rounding from pushing the point into the next stratum
            let x = (lo + u * h).min(a.low + (k + 1) as f64 * h);
            coords[i * d + j] = if x >= a.low + (k + 1) as f64 * h {
                lo
            } else {
                x
            };
        }
    }
    Ok(PointSet {
        coords,
        dim: d,
        domain: domain.clone(),
        sampler: SamplerKind::LatinHypercube,
        seed,
    })
}

/// Independent uniform points in the box.
pub fn uniform_random(domain: &BoxDomain, n: usize, seed: u64) -> Result<PointSet, SamplingError> {
    if n == 0 {
        return Err(SamplingError::InvalidCount(
            "need at least one point".into(),
        ));
    }
    let mut rng = rng_stream(seed, 2);
    let coords = (0..n)
        .flat_map(|_| {
            domain
                .axes()
                .iter()
                .map(|a| a.low + rng.random::<f64>() * a.len())
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(PointSet {
        coords,
        dim: domain.dim(),
        domain: domain.clone(),
        sampler: SamplerKind::UniformRandom,
        seed,
    })
}

/// Splits `n` over weights by the largest-remainder rule.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Points on the selected facets. Counts are split in proportion to facet
/// measure; equispaced points sit at cell centres along each facet, so
/// corners are never duplicated.
pub fn boundary_sample(
    domain: &BoxDomain,
    n: usize,
    mode: BoundaryMode,
    seed: u64,
    facets: &[Facet],
) -> Result<PointSet, SamplingError> {
    if facets.is_empty() {
        return Err(SamplingError::EmptyFacets);
    }
    if n == 0 {
        return Err(SamplingError::InvalidCount(
            "need at least one point".into(),
        ));
    }
    if let Some(f) = facets.iter().find(|f| f.axis >= domain.dim()) {
        return Err(SamplingError::BadFacet(f.axis));
    }
    let measures: Vec<f64> = facets.iter().map(|&f| domain.facet_measure(f)).collect();
    let counts = apportion(n, &measures);
    let mut rng = rng_stream(seed, 3);
    let mut rows = Vec::with_capacity(n);
    for (&facet, &m) in facets.iter().zip(&counts) {
        if m == 0 {
            continue;
        }
        let face = match facet.side {
            Side::Low => domain.axes()[facet.axis].low,
            Side::High => domain.axes()[facet.axis].high,
        };
        let others: Vec<Axis> = domain
            .axes()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != facet.axis)
            .map(|(_, a)| a.clone())
            .collect();
        let sub = BoxDomain { axes: others };
        let inner: Vec<Vec<f64>> = match mode {
            BoundaryMode::Equispaced => {
                let shape = grid_shape(&sub, m);
                interior_grid(&sub, &shape)?
                    .iter()
                    .map(|p| p.to_vec())
                    .collect()
            }
            BoundaryMode::UniformRandom => (0..m)
                .map(|_| {
                    sub.axes()
                        .iter()
                        .map(|a| a.low + rng.random::<f64>() * a.len())
                        .collect()
                })
                .collect(),
        };
        for mut p in inner {
            p.insert(facet.axis, face);
            rows.push(p);
        }
    }
    let sampler = match mode {
        BoundaryMode::Equispaced => SamplerKind::Grid,
        BoundaryMode::UniformRandom => SamplerKind::UniformRandom,
    };
    Ok(PointSet::from_rows(domain.clone(), &rows, sampler, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square() -> BoxDomain {
        BoxDomain::new(vec![
            Axis::new("x0", 0.0, 1.0, AxisKind::Spatial),
            Axis::new("x1", 0.0, 1.0, AxisKind::Spatial),
        ])
        .unwrap()
    }

    fn slab() -> BoxDomain {
        BoxDomain::new(vec![
            Axis::new("x0", -1.0, 1.0, AxisKind::Spatial),
            Axis::new("t", 0.0, 1.0, AxisKind::Temporal),
        ])
        .unwrap()
    }

    #[test]
    fn box_rejects_degenerate_axes() {
        assert!(BoxDomain::new(vec![Axis::new("a", 1.0, 1.0, AxisKind::Spatial)]).is_err());
    }

    #[test]
    fn two_by_two_grid_is_the_corners() {
        let g = cartesian_grid(&unit_square(), &[2, 2]).unwrap();
        let pts: Vec<Vec<f64>> = g.iter().map(|p| p.to_vec()).collect();
        assert_eq!(
            pts,
            vec![
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0]
            ]
        );
    }

    #[test]
    fn grid_counts_and_midpoint() {
        assert_eq!(
            cartesian_grid(&unit_square(), &[10, 10]).unwrap().len(),
            100
        );
        let line = BoxDomain::new(vec![Axis::new("x", 0.0, 1.0, AxisKind::Spatial)]).unwrap();
        let g = cartesian_grid(&line, &[3]).unwrap();
        assert!(g.iter().any(|p| p[0] == 0.5));
        assert_eq!(cartesian_grid(&line, &[1]).unwrap().coords(), &[0.5]);
        assert!(cartesian_grid(&line, &[0]).is_err());
    }

    #[test]
    fn interior_grid_avoids_boundary() {
        let g = interior_grid(&unit_square(), &[10, 10]).unwrap();
        assert_eq!(g.len(), 100);
        assert!(g.iter().all(|p| p.iter().all(|&x| x > 0.0 && x < 1.0)));
    }

    #[test]
    fn latin_hypercube_is_stratified() {
        let s = latin_hypercube(&unit_square(), 4, 5).unwrap();
        for axis in 0..2 {
            let mut bins = [0; 4];
            for p in s.iter() {
                bins[(p[axis] * 4.0).floor() as usize] += 1;
            }
            assert_eq!(bins, [1, 1, 1, 1]);
        }
        assert_eq!(s, latin_hypercube(&unit_square(), 4, 5).unwrap());
    }

    #[test]
    fn large_latin_hypercube_stays_inside() {
        let s = latin_hypercube(&slab(), 8000, 1).unwrap();
        assert_eq!(s.len(), 8000);
        assert!(s.iter().all(|p| slab().contains(p)));
    }

    #[test]
    fn equispaced_boundary_on_unit_square() {
        let sq = unit_square();
        let b = boundary_sample(&sq, 40, BoundaryMode::Equispaced, 0, &sq.facets()).unwrap();
        assert_eq!(b.len(), 40);
        for f in sq.facets() {
            assert_eq!(b.iter().filter(|p| sq.on_facet(p, f, 0.0)).count(), 10);
        }
        assert!(b
            .iter()
            .all(|p| p[0].min(p[1]).min(1.0 - p[0]).min(1.0 - p[1]) == 0.0));
    }

    #[test]
    fn boundary_respects_facet_mask() {
        let d = slab();
        let facets = [Facet::low(0), Facet::high(0), Facet::low(1)];
        let b = boundary_sample(&d, 150, BoundaryMode::UniformRandom, 9, &facets).unwrap();
        assert_eq!(b.len(), 150);
        assert!(b.iter().all(|p| p[1] != 1.0));
        assert_eq!(b.iter().filter(|p| p[1] == 0.0).count(), 75);
        assert_eq!(
            b,
            boundary_sample(&d, 150, BoundaryMode::UniformRandom, 9, &facets).unwrap()
        );
        assert_eq!(
            boundary_sample(&d, 10, BoundaryMode::Equispaced, 0, &[]),
            Err(SamplingError::EmptyFacets)
        );
    }

    #[test]
    fn grid_shape_prefers_uniform_spacing() {
        assert_eq!(grid_shape(&unit_square(), 100), vec![10, 10]);
        let ocp = BoxDomain::new(vec![
            Axis::new("mu1", 0.5, 3.0, AxisKind::Parametric),
            Axis::new("mu2", 0.01, 1.0, AxisKind::Parametric),
        ])
        .unwrap();
        assert_eq!(grid_shape(&ocp, 50), vec![10, 5]);
        let shape = grid_shape(&unit_square(), 40);
        assert_eq!(shape.iter().product::<usize>(), 40);
    }

    #[test]
    fn apportion_is_exact() {
        // 37.5 / 37.5 / 75: ties go to the earlier facet
        assert_eq!(apportion(150, &[1.0, 1.0, 2.0]), vec![38, 37, 75]);
        assert_eq!(apportion(7, &[1.0, 1.0, 1.0]), vec![3, 2, 2]);
        assert_eq!(
            apportion(1800, &[2.0, 2.0, 1.0, 1.0]),
            vec![600, 600, 300, 300]
        );
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = cartesian_grid(&unit_square(), &[2, 3]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("x0,x1\n"));
    }

    proptest! {
        #[test]
        fn samplers_are_deterministic_and_inside(n in 1usize..200, seed in any::<u64>()) {
            let d = slab();
            let a = latin_hypercube(&d, n, seed).unwrap();
            prop_assert_eq!(&a, &latin_hypercube(&d, n, seed).unwrap());
            prop_assert!(a.iter().all(|p| d.contains(p)));
            let b = boundary_sample(&d, n, BoundaryMode::UniformRandom, seed, &d.facets()).unwrap();
            prop_assert_eq!(b.len(), n);
            prop_assert!(b.iter().all(|p| d.facets().iter().any(|&f| d.on_facet(p, f, 0.0))));
        }
    }
}
