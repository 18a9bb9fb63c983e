//! Nominal geometries and measurement-point sampling.
//!
//! Two canonical shapes are supported: a straight profile treated as a planar
//! height map along +z, and a spherical cap centred at the origin around the
//! +z pole. Every node carries one scalar degree of freedom, the deviation
//! along its unit normal.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Profile1D,
    SphericalCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometryParams {
    Profile {
        length: f64,
        node_count: usize,
    },
    SphericalCap {
        radius: f64,
        half_angle: f64,
        node_count: usize,
    },
}

/// Nominal shape: nodes, outward unit normals and element connectivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRecord", into = "GeometryRecord")]
pub struct Geometry {
    kind: GeometryKind,
    params: GeometryParams,
    nodes: Vec<Point3>,
    normals: Vec<Point3>,
    elements: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GeometryRecord {
    kind: GeometryKind,
    params: GeometryParams,
    nodes: Vec<Point3>,
    normals: Vec<Point3>,
    elements: Vec<Vec<usize>>,
}

impl From<Geometry> for GeometryRecord {
    fn from(g: Geometry) -> Self {
        GeometryRecord {
            kind: g.kind,
            params: g.params,
            nodes: g.nodes,
            normals: g.normals,
            elements: g.elements,
        }
    }
}

impl TryFrom<GeometryRecord> for Geometry {
    type Error = Error;

    fn try_from(r: GeometryRecord) -> Result<Self> {
        let g = Geometry {
            kind: r.kind,
            params: r.params,
            nodes: r.nodes,
            normals: r.normals,
            elements: r.elements,
        };
        g.validate()?;
        Ok(g)
    }
}

impl Geometry {
    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn params(&self) -> GeometryParams {
        self.params
    }

    pub fn nodes(&self) -> &[Point3] {
        &self.nodes
    }

    pub fn normals(&self) -> &[Point3] {
        &self.normals
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    /// Number of nodes, i.e. degrees of freedom of a deviation field.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Stable identity derived from the construction parameters.
    pub fn id(&self) -> String {
        match self.params {
            GeometryParams::Profile { length, node_count } => {
                format!("profile(length={length:?},nodes={node_count})")
            }
            GeometryParams::SphericalCap {
                radius,
                half_angle,
                node_count,
            } => format!(
                "spherical_cap(radius={radius:?},half_angle={half_angle:?},nodes={node_count})"
            ),
        }
    }

    /// Reference point for rotations: the sphere centre or the profile centroid.
    pub fn reference_point(&self) -> Point3 {
        match self.kind {
            GeometryKind::SphericalCap => [0.0; 3],
            GeometryKind::Profile1D => {
                let n = self.nodes.len() as f64;
                let mut c = [0.0; 3];
                for p in &self.nodes {
                    for d in 0..3 {
                        c[d] += p[d];
                    }
                }
                c.map(|v| v / n)
            }
        }
    }

    /// Sum of element measures (length for profiles, area for caps).
    pub fn total_measure(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| match e.as_slice() {
                [a, b] => distance(&self.nodes[*a], &self.nodes[*b]),
                [a, b, c] => triangle_area(&self.nodes[*a], &self.nodes[*b], &self.nodes[*c]),
                _ => 0.0,
            })
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let p = self.nodes.len();
        let (min_nodes, arity) = match self.kind {
            GeometryKind::Profile1D => (2, 2),
            GeometryKind::SphericalCap => (4, 3),
        };
        if p < min_nodes {
            return Err(Error::InvalidInput(format!(
                "geometry needs at least {min_nodes} nodes, got {p}"
            )));
        }
        let declared = match self.params {
            GeometryParams::Profile { node_count, .. } => node_count,
            GeometryParams::SphericalCap { node_count, .. } => node_count,
        };
        if declared != p {
            return Err(Error::InvalidInput(format!(
                "params declare {declared} nodes but {p} are present"
            )));
        }
        if self.normals.len() != p {
            return Err(Error::InvalidInput(format!(
                "{} normals for {p} nodes",
                self.normals.len()
            )));
        }
        for (i, n) in self.normals.iter().enumerate() {
            if (norm(n) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("normal {i} is not unit length")));
            }
        }
        if let GeometryParams::SphericalCap { radius, .. } = self.params {
            for (i, x) in self.nodes.iter().enumerate() {
                if (norm(x) - radius).abs() > 1e-9 * radius {
                    return Err(Error::InvalidInput(format!("node {i} is off the sphere")));
                }
            }
        }
        let scale = self.characteristic_length();
        for (e, conn) in self.elements.iter().enumerate() {
            if conn.len() != arity || conn.iter().any(|&i| i >= p) {
                return Err(Error::InvalidInput(format!(
                    "element {e} has invalid connectivity {conn:?}"
                )));
            }
            if element_measure(&self.nodes, conn) <= 1e-12 * scale.powi(arity as i32 - 1) {
                return Err(Error::InvalidInput(format!("element {e} is degenerate")));
            }
        }
        Ok(())
    }

    fn characteristic_length(&self) -> f64 {
        match self.params {
            GeometryParams::Profile { length, .. } => length,
            GeometryParams::SphericalCap { radius, .. } => radius,
        }
    }
}

pub(crate) fn element_measure(nodes: &[Point3], conn: &[usize]) -> f64 {
    match conn {
        [a, b] => distance(&nodes[*a], &nodes[*b]),
        [a, b, c] => triangle_area(&nodes[*a], &nodes[*b], &nodes[*c]),
        _ => 0.0,
    }
}

/// Equally spaced profile on the x-axis, normals +z.
pub fn build_profile(length: f64, node_count: usize) -> Result<Geometry> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "profile length must be positive, got {length}"
        )));
    }
    if node_count < 2 {
        return Err(Error::InvalidParameter(format!(
            "profile needs at least 2 nodes, got {node_count}"
        )));
    }
    let step = length / (node_count - 1) as f64;
    let nodes: Vec<Point3> = (0..node_count)
        .map(|i| {
            let x = if i == node_count - 1 { length } else { i as f64 * step };
            [x, 0.0, 0.0]
        })
        .collect();
    let normals = vec![[0.0, 0.0, 1.0]; node_count];
    let elements = (0..node_count - 1).map(|i| vec![i, i + 1]).collect();
    let g = Geometry {
        kind: GeometryKind::Profile1D,
        params: GeometryParams::Profile { length, node_count },
        nodes,
        normals,
        elements,
    };
    g.validate()?;
    Ok(g)
}

/// Spherical cap of the given radius and half-angle, centred at the origin
/// around +z, sampled by a Fibonacci spiral restricted to the cap.
///
/// Heights are equally spaced in z (equal-area bands) and azimuths advance by
/// the golden angle. Triangles come from a Delaunay triangulation of the
/// azimuthal-equidistant projection `(theta cos phi, theta sin phi)`.
pub fn build_spherical_cap(radius: f64, half_angle: f64, node_count: usize) -> Result<Geometry> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cap radius must be positive, got {radius}"
        )));
    }
    if !(half_angle > 0.0 && half_angle <= PI / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "cap half-angle must lie in (0, pi/2], got {half_angle}"
        )));
    }
    if node_count < 4 {
        return Err(Error::InvalidParameter(format!(
            "cap needs at least 4 nodes, got {node_count}"
        )));
    }

    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let band = 1.0 - half_angle.cos();
    let mut nodes = Vec::with_capacity(node_count);
    let mut normals = Vec::with_capacity(node_count);
    let mut planar = Vec::with_capacity(node_count);
    for i in 0..node_count {
        let z = 1.0 - (i as f64 + 0.5) / node_count as f64 * band;
        let theta = z.clamp(-1.0, 1.0).acos();
        let phi = (i as f64 * golden_angle) % (2.0 * PI);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let dir = [st * cp, st * sp, ct];
        let len = norm(&dir);
        let n = dir.map(|v| v / len);
        nodes.push(n.map(|v| v * radius));
        normals.push(n);
        planar.push(delaunator::Point {
            x: theta * cp,
            y: theta * sp,
        });
    }

    let tri = delaunator::triangulate(&planar);
    let mut elements = Vec::with_capacity(tri.triangles.len() / 3);
    for t in tri.triangles.chunks_exact(3) {
        let (a, b, c) = (t[0], t[1], t[2]);
        // orient so that the triangle normal agrees with the outward normal
        let cross = cross(&sub(&nodes[b], &nodes[a]), &sub(&nodes[c], &nodes[a]));
        let centroid = add(&add(&nodes[a], &nodes[b]), &nodes[c]);
        if dot(&cross, &centroid) >= 0.0 {
            elements.push(vec![a, b, c]);
        } else {
            elements.push(vec![a, c, b]);
        }
    }

    let g = Geometry {
        kind: GeometryKind::SphericalCap,
        params: GeometryParams::SphericalCap {
            radius,
            half_angle,
            node_count,
        },
        nodes,
        normals,
        elements,
    };
    g.validate()?;
    Ok(g)
}

/// Sorted subset of node indices of a geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub geometry_ref: String,
    /// Node count of the parent geometry.
    pub node_count: usize,
    indices: Vec<usize>,
}

impl SampleSet {
    pub fn new(geometry_ref: String, node_count: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("sample indices must be unique".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= node_count {
                return Err(Error::InvalidInput(format!(
                    "sample index {last} out of range for {node_count} nodes"
                )));
            }
        }
        Ok(SampleSet {
            geometry_ref,
            node_count,
            indices,
        })
    }

    /// Every node of the geometry.
    pub fn full(geometry: &Geometry) -> Self {
        SampleSet {
            geometry_ref: geometry.id(),
            node_count: geometry.node_count(),
            indices: (0..geometry.node_count()).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.node_count
    }
}

/// Farthest-point subsample of `q` nodes.
///
/// The first node is `seed % p`; each next node maximises its Euclidean
/// distance to the nodes already chosen, ties going to the lower index.
pub fn uniform_subsample(geometry: &Geometry, q: usize, seed: u64) -> Result<SampleSet> {
    let p = geometry.node_count();
    if q == 0 || q > p {
        return Err(Error::InvalidParameter(format!(
            "sample size {q} outside 1..={p}"
        )));
    }
    if q == p {
        return Ok(SampleSet::full(geometry));
    }
    let nodes = geometry.nodes();
    let start = (seed % p as u64) as usize;
    let mut chosen = Vec::with_capacity(q);
    let mut gap = vec![f64::INFINITY; p];
    let mut next = start;
    for _ in 0..q {
        chosen.push(next);
        gap[next] = f64::NEG_INFINITY;
        let picked = nodes[next];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, g) in gap.iter_mut().enumerate() {
            if *g == f64::NEG_INFINITY {
                continue;
            }
            let d = distance(&nodes[i], &picked);
            if d < *g {
                *g = d;
            }
            if *g > best.0 {
                best = (*g, i);
            }
        }
        next = best.1;
    }
    SampleSet::new(geometry.id(), p, chosen)
}

/// Farthest-point subsample starting from a node drawn from `rng`.
pub fn random_start_subsample<R: Rng>(geometry: &Geometry, q: usize, rng: &mut R) -> Result<SampleSet> {
    let start = rng.gen_range(0..geometry.node_count()) as u64;
    uniform_subsample(geometry, q, start)
}

/// Convenience wrapper: seeded farthest-point subsample with a random start.
pub fn seeded_subsample(geometry: &Geometry, q: usize, seed: u64) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_start_subsample(geometry, q, &mut rng)
}

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    norm(&sub(a, b))
}

pub(crate) fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * norm(&cross(&sub(b, a), &sub(c, a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_profile() {
        let g = build_profile(1.0, 2).unwrap();
        assert_eq!(g.nodes(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(g.elements(), &[vec![0, 1]]);
    }

    #[test]
    fn profile_spacing_and_midpoint() {
        let g = build_profile(10.0, 250).unwrap();
        assert_eq!(g.node_count(), 250);
        let step = 10.0 / 249.0;
        for w in g.nodes().windows(2) {
            assert!((w[1][0] - w[0][0] - step).abs() < 1e-12);
        }
        let g = build_profile(2.0, 3).unwrap();
        assert_eq!(g.nodes()[1], [1.0, 0.0, 0.0]);
        assert!(g.normals().iter().all(|n| *n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(build_profile(0.0, 5), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_profile(1.0, 1), Err(Error::InvalidParameter(_))));
        assert!(build_spherical_cap(-1.0, 1.0, 10).is_err());
        assert!(build_spherical_cap(1.0, 0.0, 10).is_err());
        assert!(build_spherical_cap(1.0, 1.6, 10).is_err());
        assert!(build_spherical_cap(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn hemisphere_nodes_on_sphere_with_radial_normals() {
        let r = 2.5;
        let g = build_spherical_cap(r, PI / 2.0, 321).unwrap();
        assert_eq!(g.node_count(), 321);
        for (x, n) in g.nodes().iter().zip(g.normals()) {
            assert!((norm(x) - r).abs() <= 1e-9 * r);
            assert!((norm(n) - 1.0).abs() <= 1e-12);
            for d in 0..3 {
                assert!((n[d] - x[d] / r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hemisphere_nearest_neighbour_spread() {
        let g = build_spherical_cap(1.0, PI / 2.0, 321).unwrap();
        let nodes = g.nodes();
        let nn: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| distance(a, b))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        let var = nn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / nn.len() as f64;
        assert!(var.sqrt() / mean < 0.25, "cv = {}", var.sqrt() / mean);
    }

    #[test]
    fn cap_mesh_area_close_to_analytic() {
        for (r, alpha, p) in [(1.0, PI / 2.0, 321), (3.0, 1.0, 400), (1.0, 0.4, 300)] {
            let g = build_spherical_cap(r, alpha, p).unwrap();
            let exact = 2.0 * PI * r * r * (1.0 - f64::cos(alpha));
            let rel = (g.total_measure() - exact).abs() / exact;
            assert!(rel < 0.05, "r={r} alpha={alpha}: rel err {rel}");
        }
    }

    #[test]
    fn construction_is_bit_identical() {
        let a = build_spherical_cap(1.0, 1.2, 200).unwrap();
        let b = build_spherical_cap(1.0, 1.2, 200).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_subsample_and_endpoints() {
        let g = build_profile(10.0, 250).unwrap();
        let s = uniform_subsample(&g, 250, 17).unwrap();
        assert_eq!(s.indices(), (0..250).collect::<Vec<_>>().as_slice());
        let s = uniform_subsample(&g, 2, 0).unwrap();
        assert_eq!(s.indices(), &[0, 249]);
        assert!(uniform_subsample(&g, 0, 0).is_err());
        assert!(uniform_subsample(&g, 251, 0).is_err());
    }

    #[test]
    fn farthest_point_gap_bound() {
        let g = build_profile(10.0, 250).unwrap();
        let q = 15;
        for seed in 0..250 {
            let s = uniform_subsample(&g, q, seed).unwrap();
            let xs: Vec<f64> = s.indices().iter().map(|&i| g.nodes()[i][0]).collect();
            let max_gap = xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            assert!(max_gap <= 2.0 * 10.0 / (q - 1) as f64, "seed {seed}: gap {max_gap}");
            assert_eq!(s, uniform_subsample(&g, q, seed).unwrap());
        }
    }

    #[test]
    fn json_round_trip_validates() {
        let g = build_spherical_cap(1.0, 1.0, 50).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: Geometry = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["elements"][0] = serde_json::json!([0, 0, 1]);
        assert!(serde_json::from_value::<Geometry>(value).is_err());
    }
}
