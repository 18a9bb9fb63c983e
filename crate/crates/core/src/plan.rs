//! Probe ordering and DMIS program generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::decomposition::DeviationField;
use crate::error::{Error, Result};
use crate::geometry::{distance, Geometry, GeometryKind, GeometryParams, Point3, SampleSet};

pub const DEFAULT_MAX_PASSES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TourMethod {
    AsGiven,
    NearestNeighbor,
    #[default]
    #[serde(rename = "nn_plus_2opt")]
    NnPlus2opt,
}

/// Visiting order of a point list, as an open path.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
    pub method: TourMethod,
    /// False when 2-opt stopped on the pass limit rather than a local optimum.
    pub converged: bool,
}

pub fn path_length(points: &[Point3], order: &[usize]) -> f64 {
    order
        .windows(2)
        .map(|w| distance(&points[w[0]], &points[w[1]]))
        .sum()
}

/// Greedy open path from point 0; ties go to the lower index.
pub fn nearest_neighbor_order(points: &[Point3]) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    order.push(0);
    for _ in 1..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for (j, seen) in visited.iter().enumerate() {
            if *seen {
                continue;
            }
            let d = distance(&points[cur], &points[j]);
            if d < best.0 {
                best = (d, j);
            }
        }
        cur = best.1;
        visited[cur] = true;
        order.push(cur);
    }
    order
}

/// First-improvement 2-opt on an open path. Returns whether a local optimum
/// was reached within `max_passes`.
pub fn two_opt(points: &[Point3], order: &mut [usize], max_passes: usize) -> bool {
    let n = order.len();
    if n < 3 {
        return true;
    }
    let d = |a: usize, b: usize| distance(&points[a], &points[b]);
    for _ in 0..max_passes {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (mut before, mut after) = (0.0, 0.0);
                if i > 0 {
                    before += d(order[i - 1], order[i]);
                    after += d(order[i - 1], order[j]);
                }
                if j + 1 < n {
                    before += d(order[j], order[j + 1]);
                    after += d(order[i], order[j + 1]);
                }
                if after < before - 1e-12 * before {
                    order[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            return true;
        }
    }
    false
}

pub fn order_tour(points: &[Point3], method: TourMethod, max_passes: usize) -> Result<Tour> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no points to order".into()));
    }
    let mut converged = true;
    let order = match method {
        TourMethod::AsGiven => (0..points.len()).collect(),
        TourMethod::NearestNeighbor => nearest_neighbor_order(points),
        TourMethod::NnPlus2opt => {
            let mut order = nearest_neighbor_order(points);
            converged = two_opt(points, &mut order, max_passes);
            if !converged {
                log::warn!("2-opt stopped after {max_passes} passes without reaching a local optimum");
            }
            order
        }
    };
    Ok(Tour {
        length: path_length(points, &order),
        order,
        method,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub node: usize,
    pub position: Point3,
    /// Unit probing direction, the inward normal.
    pub approach: Point3,
}

/// Nominal feature the program declares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Feature {
    Sphere { center: Point3, diameter: f64 },
    Curve { origin: Point3, plane_normal: Point3 },
}

impl Feature {
    pub fn of(geometry: &Geometry) -> Feature {
        match (geometry.kind(), geometry.params()) {
            (GeometryKind::SphericalCap, GeometryParams::SphericalCap { radius, .. }) => {
                Feature::Sphere {
                    center: geometry.reference_point(),
                    diameter: 2.0 * radius,
                }
            }
            _ => Feature::Curve {
                origin: geometry.nodes()[0],
                plane_normal: [0.0, 1.0, 0.0],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub geometry_ref: String,
    pub node_count: usize,
    pub feature: Feature,
    pub ordered_points: Vec<ProbePoint>,
    /// Open-path length through `ordered_points`, mm.
    pub tour_length: f64,
    pub method: TourMethod,
}

impl MeasurementPlan {
    pub fn node_indices(&self) -> Vec<usize> {
        self.ordered_points.iter().map(|p| p.node).collect()
    }

    pub fn sample(&self) -> Result<SampleSet> {
        SampleSet::new(self.geometry_ref.clone(), self.node_count, self.node_indices())
    }
}

/// Orders the sampled nodes of `geometry` into a probing plan.
pub fn build_plan(
    geometry: &Geometry,
    sample: &SampleSet,
    method: TourMethod,
    max_passes: usize,
) -> Result<MeasurementPlan> {
    if sample.geometry_ref != geometry.id() || sample.node_count != geometry.node_count() {
        return Err(Error::InvalidInput(format!(
            "sample is over '{}', geometry is '{}'",
            sample.geometry_ref,
            geometry.id()
        )));
    }
    let idx = sample.indices();
    let points: Vec<Point3> = idx.iter().map(|&i| geometry.nodes()[i]).collect();
    let tour = order_tour(&points, method, max_passes)?;
    let ordered_points = tour
        .order
        .iter()
        .map(|&k| {
            let node = idx[k];
            let n = geometry.normals()[node];
            ProbePoint {
                node,
                position: geometry.nodes()[node],
                approach: [-n[0], -n[1], -n[2]],
            }
        })
        .collect();
    Ok(MeasurementPlan {
        geometry_ref: geometry.id(),
        node_count: geometry.node_count(),
        feature: Feature::of(geometry),
        ordered_points,
        tour_length: tour.length,
        method,
    })
}

fn fixed(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fixed(v)).collect::<Vec<_>>().join(", ")
}

fn check_feature_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 32
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "feature name '{name}' must be 1 to 32 characters of [A-Za-z0-9_-]"
        )))
    }
}

/// Renders the plan as a DMIS program.
pub fn emit_dmis(plan: &MeasurementPlan, feature_name: &str) -> Result<String> {
    check_feature_name(feature_name)?;
    if plan.ordered_points.is_empty() {
        return Err(Error::InvalidInput("plan has no points".into()));
    }
    let n = plan.ordered_points.len();
    let mut out = String::new();
    out.push_str("DMISMN/'modalform probing program', 05.0\n");
    writeln!(out, "FILNAM/'{feature_name}', 05.0").unwrap();
    let (kind, decl) = match plan.feature {
        Feature::Sphere { center, diameter } => (
            "SPHERE",
            format!("FEAT/SPHERE, INNER, CART, {}, {}", join(&center), fixed(diameter)),
        ),
        Feature::Curve {
            origin,
            plane_normal,
        } => (
            "GCURVE",
            format!("FEAT/GCURVE, CART, {}, {}", join(&origin), join(&plane_normal)),
        ),
    };
    writeln!(out, "F({feature_name})={decl}").unwrap();
    writeln!(out, "MEAS/{kind}, F({feature_name}), {n}").unwrap();
    for p in &plan.ordered_points {
        writeln!(out, "PTMEAS/CART, {}, {}", join(&p.position), join(&p.approach)).unwrap();
    }
    out.push_str("ENDMES\nENDFIL\n");
    Ok(out)
}

/// Virtual probing: the true deviation at each planned node plus Gaussian noise.
///
/// Noise is drawn in probing order. The result is indexed by node.
pub fn simulate_probing(
    plan: &MeasurementPlan,
    true_field: &DeviationField,
    noise_sigma: f64,
    seed: u64,
) -> Result<DeviationField> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    if true_field.geometry_ref() != plan.geometry_ref {
        return Err(Error::InvalidInput(format!(
            "field is over '{}', plan is over '{}'",
            true_field.geometry_ref(),
            plan.geometry_ref
        )));
    }
    let sample = plan.sample()?;
    let exact = true_field.restrict(&sample)?;
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = exact.values().to_vec();
    for p in &plan.ordered_points {
        let k = sample.indices().binary_search(&p.node).expect("node is in its own sample");
        values[k] += normal.sample(&mut rng);
    }
    DeviationField::new(sample, values)
}
