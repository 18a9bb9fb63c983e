//! Structural operators on a nominal geometry and the modal basis they induce.
//!
//! Profiles use Euler-Bernoulli bending with rotations condensed out, which
//! leaves the natural-cubic-spline bending energy over nodal deflections.
//! Caps use the cotangent Laplace-Beltrami operator with mixed Voronoi areas
//! as a lumped mass. All material constants are one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, sub, triangle_area, Geometry, GeometryKind, Point3};
use crate::linalg::{self, GeneralizedEigen};

/// Stiffness and mass over one scalar normal deviation per node.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub geometry_ref: String,
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    /// `B` with `stiffness = Bᵀ B`, when the assembly provides one.
    stiffness_factor: Option<DMatrix<f64>>,
}

impl OperatorPair {
    /// Wraps user-supplied operators. Both must be square, of equal size and
    /// exactly symmetric.
    pub fn new(geometry_ref: String, stiffness: DMatrix<f64>, mass: DMatrix<f64>) -> Result<Self> {
        if !stiffness.is_square() || stiffness.shape() != mass.shape() {
            return Err(Error::InvalidInput(format!(
                "operator shapes {:?} and {:?} are incompatible",
                stiffness.shape(),
                mass.shape()
            )));
        }
        if stiffness != stiffness.transpose() || mass != mass.transpose() {
            return Err(Error::InvalidInput("operators must be symmetric".into()));
        }
        Ok(OperatorPair {
            geometry_ref,
            stiffness,
            mass,
            stiffness_factor: None,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mass.nrows()
    }

    pub fn stiffness_factor(&self) -> Option<&DMatrix<f64>> {
        self.stiffness_factor.as_ref()
    }

    /// Checks definiteness: M positive definite, K positive semidefinite.
    pub fn check_definiteness(&self) -> Result<()> {
        let m_min = nalgebra::SymmetricEigen::new(self.mass.clone())
            .eigenvalues
            .min();
        if m_min <= 0.0 {
            return Err(Error::Numerical(format!(
                "mass matrix smallest eigenvalue {m_min:.3e} is not positive"
            )));
        }
        let k_min = nalgebra::SymmetricEigen::new(self.stiffness.clone())
            .eigenvalues
            .min();
        let k_norm = self.stiffness.norm();
        if k_min < -1e-10 * k_norm {
            return Err(Error::Numerical(format!(
                "stiffness smallest eigenvalue {k_min:.3e} is negative"
            )));
        }
        Ok(())
    }
}

pub fn assemble_operators(geometry: &Geometry) -> Result<OperatorPair> {
    let (stiffness, factor, mass) = match geometry.kind() {
        GeometryKind::Profile1D => {
            let x: Vec<f64> = geometry.nodes().iter().map(|n| n[0]).collect();
            check_segments(geometry)?;
            let k = condensed_beam_stiffness(&x)?;
            let b = spline_energy_factor(&x)?;
            let m = lumped_beam_mass(&x);
            (k, b, m)
        }
        GeometryKind::SphericalCap => {
            let (k, b) = cotangent_laplacian(geometry.nodes(), geometry.elements())?;
            let m = mixed_voronoi_mass(geometry.nodes(), geometry.elements())?;
            (k, b, m)
        }
    };
    Ok(OperatorPair {
        geometry_ref: geometry.id(),
        stiffness,
        mass,
        stiffness_factor: Some(factor),
    })
}

fn check_segments(geometry: &Geometry) -> Result<()> {
    for (e, conn) in geometry.elements().iter().enumerate() {
        let (a, b) = (conn[0], conn[1]);
        let h = geometry.nodes()[b][0] - geometry.nodes()[a][0];
        if !(h > 0.0) {
            return Err(Error::Assembly {
                element: e,
                reason: format!("segment length {h} is not positive"),
            });
        }
    }
    Ok(())
}

/// Hermite beam stiffness over (deflection, rotation) pairs with the
/// rotations statically condensed out.
pub fn condensed_beam_stiffness(x: &[f64]) -> Result<DMatrix<f64>> {
    let p = x.len();
    let mut full = DMatrix::<f64>::zeros(2 * p, 2 * p);
    for e in 0..p - 1 {
        let h = x[e + 1] - x[e];
        let (h2, h3) = (h * h, h * h * h);
        let ke = [
            [12.0, 6.0 * h, -12.0, 6.0 * h],
            [6.0 * h, 4.0 * h2, -6.0 * h, 2.0 * h2],
            [-12.0, -6.0 * h, 12.0, -6.0 * h],
            [6.0 * h, 2.0 * h2, -6.0 * h, 4.0 * h2],
        ];
        let dofs = [2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3];
        for (a, &ra) in dofs.iter().enumerate() {
            for (b, &cb) in dofs.iter().enumerate() {
                full[(ra, cb)] += ke[a][b] / h3;
            }
        }
    }
    let w: Vec<usize> = (0..p).map(|i| 2 * i).collect();
    let t: Vec<usize> = (0..p).map(|i| 2 * i + 1).collect();
    let k_ww = full.select_rows(&w).select_columns(&w);
    let k_wt = full.select_rows(&w).select_columns(&t);
    let k_tt = full.select_rows(&t).select_columns(&t);
    let chol = nalgebra::Cholesky::new(k_tt)
        .ok_or_else(|| Error::Numerical("rotational stiffness is not positive definite".into()))?;
    let k = &k_ww - &k_wt * chol.solve(&k_wt.transpose());
    Ok((&k + k.transpose()) * 0.5)
}

/// Factor `B` of the natural-cubic-spline bending energy, `K = Bᵀ B`.
///
/// With second divided differences `D` and the interior moment Gram matrix
/// `R = L Lᵀ`, the condensed stiffness is `Dᵀ R⁻¹ D`, so `B = L⁻¹ D`.
pub fn spline_energy_factor(x: &[f64]) -> Result<DMatrix<f64>> {
    let p = x.len();
    if p < 3 {
        return Ok(DMatrix::zeros(0, p));
    }
    let m = p - 2;
    let mut d = DMatrix::zeros(m, p);
    let mut r = DMatrix::zeros(m, m);
    for i in 0..m {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        d[(i, i)] = 1.0 / h0;
        d[(i, i + 1)] = -(1.0 / h0 + 1.0 / h1);
        d[(i, i + 2)] = 1.0 / h1;
        r[(i, i)] = (h0 + h1) / 3.0;
        if i + 1 < m {
            r[(i, i + 1)] = h1 / 6.0;
            r[(i + 1, i)] = h1 / 6.0;
        }
    }
    let chol = nalgebra::Cholesky::new(r)
        .ok_or_else(|| Error::Numerical("spline moment matrix is not positive definite".into()))?;
    chol.l()
        .solve_lower_triangular(&d)
        .ok_or_else(|| Error::Numerical("spline moment factor is singular".into()))
}

fn lumped_beam_mass(x: &[f64]) -> DMatrix<f64> {
    let p = x.len();
    let mut m = DVector::zeros(p);
    for e in 0..p - 1 {
        let h = x[e + 1] - x[e];
        m[e] += 0.5 * h;
        m[e + 1] += 0.5 * h;
    }
    DMatrix::from_diagonal(&m)
}

fn tri_nodes<'a>(nodes: &'a [Point3], conn: &[usize]) -> [&'a Point3; 3] {
    [&nodes[conn[0]], &nodes[conn[1]], &nodes[conn[2]]]
}

fn degenerate_check(e: usize, area: f64, nodes: [&Point3; 3]) -> Result<()> {
    let scale = norm(&sub(nodes[1], nodes[0]))
        .max(norm(&sub(nodes[2], nodes[0])))
        .max(1e-300);
    if !(area > 1e-12 * scale * scale) {
        return Err(Error::Assembly {
            element: e,
            reason: format!("triangle area {area:.3e} is degenerate"),
        });
    }
    Ok(())
}

/// Cotangent Laplacian and its per-triangle gradient factor.
fn cotangent_laplacian(nodes: &[Point3], elements: &[Vec<usize>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = nodes.len();
    let mut k = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(3 * elements.len(), p);
    for (e, conn) in elements.iter().enumerate() {
        let v = tri_nodes(nodes, conn);
        let area = triangle_area(v[0], v[1], v[2]);
        degenerate_check(e, area, v)?;
        for corner in 0..3 {
            let (i, j, o) = (conn[(corner + 1) % 3], conn[(corner + 2) % 3], conn[corner]);
            let u = sub(&nodes[i], &nodes[o]);
            let w = sub(&nodes[j], &nodes[o]);
            let half_cot = 0.5 * dot(&u, &w) / norm(&cross(&u, &w));
            k[(i, j)] -= half_cot;
            k[(j, i)] -= half_cot;
            k[(i, i)] += half_cot;
            k[(j, j)] += half_cot;
        }
        // gradients of the linear hat functions; the third closes the sum to zero
        let n = cross(&sub(v[1], v[0]), &sub(v[2], v[0]));
        let unit = n.map(|c| c / norm(&n));
        let g0 = cross(&unit, &sub(v[2], v[1])).map(|c| c / (2.0 * area));
        let g1 = cross(&unit, &sub(v[0], v[2])).map(|c| c / (2.0 * area));
        let g2 = [-(g0[0] + g1[0]), -(g0[1] + g1[1]), -(g0[2] + g1[2])];
        let s = area.sqrt();
        for d in 0..3 {
            let row = 3 * e + d;
            b[(row, conn[0])] += s * g0[d];
            b[(row, conn[1])] += s * g1[d];
            b[(row, conn[2])] += s * g2[d];
        }
    }
    Ok((k, b))
}

/// Diagonal mass of mixed Voronoi areas; obtuse triangles fall back to
/// half/quarter splits so the areas still tile the mesh.
fn mixed_voronoi_mass(nodes: &[Point3], elements: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let p = nodes.len();
    let mut m = DVector::zeros(p);
    for (e, conn) in elements.iter().enumerate() {
        let v = tri_nodes(nodes, conn);
        let area = triangle_area(v[0], v[1], v[2]);
        degenerate_check(e, area, v)?;
        let angle_dot = |c: usize| {
            let a = sub(v[(c + 1) % 3], v[c]);
            let b = sub(v[(c + 2) % 3], v[c]);
            dot(&a, &b)
        };
        let obtuse = (0..3).find(|&c| angle_dot(c) < 0.0);
        for c in 0..3 {
            let share = match obtuse {
                None => {
                    let next = (c + 1) % 3;
                    let prev = (c + 2) % 3;
                    let cot = |o: usize| {
                        let a = sub(v[(o + 1) % 3], v[o]);
                        let b = sub(v[(o + 2) % 3], v[o]);
                        dot(&a, &b) / norm(&cross(&a, &b))
                    };
                    let e_prev = sub(v[prev], v[c]);
                    let e_next = sub(v[next], v[c]);
                    (dot(&e_prev, &e_prev) * cot(next) + dot(&e_next, &e_next) * cot(prev)) / 8.0
                }
                Some(o) if o == c => area / 2.0,
                Some(_) => area / 4.0,
            };
            m[conn[c]] += share;
        }
    }
    if let Some(i) = m.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::Numerical(format!("node {i} has no mass")));
    }
    Ok(DMatrix::from_diagonal(&m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    Rigid,
    Size,
    Natural,
}

impl ModeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeClass::Rigid => "rigid",
            ModeClass::Size => "size",
            ModeClass::Natural => "natural",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Euclidean,
    Infinity,
}

impl NormKind {
    pub fn of(&self, v: &[f64]) -> f64 {
        match self {
            NormKind::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Infinity => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        }
    }
}

/// Ordered modal basis: one column per mode shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRecord", into = "BasisRecord")]
pub struct ModalBasis {
    geometry_ref: String,
    modes: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    mode_class: Vec<ModeClass>,
    norm_kind: NormKind,
    /// Divisor applied to each column relative to the raw field it came from,
    /// accumulated over renormalisations.
    inf_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisRecord {
    geometry_ref: String,
    norm_kind: NormKind,
    eigenvalues: Vec<f64>,
    mode_class: Vec<ModeClass>,
    inf_norms: Vec<f64>,
    modes: Vec<Vec<f64>>,
}

impl From<ModalBasis> for BasisRecord {
    fn from(b: ModalBasis) -> Self {
        let modes = b
            .modes
            .row_iter()
            .map(|r| r.iter().cloned().collect())
            .collect();
        BasisRecord {
            geometry_ref: b.geometry_ref,
            norm_kind: b.norm_kind,
            eigenvalues: b.eigenvalues,
            mode_class: b.mode_class,
            inf_norms: b.inf_norms,
            modes,
        }
    }
}

impl TryFrom<BasisRecord> for ModalBasis {
    type Error = Error;

    fn try_from(r: BasisRecord) -> Result<Self> {
        let p = r.modes.len();
        let n = r.modes.first().map_or(0, Vec::len);
        if r.modes.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidBasis("ragged mode matrix".into()));
        }
        let flat: Vec<f64> = r.modes.into_iter().flatten().collect();
        let modes = DMatrix::from_row_slice(p, n, &flat);
        ModalBasis::from_parts(
            r.geometry_ref,
            modes,
            r.eigenvalues,
            r.mode_class,
            r.norm_kind,
            r.inf_norms,
        )
    }
}

impl ModalBasis {
    /// Assembles a basis from its parts, checking every invariant.
    pub fn from_parts(
        geometry_ref: String,
        modes: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        mode_class: Vec<ModeClass>,
        norm_kind: NormKind,
        inf_norms: Vec<f64>,
    ) -> Result<Self> {
        let b = ModalBasis {
            geometry_ref,
            modes,
            eigenvalues,
            mode_class,
            norm_kind,
            inf_norms,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let (p, n) = self.modes.shape();
        if n == 0 {
            return Err(Error::InvalidBasis("basis has no modes".into()));
        }
        if n > p {
            return Err(Error::InvalidBasis(format!("{n} modes exceed {p} nodes")));
        }
        if self.eigenvalues.len() != n || self.mode_class.len() != n || self.inf_norms.len() != n {
            return Err(Error::InvalidBasis("per-mode metadata length mismatch".into()));
        }
        if self.modes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBasis("non-finite mode entry".into()));
        }
        let top = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if self
            .eigenvalues
            .windows(2)
            .any(|w| w[1] < w[0] - 1e-8 * top.max(f64::MIN_POSITIVE))
        {
            return Err(Error::InvalidBasis("eigenvalues are not ascending".into()));
        }
        for j in 0..n {
            let col = self.modes.column(j);
            let nrm = self.norm_kind.of(col.as_slice());
            if (nrm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidBasis(format!(
                    "mode {j} has {:?} norm {nrm}",
                    self.norm_kind
                )));
            }
        }
        let sv = nalgebra::SVD::new(self.modes.clone(), false, false).singular_values;
        let max = sv.max();
        let min = sv.min();
        if !(min > 1e-10 * max) {
            return Err(Error::InvalidBasis(format!(
                "modes are linearly dependent (singular values {min:.3e} / {max:.3e})"
            )));
        }
        Ok(())
    }

    pub fn geometry_ref(&self) -> &str {
        &self.geometry_ref
    }

    /// Identity of this basis: geometry, size, class make-up and norm.
    pub fn basis_ref(&self) -> String {
        let count = |c| self.mode_class.iter().filter(|&&m| m == c).count();
        format!(
            "{}|modes={}|rigid={}|size={}|norm={}",
            self.geometry_ref,
            self.mode_count(),
            count(ModeClass::Rigid),
            count(ModeClass::Size),
            match self.norm_kind {
                NormKind::Euclidean => "euclidean",
                NormKind::Infinity => "infinity",
            }
        )
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> DVector<f64> {
        self.modes.column(i).into_owned()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode_class(&self) -> &[ModeClass] {
        &self.mode_class
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn inf_norms(&self) -> &[f64] {
        &self.inf_norms
    }

    pub fn node_count(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.ncols()
    }

    /// Keeps only the leading `n` modes.
    pub fn truncated(&self, n: usize) -> Result<ModalBasis> {
        if n == 0 || n > self.mode_count() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate {} modes to {n}",
                self.mode_count()
            )));
        }
        Ok(ModalBasis {
            geometry_ref: self.geometry_ref.clone(),
            modes: self.modes.columns(0, n).into_owned(),
            eigenvalues: self.eigenvalues[..n].to_vec(),
            mode_class: self.mode_class[..n].to_vec(),
            norm_kind: self.norm_kind,
            inf_norms: self.inf_norms[..n].to_vec(),
        })
    }
}

/// Spectral-gap detection of the zero-energy cluster.
///
/// Returns the tolerance below which an eigenvalue counts as rigid: 1e-8
/// times the first eigenvalue after the largest ratio gap among the first
/// eight.
pub fn rigid_tolerance(spectrum: &[f64]) -> f64 {
    let head = &spectrum[..spectrum.len().min(8)];
    if head.len() < 2 {
        return 0.0;
    }
    // values below eps * max are numerically zero and compare as equal
    let floor = f64::EPSILON * head.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = floor.max(f64::MIN_POSITIVE);
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 0..head.len() - 1 {
        let ratio = head[k + 1].abs().max(floor) / head[k].abs().max(floor);
        if ratio > best.0 {
            best = (ratio, k + 1);
        }
    }
    1e-8 * head[best.1].abs()
}

/// First `n` generalized eigenpairs of the operator pair, ascending.
///
/// Columns are scaled to unit Euclidean norm and signed so that their
/// largest-magnitude entry is positive.
pub fn solve_modes(ops: &OperatorPair, n: usize) -> Result<ModalBasis> {
    let p = ops.dimension();
    if n == 0 || n > p {
        return Err(Error::InvalidParameter(format!("mode count {n} outside 1..={p}")));
    }
    let GeneralizedEigen { values, vectors } = match ops.stiffness_factor() {
        Some(b) => linalg::generalized_eigen_from_factor(b, &ops.mass)?,
        None => linalg::generalized_eigen_dense(&ops.stiffness, &ops.mass)?,
    };
    let tol = rigid_tolerance(&values);
    let mut modes = vectors.columns(0, n).into_owned();
    for j in 0..n {
        let mut col = modes.column_mut(j);
        let nrm = col.norm();
        col /= nrm;
        apply_sign_convention(col.as_mut_slice());
    }
    let eigenvalues = values[..n].to_vec();
    let mode_class = eigenvalues
        .iter()
        .map(|&v| if v <= tol { ModeClass::Rigid } else { ModeClass::Natural })
        .collect();
    Ok(ModalBasis {
        geometry_ref: ops.geometry_ref.clone(),
        modes,
        eigenvalues,
        mode_class,
        norm_kind: NormKind::Euclidean,
        inf_norms: vec![1.0; n],
    })
}

/// Flips `v` so that its first largest-magnitude entry is positive.
pub fn apply_sign_convention(v: &mut [f64]) {
    let mut best = (0.0, 0usize);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best.0 {
            best = (x.abs(), i);
        }
    }
    if v.get(best.1).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// A deviation field injected into a basis ahead of the natural modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraField {
    pub label: String,
    pub class: ModeClass,
    pub values: DVector<f64>,
}

/// Normal projections of rigid-body motions plus, for caps, the uniform
/// radial dilation. Fields with norm below `1e-9 √p` are dropped.
pub fn rigid_and_size_fields(geometry: &Geometry) -> Vec<ExtraField> {
    let p = geometry.node_count();
    let center = geometry.reference_point();
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let names = ["x", "y", "z"];
    let mut fields = Vec::new();
    for (axis, name) in axes.iter().zip(names) {
        let values = DVector::from_iterator(p, geometry.normals().iter().map(|n| dot(n, axis)));
        fields.push(ExtraField {
            label: format!("translation_{name}"),
            class: ModeClass::Rigid,
            values,
        });
    }
    for (axis, name) in axes.iter().zip(names) {
        let values = DVector::from_iterator(
            p,
            geometry
                .nodes()
                .iter()
                .zip(geometry.normals())
                .map(|(r, n)| dot(&cross(axis, &sub(r, &center)), n)),
        );
        fields.push(ExtraField {
            label: format!("rotation_{name}"),
            class: ModeClass::Rigid,
            values,
        });
    }
    if geometry.kind() == GeometryKind::SphericalCap {
        fields.push(ExtraField {
            label: "size".into(),
            class: ModeClass::Size,
            values: DVector::from_element(p, 1.0),
        });
    }
    let floor = 1e-9 * (p as f64).sqrt();
    fields.retain(|f| f.values.norm() >= floor);
    fields
}

/// Result of [`enrich_basis`]: the basis and the natural columns it dropped.
#[derive(Debug, Clone)]
pub struct Enrichment {
    pub basis: ModalBasis,
    /// Indices, in the input basis, of modes that duplicated injected fields.
    pub dropped: Vec<usize>,
}

/// Prepends `extra` fields to a basis and removes their span from every
/// natural mode.
///
/// Natural modes are projected off the injected span (Euclidean metric).
/// A mode whose residual against the injected span and the previously kept
/// modes falls below 1e-8 of its norm is a duplicate and is dropped.
pub fn enrich_basis(natural: &ModalBasis, extra: &[ExtraField]) -> Result<Enrichment> {
    let p = natural.node_count();
    for f in extra {
        if f.values.len() != p {
            return Err(Error::InvalidInput(format!(
                "field {} has {} entries, basis has {p} nodes",
                f.label,
                f.values.len()
            )));
        }
    }
    let kind = natural.norm_kind;
    let mut injected: Vec<DVector<f64>> = Vec::with_capacity(extra.len());
    if !extra.is_empty() {
        let cols: Vec<DVector<f64>> = extra.iter().map(|f| f.values.clone()).collect();
        let m = DMatrix::from_columns(&cols);
        let sv = nalgebra::SVD::new(m, false, false).singular_values;
        if !(sv.min() > 1e-10 * sv.max()) {
            return Err(Error::InvalidInput("injected fields are linearly dependent".into()));
        }
        for f in extra {
            let mut u = f.values.clone();
            linalg::project_out(&mut u, &injected);
            let nrm = u.norm();
            injected.push(u / nrm);
        }
    }

    let mut columns = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut classes = Vec::new();
    let mut scales = Vec::new();
    for f in extra {
        let s = kind.of(f.values.as_slice());
        columns.push(&f.values / s);
        // injected fields carry no stiffness eigenvalue; they sort first
        eigenvalues.push(0.0);
        classes.push(f.class);
        scales.push(s);
    }

    let mut kept: Vec<DVector<f64>> = injected.clone();
    let mut dropped = Vec::new();
    for j in 0..natural.mode_count() {
        let original = natural.mode(j);
        let mut stored = original.clone();
        linalg::project_out(&mut stored, &injected);
        let mut test = stored.clone();
        linalg::project_out(&mut test, &kept[injected.len()..]);
        if test.norm() < 1e-8 * original.norm() {
            dropped.push(j);
            continue;
        }
        kept.push(&test / test.norm());
        apply_sign_convention(stored.as_mut_slice());
        let s = kind.of(stored.as_slice());
        columns.push(stored / s);
        eigenvalues.push(natural.eigenvalues[j]);
        classes.push(natural.mode_class[j]);
        scales.push(natural.inf_norms[j] * s);
    }

    let basis = ModalBasis::from_parts(
        natural.geometry_ref.clone(),
        DMatrix::from_columns(&columns),
        eigenvalues,
        classes,
        kind,
        scales,
    )?;
    Ok(Enrichment { basis, dropped })
}

/// Rescales every column to unit norm of the requested kind.
pub fn renormalize(basis: &ModalBasis, kind: NormKind) -> Result<ModalBasis> {
    let mut out = basis.clone();
    for j in 0..out.mode_count() {
        let mut col = out.modes.column_mut(j);
        let s = kind.of(col.as_slice());
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidBasis(format!("mode {j} is a zero column")));
        }
        col /= s;
        out.inf_norms[j] *= s;
    }
    out.norm_kind = kind;
    Ok(out)
}

/// Builds the working basis used by decomposition: `n` natural modes,
/// optionally enriched with rigid/size fields, infinity-normed.
pub fn build_basis(geometry: &Geometry, n: usize, enrich: bool) -> Result<ModalBasis> {
    let ops = assemble_operators(geometry)?;
    let natural = solve_modes(&ops, n)?;
    let basis = if enrich {
        enrich_basis(&natural, &rigid_and_size_fields(geometry))?.basis
    } else {
        natural
    };
    renormalize(&basis, NormKind::Infinity)
}
