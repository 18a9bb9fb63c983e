//! Projection of measured deviations onto a modal basis and everything
//! derived from the coefficients: reconstruction, residuals, band filtering,
//! significant modes and signature correlation.

use std::collections::BTreeSet;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SampleSet;
use crate::linalg::LeastSquares;
use crate::modal_basis::{ModalBasis, ModeClass};
use crate::par::{self, Execution};

/// Condition number above which a projection is flagged as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e8;

/// Default number of natural modes counted as form; the rest is waviness.
pub const DEFAULT_FORM_CUTOFF: usize = 15;

/// Scalar deviations along node normals (mm) over a sample of nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationField {
    sample: SampleSet,
    values: Vec<f64>,
}

impl DeviationField {
    pub fn new(sample: SampleSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != sample.count() {
            return Err(Error::InvalidInput(format!(
                "{} values for a sample of {} nodes",
                values.len(),
                sample.count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("deviation {i} is not finite")));
        }
        Ok(DeviationField { sample, values })
    }

    /// Field over every node of a geometry.
    pub fn full(geometry_ref: &str, values: Vec<f64>) -> Result<Self> {
        let p = values.len();
        let sample = SampleSet::new(geometry_ref.to_string(), p, (0..p).collect())?;
        DeviationField::new(sample, values)
    }

    pub fn geometry_ref(&self) -> &str {
        &self.sample.geometry_ref
    }

    pub fn sample(&self) -> &SampleSet {
        &self.sample
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Values at a subset of this field's nodes.
    pub fn restrict(&self, sample: &SampleSet) -> Result<DeviationField> {
        if sample.geometry_ref != self.sample.geometry_ref {
            return Err(Error::InvalidInput("restriction to a different geometry".into()));
        }
        let mut values = Vec::with_capacity(sample.count());
        for &node in sample.indices() {
            let pos = self
                .sample
                .indices()
                .binary_search(&node)
                .map_err(|_| Error::InvalidInput(format!("node {node} is not in the field")))?;
            values.push(self.values[pos]);
        }
        DeviationField::new(sample.clone(), values)
    }

    /// Root mean square of the values.
    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// Modal coefficients of a field in a given basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalSignature {
    pub basis_ref: String,
    pub coefficients: Vec<f64>,
    pub condition_number: f64,
    #[serde(default)]
    pub ill_conditioned: bool,
}

impl ModalSignature {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// A basis factored once for repeated projections.
#[derive(Debug, Clone)]
pub struct Projector {
    basis_ref: String,
    geometry_ref: String,
    ls: LeastSquares,
}

impl Projector {
    pub fn new(basis: &ModalBasis) -> Result<Self> {
        Ok(Projector {
            basis_ref: basis.basis_ref(),
            geometry_ref: basis.geometry_ref().to_string(),
            ls: LeastSquares::new(basis.modes())?,
        })
    }

    pub fn condition(&self) -> f64 {
        self.ls.condition()
    }

    fn check_field(&self, v: &DeviationField) -> Result<()> {
        if v.geometry_ref() != self.geometry_ref {
            return Err(Error::InvalidInput(format!(
                "field is over '{}' but the basis is over '{}'",
                v.geometry_ref(),
                self.geometry_ref
            )));
        }
        let p = self.ls.orthonormal_factor().nrows();
        if !v.sample().is_full() || v.sample().count() != p {
            return Err(Error::InvalidInput(format!(
                "decomposition needs all {p} nodes, field has {}",
                v.sample().count()
            )));
        }
        Ok(())
    }

    /// Least-squares coefficients `argmin ‖Q λ − V‖₂`.
    pub fn decompose(&self, v: &DeviationField) -> Result<ModalSignature> {
        self.check_field(v)?;
        let lambda = self.ls.solve(&v.to_vector())?;
        let cond = self.ls.condition();
        let ill = cond > ILL_CONDITIONED;
        if ill {
            log::warn!("projection condition number {cond:.3e} exceeds {ILL_CONDITIONED:.0e}");
        }
        Ok(ModalSignature {
            basis_ref: self.basis_ref.clone(),
            coefficients: lambda.iter().cloned().collect(),
            condition_number: cond,
            ill_conditioned: ill,
        })
    }

    /// RMS residual after refitting each prefix of 1..=n modes.
    pub fn residual_curve(&self, v: &DeviationField) -> Result<Vec<f64>> {
        self.check_field(v)?;
        let q = self.ls.orthonormal_factor();
        let p = q.nrows() as f64;
        let mut r = v.to_vector();
        let mut curve = Vec::with_capacity(q.ncols());
        for j in 0..q.ncols() {
            let col = q.column(j);
            let c = col.dot(&r);
            r.axpy(-c, &col, 1.0);
            curve.push(r.norm() / p.sqrt());
        }
        Ok(curve)
    }
}

pub fn decompose(v: &DeviationField, basis: &ModalBasis) -> Result<ModalSignature> {
    Projector::new(basis)?.decompose(v)
}

/// Decomposes many fields against one factored basis.
pub fn decompose_batch(
    fields: &[DeviationField],
    basis: &ModalBasis,
    exec: Execution,
) -> Result<Vec<ModalSignature>> {
    let projector = Projector::new(basis)?;
    par::map(fields, exec, |f| projector.decompose(f))
        .into_iter()
        .collect()
}

fn check_signature(sig: &ModalSignature, basis: &ModalBasis) -> Result<()> {
    if sig.basis_ref != basis.basis_ref() || sig.len() != basis.mode_count() {
        return Err(Error::InvalidInput(format!(
            "signature belongs to '{}', not '{}'",
            sig.basis_ref,
            basis.basis_ref()
        )));
    }
    Ok(())
}

/// `Σ λ_i Q_i` over the selected modes, on every node of the geometry.
pub fn reconstruct(
    sig: &ModalSignature,
    basis: &ModalBasis,
    selection: &[usize],
) -> Result<DeviationField> {
    check_signature(sig, basis)?;
    let n = basis.mode_count();
    let mut field = DVector::zeros(basis.node_count());
    let unique: BTreeSet<usize> = selection.iter().cloned().collect();
    for &i in &unique {
        if i >= n {
            return Err(Error::InvalidInput(format!("mode index {i} out of range 0..{n}")));
        }
        field.axpy(sig.coefficients[i], &basis.modes().column(i), 1.0);
    }
    DeviationField::full(basis.geometry_ref(), field.iter().cloned().collect())
}

pub fn reconstruct_all(sig: &ModalSignature, basis: &ModalBasis) -> Result<DeviationField> {
    let all: Vec<usize> = (0..basis.mode_count()).collect();
    reconstruct(sig, basis, &all)
}

/// Residual vector and RMS residual curve of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub residual_field: DeviationField,
    /// `e_m`, RMS residual (mm) after fitting the first `m` modes, m = 1..=n.
    pub e_curve: Vec<f64>,
}

pub fn residual_report(
    v: &DeviationField,
    sig: &ModalSignature,
    basis: &ModalBasis,
) -> Result<ResidualReport> {
    check_signature(sig, basis)?;
    let projector = Projector::new(basis)?;
    let e_curve = projector.residual_curve(v)?;
    let fit = reconstruct_all(sig, basis)?;
    let values = v
        .values()
        .iter()
        .zip(fit.values())
        .map(|(a, b)| a - b)
        .collect();
    Ok(ResidualReport {
        residual_field: DeviationField::new(v.sample().clone(), values)?,
        e_curve,
    })
}

/// Pearson correlation of two equally long vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::UndefinedCorrelation("empty vectors".into()));
    }
    let q = a.len() as f64;
    let ma = a.iter().sum::<f64>() / q;
    let mb = b.iter().sum::<f64>() / q;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_correlation(a: &ModalSignature, b: &ModalSignature) -> Result<f64> {
    pearson(&a.coefficients, &b.coefficients)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    PositionOrientation,
    Size,
    Form,
    Waviness,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::PositionOrientation, Band::Size, Band::Form, Band::Waviness];
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "position_orientation" => Ok(Band::PositionOrientation),
            "size" => Ok(Band::Size),
            "form" => Ok(Band::Form),
            "waviness" => Ok(Band::Waviness),
            other => Err(Error::InvalidInput(format!("unknown band '{other}'"))),
        }
    }
}

/// Mode indices belonging to a band. Natural modes are counted in basis
/// order; the first `form_cutoff` of them are form, the rest waviness.
pub fn band_filter(basis: &ModalBasis, band: Band, form_cutoff: usize) -> Vec<usize> {
    let mut natural_rank = 0;
    let mut out = Vec::new();
    for (i, class) in basis.mode_class().iter().enumerate() {
        let member = match class {
            ModeClass::Rigid => band == Band::PositionOrientation,
            ModeClass::Size => band == Band::Size,
            ModeClass::Natural => {
                natural_rank += 1;
                match band {
                    Band::Form => natural_rank <= form_cutoff,
                    Band::Waviness => natural_rank > form_cutoff,
                    _ => false,
                }
            }
        };
        if member {
            out.push(i);
        }
    }
    out
}

/// Indices of the `k` largest |λ|, descending, ties to the lower index.
pub fn significant_modes(sig: &ModalSignature, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sig.len()).collect();
    idx.sort_by(|&a, &b| {
        sig.coefficients[b]
            .abs()
            .total_cmp(&sig.coefficients[a].abs())
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}
