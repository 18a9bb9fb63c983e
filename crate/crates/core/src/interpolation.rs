//! Full-field reconstruction of a form defect from a sparse measurement.
//!
//! The complete basis is restricted to the measured nodes, the leading
//! (least complex) modes are fitted by least squares on those rows, and the
//! coefficients are lifted back onto the complete basis. Because the
//! Euclidean and infinity-normed bases differ only by a diagonal column
//! scaling, and the degraded basis is a row restriction of the complete one,
//! this is the same change of basis as composing the two passage matrices,
//! whenever the restricted matrix has full column rank.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decomposition::{DeviationField, ModalSignature};
use crate::error::{Error, Result};
use crate::geometry::{uniform_subsample, Geometry, SampleSet};
use crate::linalg::{condition_number, LeastSquares};
use crate::modal_basis::{ModalBasis, NormKind};
use crate::par::{self, Execution};

/// Restricted systems above this condition number are refused.
pub const INTERPOLATION_CONDITION_LIMIT: f64 = 1e10;

/// Rows of the complete basis at the measured nodes, truncated to the
/// leading modes that the point count can support.
#[derive(Debug, Clone)]
pub struct DegradedProjection {
    pub basis_ref: String,
    pub sample: SampleSet,
    pub restricted_modes: DMatrix<f64>,
    pub kept_mode_indices: Vec<usize>,
    /// Column count of the complete basis, for zero-padding.
    pub mode_count: usize,
    pub condition_number: f64,
}

pub fn build_degraded_projection(
    basis: &ModalBasis,
    sample: &SampleSet,
    max_modes: usize,
) -> Result<DegradedProjection> {
    if basis.norm_kind() != NormKind::Infinity {
        return Err(Error::InvalidInput(
            "interpolation needs an infinity-normed basis".into(),
        ));
    }
    if sample.geometry_ref != basis.geometry_ref() || sample.node_count != basis.node_count() {
        return Err(Error::InvalidInput(format!(
            "sample is over '{}', basis is over '{}'",
            sample.geometry_ref,
            basis.geometry_ref()
        )));
    }
    let q = sample.count();
    if q == 0 {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    if max_modes == 0 {
        return Err(Error::InvalidParameter("max_modes must be at least 1".into()));
    }
    let kept = max_modes.min(q).min(basis.mode_count());
    let restricted_modes = basis
        .modes()
        .select_rows(sample.indices())
        .columns(0, kept)
        .into_owned();
    let condition_number = condition_number(&restricted_modes);
    Ok(DegradedProjection {
        basis_ref: basis.basis_ref(),
        sample: sample.clone(),
        restricted_modes,
        kept_mode_indices: (0..kept).collect(),
        mode_count: basis.mode_count(),
        condition_number,
    })
}

/// Interpolated coefficients and the field they reconstruct on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub signature: ModalSignature,
    pub field: DeviationField,
}

pub fn interpolate(
    degraded: &DeviationField,
    proj: &DegradedProjection,
    basis: &ModalBasis,
) -> Result<Interpolation> {
    if degraded.sample() != &proj.sample {
        return Err(Error::InvalidInput(
            "measurement sample differs from the projection sample".into(),
        ));
    }
    if proj.basis_ref != basis.basis_ref() {
        return Err(Error::InvalidInput("projection was built from another basis".into()));
    }
    let kept = proj.kept_mode_indices.len();
    if !(proj.condition_number <= INTERPOLATION_CONDITION_LIMIT) {
        return Err(Error::InterpolationFailure {
            modes: kept,
            condition: proj.condition_number,
            limit: INTERPOLATION_CONDITION_LIMIT,
        });
    }
    let ls = LeastSquares::new(&proj.restricted_modes)?;
    let fitted = ls.solve(&degraded.to_vector())?;
    let mut lambda = DVector::zeros(proj.mode_count);
    lambda.rows_mut(0, kept).copy_from(&fitted);
    let full = basis.modes() * &lambda;
    Ok(Interpolation {
        signature: ModalSignature {
            basis_ref: proj.basis_ref.clone(),
            coefficients: lambda.iter().cloned().collect(),
            condition_number: proj.condition_number,
            ill_conditioned: proj.condition_number > crate::decomposition::ILL_CONDITIONED,
        },
        field: DeviationField::full(basis.geometry_ref(), full.iter().cloned().collect())?,
    })
}

/// Random defect on the leading `complexity` modes, scaled to a peak-to-valley range.
///
/// Coefficients are uniform in [-1, 1]. A field with no spread (a single
/// constant mode) is scaled so that its peak equals `range`.
pub fn synthesize_defect<R: Rng>(
    basis: &ModalBasis,
    complexity: usize,
    range: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if complexity == 0 || complexity > basis.mode_count() {
        return Err(Error::InvalidParameter(format!(
            "complexity {complexity} outside 1..={}",
            basis.mode_count()
        )));
    }
    let coeffs = DVector::from_fn(complexity, |_, _| rng.gen_range(-1.0..=1.0));
    let field = basis.modes().columns(0, complexity) * coeffs;
    let spread = field.max() - field.min();
    let peak = field.amax();
    let scale = if spread > 1e-8 * peak {
        range / spread
    } else if peak > 0.0 {
        range / peak
    } else {
        0.0
    };
    Ok(field * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Highest mode index of the synthetic defects (1-based count of modes).
    pub complexities: Vec<usize>,
    /// Measured point counts, ascending.
    pub sample_counts: Vec<usize>,
    pub trials: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Peak-to-valley range of each synthetic defect (mm).
    pub defect_range: f64,
    /// Upper bound on fitted modes; the basis size when absent.
    pub max_modes: Option<usize>,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            complexities: (1..=20).map(|k| 3 * k).collect(),
            sample_counts: (1..=25).map(|k| 10 * k).collect(),
            trials: 5,
            noise_sigma: 0.0,
            seed: 2007,
            defect_range: 3.0,
            max_modes: None,
            execution: Execution::Parallel,
        }
    }
}

/// Mean RMS interpolation error per (complexity, sample count) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub complexities: Vec<usize>,
    pub sample_counts: Vec<usize>,
    /// `rms_grid[c][q]`, mm; `None` marks a cell where an interpolation failed.
    pub rms_grid: Vec<Vec<Option<f64>>>,
    /// Standard error of each cell mean, mm.
    pub stderr_grid: Vec<Vec<Option<f64>>>,
    pub trials_per_cell: usize,
    pub rng_seed: u64,
    pub noise_sigma: f64,
    pub defect_range: f64,
}

impl SweepResult {
    pub fn cell(&self, ci: usize, qi: usize) -> Option<f64> {
        self.rms_grid[ci][qi]
    }
}

/// Outcome of one sweep trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub rms: f64,
    pub condition: f64,
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &x in parts {
        h ^= x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// One simulated measurement: synthesize, subsample, interpolate, compare.
///
/// The defect depends on `(seed, complexity, trial)` only, so every sample
/// count of a trial sees the same part. The sampling start and the noise
/// depend on the full cell key.
pub fn run_trial(
    geometry: &Geometry,
    basis: &ModalBasis,
    config: &SweepConfig,
    complexity: usize,
    sample_count: usize,
    trial: usize,
) -> Result<TrialOutcome> {
    let mut defect_rng = ChaCha8Rng::seed_from_u64(mix(&[config.seed, complexity as u64, trial as u64]));
    let dense = synthesize_defect(basis, complexity, config.defect_range, &mut defect_rng)?;
    let mut cell_rng = ChaCha8Rng::seed_from_u64(mix(&[
        config.seed,
        complexity as u64,
        sample_count as u64,
        trial as u64,
    ]));
    let start = cell_rng.gen_range(0..geometry.node_count()) as u64;
    let sample = uniform_subsample(geometry, sample_count, start)?;
    let noise = if config.noise_sigma > 0.0 {
        Some(
            Normal::new(0.0, config.noise_sigma)
                .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?,
        )
    } else {
        None
    };
    let values = sample
        .indices()
        .iter()
        .map(|&i| dense[i] + noise.as_ref().map_or(0.0, |n| n.sample(&mut cell_rng)))
        .collect();
    let measured = DeviationField::new(sample.clone(), values)?;
    let max_modes = config.max_modes.unwrap_or(basis.mode_count());
    let proj = build_degraded_projection(basis, &sample, max_modes)?;
    let result = interpolate(&measured, &proj, basis)?;
    let err = DVector::from_column_slice(result.field.values()) - dense;
    Ok(TrialOutcome {
        rms: err.norm() / (basis.node_count() as f64).sqrt(),
        condition: proj.condition_number,
    })
}

/// Sampling-density × defect-complexity sweep of interpolation quality.
pub fn run_sweep(geometry: &Geometry, basis: &ModalBasis, config: &SweepConfig) -> Result<SweepResult> {
    if basis.geometry_ref() != geometry.id() {
        return Err(Error::InvalidInput("basis does not belong to the geometry".into()));
    }
    if config.trials == 0 {
        return Err(Error::InvalidParameter("sweep needs at least one trial".into()));
    }
    if config.complexities.is_empty() || config.sample_counts.is_empty() {
        return Err(Error::InvalidParameter("sweep axes must not be empty".into()));
    }
    if let Some(&c) = config
        .complexities
        .iter()
        .find(|&&c| c == 0 || c > basis.mode_count())
    {
        return Err(Error::InvalidParameter(format!(
            "complexity {c} outside 1..={}",
            basis.mode_count()
        )));
    }
    if config.sample_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("sample counts must be strictly ascending".into()));
    }
    if let Some(&q) = config
        .sample_counts
        .iter()
        .find(|&&q| q == 0 || q > geometry.node_count())
    {
        return Err(Error::InvalidParameter(format!(
            "sample count {q} outside 1..={}",
            geometry.node_count()
        )));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter("noise sigma must be non-negative".into()));
    }

    let cells: Vec<(usize, usize)> = (0..config.complexities.len())
        .flat_map(|ci| (0..config.sample_counts.len()).map(move |qi| (ci, qi)))
        .collect();
    let stats = par::map(&cells, config.execution, |&(ci, qi)| {
        let c = config.complexities[ci];
        let q = config.sample_counts[qi];
        let mut rms = Vec::with_capacity(config.trials);
        for t in 0..config.trials {
            match run_trial(geometry, basis, config, c, q, t) {
                Ok(o) => rms.push(o.rms),
                Err(e) => {
                    log::debug!("sweep cell (c={c}, q={q}) trial {t} failed: {e}");
                    return (None, None);
                }
            }
        }
        let n = rms.len() as f64;
        let mean = rms.iter().sum::<f64>() / n;
        let stderr = if rms.len() > 1 {
            let var = rms.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        (Some(mean), Some(stderr))
    });

    let width = config.sample_counts.len();
    let mut rms_grid = vec![vec![None; width]; config.complexities.len()];
    let mut stderr_grid = rms_grid.clone();
    for (&(ci, qi), (mean, se)) in cells.iter().zip(stats) {
        rms_grid[ci][qi] = mean;
        stderr_grid[ci][qi] = se;
    }
    Ok(SweepResult {
        complexities: config.complexities.clone(),
        sample_counts: config.sample_counts.clone(),
        rms_grid,
        stderr_grid,
        trials_per_cell: config.trials,
        rng_seed: config.seed,
        noise_sigma: config.noise_sigma,
        defect_range: config.defect_range,
    })
}
