//! Configuration and subcommand runners shared by the command-line front end.

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{
    band_filter, reconstruct, residual_report, Band, DeviationField, ModalSignature, Projector,
    DEFAULT_FORM_CUTOFF,
};
use crate::error::{Error, Result};
use crate::geometry::{build_profile, build_spherical_cap, uniform_subsample, Geometry, SampleSet};
use crate::interpolation::{build_degraded_projection, interpolate, run_sweep, synthesize_defect, SweepConfig};
use crate::io;
use crate::modal_basis::{build_basis, ModalBasis};
use crate::par::Execution;
use crate::plan::{build_plan, emit_dmis, simulate_probing, MeasurementPlan, TourMethod, DEFAULT_MAX_PASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    Profile {
        length: f64,
        node_count: usize,
    },
    SphericalCap {
        radius: f64,
        #[serde(default = "half_pi")]
        half_angle: f64,
        node_count: usize,
    },
}

fn half_pi() -> f64 {
    FRAC_PI_2
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig::SphericalCap {
            radius: 1.0,
            half_angle: FRAC_PI_2,
            node_count: 321,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<Geometry> {
        match *self {
            GeometryConfig::Profile { length, node_count } => build_profile(length, node_count),
            GeometryConfig::SphericalCap {
                radius,
                half_angle,
                node_count,
            } => build_spherical_cap(radius, half_angle, node_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub modes: usize,
    pub enrich: bool,
    pub form_cutoff: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            modes: 50,
            enrich: true,
            form_cutoff: DEFAULT_FORM_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Probed node count; every node when absent.
    pub q: Option<usize>,
    /// Start node of the farthest-point subsample.
    pub seed: u64,
    pub tour: TourMethod,
    pub max_passes: usize,
    /// Upper bound on modes fitted by interpolation; the point count when absent.
    pub max_modes: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            q: None,
            seed: 0,
            tour: TourMethod::NnPlus2opt,
            max_passes: DEFAULT_MAX_PASSES,
            max_modes: None,
        }
    }
}

/// Synthetic defect probed by the virtual machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub complexity: usize,
    /// Peak-to-valley range of the defect, mm.
    pub defect_range: f64,
    pub defect_seed: u64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            complexity: 10,
            defect_range: 0.01,
            defect_seed: 1,
            noise_sigma: 0.0005,
            noise_seed: 2,
        }
    }
}

/// Sweep axes default to every third mode and every tenth node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub complexities: Option<Vec<usize>>,
    pub sample_counts: Option<Vec<usize>>,
    pub trials: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub defect_range: f64,
    pub max_modes: Option<usize>,
    pub execution: Execution,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        SweepSection {
            complexities: None,
            sample_counts: None,
            trials: d.trials,
            noise_sigma: d.noise_sigma,
            seed: d.seed,
            defect_range: d.defect_range,
            max_modes: d.max_modes,
            execution: d.execution,
        }
    }
}

impl SweepSection {
    pub fn resolve(&self, mode_count: usize, node_count: usize) -> SweepConfig {
        let step = |s: usize, top: usize| (1..=top / s).map(|k| k * s).collect::<Vec<_>>();
        SweepConfig {
            complexities: self.complexities.clone().unwrap_or_else(|| step(3, mode_count)),
            sample_counts: self.sample_counts.clone().unwrap_or_else(|| step(10, node_count)),
            trials: self.trials,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            defect_range: self.defect_range,
            max_modes: self.max_modes,
            execution: self.execution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub band: Band,
    /// Explicit 0-based mode indices; overrides `band` when present.
    pub modes: Option<Vec<usize>>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            band: Band::Form,
            modes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
    /// Measured cloud; `<output_dir>/measurement.csv` when absent.
    pub measurement: Option<PathBuf>,
    /// Stored basis; rebuilt from the config when absent.
    pub basis: Option<PathBuf>,
    /// Stored signature; `<output_dir>/signature.json` when absent.
    pub signature: Option<PathBuf>,
    /// Stored plan; rebuilt from the config when absent.
    pub plan: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            output_dir: PathBuf::from("out"),
            measurement: None,
            basis: None,
            signature: None,
            plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub geometry: GeometryConfig,
    pub basis: BasisConfig,
    pub sampling: SamplingConfig,
    pub simulate: SimulateConfig,
    pub sweep: SweepSection,
    pub reconstruct: ReconstructConfig,
    pub paths: PathsConfig,
    pub feature_name: FeatureName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureName(pub String);

impl Default for FeatureName {
    fn default() -> Self {
        FeatureName("SURFACE".into())
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: PipelineConfig = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.basis.modes == 0 {
            return bad("basis.modes must be at least 1".into());
        }
        if self.sampling.q == Some(0) {
            return bad("sampling.q must be at least 1".into());
        }
        if self.sampling.max_modes == Some(0) {
            return bad("sampling.max_modes must be at least 1".into());
        }
        let sim = &self.simulate;
        if sim.complexity == 0 {
            return bad("simulate.complexity must be at least 1".into());
        }
        if !(sim.defect_range.is_finite() && sim.defect_range >= 0.0) {
            return bad("simulate.defect_range must be finite and non-negative".into());
        }
        if !(sim.noise_sigma.is_finite() && sim.noise_sigma >= 0.0) {
            return bad("simulate.noise_sigma must be finite and non-negative".into());
        }
        if self.paths.output_dir.as_os_str().is_empty() {
            return bad("paths.output_dir must not be empty".into());
        }
        let inputs = [
            &self.paths.measurement,
            &self.paths.basis,
            &self.paths.signature,
            &self.paths.plan,
        ];
        let mut seen = HashSet::new();
        for p in inputs.into_iter().flatten() {
            if !seen.insert(p) {
                return bad(format!("path '{}' is used for two inputs", p.display()));
            }
        }
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Plan,
    Basis,
    Decompose,
    Reconstruct,
    Interpolate,
    Sweep,
    Simulate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Plan,
        Subcommand::Basis,
        Subcommand::Decompose,
        Subcommand::Reconstruct,
        Subcommand::Interpolate,
        Subcommand::Sweep,
        Subcommand::Simulate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Plan => "plan",
            Subcommand::Basis => "basis",
            Subcommand::Decompose => "decompose",
            Subcommand::Reconstruct => "reconstruct",
            Subcommand::Interpolate => "interpolate",
            Subcommand::Sweep => "sweep",
            Subcommand::Simulate => "simulate",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subcommand '{s}'")))
    }
}

/// Runs one pipeline stage and returns the artifacts it wrote, in write order.
pub fn run_subcommand(cmd: Subcommand, config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let geometry = config.geometry.build()?;
    let mut written = Vec::new();
    let mut emit = |path: PathBuf| -> PathBuf {
        written.push(path.clone());
        path
    };
    match cmd {
        Subcommand::Plan => {
            let plan = make_plan(config, &geometry)?;
            let dmis = emit_dmis(&plan, &config.feature_name.0)?;
            io::write_text(emit(config.out("plan.dmis")), &dmis)?;
            io::write_json(emit(config.out("plan.json")), &plan)?;
            log::info!(
                "planned {} points, path length {:.6} mm",
                plan.ordered_points.len(),
                plan.tour_length
            );
        }
        Subcommand::Basis => {
            let basis = make_basis(config, &geometry)?;
            io::write_json(emit(config.out("basis.json")), &basis)?;
        }
        Subcommand::Simulate => {
            let basis = load_basis(config, &geometry)?;
            let plan = load_plan(config, &geometry)?;
            let truth = simulated_defect(config, &basis)?;
            let measured = simulate_probing(
                &plan,
                &truth,
                config.simulate.noise_sigma,
                config.simulate.noise_seed,
            )?;
            io::write_field_csv(emit(config.out("true_field.csv")), &truth)?;
            io::write_field_csv(emit(config.out("measurement.csv")), &measured)?;
        }
        Subcommand::Decompose => {
            let basis = load_basis(config, &geometry)?;
            let v = load_measurement(config, &geometry)?;
            let projector = Projector::new(&basis)?;
            let sig = projector.decompose(&v)?;
            let report = residual_report(&v, &sig, &basis)?;
            io::write_json(emit(config.out("signature.json")), &sig)?;
            io::write_signature_csv(emit(config.out("signature.csv")), &sig, &basis)?;
            io::write_e_curve_csv(emit(config.out("e_curve.csv")), &report.e_curve)?;
            io::write_field_csv(emit(config.out("residual.csv")), &report.residual_field)?;
        }
        Subcommand::Reconstruct => {
            let basis = load_basis(config, &geometry)?;
            let sig_path = config
                .paths
                .signature
                .clone()
                .unwrap_or_else(|| config.out("signature.json"));
            let sig: ModalSignature = io::read_json(&sig_path)?;
            let selection = match &config.reconstruct.modes {
                Some(m) => m.clone(),
                None => band_filter(&basis, config.reconstruct.band, config.basis.form_cutoff),
            };
            let field = reconstruct(&sig, &basis, &selection)?;
            io::write_field_csv(emit(config.out("reconstruction.csv")), &field)?;
        }
        Subcommand::Interpolate => {
            let basis = load_basis(config, &geometry)?;
            let v = load_measurement(config, &geometry)?;
            let max_modes = config.sampling.max_modes.unwrap_or(v.sample().count());
            let proj = build_degraded_projection(&basis, v.sample(), max_modes)?;
            let out = interpolate(&v, &proj, &basis)?;
            io::write_interpolation_csv(emit(config.out("interpolation.csv")), &out.field, v.sample())?;
            io::write_json(emit(config.out("interpolation_signature.json")), &out.signature)?;
        }
        Subcommand::Sweep => {
            let basis = load_basis(config, &geometry)?;
            let sweep_cfg = config
                .sweep
                .resolve(basis.mode_count(), geometry.node_count());
            let result = run_sweep(&geometry, &basis, &sweep_cfg)?;
            io::write_sweep_csv(emit(config.out("sweep.csv")), &result)?;
            io::write_json(emit(config.out("sweep.json")), &result)?;
        }
    }
    Ok(written)
}

pub fn make_basis(config: &PipelineConfig, geometry: &Geometry) -> Result<ModalBasis> {
    build_basis(geometry, config.basis.modes, config.basis.enrich)
}

fn load_basis(config: &PipelineConfig, geometry: &Geometry) -> Result<ModalBasis> {
    let basis = match &config.paths.basis {
        Some(path) => io::read_json(path)?,
        None => make_basis(config, geometry)?,
    };
    if basis.geometry_ref() != geometry.id() {
        return Err(Error::InvalidInput(format!(
            "basis is over '{}' but the configured geometry is '{}'",
            basis.geometry_ref(),
            geometry.id()
        )));
    }
    Ok(basis)
}

pub fn make_sample(config: &PipelineConfig, geometry: &Geometry) -> Result<SampleSet> {
    match config.sampling.q {
        None => Ok(SampleSet::full(geometry)),
        Some(q) => uniform_subsample(geometry, q, config.sampling.seed),
    }
}

pub fn make_plan(config: &PipelineConfig, geometry: &Geometry) -> Result<MeasurementPlan> {
    let sample = make_sample(config, geometry)?;
    build_plan(geometry, &sample, config.sampling.tour, config.sampling.max_passes)
}

fn load_plan(config: &PipelineConfig, geometry: &Geometry) -> Result<MeasurementPlan> {
    let plan: MeasurementPlan = match &config.paths.plan {
        Some(path) => io::read_json(path)?,
        None => make_plan(config, geometry)?,
    };
    if plan.geometry_ref != geometry.id() {
        return Err(Error::InvalidInput(format!(
            "plan is over '{}' but the configured geometry is '{}'",
            plan.geometry_ref,
            geometry.id()
        )));
    }
    Ok(plan)
}

fn load_measurement(config: &PipelineConfig, geometry: &Geometry) -> Result<DeviationField> {
    let path = config
        .paths
        .measurement
        .clone()
        .unwrap_or_else(|| config.out("measurement.csv"));
    Ok(io::ingest_point_cloud(path, geometry)?.field)
}

pub fn simulated_defect(config: &PipelineConfig, basis: &ModalBasis) -> Result<DeviationField> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.simulate.defect_seed);
    let values = synthesize_defect(
        basis,
        config.simulate.complexity,
        config.simulate.defect_range,
        &mut rng,
    )?;
    DeviationField::full(basis.geometry_ref(), values.iter().cloned().collect())
}
