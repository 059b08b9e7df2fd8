//! Scenario configurations, the runners behind the convergence, recovery
//! and counterexample studies, and their CSV/JSON artifacts.

mod probe;
mod scenarios;
mod sweep_flow;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, DomainDesc};
use crate::energy::MaterialModel;
use crate::error::{Error, Result};
use crate::loads::LoadSpec;
use crate::poly::{PolyVec, Polynomial, Term};
use crate::solver::SolverSettings;

pub use probe::{korn_quotient, probe_inequalities, rigidity_quotient, ProbeRow, ProbeSummary, RigidityFit};
pub use scenarios::{
    run_s1_convergence, run_s2_recovery, run_s3_rotations, run_s4_drift, run_s5_incompatible,
    run_s6_rigid_minimizers, DriftRow, IncompatibleRow, RecoveryRow, RigidRow, RotationRow, SweepRow,
};
pub use sweep_flow::{run_flow, FlowRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    #[serde(rename = "custom")]
    Custom,
}

impl ScenarioId {
    pub fn stem(&self) -> &'static str {
        match self {
            ScenarioId::S1 => "s1",
            ScenarioId::S2 => "s2",
            ScenarioId::S3 => "s3",
            ScenarioId::S4 => "s4",
            ScenarioId::S5 => "s5",
            ScenarioId::S6 => "s6",
            ScenarioId::Custom => "custom",
        }
    }
}

/// Scenario-specific knobs; each scenario reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// S1: final gap tolerance relative to `1 + |min E^I|`.
    pub gap_tol: f64,
    /// S1: strain bound `M`; unset means `10 (1 + ‖E(v_*)‖)`.
    pub strain_bound: Option<f64>,
    /// S2 and flow sweep: vector potential of the target field.
    pub potential: PolyVec,
    /// S2: final `|F^I_h(v_h) - E^I(v)|` tolerance relative to `1 + |E^I(v)|`.
    pub recovery_tol: f64,
    /// S3: rotation axis and angle.
    pub rotation_axis: [f64; 3],
    pub rotation_angle: f64,
    /// S4: drift exponent in (½, 1).
    pub alpha: f64,
    /// S4: bound on the last value.
    pub drift_tol: f64,
    /// S4 and S5: axial vector of the skew matrix `W`, normalized on use.
    pub skew_axis: [f64; 3],
    /// S5: relative tolerance of the fitted slope.
    pub slope_tol: f64,
    /// S6: bounds on `|min|` and on `‖E(v_*)‖`.
    pub value_tol: f64,
    pub strain_tol: f64,
    /// Flow sweep: RK4 substeps and `det` tolerance.
    pub substeps: usize,
    pub det_tol: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            gap_tol: 2e-2,
            strain_bound: None,
            potential: PolyVec([Polynomial::zero(), Polynomial::zero(), Polynomial::new([Term(1, 1, 0, 1.0)])]),
            recovery_tol: 1e-3,
            rotation_axis: [0.0, 0.0, 1.0],
            rotation_angle: 0.5,
            alpha: 0.75,
            drift_tol: 1e-3,
            skew_axis: [0.0, 0.0, -1.0],
            slope_tol: 1e-2,
            value_tol: 1e-9,
            strain_tol: 1e-6,
            substeps: 64,
            det_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Directory for the artifacts; the config's directory when unset.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// File stem; the scenario id when unset.
    #[serde(default)]
    pub stem: Option<String>,
}

fn default_domain() -> DomainDesc {
    DomainDesc::Box(BoxDomain::unit())
}
fn default_mesh_n() -> usize {
    8
}
fn default_material() -> MaterialModel {
    MaterialModel::QuadGreen
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    #[serde(default = "default_domain")]
    pub domain: DomainDesc,
    /// Elements per box edge.
    #[serde(default = "default_mesh_n")]
    pub mesh_n: usize,
    #[serde(default = "default_material")]
    pub material: MaterialModel,
    #[serde(default)]
    pub load: LoadSpec,
    pub h_list: Vec<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub params: ScenarioParams,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_list.is_empty() {
            return Err(Error::Config("h_list is empty".into()));
        }
        if self.h_list.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            return Err(Error::Config(format!("h_list entries must lie in (0, 1): {:?}", self.h_list)));
        }
        if self.h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!("h_list must decrease strictly: {:?}", self.h_list)));
        }
        if self.mesh_n == 0 || self.workers == 0 {
            return Err(Error::Config("mesh_n and workers must be positive".into()));
        }
        self.domain.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.material.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.load.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.solver.validate()?;
        Ok(())
    }

    /// Parses a config. Keys left out fall back to the preset of `id`; the
    /// nested `solver`, `output` and `params` blocks are merged key by key.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg_err = |e: serde_json::Error| Error::Config(e.to_string());
        let user: serde_json::Value = serde_json::from_str(text).map_err(cfg_err)?;
        let serde_json::Value::Object(user) = user else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let id_value = user.get("id").cloned().ok_or_else(|| Error::Config("missing field `id`".into()))?;
        let id: ScenarioId = serde_json::from_value(id_value).map_err(cfg_err)?;
        let mut merged = serde_json::to_value(Self::preset(id)).map_err(cfg_err)?;
        let base = merged.as_object_mut().expect("config serializes to an object");
        for (key, value) in user {
            match (base.get_mut(&key), value) {
                (Some(serde_json::Value::Object(b)), serde_json::Value::Object(u))
                    if matches!(key.as_str(), "solver" | "output" | "params") =>
                {
                    b.extend(u);
                }
                (_, value) => {
                    base.insert(key, value);
                }
            }
        }
        let cfg: ScenarioConfig = serde_json::from_value(merged).map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The reference configuration of a scenario.
    pub fn preset(id: ScenarioId) -> Self {
        use crate::loads::{poly_load, NamedLoad, VectorExpr};
        let radial = || poly_load([vec![Term(1, 0, 0, 1.0)], vec![Term(0, 1, 0, 1.0)], vec![Term(0, 0, 1, 1.0)]]);
        let (domain, load, h_list) = match id {
            ScenarioId::S1 | ScenarioId::Custom => {
                (default_domain(), LoadSpec::new(radial(), VectorExpr::zero()), vec![0.2, 0.1, 0.05, 0.025])
            }
            ScenarioId::S2 => (default_domain(), LoadSpec::new(radial(), VectorExpr::zero()), vec![0.1, 0.05, 0.025, 0.0125]),
            ScenarioId::S3 => (default_domain(), LoadSpec::default(), vec![0.2, 0.1, 0.05, 0.025]),
            ScenarioId::S4 => (
                DomainDesc::Ball { radius: 1.0 },
                LoadSpec::new(radial(), VectorExpr::zero()),
                vec![0.1, 0.05, 0.025, 0.0125],
            ),
            ScenarioId::S5 => (
                DomainDesc::Cylinder { radius: 1.0, height: 1.0 },
                LoadSpec::new(VectorExpr::zero(), VectorExpr::named(NamedLoad::CompressLateral)),
                vec![0.1, 0.05, 0.025],
            ),
            ScenarioId::S6 => (
                default_domain(),
                LoadSpec::new(
                    VectorExpr::named(NamedLoad::GradientPotential { amplitude: 1.0, center: [0.0; 3], half: [0.5; 3] }),
                    VectorExpr::named(NamedLoad::Pressure { lambda: 1.0 }),
                ),
                vec![0.1],
            ),
        };
        ScenarioConfig {
            id,
            domain,
            mesh_n: default_mesh_n(),
            material: default_material(),
            load,
            h_list,
            solver: SolverSettings::default(),
            output: OutputPaths::default(),
            seed: 7,
            workers: 1,
            params: ScenarioParams::default(),
        }
    }
}

/// One named pass/fail assertion of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Check { name: name.into(), pass, detail }
    }
}

/// Rows (as CSV text and JSON), summary values, checks and per-row timings.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub id: String,
    #[serde(skip)]
    pub csv: String,
    pub rows: serde_json::Value,
    pub summary: serde_json::Value,
    pub checks: Vec<Check>,
    /// Seconds per row; kept out of the CSV so that reruns are bit-identical.
    pub wallclock: Vec<f64>,
}

impl ScenarioReport {
    pub fn new<R: Serialize, S: Serialize>(
        id: &str,
        rows: &[R],
        summary: &S,
        checks: Vec<Check>,
        wallclock: Vec<f64>,
    ) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        let csv = String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))?;
        let json = |v: serde_json::Result<serde_json::Value>| v.map_err(|e| Error::Io(e.to_string()));
        Ok(ScenarioReport {
            id: id.into(),
            csv,
            rows: json(serde_json::to_value(rows))?,
            summary: json(serde_json::to_value(summary))?,
            checks,
            wallclock,
        })
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&csv_path, &self.csv)?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&json_path, text)?;
        Ok((csv_path, json_path))
    }
}

/// Runs the scenario named by `cfg.id`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    match cfg.id {
        ScenarioId::S1 => run_s1_convergence(cfg),
        ScenarioId::Custom => scenarios::run_convergence(cfg, false),
        ScenarioId::S2 => run_s2_recovery(cfg),
        ScenarioId::S3 => run_s3_rotations(cfg),
        ScenarioId::S4 => run_s4_drift(cfg),
        ScenarioId::S5 => run_s5_incompatible(cfg),
        ScenarioId::S6 => run_s6_rigid_minimizers(cfg),
    }
}

/// Process exit code for an error: 2 configuration, 4 load condition,
/// 3 any solver failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Load(_) | Error::Material(_) | Error::Domain(_) | Error::BadExponent { .. } => 2,
        Error::Equilibrium { .. } | Error::Compatibility { .. } => 4,
        _ => 3,
    }
}

/// Maps `f` over `items` on up to `workers` threads; output order follows
/// the input.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every item mapped")).collect()
}

/// Every one of the last `k` entries is at most its predecessor, up to
/// round-off.
pub fn nonincreasing_tail(xs: &[f64], k: usize) -> bool {
    let start = xs.len().saturating_sub(k);
    xs[start..].windows(2).all(|w| w[1] <= w[0] + 1e-14 * (1.0 + w[0].abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = ScenarioConfig::preset(ScenarioId::S1);
        assert!(cfg.validate().is_ok());
        cfg.h_list = vec![0.1, 0.2];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.h_list = vec![1.0];
        assert!(cfg.validate().is_err());
        assert!(ScenarioConfig::from_json(r#"{"id": "S1", "h_list": [0.1], "bogus": 1}"#).is_err());
        let cfg = ScenarioConfig::from_json(r#"{"id": "custom", "h_list": [0.2, 0.1]}"#).unwrap();
        assert_eq!(cfg.mesh_n, 8);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Compatibility { margin: 1.0 }), 4);
        assert_eq!(exit_code(&Error::NonConvergence("x".into())), 3);
    }

    #[test]
    fn presets_round_trip() {
        for id in [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3, ScenarioId::S4, ScenarioId::S5, ScenarioId::S6] {
            let cfg = ScenarioConfig::preset(id);
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<usize> = (0..17).collect();
        assert_eq!(par_map(&xs, 4, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn tail_monotonicity() {
        assert!(nonincreasing_tail(&[0.0, 5.0, 3.0, 2.0, 2.0], 3));
        assert!(!nonincreasing_tail(&[3.0, 2.0, 2.5], 3));
    }
}
