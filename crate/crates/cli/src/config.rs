//! Versioned run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cohesim_core::interface_geom::InterfaceMesh;
use cohesim_core::macro_driver::{LoadProgram, OpeningProfile};
use cohesim_core::msnet::{CostBasis, MsnetConfig, TransportMode};
use cohesim_core::ruc_micro::{PackingMode, ParticleSpec, RucTemplate, SolverOptions};
use cohesim_core::sampling_db::{DatabaseSpec, PhiRange, SvrOptions};
use cohesim_core::seed;
use cohesim_core::MaterialParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: &str = "cohesim/run-config/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// Root seed for every random stream.
    pub seed: u64,
    pub materials: MaterialFiles,
    pub ruc: RucConfig,
    pub interface: InterfaceConfig,
    pub database: DatabaseConfig,
    pub program: LoadProgram,
    #[serde(default)]
    pub profile: OpeningProfile,
    #[serde(default)]
    pub msnet: NetConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    pub output_dir: PathBuf,
    /// Directory the config was read from; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialFiles {
    pub matrix: PathBuf,
    /// Required when the cell has particles.
    #[serde(default)]
    pub particle: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RucConfig {
    pub grid: usize,
    /// Cell edge (µm).
    pub l_ruc: f64,
    /// Adhesive thickness (µm).
    pub l_c: f64,
    /// `None` gives a single-phase matrix cell.
    #[serde(default)]
    pub particles: Option<ParticleConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub count: usize,
    pub radius: f64,
    pub mode: PackingMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceConfig {
    /// Arc radius (mm).
    pub radius: f64,
    pub central_angle: f64,
    pub elements: usize,
    #[serde(default)]
    pub flip_normal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseConfig {
    pub lambda: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub gammas: Vec<f64>,
    pub phi_range: PhiRange,
    #[serde(default)]
    pub svr: SvrOptions,
    /// Held-out directions for the classification error report; 0 skips it.
    #[serde(default)]
    pub n_test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub servers: usize,
    pub workers_per_server: usize,
    pub mode: TransportMode,
    pub threads: usize,
    pub rebalance_threshold: Option<f64>,
    pub cost_basis: CostBasis,
    pub deadline_s: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        let d = MsnetConfig::default();
        NetConfig {
            servers: d.servers,
            workers_per_server: d.workers_per_server,
            mode: d.mode,
            threads: d.threads,
            rebalance_threshold: d.rebalance_threshold,
            cost_basis: CostBasis::Nominal,
            deadline_s: d.deadline_s,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA {
            return Err(config_err(format!(
                "schema {:?} is not {SCHEMA:?}",
                self.schema
            )));
        }
        let mut files = vec![&self.materials.matrix];
        if self.ruc.particles.is_some() {
            files.push(
                self.materials
                    .particle
                    .as_ref()
                    .ok_or_else(|| config_err("particles need a particle material"))?,
            );
        }
        for f in files {
            let p = self.resolve(f);
            if !p.is_file() {
                return Err(config_err(format!(
                    "material file {} not found",
                    p.display()
                )));
            }
        }
        if self.database.gammas.is_empty() {
            return Err(config_err("database.gammas is empty"));
        }
        for &g in &self.database.gammas {
            self.database_spec(g)
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }
        self.program
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if self.interface.elements == 0 || !(self.interface.radius > 0.0) {
            return Err(config_err(
                "interface needs a positive radius and at least one element",
            ));
        }
        if self.msnet.servers == 0 || self.msnet.workers_per_server == 0 || self.msnet.threads == 0
        {
            return Err(config_err(
                "msnet servers, workers and threads must be at least 1",
            ));
        }
        Ok(())
    }

    fn material(&self, p: &Path) -> Result<MaterialParams, CliError> {
        let path = self.resolve(p);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let m: MaterialParams = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        m.validate()
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Ok(m)
    }

    pub fn template(&self) -> Result<Arc<RucTemplate>, CliError> {
        let r = &self.ruc;
        let matrix = self.material(&self.materials.matrix)?;
        let cell = match (&r.particles, &self.materials.particle) {
            (Some(pc), Some(pf)) => {
                let spec = ParticleSpec {
                    count: pc.count,
                    radius: pc.radius,
                    mode: pc.mode,
                    seed: seed::derive(self.seed, seed::PACKING),
                };
                RucTemplate::packed(r.grid, r.l_ruc, r.l_c, matrix, self.material(pf)?, spec)
            }
            _ => RucTemplate::homogeneous(r.grid, r.l_ruc, r.l_c, matrix),
        };
        cell.map(Arc::new)
            .map_err(|e| config_err(format!("unit cell: {e}")))
    }

    pub fn mesh(&self) -> Result<InterfaceMesh, CliError> {
        let i = &self.interface;
        let cp = InterfaceMesh::circular_arc_controls(i.radius, i.central_angle);
        InterfaceMesh::bezier_interface(cp, i.elements, self.ruc.l_c, i.flip_normal)
            .map_err(|e| config_err(format!("interface: {e}")))
    }

    pub fn database_spec(&self, gamma: f64) -> DatabaseSpec {
        let d = &self.database;
        DatabaseSpec {
            lambda: d.lambda,
            n_s: d.n_s,
            n_t: d.n_t,
            gamma,
            phi_range: d.phi_range,
            svr: d.svr,
            seed: self.seed,
        }
    }

    pub fn msnet_config(&self) -> MsnetConfig {
        let n = &self.msnet;
        MsnetConfig {
            servers: n.servers,
            workers_per_server: n.workers_per_server,
            mode: n.mode,
            threads: n.threads,
            seed: self.seed,
            rebalance_threshold: n.rebalance_threshold,
            cost_basis: n.cost_basis,
            deadline_s: n.deadline_s,
            drop: None,
        }
    }

    pub fn output(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// File name of the database trained at tolerance `gamma`.
    pub fn database_file(&self, gamma: f64) -> PathBuf {
        self.output().join(format!("database_g{gamma}.json"))
    }
}
