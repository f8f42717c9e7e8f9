//! Loads an experiment config: model files, simulator, fault profile, DQN settings.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::{AgentError, Setup, TrainConfig};
use crate::behavior::{flatten, parse_state_machine, ModelError};
use crate::config::{ConfigError, KeyValues};
use crate::constraint::{parse_constraints, ConstraintError};
use crate::domain::{parse_domain_schema, DomainError};
use crate::sim::{QuadSim, SimConfig, SimError};

pub const BUILTIN_MACHINE: &str = include_str!("../data/arducopter.sm");
pub const BUILTIN_SCHEMA: &str = include_str!("../data/arducopter.schema");
pub const BUILTIN_CONSTRAINTS: &str = include_str!("../data/arducopter.ocl");
pub const BUILTIN_CONFIG: &str = include_str!("../data/experiment.cfg");
pub const DRONEKIT_TEMPLATE: &str = include_str!("../data/dronekit.tmpl");
pub const SIM_TEMPLATE: &str = include_str!("../data/sim.tmpl");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{file}: {source}")]
    Machine { file: String, source: ModelError },
    #[error("{file}: {source}")]
    Schema { file: String, source: DomainError },
    #[error("{file}: {source}")]
    Constraints { file: String, source: ConstraintError },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub setup: Setup,
    pub sim: SimConfig,
    pub train: TrainConfig,
    /// Command template text for script export.
    pub template: String,
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|e| ExperimentError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl Experiment {
    /// The bundled ArduCopter experiment.
    pub fn builtin() -> Result<Experiment, ExperimentError> {
        Self::from_text(BUILTIN_CONFIG, None)
    }

    pub fn load(path: &Path) -> Result<Experiment, ExperimentError> {
        let text = read(path)?;
        Self::from_text(&text, Some(path.parent().unwrap_or(Path::new("."))))
    }

    /// `base` resolves relative file keys; without it only the bundled files are used.
    pub fn from_text(text: &str, base: Option<&Path>) -> Result<Experiment, ExperimentError> {
        let kv = KeyValues::parse(text)?;
        let file = |key: &str, builtin: &str| -> Result<(String, String), ExperimentError> {
            match (kv.raw(key), base) {
                (Some(name), Some(dir)) => {
                    let p: PathBuf = dir.join(name);
                    Ok((p.display().to_string(), read(&p)?))
                }
                (Some(name), None) => Ok((name.to_string(), builtin.to_string())),
                (None, _) => Ok((format!("<builtin {key}>"), builtin.to_string())),
            }
        };
        let (mf, mtext) = file("machine", BUILTIN_MACHINE)?;
        let (sf, stext) = file("schema", BUILTIN_SCHEMA)?;
        let (cf, ctext) = file("constraints", BUILTIN_CONSTRAINTS)?;
        let template = match (kv.raw("template"), base) {
            (Some("sim"), _) => SIM_TEMPLATE.to_string(),
            (Some(name), Some(dir)) => read(&dir.join(name))?,
            _ => DRONEKIT_TEMPLATE.to_string(),
        };
        let machine = parse_state_machine(&mtext)
            .and_then(|m| flatten(&m))
            .map_err(|source| ExperimentError::Machine { file: mf, source })?;
        let schema = parse_domain_schema(&stext).map_err(|source| ExperimentError::Schema { file: sf, source })?;
        let constraints = parse_constraints(&ctext, &schema, Some(&machine))
            .map_err(|source| ExperimentError::Constraints { file: cf, source })?;
        let sim = SimConfig::from_kv(&kv)?;
        let train = TrainConfig::from_kv(&kv)?;
        kv.check_all_used()?;
        let setup = Setup::new(&machine, schema, constraints)?;
        sim.validate_against(&setup.machine, &setup.schema)?;
        Ok(Experiment {
            setup,
            sim,
            train,
            template,
        })
    }

    /// Overrides the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Experiment {
        self.sim.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn simulator(&self) -> Result<QuadSim, SimError> {
        QuadSim::new(self.sim.clone(), &self.setup.machine, &self.setup.schema)
    }
}
