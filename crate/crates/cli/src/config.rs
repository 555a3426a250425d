use std::path::{Path, PathBuf};

use bimlta::simulation::Scenario;
use bimlta::ModelConfig;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fit,
    Select,
    Simulate,
    Binarize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    /// Candidate numbers of components.
    pub components: Vec<usize>,
    /// Candidate numbers of segments.
    pub segments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarizeSection {
    pub table: PathBuf,
    pub rules: PathBuf,
}

/// A run file. Relative paths are taken relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub incidence: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    pub select: Option<SelectSection>,
    pub simulate: Option<Scenario>,
    pub binarize: Option<BinarizeSection>,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.incidence, &mut config.covariates, &mut config.output]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        if let Some(b) = config.binarize.as_mut() {
            resolve(base, &mut b.table);
            resolve(base, &mut b.rules);
        }
        Ok(config)
    }

    /// Checks that the sections `mode` needs are present and that every
    /// referenced input exists.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let need = |p: &Option<PathBuf>, what: &str| -> Result<()> {
            let p = p
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("mode {mode:?} needs '{what}'")))?;
            exists(p)
        };
        match mode {
            Mode::Fit => {
                need(&self.incidence, "incidence")?;
                if let Some(c) = &self.covariates {
                    exists(c)?;
                }
            }
            Mode::Select => {
                need(&self.incidence, "incidence")?;
                if let Some(c) = &self.covariates {
                    exists(c)?;
                }
                let s = self
                    .select
                    .as_ref()
                    .ok_or_else(|| CliError::Config("mode select needs a [select] section".into()))?;
                if s.components.is_empty() || s.segments.is_empty() {
                    return Err(CliError::Config("select ranges must be non-empty".into()));
                }
            }
            Mode::Simulate => {
                let s = self
                    .simulate
                    .as_ref()
                    .ok_or_else(|| CliError::Config("mode simulate needs a [simulate] section".into()))?;
                s.validate()?;
            }
            Mode::Binarize => {
                let b = self
                    .binarize
                    .as_ref()
                    .ok_or_else(|| CliError::Config("mode binarize needs a [binarize] section".into()))?;
                exists(&b.table)?;
                exists(&b.rules)?;
            }
        }
        Ok(())
    }
}

fn exists(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        ))
    }
}
