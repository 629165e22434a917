//! Workbench configuration file: which spin systems to load, default
//! microwave frequency and field, constants overrides and the output
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use spinbench::constants::PhysicalConstants;
use spinbench::spin_core::{load_spin_system, make_subsite_family, SpinSystem};

#[derive(Debug, Deserialize)]
struct ConfigFile {
    /// Spin-system parameter files, relative to the config file.
    system_files: Vec<PathBuf>,
    /// When true, each loaded system is expanded into its C2 subsite pair.
    #[serde(default)]
    expand_subsites: bool,
    mw_ghz: f64,
    field_mt: f64,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    #[serde(default)]
    constants: Option<PhysicalConstants>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Loaded and validated workbench configuration.
#[derive(Debug)]
pub struct WorkbenchConfig {
    pub systems: Vec<SpinSystem>,
    pub mw_ghz: f64,
    pub field_mt: f64,
    pub out_dir: PathBuf,
    pub constants: PhysicalConstants,
}

impl WorkbenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: ConfigFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if file.system_files.is_empty() {
            bail!("config lists no spin systems");
        }
        if file.mw_ghz <= 0.0 || file.mw_ghz.is_nan() {
            bail!("mw_ghz must be positive, got {}", file.mw_ghz);
        }
        if file.field_mt <= 0.0 || file.field_mt.is_nan() {
            bail!("field_mt must be positive, got {}", file.field_mt);
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut systems = Vec::new();
        for rel in &file.system_files {
            let sys_path = base.join(rel);
            let system = load_spin_system(&sys_path)
                .with_context(|| format!("loading spin system {}", sys_path.display()))?;
            if file.expand_subsites {
                let family = make_subsite_family(&system)?;
                systems.push(family.base);
                systems.push(family.partner);
            } else {
                systems.push(system);
            }
        }
        Ok(WorkbenchConfig {
            systems,
            mw_ghz: file.mw_ghz,
            field_mt: file.field_mt,
            out_dir: file.out_dir,
            constants: file.constants.unwrap_or_default(),
        })
    }
}
