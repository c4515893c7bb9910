//! Run configuration: a JSON file describing the decomposition, mortar
//! space, solver controls, and output paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extension::Variant;
use crate::geometry::{DecompositionConfig, MortarElements, Rect};
use crate::mortar::MortarOrder;
use crate::verification::StudyConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MortarSpec {
    pub order: u8,
    pub elements_per_interface: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CgSpec {
    pub tol: f64,
    /// 0 selects the default cap of 10x the interface dimension.
    #[serde(default)]
    pub maxit: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSpec {
    pub table_csv: PathBuf,
    pub plot_csv: PathBuf,
    pub report_json: PathBuf,
}

/// On-disk run description; see the repository README for the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub split_x: Vec<f64>,
    #[serde(default)]
    pub split_y: Vec<f64>,
    pub base_resolutions: Vec<[usize; 2]>,
    pub mortar: MortarSpec,
    pub variant: String,
    pub levels: usize,
    pub cg: CgSpec,
    pub outputs: OutputSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be positive".into()));
        }
        if !(self.cg.tol > 0.0 && self.cg.tol < 1.0) {
            return Err(Error::Config(format!(
                "cg.tol must lie in (0, 1), got {}",
                self.cg.tol
            )));
        }
        if self.mortar.elements_per_interface == 0 {
            return Err(Error::Config("mortar.elements_per_interface must be positive".into()));
        }
        MortarOrder::from_int(self.mortar.order)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.base_resolutions.iter().any(|r| r[0] == 0 || r[1] == 0) {
            return Err(Error::Config("base resolutions must be positive".into()));
        }
        self.variants()?;
        Ok(())
    }

    /// Requested variants: flat, sharp, or both (flat first).
    pub fn variants(&self) -> Result<Vec<Variant>> {
        match self.variant.as_str() {
            "flat" => Ok(vec![Variant::Flat]),
            "sharp" => Ok(vec![Variant::Sharp]),
            "both" => Ok(vec![Variant::Flat, Variant::Sharp]),
            other => Err(Error::Config(format!(
                "variant must be flat, sharp, or both; got {other}"
            ))),
        }
    }

    pub fn decomposition(&self) -> DecompositionConfig {
        DecompositionConfig {
            domain: Rect::new(self.domain.x0, self.domain.y0, self.domain.x1, self.domain.y1),
            split_x: self.split_x.clone(),
            split_y: self.split_y.clone(),
            resolutions: self.base_resolutions.iter().map(|r| (r[0], r[1])).collect(),
            mortar_elements: MortarElements::Uniform(self.mortar.elements_per_interface),
        }
    }

    /// Study configuration with optional command-line overrides.
    pub fn study(
        &self,
        variant_override: Option<&str>,
        order_override: Option<u8>,
    ) -> Result<StudyConfig> {
        let variants = match variant_override {
            Some(v) => {
                let mut probe = self.clone();
                probe.variant = v.to_string();
                probe.variants()?
            }
            None => self.variants()?,
        };
        let order = MortarOrder::from_int(order_override.unwrap_or(self.mortar.order))?;
        Ok(StudyConfig {
            decomposition: self.decomposition(),
            orders: vec![order],
            variants,
            levels: self.levels,
            cg_tol: self.cg.tol,
            cg_maxit: if self.cg.maxit == 0 {
                None
            } else {
                Some(self.cg.maxit)
            },
        })
    }

    /// Redirects every output file into `dir`, keeping file names.
    pub fn redirect_outputs(&mut self, dir: &Path) {
        for p in [
            &mut self.outputs.table_csv,
            &mut self.outputs.plot_csv,
            &mut self.outputs.report_json,
        ] {
            if let Some(name) = p.file_name().map(|n| n.to_owned()) {
                *p = dir.join(name);
            }
        }
    }
}
