use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cldeepc_core::controller::ControllerKind;
use cldeepc_core::experiment::ExperimentConfig;

/// Flat TOML file with the experiment field names; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub controller: Option<String>,
    pub nbar: Option<usize>,
    pub p: Option<usize>,
    pub f: Option<usize>,
    pub q_weight: Option<f64>,
    pub r_weight: Option<f64>,
    pub r_delta_weight: Option<f64>,
    pub lambda_slack: Option<f64>,
    pub du_max: Option<f64>,
    pub u_max: Option<f64>,
    pub y_max: Option<f64>,
    pub noise_var: Option<f64>,
    pub input_var: Option<f64>,
    pub steps: Option<usize>,
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
    pub max_condition: Option<f64>,
    pub qp_tol: Option<f64>,
    pub out: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Overwrites the fields of `cfg` that are set here.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(c) = &self.controller {
            cfg.controller = c.parse::<ControllerKind>()?;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            nbar,
            p,
            f,
            q_weight,
            r_weight,
            r_delta_weight,
            lambda_slack,
            du_max,
            u_max,
            y_max,
            noise_var,
            input_var,
            steps,
            realizations,
            seed,
            max_condition,
            qp_tol
        );
        Ok(())
    }

    /// Later layers win.
    pub fn merge(mut self, other: &FileConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if other.$field.is_some() {
                    self.$field = other.$field.clone();
                }
            )*};
        }
        take!(
            controller,
            nbar,
            p,
            f,
            q_weight,
            r_weight,
            r_delta_weight,
            lambda_slack,
            du_max,
            u_max,
            y_max,
            noise_var,
            input_var,
            steps,
            realizations,
            seed,
            max_condition,
            qp_tol,
            out
        );
        self
    }
}
