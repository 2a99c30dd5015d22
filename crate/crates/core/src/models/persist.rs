//! Model save/load as a JSON document: model kind, kernel expression,
//! likelihood spec, parameter snapshot, inducing inputs and variational
//! state. Floats serialize in shortest-round-trip decimal form, so a
//! load reproduces the stored values bit for bit.

use super::{Dataset, GpmcModel, GprModel, SgpmcModel, SgprModel, SvgpModel, TriFactors, VgpModel};
use crate::adgraph::Value;
use crate::error::{Error, Result};
use crate::foundation::ParamSnapshot;
use crate::kernels::parse_kernel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: String,
    pub kernel: String,
    pub likelihood: String,
    pub params: Vec<ParamSnapshot>,
    pub whiten: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_mu: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_sqrt: Option<Vec<Value>>,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn z_value(&self) -> Result<Value> {
        self.z
            .clone()
            .ok_or_else(|| Error::ModelConfig(format!("{} artifact is missing z", self.model)))
    }

    fn variational(&self) -> Result<(Value, Vec<Value>)> {
        let q_mu = self
            .q_mu
            .clone()
            .ok_or_else(|| Error::ModelConfig(format!("{} artifact is missing q_mu", self.model)))?;
        let q_sqrt = self.q_sqrt.clone().ok_or_else(|| {
            Error::ModelConfig(format!("{} artifact is missing q_sqrt", self.model))
        })?;
        Ok((q_mu, q_sqrt))
    }
}

impl GprModel {
    pub fn artifact(&self) -> ModelArtifact {
        ModelArtifact {
            model: "gpr".into(),
            kernel: self.kernel_expr.to_string(),
            likelihood: self.likelihood.name(),
            params: self.store.snapshot(),
            whiten: false,
            z: None,
            q_mu: None,
            q_sqrt: None,
        }
    }

    pub fn from_artifact(a: &ModelArtifact, data: Dataset) -> Result<Self> {
        let expr = parse_kernel(&a.kernel)?;
        let mut model = GprModel::new(data, &expr)?;
        model.store.restore(&a.params)?;
        Ok(model)
    }
}

impl SgprModel {
    pub fn artifact(&self) -> ModelArtifact {
        ModelArtifact {
            model: "sgpr".into(),
            kernel: self.kernel_expr.to_string(),
            likelihood: self.likelihood.name(),
            params: self.store.snapshot(),
            whiten: false,
            z: Some(self.store.constrained(self.z)),
            q_mu: None,
            q_sqrt: None,
        }
    }

    pub fn from_artifact(a: &ModelArtifact, data: Dataset) -> Result<Self> {
        let expr = parse_kernel(&a.kernel)?;
        let mut model = SgprModel::new(data, &expr, a.z_value()?)?;
        model.store.restore(&a.params)?;
        Ok(model)
    }
}

impl SvgpModel {
    pub fn artifact(&self) -> ModelArtifact {
        ModelArtifact {
            model: "svgp".into(),
            kernel: self.kernel_expr.to_string(),
            likelihood: self.likelihood.name(),
            params: self.store.snapshot(),
            whiten: self.whiten,
            z: Some(self.store.constrained(self.z)),
            q_mu: Some(self.q_mu.clone()),
            q_sqrt: Some(self.q_sqrt.factors.clone()),
        }
    }

    pub fn from_artifact(a: &ModelArtifact, data: Dataset) -> Result<Self> {
        let expr = parse_kernel(&a.kernel)?;
        let mut model = SvgpModel::new(data, &expr, &a.likelihood, a.z_value()?, a.whiten)?;
        model.store.restore(&a.params)?;
        let (q_mu, q_sqrt) = a.variational()?;
        if q_mu.shape() != model.q_mu.shape() || q_sqrt.len() != model.q_sqrt.factors.len() {
            return Err(Error::ModelConfig(
                "variational state in artifact does not match the model shape".into(),
            ));
        }
        model.q_mu = q_mu;
        model.q_sqrt = TriFactors { factors: q_sqrt };
        Ok(model)
    }
}

impl VgpModel {
    pub fn artifact(&self) -> ModelArtifact {
        ModelArtifact {
            model: "vgp".into(),
            kernel: self.kernel_expr.to_string(),
            likelihood: self.likelihood.name(),
            params: self.store.snapshot(),
            whiten: true,
            z: None,
            q_mu: Some(self.q_mu.clone()),
            q_sqrt: Some(self.q_sqrt.factors.clone()),
        }
    }

    pub fn from_artifact(a: &ModelArtifact, data: Dataset) -> Result<Self> {
        let expr = parse_kernel(&a.kernel)?;
        let mut model = VgpModel::new(data, &expr, &a.likelihood)?;
        model.store.restore(&a.params)?;
        let (q_mu, q_sqrt) = a.variational()?;
        if q_mu.shape() != model.q_mu.shape() {
            return Err(Error::ModelConfig(
                "variational state in artifact does not match the dataset size".into(),
            ));
        }
        model.q_mu = q_mu;
        model.q_sqrt = TriFactors { factors: q_sqrt };
        Ok(model)
    }
}

impl GpmcModel {
    pub fn artifact(&self) -> ModelArtifact {
        ModelArtifact {
            model: "gpmc".into(),
            kernel: self.kernel_expr.to_string(),
            likelihood: self.likelihood.name(),
            params: self.store.snapshot(),
            whiten: true,
            z: None,
            q_mu: Some(self.v.clone()),
            q_sqrt: None,
        }
    }

    pub fn from_artifact(a: &ModelArtifact, data: Dataset) -> Result<Self> {
        let expr = parse_kernel(&a.kernel)?;
        let mut model = GpmcModel::new(data, &expr, &a.likelihood)?;
        model.store.restore(&a.params)?;
        if let Some(v) = &a.q_mu {
            if v.shape() != model.v.shape() {
                return Err(Error::ModelConfig(
                    "latent state in artifact does not match the dataset size".into(),
                ));
            }
            model.v = v.clone();
        }
        Ok(model)
    }
}

impl SgpmcModel {
    pub fn artifact(&self) -> ModelArtifact {
        ModelArtifact {
            model: "sgpmc".into(),
            kernel: self.kernel_expr.to_string(),
            likelihood: self.likelihood.name(),
            params: self.store.snapshot(),
            whiten: true,
            z: Some(self.store.constrained(self.z)),
            q_mu: Some(self.v.clone()),
            q_sqrt: None,
        }
    }

    pub fn from_artifact(a: &ModelArtifact, data: Dataset) -> Result<Self> {
        let expr = parse_kernel(&a.kernel)?;
        let mut model = SgpmcModel::new(data, &expr, &a.likelihood, a.z_value()?)?;
        model.store.restore(&a.params)?;
        if let Some(v) = &a.q_mu {
            if v.shape() != model.v.shape() {
                return Err(Error::ModelConfig(
                    "latent state in artifact does not match the model shape".into(),
                ));
            }
            model.v = v.clone();
        }
        Ok(model)
    }
}
