//! Self-describing JSON checkpoint container: named parameter arrays with
//! shapes, optional optimizer moments and free-form metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, m: &Matrix) -> Self {
        NamedTensor { name: name.into(), shape: [m.rows, m.cols], data: m.data.clone() }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.shape[0] * self.shape[1] != self.data.len() {
            return Err(Error::Invalid(format!(
                "tensor `{}` has shape {:?} but {} values",
                self.name,
                self.shape,
                self.data.len()
            )));
        }
        Ok(Matrix::from_vec(self.shape[0], self.shape[1], self.data.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub group: String,
    pub step: u64,
    pub lr: f64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

impl OptimizerState {
    pub fn capture(group: &str, opt: &Adam, lr: f64) -> Self {
        OptimizerState {
            group: group.to_string(),
            step: opt.step,
            lr,
            m: opt.m.iter().enumerate().map(|(i, m)| NamedTensor::new(format!("m{i}"), m)).collect(),
            v: opt.v.iter().enumerate().map(|(i, v)| NamedTensor::new(format!("v{i}"), v)).collect(),
        }
    }

    pub fn restore(&self) -> Result<Adam> {
        let m = self.m.iter().map(NamedTensor::to_matrix).collect::<Result<Vec<_>>>()?;
        let v = self.v.iter().map(NamedTensor::to_matrix).collect::<Result<Vec<_>>>()?;
        let mut opt = Adam::new(&m.iter().map(Matrix::shape).collect::<Vec<_>>());
        opt.step = self.step;
        opt.m = m;
        opt.v = v;
        Ok(opt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub tensors: Vec<NamedTensor>,
    pub optimizers: Vec<OptimizerState>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: kind.into(),
            tensors: Vec::new(),
            optimizers: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn push_group(&mut self, prefix: &str, tensors: &[Matrix]) {
        for (i, t) in tensors.iter().enumerate() {
            self.tensors.push(NamedTensor::new(format!("{prefix}.{i}"), t));
        }
    }

    /// Tensors whose name is `prefix.<index>`, in index order.
    pub fn group(&self, prefix: &str) -> Result<Vec<Matrix>> {
        let mut found: Vec<(usize, &NamedTensor)> = self
            .tensors
            .iter()
            .filter_map(|t| {
                let rest = t.name.strip_prefix(prefix)?.strip_prefix('.')?;
                rest.parse::<usize>().ok().map(|i| (i, t))
            })
            .collect();
        if found.is_empty() {
            return Err(Error::Invalid(format!("checkpoint has no tensor group `{prefix}`")));
        }
        found.sort_by_key(|(i, _)| *i);
        found.iter().map(|(_, t)| t.to_matrix()).collect()
    }

    pub fn optimizer(&self, group: &str) -> Option<&OptimizerState> {
        self.optimizers.iter().find(|o| o.group == group)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::checkpoint(path, e.to_string()))?;
        let probe: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| Error::checkpoint(path, format!("corrupt file: {e}")))?;
        let version = probe.get("format_version").and_then(serde_json::Value::as_u64);
        match version {
            Some(v) if v as u32 == FORMAT_VERSION => {}
            Some(v) => return Err(Error::FormatVersion { found: v as u32, expected: FORMAT_VERSION }),
            None => return Err(Error::checkpoint(path, "missing format_version")),
        }
        serde_json::from_value(probe).map_err(|e| Error::checkpoint(path, format!("corrupt file: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut c = Checkpoint::new("test");
        let m = Matrix::from_vec(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-17, std::f64::consts::PI]);
        c.push_group("net", &[m.clone(), Matrix::zeros(1, 2)]);
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.group("net").unwrap()[0], m);
    }

    #[test]
    fn version_and_corruption_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut c = Checkpoint::new("test");
        c.format_version = 99;
        c.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::FormatVersion { found: 99, .. })));
        std::fs::write(&path, b"{not json").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        assert!(Checkpoint::load(&dir.path().join("missing.json")).is_err());
    }
}
