//! Parsing of user-supplied run configuration: parameter files, `--set`
//! overrides, grid axis specs, continuation windows and start specs.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::atlas::GridSpec;
use crate::error::{Error, Result};
use crate::model::{ParamId, ParameterSet, SteadyVector};

/// A `key=value` parameter override.
pub fn parse_set(spec: &str) -> Result<(ParamId, f64)> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{spec}`")))?;
    let id = ParamId::parse(key.trim())?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{value}` is not a number")))?;
    if !value.is_finite() {
        return Err(Error::Config(format!("`{spec}` must be finite")));
    }
    Ok((id, value))
}

/// A grid axis `param:lo:hi:count`, e.g. `rho_iaa:0.01:3:60`.
pub fn parse_grid_spec(spec: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    let (name, lo, hi, count, log) = match parts.as_slice() {
        [name, lo, hi, count] => (name, lo, hi, count, false),
        [name, lo, hi, count, "log"] => (name, lo, hi, count, true),
        _ => {
            return Err(Error::Config(format!(
                "expected param:lo:hi:count[:log], got `{spec}`"
            )))
        }
    };
    let param = ParamId::parse(name)?;
    let lo: f64 = lo
        .parse()
        .map_err(|_| Error::Config(format!("bad axis bound `{lo}`")))?;
    let hi: f64 = hi
        .parse()
        .map_err(|_| Error::Config(format!("bad axis bound `{hi}`")))?;
    let count: usize = count
        .parse()
        .map_err(|_| Error::Config(format!("bad axis count `{count}`")))?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("axis bounds must be finite in `{spec}`")));
    }
    let mut axis = GridSpec::new(param, lo, hi, count)?;
    if log {
        if lo <= 0.0 {
            return Err(Error::Config(format!(
                "log axis needs positive bounds in `{spec}`"
            )));
        }
        axis.log = true;
    }
    Ok(axis)
}

/// A continuation window `lo:hi`.
pub fn parse_window(spec: &str) -> Result<(f64, f64)> {
    let (lo, hi) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("expected lo:hi, got `{spec}`")))?;
    let lo: f64 = lo
        .parse()
        .map_err(|_| Error::Config(format!("bad window bound `{lo}`")))?;
    let hi: f64 = hi
        .parse()
        .map_err(|_| Error::Config(format!("bad window bound `{hi}`")))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("window must satisfy lo < hi in `{spec}`")));
    }
    Ok((lo, hi))
}

/// Where a continuation run starts.
#[derive(Debug, Clone, PartialEq)]
pub enum FromSpec {
    /// The analytic homogeneous solution.
    Trivial,
    /// A stored steady pattern.
    File(PathBuf),
    /// A stored pattern concatenated `copies` times and settled by time
    /// integration before refinement.
    Tile { path: PathBuf, copies: usize },
}

pub fn parse_from_spec(spec: &str) -> Result<FromSpec> {
    if spec == "trivial" {
        return Ok(FromSpec::Trivial);
    }
    if let Some(rest) = spec.strip_prefix("tile:") {
        let (path, copies) = rest
            .rsplit_once(':')
            .ok_or_else(|| Error::Config(format!("expected tile:<file>:<copies>, got `{spec}`")))?;
        let copies: usize = copies
            .parse()
            .map_err(|_| Error::Config(format!("bad copy count in `{spec}`")))?;
        if copies == 0 || path.is_empty() {
            return Err(Error::Config(format!("bad tile spec `{spec}`")));
        }
        return Ok(FromSpec::Tile {
            path: PathBuf::from(path),
            copies,
        });
    }
    Ok(FromSpec::File(PathBuf::from(spec)))
}

/// Serialized steady pattern: interior PIN and IAA values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub n: usize,
    pub p: Vec<f64>,
    pub a: Vec<f64>,
}

impl StateFile {
    pub fn from_steady(u: &SteadyVector) -> StateFile {
        let n = u.len() / 2;
        StateFile {
            n,
            p: u.as_slice()[..n].to_vec(),
            a: u.as_slice()[n..].to_vec(),
        }
    }

    pub fn to_steady(&self) -> Result<SteadyVector> {
        if self.p.len() != self.n || self.a.len() != self.n || self.n < 2 {
            return Err(Error::Config(format!(
                "state file shape mismatch: n={} p={} a={}",
                self.n,
                self.p.len(),
                self.a.len()
            )));
        }
        if !self.p.iter().chain(self.a.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("state file contains non-finite values".into()));
        }
        let mut u = DVector::zeros(2 * self.n);
        for i in 0..self.n {
            u[i] = self.p[i];
            u[self.n + i] = self.a[i];
        }
        Ok(u)
    }
}

pub fn load_state(path: &Path) -> Result<SteadyVector> {
    let text = std::fs::read_to_string(path)?;
    parse_state_json(&text)
}

pub fn parse_state_json(text: &str) -> Result<SteadyVector> {
    let file: StateFile = serde_json::from_str(text)?;
    file.to_steady()
}

pub fn save_state(path: &Path, u: &SteadyVector) -> Result<()> {
    let file = StateFile::from_steady(u);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParameterSet> {
    let text = std::fs::read_to_string(path)?;
    parse_params_json(&text)
}

pub fn parse_params_json(text: &str) -> Result<ParameterSet> {
    let params: ParameterSet = serde_json::from_str(text)?;
    params.validate()?;
    Ok(params)
}
