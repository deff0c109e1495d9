use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dims, EpisodicMdp, RewardModel, TabularPolicy, TransitionKernel};
use crate::error::{Error, Result};

pub(crate) type Nested3 = Vec<Vec<Vec<f64>>>;
pub(crate) type Nested4 = Vec<Vec<Vec<Vec<f64>>>>;

pub(crate) fn to_nested3(dims: &Dims, flat: &[f64]) -> Nested3 {
    (0..dims.horizon)
        .map(|h| {
            (0..dims.num_states)
                .map(|s| flat[dims.row(h, s)].to_vec())
                .collect()
        })
        .collect()
}

pub(crate) fn from_nested3(dims: &Dims, nested: &Nested3, what: &str) -> Result<Vec<f64>> {
    if nested.len() != dims.horizon {
        return Err(Error::dims(format!("{what} steps"), dims.horizon, nested.len()));
    }
    let mut flat = Vec::with_capacity(dims.cells());
    for (h, layer) in nested.iter().enumerate() {
        if layer.len() != dims.num_states {
            return Err(Error::dims(format!("{what}[{h}] states"), dims.num_states, layer.len()));
        }
        for (s, row) in layer.iter().enumerate() {
            if row.len() != dims.num_actions {
                return Err(Error::dims(
                    format!("{what}[{h}][{s}] actions"),
                    dims.num_actions,
                    row.len(),
                ));
            }
            flat.extend_from_slice(row);
        }
    }
    Ok(flat)
}

pub(crate) fn to_nested4(dims: &Dims, flat: &[f64]) -> Nested4 {
    let n = dims.num_states;
    (0..dims.horizon)
        .map(|h| {
            (0..n)
                .map(|s| {
                    (0..dims.num_actions)
                        .map(|a| {
                            let start = dims.idx(h, s, a) * n;
                            flat[start..start + n].to_vec()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub(crate) fn from_nested4(dims: &Dims, nested: &Nested4, what: &str) -> Result<Vec<f64>> {
    if nested.len() != dims.horizon {
        return Err(Error::dims(format!("{what} steps"), dims.horizon, nested.len()));
    }
    let mut flat = Vec::with_capacity(dims.cells() * dims.num_states);
    for (h, layer) in nested.iter().enumerate() {
        if layer.len() != dims.num_states {
            return Err(Error::dims(format!("{what}[{h}] states"), dims.num_states, layer.len()));
        }
        for (s, by_action) in layer.iter().enumerate() {
            if by_action.len() != dims.num_actions {
                return Err(Error::dims(
                    format!("{what}[{h}][{s}] actions"),
                    dims.num_actions,
                    by_action.len(),
                ));
            }
            for (a, row) in by_action.iter().enumerate() {
                if row.len() != dims.num_states {
                    return Err(Error::dims(
                        format!("{what}[{h}][{s}][{a}] next states"),
                        dims.num_states,
                        row.len(),
                    ));
                }
                flat.extend_from_slice(row);
            }
        }
    }
    Ok(flat)
}

/// On-disk MDP description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
    pub return_bound: f64,
    /// `[h][s][a][s']`
    pub transitions: Nested4,
    /// `[h][s][a]`
    pub reward: Nested3,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<EpisodicMdp> {
        let dims = Dims::new(self.horizon, self.num_states, self.num_actions)?;
        let transitions =
            TransitionKernel::new(dims, from_nested4(&dims, &self.transitions, "transitions")?)?;
        let reward = RewardModel::new(dims, from_nested3(&dims, &self.reward, "reward")?)?;
        EpisodicMdp::new(self.initial_state, self.return_bound, transitions, reward)
    }
}

impl From<&EpisodicMdp> for MdpFile {
    fn from(mdp: &EpisodicMdp) -> Self {
        let dims = mdp.dims();
        MdpFile {
            num_states: dims.num_states,
            num_actions: dims.num_actions,
            horizon: dims.horizon,
            initial_state: mdp.initial_state(),
            return_bound: mdp.return_bound(),
            transitions: to_nested4(&dims, mdp.transitions().as_slice()),
            reward: to_nested3(&dims, mdp.true_reward().as_slice()),
        }
    }
}

impl EpisodicMdp {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str::<MdpFile>(text)?.into_mdp()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&MdpFile::from(self)).expect("MDP serialization is infallible")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Hex SHA-256 of the compact JSON encoding; recorded in dataset provenance.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_string(&MdpFile::from(self)).expect("MDP serialization is infallible");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct PolicyFile {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `[h][s][a]`
    probs: Nested3,
}

impl TryFrom<PolicyFile> for TabularPolicy {
    type Error = Error;

    fn try_from(file: PolicyFile) -> Result<Self> {
        let dims = Dims::new(file.horizon, file.num_states, file.num_actions)?;
        TabularPolicy::new(dims, from_nested3(&dims, &file.probs, "probs")?)
    }
}

impl From<TabularPolicy> for PolicyFile {
    fn from(policy: TabularPolicy) -> Self {
        let dims = policy.dims();
        PolicyFile {
            num_states: dims.num_states,
            num_actions: dims.num_actions,
            horizon: dims.horizon,
            probs: to_nested3(&dims, policy.as_slice()),
        }
    }
}

/// Serialized form shared by reward and value tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// `[h][s][a]`
    pub values: Nested3,
}

impl TableFile {
    pub fn from_flat(dims: Dims, flat: &[f64]) -> Self {
        TableFile {
            num_states: dims.num_states,
            num_actions: dims.num_actions,
            horizon: dims.horizon,
            values: to_nested3(&dims, flat),
        }
    }

    pub fn to_flat(&self) -> Result<(Dims, Vec<f64>)> {
        let dims = Dims::new(self.horizon, self.num_states, self.num_actions)?;
        let flat = from_nested3(&dims, &self.values, "values")?;
        Ok((dims, flat))
    }
}
