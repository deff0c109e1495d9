//! Offline data: seeded rollouts, the unlabeled pair dataset, the labeled
//! preference dataset, link functions, and exact concentrability.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, EpisodicMdp, TabularPolicy, Trajectory};
use crate::rng::{self, sample_index, streams};

/// Link function turning a return difference into a preference probability.
///
/// `phi` must be increasing on `[-R, R]` and satisfy `phi(x) + phi(-x) = 1`.
#[derive(Clone, Copy)]
pub struct LinkFunction {
    kind: LinkKind,
    phi: fn(f64) -> f64,
    dphi: fn(f64) -> f64,
    kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Sigmoid,
    CustomMonotone,
}

impl std::fmt::Debug for LinkFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinkFunction")
            .field("kind", &self.kind)
            .field("kappa", &self.kappa)
            .finish()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

const LINK_GRID: usize = 2001;

impl LinkFunction {
    /// Bradley-Terry-Luce link, `kappa = 1 / (sigma(R) (1 - sigma(R)))`.
    pub fn sigmoid(return_bound: f64) -> Self {
        LinkFunction {
            kind: LinkKind::Sigmoid,
            phi: sigmoid,
            dphi: sigmoid_derivative,
            kappa: 1.0 / sigmoid_derivative(return_bound),
        }
    }

    /// A user-supplied link, validated on a dense grid over `[-R, R]`.
    pub fn custom(phi: fn(f64) -> f64, dphi: fn(f64) -> f64, return_bound: f64) -> Result<Self> {
        if !(return_bound.is_finite() && return_bound > 0.0) {
            return Err(Error::InvalidParameter(format!("return bound {return_bound}")));
        }
        let mut prev = f64::NEG_INFINITY;
        let mut min_slope = f64::INFINITY;
        for i in 0..LINK_GRID {
            let x = -return_bound + 2.0 * return_bound * i as f64 / (LINK_GRID - 1) as f64;
            let p = phi(x);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("link value {p} at {x} outside [0, 1]")));
            }
            if p < prev {
                return Err(Error::InvalidParameter(format!("link decreases at {x}")));
            }
            if (p + phi(-x) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "link is not symmetric at {x}: phi(x) + phi(-x) = {}",
                    p + phi(-x)
                )));
            }
            prev = p;
            min_slope = min_slope.min(dphi(x));
        }
        if !(min_slope.is_finite() && min_slope > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "inf of link derivative on [-R, R] is {min_slope}; kappa would be infinite"
            )));
        }
        Ok(LinkFunction {
            kind: LinkKind::CustomMonotone,
            phi,
            dphi,
            kappa: 1.0 / min_slope,
        })
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        (self.phi)(x)
    }

    #[inline]
    pub fn dphi(&self, x: f64) -> f64 {
        (self.dphi)(x)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub policy_id: String,
    pub mdp_hash: String,
}

/// `D_traj`: unlabeled trajectory pairs drawn i.i.d. from the reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPairDataset {
    pub pairs: Vec<(Trajectory, Trajectory)>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub tau0: Trajectory,
    pub tau1: Trajectory,
    /// `true` when `tau1` is preferred.
    pub y: bool,
}

/// `D_pref`: labeled pairs `(tau0, tau1, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub samples: Vec<PreferenceSample>,
    pub provenance: Provenance,
}

impl TrajectoryPairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Both members of every pair, in order: the `2N` flattened trajectories.
    pub fn flattened(&self) -> impl Iterator<Item = &Trajectory> {
        self.pairs.iter().flat_map(|(a, b)| [a, b])
    }

    /// Splits into the first and second halves (first half gets the extra
    /// pair when `N` is odd).
    pub fn split_halves(&self) -> (TrajectoryPairDataset, TrajectoryPairDataset) {
        let mid = self.pairs.len().div_ceil(2);
        let first = TrajectoryPairDataset {
            pairs: self.pairs[..mid].to_vec(),
            provenance: self.provenance.clone(),
        };
        let second = TrajectoryPairDataset {
            pairs: self.pairs[mid..].to_vec(),
            provenance: self.provenance.clone(),
        };
        (first, second)
    }
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Drops labels, keeping the pairs.
    pub fn unlabeled(&self) -> TrajectoryPairDataset {
        TrajectoryPairDataset {
            pairs: self.samples.iter().map(|s| (s.tau0.clone(), s.tau1.clone())).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Samples one trajectory from `d^pi`.
pub fn rollout<R: Rng + ?Sized>(mdp: &EpisodicMdp, policy: &TabularPolicy, rng: &mut R) -> Trajectory {
    rollout_with(mdp, rng, |h, s| policy.row(h, s))
}

/// Rollout drawing the step-`h` action from `row_for(h, s)`.
pub(crate) fn rollout_with<'a, R: Rng + ?Sized>(
    mdp: &EpisodicMdp,
    rng: &mut R,
    row_for: impl Fn(usize, usize) -> &'a [f64],
) -> Trajectory {
    let horizon = mdp.horizon();
    let mut steps = Vec::with_capacity(horizon);
    let mut s = mdp.initial_state();
    for h in 0..horizon {
        let a = sample_index(row_for(h, s), rng.random::<f64>());
        steps.push((s, a));
        if h + 1 < horizon {
            s = sample_index(mdp.transitions().row(h, s, a), rng.random::<f64>());
        }
    }
    Trajectory::new(steps)
}

fn provenance(mdp: &EpisodicMdp, seed: u64, policy_id: &str) -> Provenance {
    Provenance {
        seed,
        policy_id: policy_id.to_string(),
        mdp_hash: mdp.content_hash(),
    }
}

/// Draws `n` i.i.d. trajectory pairs under `pi_ref`. Pure in `(mdp, pi_ref, n, seed)`.
pub fn generate_traj_dataset(
    mdp: &EpisodicMdp,
    pi_ref: &TabularPolicy,
    n: usize,
    seed: u64,
    policy_id: &str,
) -> Result<TrajectoryPairDataset> {
    if n == 0 {
        return Err(Error::Empty("trajectory dataset size N must be at least 1".into()));
    }
    mdp.dims().expect_same(&pi_ref.dims(), "reference policy")?;
    let mut rng = rng::stream(seed, streams::TRAJ_DATA);
    let pairs = (0..n)
        .map(|_| (rollout(mdp, pi_ref, &mut rng), rollout(mdp, pi_ref, &mut rng)))
        .collect();
    Ok(TrajectoryPairDataset {
        pairs,
        provenance: provenance(mdp, seed, policy_id),
    })
}

/// `P(y = 1 | tau0, tau1) = phi(r*(tau1) - r*(tau0))`.
pub fn preference_probability(mdp: &EpisodicMdp, link: &LinkFunction, tau0: &Trajectory, tau1: &Trajectory) -> f64 {
    let r = mdp.true_reward();
    link.phi(mdp::return_of(r, tau1) - mdp::return_of(r, tau0))
}

/// One Bernoulli draw of the preference label for a fixed pair.
pub fn sample_label<R: Rng + ?Sized>(
    mdp: &EpisodicMdp,
    link: &LinkFunction,
    tau0: &Trajectory,
    tau1: &Trajectory,
    rng: &mut R,
) -> bool {
    rng.random::<f64>() < preference_probability(mdp, link, tau0, tau1)
}

/// Draws `m` labeled pairs: both trajectories from `pi_ref`, then
/// `y ~ Bernoulli(phi(r*(tau1) - r*(tau0)))`.
pub fn generate_pref_dataset(
    mdp: &EpisodicMdp,
    pi_ref: &TabularPolicy,
    m: usize,
    link: &LinkFunction,
    seed: u64,
    policy_id: &str,
) -> Result<PreferenceDataset> {
    if m == 0 {
        return Err(Error::Empty("preference dataset size M must be at least 1".into()));
    }
    if !link.kappa().is_finite() {
        return Err(Error::InvalidParameter("link kappa must be finite".into()));
    }
    mdp.dims().expect_same(&pi_ref.dims(), "reference policy")?;
    let mut rng = rng::stream(seed, streams::PREF_DATA);
    let samples = (0..m)
        .map(|_| {
            let tau0 = rollout(mdp, pi_ref, &mut rng);
            let tau1 = rollout(mdp, pi_ref, &mut rng);
            let y = sample_label(mdp, link, &tau0, &tau1, &mut rng);
            PreferenceSample { tau0, tau1, y }
        })
        .collect();
    Ok(PreferenceDataset {
        samples,
        provenance: provenance(mdp, seed, policy_id),
    })
}

/// Trajectory-level and step-level density ratios between `pi_star` and `pi_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrabilityReport {
    /// `C_tr = max_tau d^{pi*}(tau) / d^{ref}(tau)`; `+inf` on a support violation.
    #[serde(with = "crate::serde_float")]
    pub c_traj: f64,
    /// `C_step = max_{h,s,a} d^{pi*}_h(s,a) / d^{ref}_h(s,a)`.
    #[serde(with = "crate::serde_float")]
    pub c_step: f64,
    pub traj_witness: Option<Trajectory>,
    /// `(h, s, a)` attaining `c_step`.
    pub step_witness: Option<(usize, usize, usize)>,
    /// Set when `pi_star` reaches something `pi_ref` never does.
    pub support_violation: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    match (num > 0.0, den > 0.0) {
        (false, _) => 0.0,
        (true, true) => num / den,
        (true, false) => f64::INFINITY,
    }
}

/// Exact `C_tr` and `C_step` by trajectory enumeration.
pub fn concentrability(
    mdp: &EpisodicMdp,
    pi_ref: &TabularPolicy,
    pi_star: &TabularPolicy,
    cap: usize,
) -> Result<ConcentrabilityReport> {
    let d_ref = mdp::trajectory_distribution(mdp, pi_ref, cap)?;
    let d_star = mdp::trajectory_distribution(mdp, pi_star, cap)?;

    let mut c_traj = 0.0;
    let mut traj_witness = None;
    for (tau, p_star) in &d_star.entries {
        let r = ratio(*p_star, d_ref.prob(tau));
        if r > c_traj || traj_witness.is_none() {
            c_traj = r;
            traj_witness = Some(tau.clone());
        }
    }

    let v_ref = mdp::visitation(mdp, pi_ref)?;
    let v_star = mdp::visitation(mdp, pi_star)?;
    let dims = mdp.dims();
    let mut c_step = 0.0;
    let mut step_witness = None;
    for i in 0..dims.cells() {
        let (h, s, a) = dims.unflatten(i);
        let num = v_star.state_action(h, s, a);
        if num == 0.0 {
            continue;
        }
        let r = ratio(num, v_ref.state_action(h, s, a));
        if r > c_step || step_witness.is_none() {
            c_step = r;
            step_witness = Some((h, s, a));
        }
    }

    let support_violation = c_traj.is_infinite();
    if support_violation {
        log::warn!("reference policy does not cover the compared policy: C_tr = inf");
    }
    Ok(ConcentrabilityReport {
        c_traj,
        c_step,
        traj_witness,
        step_witness,
        support_violation,
    })
}

// ---------------------------------------------------------------------------
// JSON Lines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Traj,
    Pref,
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: DatasetKind,
    pub seed: u64,
    pub policy_id: String,
    pub mdp_hash: String,
    pub records: usize,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    tau0: Trajectory,
    tau1: Trajectory,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    y: Option<u8>,
}

fn write_header<W: Write>(w: &mut W, kind: DatasetKind, prov: &Provenance, records: usize) -> std::io::Result<()> {
    let header = DatasetHeader {
        kind,
        seed: prov.seed,
        policy_id: prov.policy_id.clone(),
        mdp_hash: prov.mdp_hash.clone(),
        records,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Parse(e.to_string())
}

fn read_records<R: BufRead>(reader: R, kind: DatasetKind) -> Result<(Provenance, Vec<PairRecord>)> {
    let mut lines = reader.lines().enumerate();
    let header: DatasetHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line.map_err(io_err)?)
            .map_err(|e| Error::Parse(format!("line 1: bad header: {e}")))?,
        None => return Err(Error::Parse("line 1: missing header".into())),
    };
    if header.kind != kind {
        return Err(Error::Parse(format!(
            "line 1: expected a {kind:?} dataset, found {:?}",
            header.kind
        )));
    }
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        match (kind, rec.y) {
            (DatasetKind::Pref, None) => return Err(Error::Parse(format!("line {}: missing label y", i + 1))),
            (DatasetKind::Pref, Some(y)) if y > 1 => {
                return Err(Error::Parse(format!("line {}: label must be 0 or 1, got {y}", i + 1)))
            }
            (DatasetKind::Traj, Some(_)) => {
                return Err(Error::Parse(format!("line {}: unexpected label in trajectory dataset", i + 1)))
            }
            _ => {}
        }
        records.push(rec);
    }
    if records.len() != header.records {
        return Err(Error::Parse(format!(
            "header announces {} records, found {}",
            header.records,
            records.len()
        )));
    }
    let prov = Provenance {
        seed: header.seed,
        policy_id: header.policy_id,
        mdp_hash: header.mdp_hash,
    };
    Ok((prov, records))
}

impl TrajectoryPairDataset {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_header(&mut w, DatasetKind::Traj, &self.provenance, self.pairs.len())?;
        for (tau0, tau1) in &self.pairs {
            let rec = PairRecord {
                tau0: tau0.clone(),
                tau1: tau1.clone(),
                y: None,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let (provenance, records) = read_records(reader, DatasetKind::Traj)?;
        Ok(TrajectoryPairDataset {
            pairs: records.into_iter().map(|r| (r.tau0, r.tau1)).collect(),
            provenance,
        })
    }

    /// Checks every trajectory against the MDP's dimensions.
    pub fn validate(&self, dims: &mdp::Dims) -> Result<()> {
        self.flattened().try_for_each(|t| t.validate(dims))
    }
}

impl PreferenceDataset {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_header(&mut w, DatasetKind::Pref, &self.provenance, self.samples.len())?;
        for s in &self.samples {
            let rec = PairRecord {
                tau0: s.tau0.clone(),
                tau1: s.tau1.clone(),
                y: Some(s.y as u8),
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let (provenance, records) = read_records(reader, DatasetKind::Pref)?;
        Ok(PreferenceDataset {
            samples: records
                .into_iter()
                .map(|r| PreferenceSample {
                    tau0: r.tau0,
                    tau1: r.tau1,
                    y: r.y == Some(1),
                })
                .collect(),
            provenance,
        })
    }

    pub fn validate(&self, dims: &mdp::Dims) -> Result<()> {
        self.samples.iter().try_for_each(|s| {
            s.tau0.validate(dims)?;
            s.tau1.validate(dims)
        })
    }
}
