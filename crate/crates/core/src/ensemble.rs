//! Numbered ensemble learners: plurality voting over maneuvers, simple averaging
//! of Gaussian parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ManeuverClass, TrajectorySample, MANEUVER_COUNT};
use crate::derive_seed;
use crate::model::{BaseLearner, BaseLearnerPrediction, GaussianStep, ManeuverDistribution, ModelError, Variant};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cannot combine members: {0}")]
    Composition(String),
    #[error("member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: ModelError,
    },
}

/// A one-hot maneuver vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotVote {
    pub v: [u8; MANEUVER_COUNT],
}

impl OneHotVote {
    pub fn of(m: ManeuverClass) -> Self {
        let mut v = [0; MANEUVER_COUNT];
        v[m.slot()] = 1;
        OneHotVote { v }
    }

    pub fn maneuver(&self) -> ManeuverClass {
        let slot = self.v.iter().position(|&b| b == 1).expect("one-hot vote");
        ManeuverClass::from_slot(slot).expect("slot < 6")
    }
}

/// One-hot at the most probable maneuver; ties go to the lowest index.
pub fn encode_one_hot(p: &ManeuverDistribution) -> OneHotVote {
    OneHotVote::of(p.argmax())
}

/// Winner of the column sums and the vote shares. Ties are broken uniformly at
/// random among the tied maneuvers.
pub fn plurality_vote<R: Rng + ?Sized>(
    votes: &[OneHotVote],
    tie_rng: &mut R,
) -> Result<(ManeuverClass, [f64; MANEUVER_COUNT]), EnsembleError> {
    if votes.is_empty() {
        return Err(EnsembleError::Precondition("no votes".into()));
    }
    let mut counts = [0usize; MANEUVER_COUNT];
    for vote in votes {
        for (c, &b) in counts.iter_mut().zip(&vote.v) {
            *c += usize::from(b);
        }
    }
    let best = *counts.iter().max().expect("six counts");
    let tied: Vec<usize> = (0..MANEUVER_COUNT).filter(|&j| counts[j] == best).collect();
    let slot = if tied.len() == 1 {
        tied[0]
    } else {
        tied[tie_rng.random_range(0..tied.len())]
    };
    let n = votes.len() as f64;
    let shares = counts.map(|c| c as f64 / n);
    Ok((ManeuverClass::from_slot(slot).expect("slot < 6"), shares))
}

pub fn decode_to_distribution(winner: ManeuverClass) -> ManeuverDistribution {
    ManeuverDistribution::one_hot(winner)
}

fn as_array(s: &GaussianStep) -> [f64; 5] {
    [s.m_x, s.m_y, s.s_x, s.s_y, s.r]
}

/// Elementwise mean of the members' Gaussian parameters.
pub fn average_gaussians(preds: &[&BaseLearnerPrediction]) -> Result<Vec<Vec<GaussianStep>>, EnsembleError> {
    let first = preds
        .first()
        .ok_or_else(|| EnsembleError::Precondition("no member predictions".into()))?;
    let rows = first.gaussians.len();
    let cols = first.gaussians.first().map_or(0, Vec::len);
    for p in preds {
        if p.variant != first.variant || p.gaussians.len() != rows || p.gaussians.iter().any(|s| s.len() != cols) {
            return Err(EnsembleError::Composition(format!(
                "member shapes differ: {:?} {rows}×{cols} vs {:?} {}×{}",
                first.variant,
                p.variant,
                p.gaussians.len(),
                p.gaussians.first().map_or(0, Vec::len)
            )));
        }
    }
    let k = preds.len() as f64;
    Ok((0..rows)
        .map(|m| {
            (0..cols)
                .map(|t| {
                    // Offsets from the first member keep identical members exact.
                    let base = as_array(&first.gaussians[m][t]);
                    let mut acc = [0.0; 5];
                    for p in &preds[1..] {
                        for ((a, v), b) in acc.iter_mut().zip(as_array(&p.gaussians[m][t])).zip(base) {
                            *a += v - b;
                        }
                    }
                    GaussianStep {
                        m_x: base[0] + acc[0] / k,
                        m_y: base[1] + acc[1] / k,
                        s_x: base[2] + acc[2] / k,
                        s_y: base[3] + acc[3] / k,
                        r: base[4] + acc[4] / k,
                    }
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub variant: Variant,
    /// `None` for the maneuver-free variant, where voting is skipped.
    pub voted_maneuver: Option<ManeuverClass>,
    /// One-hot at the voted maneuver (uniform without maneuvers).
    pub maneuver_probs: ManeuverDistribution,
    pub vote_shares: [f64; MANEUVER_COUNT],
    pub avg_gaussians: Vec<Vec<GaussianStep>>,
    pub n_members: usize,
}

impl EnsemblePrediction {
    pub fn sequence(&self, m: ManeuverClass) -> &[GaussianStep] {
        match self.variant {
            Variant::WithManeuvers => &self.avg_gaussians[m.slot()],
            Variant::WithoutManeuvers => &self.avg_gaussians[0],
        }
    }
}

/// Combines member predictions (in member order) into one ensemble prediction.
pub fn combine<R: Rng + ?Sized>(
    preds: &[&BaseLearnerPrediction],
    tie_rng: &mut R,
) -> Result<EnsemblePrediction, EnsembleError> {
    let avg_gaussians = average_gaussians(preds)?;
    let variant = preds[0].variant;
    let (voted_maneuver, maneuver_probs, vote_shares) = match variant {
        Variant::WithManeuvers => {
            let votes: Vec<OneHotVote> = preds.iter().map(|p| encode_one_hot(&p.maneuver_probs)).collect();
            let (winner, shares) = plurality_vote(&votes, tie_rng)?;
            (Some(winner), decode_to_distribution(winner), shares)
        }
        Variant::WithoutManeuvers => {
            let u = ManeuverDistribution::uniform();
            (None, u, u.p)
        }
    };
    Ok(EnsemblePrediction {
        variant,
        voted_maneuver,
        maneuver_probs,
        vote_shares,
        avg_gaussians,
        n_members: preds.len(),
    })
}

/// The `n`-th ensemble learner: base learners `1..=n` of a fleet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleLearner {
    pub n: usize,
    pub tie_seed: u64,
}

impl EnsembleLearner {
    pub fn member_indices(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.n
    }

    /// Tie-break generator for one sample; independent of evaluation order.
    pub fn tie_rng(&self, sample_id: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.tie_seed, self.n as u64), sample_id as u64))
    }
}

/// Checks that `fleet` is indexed `1..=N` in order and returns ensembles `1..=N`.
pub fn build_ensembles(fleet: &[BaseLearner], tie_seed: u64) -> Result<Vec<EnsembleLearner>, EnsembleError> {
    if fleet.is_empty() {
        return Err(EnsembleError::Precondition("empty fleet".into()));
    }
    if let Some((pos, l)) = fleet.iter().enumerate().find(|(i, l)| l.index != i + 1) {
        return Err(EnsembleError::Precondition(format!(
            "fleet position {pos} holds learner {}, expected {}",
            l.index,
            pos + 1
        )));
    }
    Ok((1..=fleet.len()).map(|n| EnsembleLearner { n, tie_seed }).collect())
}

/// Runs members `1..=n` on `sample` and combines their outputs.
pub fn ensemble_predict(
    fleet: &[BaseLearner],
    learner: &EnsembleLearner,
    sample: &TrajectorySample,
) -> Result<EnsemblePrediction, EnsembleError> {
    if learner.n == 0 || learner.n > fleet.len() {
        return Err(EnsembleError::Precondition(format!(
            "ensemble {} needs {} members, fleet has {}",
            learner.n,
            learner.n,
            fleet.len()
        )));
    }
    let preds = fleet[..learner.n]
        .par_iter()
        .map(|m| {
            m.forward(sample)
                .map_err(|source| EnsembleError::Member { index: m.index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&BaseLearnerPrediction> = preds.iter().collect();
    combine(&refs, &mut learner.tie_rng(sample.sample_id))
}
