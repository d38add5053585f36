//! Greedy estimate of how many mutually admissible keys a dataset supports.
//!
//! Finding the true maximum is a sphere-packing problem with no known
//! closed form; this module only constructs a feasible set, so the reported
//! count is a lower bound on capacity.

use serde::Serialize;

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::keygen::{generate_key, KeyInit, KeygenConfig};
use crate::noise::NoiseModel;
use crate::rng::derive_seed;
use crate::theory::{check_delta, check_pairwise};

#[derive(Debug, Clone, Serialize)]
pub struct CapacityOptions {
    /// Random restarts attempted per slot before the slot counts as failed.
    pub restarts: u32,
    /// Optional admissibility ceiling on a candidate's d_max, as a proxy
    /// for a generation-quality budget (larger d_max forces larger shifts).
    pub d_max_ceiling: Option<f64>,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self { restarts: 5, d_max_ceiling: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CapacityFailure {
    /// Every restart of the failed slot produced a key violating
    /// compliance (or the d_max ceiling).
    NonCompliant,
    /// Every restart produced a key whose pairwise condition failed
    /// against the accepted set.
    PairwiseViolated,
    /// The search ran out of slots, not candidates: `max_keys` keys were
    /// all accepted.
    IterLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityReport {
    pub count: usize,
    pub keys: Vec<Key>,
    /// Min over ordered accepted pairs of `a(phi_i, phi_j) - phi_i . phi_j`;
    /// None below two keys.
    pub min_pairwise_margin: Option<f64>,
    pub failure_reason: Option<CapacityFailure>,
    pub delta: f64,
}

/// Greedily grows a key set: each slot runs `generate_key` against the
/// accepted keys once per restart (in parallel, with derived seeds; the
/// first restart keeps the configured initialization, later ones start from
/// random directions) and accepts the lowest-numbered candidate that is
/// fully compliant, within the d_max ceiling, and passes the pairwise
/// condition (with `noise_proxy` standing in for every model's noise)
/// against all accepted keys. Stops at the first slot where every restart
/// fails, or after `max_keys` acceptances.
pub fn estimate_capacity(
    dataset: &DatasetHandle,
    noise_proxy: &NoiseModel,
    delta: f64,
    max_keys: usize,
    cfg: &KeygenConfig,
    options: &CapacityOptions,
) -> Result<CapacityReport> {
    check_delta(delta)?;
    if max_keys == 0 {
        return Err(Error::InvalidParameter("max_keys must be at least 1".into()));
    }
    if options.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    let mut keys: Vec<Key> = Vec::new();
    let mut noises: Vec<NoiseModel> = Vec::new();
    let mut failure = None;
    for slot in 0..max_keys {
        // Candidates only depend on the accepted set, never on each other,
        // so the restarts of one slot are independent and run concurrently.
        let candidates: Vec<Result<Key>> = std::thread::scope(|scope| {
            let workers: Vec<_> = (0..options.restarts)
                .map(|restart| {
                    let seed =
                        derive_seed(cfg.seed, ((slot as u64) << 32) | u64::from(restart));
                    let mut cfg_r = cfg.clone().with_seed(seed);
                    if restart > 0 {
                        cfg_r.init = KeyInit::Random;
                    }
                    let keys = &keys;
                    scope.spawn(move || generate_key(dataset, keys, &cfg_r))
                })
                .collect();
            workers.into_iter().map(|w| w.join().expect("keygen worker panicked")).collect()
        });
        let mut accepted = None;
        let mut slot_failure = CapacityFailure::NonCompliant;
        for candidate in candidates {
            let candidate = match candidate {
                Ok(k) => k,
                Err(Error::NonCompliant { .. } | Error::DegenerateNorm) => continue,
                Err(e) => return Err(e),
            };
            if candidate.compliance_fraction() < 1.0 {
                continue;
            }
            if options.d_max_ceiling.is_some_and(|c| candidate.d_max() > c) {
                continue;
            }
            keys.push(candidate);
            noises.push(noise_proxy.clone());
            let outcome = check_pairwise(&keys, &noises, dataset, delta)?;
            if outcome.all_satisfied() {
                accepted = Some(());
                break;
            }
            keys.pop();
            noises.pop();
            slot_failure = CapacityFailure::PairwiseViolated;
        }
        if accepted.is_none() {
            failure = Some(slot_failure);
            break;
        }
    }
    if failure.is_none() {
        failure = Some(CapacityFailure::IterLimit);
    }
    let min_pairwise_margin = if keys.len() >= 2 {
        let outcome = check_pairwise(&keys, &noises, dataset, delta)?;
        outcome
            .pairs
            .iter()
            .map(|p| p.report.rhs - p.report.lhs)
            .min_by(|a, b| a.total_cmp(b))
    } else {
        None
    };
    Ok(CapacityReport {
        count: keys.len(),
        keys,
        min_pairwise_margin,
        failure_reason: failure,
        delta,
    })
}
