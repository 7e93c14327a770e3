//! Named randomized suites checking the solvers against the exhaustive oracle
//! (and Kabsch against known transforms). Trials are independent and seeded
//! per index, so results do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cost::Cost;
use crate::model::Labeling;
use crate::oracle::{brute_force, check_persistency, instances, verify_prop1, SuiteReport};
use crate::pose_fit::kabsch;
use crate::qpbo::qpbo;
use crate::submodels::to_zero_form;
use crate::trws::{solve_trws, TrwsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    TrwsBounds,
    QpboPersistency,
    Prop1,
    ZeroForm,
    Kabsch,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::TrwsBounds, Suite::QpboPersistency, Suite::Prop1, Suite::ZeroForm, Suite::Kabsch];

    pub fn name(self) -> &'static str {
        match self {
            Suite::TrwsBounds => "trws-bounds",
            Suite::QpboPersistency => "qpbo-persistency",
            Suite::Prop1 => "prop1",
            Suite::ZeroForm => "zero-form",
            Suite::Kabsch => "kabsch",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::TrwsBounds => 100,
            Suite::QpboPersistency => 500,
            Suite::Prop1 => 200,
            Suite::ZeroForm => 100,
            Suite::Kabsch => 1000,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown suite `{0}` (expected one of trws-bounds, qpbo-persistency, prop1, zero-form, kabsch)")]
pub struct UnknownSuite(pub String);

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| UnknownSuite(s.to_string()))
    }
}

pub const PROP1_MAX_NODES: usize = 12;
pub const QPBO_MAX_NODES: usize = 14;
pub const TRWS_MAX_NODES: usize = 10;
pub const TRWS_MAX_LABELS: usize = 4;
pub const ZERO_FORM_MAX_NODES: usize = 8;
pub const KABSCH_POINTS: usize = 10;

const BOUND_TOLERANCE: f64 = 1e-9;
const ENERGY_TOLERANCE: f64 = 1e-12;
const KABSCH_TOLERANCE: f64 = 1e-9;

/// Runs `suite` with `trials` trials (the suite default when `None`).
pub fn run_suite(suite: Suite, trials: Option<usize>, seed: u64) -> SuiteReport {
    let trials = trials.unwrap_or(suite.default_trials());
    match suite {
        Suite::Prop1 => verify_prop1::<f64>(trials, PROP1_MAX_NODES, seed, ENERGY_TOLERANCE),
        Suite::QpboPersistency => collect(suite, trials, |i| qpbo_trial(seed, i)),
        Suite::TrwsBounds => {
            // half as many tree instances again, checked for exactness
            let trees = trials.div_ceil(2);
            collect(suite, trials + trees, |i| if i < trials { trws_sparse_trial(seed, i) } else { trws_tree_trial(seed, i) })
        }
        Suite::ZeroForm => collect(suite, trials, |i| zero_form_trial(seed, i)),
        Suite::Kabsch => collect(suite, trials, |i| kabsch_trial(seed, i)),
    }
}

fn collect(suite: Suite, trials: usize, trial: impl Fn(usize) -> Result<(), String> + Sync + Send) -> SuiteReport {
    let outcomes: Vec<Result<(), String>> = (0..trials).into_par_iter().map(trial).collect();
    let mut report = SuiteReport::new(suite.name());
    for (i, o) in outcomes.into_iter().enumerate() {
        report.record(i, o);
    }
    report
}

fn qpbo_trial(seed: u64, i: usize) -> Result<(), String> {
    let mut rng = instances::trial_rng(seed, i as u64);
    let n = rng.random_range(1..=QPBO_MAX_NODES);
    let coarse = rng.random_bool(0.5);
    let model = instances::random_binary::<f64>(&mut rng, n, 0.5, instances::EdgeMix::Mixed, 0.1, coarse);
    let partial = qpbo(&model);
    match check_persistency(&model, &partial) {
        Ok(true) => Ok(()),
        Ok(false) => Err(format!("n={n}: labeled nodes {partial:?} contradict every optimum")),
        Err(e) => Err(e.to_string()),
    }
}

fn trws_sparse_trial(seed: u64, i: usize) -> Result<(), String> {
    let mut rng = instances::trial_rng(seed, i as u64);
    let n = rng.random_range(1..=TRWS_MAX_NODES);
    let model = instances::random_model::<f64>(&mut rng, n, TRWS_MAX_LABELS, 0.3);
    let res = solve_trws(&model, &TrwsConfig::default()).map_err(|e| e.to_string())?;
    if let Some(w) = res.bound_history.windows(2).find(|w| w[1] < w[0] - BOUND_TOLERANCE) {
        return Err(format!("bound decreased from {} to {}", w[0], w[1]));
    }
    let opt = finite(brute_force(&model, 1).map_err(|e| e.to_string())?.optimal_energy)?;
    let rounded = finite(model.evaluate_energy(&res.labeling).map_err(|e| e.to_string())?)?;
    if res.lower_bound > opt + BOUND_TOLERANCE || opt > rounded + BOUND_TOLERANCE {
        return Err(format!("bound {} / optimum {opt} / rounded {rounded} out of order", res.lower_bound));
    }
    Ok(())
}

fn trws_tree_trial(seed: u64, i: usize) -> Result<(), String> {
    let mut rng = instances::trial_rng(seed, i as u64);
    let n = rng.random_range(1..=TRWS_MAX_NODES);
    let model = instances::random_tree::<f64>(&mut rng, n, TRWS_MAX_LABELS, true);
    let res = solve_trws(&model, &TrwsConfig::default()).map_err(|e| e.to_string())?;
    let opt = finite(brute_force(&model, 1).map_err(|e| e.to_string())?.optimal_energy)?;
    if (res.lower_bound - opt).abs() > BOUND_TOLERANCE {
        return Err(format!("tree bound {} differs from optimum {opt}", res.lower_bound));
    }
    Ok(())
}

fn finite(c: Cost<f64>) -> Result<f64, String> {
    c.finite().ok_or_else(|| "unexpected infinite energy".to_string())
}

fn zero_form_trial(seed: u64, i: usize) -> Result<(), String> {
    let mut rng = instances::trial_rng(seed, i as u64);
    let n = rng.random_range(1..=ZERO_FORM_MAX_NODES);
    let model = instances::random_binary::<f64>(&mut rng, n, 0.6, instances::EdgeMix::Mixed, 0.0, false);
    let (zero, _) = to_zero_form(&model).map_err(|e| e.to_string())?;
    for bits in 0u32..1 << n {
        let l = Labeling((0..n).map(|u| (bits >> u & 1) as usize).collect());
        let a = finite(model.evaluate_energy(&l).map_err(|e| e.to_string())?)?;
        let b = finite(zero.evaluate_energy(&l).map_err(|e| e.to_string())?)?;
        if (a - b).abs() > ENERGY_TOLERANCE {
            return Err(format!("labeling {:?}: {a} before, {b} after", l.0));
        }
    }
    Ok(())
}

fn kabsch_trial(seed: u64, i: usize) -> Result<(), String> {
    let mut rng = instances::trial_rng(seed, i as u64);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let q = Quaternion::new(normal(), normal(), normal(), normal());
    let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    let translation = Vector3::new(normal(), normal(), normal());
    let object: Vec<Vector3<f64>> = (0..KABSCH_POINTS).map(|_| Vector3::new(normal(), normal(), normal()) * 0.1).collect();
    let scene: Vec<Vector3<f64>> = object.iter().map(|y| rotation * y + translation).collect();
    let pose = kabsch(&object, &scene).map_err(|e| e.to_string())?;
    let dr = (pose.rotation - rotation).norm();
    let dt = (pose.translation - translation).norm();
    if dr < KABSCH_TOLERANCE && dt < KABSCH_TOLERANCE {
        Ok(())
    } else {
        Err(format!("rotation error {dr:e}, translation error {dt:e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>(), Ok(s));
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn small_runs_pass() {
        for s in Suite::ALL {
            let r = run_suite(s, Some(8), 11);
            assert!(r.all_passed(), "{s}: {:?}", r.failures);
        }
    }

    #[test]
    fn reports_are_deterministic() {
        assert_eq!(run_suite(Suite::QpboPersistency, Some(20), 5), run_suite(Suite::QpboPersistency, Some(20), 5));
    }
}
