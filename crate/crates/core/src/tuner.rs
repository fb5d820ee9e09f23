//! Coordinate-descent selection of reduction order and shift-time factors.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, Simulator, SolverKind};
use crate::error::{EmError, Result};
use crate::tree::InterconnectTree;

/// PE = 100·|x − y| / (|x| + ε), in percent.
pub fn percentage_error(reference: f64, candidate: f64, epsilon: f64) -> f64 {
    100.0 * (reference - candidate).abs() / (reference.abs() + epsilon)
}

/// Reference metrics from a refined backward-Euler run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub t_nuc: f64,
    pub delta_r: f64,
    /// Nucleation-phase substeps per output interval at convergence.
    pub substeps: usize,
    /// Relative change of t_nuc over the last halving of the step.
    pub t_nuc_change: f64,
}

/// Step refinement policy for the FDM reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    /// Stop once t_nuc and ΔR change by at most this much when the step halves.
    pub rel_tol: f64,
    pub initial_substeps: usize,
    pub max_substeps: usize,
    /// Nucleation substeps per post-void substep.
    pub post_ratio: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-4, initial_substeps: 64, max_substeps: 1 << 16, post_ratio: 100 }
    }
}

fn fdm_metrics(sim: &Simulator, base: &EngineConfig, substeps: usize, post_ratio: usize) -> Result<(f64, f64)> {
    let cfg = EngineConfig {
        solver: SolverKind::Fdm,
        fdm_substeps_nuc: substeps,
        fdm_substeps_post: (substeps / post_ratio.max(1)).max(1),
        ..base.clone()
    };
    let r = sim.run(&cfg)?;
    let t_nuc = r.t_nuc.ok_or_else(|| {
        EmError::Configuration("reference run does not nucleate within the nucleation horizon".into())
    })?;
    Ok((t_nuc, r.delta_r_final()))
}

fn rel_change(new: f64, old: f64) -> f64 {
    if new == old {
        0.0
    } else {
        (new - old).abs() / new.abs().max(old.abs())
    }
}

/// FDM reference on the output grid of `base`, halving the step until both
/// metrics settle to `cfg.rel_tol`.
pub fn reference_solution(sim: &Simulator, base: &EngineConfig, cfg: &ReferenceConfig) -> Result<Reference> {
    let mut s = cfg.initial_substeps.max(1);
    let mut prev = fdm_metrics(sim, base, s, cfg.post_ratio)?;
    loop {
        if s * 2 > cfg.max_substeps {
            return Err(EmError::Configuration(format!(
                "FDM reference did not settle to {} within {} substeps",
                cfg.rel_tol, cfg.max_substeps
            )));
        }
        s *= 2;
        let cur = fdm_metrics(sim, base, s, cfg.post_ratio)?;
        let dt = rel_change(cur.0, prev.0);
        let dr = rel_change(cur.1, prev.1);
        if dt <= cfg.rel_tol && dr <= cfg.rel_tol {
            return Ok(Reference { t_nuc: cur.0, delta_r: cur.1, substeps: s, t_nuc_change: dt });
        }
        prev = cur;
    }
}

/// J = PE(t_nuc) + PE(ΔR_final) for one candidate; `penalty` when the
/// candidate fails to nucleate or its solve fails numerically.
pub fn objective(
    sim: &Simulator,
    base: &EngineConfig,
    q: usize,
    eta_nuc: f64,
    eta_post: f64,
    reference: &Reference,
    epsilon: f64,
    penalty: f64,
) -> Result<f64> {
    let cfg = base.clone().with_params(q, eta_nuc, eta_post);
    match sim.run(&cfg) {
        Ok(r) => Ok(match r.t_nuc {
            Some(t) => {
                let j = percentage_error(reference.t_nuc, t, epsilon)
                    + percentage_error(reference.delta_r, r.delta_r_final(), epsilon);
                if j.is_finite() { j.min(penalty) } else { penalty }
            }
            None => penalty,
        }),
        Err(EmError::Numerical(_) | EmError::SingularHessenberg { .. } | EmError::Singular { .. }) => Ok(penalty),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub order_set: Vec<usize>,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Coarse-to-fine step sizes.
    pub steps: Vec<f64>,
    pub max_iterations: usize,
    pub tau_stop: f64,
    pub epsilon: f64,
    pub penalty: f64,
    /// Starting (q, η_nuc, η_post).
    pub initial: (usize, f64, f64),
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            order_set: vec![3, 4, 5, 6],
            eta_min: 0.1,
            eta_max: 20.0,
            steps: vec![5.0, 1.0, 0.5, 0.1],
            max_iterations: 20,
            tau_stop: 1e-3,
            epsilon: 1e-30,
            penalty: 1e6,
            initial: (4, 1.0, 1.0),
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order_set.is_empty() {
            return Err(EmError::Parameter("order set must not be empty".into()));
        }
        if self.order_set.iter().any(|&q| q < 2) {
            return Err(EmError::Parameter("every candidate order must be at least 2".into()));
        }
        if !(self.eta_min > 0.0 && self.eta_min < self.eta_max && self.eta_max.is_finite()) {
            return Err(EmError::Parameter(format!(
                "shift-factor bounds must satisfy 0 < min < max, got [{}, {}]",
                self.eta_min, self.eta_max
            )));
        }
        if self.steps.is_empty()
            || self.steps.iter().any(|&s| !(s > 0.0))
            || self.steps.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(EmError::Parameter("step list must be positive and strictly decreasing".into()));
        }
        if self.max_iterations < 1 {
            return Err(EmError::Parameter("at least one iteration is required".into()));
        }
        if !(self.epsilon > 0.0) || !(self.tau_stop >= 0.0) || !(self.penalty > 0.0) {
            return Err(EmError::Parameter("epsilon and penalty must be positive, tau_stop nonnegative".into()));
        }
        let (q, en, ep) = self.initial;
        if q < 2 || !(self.eta_min..=self.eta_max).contains(&en) || !(self.eta_min..=self.eta_max).contains(&ep) {
            return Err(EmError::Parameter("initial point lies outside the search space".into()));
        }
        Ok(())
    }

    fn clip(&self, eta: f64) -> f64 {
        eta.clamp(self.eta_min, self.eta_max)
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub q: usize,
    pub eta_nuc: f64,
    pub eta_post: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerResult {
    pub q: usize,
    pub eta_nuc: f64,
    pub eta_post: f64,
    /// Best objective (percentage points).
    pub j: f64,
    pub iterations: usize,
    /// Distinct candidate evaluations.
    pub evaluations: usize,
    pub cache_hits: usize,
    /// J* at the start (entry 0) and at the end of every iteration.
    pub trace: Vec<f64>,
    pub reference: Reference,
    /// Every distinct candidate in evaluation order.
    pub evaluated: Vec<Evaluation>,
}

type Key = (usize, u64, u64);

/// Memoized objective over one tree.
struct Evaluator<'s, 't> {
    sim: &'s Simulator<'t>,
    base: EngineConfig,
    reference: Reference,
    epsilon: f64,
    penalty: f64,
    cache: Mutex<HashMap<Key, f64>>,
    log: Mutex<Vec<Evaluation>>,
    hits: Mutex<usize>,
}

impl Evaluator<'_, '_> {
    fn key(q: usize, en: f64, ep: f64) -> Key {
        (q, en.to_bits(), ep.to_bits())
    }

    /// Evaluates candidates concurrently and returns J in input order.
    fn eval_many(&self, candidates: &[(usize, f64, f64)]) -> Result<Vec<f64>> {
        let mut fresh: Vec<(usize, f64, f64)> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut hits = self.hits.lock().unwrap();
            for &c in candidates {
                let k = Self::key(c.0, c.1, c.2);
                if cache.contains_key(&k) || fresh.iter().any(|f| Self::key(f.0, f.1, f.2) == k) {
                    *hits += 1;
                } else {
                    fresh.push(c);
                }
            }
        }
        let values: Vec<Result<f64>> = fresh
            .par_iter()
            .map(|&(q, en, ep)| objective(self.sim, &self.base, q, en, ep, &self.reference, self.epsilon, self.penalty))
            .collect();
        {
            let mut cache = self.cache.lock().unwrap();
            let mut log = self.log.lock().unwrap();
            for (&(q, en, ep), v) in fresh.iter().zip(values) {
                let j = v?;
                cache.insert(Self::key(q, en, ep), j);
                log.push(Evaluation { q, eta_nuc: en, eta_post: ep, j });
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(candidates.iter().map(|c| cache[&Self::key(c.0, c.1, c.2)]).collect())
    }
}

/// Coordinate descent over (q, η_nuc, η_post) against a fine FDM reference.
pub fn coordinate_descent(cfg: &TunerConfig, tree: &InterconnectTree, base: &EngineConfig) -> Result<TunerResult> {
    let sim = Simulator::new(tree, base.points_per_segment)?;
    let reference = reference_solution(&sim, base, &ReferenceConfig::default())?;
    coordinate_descent_with(cfg, &sim, base, reference)
}

/// Coordinate descent with a precomputed reference.
pub fn coordinate_descent_with(
    cfg: &TunerConfig,
    sim: &Simulator,
    base: &EngineConfig,
    reference: Reference,
) -> Result<TunerResult> {
    cfg.validate()?;
    if base.solver == SolverKind::Fdm {
        return Err(EmError::Parameter("the tuner needs a Krylov solver (ext or ei)".into()));
    }
    let ev = Evaluator {
        sim,
        base: base.clone(),
        reference,
        epsilon: cfg.epsilon,
        penalty: cfg.penalty,
        cache: Mutex::new(HashMap::new()),
        log: Mutex::new(Vec::new()),
        hits: Mutex::new(0),
    };
    let (mut q, mut en, mut ep) = cfg.initial;
    let mut best = ev.eval_many(&[(q, en, ep)])?[0];
    let mut trace = vec![best];
    let mut iterations = 0;

    // Candidate moves for one coordinate, in search order.
    let moves = |eta: f64| -> Vec<f64> {
        cfg.steps.iter().flat_map(|&s| [cfg.clip(eta + s), cfg.clip(eta - s)]).collect()
    };

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let prev = best;

        let cands: Vec<_> = cfg.order_set.iter().map(|&qc| (qc, en, ep)).collect();
        for (c, j) in cands.iter().zip(ev.eval_many(&cands)?) {
            if j < best {
                q = c.0;
                best = j;
            }
        }

        let cands: Vec<_> = moves(en).into_iter().map(|e| (q, e, ep)).collect();
        let js = ev.eval_many(&cands)?;
        if let Some((c, j)) = cands.iter().zip(js).find(|(_, j)| *j < best) {
            en = c.1;
            best = j;
        }

        let cands: Vec<_> = moves(ep).into_iter().map(|e| (q, en, e)).collect();
        let js = ev.eval_many(&cands)?;
        if let Some((c, j)) = cands.iter().zip(js).find(|(_, j)| *j < best) {
            ep = c.2;
            best = j;
        }

        trace.push(best);
        if prev - best < cfg.tau_stop {
            break;
        }
    }

    if best >= cfg.penalty {
        return Err(EmError::SearchFailure(format!(
            "no candidate nucleated within {iterations} iterations"
        )));
    }
    let evaluated = ev.log.into_inner().unwrap();
    Ok(TunerResult {
        q,
        eta_nuc: en,
        eta_post: ep,
        j: best,
        iterations,
        evaluations: evaluated.len(),
        cache_hits: ev.hits.into_inner().unwrap(),
        trace,
        reference,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentage_error_cases() {
        assert_eq!(percentage_error(3.5, 3.5, 1e-30), 0.0);
        assert!((percentage_error(100.0, 99.0, 1e-30) - 1.0).abs() < 1e-12);
        let pe = percentage_error(0.0, 2.0, 1e-30);
        assert!(pe.is_finite());
        assert!((pe - 100.0 * 2.0 / 1e-30).abs() <= 1e-12 * pe);
        assert_eq!(percentage_error(-10.0, -11.0, 1e-30), percentage_error(-10.0, -9.0, 1e-30));
    }

    #[test]
    fn config_validation() {
        assert!(TunerConfig::default().validate().is_ok());
        let bad = [
            TunerConfig { order_set: vec![], ..Default::default() },
            TunerConfig { eta_min: 20.0, eta_max: 0.1, ..Default::default() },
            TunerConfig { steps: vec![1.0, 5.0], ..Default::default() },
            TunerConfig { steps: vec![1.0, 1.0], ..Default::default() },
            TunerConfig { initial: (4, 50.0, 1.0), ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(EmError::Parameter(_))));
        }
    }

    #[test]
    fn clip_respects_bounds() {
        let c = TunerConfig::default();
        assert_eq!(c.clip(-4.0), 0.1);
        assert_eq!(c.clip(25.0), 20.0);
        assert_eq!(c.clip(3.0), 3.0);
    }
}
