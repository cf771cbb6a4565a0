//! Candidate-model ladder and AIC ranking.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::emission::Emission;
use crate::model::params::{Structure, ALPHA, OMEGA, THETA};
use crate::optimize::{fit_mle, MleFit};
use crate::simulate::ar1_alpha_theta;

/// Id of the model the ladder's Δp column is measured against.
pub const REFERENCE_ID: usize = 7;
pub const N_CANDIDATES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateModel {
    pub id: usize,
    pub structure: Structure,
    pub description: &'static str,
}

fn random(processes: &[usize]) -> Structure {
    let mut s = Structure::constant();
    for &k in processes {
        s.stochastic[k] = true;
    }
    s
}

/// Candidate `id` (1 to 11).
pub fn candidate(id: usize) -> Result<CandidateModel> {
    let (structure, description) = match id {
        1 => (Structure::constant(), "all processes constant"),
        2 => (random(&[ALPHA]), "random height"),
        3 => (random(&[ALPHA, THETA]), "random height and optimum"),
        4 => (random(&[ALPHA, THETA, OMEGA]), "random height, optimum and width"),
        5 => (random(&[THETA]), "random optimum"),
        6 => {
            let mut s = ar1_alpha_theta();
            s.phi_free[ALPHA][THETA] = true;
            s.phi_free[THETA][ALPHA] = true;
            (s, "VAR(1) height and optimum, full transition, correlated")
        }
        7 => (ar1_alpha_theta(), "AR(1) height and AR(1) optimum, correlated"),
        8 => {
            let mut s = ar1_alpha_theta();
            s.phi_free[THETA][ALPHA] = true;
            (s, "VAR(1) height and optimum, height drives optimum, correlated")
        }
        9 => {
            let mut s = ar1_alpha_theta();
            s.phi_free[ALPHA][THETA] = true;
            (s, "VAR(1) height and optimum, optimum drives height, correlated")
        }
        10 => {
            let mut s = random(&[ALPHA, THETA]);
            s.phi_free[ALPHA][ALPHA] = true;
            s.rho_free[0] = true;
            (s, "AR(1) height, random optimum, correlated")
        }
        11 => {
            let mut s = random(&[ALPHA, THETA]);
            s.phi_free[THETA][THETA] = true;
            s.rho_free[0] = true;
            (s, "random height, AR(1) optimum, correlated")
        }
        _ => return Err(Error::InvalidConfig(format!("no candidate model {id} (valid: 1 to {N_CANDIDATES})"))),
    };
    Ok(CandidateModel { id, structure, description })
}

pub fn ladder() -> Vec<CandidateModel> {
    (1..=N_CANDIDATES).map(|i| candidate(i).unwrap()).collect()
}

/// Free-parameter difference to the reference candidate.
pub fn delta_p(id: usize) -> Result<i64> {
    Ok(candidate(id)?.structure.n_free() as i64 - candidate(REFERENCE_ID)?.structure.n_free() as i64)
}

/// Whether every coordinate free in `inner` is also free in `outer`.
pub fn is_nested(inner: &Structure, outer: &Structure) -> bool {
    let sub = |a: bool, b: bool| !a || b;
    (0..3).all(|k| sub(inner.stochastic[k], outer.stochastic[k]) && sub(inner.rho_free[k], outer.rho_free[k]))
        && (0..3).all(|i| (0..3).all(|j| sub(inner.phi_free[i][j], outer.phi_free[i][j])))
}

#[derive(Debug, Clone)]
pub struct LadderEntry {
    pub candidate: CandidateModel,
    pub fit: Result<MleFit>,
}

/// Fits the requested candidates, then refits from other candidates'
/// estimates in two cases: the fit ends above a converged candidate nested
/// in it, or it did not converge (every converged candidate is tried as a
/// start). The converged refit with the lowest nll replaces the original.
/// Failures are kept in the entries.
pub fn fit_ladder<E: Emission + Sync>(data: &E, ids: &[usize]) -> Result<Vec<LadderEntry>> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let candidates: Vec<CandidateModel> = ids.iter().map(|&i| candidate(i)).collect::<Result<_>>()?;
    let mut entries: Vec<LadderEntry> = candidates
        .par_iter()
        .map(|c| LadderEntry { candidate: *c, fit: fit_mle(data, c.structure, None) })
        .collect();
    let refits: Vec<Option<MleFit>> = entries
        .par_iter()
        .map(|e| {
            let own = e.fit.as_ref().ok().filter(|f| f.converged);
            let mut best: Option<MleFit> = own.cloned();
            for other in &entries {
                let Ok(start) = &other.fit else { continue };
                if other.candidate.id == e.candidate.id || !start.converged {
                    continue;
                }
                let nested = is_nested(&other.candidate.structure, &e.candidate.structure);
                let current = best.as_ref().map_or(f64::INFINITY, |b| b.nll_at_opt);
                let worth = if own.is_some() { nested && start.nll_at_opt < current - 1e-6 } else { true };
                if !worth {
                    continue;
                }
                if let Ok(f) = fit_mle(data, e.candidate.structure, Some(&start.estimates)) {
                    if f.converged && f.nll_at_opt < current {
                        best = Some(f);
                    }
                }
            }
            best
        })
        .collect();
    for (e, r) in entries.iter_mut().zip(refits) {
        if let Some(f) = r {
            e.fit = Ok(f);
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedModel {
    pub id: usize,
    pub description: &'static str,
    pub n_free: usize,
    pub nll: f64,
    pub aic: f64,
    /// Relative to the best-ranked model.
    pub delta_p: i64,
    pub delta_aic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderReport {
    /// Ascending AIC; ties go to fewer parameters, then the lower id.
    pub ranked: Vec<RankedModel>,
    /// Failed fits, and fits that ended without converging.
    pub failures: Vec<(usize, Error)>,
}

impl LadderReport {
    pub fn best(&self) -> &RankedModel {
        &self.ranked[0]
    }
}

pub fn rank_by_aic(entries: &[LadderEntry]) -> Result<LadderReport> {
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for e in entries {
        match &e.fit {
            Ok(f) if !f.converged => failures.push((e.candidate.id, Error::NotConverged(f.grad_max_norm))),
            Ok(f) => ranked.push(RankedModel {
                id: e.candidate.id,
                description: e.candidate.description,
                n_free: f.n_free,
                nll: f.nll_at_opt,
                aic: f.aic,
                delta_p: 0,
                delta_aic: 0.0,
            }),
            Err(err) => failures.push((e.candidate.id, err.clone())),
        }
    }
    if ranked.is_empty() {
        return Err(Error::NoSuccessfulFits);
    }
    ranked.sort_by(|a, b| a.aic.total_cmp(&b.aic).then(a.n_free.cmp(&b.n_free)).then(a.id.cmp(&b.id)));
    let (best_aic, best_p) = (ranked[0].aic, ranked[0].n_free as i64);
    for r in ranked.iter_mut() {
        r.delta_aic = r.aic - best_aic;
        r.delta_p = r.n_free as i64 - best_p;
    }
    Ok(LadderReport { ranked, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::aic;
    use crate::simulate::standin_dataset;

    fn fake_entry(id: usize, nll: f64, n_free: usize) -> LadderEntry {
        let c = candidate(id).unwrap();
        let fit = MleFit {
            estimates: crate::model::ModelParams::new(c.structure),
            std_errors: vec![],
            nll_at_opt: nll,
            n_free,
            converged: true,
            aic: aic(n_free, nll),
            iterations: 0,
            grad_max_norm: 0.0,
        };
        LadderEntry { candidate: c, fit: Ok(fit) }
    }

    #[test]
    fn delta_p_matches_the_ladder() {
        let want = [-5, -4, -3, -2, -4, 2, 0, 1, 1, -1, -1];
        for (i, &w) in want.iter().enumerate() {
            assert_eq!(delta_p(i + 1).unwrap(), w, "model {}", i + 1);
        }
        assert!(candidate(0).is_err() && candidate(12).is_err());
    }

    #[test]
    fn reference_model_frees_heights_and_optima() {
        let s = candidate(REFERENCE_ID).unwrap().structure;
        assert_eq!(
            s.free_names(),
            ["mu_alpha", "mu_theta", "mu_omega", "phi_alpha_alpha", "phi_theta_theta", "log_sigma_alpha", "log_sigma_theta", "rho_alpha_theta"]
        );
    }

    #[test]
    fn nesting_relations() {
        let m = |i| candidate(i).unwrap().structure;
        assert!(is_nested(&m(1), &m(7)));
        assert!(is_nested(&m(3), &m(7)));
        assert!(is_nested(&m(7), &m(6)));
        assert!(!is_nested(&m(7), &m(3)));
        assert!(!is_nested(&m(5), &m(2)));
    }

    #[test]
    fn ranking_examples() {
        let single = rank_by_aic(&[fake_entry(3, 10.0, 5)]).unwrap();
        assert_eq!(single.ranked[0].delta_aic, 0.0);

        let r = rank_by_aic(&[fake_entry(6, 100.0, 7), fake_entry(3, 100.0, 5)]).unwrap();
        assert_eq!(r.best().id, 3);
        assert_eq!(r.ranked[1].delta_aic, 4.0);
        assert_eq!(r.ranked[1].delta_p, 2);

        let tie = rank_by_aic(&[fake_entry(9, 50.0, 5), fake_entry(4, 50.0, 5)]).unwrap();
        assert_eq!(tie.best().id, 4);
        assert_eq!(tie.ranked.iter().filter(|m| m.delta_aic == 0.0).count(), 2);

        let failed = LadderEntry { candidate: candidate(2).unwrap(), fit: Err(Error::SingularInformation) };
        assert_eq!(rank_by_aic(&[failed.clone()]).unwrap_err(), Error::NoSuccessfulFits);
        let mixed = rank_by_aic(&[failed, fake_entry(1, 3.0, 3)]).unwrap();
        assert_eq!(mixed.failures.len(), 1);

        let mut stalled = fake_entry(7, 1.0, 8);
        if let Ok(f) = &mut stalled.fit {
            f.converged = false;
            f.grad_max_norm = 40.0;
        }
        let r = rank_by_aic(&[stalled, fake_entry(3, 100.0, 5)]).unwrap();
        assert_eq!(r.best().id, 3);
        assert_eq!(r.failures, vec![(7, Error::NotConverged(40.0))]);
    }

    #[test]
    fn nested_fits_do_not_lose_likelihood() {
        let data = standin_dataset(5).unwrap().data;
        let entries = fit_ladder(&data, &[1, 2, 3, 7, 11]).unwrap();
        let nll = |id: usize| entries.iter().find(|e| e.candidate.id == id).unwrap().fit.as_ref().unwrap().nll_at_opt;
        for (inner, outer) in [(1, 2), (2, 3), (3, 7), (3, 11), (11, 7)] {
            assert!(nll(outer) <= nll(inner) + 1e-4, "{inner} -> {outer}: {} vs {}", nll(inner), nll(outer));
        }
    }
}
