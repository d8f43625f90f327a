//! Cohort, dynamic and aggregated event-study point estimators.
//!
//! For cohort `a` with unit weights `ω` and time weights `λ`, let
//! `gap_t = Ȳ^a_t − Σᵢ ωᵢ Y_{i,t}` be the treated-minus-synthetic gap at
//! period `t`. Everything here is built from that series:
//!
//! * `pre_gap = Σ_{t<a} λ_t gap_t`
//! * dynamic effect at event time `ℓ ≥ 1`: `gap_{a−1+ℓ} − pre_gap`
//! * cohort effect: mean of `gap_t` over `t ≥ a`, minus `pre_gap`
//! * placebo at `ℓ ≤ 0`: same contrast at the pre-period `a−1+ℓ`

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{cohort_subpanel, derive_cohorts, CohortStructure, PanelDataset};
use crate::weights::{fit_weights, WeightOptions, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateOptions {
    pub weights: WeightOptions,
    /// Turn solver non-convergence into an error instead of keeping the
    /// last iterate.
    pub require_convergence: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            weights: WeightOptions::default(),
            require_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortEstimate {
    /// Adoption period `a` (1-based position on the time axis).
    pub cohort: usize,
    /// Time label of the adoption period.
    pub cohort_label: i64,
    pub n_treated: usize,
    pub tau: f64,
    /// Dynamic effects keyed by event time `ℓ = 1..=T−a+1`.
    pub dynamic: BTreeMap<usize, f64>,
    /// Placebo effects keyed by `ℓ = −(a−2)..=0`.
    pub placebo: BTreeMap<i64, f64>,
    pub weights: WeightSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventEffect {
    pub estimate: f64,
    /// Number of treated units in the cohorts contributing at this event time.
    pub n_treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub att: f64,
    pub event: BTreeMap<usize, EventEffect>,
    pub placebo: BTreeMap<i64, EventEffect>,
    pub cohorts: Vec<CohortEstimate>,
    pub structure: CohortStructure,
}

impl EstimationResult {
    /// `(1/T_post)·Σ_ℓ N^ℓ_tr·τ̂_ℓ`, the event-study route to the ATT.
    pub fn att_from_event_study(&self) -> f64 {
        self.event
            .values()
            .map(|e| e.n_treated as f64 * e.estimate)
            .sum::<f64>()
            / self.structure.t_post as f64
    }

    pub fn all_converged(&self) -> bool {
        self.cohorts
            .iter()
            .all(|c| c.weights.diagnostics.converged())
    }

    pub fn max_simplex_violation(&self) -> f64 {
        self.cohorts
            .iter()
            .map(|c| c.weights.simplex_violation())
            .fold(0.0, f64::max)
    }
}

/// Treated-minus-synthetic gap at every period, after checking that the
/// weights belong to the subpanel's cohort.
fn gap_series(subpanel: &PanelDataset, weights: &WeightSet) -> Result<Vec<f64>> {
    let a = subpanel.single_cohort()?;
    if a != weights.cohort {
        return Err(Error::InvalidInput(format!(
            "weights were fitted for cohort {} but the subpanel holds cohort {a}",
            weights.cohort
        )));
    }
    let n_co = subpanel.n_controls();
    if weights.omega.len() != n_co || weights.lambda.len() != a - 1 {
        return Err(Error::InvalidInput(format!(
            "expected {n_co} unit weights and {} time weights, got {} and {}",
            a - 1,
            weights.omega.len(),
            weights.lambda.len()
        )));
    }
    let y = subpanel.outcome();
    let n_tr = subpanel.n_treated() as f64;
    Ok((0..subpanel.n_periods())
        .map(|s| {
            let column = y.column(s);
            let treated = column.iter().skip(n_co).sum::<f64>() / n_tr;
            let synthetic: f64 = weights.omega.iter().zip(column).map(|(w, y)| w * y).sum();
            treated - synthetic
        })
        .collect())
}

fn weighted_pre_gap(gaps: &[f64], lambda: &[f64]) -> f64 {
    lambda.iter().zip(gaps).map(|(l, g)| l * g).sum()
}

/// λ-weighted pre-treatment gap between the treated mean and the synthetic
/// control.
pub fn pre_gap(subpanel: &PanelDataset, weights: &WeightSet) -> Result<f64> {
    let gaps = gap_series(subpanel, weights)?;
    Ok(weighted_pre_gap(&gaps, &weights.lambda))
}

/// Dynamic effect at event time `ell`, where `ell = 1` is the adoption period.
pub fn tau_cohort_ell(subpanel: &PanelDataset, weights: &WeightSet, ell: usize) -> Result<f64> {
    let gaps = gap_series(subpanel, weights)?;
    let a = weights.cohort;
    let horizon = subpanel.n_periods() - a + 1;
    if ell == 0 || ell > horizon {
        return Err(Error::HorizonOutOfRange {
            ell: ell as i64,
            max: horizon,
        });
    }
    Ok(gaps[a - 2 + ell] - weighted_pre_gap(&gaps, &weights.lambda))
}

/// Cohort effect: average post-treatment gap minus the weighted pre-treatment
/// gap.
pub fn tau_cohort(subpanel: &PanelDataset, weights: &WeightSet) -> Result<f64> {
    let gaps = gap_series(subpanel, weights)?;
    let post = &gaps[weights.cohort - 1..];
    let post_mean = post.iter().sum::<f64>() / post.len() as f64;
    Ok(post_mean - weighted_pre_gap(&gaps, &weights.lambda))
}

/// Pre-treatment analogues of the dynamic effects for `ℓ = −(a−2)..=0`.
/// Their λ-weighted average is zero.
pub fn placebo_effects(subpanel: &PanelDataset, weights: &WeightSet) -> Result<BTreeMap<i64, f64>> {
    let gaps = gap_series(subpanel, weights)?;
    let a = weights.cohort;
    let pre = weighted_pre_gap(&gaps, &weights.lambda);
    Ok((1..a)
        .map(|t| (t as i64 - (a as i64 - 1), gaps[t - 1] - pre))
        .collect())
}

fn find_cohort(cohort_estimates: &[CohortEstimate], a: usize) -> Result<&CohortEstimate> {
    cohort_estimates
        .iter()
        .find(|c| c.cohort == a)
        .ok_or_else(|| Error::InvalidInput(format!("no estimate for cohort {a}")))
}

/// Cohort-size weighted average of the dynamic effects at event time `ell`.
pub fn tau_ell(
    cohort_estimates: &[CohortEstimate],
    structure: &CohortStructure,
    ell: usize,
) -> Result<f64> {
    let (Some(cohorts), Some(&n_ell)) = (
        structure.effective_cohorts.get(&ell),
        structure.n_tr_by_ell.get(&ell),
    ) else {
        return Err(Error::HorizonOutOfRange {
            ell: ell as i64,
            max: structure.t_tr,
        });
    };
    cohorts.iter().try_fold(0.0, |acc, &a| {
        let est = find_cohort(cohort_estimates, a)?;
        let tau = est.dynamic.get(&ell).ok_or_else(|| {
            Error::InvalidInput(format!("cohort {a} has no dynamic effect at {ell}"))
        })?;
        Ok(acc + structure.n_tr_by_cohort[&a] as f64 / n_ell as f64 * tau)
    })
}

/// Cohort-size weighted average of placebo effects at `ell ≤ 0`, over the
/// cohorts with a pre-period at `a − 1 + ell`. Returns `None` when no cohort
/// reaches that far back.
pub fn tau_placebo(
    cohort_estimates: &[CohortEstimate],
    ell: i64,
) -> Option<EventEffect> {
    let contributing: Vec<&CohortEstimate> = cohort_estimates
        .iter()
        .filter(|c| c.placebo.contains_key(&ell))
        .collect();
    let n: usize = contributing.iter().map(|c| c.n_treated).sum();
    if n == 0 {
        return None;
    }
    let estimate = contributing
        .iter()
        .map(|c| c.n_treated as f64 / n as f64 * c.placebo[&ell])
        .sum();
    Some(EventEffect {
        estimate,
        n_treated: n,
    })
}

/// `Σ_a (T^a_post / T_post)·τ̂^a`.
pub fn att(cohort_estimates: &[CohortEstimate], structure: &CohortStructure) -> Result<f64> {
    let t_post = structure.t_post as f64;
    structure.adoption_dates.iter().try_fold(0.0, |acc, &a| {
        let est = find_cohort(cohort_estimates, a)?;
        Ok(acc + structure.t_post_by_cohort[&a] as f64 / t_post * est.tau)
    })
}

fn estimate_cohort(
    panel: &PanelDataset,
    structure: &CohortStructure,
    a: usize,
    options: &EstimateOptions,
) -> Result<CohortEstimate> {
    let subpanel = cohort_subpanel(panel, structure, a)?;
    let weights = fit_weights(&subpanel, &options.weights)?;
    if options.require_convergence {
        for diag in [&weights.diagnostics.unit, &weights.diagnostics.time] {
            if !diag.converged {
                return Err(Error::MaxIterations {
                    iterations: diag.iterations,
                    gap: diag.duality_gap,
                });
            }
        }
    }
    let horizon = structure.horizon_by_cohort[&a];
    let dynamic = (1..=horizon)
        .map(|ell| Ok((ell, tau_cohort_ell(&subpanel, &weights, ell)?)))
        .collect::<Result<_>>()?;
    Ok(CohortEstimate {
        cohort: a,
        cohort_label: panel.time_label(a),
        n_treated: structure.n_tr_by_cohort[&a],
        tau: tau_cohort(&subpanel, &weights)?,
        dynamic,
        placebo: placebo_effects(&subpanel, &weights)?,
        weights,
    })
}

/// Estimates every cohort against the never-treated units, then aggregates
/// into event-study effects and the ATT.
pub fn estimate(panel: &PanelDataset, options: &EstimateOptions) -> Result<EstimationResult> {
    let structure = derive_cohorts(panel);
    let cohorts = structure
        .adoption_dates
        .par_iter()
        .map(|&a| estimate_cohort(panel, &structure, a, options).map_err(|e| e.in_cohort(a)))
        .collect::<Result<Vec<_>>>()?;

    let event = structure
        .n_tr_by_ell
        .iter()
        .map(|(&ell, &n_treated)| {
            let estimate = tau_ell(&cohorts, &structure, ell)?;
            Ok((ell, EventEffect { estimate, n_treated }))
        })
        .collect::<Result<_>>()?;
    let deepest = structure.adoption_dates.last().map_or(0, |&a| a as i64 - 2);
    let placebo = (-deepest..=0)
        .rev()
        .filter_map(|ell| tau_placebo(&cohorts, ell).map(|e| (ell, e)))
        .collect();
    let att = att(&cohorts, &structure)?;

    Ok(EstimationResult {
        att,
        event,
        placebo,
        cohorts,
        structure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{profiled_objective, regularization_zeta, TIME_ZETA_FACTOR};
    use ndarray::Array2;

    fn panel(rows: &[(&[f64], Option<usize>)]) -> PanelDataset {
        let t = rows[0].0.len();
        let labels = (0..rows.len()).map(|i| format!("u{i}")).collect();
        let y = Array2::from_shape_fn((rows.len(), t), |(i, s)| rows[i].0[s]);
        let adoption: Vec<_> = rows.iter().map(|r| r.1).collect();
        PanelDataset::from_adoption(labels, (1..=t as i64).collect(), y, &adoption).unwrap()
    }

    fn p1() -> PanelDataset {
        panel(&[
            (&[1.0, 2.0, 3.0, 4.0], None),
            (&[3.0, 3.0, 3.0, 3.0], None),
            (&[2.0, 3.0, 4.0, 10.0], Some(3)),
        ])
    }

    fn weight_set(cohort: usize, omega: Vec<f64>, lambda: Vec<f64>) -> WeightSet {
        let mut w = fit_weights(&p1(), &WeightOptions { uniform: true, ..Default::default() }).unwrap();
        w.cohort = cohort;
        w.omega = omega;
        w.lambda = lambda;
        w
    }

    /// Grid oracle (step 1e-4 on the 1-simplex) for both P1 weight problems,
    /// intercepts profiled out.
    fn p1_oracle_weights() -> (f64, f64) {
        let sub = p1();
        let y = sub.outcome();
        let reg = regularization_zeta(&sub).unwrap();
        let grid = |targets: &[f64], features: Array2<f64>, ridge: f64| {
            (0..=10_000)
                .map(|k| {
                    let w = k as f64 / 10_000.0;
                    (profiled_objective(targets, features.view(), ridge, &[w, 1.0 - w]).0, w)
                })
                .fold((f64::INFINITY, 0.0), |b, c| if c.0 < b.0 { c } else { b })
                .1
        };
        let unit_features = Array2::from_shape_fn((2, 2), |(t, i)| y[(i, t)]);
        let omega0 = grid(&[2.0, 3.0], unit_features, reg.zeta.powi(2) * 2.0);
        let time_features = Array2::from_shape_fn((2, 2), |(i, t)| y[(i, t)]);
        let ridge = (TIME_ZETA_FACTOR * reg.sigma).powi(2) * 2.0;
        let lambda0 = grid(&[3.5, 3.0], time_features, ridge);
        (omega0, lambda0)
    }

    #[test]
    fn zero_gap_for_identical_paths() {
        let sub = panel(&[
            (&[1.0, 4.0, 2.0], None),
            (&[1.0, 4.0, 2.0], None),
            (&[1.0, 4.0, 2.0], Some(3)),
        ]);
        let w = fit_weights(&sub, &WeightOptions::default()).unwrap();
        assert_eq!(pre_gap(&sub, &w).unwrap(), 0.0);
        assert_eq!(tau_cohort(&sub, &w).unwrap(), 0.0);
        assert_eq!(tau_cohort_ell(&sub, &w, 1).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_pre_gap() {
        let sub = panel(&[
            (&[1.0, 4.0, 2.0, 0.0], None),
            (&[2.0, 0.0, 3.0, 1.0], None),
            (&[4.5, 5.0, 5.5, 0.0], Some(4)),
        ]);
        // treated = 0.5·(c1 + c2) + 3 in the pre-periods
        let w = weight_set(4, vec![0.5, 0.5], vec![0.2, 0.3, 0.5]);
        assert!((pre_gap(&sub, &w).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn constant_effect_is_recovered() {
        let delta = 1.75;
        let sub = panel(&[
            (&[1.0, 4.0, 2.0, 0.0, 5.0], None),
            (&[2.0, 0.0, 3.0, 1.0, 2.0], None),
            (&[1.5, 2.0, 2.5 + delta, 0.5 + delta, 3.5 + delta], Some(3)),
        ]);
        let w = weight_set(3, vec![0.5, 0.5], vec![0.4, 0.6]);
        for ell in 1..=3 {
            assert!((tau_cohort_ell(&sub, &w, ell).unwrap() - delta).abs() < 1e-14);
        }
        assert!((tau_cohort(&sub, &w).unwrap() - delta).abs() < 1e-14);
        for v in placebo_effects(&sub, &w).unwrap().values() {
            assert!(v.abs() < 1e-14);
        }
        assert!(matches!(
            tau_cohort_ell(&sub, &w, 4),
            Err(Error::HorizonOutOfRange { ell: 4, max: 3 })
        ));
        assert!(tau_cohort_ell(&sub, &w, 0).is_err());
    }

    #[test]
    fn all_constant_panel_has_zero_effects() {
        let sub = panel(&[
            (&[2.0; 4], None),
            (&[2.0; 4], None),
            (&[2.0; 4], Some(2)),
        ]);
        let w = fit_weights(&sub, &WeightOptions::default()).unwrap();
        assert_eq!(tau_cohort_ell(&sub, &w, 2).unwrap(), 0.0);
        assert_eq!(tau_cohort(&sub, &w).unwrap(), 0.0);
    }

    #[test]
    fn p1_effects_match_formula_oracle() {
        let sub = p1();
        let w = fit_weights(&sub, &WeightOptions::default()).unwrap();
        let (omega0, lambda0) = p1_oracle_weights();
        assert!((w.omega[0] - omega0).abs() < 1e-4);
        assert!((w.lambda[0] - lambda0).abs() < 1e-4);

        // direct evaluation with the oracle weights; controls c1=(1,2,3,4), c2=(3,3,3,3)
        let sc = |t: usize| omega0 * [1.0, 2.0, 3.0, 4.0][t] + (1.0 - omega0) * 3.0;
        let treated = [2.0, 3.0, 4.0, 10.0];
        let pre = lambda0 * (treated[0] - sc(0)) + (1.0 - lambda0) * (treated[1] - sc(1));
        let oracle_ell1 = treated[2] - sc(2) - pre;
        let oracle_ell2 = treated[3] - sc(3) - pre;

        assert!((pre_gap(&sub, &w).unwrap() - pre).abs() < 1e-3);
        let ell1 = tau_cohort_ell(&sub, &w, 1).unwrap();
        let ell2 = tau_cohort_ell(&sub, &w, 2).unwrap();
        assert!((ell1 - oracle_ell1).abs() < 1e-3, "{ell1} vs {oracle_ell1}");
        assert!((ell2 - oracle_ell2).abs() < 1e-3, "{ell2} vs {oracle_ell2}");
        assert!((tau_cohort(&sub, &w).unwrap() - 0.5 * (ell1 + ell2)).abs() < 1e-12);

        let placebo = placebo_effects(&sub, &w).unwrap();
        let oracle_p0 = treated[1] - sc(1) - pre;
        let oracle_m1 = treated[0] - sc(0) - pre;
        assert!((placebo[&0] - oracle_p0).abs() < 1e-3);
        assert!((placebo[&-1] - oracle_m1).abs() < 1e-3);
    }

    #[test]
    fn placebo_with_single_pre_period_is_zero() {
        let sub = panel(&[
            (&[1.0, 4.0, 2.0], None),
            (&[3.0, 0.0, 3.0], None),
            (&[7.0, 2.0, 3.0], Some(2)),
        ]);
        let w = fit_weights(&sub, &WeightOptions::default()).unwrap();
        let placebo = placebo_effects(&sub, &w).unwrap();
        assert_eq!(placebo.len(), 1);
        assert_eq!(placebo[&0], 0.0);
    }

    fn fake_cohort(a: usize, n: usize, tau: f64, dynamic: &[f64]) -> CohortEstimate {
        CohortEstimate {
            cohort: a,
            cohort_label: a as i64,
            n_treated: n,
            tau,
            dynamic: dynamic.iter().enumerate().map(|(k, v)| (k + 1, *v)).collect(),
            placebo: BTreeMap::new(),
            weights: weight_set(a, vec![1.0], vec![1.0]),
        }
    }

    fn two_cohort_structure() -> CohortStructure {
        let p = panel(&[
            (&[0.0; 3], None),
            (&[0.0; 3], Some(2)),
            (&[0.0; 3], Some(2)),
            (&[0.0; 3], Some(3)),
        ]);
        derive_cohorts(&p)
    }

    #[test]
    fn event_and_att_arithmetic() {
        let s = two_cohort_structure();
        // τ̂_{2,1}=1, τ̂_{2,2}=3 so τ̂_2=2; τ̂_{3,1}=4
        let est = vec![fake_cohort(2, 2, 2.0, &[1.0, 3.0]), fake_cohort(3, 1, 4.0, &[4.0])];
        assert!((tau_ell(&est, &s, 1).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(tau_ell(&est, &s, 2).unwrap(), 3.0);
        assert!(matches!(tau_ell(&est, &s, 3), Err(Error::HorizonOutOfRange { .. })));
        let att_value = att(&est, &s).unwrap();
        assert!((att_value - 2.4).abs() < 1e-15);
        let via_event = (3.0 * 2.0 + 2.0 * 3.0) / 5.0;
        assert!((att_value - via_event).abs() < 1e-15);
    }

    #[test]
    fn equal_cohort_sizes_average_evenly() {
        let p = panel(&[
            (&[0.0; 4], None),
            (&[0.0; 4], Some(2)),
            (&[0.0; 4], Some(3)),
        ]);
        let s = derive_cohorts(&p);
        let est = vec![fake_cohort(2, 1, 0.0, &[1.0, 2.0, 3.0]), fake_cohort(3, 1, 0.0, &[5.0, 6.0])];
        assert_eq!(tau_ell(&est, &s, 1).unwrap(), 3.0);
        assert_eq!(tau_ell(&est, &s, 3).unwrap(), 3.0);
    }

    #[test]
    fn single_cohort_att_is_cohort_effect() {
        let sub = panel(&[
            (&[1.0, 4.0, 2.0, 0.0, 5.0], None),
            (&[2.0, 0.0, 3.0, 1.0, 2.0], None),
            (&[3.0, 3.0, 0.0, 1.0, 2.0], None),
            (&[1.5, 2.0, 4.5, 1.5, 9.5], Some(3)),
        ]);
        let res = estimate(&sub, &EstimateOptions::default()).unwrap();
        assert_eq!(res.cohorts.len(), 1);
        assert!((res.att - res.cohorts[0].tau).abs() < 1e-15);
        assert!((res.att - res.att_from_event_study()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_weights_are_rejected() {
        let w = weight_set(2, vec![0.5, 0.5], vec![1.0]);
        assert!(pre_gap(&p1(), &w).is_err());
        let w = weight_set(3, vec![1.0], vec![0.5, 0.5]);
        assert!(pre_gap(&p1(), &w).is_err());
    }
}
