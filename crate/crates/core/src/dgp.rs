//! Seeded synthetic panels with known treatment effects.
//!
//! Outcomes follow
//! `Y_{i,t} = α_i + β_t + γ_i·f_t + δ^{a_i}_{t−a_i+1}·D_{i,t} + ε_{i,t}`
//! with `α_i ~ N(0, unit_effect_sd²)`, `β_t ~ N(0, time_effect_sd²)` and
//! `ε_{i,t} ~ N(0, noise_sd²)`. Time labels are `1..=periods` and unit labels
//! are `c000…` for controls and `a{adoption}_{k}` for treated units.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{derive_cohorts, PanelDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    /// Adoption period, `2..=periods`.
    pub adoption: usize,
    pub size: usize,
    /// True effects `δ_1, δ_2, …` by event time. Shorter lists are padded with
    /// their last value; an empty list means no effect.
    #[serde(default)]
    pub effects: Vec<f64>,
}

/// Interactive component `γ_i·f_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    /// `f_t`, one value per period.
    pub values: Vec<f64>,
    /// `γ_i` of each control unit.
    pub control_loadings: Vec<f64>,
    /// Common `γ_i` of the units in each cohort, in `cohorts` order.
    pub cohort_loadings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_controls: usize,
    pub periods: usize,
    pub cohorts: Vec<CohortSpec>,
    #[serde(default)]
    pub unit_effect_sd: f64,
    #[serde(default)]
    pub time_effect_sd: f64,
    #[serde(default)]
    pub factor: Option<FactorSpec>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueEffects {
    /// `δ^a_ℓ` for `ℓ = 1..=T−a+1`, keyed by adoption period.
    pub by_cohort: BTreeMap<usize, Vec<f64>>,
    /// Cohort-size weighted `δ_ℓ`.
    pub event: BTreeMap<usize, f64>,
    pub att: f64,
}

impl CohortSpec {
    fn effect(&self, ell: usize) -> f64 {
        match self.effects.get(ell - 1) {
            Some(d) => *d,
            None => self.effects.last().copied().unwrap_or(0.0),
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.periods < 2 {
            return bad(format!("need at least 2 periods, got {}", self.periods));
        }
        if self.n_controls == 0 {
            return bad("need at least one control unit".into());
        }
        if self.cohorts.is_empty() {
            return bad("need at least one treated cohort".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.cohorts {
            if c.adoption < 2 || c.adoption > self.periods {
                return bad(format!(
                    "adoption period {} outside 2..={}",
                    c.adoption, self.periods
                ));
            }
            if c.size == 0 {
                return bad(format!("cohort {} is empty", c.adoption));
            }
            if !seen.insert(c.adoption) {
                return bad(format!("adoption period {} listed twice", c.adoption));
            }
            if c.effects.iter().any(|d| !d.is_finite()) {
                return bad(format!("cohort {} has non-finite effects", c.adoption));
            }
        }
        for (name, sd) in [
            ("unit_effect_sd", self.unit_effect_sd),
            ("time_effect_sd", self.time_effect_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {sd}"));
            }
        }
        if let Some(f) = &self.factor {
            if f.values.len() != self.periods
                || f.control_loadings.len() != self.n_controls
                || f.cohort_loadings.len() != self.cohorts.len()
            {
                return bad("factor dimensions do not match periods/controls/cohorts".into());
            }
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.n_controls + self.cohorts.iter().map(|c| c.size).sum::<usize>()
    }
}

pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, TrueEffects)> {
    spec.validate()?;
    let n = spec.n_units();
    let t = spec.periods;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut labels: Vec<String> = (0..spec.n_controls).map(|i| format!("c{i:03}")).collect();
    let mut adoption: Vec<Option<usize>> = vec![None; spec.n_controls];
    let mut cohort_of: Vec<Option<usize>> = vec![None; spec.n_controls];
    for (k, c) in spec.cohorts.iter().enumerate() {
        for j in 0..c.size {
            labels.push(format!("a{}_{j:03}", c.adoption));
            adoption.push(Some(c.adoption));
            cohort_of.push(Some(k));
        }
    }

    let alpha: Vec<f64> = (0..n).map(|_| spec.unit_effect_sd * normal()).collect();
    let beta: Vec<f64> = (0..t).map(|_| spec.time_effect_sd * normal()).collect();
    let mut outcome = Array2::zeros((n, t));
    for i in 0..n {
        let loading = spec.factor.as_ref().map(|f| match cohort_of[i] {
            Some(k) => f.cohort_loadings[k],
            None => f.control_loadings[i],
        });
        for s in 0..t {
            let mut y = alpha[i] + beta[s] + spec.noise_sd * normal();
            if let (Some(f), Some(g)) = (&spec.factor, loading) {
                y += g * f.values[s];
            }
            if let (Some(k), Some(a)) = (cohort_of[i], adoption[i]) {
                if s + 1 >= a {
                    y += spec.cohorts[k].effect(s + 2 - a);
                }
            }
            outcome[(i, s)] = y;
        }
    }

    let panel = PanelDataset::from_adoption(labels, (1..=t as i64).collect(), outcome, &adoption)?;
    let truth = true_effects(spec, &panel);
    Ok((panel, truth))
}

fn true_effects(spec: &DgpSpec, panel: &PanelDataset) -> TrueEffects {
    let structure = derive_cohorts(panel);
    let by_cohort: BTreeMap<usize, Vec<f64>> = spec
        .cohorts
        .iter()
        .map(|c| {
            let horizon = spec.periods - c.adoption + 1;
            (c.adoption, (1..=horizon).map(|ell| c.effect(ell)).collect())
        })
        .collect();
    let event: BTreeMap<usize, f64> = structure
        .effective_cohorts
        .iter()
        .map(|(&ell, cohorts)| {
            let n_ell = structure.n_tr_by_ell[&ell] as f64;
            let delta = cohorts
                .iter()
                .map(|a| structure.n_tr_by_cohort[a] as f64 * by_cohort[a][ell - 1])
                .sum::<f64>()
                / n_ell;
            (ell, delta)
        })
        .collect();
    let att = event
        .iter()
        .map(|(ell, d)| structure.n_tr_by_ell[ell] as f64 * d)
        .sum::<f64>()
        / structure.t_post as f64;
    TrueEffects {
        by_cohort,
        event,
        att,
    }
}
