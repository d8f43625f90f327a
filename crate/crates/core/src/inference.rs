//! Resampling standard errors and normal confidence intervals.
//!
//! Replication `b` draws from its own ChaCha8 stream (`seed`, stream `b`),
//! so results do not depend on how rayon schedules the replications.
//! Standard deviations are reduced over the replications in index order.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateOptions, EstimationResult};
use crate::panel::{derive_cohorts, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Bootstrap,
    Placebo,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceOptions {
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for VarianceOptions {
    fn default() -> Self {
        Self {
            reps: 50,
            seed: 1,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceResult {
    pub method: VarianceMethod,
    pub reps: usize,
    pub seed: u64,
    pub se_att: Option<f64>,
    /// `None` where fewer than two replications produced that event time.
    pub se_by_ell: BTreeMap<usize, Option<f64>>,
    pub se_by_placebo: BTreeMap<i64, Option<f64>>,
    pub ci_level: f64,
    pub failed_reps: usize,
}

impl VarianceResult {
    pub fn none(level: f64) -> Self {
        Self {
            method: VarianceMethod::None,
            reps: 0,
            seed: 0,
            se_att: None,
            se_by_ell: BTreeMap::new(),
            se_by_placebo: BTreeMap::new(),
            ci_level: level,
            failed_reps: 0,
        }
    }
}

/// Welford running mean/variance; exact zero spread for identical inputs.
#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sample_sd(&self) -> Option<f64> {
        (self.n >= 2).then(|| (self.m2 / (self.n - 1) as f64).max(0.0).sqrt())
    }
}

fn summarize(
    method: VarianceMethod,
    options: &VarianceOptions,
    replicates: &[EstimationResult],
    failed_reps: usize,
) -> VarianceResult {
    let mut att = Moments::default();
    let mut by_ell: BTreeMap<usize, Moments> = BTreeMap::new();
    let mut by_placebo: BTreeMap<i64, Moments> = BTreeMap::new();
    for rep in replicates {
        att.push(rep.att);
        for (&ell, e) in &rep.event {
            by_ell.entry(ell).or_default().push(e.estimate);
        }
        for (&ell, e) in &rep.placebo {
            by_placebo.entry(ell).or_default().push(e.estimate);
        }
    }
    VarianceResult {
        method,
        reps: options.reps,
        seed: options.seed,
        se_att: att.sample_sd(),
        se_by_ell: by_ell.into_iter().map(|(k, m)| (k, m.sample_sd())).collect(),
        se_by_placebo: by_placebo.into_iter().map(|(k, m)| (k, m.sample_sd())).collect(),
        ci_level: options.level,
        failed_reps,
    }
}

fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 2 {
        return Err(Error::InvalidInput(format!(
            "at least 2 replications are required, got {reps}"
        )));
    }
    Ok(())
}

/// Unit-clustered bootstrap: each replication resamples `N` units with
/// replacement and re-runs the full estimator. Draws without a treated or
/// without a control unit are redrawn and counted in `failed_reps`.
pub fn bootstrap_se(
    panel: &PanelDataset,
    options: &EstimateOptions,
    variance: &VarianceOptions,
) -> Result<VarianceResult> {
    let n = panel.n_units();
    bootstrap_with_draws(panel, options, variance, |rep| {
        let mut rng = replication_rng(variance.seed, rep);
        move || (0..n).map(|_| rng.random_range(0..n)).collect()
    })
}

/// Bootstrap driver with an injectable draw source: `draws(rep)` yields the
/// successive unit-index draws for replication `rep`.
pub(crate) fn bootstrap_with_draws<F, D>(
    panel: &PanelDataset,
    options: &EstimateOptions,
    variance: &VarianceOptions,
    draws: F,
) -> Result<VarianceResult>
where
    F: Fn(usize) -> D + Sync,
    D: FnMut() -> Vec<usize>,
{
    check_reps(variance.reps)?;
    let n = panel.n_units();
    if panel.n_treated() == n || panel.n_controls() == n || n < 2 {
        return Err(Error::DegeneratePanel(format!(
            "{} controls and {} treated units",
            panel.n_controls(),
            panel.n_treated()
        )));
    }
    let max_failures = 100 * variance.reps;
    let is_treated: Vec<bool> = panel.adoption().iter().map(Option::is_some).collect();

    let outcomes = (0..variance.reps)
        .into_par_iter()
        .map(|rep| {
            let mut draw = draws(rep);
            let mut attempt = 0;
            loop {
                let indices = draw();
                let treated = indices.iter().filter(|&&i| is_treated[i]).count();
                if treated > 0 && treated < indices.len() {
                    let boot = panel.resample(&indices)?;
                    return Ok((estimate(&boot, options)?, attempt));
                }
                attempt += 1;
                if attempt > max_failures {
                    return Err(Error::TooManyFailedDraws {
                        failed: attempt,
                        reps: variance.reps,
                    });
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let failed: usize = outcomes.iter().map(|(_, f)| f).sum();
    if failed > max_failures {
        return Err(Error::TooManyFailedDraws {
            failed,
            reps: variance.reps,
        });
    }
    let replicates: Vec<EstimationResult> = outcomes.into_iter().map(|(r, _)| r).collect();
    Ok(summarize(VarianceMethod::Bootstrap, variance, &replicates, failed))
}

/// Placebo variance: each replication picks `N_tr` of the controls without
/// replacement, gives them the observed cohort sizes and adoption dates, and
/// estimates on the controls-only panel.
pub fn placebo_se(
    panel: &PanelDataset,
    options: &EstimateOptions,
    variance: &VarianceOptions,
) -> Result<VarianceResult> {
    check_reps(variance.reps)?;
    let structure = derive_cohorts(panel);
    let (n_co, n_tr) = (panel.n_controls(), panel.n_treated());
    if n_co <= n_tr {
        return Err(Error::InsufficientControls { n_co, n_tr });
    }
    let control_outcome = panel
        .outcome()
        .select(ndarray::Axis(0), &structure.control_indices);
    let control_labels: Vec<String> = structure
        .control_indices
        .iter()
        .map(|&i| panel.unit_labels()[i].clone())
        .collect();
    // one adoption date per placebo-treated slot, cohorts in order
    let slots: Vec<usize> = structure
        .adoption_dates
        .iter()
        .flat_map(|a| std::iter::repeat_n(*a, structure.n_tr_by_cohort[a]))
        .collect();

    let replicates = (0..variance.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(variance.seed, rep);
            let chosen = index::sample(&mut rng, n_co, n_tr);
            let mut adoption = vec![None; n_co];
            for (slot, unit) in chosen.iter().enumerate() {
                adoption[unit] = Some(slots[slot]);
            }
            let placebo_panel = PanelDataset::from_adoption(
                control_labels.clone(),
                panel.time_labels().to_vec(),
                control_outcome.clone(),
                &adoption,
            )?;
            estimate(&placebo_panel, options)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(VarianceMethod::Placebo, variance, &replicates, 0))
}

/// Dispatches on `method`; `None` returns an empty result.
pub fn variance(
    method: VarianceMethod,
    panel: &PanelDataset,
    options: &EstimateOptions,
    variance: &VarianceOptions,
) -> Result<VarianceResult> {
    match method {
        VarianceMethod::Bootstrap => bootstrap_se(panel, options, variance),
        VarianceMethod::Placebo => placebo_se(panel, options, variance),
        VarianceMethod::None => Ok(VarianceResult::none(variance.level)),
    }
}

/// `estimate ± z·se` with `z` the `(1 + level)/2` standard normal quantile.
pub fn confidence_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if se.is_nan() || se < 0.0 {
        return Err(Error::InvalidInput(format!("standard error must be >= 0, got {se}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let half = normal_quantile(0.5 * (1.0 + level)) * se;
    Ok((estimate - half, estimate + half))
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.024_25;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}
