//! Unit and time weights for one cohort.
//!
//! Both weight problems are instances of [`simplex_regression`]: a ridge
//! penalised least-squares fit with a free intercept and coefficients
//! restricted to the unit simplex. The intercept is profiled out by
//! centering, which leaves a convex quadratic over the simplex that is solved
//! with an away-step Frank–Wolfe method and exact line search, accelerated
//! by periodic active-set Newton steps on the current support.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Multiplier applied to the noise scale to obtain the time-weight
/// regularization.
pub const TIME_ZETA_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Stopping threshold on the Frank–Wolfe duality gap, relative to the
    /// scale of the problem (see [`simplex_regression`]).
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// Penalised objective at the returned point, intercept included.
    pub objective: f64,
    pub iterations: usize,
    pub duality_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub diagnostics: SolveDiagnostics,
}

impl SimplexFit {
    /// Fails with [`Error::MaxIterations`] when the solver stopped early.
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.diagnostics.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterations {
                iterations: self.diagnostics.iterations,
                gap: self.diagnostics.duality_gap,
            })
        }
    }
}

/// Value of `‖b + A·w − y‖² + ridge·‖w‖²` with the intercept `b` set to its
/// optimal value `mean(y − A·w)`. Returns `(objective, b)`.
pub fn profiled_objective(
    targets: &[f64],
    features: ArrayView2<'_, f64>,
    ridge: f64,
    weights: &[f64],
) -> (f64, f64) {
    let fitted = features.dot(&ndarray::aview1(weights));
    let resid: Vec<f64> = targets.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let intercept = resid.iter().sum::<f64>() / resid.len() as f64;
    let sse: f64 = resid.iter().map(|r| (r - intercept).powi(2)).sum();
    let penalty: f64 = weights.iter().map(|w| w * w).sum();
    (sse + ridge * penalty, intercept)
}

/// Minimises `‖b + A·w − y‖² + ridge·‖w‖²` over `w` in the unit simplex and
/// free `b`.
///
/// Iterations start from uniform weights and alternate Frank–Wolfe and away
/// steps, each with an exact line search. Every few iterations the iterate
/// jumps towards the exact minimiser over its current support, which gives
/// fast final convergence on ill-conditioned problems. The solver stops once the duality
/// gap drops below `options.tolerance` times the problem scale
/// `max(f(uniform), ‖y − ȳ‖², tr(ÃᵀÃ)/k)`, which makes the returned weights
/// invariant to rescaling the data. On hitting `max_iter` the last iterate is
/// returned with `converged = false`.
pub fn simplex_regression(
    targets: &[f64],
    features: ArrayView2<'_, f64>,
    ridge: f64,
    options: &SolverOptions,
) -> Result<SimplexFit> {
    let (rows, k) = features.dim();
    if rows != targets.len() {
        return Err(Error::InvalidInput(format!(
            "feature matrix has {rows} rows but there are {} targets",
            targets.len()
        )));
    }
    if rows == 0 || k == 0 {
        return Err(Error::DegenerateProblem(format!(
            "empty regression ({rows} rows, {k} weights)"
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if targets.iter().chain(features.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("regression data must be finite".into()));
    }

    let col_means = features.mean_axis(Axis(0)).expect("rows > 0");
    let centered: Array2<f64> = &features - &col_means.view().insert_axis(Axis(0));
    let y_mean = targets.iter().sum::<f64>() / rows as f64;
    let y_centered = Array1::from_iter(targets.iter().map(|y| y - y_mean));

    let mut gram = centered.t().dot(&centered);
    let trace = gram.diag().sum();
    gram.diag_mut().mapv_inplace(|q| q + ridge);
    let linear = centered.t().dot(&y_centered);

    let mut w = vec![1.0 / k as f64; k];
    let (initial_objective, _) = profiled_objective(targets, features, ridge, &w);
    let scale = initial_objective
        .max(y_centered.dot(&y_centered))
        .max(trace / k as f64);
    let threshold = options.tolerance * scale;

    let mut gram_w = gram.dot(&ndarray::aview1(&w));
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations <= options.max_iter {
        // grad = 2(Qw - c)
        let grad: Vec<f64> = gram_w
            .iter()
            .zip(&linear)
            .map(|(qw, c)| 2.0 * (qw - c))
            .collect();
        let grad_w: f64 = grad.iter().zip(&w).map(|(g, w)| g * w).sum();

        let toward = argmin(&grad);
        gap = grad_w - grad[toward];
        if gap <= threshold {
            converged = true;
            break;
        }
        if iterations == options.max_iter {
            break;
        }
        iterations += 1;

        let away = (0..k)
            .filter(|&j| w[j] > 0.0)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]).then(b.cmp(&a)))
            .expect("weights sum to one");
        let away_gap = grad[away] - grad_w;
        let w_qw: f64 = w.iter().zip(&gram_w).map(|(w, q)| w * q).sum();

        if gap >= away_gap || w[away] >= 1.0 {
            // w <- (1-γ)w + γ e_s
            let curvature = gram[(toward, toward)] - 2.0 * gram_w[toward] + w_qw;
            let step = line_search(gap, curvature, 1.0);
            for (j, wj) in w.iter_mut().enumerate() {
                *wj *= 1.0 - step;
                if j == toward {
                    *wj += step;
                }
            }
        } else {
            // w <- (1+γ)w - γ e_v
            let max_step = w[away] / (1.0 - w[away]);
            let curvature = gram[(away, away)] - 2.0 * gram_w[away] + w_qw;
            let step = line_search(away_gap, curvature, max_step);
            for (j, wj) in w.iter_mut().enumerate() {
                *wj *= 1.0 + step;
                if j == away {
                    *wj -= step;
                }
            }
            if step >= max_step {
                w[away] = 0.0;
            }
        }
        if iterations % POLISH_EVERY == 0 {
            polish_on_support(&gram, &linear, &mut w);
        }
        gram_w = gram.dot(&ndarray::aview1(&w));
    }

    for wj in w.iter_mut() {
        *wj = wj.max(0.0);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wj| *wj /= total);

    let (objective, intercept) = profiled_objective(targets, features, ridge, &w);
    Ok(SimplexFit {
        weights: w,
        intercept,
        diagnostics: SolveDiagnostics {
            objective,
            iterations,
            duality_gap: gap,
            converged,
        },
    })
}

/// Frank–Wolfe iterations between active-set Newton steps.
const POLISH_EVERY: usize = 10;

/// Quadratic part of the objective, `wᵀQw − 2cᵀw`.
fn quadratic(gram: &Array2<f64>, linear: &Array1<f64>, w: &[f64]) -> f64 {
    let w_view = ndarray::aview1(w);
    w_view.dot(&gram.dot(&w_view)) - 2.0 * linear.dot(&w_view)
}

/// Moves `w` towards the minimiser of the objective over the affine hull of
/// its current support, stopping where a coordinate would turn negative.
/// Repeats while the support shrinks. Steps that fail to lower the objective
/// are discarded, so the Frank–Wolfe iterate is never made worse.
fn polish_on_support(gram: &Array2<f64>, linear: &Array1<f64>, w: &mut [f64]) {
    loop {
        let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
        let m = support.len();
        if m < 2 {
            return;
        }
        // Constraint rows scaled by a power of two comparable to Q, so that
        // pivoting (and hence the result) is unchanged when the data are
        // rescaled by a power of two.
        let diag_mean = support.iter().map(|&j| gram[(j, j)]).sum::<f64>() / m as f64;
        let unit = if diag_mean > 0.0 && diag_mean.is_finite() {
            2f64.powi(diag_mean.log2().round() as i32)
        } else {
            1.0
        };
        let kkt = nalgebra::DMatrix::from_fn(m + 1, m + 1, |r, c| match (r < m, c < m) {
            (true, true) => gram[(support[r], support[c])],
            (false, false) => 0.0,
            _ => unit,
        });
        let rhs = nalgebra::DVector::from_fn(m + 1, |r, _| if r < m { linear[support[r]] } else { unit });
        let Some(solution) = kkt.lu().solve(&rhs) else {
            return;
        };
        if solution.iter().any(|v| !v.is_finite()) {
            return;
        }

        let mut step = 1.0_f64;
        let mut blocking = None;
        for (r, &j) in support.iter().enumerate() {
            if solution[r] < 0.0 {
                let limit = w[j] / (w[j] - solution[r]);
                if limit < step {
                    step = limit;
                    blocking = Some(j);
                }
            }
        }
        let mut candidate = w.to_vec();
        for (r, &j) in support.iter().enumerate() {
            candidate[j] = (w[j] + step * (solution[r] - w[j])).max(0.0);
        }
        if let Some(j) = blocking {
            candidate[j] = 0.0;
        }
        let total: f64 = candidate.iter().sum();
        candidate.iter_mut().for_each(|v| *v /= total);

        if quadratic(gram, linear, &candidate) > quadratic(gram, linear, w) {
            return;
        }
        w.copy_from_slice(&candidate);
        if blocking.is_none() {
            return;
        }
    }
}

/// Minimiser of `-descent·γ + curvature·γ²` on `[0, max_step]`.
fn line_search(descent: f64, curvature: f64, max_step: f64) -> f64 {
    if curvature <= 0.0 {
        return max_step;
    }
    (descent / (2.0 * curvature)).clamp(0.0, max_step)
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = j;
        }
    }
    best
}

/// Noise-scale based regularization for the unit weights of one cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularization {
    pub zeta: f64,
    /// Population standard deviation of pre-period first differences of the
    /// controls.
    pub sigma: f64,
    /// Set when the cohort has a single pre-period, so no first differences
    /// exist and `zeta` is forced to zero.
    pub degenerate: bool,
}

/// `ζ = (N_tr·T_tr)^{1/4}·σ̂` for the cohort held in `subpanel`.
pub fn regularization_zeta(subpanel: &PanelDataset) -> Result<Regularization> {
    let a = subpanel.single_cohort()?;
    let y = subpanel.outcome();
    let horizon = subpanel.n_periods() - a + 1;
    let treated_periods = (subpanel.n_treated() * horizon) as f64;

    // first differences among the a-1 pre-periods
    let diffs: Vec<f64> = (0..subpanel.n_controls())
        .flat_map(|i| (1..a - 1).map(move |s| y[(i, s)] - y[(i, s - 1)]))
        .collect();
    let sigma = population_sd(&diffs);
    Ok(Regularization {
        zeta: treated_periods.powf(0.25) * sigma,
        sigma,
        degenerate: a == 2,
    })
}

fn population_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Unit-weight problem: pre-period treated means regressed on control paths.
fn unit_problem(subpanel: &PanelDataset, a: usize) -> (Vec<f64>, Array2<f64>) {
    let y = subpanel.outcome();
    let n_co = subpanel.n_controls();
    let treated = y.slice(ndarray::s![n_co.., ..a - 1]);
    let targets = treated.mean_axis(Axis(0)).expect("treated units").to_vec();
    let features = y.slice(ndarray::s![..n_co, ..a - 1]).t().to_owned();
    (targets, features)
}

/// Time-weight problem: control post-period means regressed on their
/// pre-period outcomes.
fn time_problem(subpanel: &PanelDataset, a: usize) -> (Vec<f64>, Array2<f64>) {
    let y = subpanel.outcome();
    let n_co = subpanel.n_controls();
    let targets = y
        .slice(ndarray::s![..n_co, a - 1..])
        .mean_axis(Axis(1))
        .expect("post periods")
        .to_vec();
    let features = y.slice(ndarray::s![..n_co, ..a - 1]).to_owned();
    (targets, features)
}

pub fn solve_unit_weights(
    subpanel: &PanelDataset,
    zeta: f64,
    options: &SolverOptions,
) -> Result<SimplexFit> {
    let a = pre_checked_cohort(subpanel)?;
    let (targets, features) = unit_problem(subpanel, a);
    simplex_regression(&targets, features.view(), zeta * zeta * (a - 1) as f64, options)
}

pub fn solve_time_weights(
    subpanel: &PanelDataset,
    zeta_time: f64,
    options: &SolverOptions,
) -> Result<SimplexFit> {
    let a = pre_checked_cohort(subpanel)?;
    let (targets, features) = time_problem(subpanel, a);
    let ridge = zeta_time * zeta_time * subpanel.n_controls() as f64;
    simplex_regression(&targets, features.view(), ridge, options)
}

fn pre_checked_cohort(subpanel: &PanelDataset) -> Result<usize> {
    let a = subpanel.single_cohort()?;
    if a < 2 {
        return Err(Error::DegenerateProblem("cohort has no pre-period".into()));
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct WeightOptions {
    pub solver: SolverOptions,
    /// Skip the solver and use `ω = 1/N_co`, `λ = 1/(a−1)`.
    pub uniform: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightDiagnostics {
    pub unit: SolveDiagnostics,
    pub time: SolveDiagnostics,
    pub sigma: f64,
    pub zeta_degenerate: bool,
}

impl WeightDiagnostics {
    pub fn converged(&self) -> bool {
        self.unit.converged && self.time.converged
    }
}

/// Unit and time weights fitted for one cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSet {
    pub cohort: usize,
    pub omega: Vec<f64>,
    pub omega_intercept: f64,
    pub lambda: Vec<f64>,
    pub lambda_intercept: f64,
    pub zeta: f64,
    pub zeta_time: f64,
    pub diagnostics: WeightDiagnostics,
}

impl WeightSet {
    /// Largest violation of the simplex constraints by either weight vector.
    pub fn simplex_violation(&self) -> f64 {
        [&self.omega, &self.lambda]
            .into_iter()
            .map(|w| {
                let negativity = w.iter().fold(0.0_f64, |m, &v| m.max(-v));
                negativity.max((w.iter().sum::<f64>() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Regularization plus both weight solves for the cohort in `subpanel`.
pub fn fit_weights(subpanel: &PanelDataset, options: &WeightOptions) -> Result<WeightSet> {
    let a = pre_checked_cohort(subpanel)?;
    let reg = regularization_zeta(subpanel)?;
    let zeta_time = TIME_ZETA_FACTOR * reg.sigma;

    let (unit, time) = if options.uniform {
        let (ut, uf) = unit_problem(subpanel, a);
        let (tt, tf) = time_problem(subpanel, a);
        (
            uniform_fit(&ut, uf.view(), reg.zeta.powi(2) * (a - 1) as f64),
            uniform_fit(&tt, tf.view(), zeta_time.powi(2) * subpanel.n_controls() as f64),
        )
    } else {
        (
            solve_unit_weights(subpanel, reg.zeta, &options.solver)?,
            solve_time_weights(subpanel, zeta_time, &options.solver)?,
        )
    };

    Ok(WeightSet {
        cohort: a,
        omega: unit.weights,
        omega_intercept: unit.intercept,
        lambda: time.weights,
        lambda_intercept: time.intercept,
        zeta: reg.zeta,
        zeta_time,
        diagnostics: WeightDiagnostics {
            unit: unit.diagnostics,
            time: time.diagnostics,
            sigma: reg.sigma,
            zeta_degenerate: reg.degenerate,
        },
    })
}

fn uniform_fit(targets: &[f64], features: ArrayView2<'_, f64>, ridge: f64) -> SimplexFit {
    let k = features.ncols();
    let weights = vec![1.0 / k as f64; k];
    let (objective, intercept) = profiled_objective(targets, features, ridge, &weights);
    SimplexFit {
        weights,
        intercept,
        diagnostics: SolveDiagnostics {
            objective,
            iterations: 0,
            duality_gap: 0.0,
            converged: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn panel(rows: &[(&[f64], Option<usize>)]) -> PanelDataset {
        let t = rows[0].0.len();
        let labels = (0..rows.len()).map(|i| format!("u{i}")).collect();
        let y = Array2::from_shape_fn((rows.len(), t), |(i, s)| rows[i].0[s]);
        let adoption: Vec<_> = rows.iter().map(|r| r.1).collect();
        PanelDataset::from_adoption(labels, (1..=t as i64).collect(), y, &adoption).unwrap()
    }

    /// Controls (1,2,3,4) and (3,3,3,3); treated (2,3,4,10) adopting at 3.
    fn p1() -> PanelDataset {
        panel(&[
            (&[1.0, 2.0, 3.0, 4.0], None),
            (&[3.0, 3.0, 3.0, 3.0], None),
            (&[2.0, 3.0, 4.0, 10.0], Some(3)),
        ])
    }

    /// Exhaustive search over the 1-simplex, intercept profiled in closed form.
    fn grid_1simplex(targets: &[f64], features: ArrayView2<'_, f64>, ridge: f64) -> (f64, f64) {
        let steps = 10_000;
        (0..=steps)
            .map(|k| {
                let w0 = k as f64 / steps as f64;
                let (f, _) = profiled_objective(targets, features, ridge, &[w0, 1.0 - w0]);
                (f, w0)
            })
            .fold((f64::INFINITY, 0.0), |best, cur| if cur.0 < best.0 { cur } else { best })
    }

    #[test]
    fn single_column_gets_full_weight() {
        let fit = simplex_regression(&[1.0, 5.0, -2.0], array![[0.3], [0.1], [9.0]].view(), 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(fit.weights, vec![1.0]);
        assert!(fit.diagnostics.converged);
    }

    #[test]
    fn exact_column_fit() {
        let y = [1.0, 4.0, 2.0, 7.0];
        let x = array![[0.0, 1.0, 5.0], [1.0, 4.0, 5.0], [2.0, 2.0, 6.0], [3.0, 7.0, 1.0]];
        let fit = simplex_regression(&y, x.view(), 0.0, &SolverOptions::default()).unwrap();
        assert!((fit.weights[1] - 1.0).abs() < 1e-8, "{:?}", fit.weights);
        assert!(fit.diagnostics.objective < 1e-12);
        assert!(fit.intercept.abs() < 1e-6);
    }

    #[test]
    fn identical_columns_split_evenly() {
        let y = [1.0, 3.0, 2.0];
        let x = array![[0.5, 0.5], [2.0, 2.0], [1.0, 1.0]];
        let fit = simplex_regression(&y, x.view(), 0.1, &SolverOptions::default()).unwrap();
        assert_eq!(fit.weights, vec![0.5, 0.5]);
    }

    /// Grid over the 2-simplex at `step`, restricted to the box
    /// `[lo0, lo0 + width] × [lo1, lo1 + width]`.
    fn grid_2simplex(
        y: &[f64],
        x: ArrayView2<'_, f64>,
        ridge: f64,
        (lo0, lo1): (f64, f64),
        width: f64,
        step: f64,
    ) -> (f64, [f64; 3]) {
        let n = (width / step).round() as usize;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=n {
            for j in 0..=n {
                let (w0, w1) = (lo0 + i as f64 * step, lo1 + j as f64 * step);
                if w0 < 0.0 || w1 < 0.0 || w0 + w1 > 1.0 + 1e-12 {
                    continue;
                }
                let w = [w0, w1, (1.0 - w0 - w1).max(0.0)];
                let f = profiled_objective(y, x, ridge, &w).0;
                if f < best.0 {
                    best = (f, w);
                }
            }
        }
        best
    }

    #[test]
    fn three_column_instance_matches_grid() {
        let y = [0.7, -1.2, 0.4, 2.1];
        let x = array![[0.2, 1.5, -0.3], [-0.8, 0.1, 0.9], [1.1, -0.4, 0.3], [0.6, 2.2, -1.0]];
        let ridge = 0.05;
        let (coarse, mut w) = grid_2simplex(&y, x.view(), ridge, (0.0, 0.0), 1.0, 1e-3);
        let mut refined = coarse;
        for step in [1e-5, 1e-7] {
            let width = 200.0 * step;
            (refined, w) = grid_2simplex(&y, x.view(), ridge, (w[0] - width / 2.0, w[1] - width / 2.0), width, step);
        }
        let fit = simplex_regression(&y, x.view(), ridge, &SolverOptions::default()).unwrap();
        assert!(fit.diagnostics.converged);
        assert!(fit.diagnostics.objective <= coarse + 1e-6);
        assert!((fit.diagnostics.objective - refined).abs() < 1e-6, "{} vs {refined}", fit.diagnostics.objective);
        for (a, b) in fit.weights.iter().zip(w) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn max_iterations_keeps_simplex() {
        let y = [0.7, -1.2, 0.4, 2.1];
        let x = array![[0.2, 1.5, -0.3], [-0.8, 0.1, 0.9], [1.1, -0.4, 0.3], [0.6, 2.2, -1.0]];
        let opts = SolverOptions { tolerance: 0.0, max_iter: 3 };
        let fit = simplex_regression(&y, x.view(), 0.0, &opts).unwrap();
        assert!(!fit.diagnostics.converged);
        assert_eq!(fit.diagnostics.iterations, 3);
        assert!(matches!(fit.ensure_converged(), Err(Error::MaxIterations { iterations: 3, .. })));
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fit.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let x = array![[1.0], [f64::NAN]];
        assert!(simplex_regression(&[0.0, 1.0], x.view(), 0.0, &SolverOptions::default()).is_err());
        let x = array![[1.0], [2.0]];
        assert!(simplex_regression(&[0.0, 1.0], x.view(), -1.0, &SolverOptions::default()).is_err());
        assert!(simplex_regression(&[0.0], x.view(), 0.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn zeta_for_p1() {
        // diffs over pre-periods t < a-1: {2-1, 3-3} = {1, 0}, σ̂ = 0.5
        // ζ = (1·2)^{1/4}·0.5
        let reg = regularization_zeta(&p1()).unwrap();
        assert_eq!(reg.sigma, 0.5);
        assert!((reg.zeta - 0.594_603_557_501_360_5).abs() < 1e-15);
        assert!(!reg.degenerate);
    }

    #[test]
    fn zeta_degenerate_cases() {
        let linear = panel(&[
            (&[1.0, 2.0, 3.0, 4.0], None),
            (&[5.0, 6.0, 7.0, 8.0], None),
            (&[0.0, 1.0, 2.0, 9.0], Some(4)),
        ]);
        assert_eq!(regularization_zeta(&linear).unwrap().zeta, 0.0);

        let one_diff = panel(&[(&[0.0, 1.0, 3.0], None), (&[0.0, 0.0, 5.0], Some(3))]);
        let reg = regularization_zeta(&one_diff).unwrap();
        assert_eq!(reg.sigma, 0.0);
        assert_eq!(reg.zeta, 0.0);

        let early = panel(&[(&[0.0, 1.0, 3.0], None), (&[4.0, 0.0, 0.0], None), (&[0.0, 0.0, 5.0], Some(2))]);
        let reg = regularization_zeta(&early).unwrap();
        assert_eq!(reg.zeta, 0.0);
        assert!(reg.degenerate);
    }

    #[test]
    fn p1_unit_weights_match_grid() {
        let sub = p1();
        let zeta = regularization_zeta(&sub).unwrap().zeta;
        let fit = solve_unit_weights(&sub, zeta, &SolverOptions::default()).unwrap();
        let (targets, features) = unit_problem(&sub, 3);
        let (oracle_obj, oracle_w0) = grid_1simplex(&targets, features.view(), zeta * zeta * 2.0);
        assert!((fit.weights[0] - oracle_w0).abs() < 1e-4, "{:?} vs {oracle_w0}", fit.weights);
        assert!(fit.diagnostics.objective <= oracle_obj + 1e-12);
        // frozen from the grid oracle; closed form (1+√2)/(1+2√2)
        assert!((fit.weights[0] - 0.6306).abs() < 1e-4);
        assert!((fit.weights[0] - 0.630_602_2).abs() < 1e-6);
    }

    #[test]
    fn p1_time_weights_match_grid() {
        let sub = p1();
        let zeta_time = TIME_ZETA_FACTOR * regularization_zeta(&sub).unwrap().sigma;
        let fit = solve_time_weights(&sub, zeta_time, &SolverOptions::default()).unwrap();
        let (targets, features) = time_problem(&sub, 3);
        let (oracle_obj, oracle_l0) = grid_1simplex(&targets, features.view(), zeta_time.powi(2) * 2.0);
        assert!((fit.weights[0] - oracle_l0).abs() < 1e-4, "{:?} vs {oracle_l0}", fit.weights);
        assert!(fit.diagnostics.objective <= oracle_obj + 1e-12);
        // frozen from the grid oracle above
        assert!((fit.weights[0] - 0.0).abs() < 1e-4);
    }

    #[test]
    fn single_control_and_single_pre_period() {
        let sub = panel(&[(&[1.0, 2.0, 3.0], None), (&[4.0, 0.0, 0.0], Some(2))]);
        let w = fit_weights(&sub, &WeightOptions::default()).unwrap();
        assert_eq!(w.omega, vec![1.0]);
        assert_eq!(w.lambda, vec![1.0]);
    }

    #[test]
    fn identical_controls_get_equal_unit_weights() {
        let sub = panel(&[
            (&[1.0, 3.0, 2.0, 5.0], None),
            (&[1.0, 3.0, 2.0, 5.0], None),
            (&[0.0, 4.0, 1.0, 8.0], Some(4)),
        ]);
        let w = fit_weights(&sub, &WeightOptions::default()).unwrap();
        assert!(w.zeta > 0.0);
        assert_eq!(w.omega, vec![0.5, 0.5]);
    }

    #[test]
    fn constant_controls_get_uniform_time_weights() {
        let sub = panel(&[
            (&[1.0, 1.0, 1.0, 1.0], None),
            (&[4.0, 4.0, 4.0, 4.0], None),
            (&[0.0, 4.0, 1.0, 8.0], Some(4)),
        ]);
        let fit = solve_time_weights(&sub, 0.1, &SolverOptions::default()).unwrap();
        for l in &fit.weights {
            assert!((l - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_zeta_gives_uniform_omega() {
        let sub = panel(&[
            (&[1.0, 2.0, 0.5, 4.0, 3.0], None),
            (&[0.0, 1.5, 2.5, 1.0, 2.0], None),
            (&[3.0, 0.2, 1.0, 2.0, 0.0], None),
            (&[2.0, 2.0, 2.5, 9.0, 9.0], Some(4)),
        ]);
        let fit = solve_unit_weights(&sub, 1e8, &SolverOptions::default()).unwrap();
        for w in &fit.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_mode_bypasses_solver() {
        let w = fit_weights(&p1(), &WeightOptions { uniform: true, ..Default::default() }).unwrap();
        assert_eq!(w.omega, vec![0.5, 0.5]);
        assert_eq!(w.lambda, vec![0.5, 0.5]);
        assert_eq!(w.diagnostics.unit.iterations, 0);
    }
}
