//! Balanced panel ingestion, validation and cohort bookkeeping.
//!
//! Periods are addressed by their 1-based position `t ∈ 1..=T` in the sorted
//! time axis; the original integer labels are kept for reporting. A cohort is
//! identified by its adoption period `a`, the first position at which its
//! units are treated.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};

/// Names of the long-format CSV columns holding each panel field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnNames {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treatment: "treatment".into(),
        }
    }
}

/// A validated balanced panel with never-treated units stored first.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_labels: Vec<String>,
    time_labels: Vec<i64>,
    outcome: Array2<f64>,
    treatment: Array2<bool>,
    adoption: Vec<Option<usize>>,
    n_controls: usize,
}

impl PanelDataset {
    /// Validates the panel invariants and reorders units so that the
    /// never-treated block comes first. Relative order inside the control
    /// and treated blocks is preserved.
    pub fn new(
        unit_labels: Vec<String>,
        time_labels: Vec<i64>,
        outcome: Array2<f64>,
        treatment: Array2<bool>,
    ) -> Result<Self> {
        let n = unit_labels.len();
        let t = time_labels.len();
        if outcome.dim() != (n, t) || treatment.dim() != (n, t) {
            return Err(Error::InvalidInput(format!(
                "outcome {:?} and treatment {:?} must both be {n}x{t}",
                outcome.dim(),
                treatment.dim()
            )));
        }
        if t == 0 {
            return Err(Error::InvalidInput("panel has no periods".into()));
        }
        for w in time_labels.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput(format!(
                    "time labels must be strictly increasing ({} follows {})",
                    w[1], w[0]
                )));
            }
            if w[1] != w[0] + 1 {
                return Err(Error::NonConsecutiveTime {
                    before: w[0],
                    after: w[1],
                });
            }
        }
        let mut seen = BTreeSet::new();
        for label in &unit_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate unit label `{label}`")));
            }
        }

        let mut adoption = Vec::with_capacity(n);
        for (i, label) in unit_labels.iter().enumerate() {
            if let Some((s, y)) = outcome.row(i).iter().enumerate().find(|(_, y)| !y.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite outcome {y} for unit `{label}` at time {}",
                    time_labels[s]
                )));
            }
            adoption.push(adoption_period(treatment.row(i), label)?);
        }

        let (controls, treated): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| adoption[i].is_none());
        if controls.is_empty() {
            return Err(Error::NoControls);
        }
        if treated.is_empty() {
            return Err(Error::NoTreated);
        }

        let order: Vec<usize> = controls.iter().chain(&treated).copied().collect();
        let already_sorted = order.iter().enumerate().all(|(k, &i)| k == i);
        let (unit_labels, outcome, treatment, adoption) = if already_sorted {
            (unit_labels, outcome, treatment, adoption)
        } else {
            (
                order.iter().map(|&i| unit_labels[i].clone()).collect(),
                outcome.select(ndarray::Axis(0), &order),
                treatment.select(ndarray::Axis(0), &order),
                order.iter().map(|&i| adoption[i]).collect(),
            )
        };

        Ok(Self {
            unit_labels,
            time_labels,
            outcome,
            treatment,
            adoption,
            n_controls: controls.len(),
        })
    }

    /// Builds a panel from outcomes and per-unit adoption periods
    /// (`None` for never-treated units).
    pub fn from_adoption(
        unit_labels: Vec<String>,
        time_labels: Vec<i64>,
        outcome: Array2<f64>,
        adoption: &[Option<usize>],
    ) -> Result<Self> {
        let t = time_labels.len();
        if adoption.len() != unit_labels.len() {
            return Err(Error::InvalidInput(
                "one adoption period is required per unit".into(),
            ));
        }
        let treatment = Array2::from_shape_fn((adoption.len(), t), |(i, s)| {
            adoption[i].is_some_and(|a| s + 1 >= a)
        });
        Self::new(unit_labels, time_labels, outcome, treatment)
    }

    pub fn n_units(&self) -> usize {
        self.unit_labels.len()
    }

    pub fn n_periods(&self) -> usize {
        self.time_labels.len()
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn n_treated(&self) -> usize {
        self.n_units() - self.n_controls
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[i64] {
        &self.time_labels
    }

    /// Label of the 1-based period `t`.
    pub fn time_label(&self, t: usize) -> i64 {
        self.time_labels[t - 1]
    }

    /// N×T outcome matrix.
    pub fn outcome(&self) -> ArrayView2<'_, f64> {
        self.outcome.view()
    }

    /// N×T treatment indicator matrix.
    pub fn treatment(&self) -> ArrayView2<'_, bool> {
        self.treatment.view()
    }

    /// Adoption period of every unit, `None` for never-treated units.
    pub fn adoption(&self) -> &[Option<usize>] {
        &self.adoption
    }

    /// Returns the common adoption period when every treated unit belongs to
    /// the same cohort.
    pub fn single_cohort(&self) -> Result<usize> {
        let mut cohorts = self.adoption.iter().flatten();
        let first = *cohorts.next().ok_or(Error::NoTreated)?;
        if let Some(other) = cohorts.find(|&&a| a != first) {
            return Err(Error::InvalidInput(format!(
                "expected a single-cohort panel, found adoption periods {first} and {other}"
            )));
        }
        Ok(first)
    }

    /// New panel made of the rows in `indices`, in that order (subject to the
    /// controls-first rule). Repeated indices become distinct units whose
    /// labels carry a `#k` suffix.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_units() {
                return Err(Error::InvalidInput(format!("unit index {i} out of range")));
            }
            let k = counts.entry(i).or_insert(0);
            labels.push(if *k == 0 {
                self.unit_labels[i].clone()
            } else {
                format!("{}#{}", self.unit_labels[i], k)
            });
            *k += 1;
        }
        Self::new(
            labels,
            self.time_labels.clone(),
            self.outcome.select(ndarray::Axis(0), indices),
            self.treatment.select(ndarray::Axis(0), indices),
        )
    }

    /// Same panel with every outcome replaced by `f(outcome)`.
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.unit_labels.clone(),
            self.time_labels.clone(),
            self.outcome.mapv(f),
            self.treatment.clone(),
        )
    }
}

fn adoption_period(row: ArrayView1<'_, bool>, label: &str) -> Result<Option<usize>> {
    let Some(first) = row.iter().position(|&d| d) else {
        return Ok(None);
    };
    if row.iter().skip(first).any(|&d| !d) {
        return Err(Error::NonAbsorbingTreatment {
            unit: label.to_owned(),
        });
    }
    if first == 0 {
        return Err(Error::TreatedFromFirstPeriod {
            unit: label.to_owned(),
        });
    }
    Ok(Some(first + 1))
}

/// Reads a long-format CSV panel. Units are sorted by label and periods by
/// time before validation, so the result does not depend on row order.
pub fn load_panel<R: Read>(source: R, columns: &ColumnNames) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let unit_col = find(&columns.unit)?;
    let time_col = find(&columns.time)?;
    let outcome_col = find(&columns.outcome)?;
    let treatment_col = find(&columns.treatment)?;

    let mut cells: BTreeMap<(String, i64), (f64, bool)> = BTreeMap::new();
    let mut units = BTreeSet::new();
    let mut times = BTreeSet::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let row = record.position().map_or(k as u64 + 2, |p| p.line());
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field `{name}`"),
            })
        };
        let unit = field(unit_col, &columns.unit)?.to_owned();
        let time_raw = field(time_col, &columns.time)?;
        let time: i64 = time_raw.parse().map_err(|_| Error::Parse {
            row,
            message: format!("time `{time_raw}` is not an integer"),
        })?;
        let outcome_raw = field(outcome_col, &columns.outcome)?;
        let outcome: f64 = outcome_raw
            .parse()
            .ok()
            .filter(|y: &f64| y.is_finite())
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("outcome `{outcome_raw}` is not a finite number"),
            })?;
        let treatment_raw = field(treatment_col, &columns.treatment)?;
        let treated = match treatment_raw.parse::<f64>() {
            Ok(0.0) => false,
            Ok(1.0) => true,
            _ => {
                return Err(Error::Parse {
                    row,
                    message: format!("treatment `{treatment_raw}` is not 0 or 1"),
                })
            }
        };
        if cells
            .insert((unit.clone(), time), (outcome, treated))
            .is_some()
        {
            return Err(Error::DuplicateCell { unit, time });
        }
        units.insert(unit);
        times.insert(time);
    }

    let unit_labels: Vec<String> = units.into_iter().collect();
    let time_labels: Vec<i64> = times.into_iter().collect();
    if unit_labels.is_empty() {
        return Err(Error::NoControls);
    }
    let (n, t) = (unit_labels.len(), time_labels.len());
    let mut outcome = Array2::zeros((n, t));
    let mut treatment = Array2::from_elem((n, t), false);
    for (i, unit) in unit_labels.iter().enumerate() {
        for (s, &time) in time_labels.iter().enumerate() {
            let &(y, d) = cells
                .get(&(unit.clone(), time))
                .ok_or_else(|| Error::MissingCell {
                    unit: unit.clone(),
                    time,
                })?;
            outcome[(i, s)] = y;
            treatment[(i, s)] = d;
        }
    }
    PanelDataset::new(unit_labels, time_labels, outcome, treatment)
}

/// Writes the panel in long format with columns `unit,time,outcome,treatment`.
pub fn write_panel<W: std::io::Write>(out: W, panel: &PanelDataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    writer
        .write_record(["unit", "time", "outcome", "treatment"])
        .map_err(io)?;
    for (i, unit) in panel.unit_labels().iter().enumerate() {
        for (s, time) in panel.time_labels().iter().enumerate() {
            writer
                .write_record([
                    unit.clone(),
                    time.to_string(),
                    panel.outcome[(i, s)].to_string(),
                    u8::from(panel.treatment[(i, s)]).to_string(),
                ])
                .map_err(io)?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(err: csv::Error) -> Error {
    let row = err.position().map_or(0, |p| p.line());
    Error::Parse {
        row,
        message: err.to_string(),
    }
}

/// Adoption dates, cohort memberships and the counts derived from them.
///
/// All maps are keyed by adoption period `a` or by event time `ℓ ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortStructure {
    pub n_periods: usize,
    pub adoption_dates: Vec<usize>,
    pub members: BTreeMap<usize, Vec<usize>>,
    pub control_indices: Vec<usize>,
    pub n_tr_by_cohort: BTreeMap<usize, usize>,
    pub horizon_by_cohort: BTreeMap<usize, usize>,
    pub t_post_by_cohort: BTreeMap<usize, usize>,
    pub t_post: usize,
    pub t_tr: usize,
    pub effective_cohorts: BTreeMap<usize, Vec<usize>>,
    pub n_tr_by_ell: BTreeMap<usize, usize>,
}

impl CohortStructure {
    pub fn n_controls(&self) -> usize {
        self.control_indices.len()
    }

    pub fn n_treated(&self) -> usize {
        self.n_tr_by_cohort.values().sum()
    }
}

pub fn derive_cohorts(panel: &PanelDataset) -> CohortStructure {
    let n_periods = panel.n_periods();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut control_indices = Vec::new();
    for (i, adoption) in panel.adoption().iter().enumerate() {
        match adoption {
            Some(a) => members.entry(*a).or_default().push(i),
            None => control_indices.push(i),
        }
    }
    let adoption_dates: Vec<usize> = members.keys().copied().collect();
    let n_tr_by_cohort: BTreeMap<usize, usize> =
        members.iter().map(|(&a, m)| (a, m.len())).collect();
    let horizon_by_cohort: BTreeMap<usize, usize> = adoption_dates
        .iter()
        .map(|&a| (a, n_periods - a + 1))
        .collect();
    let t_post_by_cohort: BTreeMap<usize, usize> = adoption_dates
        .iter()
        .map(|&a| (a, n_tr_by_cohort[&a] * horizon_by_cohort[&a]))
        .collect();
    let t_post = t_post_by_cohort.values().sum();
    let t_tr = horizon_by_cohort.values().copied().max().unwrap_or(0);

    let mut effective_cohorts = BTreeMap::new();
    let mut n_tr_by_ell = BTreeMap::new();
    for ell in 1..=t_tr {
        let cohorts: Vec<usize> = adoption_dates
            .iter()
            .copied()
            .filter(|&a| a - 1 + ell <= n_periods)
            .collect();
        n_tr_by_ell.insert(ell, cohorts.iter().map(|a| n_tr_by_cohort[a]).sum());
        effective_cohorts.insert(ell, cohorts);
    }

    CohortStructure {
        n_periods,
        adoption_dates,
        members,
        control_indices,
        n_tr_by_cohort,
        horizon_by_cohort,
        t_post_by_cohort,
        t_post,
        t_tr,
        effective_cohorts,
        n_tr_by_ell,
    }
}

/// Never-treated units plus the members of cohort `a`, over all periods.
pub fn cohort_subpanel(
    panel: &PanelDataset,
    cohorts: &CohortStructure,
    a: usize,
) -> Result<PanelDataset> {
    let members = cohorts.members.get(&a).ok_or(Error::UnknownCohort(a))?;
    if members.len() == panel.n_treated() {
        return Ok(panel.clone());
    }
    let rows: Vec<usize> = cohorts
        .control_indices
        .iter()
        .chain(members)
        .copied()
        .collect();
    panel.resample(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_panel(body: &str) -> Result<PanelDataset> {
        load_panel(body.as_bytes(), &ColumnNames::default())
    }

    const MINIMAL: &str = "unit,time,outcome,treatment\nA,1,1.0,0\nA,2,2.0,0\nB,1,1.5,0\nB,2,4.0,1\n";

    #[test]
    fn minimal_panel_loads() {
        let panel = csv_panel(MINIMAL).unwrap();
        assert_eq!(panel.n_controls(), 1);
        assert_eq!(panel.n_treated(), 1);
        assert_eq!(panel.unit_labels(), ["A", "B"]);
        assert_eq!(panel.adoption(), [None, Some(2)]);
        assert_eq!(panel.outcome()[(1, 1)], 4.0);
    }

    #[test]
    fn controls_are_stored_first() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,2,0,1\nB,1,0,0\nB,2,0,0\n";
        let panel = csv_panel(body).unwrap();
        assert_eq!(panel.unit_labels(), ["B", "A"]);
    }

    #[test]
    fn non_absorbing_treatment_is_rejected() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,2,0,0\nA,3,0,0\nB,1,0,0\nB,2,0,1\nB,3,0,0\n";
        match csv_panel(body) {
            Err(Error::NonAbsorbingTreatment { unit }) => assert_eq!(unit, "B"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn switch_off_from_first_period_is_non_absorbing() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,2,0,0\nB,1,0,1\nB,2,0,0\n";
        assert!(matches!(
            csv_panel(body),
            Err(Error::NonAbsorbingTreatment { .. })
        ));
    }

    #[test]
    fn missing_cell_is_reported() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nB,1,0,0\nB,2,0,1\n";
        match csv_panel(body) {
            Err(Error::MissingCell { unit, time }) => {
                assert_eq!(unit, "A");
                assert_eq!(time, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn treated_from_first_period_is_rejected() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,2,0,0\nB,1,0,1\nB,2,0,1\n";
        assert!(matches!(
            csv_panel(body),
            Err(Error::TreatedFromFirstPeriod { .. })
        ));
    }

    #[test]
    fn requires_controls_and_treated() {
        let no_controls = "unit,time,outcome,treatment\nA,1,0,0\nA,2,0,1\n";
        assert!(matches!(csv_panel(no_controls), Err(Error::NoControls)));
        let no_treated = "unit,time,outcome,treatment\nA,1,0,0\nA,2,0,0\n";
        assert!(matches!(csv_panel(no_treated), Err(Error::NoTreated)));
    }

    #[test]
    fn parse_errors_name_the_row() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,2,abc,0\n";
        match csv_panel(body) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let body = "unit,time,outcome,treatment\nA,1,0,2\n";
        assert!(matches!(csv_panel(body), Err(Error::Parse { row: 2, .. })));
        let body = "unit,time,outcome,treatment\nA,1.5,0,0\n";
        assert!(matches!(csv_panel(body), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn missing_column_and_duplicates() {
        let body = "id,time,outcome,treatment\nA,1,0,0\n";
        assert!(matches!(csv_panel(body), Err(Error::MissingColumn(c)) if c == "unit"));
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,1,0,0\n";
        assert!(matches!(csv_panel(body), Err(Error::DuplicateCell { .. })));
    }

    #[test]
    fn time_gaps_are_rejected() {
        let body = "unit,time,outcome,treatment\nA,1,0,0\nA,3,0,0\nB,1,0,0\nB,3,0,1\n";
        assert!(matches!(
            csv_panel(body),
            Err(Error::NonConsecutiveTime { before: 1, after: 3 })
        ));
    }

    fn panel_from(adoption: &[Option<usize>], t: usize) -> PanelDataset {
        let labels = (0..adoption.len()).map(|i| format!("u{i}")).collect();
        let times = (1..=t as i64).collect();
        let y = Array2::from_shape_fn((adoption.len(), t), |(i, s)| (i * 10 + s) as f64);
        PanelDataset::from_adoption(labels, times, y, adoption).unwrap()
    }

    #[test]
    fn two_cohort_bookkeeping() {
        let panel = panel_from(&[None, Some(2), Some(2), Some(3)], 3);
        let c = derive_cohorts(&panel);
        assert_eq!(c.adoption_dates, vec![2, 3]);
        assert_eq!(c.t_post, 5);
        assert_eq!(c.t_tr, 2);
        assert_eq!(c.effective_cohorts[&1], vec![2, 3]);
        assert_eq!(c.n_tr_by_ell[&1], 3);
        assert_eq!(c.effective_cohorts[&2], vec![2]);
        assert_eq!(c.n_tr_by_ell[&2], 2);
        assert_eq!(c.t_post_by_cohort[&2], 4);
        assert_eq!(c.control_indices, vec![0]);
    }

    #[test]
    fn single_cohort_t_post() {
        let panel = panel_from(&[None, None, Some(4), Some(4), Some(4)], 6);
        let c = derive_cohorts(&panel);
        assert_eq!(c.t_post, 3 * (6 - 4 + 1));
        assert_eq!(c.t_tr, 3);
    }

    #[test]
    fn last_period_cohort_has_unit_horizon() {
        let panel = panel_from(&[None, Some(5), Some(5)], 5);
        let c = derive_cohorts(&panel);
        assert_eq!(c.horizon_by_cohort[&5], 1);
        assert_eq!(c.t_tr, 1);
        assert!(!c.effective_cohorts.contains_key(&2));
    }

    #[test]
    fn subpanel_drops_other_cohorts() {
        let panel = panel_from(&[None, None, Some(2), Some(3), Some(3)], 4);
        let c = derive_cohorts(&panel);
        let sub = cohort_subpanel(&panel, &c, 2).unwrap();
        assert_eq!(sub.unit_labels(), ["u0", "u1", "u2"]);
        assert_eq!(sub.single_cohort().unwrap(), 2);
        let sub = cohort_subpanel(&panel, &c, 3).unwrap();
        assert_eq!(sub.unit_labels(), ["u0", "u1", "u3", "u4"]);
        assert!(matches!(
            cohort_subpanel(&panel, &c, 4),
            Err(Error::UnknownCohort(4))
        ));
    }

    #[test]
    fn single_cohort_subpanel_is_identity() {
        let panel = panel_from(&[None, Some(3), None, Some(3)], 4);
        let c = derive_cohorts(&panel);
        assert_eq!(cohort_subpanel(&panel, &c, 3).unwrap(), panel);
    }

    #[test]
    fn resample_relabels_duplicates() {
        let panel = panel_from(&[None, Some(2)], 3);
        let boot = panel.resample(&[1, 0, 1, 1]).unwrap();
        assert_eq!(boot.unit_labels(), ["u0", "u1", "u1#1", "u1#2"]);
        assert_eq!(boot.n_treated(), 3);
    }
}
