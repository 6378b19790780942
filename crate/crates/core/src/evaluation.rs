//! Accuracy metrics, error distributions, hidden-physics recovery and
//! parameter sweeps.
//!
//! All fields live on the 201 x 101 storage grid of [`SpaceTimeGrid`] and
//! are indexed `[x_index, t_index]`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView, Dimension};
use serde::{Deserialize, Serialize};

use crate::dataset::function_context;
use crate::model::DhpModel;
use crate::oracle::{ftcs_solve, InputFunctionSpec, PdeParams, SolutionField, SpaceTimeGrid};
use crate::{par, Error, Result};

/// `‖reference − predicted‖₂ / ‖reference‖₂` over all entries.
pub fn relative_l2_error<D: Dimension>(reference: ArrayView<f64, D>, predicted: ArrayView<f64, D>) -> Result<f64> {
    if reference.shape() != predicted.shape() {
        return Err(Error::Shape(format!(
            "reference is {:?}, prediction is {:?}",
            reference.shape(),
            predicted.shape()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&r, &p) in reference.iter().zip(predicted.iter()) {
        num += (r - p) * (r - p);
        den += r * r;
    }
    if den == 0.0 || !den.is_finite() {
        return Err(Error::InvalidArgument(
            "reference field has zero (or non-finite) norm".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Every grid node as a row `(x, t)`, x-major to match field storage.
pub fn grid_points(grid: &SpaceTimeGrid) -> Array2<f64> {
    let mut p = Array2::<f64>::zeros((grid.len(), 2));
    for i in 0..grid.nx {
        for j in 0..grid.nt {
            let r = i * grid.nt + j;
            p[[r, 0]] = grid.x(i);
            p[[r, 1]] = grid.t(j);
        }
    }
    p
}

/// `N_sol` prediction at every node of the standard grid for the input function.
pub fn predict_field(model: &DhpModel, spec: &InputFunctionSpec, params: PdeParams) -> Result<SolutionField> {
    let grid = SpaceTimeGrid::standard(spec.length);
    let ctx = function_context(model.scenario, spec, params)?;
    let u = model.predict_states(&ctx, grid_points(&grid).view())?;
    let values = u
        .into_shape_with_order((grid.nx, grid.nt))
        .expect("grid-sized prediction");
    Ok(SolutionField { grid, values })
}

#[derive(Debug, Clone)]
pub struct FunctionEvaluation {
    pub reference: SolutionField,
    pub predicted: SolutionField,
    pub error: f64,
}

/// Predicted field and its relative L2 error against a fresh oracle solve.
pub fn evaluate_on_function(
    model: &DhpModel,
    spec: &InputFunctionSpec,
    params: PdeParams,
) -> Result<FunctionEvaluation> {
    let predicted = predict_field(model, spec, params)?;
    let reference = ftcs_solve(params, spec, &predicted.grid)?;
    let error = relative_l2_error(reference.values.view(), predicted.values.view())?;
    Ok(FunctionEvaluation {
        reference,
        predicted,
        error,
    })
}

#[derive(Debug, Clone)]
pub struct HiddenFieldComparison {
    pub grid: SpaceTimeGrid,
    /// `D·u_xx + K·u²` with `u` and `u_xx` from `N_sol`.
    pub true_field: Array2<f64>,
    /// `N_hid(x, t, u, u_x, u_xx)` at the same nodes.
    pub learned_field: Array2<f64>,
    pub error: f64,
}

/// Compares what `N_hid` learned with the actual right-hand side evaluated on `N_sol`.
pub fn hidden_field_comparison(
    model: &DhpModel,
    spec: &InputFunctionSpec,
    params: PdeParams,
) -> Result<HiddenFieldComparison> {
    let grid = SpaceTimeGrid::standard(spec.length);
    let ctx = function_context(model.scenario, spec, params)?;
    let points = grid_points(&grid);
    let jets = model.state_jets(&ctx, points.view())?;
    let cand = DhpModel::candidate_terms(points.view(), &jets);
    let learned = model.hidden_terms(cand.view())?;
    let truth = &jets.u_xx * params.d + &jets.u.mapv(|u| u * u) * params.k;
    let shape = (grid.nx, grid.nt);
    let true_field = truth.into_shape_with_order(shape).expect("grid-sized field");
    let learned_field = learned.into_shape_with_order(shape).expect("grid-sized field");
    let error = relative_l2_error(true_field.view(), learned_field.view())?;
    Ok(HiddenFieldComparison {
        grid,
        true_field,
        learned_field,
        error,
    })
}

/// One input function to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub id: usize,
    pub spec: InputFunctionSpec,
    pub params: PdeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionError {
    pub id: usize,
    pub function: String,
    pub length: f64,
    pub d: f64,
    pub k: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_function_errors: Vec<FunctionError>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub hidden_field_error: Option<f64>,
}

impl EvalReport {
    pub fn from_errors(per_function_errors: Vec<FunctionError>) -> Result<Self> {
        if per_function_errors.is_empty() {
            return Err(Error::InvalidArgument("no errors to summarize".into()));
        }
        let (mean, std) = mean_std(per_function_errors.iter().map(|e| e.error));
        Ok(Self {
            per_function_errors,
            mean,
            std,
            hidden_field_error: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-function errors with mean and standard deviation. Functions are
/// evaluated in parallel and reported in input order.
pub fn error_distribution(model: &DhpModel, cases: &[EvalCase]) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no functions to evaluate".into()));
    }
    let errors = par::map_ordered(cases, |_, c| {
        evaluate_on_function(model, &c.spec, c.params).map(|ev| FunctionError {
            id: c.id,
            function: c.spec.descriptor(),
            length: c.spec.length,
            d: c.params.d,
            k: c.params.k,
            error: ev.error,
        })
    });
    EvalReport::from_errors(errors.into_iter().collect::<Result<_>>()?)
}

/// `n` equispaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * (i as f64 / (n - 1) as f64)).collect(),
    }
}

/// Diffusion values of the sweep: 21 points from 1e-3 to 5e-3.
pub fn sweep_d_values() -> Vec<f64> {
    linspace(1e-3, 5e-3, 21)
}

/// Reaction values of the sweep as published. Both lie below the trained K range.
pub const SWEEP_K_VALUES: [f64; 2] = [2e-4, 4e-4];
/// The same sweep one decade up, inside the trained K range.
pub const SWEEP_K_VALUES_IN_RANGE: [f64; 2] = [2e-3, 4e-3];

/// Closed interval of a parameter seen during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainedRange {
    pub min: f64,
    pub max: f64,
}

impl TrainedRange {
    pub fn of(values: &[f64]) -> Self {
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub d: f64,
    pub k: f64,
    pub mean_error: f64,
    /// `D` or `K` outside the trained range.
    pub extrapolation: bool,
}

/// Mean error per `(D, K)` cell, `D` varying fastest within each `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub d_values: Vec<f64>,
    pub k_values: Vec<f64>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, d_index: usize, k_index: usize) -> &SweepCell {
        &self.cells[k_index * self.d_values.len() + d_index]
    }

    /// Mean errors for one `K`, in `D` order.
    pub fn errors_for_k(&self, k_index: usize) -> Vec<f64> {
        (0..self.d_values.len())
            .map(|i| self.cell(i, k_index).mean_error)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("d,k,mean_error,extrapolation\n");
        for c in &self.cells {
            let _ = writeln!(s, "{:?},{:?},{:?},{}", c.d, c.k, c.mean_error, c.extrapolation);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mean error over `functions` for every `(D, K)` pair. Cells outside the
/// trained ranges are evaluated like any other but flagged.
pub fn parameter_sweep(
    model: &DhpModel,
    d_values: &[f64],
    k_values: &[f64],
    functions: &[InputFunctionSpec],
    trained_d: TrainedRange,
    trained_k: TrainedRange,
) -> Result<SweepTable> {
    if d_values.is_empty() || k_values.is_empty() || functions.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs D values, K values and functions".into(),
        ));
    }
    let mut cells_in = Vec::with_capacity(d_values.len() * k_values.len());
    for &k in k_values {
        for &d in d_values {
            cells_in.push(PdeParams::new(d, k)?);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells_in.len())
        .flat_map(|c| (0..functions.len()).map(move |f| (c, f)))
        .collect();
    let errors = par::map_ordered(&jobs, |_, &(c, f)| {
        evaluate_on_function(model, &functions[f], cells_in[c]).map(|e| e.error)
    });
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    let cells = cells_in
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let errs = &errors[c * functions.len()..(c + 1) * functions.len()];
            SweepCell {
                d: p.d,
                k: p.k,
                mean_error: errs.iter().sum::<f64>() / errs.len() as f64,
                extrapolation: !(trained_d.contains(p.d) && trained_k.contains(p.k)),
            }
        })
        .collect();
    Ok(SweepTable {
        d_values: d_values.to_vec(),
        k_values: k_values.to_vec(),
        cells,
    })
}

/// `x,t,value` rows for every grid node, x-major.
pub fn contour_csv(grid: &SpaceTimeGrid, values: &Array2<f64>) -> Result<String> {
    if values.dim() != (grid.nx, grid.nt) {
        return Err(Error::Shape(format!(
            "field is {:?}, grid is {}x{}",
            values.dim(),
            grid.nx,
            grid.nt
        )));
    }
    let mut s = String::with_capacity(grid.len() * 32);
    s.push_str("x,t,value\n");
    for i in 0..grid.nx {
        for j in 0..grid.nt {
            let _ = writeln!(s, "{:?},{:?},{:?}", grid.x(i), grid.t(j), values[[i, j]]);
        }
    }
    Ok(s)
}

pub fn write_contours(path: &Path, grid: &SpaceTimeGrid, values: &Array2<f64>) -> Result<()> {
    std::fs::write(path, contour_csv(grid, values)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr1;

    #[test]
    fn relative_error_examples() {
        let r = arr1(&[3.0, 4.0]);
        assert_eq!(relative_l2_error(r.view(), r.view()).unwrap(), 0.0);
        assert_relative_eq!(relative_l2_error(r.view(), arr1(&[3.0, 0.0]).view()).unwrap(), 0.8);
        assert_relative_eq!(relative_l2_error(r.view(), arr1(&[0.0, 0.0]).view()).unwrap(), 1.0);
    }

    #[test]
    fn relative_error_rejects_zero_reference_and_shape_mismatch() {
        let z = arr1(&[0.0, 0.0]);
        assert!(relative_l2_error(z.view(), arr1(&[1.0, 0.0]).view()).is_err());
        assert!(relative_l2_error(arr1(&[1.0]).view(), z.view()).is_err());
    }

    #[test]
    fn grid_points_are_x_major() {
        let g = SpaceTimeGrid::standard(2.0);
        let p = grid_points(&g);
        assert_eq!(p.dim(), (201 * 101, 2));
        assert_eq!(p.row(1).to_vec(), vec![0.0, 0.1]);
        assert_eq!(p.row(101).to_vec(), vec![0.01, 0.0]);
        assert_eq!(p.row(201 * 101 - 1).to_vec(), vec![2.0, 10.0]);
    }

    #[test]
    fn singleton_report_has_zero_std() {
        let e = FunctionError {
            id: 3,
            function: "quadratic".into(),
            length: 1.0,
            d: 1e-3,
            k: 1e-3,
            error: 0.25,
        };
        let r = EvalReport::from_errors(vec![e]).unwrap();
        assert_eq!(r.mean, 0.25);
        assert_eq!(r.std, 0.0);
        assert!(EvalReport::from_errors(vec![]).is_err());
    }

    #[test]
    fn sweep_grid() {
        let d = sweep_d_values();
        assert_eq!(d.len(), 21);
        assert_eq!(d[0], 1e-3);
        assert_eq!(d[20], 5e-3);
        assert_relative_eq!(d[1] - d[0], 2e-4, max_relative = 1e-9);
        let k = TrainedRange::of(&[1e-3, 3e-3, 5e-3]);
        assert!(!SWEEP_K_VALUES.iter().any(|&v| k.contains(v)));
        assert!(SWEEP_K_VALUES_IN_RANGE.iter().all(|&v| k.contains(v)));
    }

    #[test]
    fn contour_rows() {
        let g = SpaceTimeGrid::standard(1.0);
        let v = Array2::from_shape_fn((201, 101), |(i, j)| (i * 1000 + j) as f64);
        let s = contour_csv(&g, &v).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 1 + 201 * 101);
        assert_eq!(lines[0], "x,t,value");
        assert_eq!(lines[2], "0.0,0.1,1.0");
        assert!(contour_csv(&g, &Array2::zeros((2, 2))).is_err());
    }
}
