//! Ground truth for the reaction-diffusion system `u_t = D u_xx + K u²`
//! on `x ∈ [0, L]`, `t ∈ [0, 10]` with `u(0, t) = u(L, t) = 0`.
//!
//! Initial conditions come from a small family of input functions that all
//! vanish at both ends of the domain. Solutions are produced by an explicit
//! forward-time centered-space march and stored on a 201 x 101 grid.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Number of Fourier modes in a random periodic input.
pub const N_MODES: usize = 5;
/// Bound on each Fourier coefficient of a random periodic input.
pub const COEFF_BOUND: f64 = 0.4;
pub const NX: usize = 201;
pub const NT: usize = 101;
pub const T_END: f64 = 10.0;

/// Shape of an initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputFunction {
    /// `Σ A_k sin(kπx/L)` for k = 1..=5.
    Periodic { coefficients: Vec<f64> },
    /// `x (x − L)`
    Quadratic,
    /// `x (x − L)(x − L/2)`
    Cubic,
    /// `x/L − tan(πx / 4L)`
    Trigonometric,
}

/// An input function together with the domain it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFunctionSpec {
    pub function: InputFunction,
    pub length: f64,
}

impl InputFunctionSpec {
    pub fn new(function: InputFunction, length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain length must be positive, got {length}"
            )));
        }
        if let InputFunction::Periodic { coefficients } = &function {
            if coefficients.len() != N_MODES {
                return Err(Error::InvalidArgument(format!(
                    "periodic input needs {N_MODES} coefficients, got {}",
                    coefficients.len()
                )));
            }
            if let Some(a) = coefficients.iter().find(|a| !(a.is_finite() && a.abs() <= COEFF_BOUND)) {
                return Err(Error::InvalidArgument(format!(
                    "periodic coefficient {a} outside [-{COEFF_BOUND}, {COEFF_BOUND}]"
                )));
            }
        }
        Ok(Self { function, length })
    }

    pub fn periodic(coefficients: [f64; N_MODES], length: f64) -> Result<Self> {
        Self::new(
            InputFunction::Periodic {
                coefficients: coefficients.to_vec(),
            },
            length,
        )
    }

    /// Random periodic input with coefficients i.i.d. uniform on `[−0.4, 0.4]`.
    pub fn random_periodic(seed: u64, length: f64) -> Result<Self> {
        let mut rng = seed::rng(seed, &[seed::stream::INPUT_FUNCTION]);
        let coefficients = (0..N_MODES)
            .map(|_| rng.random_range(-COEFF_BOUND..=COEFF_BOUND))
            .collect();
        Self::new(InputFunction::Periodic { coefficients }, length)
    }

    /// `f(x)`. Both endpoints return exactly zero.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let l = self.length;
        if !(0.0..=l).contains(&x) {
            return Err(Error::InvalidArgument(format!("x = {x} outside [0, {l}]")));
        }
        if x == 0.0 || x == l {
            return Ok(0.0);
        }
        Ok(match &self.function {
            InputFunction::Periodic { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * x / l).sin())
                .sum(),
            InputFunction::Quadratic => x * (x - l),
            InputFunction::Cubic => x * (x - l) * (x - l / 2.0),
            InputFunction::Trigonometric => x / l - (std::f64::consts::PI * x / (4.0 * l)).tan(),
        })
    }

    pub fn descriptor(&self) -> String {
        self.function.to_string()
    }
}

impl fmt::Display for InputFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputFunction::Periodic { coefficients } => {
                let parts: Vec<String> = coefficients.iter().map(|c| c.to_string()).collect();
                write!(f, "periodic:{}", parts.join(";"))
            }
            InputFunction::Quadratic => f.write_str("quadratic"),
            InputFunction::Cubic => f.write_str("cubic"),
            InputFunction::Trigonometric => f.write_str("trigonometric"),
        }
    }
}

impl FromStr for InputFunction {
    type Err = Error;

    /// Accepts `quadratic`, `cubic`, `trigonometric` and `periodic:a1;a2;a3;a4;a5`
    /// (commas are accepted as separators too).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "quadratic" => return Ok(InputFunction::Quadratic),
            "cubic" => return Ok(InputFunction::Cubic),
            "trigonometric" | "trig" => return Ok(InputFunction::Trigonometric),
            _ => {}
        }
        let Some(rest) = s.strip_prefix("periodic:") else {
            return Err(Error::InvalidArgument(format!("unknown input function `{s}`")));
        };
        let coefficients = rest
            .split([';', ','])
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad coefficient `{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InputFunction::Periodic { coefficients })
    }
}

/// Diffusion coefficient and reaction rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeParams {
    pub d: f64,
    pub k: f64,
}

impl PdeParams {
    pub fn new(d: f64, k: f64) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidArgument(format!("D must be positive, got {d}")));
        }
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::InvalidArgument(format!("K must be non-negative, got {k}")));
        }
        Ok(Self { d, k })
    }
}

/// Equispaced storage grid: 201 nodes over `[0, L]`, 101 snapshots over `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub length: f64,
    pub nx: usize,
    pub nt: usize,
    pub t_end: f64,
}

impl SpaceTimeGrid {
    pub fn standard(length: f64) -> Self {
        Self {
            length,
            nx: NX,
            nt: NT,
            t_end: T_END,
        }
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.length * (i as f64 / (self.nx - 1) as f64)
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        self.t_end * (j as f64 / (self.nt - 1) as f64)
    }

    pub fn x_coords(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn t_coords(&self) -> Vec<f64> {
        (0..self.nt).map(|j| self.t(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// State `u` on a [`SpaceTimeGrid`], indexed `[x_index, t_index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub grid: SpaceTimeGrid,
    pub values: Array2<f64>,
}

impl SolutionField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Checks the boundary rows vanish and the first snapshot equals `f`.
    pub fn check_consistency(&self, spec: &InputFunctionSpec) -> Result<()> {
        let g = &self.grid;
        if self.values.dim() != (g.nx, g.nt) {
            return Err(Error::Shape(format!(
                "field is {:?}, grid is {}x{}",
                self.values.dim(),
                g.nx,
                g.nt
            )));
        }
        if self
            .values
            .row(0)
            .iter()
            .chain(self.values.row(g.nx - 1))
            .any(|&v| v != 0.0)
        {
            return Err(Error::InvalidArgument("boundary rows are not zero".into()));
        }
        for i in 0..g.nx {
            if self.values[[i, 0]] != spec.eval(g.x(i))? {
                return Err(Error::InvalidArgument(format!(
                    "initial column differs from f at node {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Internal resolution of the FTCS march.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtcsSettings {
    /// Time step.
    pub dt: f64,
    /// Internal spatial intervals per storage interval (storage has 200 intervals).
    pub refinement: usize,
}

impl Default for FtcsSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            refinement: 1,
        }
    }
}

/// Solve with the standard settings: `δx = L/200`, `δt = 1e-3`, every 100th step stored.
pub fn ftcs_solve(params: PdeParams, spec: &InputFunctionSpec, grid: &SpaceTimeGrid) -> Result<SolutionField> {
    ftcs_solve_with(params, spec, grid, FtcsSettings::default())
}

pub fn ftcs_solve_with(
    params: PdeParams,
    spec: &InputFunctionSpec,
    grid: &SpaceTimeGrid,
    settings: FtcsSettings,
) -> Result<SolutionField> {
    let PdeParams { d, k } = PdeParams::new(params.d, params.k)?;
    if grid.length != spec.length {
        return Err(Error::InvalidArgument(format!(
            "grid length {} does not match input function length {}",
            grid.length, spec.length
        )));
    }
    if grid.nx < 3 || grid.nt < 2 || settings.refinement == 0 {
        return Err(Error::InvalidArgument("degenerate grid".into()));
    }
    let intervals = (grid.nx - 1) * settings.refinement;
    let dx = grid.length / intervals as f64;
    let dt = settings.dt;
    let ratio = d * dt / (dx * dx);
    if ratio.is_nan() || ratio > 0.5 {
        return Err(Error::Unstable { ratio });
    }
    let snapshot_dt = grid.t_end / (grid.nt - 1) as f64;
    let per_snapshot = (snapshot_dt / dt).round() as usize;
    if per_snapshot == 0 || ((per_snapshot as f64) * dt - snapshot_dt).abs() > 1e-9 * snapshot_dt {
        return Err(Error::InvalidArgument(format!(
            "time step {dt} does not divide the snapshot spacing {snapshot_dt}"
        )));
    }

    let n = intervals + 1;
    let mut u: Vec<f64> = (0..n)
        .map(|i| spec.eval(grid.length * (i as f64 / intervals as f64)))
        .collect::<Result<_>>()?;
    let mut next = vec![0.0; n];
    let mut values = Array2::<f64>::zeros((grid.nx, grid.nt));
    let store = |values: &mut Array2<f64>, u: &[f64], j: usize| {
        for i in 0..grid.nx {
            values[[i, j]] = u[i * settings.refinement];
        }
    };
    store(&mut values, &u, 0);

    let diff = d / (dx * dx);
    let mut step = 0usize;
    for j in 1..grid.nt {
        for _ in 0..per_snapshot {
            step += 1;
            let mut finite = true;
            for i in 1..n - 1 {
                let ui = u[i];
                let v = ui + dt * (diff * (u[i + 1] - 2.0 * ui + u[i - 1]) + k * ui * ui);
                finite &= v.is_finite();
                next[i] = v;
            }
            if !finite {
                return Err(Error::BlowUp { time: step as f64 * dt });
            }
            std::mem::swap(&mut u, &mut next);
        }
        store(&mut values, &u, j);
    }
    Ok(SolutionField { grid: *grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.iter().map(|x| x * x).sum();
        (num / den).sqrt()
    }

    #[test]
    fn periodic_closed_form() {
        let f = InputFunctionSpec::periodic([0.4, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(f.eval(0.5).unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn endpoints_vanish() {
        for length in [1.0, 1.25, 1.5] {
            let specs = [
                InputFunctionSpec::random_periodic(3, length).unwrap(),
                InputFunctionSpec::new(InputFunction::Quadratic, length).unwrap(),
                InputFunctionSpec::new(InputFunction::Cubic, length).unwrap(),
                InputFunctionSpec::new(InputFunction::Trigonometric, length).unwrap(),
            ];
            for s in &specs {
                assert_eq!(s.eval(0.0).unwrap(), 0.0);
                assert_eq!(s.eval(length).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn closed_forms_at_unit_length() {
        let q = InputFunctionSpec::new(InputFunction::Quadratic, 1.0).unwrap();
        assert_eq!(q.eval(0.5).unwrap(), -0.25);
        let c = InputFunctionSpec::new(InputFunction::Cubic, 1.0).unwrap();
        let x: f64 = 0.3;
        assert_relative_eq!(c.eval(x).unwrap(), x.powi(3) - 1.5 * x * x + 0.5 * x, epsilon = 1e-15);
        let t = InputFunctionSpec::new(InputFunction::Trigonometric, 1.0).unwrap();
        assert_relative_eq!(
            t.eval(x).unwrap(),
            x - (std::f64::consts::PI * x / 4.0).tan(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn outside_domain_is_rejected() {
        let q = InputFunctionSpec::new(InputFunction::Quadratic, 1.0).unwrap();
        assert!(q.eval(-0.01).is_err());
        assert!(q.eval(1.01).is_err());
    }

    #[test]
    fn coefficient_validation() {
        assert!(InputFunctionSpec::periodic([0.5, 0.0, 0.0, 0.0, 0.0], 1.0).is_err());
        assert!(InputFunctionSpec::new(
            InputFunction::Periodic {
                coefficients: vec![0.1; 4]
            },
            1.0
        )
        .is_err());
    }

    #[test]
    fn random_periodic_is_reproducible_and_bounded() {
        let a = InputFunctionSpec::random_periodic(42, 1.0).unwrap();
        let b = InputFunctionSpec::random_periodic(42, 1.0).unwrap();
        assert_eq!(a, b);
        let InputFunction::Periodic { coefficients } = a.function else {
            panic!()
        };
        assert_eq!(coefficients.len(), 5);
        assert!(coefficients.iter().all(|c| c.abs() <= 0.4));
    }

    #[test]
    fn random_periodic_mean_is_zero() {
        let mut sums = [0.0; 5];
        let n = 10_000;
        for s in 0..n {
            let f = InputFunctionSpec::random_periodic(s, 1.0).unwrap();
            let InputFunction::Periodic { coefficients } = f.function else {
                panic!()
            };
            for (acc, c) in sums.iter_mut().zip(coefficients) {
                *acc += c;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() < 0.02, "mean {}", s / n as f64);
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let f = InputFunctionSpec::random_periodic(5, 1.0).unwrap();
        let parsed: InputFunction = f.descriptor().parse().unwrap();
        assert_eq!(parsed, f.function);
        assert_eq!("cubic".parse::<InputFunction>().unwrap(), InputFunction::Cubic);
        assert!("gaussian".parse::<InputFunction>().is_err());
    }

    #[test]
    fn zero_input_stays_zero() {
        let f = InputFunctionSpec::periodic([0.0; 5], 1.0).unwrap();
        let field = ftcs_solve(PdeParams::new(1e-3, 1e-3).unwrap(), &f, &SpaceTimeGrid::standard(1.0)).unwrap();
        assert!(field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heat_mode_decay_matches_analytic() {
        let d = 1e-3;
        let f = InputFunctionSpec::periodic([0.4, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let grid = SpaceTimeGrid::standard(1.0);
        let field = ftcs_solve(PdeParams::new(d, 0.0).unwrap(), &f, &grid).unwrap();
        let exact = Array2::from_shape_fn((NX, NT), |(i, j)| {
            let pi = std::f64::consts::PI;
            0.4 * (pi * grid.x(i)).sin() * (-d * pi * pi * grid.t(j)).exp()
        });
        assert!(rel_l2(&exact, &field.values) < 1e-3);
    }

    #[test]
    fn refinement_changes_little() {
        let p = PdeParams::new(1e-3, 1e-3).unwrap();
        let f = InputFunctionSpec::random_periodic(17, 1.0).unwrap();
        let grid = SpaceTimeGrid::standard(1.0);
        let coarse = ftcs_solve(p, &f, &grid).unwrap();
        let fine = ftcs_solve_with(
            p,
            &f,
            &grid,
            FtcsSettings {
                dt: 5e-4,
                refinement: 2,
            },
        )
        .unwrap();
        assert!(rel_l2(&fine.values, &coarse.values) < 1e-3);
    }

    #[test]
    fn field_respects_boundary_and_initial_data() {
        let f = InputFunctionSpec::random_periodic(8, 1.3).unwrap();
        let field = ftcs_solve(PdeParams::new(5e-3, 5e-3).unwrap(), &f, &SpaceTimeGrid::standard(1.3)).unwrap();
        field.check_consistency(&f).unwrap();
    }

    #[test]
    fn linear_in_initial_data_without_reaction() {
        let p = PdeParams::new(3e-3, 0.0).unwrap();
        let f = InputFunctionSpec::periodic([0.2, -0.1, 0.05, 0.0, 0.3], 1.0).unwrap();
        let g = InputFunctionSpec::periodic([0.1, -0.05, 0.025, 0.0, 0.15], 1.0).unwrap();
        let grid = SpaceTimeGrid::standard(1.0);
        let uf = ftcs_solve(p, &f, &grid).unwrap();
        let ug = ftcs_solve(p, &g, &grid).unwrap();
        for (a, b) in uf.values.iter().zip(&ug.values) {
            assert!((a - 2.0 * b).abs() <= 1e-15 * a.abs().max(1e-300) + 1e-17);
        }
    }

    #[test]
    fn stability_violation_rejected() {
        let f = InputFunctionSpec::random_periodic(1, 1.0).unwrap();
        let err = ftcs_solve(PdeParams::new(0.02, 0.0).unwrap(), &f, &SpaceTimeGrid::standard(1.0)).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn blow_up_reports_time() {
        let f = InputFunctionSpec::periodic([0.4; 5], 1.0).unwrap();
        let err = ftcs_solve(PdeParams::new(1e-3, 400.0).unwrap(), &f, &SpaceTimeGrid::standard(1.0)).unwrap_err();
        match err {
            Error::BlowUp { time } => assert!(time > 0.0 && time < 10.0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn training_regime_stays_bounded() {
        let p = PdeParams::new(1e-3, 5e-3).unwrap();
        for s in 0..5 {
            let f = InputFunctionSpec::random_periodic(s, 1.0).unwrap();
            let field = ftcs_solve(p, &f, &SpaceTimeGrid::standard(1.0)).unwrap();
            assert!(field.values.iter().all(|v| v.abs() < 2.5));
        }
    }
}
