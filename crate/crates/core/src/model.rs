//! The twin-network hidden physics model.
//!
//! `N_sol` sees `[sensors(50) | x | t | extras]` where the extras depend on
//! the scenario: nothing for input generalization, `(D, K)` for parameter
//! generalization (scaled by [`PARAM_FEATURE_SCALE`]), `L` for domain
//! generalization. `N_hid` sees the candidate terms `(x, t, u, u_x, u_xx)`
//! computed from `N_sol` and approximates the right-hand side of
//! `u_t = N(...)`, so the residual is
//! `g = u_t − N_hid(x, t, u, u_x, u_xx)`.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{jet_forward, DiffRequest, JetAdjoint};
use crate::network::{Activation, Mlp};
use crate::{par, scratch};
use crate::{seed, Error, Result};

/// Number of sensor points an input function is discretized at.
pub const N_SENSORS: usize = 50;
/// Feature slot of `x` in the `N_sol` input.
pub const X_SLOT: usize = N_SENSORS;
/// Feature slot of `t` in the `N_sol` input.
pub const T_SLOT: usize = N_SENSORS + 1;
/// Width of the `N_hid` input: `(x, t, u, u_x, u_xx)`.
pub const HID_INPUT_WIDTH: usize = 5;
/// Hidden widths shared by both networks.
pub const HIDDEN_WIDTHS: [usize; 3] = [100, 100, 100];

/// `D` and `K` enter `N_sol` multiplied by this, so the network sees values
/// of order one instead of order 1e-3.
pub const PARAM_FEATURE_SCALE: f64 = 1e3;

/// Points per work item when a batch is split across workers.
const CHUNK: usize = 256;

/// Which kind of change the model generalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    InputGen,
    ParamGen,
    DomainGen,
}

impl Scenario {
    /// Number of context features after `x` and `t`.
    pub fn n_extras(self) -> usize {
        match self {
            Scenario::InputGen => 0,
            Scenario::ParamGen => 2,
            Scenario::DomainGen => 1,
        }
    }

    pub fn sol_input_width(self) -> usize {
        N_SENSORS + 2 + self.n_extras()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::InputGen => "inputgen",
            Scenario::ParamGen => "paramgen",
            Scenario::DomainGen => "domaingen",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inputgen" => Ok(Scenario::InputGen),
            "paramgen" => Ok(Scenario::ParamGen),
            "domaingen" => Ok(Scenario::DomainGen),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Optional context values; which ones must be present depends on the scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Extras {
    pub d: Option<f64>,
    pub k: Option<f64>,
    pub length: Option<f64>,
}

/// The per-function part of an `N_sol` feature vector: sensors and extras.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContext {
    scenario: Scenario,
    sensors: Vec<f64>,
    extras: Vec<f64>,
}

impl FeatureContext {
    pub fn new(scenario: Scenario, sensors: &[f64], extras: Extras) -> Result<Self> {
        if sensors.len() != N_SENSORS {
            return Err(Error::Shape(format!(
                "{} sensor values, expected {N_SENSORS}",
                sensors.len()
            )));
        }
        let missing = |name: &str| Error::InvalidArgument(format!("{scenario} needs context field {name}"));
        let extra = |name: &str| Error::InvalidArgument(format!("{scenario} does not take context field {name}"));
        let values = match scenario {
            Scenario::InputGen => {
                if extras.d.is_some() {
                    return Err(extra("D"));
                }
                if extras.k.is_some() {
                    return Err(extra("K"));
                }
                if extras.length.is_some() {
                    return Err(extra("L"));
                }
                vec![]
            }
            Scenario::ParamGen => {
                if extras.length.is_some() {
                    return Err(extra("L"));
                }
                vec![
                    extras.d.ok_or_else(|| missing("D"))? * PARAM_FEATURE_SCALE,
                    extras.k.ok_or_else(|| missing("K"))? * PARAM_FEATURE_SCALE,
                ]
            }
            Scenario::DomainGen => {
                if extras.d.is_some() {
                    return Err(extra("D"));
                }
                if extras.k.is_some() {
                    return Err(extra("K"));
                }
                vec![extras.length.ok_or_else(|| missing("L"))?]
            }
        };
        if values.iter().chain(sensors).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("context contains a non-finite value".into()));
        }
        Ok(Self {
            scenario,
            sensors: sensors.to_vec(),
            extras: values,
        })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn sensors(&self) -> &[f64] {
        &self.sensors
    }

    /// Full `N_sol` feature vector at `(x, t)`.
    pub fn features(&self, x: f64, t: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.scenario.sol_input_width());
        v.extend_from_slice(&self.sensors);
        v.push(x);
        v.push(t);
        v.extend_from_slice(&self.extras);
        v
    }

    /// Feature matrix for rows of `points` (each row `(x, t)`).
    pub fn feature_matrix(&self, points: ArrayView2<f64>) -> Array2<f64> {
        let w = self.scenario.sol_input_width();
        let mut m = Array2::<f64>::zeros((points.nrows(), w));
        for (mut row, p) in m.rows_mut().into_iter().zip(points.rows()) {
            let r = row.as_slice_mut().unwrap();
            r[..N_SENSORS].copy_from_slice(&self.sensors);
            r[X_SLOT] = p[0];
            r[T_SLOT] = p[1];
            r[T_SLOT + 1..].copy_from_slice(&self.extras);
        }
        m
    }
}

/// Build an `N_sol` feature vector, validating the context against the scenario.
pub fn assemble_features(scenario: Scenario, x: f64, t: f64, sensors: &[f64], extras: Extras) -> Result<Vec<f64>> {
    Ok(FeatureContext::new(scenario, sensors, extras)?.features(x, t))
}

/// Measurements of one input function: rows `(x, t)` and observed `u`.
#[derive(Debug, Clone)]
pub struct DataBatch {
    pub context: FeatureContext,
    pub points: Array2<f64>,
    pub targets: Array1<f64>,
}

/// Collocation points for one input function, rows `(x, t)`.
#[derive(Debug, Clone)]
pub struct CollocationBatch {
    pub context: FeatureContext,
    pub points: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_loss: f64,
    pub equation_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(data_loss: f64, equation_loss: f64) -> Self {
        Self {
            data_loss,
            equation_loss,
            total: data_loss + equation_loss,
        }
    }
}

/// State `u` and its derivatives from `N_sol` at a set of points.
#[derive(Debug, Clone)]
pub struct StateJets {
    pub u: Array1<f64>,
    pub u_x: Array1<f64>,
    pub u_t: Array1<f64>,
    pub u_xx: Array1<f64>,
}

/// `N_sol` and `N_hid` plus the scenario fixing the feature layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhpModel {
    pub scenario: Scenario,
    pub n_sol: Mlp,
    pub n_hid: Mlp,
}

fn residual_request() -> DiffRequest {
    DiffRequest::new(&[X_SLOT, T_SLOT], &[X_SLOT]).expect("static request")
}

impl DhpModel {
    /// Full-sized networks (`[w, 100, 100, 100, 1]` and `[5, 100, 100, 100, 1]`), Glorot-initialized.
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self> {
        Self::with_hidden_widths(scenario, &HIDDEN_WIDTHS, seed)
    }

    pub fn with_hidden_widths(scenario: Scenario, hidden: &[usize], seed: u64) -> Result<Self> {
        let sizes = |input: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(1);
            v
        };
        Self::from_networks(
            scenario,
            Mlp::init_glorot(
                &sizes(scenario.sol_input_width()),
                Activation::Tanh,
                seed::derive(seed, &[seed::stream::INIT_SOL]),
            )?,
            Mlp::init_glorot(
                &sizes(HID_INPUT_WIDTH),
                Activation::Tanh,
                seed::derive(seed, &[seed::stream::INIT_HID]),
            )?,
        )
    }

    pub fn from_networks(scenario: Scenario, n_sol: Mlp, n_hid: Mlp) -> Result<Self> {
        if n_sol.input_width() != scenario.sol_input_width() {
            return Err(Error::Shape(format!(
                "N_sol input width {} does not match {scenario} ({})",
                n_sol.input_width(),
                scenario.sol_input_width()
            )));
        }
        if n_hid.input_width() != HID_INPUT_WIDTH {
            return Err(Error::Shape(format!(
                "N_hid input width must be {HID_INPUT_WIDTH}, got {}",
                n_hid.input_width()
            )));
        }
        for (name, net) in [("N_sol", &n_sol), ("N_hid", &n_hid)] {
            if net.output_width() != 1 {
                return Err(Error::Shape(format!("{name} must have one output")));
            }
            if !net.activation().is_smooth() {
                return Err(Error::InvalidArgument(format!(
                    "{name} uses {:?}, residuals need a twice differentiable activation",
                    net.activation()
                )));
            }
        }
        Ok(Self { scenario, n_sol, n_hid })
    }

    pub fn n_params(&self) -> usize {
        self.n_sol.n_params() + self.n_hid.n_params()
    }

    /// Concatenated parameters: `N_sol` first, then `N_hid`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.n_sol.params().to_vec();
        v.extend_from_slice(self.n_hid.params());
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                flat.len(),
                self.n_params()
            )));
        }
        let (a, b) = flat.split_at(self.n_sol.n_params());
        self.n_sol.params_mut().copy_from_slice(a);
        self.n_hid.params_mut().copy_from_slice(b);
        Ok(())
    }

    /// Mutable views of both parameter vectors, in flat order.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.n_sol.params_mut(), self.n_hid.params_mut())
    }

    fn check_context(&self, ctx: &FeatureContext) -> Result<()> {
        if ctx.scenario() != self.scenario {
            return Err(Error::InvalidArgument(format!(
                "context built for {}, model is {}",
                ctx.scenario(),
                self.scenario
            )));
        }
        Ok(())
    }

    /// `u` from `N_sol` for a full feature vector.
    pub fn predict_state(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.scenario.sol_input_width() {
            return Err(Error::Shape(format!(
                "{} features, {} expects {}",
                features.len(),
                self.scenario,
                self.scenario.sol_input_width()
            )));
        }
        self.n_sol.forward(features)
    }

    /// `u` at every row `(x, t)` of `points`.
    pub fn predict_states(&self, ctx: &FeatureContext, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_context(ctx)?;
        let chunks = par::chunk_bounds(points.nrows(), CHUNK);
        let parts = par::map_ordered(&chunks, |_, &(a, b)| {
            let feats = ctx.feature_matrix(points.slice(s![a..b, ..]));
            jet_forward(&self.n_sol, feats.view(), &DiffRequest::none()).map(|(o, _)| o.value)
        });
        let mut out = Vec::with_capacity(points.nrows());
        for p in parts {
            out.extend(p?);
        }
        Ok(Array1::from(out))
    }

    /// `u, u_x, u_t, u_xx` from `N_sol` at every row of `points`.
    pub fn state_jets(&self, ctx: &FeatureContext, points: ArrayView2<f64>) -> Result<StateJets> {
        self.check_context(ctx)?;
        let req = residual_request();
        let chunks = par::chunk_bounds(points.nrows(), CHUNK);
        let parts = par::map_ordered(&chunks, |_, &(a, b)| {
            let feats = ctx.feature_matrix(points.slice(s![a..b, ..]));
            jet_forward(&self.n_sol, feats.view(), &req).map(|(o, _)| o)
        });
        let mut jets = StateJets {
            u: Array1::zeros(points.nrows()),
            u_x: Array1::zeros(points.nrows()),
            u_t: Array1::zeros(points.nrows()),
            u_xx: Array1::zeros(points.nrows()),
        };
        for (&(a, b), p) in chunks.iter().zip(parts) {
            let o = p?;
            jets.u.slice_mut(s![a..b]).assign(&o.value);
            jets.u_x.slice_mut(s![a..b]).assign(&o.first[0]);
            jets.u_t.slice_mut(s![a..b]).assign(&o.first[1]);
            jets.u_xx.slice_mut(s![a..b]).assign(&o.second[0]);
        }
        Ok(jets)
    }

    /// `N_hid` output for rows of candidate terms `(x, t, u, u_x, u_xx)`.
    pub fn hidden_terms(&self, candidates: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(jet_forward(&self.n_hid, candidates, &DiffRequest::none())?.0.value)
    }

    /// Candidate-term matrix `(x, t, u, u_x, u_xx)` for `N_hid`.
    pub fn candidate_terms(points: ArrayView2<f64>, jets: &StateJets) -> Array2<f64> {
        let n = points.nrows();
        let mut h = Array2::<f64>::zeros((n, HID_INPUT_WIDTH));
        h.column_mut(0).assign(&points.column(0));
        h.column_mut(1).assign(&points.column(1));
        h.column_mut(2).assign(&jets.u);
        h.column_mut(3).assign(&jets.u_x);
        h.column_mut(4).assign(&jets.u_xx);
        h
    }

    /// Residuals `g = u_t − N_hid(x, t, u, u_x, u_xx)` at every row of `points`.
    pub fn residuals(&self, ctx: &FeatureContext, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        let jets = self.state_jets(ctx, points)?;
        let h = self.hidden_terms(Self::candidate_terms(points, &jets).view())?;
        Ok(&jets.u_t - &h)
    }

    pub fn residual(&self, ctx: &FeatureContext, x: f64, t: f64) -> Result<f64> {
        let p = ndarray::arr2(&[[x, t]]);
        Ok(self.residuals(ctx, p.view())?[0])
    }

    /// Mean squared error against the measurements.
    pub fn data_loss(&self, batch: &DataBatch) -> Result<f64> {
        check_batch(batch.points.view(), Some(batch.targets.len()))?;
        let pred = self.predict_states(&batch.context, batch.points.view())?;
        let mut sq: Vec<f64> = pred.iter().zip(&batch.targets).map(|(p, y)| (p - y).powi(2)).collect();
        Ok(par::order_independent_sum(&mut sq) / sq.len() as f64)
    }

    /// Mean squared residual over the collocation points.
    pub fn equation_loss(&self, colloc: &CollocationBatch) -> Result<f64> {
        check_batch(colloc.points.view(), None)?;
        let g = self.residuals(&colloc.context, colloc.points.view())?;
        let mut sq: Vec<f64> = g.iter().map(|v| v * v).collect();
        Ok(par::order_independent_sum(&mut sq) / sq.len() as f64)
    }

    pub fn total_loss(&self, data: &DataBatch, colloc: &CollocationBatch) -> Result<LossBreakdown> {
        Ok(LossBreakdown::new(self.data_loss(data)?, self.equation_loss(colloc)?))
    }

    /// Total loss and its gradient with respect to every parameter of both
    /// networks (flat layout of [`DhpModel::flat_params`]).
    ///
    /// The equation term is differentiated through the nested input
    /// derivatives of `N_sol`, so both networks receive gradient from it.
    pub fn loss_parameter_gradient(
        &self,
        data: &DataBatch,
        colloc: &CollocationBatch,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        self.check_context(&data.context)?;
        self.check_context(&colloc.context)?;
        check_batch(data.points.view(), Some(data.targets.len()))?;
        check_batch(colloc.points.view(), None)?;
        let n_sol = self.n_sol.n_params();
        let n_data = data.points.nrows();
        let n_colloc = colloc.points.nrows();

        struct Part {
            grad: Vec<f64>,
            squares: Vec<f64>,
        }

        let data_chunks = par::chunk_bounds(n_data, CHUNK);
        let data_parts = par::map_ordered(&data_chunks, |_, &(a, b)| -> Result<Part> {
            let feats = data.context.feature_matrix(data.points.slice(s![a..b, ..]));
            let (out, tape) = jet_forward(&self.n_sol, feats.view(), &DiffRequest::none())?;
            let resid = &out.value - &data.targets.slice(s![a..b]);
            let adj = resid.mapv(|r| 2.0 * r / n_data as f64);
            let mut grad = scratch::zeroed_vec(n_sol);
            tape.backward(
                &self.n_sol,
                &JetAdjoint {
                    value: Some(adj.view()),
                    ..Default::default()
                },
                &mut grad,
                None,
            )?;
            Ok(Part {
                grad,
                squares: resid.iter().map(|r| r * r).collect(),
            })
        });

        let req = residual_request();
        let colloc_chunks = par::chunk_bounds(n_colloc, CHUNK);
        let colloc_parts = par::map_ordered(&colloc_chunks, |_, &(a, b)| -> Result<Part> {
            let pts = colloc.points.slice(s![a..b, ..]);
            let feats = colloc.context.feature_matrix(pts);
            let (sol, sol_tape) = jet_forward(&self.n_sol, feats.view(), &req)?;
            let jets = StateJets {
                u: sol.value,
                u_x: sol.first[0].clone(),
                u_t: sol.first[1].clone(),
                u_xx: sol.second[0].clone(),
            };
            let cand = Self::candidate_terms(pts, &jets);
            let (hid, hid_tape) = jet_forward(&self.n_hid, cand.view(), &DiffRequest::none())?;
            let g = &jets.u_t - &hid.value;
            let gbar = g.mapv(|v| 2.0 * v / n_colloc as f64);
            let hbar = gbar.mapv(|v| -v);

            let mut grad = scratch::zeroed_vec(self.n_params());
            let (gs, gh) = grad.split_at_mut(n_sol);
            let mut cand_bar = Array2::<f64>::zeros(cand.raw_dim());
            hid_tape.backward(
                &self.n_hid,
                &JetAdjoint {
                    value: Some(hbar.view()),
                    ..Default::default()
                },
                gh,
                Some(&mut cand_bar),
            )?;
            let u_bar = cand_bar.column(2);
            let ux_bar = cand_bar.column(3);
            let uxx_bar = cand_bar.column(4);
            sol_tape.backward(
                &self.n_sol,
                &JetAdjoint {
                    value: Some(u_bar),
                    first: vec![Some(ux_bar), Some(gbar.view())],
                    second: vec![Some(uxx_bar)],
                },
                gs,
                None,
            )?;
            Ok(Part {
                grad,
                squares: g.iter().map(|v| v * v).collect(),
            })
        });

        let mut grad = vec![0.0; self.n_params()];
        let mut data_sq = Vec::with_capacity(n_data);
        for part in data_parts {
            let part = part?;
            for (g, p) in grad[..n_sol].iter_mut().zip(&part.grad) {
                *g += p;
            }
            scratch::recycle_vec(part.grad);
            data_sq.extend(part.squares);
        }
        let mut eq_sq = Vec::with_capacity(n_colloc);
        for part in colloc_parts {
            let part = part?;
            for (g, p) in grad.iter_mut().zip(&part.grad) {
                *g += p;
            }
            scratch::recycle_vec(part.grad);
            eq_sq.extend(part.squares);
        }
        let loss = LossBreakdown::new(
            par::order_independent_sum(&mut data_sq) / n_data as f64,
            par::order_independent_sum(&mut eq_sq) / n_colloc as f64,
        );
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is not finite (data {}, equation {})",
                loss.data_loss, loss.equation_loss
            )));
        }
        Ok((loss, grad))
    }
}

fn check_batch(points: ArrayView2<f64>, targets: Option<usize>) -> Result<()> {
    if points.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if points.ncols() != 2 {
        return Err(Error::Shape(format!(
            "points must have 2 columns, got {}",
            points.ncols()
        )));
    }
    if let Some(n) = targets {
        if n != points.nrows() {
            return Err(Error::Shape(format!("{n} targets for {} points", points.nrows())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sensors() -> Vec<f64> {
        (0..N_SENSORS).map(|i| (i as f64 * 0.37).sin() * 0.3).collect()
    }

    fn ctx(scenario: Scenario) -> FeatureContext {
        let extras = match scenario {
            Scenario::InputGen => Extras::default(),
            Scenario::ParamGen => Extras {
                d: Some(3e-3),
                k: Some(1e-3),
                length: None,
            },
            Scenario::DomainGen => Extras {
                length: Some(1.2),
                ..Default::default()
            },
        };
        FeatureContext::new(scenario, &sensors(), extras).unwrap()
    }

    #[test]
    fn feature_widths() {
        assert_eq!(ctx(Scenario::InputGen).features(0.1, 0.2).len(), 52);
        assert_eq!(ctx(Scenario::ParamGen).features(0.1, 0.2).len(), 54);
        assert_eq!(ctx(Scenario::DomainGen).features(0.1, 0.2).len(), 53);
        let f = ctx(Scenario::ParamGen).features(0.1, 0.2);
        assert_eq!(
            &f[50..],
            &[0.1, 0.2, 3e-3 * PARAM_FEATURE_SCALE, 1e-3 * PARAM_FEATURE_SCALE]
        );
    }

    #[test]
    fn context_fields_are_checked() {
        let s = sensors();
        let dk = Extras {
            d: Some(1e-3),
            k: Some(1e-3),
            length: None,
        };
        assert!(assemble_features(Scenario::InputGen, 0.0, 0.0, &s, dk).is_err());
        assert!(assemble_features(Scenario::ParamGen, 0.0, 0.0, &s, Extras::default()).is_err());
        assert!(assemble_features(
            Scenario::ParamGen,
            0.0,
            0.0,
            &s,
            Extras {
                d: Some(1e-3),
                ..Default::default()
            }
        )
        .is_err());
        assert!(assemble_features(Scenario::DomainGen, 0.0, 0.0, &s, dk).is_err());
        assert!(assemble_features(Scenario::InputGen, 0.0, 0.0, &s[..10], Extras::default()).is_err());
    }

    #[test]
    fn zero_model_predicts_zero() {
        let sol = Mlp::zeros(&[52, 4, 1], Activation::Tanh).unwrap();
        let hid = Mlp::zeros(&[5, 4, 1], Activation::Tanh).unwrap();
        let m = DhpModel::from_networks(Scenario::InputGen, sol, hid).unwrap();
        let f = ctx(Scenario::InputGen).features(0.3, 4.0);
        assert_eq!(m.predict_state(&f).unwrap(), 0.0);
        assert_eq!(m.residual(&ctx(Scenario::InputGen), 0.3, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_smooth_or_misshapen_networks() {
        let sol = Mlp::zeros(&[52, 4, 1], Activation::Relu).unwrap();
        let hid = Mlp::zeros(&[5, 4, 1], Activation::Tanh).unwrap();
        assert!(DhpModel::from_networks(Scenario::InputGen, sol, hid.clone()).is_err());
        let sol = Mlp::zeros(&[53, 4, 1], Activation::Tanh).unwrap();
        assert!(DhpModel::from_networks(Scenario::InputGen, sol, hid).is_err());
    }

    #[test]
    fn residual_vanishes_for_linear_in_time_state() {
        // N_sol = c t (a linear net reading only the t slot), N_hid ≡ c
        let c = 0.75;
        let mut sol = vec![0.0; 53];
        sol[T_SLOT] = c;
        let sol = Mlp::from_flat(&[52, 1], Activation::Tanh, sol).unwrap();
        let mut hid = vec![0.0; 6];
        hid[5] = c;
        let hid = Mlp::from_flat(&[5, 1], Activation::Tanh, hid).unwrap();
        let m = DhpModel::from_networks(Scenario::InputGen, sol, hid).unwrap();
        for (x, t) in [(0.1, 0.0), (0.5, 3.3), (0.9, 9.9)] {
            assert_eq!(m.residual(&ctx(Scenario::InputGen), x, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn residual_matches_hand_computation_for_linear_networks() {
        // N_sol = a x + b t + e, so u_x = a, u_t = b, u_xx = 0
        let (a, b, e) = (0.5, -0.25, 0.125);
        let mut sol = vec![0.0; 53];
        sol[X_SLOT] = a;
        sol[T_SLOT] = b;
        sol[52] = e;
        let sol = Mlp::from_flat(&[52, 1], Activation::Tanh, sol).unwrap();
        let hw = [0.3, -0.2, 1.5, 2.0, -4.0, 0.01];
        let hid = Mlp::from_flat(&[5, 1], Activation::Tanh, hw.to_vec()).unwrap();
        let m = DhpModel::from_networks(Scenario::InputGen, sol, hid).unwrap();
        let (x, t) = (0.4, 2.0);
        let u = a * x + b * t + e;
        let nhid = hw[0] * x + hw[1] * t + hw[2] * u + hw[3] * a + hw[4] * 0.0 + hw[5];
        assert_relative_eq!(
            m.residual(&ctx(Scenario::InputGen), x, t).unwrap(),
            b - nhid,
            epsilon = 1e-15
        );
    }

    #[test]
    fn data_loss_cases() {
        let sol = Mlp::zeros(&[52, 1], Activation::Tanh).unwrap();
        let mut p = sol.params().to_vec();
        *p.last_mut().unwrap() = 2.0;
        let sol = Mlp::from_flat(&[52, 1], Activation::Tanh, p).unwrap();
        let hid = Mlp::zeros(&[5, 1], Activation::Tanh).unwrap();
        let m = DhpModel::from_networks(Scenario::InputGen, sol, hid).unwrap();
        let batch = DataBatch {
            context: ctx(Scenario::InputGen),
            points: ndarray::arr2(&[[0.5, 1.0]]),
            targets: ndarray::arr1(&[0.0]),
        };
        assert_eq!(m.data_loss(&batch).unwrap(), 4.0);
        let exact = DataBatch {
            targets: ndarray::arr1(&[2.0]),
            ..batch.clone()
        };
        assert_eq!(m.data_loss(&exact).unwrap(), 0.0);
        let empty = DataBatch {
            points: Array2::zeros((0, 2)),
            targets: Array1::zeros(0),
            ..batch
        };
        assert!(m.data_loss(&empty).is_err());
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let m = DhpModel::with_hidden_widths(Scenario::InputGen, &[8, 8], 1).unwrap();
        let pts = ndarray::arr2(&[[0.1, 1.0], [0.7, 5.0], [0.3, 9.0]]);
        let tg = ndarray::arr1(&[0.2, -0.1, 0.05]);
        let single = DataBatch {
            context: ctx(Scenario::InputGen),
            points: pts.clone(),
            targets: tg.clone(),
        };
        let doubled = DataBatch {
            context: ctx(Scenario::InputGen),
            points: ndarray::concatenate![ndarray::Axis(0), pts, pts],
            targets: ndarray::concatenate![ndarray::Axis(0), tg, tg],
        };
        assert_relative_eq!(
            m.data_loss(&single).unwrap(),
            m.data_loss(&doubled).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn gradient_path_agrees_with_loss_evaluation() {
        let m = DhpModel::with_hidden_widths(Scenario::DomainGen, &[10, 10], 5).unwrap();
        let data = DataBatch {
            context: ctx(Scenario::DomainGen),
            points: ndarray::arr2(&[[0.1, 1.0], [0.7, 5.0]]),
            targets: ndarray::arr1(&[0.2, -0.1]),
        };
        let colloc = CollocationBatch {
            context: ctx(Scenario::DomainGen),
            points: ndarray::arr2(&[[0.2, 0.5], [0.4, 7.0], [1.1, 3.0]]),
        };
        let (lb, grad) = m.loss_parameter_gradient(&data, &colloc).unwrap();
        let direct = m.total_loss(&data, &colloc).unwrap();
        assert_eq!(lb, direct);
        assert_eq!(lb.total, lb.data_loss + lb.equation_loss);
        assert_eq!(grad.len(), m.n_params());
        // N_hid receives gradient only through the equation loss
        assert!(grad[m.n_sol.n_params()..].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn scenario_mismatch_is_rejected() {
        let m = DhpModel::with_hidden_widths(Scenario::InputGen, &[4], 0).unwrap();
        assert!(m.residual(&ctx(Scenario::DomainGen), 0.1, 0.1).is_err());
    }
}
