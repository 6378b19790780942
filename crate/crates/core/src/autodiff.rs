//! Nested differentiation through an MLP.
//!
//! Input derivatives are propagated forward as jets: alongside the value
//! stream, every layer carries one tangent stream per requested first
//! derivative and one stream per requested pure second derivative. For a
//! hidden layer with activation `σ` and pre-activation streams
//! `(z, z_k, z_jj)` the post-activation streams are
//!
//! ```text
//! a    = σ(z)
//! a_k  = σ'(z) z_k
//! a_jj = σ'(z) z_jj + σ''(z) z_j²
//! ```
//!
//! and affine layers map every stream through the same weight matrix (the
//! bias only enters the value stream). All streams of a batch are stacked
//! row-wise so each layer is a single matrix product.
//!
//! [`JetTape::backward`] is the reverse-mode adjoint of that forward pass:
//! given adjoints for the output value and output derivatives it
//! accumulates the gradient with respect to every weight and bias, which is
//! what a loss containing `u_x`, `u_xx` or `u_t` needs.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::network::{Activation, Mlp};
use crate::scratch;
use crate::{Error, Result};

/// Which input derivatives to propagate.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiffRequest {
    first: Vec<usize>,
    second: Vec<usize>,
    /// `first` followed by any `second` index not already in it.
    tangents: Vec<usize>,
    /// Position of each `second` index inside `tangents`.
    second_tangent: Vec<usize>,
}

impl DiffRequest {
    pub fn new(first: &[usize], second: &[usize]) -> Result<Self> {
        fn distinct(v: &[usize]) -> bool {
            v.iter().enumerate().all(|(i, a)| !v[..i].contains(a))
        }
        if !distinct(first) || !distinct(second) {
            return Err(Error::InvalidArgument(format!(
                "derivative indices must be distinct: first {first:?}, second {second:?}"
            )));
        }
        let mut tangents = first.to_vec();
        for &j in second {
            if !tangents.contains(&j) {
                tangents.push(j);
            }
        }
        let second_tangent = second
            .iter()
            .map(|j| tangents.iter().position(|t| t == j).unwrap())
            .collect();
        Ok(Self {
            first: first.to_vec(),
            second: second.to_vec(),
            tangents,
            second_tangent,
        })
    }

    /// Value only.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn first(&self) -> &[usize] {
        &self.first
    }

    pub fn second(&self) -> &[usize] {
        &self.second
    }

    fn n_blocks(&self) -> usize {
        1 + self.tangents.len() + self.second.len()
    }

    fn validate(&self, width: usize) -> Result<()> {
        if let Some(&i) = self.tangents.iter().find(|&&i| i >= width) {
            return Err(Error::InvalidArgument(format!(
                "derivative index {i} out of range for input width {width}"
            )));
        }
        Ok(())
    }
}

/// Value and input derivatives of a scalar network output at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub first: BTreeMap<usize, f64>,
    pub second: BTreeMap<usize, f64>,
}

/// Output jets for a batch of points.
#[derive(Debug, Clone)]
pub struct JetOutput {
    pub value: Array1<f64>,
    /// One array per index of [`DiffRequest::first`], in request order.
    pub first: Vec<Array1<f64>>,
    /// One array per index of [`DiffRequest::second`], in request order.
    pub second: Vec<Array1<f64>>,
}

/// Adjoints of a loss with respect to the entries of a [`JetOutput`].
///
/// `None` means the loss does not depend on that stream.
#[derive(Debug, Clone, Default)]
pub struct JetAdjoint<'a> {
    pub value: Option<ArrayView1<'a, f64>>,
    pub first: Vec<Option<ArrayView1<'a, f64>>>,
    pub second: Vec<Option<ArrayView1<'a, f64>>>,
}

/// Everything the reverse sweep needs from a forward jet pass.
#[derive(Debug, Clone)]
pub struct JetTape {
    request: DiffRequest,
    batch: usize,
    inputs: Array2<f64>,
    /// Stacked pre-activations of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Stacked post-activations of every hidden layer.
    post: Vec<Array2<f64>>,
}

impl Drop for JetTape {
    fn drop(&mut self) {
        for a in self.pre.drain(..).chain(self.post.drain(..)) {
            scratch::recycle(a);
        }
    }
}

/// Elementwise first, second and (optionally) third derivative of the
/// activation, given pre-activations `z` and post-activations `a = σ(z)`.
fn activation_derivs(act: Activation, z: &[f64], a: &[f64], third: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = z.len();
    let mut d1 = scratch::zeroed_vec(n);
    let mut d2 = scratch::zeroed_vec(n);
    let mut d3 = if third { scratch::zeroed_vec(n) } else { Vec::new() };
    match act {
        Activation::Tanh => {
            for ((o1, o2), &av) in d1.iter_mut().zip(&mut d2).zip(a) {
                let s = 1.0 - av * av;
                *o1 = s;
                *o2 = -2.0 * av * s;
            }
            if third {
                for ((o3, &s), &av) in d3.iter_mut().zip(&d1).zip(a) {
                    *o3 = -2.0 * s * s + 4.0 * av * av * s;
                }
            }
        }
        Activation::Sin => {
            for (((o1, o2), &zv), &av) in d1.iter_mut().zip(&mut d2).zip(z).zip(a) {
                *o1 = zv.cos();
                *o2 = -av;
            }
            if third {
                for (o3, &c) in d3.iter_mut().zip(&d1) {
                    *o3 = -c;
                }
            }
        }
        Activation::Relu => unreachable!("jets require a smooth activation"),
    }
    (d1, d2, d3)
}

fn check_network(net: &Mlp, inputs: &ArrayView2<f64>) -> Result<()> {
    if net.output_width() != 1 {
        return Err(Error::Shape(format!(
            "jets need a scalar-output network, got {} outputs",
            net.output_width()
        )));
    }
    if inputs.ncols() != net.input_width() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, network expects {}",
            inputs.ncols(),
            net.input_width()
        )));
    }
    Ok(())
}

/// Forward jet pass over a batch (rows of `inputs`), keeping a tape for [`JetTape::backward`].
pub fn jet_forward(net: &Mlp, inputs: ArrayView2<f64>, request: &DiffRequest) -> Result<(JetOutput, JetTape)> {
    check_network(net, &inputs)?;
    request.validate(net.input_width())?;
    let needs_jets = request.n_blocks() > 1;
    if needs_jets && !net.activation().is_smooth() && net.n_layers() > 1 {
        return Err(Error::InvalidArgument(format!(
            "{:?} is not twice differentiable",
            net.activation()
        )));
    }
    let b = inputs.nrows();
    let nt = request.tangents.len();
    let nblocks = request.n_blocks();
    let last = net.n_layers() - 1;
    let act = net.activation();

    // first affine layer: input tangents are unit vectors, input second derivatives vanish
    let w0 = net.weights(0);
    let width0 = w0.nrows();
    let mut z = scratch::zeros(nblocks * b, width0);
    {
        let mut zv = z.slice_mut(s![0..b, ..]);
        general_mat_mul(1.0, &inputs, &w0.t(), 0.0, &mut zv);
        zv += &net.bias(0);
        for (k, &feat) in request.tangents.iter().enumerate() {
            let col = w0.column(feat);
            let mut blk = z.slice_mut(s![(1 + k) * b..(2 + k) * b, ..]);
            blk.assign(&col.broadcast((b, width0)).unwrap());
        }
    }

    let mut pre = Vec::with_capacity(last);
    let mut post = Vec::with_capacity(last);
    for l in 1..=last {
        let width = z.ncols();
        let mut a = scratch::zeros(z.nrows(), z.ncols());
        {
            let zs = z.as_slice().unwrap();
            let as_ = a.as_slice_mut().unwrap();
            let n = b * width;
            let (av, rest) = as_.split_at_mut(n);
            act.apply_slice(&zs[..n], av);
            if needs_jets {
                let (d1, d2, _) = activation_derivs(act, &zs[..n], av, false);
                let (at, asec) = rest.split_at_mut(nt * n);
                for k in 0..nt {
                    let zk = &zs[(1 + k) * n..(2 + k) * n];
                    for ((o, &s), &zv) in at[k * n..(k + 1) * n].iter_mut().zip(&d1).zip(zk) {
                        *o = s * zv;
                    }
                }
                for (q, &tk) in request.second_tangent.iter().enumerate() {
                    let zj = &zs[(1 + tk) * n..(2 + tk) * n];
                    let zjj = &zs[(1 + nt + q) * n..(2 + nt + q) * n];
                    let out = &mut asec[q * n..(q + 1) * n];
                    for ((((o, &s1), &s2), &u), &uu) in out.iter_mut().zip(&d1).zip(&d2).zip(zj).zip(zjj) {
                        *o = s1 * uu + s2 * u * u;
                    }
                }
                scratch::recycle_vec(d1);
                scratch::recycle_vec(d2);
            }
        }
        let w = net.weights(l);
        let mut znext = scratch::zeros(nblocks * b, w.nrows());
        general_mat_mul(1.0, &a, &w.t(), 0.0, &mut znext);
        {
            let mut zv = znext.slice_mut(s![0..b, ..]);
            zv += &net.bias(l);
        }
        pre.push(z);
        post.push(a);
        z = znext;
    }

    let col = z.column(0);
    let out = JetOutput {
        value: col.slice(s![0..b]).to_owned(),
        first: (0..request.first.len())
            .map(|k| col.slice(s![(1 + k) * b..(2 + k) * b]).to_owned())
            .collect(),
        second: (0..request.second.len())
            .map(|q| col.slice(s![(1 + nt + q) * b..(2 + nt + q) * b]).to_owned())
            .collect(),
    };
    scratch::recycle(z);
    let tape = JetTape {
        request: request.clone(),
        batch: b,
        inputs: inputs.to_owned(),
        pre,
        post,
    };
    Ok((out, tape))
}

impl JetTape {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Reverse sweep: accumulate `∂loss/∂params` into `grad` (same layout as
    /// [`Mlp::params`]) and, when `input_adjoint` is given, add `∂loss/∂inputs`
    /// through the value stream into it.
    pub fn backward(
        &self,
        net: &Mlp,
        adjoint: &JetAdjoint,
        grad: &mut [f64],
        input_adjoint: Option<&mut Array2<f64>>,
    ) -> Result<()> {
        let b = self.batch;
        let req = &self.request;
        let nt = req.tangents.len();
        let nblocks = req.n_blocks();
        if grad.len() != net.n_params() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, network has {} parameters",
                grad.len(),
                net.n_params()
            )));
        }
        if adjoint.first.len() > req.first.len() || adjoint.second.len() > req.second.len() {
            return Err(Error::Shape("adjoint names more streams than the tape holds".into()));
        }
        let last = net.n_layers() - 1;
        let act = net.activation();

        // seed output adjoints
        let mut zbar = Array2::<f64>::zeros((nblocks * b, 1));
        {
            let mut put = |block: usize, v: &Option<ArrayView1<f64>>| -> Result<()> {
                if let Some(v) = v {
                    if v.len() != b {
                        return Err(Error::Shape(format!("adjoint of length {} for batch of {b}", v.len())));
                    }
                    zbar.slice_mut(s![block * b..(block + 1) * b, 0]).assign(v);
                }
                Ok(())
            };
            put(0, &adjoint.value)?;
            for (k, v) in adjoint.first.iter().enumerate() {
                put(1 + k, v)?;
            }
            for (q, v) in adjoint.second.iter().enumerate() {
                put(1 + nt + q, v)?;
            }
        }

        for l in (1..=last).rev() {
            let a = &self.post[l - 1];
            let (mut dw, mut db) = net.split_grad(l, grad);
            general_mat_mul(1.0, &zbar.t(), a, 1.0, &mut dw);
            db += &zbar.slice(s![0..b, ..]).sum_axis(Axis(0));

            let w = net.weights(l);
            let mut abar = scratch::zeros(nblocks * b, w.ncols());
            general_mat_mul(1.0, &zbar, &w, 0.0, &mut abar);

            // activation adjoint
            let z = &self.pre[l - 1];
            let width = z.ncols();
            let n = b * width;
            let zs = z.as_slice().unwrap();
            let avs = &a.as_slice().unwrap()[..n];
            let ab = abar.as_slice().unwrap();
            let (d1, d2, d3) = activation_derivs(act, &zs[..n], avs, !req.second.is_empty());
            let mut zb = scratch::zeros(z.nrows(), z.ncols());
            {
                let zbs = zb.as_slice_mut().unwrap();
                let (zbv, zbrest) = zbs.split_at_mut(n);
                for ((o, &s), &g) in zbv.iter_mut().zip(&d1).zip(&ab[..n]) {
                    *o = s * g;
                }
                for k in 0..nt {
                    let zk = &zs[(1 + k) * n..(2 + k) * n];
                    let gk = &ab[(1 + k) * n..(2 + k) * n];
                    let ok = &mut zbrest[k * n..(k + 1) * n];
                    for ((((v, o), (&s1, &s2)), &u), &g) in
                        zbv.iter_mut().zip(ok).zip(d1.iter().zip(&d2)).zip(zk).zip(gk)
                    {
                        *v += s2 * u * g;
                        *o = s1 * g;
                    }
                }
                for (q, &tk) in req.second_tangent.iter().enumerate() {
                    let zj = &zs[(1 + tk) * n..(2 + tk) * n];
                    let zjj = &zs[(1 + nt + q) * n..(2 + nt + q) * n];
                    let g = &ab[(1 + nt + q) * n..(2 + nt + q) * n];
                    let (tang, sec) = zbrest.split_at_mut(nt * n);
                    let oj = &mut tang[tk * n..(tk + 1) * n];
                    let oq = &mut sec[q * n..(q + 1) * n];
                    let derivs = d1.iter().zip(&d2).zip(&d3);
                    let streams = zj.iter().zip(zjj).zip(g);
                    for (((v, a), o), (((&s1, &s2), &s3), ((&u, &uu), &gq))) in
                        zbv.iter_mut().zip(oj).zip(oq).zip(derivs.zip(streams))
                    {
                        *v += (s2 * uu + s3 * u * u) * gq;
                        *a += 2.0 * s2 * u * gq;
                        *o = s1 * gq;
                    }
                }
            }
            scratch::recycle_vec(d1);
            scratch::recycle_vec(d2);
            scratch::recycle_vec(d3);
            scratch::recycle(abar);
            scratch::recycle(std::mem::replace(&mut zbar, zb));
        }

        // first affine layer
        let zv = zbar.slice(s![0..b, ..]);
        {
            let (mut dw, mut db) = net.split_grad(0, grad);
            general_mat_mul(1.0, &zv.t(), &self.inputs, 1.0, &mut dw);
            db += &zv.sum_axis(Axis(0));
            for (k, &feat) in req.tangents.iter().enumerate() {
                let colsum = zbar.slice(s![(1 + k) * b..(2 + k) * b, ..]).sum_axis(Axis(0));
                let mut c = dw.column_mut(feat);
                c += &colsum;
            }
        }
        if let Some(xbar) = input_adjoint {
            if xbar.dim() != self.inputs.dim() {
                return Err(Error::Shape("input adjoint buffer has the wrong shape".into()));
            }
            general_mat_mul(1.0, &zv, &net.weights(0), 1.0, xbar);
        }
        scratch::recycle(zbar);
        Ok(())
    }
}

/// Scalar output of `net` at `features`.
pub fn evaluate(net: &Mlp, features: &[f64]) -> Result<f64> {
    net.forward(features)
}

/// Network outputs for every row of `inputs`.
pub fn evaluate_batch(net: &Mlp, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(jet_forward(net, inputs, &DiffRequest::none())?.0.value)
}

/// Exact first and second input derivatives at one point.
pub fn input_derivatives(net: &Mlp, features: &[f64], request: &DiffRequest) -> Result<DerivativeBundle> {
    let x = ArrayView2::from_shape((1, features.len()), features).unwrap();
    let (out, _) = jet_forward(net, x, request)?;
    let bundle = DerivativeBundle {
        value: out.value[0],
        first: request.first.iter().zip(&out.first).map(|(&i, v)| (i, v[0])).collect(),
        second: request
            .second
            .iter()
            .zip(&out.second)
            .map(|(&i, v)| (i, v[0]))
            .collect(),
    };
    let finite = bundle.value.is_finite()
        && bundle
            .first
            .values()
            .chain(bundle.second.values())
            .all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("input derivative overflowed".into()));
    }
    Ok(bundle)
}

/// Mean squared error of `net` against `targets` and its parameter gradient.
pub fn mse_parameter_gradient(net: &Mlp, inputs: ArrayView2<f64>, targets: ArrayView1<f64>) -> Result<(f64, Vec<f64>)> {
    if inputs.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if targets.len() != inputs.nrows() {
        return Err(Error::Shape(format!(
            "{} targets for {} inputs",
            targets.len(),
            inputs.nrows()
        )));
    }
    let (out, tape) = jet_forward(net, inputs, &DiffRequest::none())?;
    let resid = &out.value - &targets;
    let n = resid.len() as f64;
    let loss = resid.dot(&resid) / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }
    let adj = resid.mapv(|r| 2.0 * r / n);
    let mut grad = vec![0.0; net.n_params()];
    tape.backward(
        net,
        &JetAdjoint {
            value: Some(adj.view()),
            ..Default::default()
        },
        &mut grad,
        None,
    )?;
    Ok((loss, grad))
}
