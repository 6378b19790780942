//! Finite-difference oracles shared by the integration tests.

#![allow(dead_code)]

use dhpm::autodiff::{jet_forward, DiffRequest, JetAdjoint};
use dhpm::network::{Activation, Mlp};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;

/// Random tanh MLP: input width 2..=5, one to three hidden layers of width 1..=100.
pub fn random_mlp(rng: &mut ChaCha8Rng) -> Mlp {
    let mut sizes = vec![rng.random_range(2..=5)];
    for _ in 0..rng.random_range(1..=3) {
        sizes.push(rng.random_range(1..=100));
    }
    sizes.push(1);
    let mut net = Mlp::init_glorot(&sizes, Activation::Tanh, rng.random()).unwrap();
    for l in 0..net.n_layers() {
        for b in net.bias_mut(l).iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

pub fn random_point(rng: &mut ChaCha8Rng, width: usize) -> Vec<f64> {
    (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn shifted(x: &[f64], i: usize, h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] += h;
    y
}

pub fn fd_first(net: &Mlp, x: &[f64], i: usize) -> f64 {
    (net.forward(&shifted(x, i, H)).unwrap() - net.forward(&shifted(x, i, -H)).unwrap()) / (2.0 * H)
}

pub fn fd_second(net: &Mlp, x: &[f64], i: usize) -> f64 {
    let f0 = net.forward(x).unwrap();
    (net.forward(&shifted(x, i, H)).unwrap() - 2.0 * f0 + net.forward(&shifted(x, i, -H)).unwrap()) / (H * H)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Residual-style loss on a generic network with inputs `(x, t, ...)`:
/// `mean((u_t − c·u_xx − u²)²) + mean((u − y)²)`.
pub fn composite_loss(net: &Mlp, pts: &Array2<f64>, targets: &Array1<f64>, c: f64) -> f64 {
    let req = DiffRequest::new(&[1], &[0]).unwrap();
    let (o, _) = jet_forward(net, pts.view(), &req).unwrap();
    let n = pts.nrows() as f64;
    let r = &o.first[0] - &(&o.second[0] * c) - &o.value.mapv(|u| u * u);
    let d = &o.value - targets;
    r.dot(&r) / n + d.dot(&d) / n
}

/// Gradient of [`composite_loss`] from the reverse sweep.
pub fn composite_loss_grad(net: &Mlp, pts: &Array2<f64>, targets: &Array1<f64>, c: f64) -> Vec<f64> {
    let req = DiffRequest::new(&[1], &[0]).unwrap();
    let (o, tape) = jet_forward(net, pts.view(), &req).unwrap();
    let n = pts.nrows() as f64;
    let r = &o.first[0] - &(&o.second[0] * c) - &o.value.mapv(|u| u * u);
    let rbar = r.mapv(|v| 2.0 * v / n);
    let ubar = &(&o.value - targets).mapv(|v| 2.0 * v / n) - &(&rbar * &o.value * 2.0);
    let uxxbar = rbar.mapv(|v| -c * v);
    let mut g = vec![0.0; net.n_params()];
    tape.backward(
        net,
        &JetAdjoint {
            value: Some(ubar.view()),
            first: vec![Some(rbar.view())],
            second: vec![Some(uxxbar.view())],
        },
        &mut g,
        None,
    )
    .unwrap();
    g
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AutodiffAgreement {
    pub nets: usize,
    pub max_first: f64,
    pub max_second: f64,
    pub max_param: f64,
}

/// Compares exact derivatives against central differences on `n_nets`
/// random networks: every first and pure second input derivative at three
/// random points, and 12 randomly chosen parameter-gradient entries of
/// [`composite_loss`].
pub fn autodiff_agreement(n_nets: usize, seed: u64) -> AutodiffAgreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AutodiffAgreement {
        nets: n_nets,
        ..Default::default()
    };
    for _ in 0..n_nets {
        let net = random_mlp(&mut rng);
        let w = net.input_width();
        let all: Vec<usize> = (0..w).collect();
        let req = DiffRequest::new(&all, &all).unwrap();
        for _ in 0..3 {
            let x = random_point(&mut rng, w);
            let b = dhpm::autodiff::input_derivatives(&net, &x, &req).unwrap();
            for i in 0..w {
                out.max_first = out.max_first.max(rel_err(b.first[&i], fd_first(&net, &x, i), 1e-4));
                out.max_second = out.max_second.max(rel_err(b.second[&i], fd_second(&net, &x, i), 1e-2));
            }
        }

        let pts = Array2::from_shape_fn((8, w), |_| rng.random_range(-1.0..1.0));
        let targets = Array1::from_shape_fn(8, |_| rng.random_range(-0.5..0.5));
        let c = rng.random_range(0.01..0.5);
        let g = composite_loss_grad(&net, &pts, &targets, c);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut probe = net.clone();
        for _ in 0..12 {
            let p = rng.random_range(0..net.n_params());
            let orig = net.params()[p];
            probe.params_mut()[p] = orig + H;
            let up = composite_loss(&probe, &pts, &targets, c);
            probe.params_mut()[p] = orig - H;
            let down = composite_loss(&probe, &pts, &targets, c);
            probe.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * H);
            out.max_param = out.max_param.max(rel_err(g[p], fd, 1e-3 * scale.max(1e-3)));
        }
    }
    out
}
