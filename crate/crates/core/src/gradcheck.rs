//! Central finite-difference checks of every differentiable operation and
//! of whole networks.
//!
//! The numeric side only ever calls forward kernels; analytic gradients
//! come from [`Tape::backward_with`]. Each check samples coordinates,
//! perturbs them by ±ε and compares `(f(x+ε) − f(x−ε)) / 2ε` with the
//! analytic value using
//! `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.

use crate::arch::{ArchitectureKind, Mode, Network};
use crate::autograd::{Fault, Graph, Norm, Tape, Var};
use crate::error::Result;
use crate::ops::RunningStats;
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f32,
    /// Largest relative error a coordinate may have and still pass.
    pub tolerance: f64,
    /// Denominator floor for near-zero gradients.
    pub floor: f64,
    /// Coordinates sampled per check.
    pub samples: usize,
    /// Fraction of sampled coordinates that must pass.
    pub pass_fraction: f64,
    pub seed: u64,
    /// Spatial size of the network checks.
    pub image_size: usize,
    pub channels: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-2,
            tolerance: 1e-2,
            floor: 1e-3,
            samples: 200,
            pass_fraction: 0.99,
            seed: 0x6ad,
            image_size: 32,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub passed: usize,
    pub max_rel_error: f64,
    pub pass_fraction_required: f64,
}

impl CheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn ok(&self) -> bool {
        self.pass_rate() >= self.pass_fraction_required
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Σ r·y in double precision.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn random_tensor(shape: Shape, lo: f32, hi: f32, rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// Values whose magnitude stays at least `gap` from zero.
fn away_from_zero(shape: Shape, gap: f32, rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform_range(gap, 1.0);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// A random permutation of evenly spaced values, so no window holds two
/// values closer than the spacing.
fn separated(shape: Shape, rng: &mut RngState) -> Tensor {
    let n = shape.len();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let step = 2.0 / n as f32;
    Tensor::from_fn(shape, |i| -1.0 + step * idx[i] as f32)
}

type OpFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Checks `op` on the given inputs, all treated as differentiable.
fn check_op(
    name: &str,
    inputs: Vec<Tensor>,
    op: &OpFn,
    cfg: &GradCheckConfig,
    fault: Option<Fault>,
    rng: &mut RngState,
) -> Result<CheckReport> {
    let new_tape = || fault.map_or_else(Tape::new, Tape::with_fault);
    let eval = |xs: &[Tensor]| -> Result<Tensor> {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = op(&mut t, &vars)?;
        Ok(t.value(&y).clone())
    };

    let mut tape = new_tape();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = op(&mut tape, &vars)?;
    let r = random_tensor(tape.value(&y).shape(), -1.0, 1.0, rng);
    let grads = tape.backward_with(y, r.clone())?;

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let mut report = CheckReport {
        name: name.to_string(),
        checked: 0,
        passed: 0,
        max_rel_error: 0.0,
        pass_fraction_required: cfg.pass_fraction,
    };
    let mut xs = inputs;
    for _ in 0..cfg.samples {
        let mut flat = rng.below(total);
        let mut which = 0;
        while flat >= xs[which].len() {
            flat -= xs[which].len();
            which += 1;
        }
        let analytic = grads.wrt(vars[which]).map_or(0.0, |g| g.data()[flat] as f64);
        let orig = xs[which].data()[flat];
        xs[which].data_mut()[flat] = orig + cfg.epsilon;
        let plus = project(&eval(&xs)?, &r);
        xs[which].data_mut()[flat] = orig - cfg.epsilon;
        let minus = project(&eval(&xs)?, &r);
        xs[which].data_mut()[flat] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.epsilon as f64);
        record(&mut report, relative_error(analytic, numeric, cfg.floor), cfg);
    }
    Ok(report)
}

fn record(report: &mut CheckReport, err: f64, cfg: &GradCheckConfig) {
    report.checked += 1;
    if err < cfg.tolerance {
        report.passed += 1;
    }
    report.max_rel_error = report.max_rel_error.max(err);
}

/// Checks every differentiable operation on small random shapes.
pub fn check_ops(cfg: &GradCheckConfig, fault: Option<Fault>) -> Result<Vec<CheckReport>> {
    let mut rng = RngState::new(cfg.seed);
    let rng = &mut rng;
    let mut out = Vec::new();
    let s = Shape::new;
    let u = |shape, rng: &mut RngState| random_tensor(shape, -1.0, 1.0, rng);

    let inputs = vec![u(s(2, 4, 8, 8), rng), u(s(3, 4, 3, 3), rng), u(s(1, 3, 1, 1), rng)];
    out.push(check_op(
        "conv2d",
        inputs,
        &|t, v| t.conv2d(&v[0], &v[1], &v[2]),
        cfg,
        fault,
        rng,
    )?);

    let inputs = vec![u(s(2, 3, 4, 5), rng), u(s(3, 2, 3, 3), rng), u(s(1, 2, 1, 1), rng)];
    out.push(check_op(
        "transpose_conv2",
        inputs,
        &|t, v| t.transpose_conv2(&v[0], &v[1], &v[2]),
        cfg,
        fault,
        rng,
    )?);

    let inputs = vec![separated(s(2, 3, 8, 8), rng)];
    out.push(check_op(
        "max_pool2",
        inputs,
        &|t, v| t.max_pool2(&v[0]),
        cfg,
        fault,
        rng,
    )?);

    let inputs = vec![away_from_zero(s(1, 2, 6, 6), 0.05, rng)];
    out.push(check_op("relu", inputs, &|t, v| Ok(t.relu(&v[0])), cfg, fault, rng)?);

    let inputs = vec![
        u(s(4, 3, 5, 5), rng),
        random_tensor(s(1, 3, 1, 1), 0.5, 1.5, rng),
        u(s(1, 3, 1, 1), rng),
    ];
    out.push(check_op(
        "batch_norm(train)",
        inputs,
        &|t, v| Ok(t.batch_norm(&v[0], &v[1], &v[2], Norm::Batch)?.0),
        cfg,
        fault,
        rng,
    )?);

    let running = RunningStats {
        mean: (0..3).map(|_| rng.uniform_range(-0.5, 0.5)).collect(),
        var: (0..3).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
    };
    let inputs = vec![
        u(s(2, 3, 4, 4), rng),
        random_tensor(s(1, 3, 1, 1), 0.5, 1.5, rng),
        u(s(1, 3, 1, 1), rng),
    ];
    out.push(check_op(
        "batch_norm(eval)",
        inputs,
        &move |t, v| Ok(t.batch_norm(&v[0], &v[1], &v[2], Norm::Running(&running))?.0),
        cfg,
        fault,
        rng,
    )?);

    let mask_rng = rng.fork(17);
    let inputs = vec![u(s(1, 2, 6, 6), rng)];
    out.push(check_op(
        "dropout",
        inputs,
        &move |t, v| t.dropout(&v[0], 0.3, &mut mask_rng.clone()),
        cfg,
        fault,
        rng,
    )?);

    let inputs = vec![u(s(2, 2, 4, 4), rng), u(s(2, 3, 4, 4), rng)];
    out.push(check_op(
        "concat",
        inputs,
        &|t, v| t.concat(&v[0], &v[1]),
        cfg,
        fault,
        rng,
    )?);

    let a = u(s(1, 3, 4, 4), rng);
    let gap = away_from_zero(a.shape(), 0.05, rng);
    let b = Tensor::from_fn(a.shape(), |i| a.data()[i] + gap.data()[i]);
    out.push(check_op(
        "abs_diff",
        vec![a, b],
        &|t, v| t.abs_diff(&v[0], &v[1]),
        cfg,
        fault,
        rng,
    )?);

    let labels: Vec<u8> = (0..2 * 4 * 4).map(|_| rng.below(2) as u8).collect();
    let inputs = vec![random_tensor(s(2, 2, 4, 4), -2.0, 2.0, rng)];
    out.push(check_op(
        "weighted_logloss",
        inputs,
        &move |t, v| t.weighted_logloss(v[0], &labels, [0.7, 3.1]),
        cfg,
        fault,
        rng,
    )?);
    Ok(out)
}

/// Checks a whole training-mode network on `1 × C × S × S` inputs, sampling
/// half the coordinates from the two images and half from the parameters.
pub fn check_network(kind: ArchitectureKind, cfg: &GradCheckConfig, fault: Option<Fault>) -> Result<CheckReport> {
    let mut rng = RngState::new(cfg.seed ^ 0x5eed);
    let mut net = Network::build(kind, cfg.channels, &mut rng)?;
    let shape = Shape::new(1, cfg.channels, cfg.image_size, cfg.image_size);
    let mut imgs = [
        random_tensor(shape, -1.0, 1.0, &mut rng),
        random_tensor(shape, -1.0, 1.0, &mut rng),
    ];
    let dropout_rng = rng.fork(1);

    let eval = |net: &Network, imgs: &[Tensor; 2]| -> Result<Tensor> {
        let mut t = Tape::new();
        let trace = net.forward(&mut t, &imgs[0], &imgs[1], Mode::Train, &mut dropout_rng.clone())?;
        Ok(t.value(&trace.logits).clone())
    };

    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let v1 = tape.leaf(imgs[0].clone());
    let v2 = tape.leaf(imgs[1].clone());
    let trace = net.forward_graph(&mut tape, v1, v2, Mode::Train, &mut dropout_rng.clone())?;
    let r = random_tensor(tape.value(&trace.logits).shape(), -1.0, 1.0, &mut rng);
    let grads = tape.backward_with(trace.logits, r.clone())?;

    let param_total = net.params().scalar_count();
    let mut report = CheckReport {
        name: format!("network {kind}"),
        checked: 0,
        passed: 0,
        max_rel_error: 0.0,
        pass_fraction_required: cfg.pass_fraction,
    };
    for i in 0..cfg.samples {
        let (analytic, numeric) = if i % 2 == 0 {
            let which = rng.below(2);
            let flat = rng.below(shape.len());
            let analytic = grads.wrt([v1, v2][which]).map_or(0.0, |g| g.data()[flat] as f64);
            let orig = imgs[which].data()[flat];
            imgs[which].data_mut()[flat] = orig + cfg.epsilon;
            let plus = project(&eval(&net, &imgs)?, &r);
            imgs[which].data_mut()[flat] = orig - cfg.epsilon;
            let minus = project(&eval(&net, &imgs)?, &r);
            imgs[which].data_mut()[flat] = orig;
            (analytic, (plus - minus) / (2.0 * cfg.epsilon as f64))
        } else {
            let (id, flat) = locate(net.params(), rng.below(param_total));
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[flat] as f64);
            let orig = net.params().get(id).data()[flat];
            net.params_mut().get_mut(id).data_mut()[flat] = orig + cfg.epsilon;
            let plus = project(&eval(&net, &imgs)?, &r);
            net.params_mut().get_mut(id).data_mut()[flat] = orig - cfg.epsilon;
            let minus = project(&eval(&net, &imgs)?, &r);
            net.params_mut().get_mut(id).data_mut()[flat] = orig;
            (analytic, (plus - minus) / (2.0 * cfg.epsilon as f64))
        };
        record(&mut report, relative_error(analytic, numeric, cfg.floor), cfg);
    }
    Ok(report)
}

fn locate(store: &ParamStore, mut flat: usize) -> (crate::params::ParamId, usize) {
    for (id, p) in store.iter() {
        if flat < p.value.len() {
            return (id, flat);
        }
        flat -= p.value.len();
    }
    unreachable!("flat index within scalar_count")
}

/// Every operation check followed by the three network checks.
pub fn run_suite(cfg: &GradCheckConfig, fault: Option<Fault>) -> Result<Vec<CheckReport>> {
    let mut out = check_ops(cfg, fault)?;
    for kind in ArchitectureKind::ALL {
        out.push(check_network(kind, cfg, fault)?);
    }
    Ok(out)
}
