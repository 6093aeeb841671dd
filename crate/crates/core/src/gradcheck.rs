//! Finite-difference verification of every analytic backward pass.
//!
//! Each check draws random shapes and values, computes the gradient of a
//! random linear probe `L = <layer(x), p>` (or of the isolation loss, end to
//! end) analytically and by central differences, and reports the worst
//! relative error `max|a − n| / max(max|a|, max|n|, 1e-6)`. Everything runs
//! in 64-bit regardless of the training precision.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loglayer::{DeepLog, LogConfig, LogSpec};
use crate::loss::{hinge_pattern, isolation_loss, isolation_loss_grad, BatchPartition, HypersphereSpec};
use crate::model::{Model, ModelConfig};
use crate::nn::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, BiLstm, Conv2d, Dropout, LstmCell, LstmState,
    Mode, Param, RnnFusion,
};
use crate::seed::derive_seed;
use crate::tensor::{finite_diff_grad, Tensor};
use crate::Label;

/// Denominator floor of the relative error.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Conv,
    GroupedPointwise,
    GlobalAvgPool,
    AvgPool2,
    DropoutOff,
    LstmCell,
    BiLstm,
    DeepLog,
    EndToEnd,
}

impl Check {
    pub const ALL: [Check; 9] = [
        Check::Conv,
        Check::GroupedPointwise,
        Check::GlobalAvgPool,
        Check::AvgPool2,
        Check::DropoutOff,
        Check::LstmCell,
        Check::BiLstm,
        Check::DeepLog,
        Check::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Conv => "conv",
            Check::GroupedPointwise => "grouped-pointwise",
            Check::GlobalAvgPool => "global-avg-pool",
            Check::AvgPool2 => "avg-pool2",
            Check::DropoutOff => "dropout-off",
            Check::LstmCell => "lstm-cell",
            Check::BiLstm => "bi-lstm",
            Check::DeepLog => "deep-log",
            Check::EndToEnd => "end-to-end",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    /// Random instances per check.
    pub cases: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Mutation hook: corrupts the analytic gradient of this check so the
    /// harness can be shown to catch a broken backward pass.
    pub fault: Option<Check>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { seed: 0, cases: 20, eps: 1e-5, tolerance: 1e-4, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: Check,
    pub cases: usize,
    /// Gradient coordinates compared.
    pub compared: usize,
    /// Coordinates skipped because the probe crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>5} {:>8} {:>7} {:>12}  result", "check", "cases", "compared", "skipped", "max rel err")?;
        for r in &self.results {
            writeln!(
                f,
                "{:<18} {:>5} {:>8} {:>7} {:>12.3e}  {}",
                r.check.name(),
                r.cases,
                r.compared,
                r.skipped,
                r.max_rel_error,
                if r.passed { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "tolerance {:e}, eps {:e}", self.tolerance, self.eps)
    }
}

/// Runs every check. The end-to-end check uses a shrunken copy of `model`
/// that keeps its structural switches (groups, branches, recurrent fusion,
/// LoG scales, backbone depth).
pub fn grad_check(model: &ModelConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let results = Check::ALL.into_iter().map(|c| run_check(c, model, opts)).collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport { eps: opts.eps, tolerance: opts.tolerance, results })
}

pub fn run_check(check: Check, model: &ModelConfig, opts: &GradCheckOptions) -> Result<CheckResult> {
    let mut acc = Accumulator::default();
    for case in 0..opts.cases {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, check.name(), case as u64));
        let mut pairs = match check {
            Check::Conv => conv_case(&mut rng, false, opts.eps)?,
            Check::GroupedPointwise => conv_case(&mut rng, true, opts.eps)?,
            Check::GlobalAvgPool => gap_case(&mut rng, opts.eps),
            Check::AvgPool2 => pool2_case(&mut rng, opts.eps)?,
            Check::DropoutOff => dropout_case(&mut rng, opts.eps)?,
            Check::LstmCell => lstm_cell_case(&mut rng, opts.eps)?,
            Check::BiLstm => bilstm_case(&mut rng, opts.eps)?,
            Check::DeepLog => deep_log_case(&mut rng, opts.eps)?,
            Check::EndToEnd => {
                let (pairs, skipped) = end_to_end_case(model, &mut rng, opts.eps)?;
                acc.skipped += skipped;
                pairs
            }
        };
        if opts.fault == Some(check) {
            corrupt(&mut pairs[0].0);
        }
        for (a, n) in &pairs {
            acc.add(a, n);
        }
    }
    let passed = acc.compared > 0 && acc.worst <= opts.tolerance;
    Ok(CheckResult { check, cases: opts.cases, compared: acc.compared, skipped: acc.skipped, max_rel_error: acc.worst, passed })
}

#[derive(Default)]
struct Accumulator {
    worst: f64,
    compared: usize,
    skipped: usize,
}

impl Accumulator {
    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        let scale = analytic.iter().chain(numeric).fold(SCALE_FLOOR, |m, v| m.max(v.abs()));
        let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let rel = diff / scale;
        // NaN must fail rather than vanish in a max.
        self.worst = if rel.is_nan() { f64::INFINITY } else { self.worst.max(rel) };
        self.compared += analytic.len();
    }
}

/// Flips the sign of the largest-magnitude analytic coordinate.
fn corrupt(g: &mut [f64]) {
    if let Some(i) = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())) {
        g[i] = if g[i] == 0.0 { 1.0 } else { -g[i] };
    }
}

type Pairs = Vec<(Vec<f64>, Vec<f64>)>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn pair(analytic: &Tensor<f64>, numeric: Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    (analytic.data().to_vec(), numeric.into_data())
}

trait Params: Clone {
    fn param_list(&mut self) -> Vec<&mut Param<f64>>;
}

impl Params for Conv2d<f64> {
    fn param_list(&mut self) -> Vec<&mut Param<f64>> {
        self.params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

impl Params for DeepLog<f64> {
    fn param_list(&mut self) -> Vec<&mut Param<f64>> {
        self.params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

impl Params for LstmCell<f64> {
    fn param_list(&mut self) -> Vec<&mut Param<f64>> {
        self.params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

impl Params for BiLstm<f64> {
    fn param_list(&mut self) -> Vec<&mut Param<f64>> {
        self.params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

/// Pairs each accumulated parameter gradient of `layer` with a full
/// finite-difference gradient of `loss` over that parameter.
fn param_pairs<M: Params>(layer: &mut M, loss: impl Fn(&M) -> f64, eps: f64) -> Pairs {
    let base = layer.clone();
    let count = layer.param_list().len();
    (0..count)
        .map(|k| {
            let value = layer.param_list()[k].value.clone();
            let numeric = finite_diff_grad(
                |v| {
                    let mut probe = base.clone();
                    probe.param_list()[k].value = v.clone();
                    loss(&probe)
                },
                &value,
                eps,
            );
            pair(&layer.param_list()[k].grad, numeric)
        })
        .collect()
}

fn conv_case(rng: &mut ChaCha8Rng, grouped: bool, eps: f64) -> Result<Pairs> {
    let (ci, co, k, g) = if grouped {
        let g = rng.gen_range(2..=3);
        (g * rng.gen_range(1..=3), g * rng.gen_range(1..=3), 1, g)
    } else {
        (rng.gen_range(1..=4), rng.gen_range(1..=4), [1, 3, 3, 5][rng.gen_range(0..4)], 1)
    };
    let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let mut conv = Conv2d::<f64>::new(ci, co, k, g, rng)?;
    conv.bias.value = random(&[co], rng);
    let x = random(&[ci, h, w], rng);
    let probe = random(&[co, h, w], rng);
    let (_, tape) = conv.forward(&x)?;
    let dx = conv.backward(&tape, &probe);
    let f = |c: &Conv2d<f64>, x: &Tensor<f64>| c.forward(x).expect("shape checked").0.dot(&probe);
    let mut out = vec![pair(&dx, finite_diff_grad(|t| f(&conv, t), &x, eps))];
    out.extend(param_pairs(&mut conv, |c| f(c, &x), eps));
    Ok(out)
}

fn gap_case(rng: &mut ChaCha8Rng, eps: f64) -> Pairs {
    let (c, h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6));
    let x = random(&[c, h, w], rng);
    let probe = random(&[c], rng);
    let dx = global_avg_pool_backward(&probe, h, w);
    vec![pair(&dx, finite_diff_grad(|t| global_avg_pool(t).dot(&probe), &x, eps))]
}

fn pool2_case(rng: &mut ChaCha8Rng, eps: f64) -> Result<Pairs> {
    let (c, h, w) = (rng.gen_range(1..=4), 2 * rng.gen_range(1..=4), 2 * rng.gen_range(1..=4));
    let x = random(&[c, h, w], rng);
    let probe = random(&[c, h / 2, w / 2], rng);
    let dx = avg_pool2_backward(&probe);
    let numeric = finite_diff_grad(|t| avg_pool2(t).expect("even extents").dot(&probe), &x, eps);
    Ok(vec![pair(&dx, numeric)])
}

/// Eval mode (identity) and a training-mode mask held fixed by reseeding.
fn dropout_case(rng: &mut ChaCha8Rng, eps: f64) -> Result<Pairs> {
    let drop = Dropout::new(rng.gen_range(0.0..0.9))?;
    let x = random(&[rng.gen_range(1..=30)], rng);
    let probe = random(x.shape(), rng);
    let mask_seed: u64 = rng.gen();
    let mut out = Vec::new();
    for mode in [Mode::Eval, Mode::Train] {
        let run = |t: &Tensor<f64>| drop.forward(t, mode, &mut ChaCha8Rng::seed_from_u64(mask_seed));
        let (_, tape) = run(&x);
        let dx = drop.backward(&tape, &probe);
        out.push(pair(&dx, finite_diff_grad(|t| run(t).0.dot(&probe), &x, eps)));
    }
    Ok(out)
}

fn lstm_cell_case(rng: &mut ChaCha8Rng, eps: f64) -> Result<Pairs> {
    let (n, d) = (rng.gen_range(1..=5), rng.gen_range(1..=4));
    let mut cell = LstmCell::<f64>::new(n, d, rng)?;
    let x = random(&[n], rng);
    let h = random(&[d], rng);
    let c = random(&[d], rng);
    let (ph, pc) = (random(&[d], rng), random(&[d], rng));
    let f = |cell: &LstmCell<f64>, x: &Tensor<f64>, h: &Tensor<f64>, c: &Tensor<f64>| {
        let state = LstmState { h: h.data().to_vec(), c: c.data().to_vec() };
        let (next, _) = cell.step(x, &state).expect("shape checked");
        Tensor::vector(next.h).dot(&ph) + Tensor::vector(next.c).dot(&pc)
    };
    let state = LstmState { h: h.data().to_vec(), c: c.data().to_vec() };
    let (_, tape) = cell.step(&x, &state)?;
    let (dx, dh, dc) = cell.step_backward(&tape, ph.data(), pc.data());
    let mut out = vec![
        pair(&dx, finite_diff_grad(|t| f(&cell, t, &h, &c), &x, eps)),
        pair(&Tensor::vector(dh), finite_diff_grad(|t| f(&cell, &x, t, &c), &h, eps)),
        pair(&Tensor::vector(dc), finite_diff_grad(|t| f(&cell, &x, &h, t), &c, eps)),
    ];
    out.extend(param_pairs(&mut cell, |m| f(m, &x, &h, &c), eps));
    Ok(out)
}

fn bilstm_case(rng: &mut ChaCha8Rng, eps: f64) -> Result<Pairs> {
    let (n, d, steps) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=4));
    let fusion = if rng.gen() { RnnFusion::Cat } else { RnnFusion::Sum };
    let mut head = BiLstm::<f64>::new(n, d, fusion, rng)?;
    let xs = random(&[steps, n], rng);
    let probe = random(&[head.output_dim()], rng);
    let split = |t: &Tensor<f64>| (0..steps).map(|s| t.slice_outer(s)).collect::<Vec<_>>();
    let f = |m: &BiLstm<f64>, t: &Tensor<f64>| m.forward(&split(t)).expect("shape checked").0.dot(&probe);
    let (_, tape) = head.forward(&split(&xs))?;
    let dxs = Tensor::stack(&head.backward(&tape, &probe))?;
    let mut out = vec![pair(&dxs, finite_diff_grad(|t| f(&head, t), &xs, eps))];
    out.extend(param_pairs(&mut head, |m| f(m, &xs), eps));
    Ok(out)
}

fn deep_log_case(rng: &mut ChaCha8Rng, eps: f64) -> Result<Pairs> {
    let scales = rng.gen_range(1..=3);
    let spec = LogSpec::from_config(&LogConfig { scales, ..Default::default() })?;
    let lo = 4.max((1 << (scales - 1)) + 1);
    let (h, w) = (rng.gen_range(lo..=9), rng.gen_range(lo..=9));
    let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let mut layer = DeepLog::<f64>::new(spec, ci, co, rng)?;
    layer.reduction.bias.value = random(&[co], rng);
    let x = random(&[ci, h, w], rng);
    let probe = random(&[co, h, w], rng);
    let f = |m: &DeepLog<f64>, t: &Tensor<f64>| m.forward(t).expect("shape checked").0.dot(&probe);
    let (_, tape) = layer.forward(&x)?;
    let dx = layer.backward(&tape, &probe);
    let mut out = vec![pair(&dx, finite_diff_grad(|t| f(&layer, t), &x, eps))];
    out.extend(param_pairs(&mut layer, |m| f(m, &x), eps));
    Ok(out)
}

/// `config` shrunk to an 8×8, three-frame model with narrow layers.
pub fn tiny_model_config(config: &ModelConfig) -> ModelConfig {
    let g = config.groups;
    let blocks = config.backbone.len().min(3);
    ModelConfig {
        height: 8,
        width: 8,
        channels: config.channels,
        frames: 3,
        rgb_channels: 2 * g,
        log_stem_channels: 2,
        log_channels: 2 * g,
        fusion_channels: 2 * g,
        backbone: (0..blocks).map(|i| 3 + i).collect(),
        hidden: 3,
        ..config.clone()
    }
}

/// Loss, ReLU pattern and hinge pattern of a batch, with dropout masks
/// fixed by `mask_seed`.
fn batch_eval(
    m: &Model<f64>,
    xs: &[Tensor<f64>],
    part: &BatchPartition,
    sphere: &HypersphereSpec,
    mask_seed: u64,
) -> Result<(f64, Vec<bool>)> {
    let mut mask = Vec::new();
    let mut embs = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        let (e, tape) = m.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed + i as u64))?;
        mask.extend(tape.relu_mask());
        embs.push(e.into_data());
    }
    mask.extend(hinge_pattern(&embs, part, sphere));
    Ok((isolation_loss(&embs, part, sphere)?, mask))
}

/// Whole model plus isolation loss on a four-sequence batch. About a dozen
/// coordinates per parameter tensor are probed; probes whose ±ε
/// evaluations see different ReLU or hinge patterns are skipped.
fn end_to_end_case(config: &ModelConfig, rng: &mut ChaCha8Rng, eps: f64) -> Result<(Pairs, usize)> {
    let cfg = tiny_model_config(config);
    let mut model = Model::<f64>::build(&cfg, rng.gen())?;
    // Zero biases leave ReLU inputs exactly on the kink wherever every
    // input is inactive; move them off it.
    for (name, p) in model.params_mut() {
        if name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
    }
    let xs: Vec<Tensor<f64>> =
        (0..4).map(|_| Tensor::from_fn(&[cfg.frames, cfg.channels, cfg.height, cfg.width], |_| rng.gen_range(0.0..1.0))).collect();
    let labels = [Label::Natural, Label::Manipulated, Label::Natural, Label::Manipulated];
    let part = BatchPartition::from_labels(&labels)?;
    let mask_seed: u64 = rng.gen();

    let mut embs = Vec::new();
    let mut tapes = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        let (e, tape) = model.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed + i as u64))?;
        embs.push(e.into_data());
        tapes.push(tape);
    }
    let dim = embs[0].len();
    let center: Vec<f64> = (0..dim).map(|k| embs.iter().map(|e| e[k]).sum::<f64>() / 4.0 + rng.gen_range(-0.01..0.01)).collect();
    let dists: Vec<f64> = embs.iter().map(|e| e.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt()).collect();
    let (lo, hi) = dists.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &d| (l.min(d), h.max(d)));
    // Radii inside and beyond every distance keep all hinges active.
    let sphere = HypersphereSpec::new(center, 0.5 * lo, 2.0 * hi)?;
    let grads = isolation_loss_grad(&embs, &part, &sphere)?;
    model.zero_grad();
    for (tape, g) in tapes.iter().zip(grads) {
        model.backward(tape, &Tensor::vector(g));
    }

    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (pi, _) in names.iter().enumerate() {
        let (len, grad) = {
            let p = &model.params()[pi].1;
            (p.len(), p.grad.data().to_vec())
        };
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for k in (0..len).step_by(1 + len / 12) {
            let mut probe = model.clone();
            let orig = probe.params()[pi].1.value.data()[k];
            probe.params_mut()[pi].1.value.data_mut()[k] = orig + eps;
            let (up, mask_up) = batch_eval(&probe, &xs, &part, &sphere, mask_seed)?;
            probe.params_mut()[pi].1.value.data_mut()[k] = orig - eps;
            let (down, mask_down) = batch_eval(&probe, &xs, &part, &sphere, mask_seed)?;
            if mask_up != mask_down {
                skipped += 1;
                continue;
            }
            analytic.push(grad[k]);
            numeric.push((up - down) / (2.0 * eps));
        }
        if !analytic.is_empty() {
            pairs.push((analytic, numeric));
        }
    }
    Ok((pairs, skipped))
}
