//! Central finite-difference verification of every analytic gradient, in f64.
//!
//! Each layer is checked on randomly sized inputs against the scalar
//! objective `sum(output * R)` for a random `R`; the losses are checked
//! directly. The whole network is checked on [`Arch::tiny`] with the full
//! training objective, skipping coordinates whose perturbation flips a ReLU
//! or changes a pooling winner.

use crate::error::Result;
use crate::loss::{bce_with_logits, cross_entropy};
use crate::model::{backward, forward, Arch, ModelParams};
use crate::nn::{
    concat_backward, concat_channels, conv2d_backward, conv2d_forward, convtranspose2d_backward,
    convtranspose2d_forward, linear_backward, linear_forward, maxpool2d_backward,
    maxpool2d_forward, relu, relu_backward,
};
use crate::tensor::{Rng, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Consecutive seeds covered by one run.
pub const SEEDS_PER_RUN: u64 = 5;

/// Exit status of a clean run and of a tolerance breach.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 2;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Deliberate corruption of an analytic gradient, used to show the harness
/// notices broken backward passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the conv2d weight gradient by 1.01.
    ConvWeightGrad,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates left out because the perturbation crossed a kink.
    pub skipped: usize,
}

impl LayerCheck {
    fn new(layer: &'static str, tolerance: f64) -> Self {
        LayerCheck {
            layer,
            max_rel_error: 0.0,
            tolerance,
            checked: 0,
            skipped: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seeds: Vec<u64>,
    pub layers: Vec<LayerCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(LayerCheck::passed)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.layers
            .iter()
            .filter(|l| !l.passed())
            .map(|l| l.layer)
            .collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }
}

/// Runs every check over seeds `seed..seed + SEEDS_PER_RUN`.
pub fn run(seed: u64) -> Result<GradcheckReport> {
    let seeds: Vec<u64> = (0..SEEDS_PER_RUN).map(|i| seed.wrapping_add(i)).collect();
    run_with(&seeds, None)
}

type Check = fn(&mut Rng, &mut LayerCheck, Option<Fault>) -> Result<()>;

pub fn run_with(seeds: &[u64], fault: Option<Fault>) -> Result<GradcheckReport> {
    let checks: [(&'static str, f64, Check); 9] = [
        ("conv2d", LAYER_TOLERANCE, check_conv2d),
        ("convtranspose2d", LAYER_TOLERANCE, check_convtranspose2d),
        ("maxpool2d", LAYER_TOLERANCE, check_maxpool2d),
        ("relu", LAYER_TOLERANCE, check_relu),
        ("linear", LAYER_TOLERANCE, check_linear),
        ("concat", LAYER_TOLERANCE, check_concat),
        ("cross_entropy", LOSS_TOLERANCE, check_cross_entropy),
        ("bce_with_logits", LOSS_TOLERANCE, check_bce),
        ("network", NETWORK_TOLERANCE, check_network),
    ];
    let mut layers = Vec::with_capacity(checks.len());
    for (index, (name, tolerance, check)) in checks.iter().enumerate() {
        let mut entry = LayerCheck::new(name, *tolerance);
        for &seed in seeds {
            let mut rng = Rng::new(seed ^ ((index as u64 + 1) << 32));
            check(&mut rng, &mut entry, fault)?;
        }
        layers.push(entry);
    }
    Ok(GradcheckReport {
        seeds: seeds.to_vec(),
        layers,
    })
}

fn random(dims: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.uniform(lo, hi)).collect())
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Scalar objective of the inputs; `None` marks an incomparable point.
type Objective<'a> = dyn Fn(&[Tensor<f64>]) -> Result<Option<f64>> + 'a;

/// Compares `analytic[t]` against central differences of `eval` w.r.t. every
/// element of `inputs[t]`. `eval` returns `None` when a perturbed point is
/// not comparable with the base point.
fn compare(
    entry: &mut LayerCheck,
    inputs: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    eval: &Objective<'_>,
) -> Result<()> {
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            inputs[t].data_mut()[i] = orig + FD_STEP;
            let plus = eval(inputs)?;
            inputs[t].data_mut()[i] = orig - FD_STEP;
            let minus = eval(inputs)?;
            inputs[t].data_mut()[i] = orig;
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    let numeric = (p - m) / (2.0 * FD_STEP);
                    let err = relative_error(analytic[t].data()[i], numeric);
                    entry.max_rel_error = entry.max_rel_error.max(err);
                    entry.checked += 1;
                }
                _ => entry.skipped += 1,
            }
        }
    }
    Ok(())
}

fn check_conv2d(rng: &mut Rng, entry: &mut LayerCheck, fault: Option<Fault>) -> Result<()> {
    let (n, cin, cout) = (range(rng, 1, 2), range(rng, 1, 3), range(rng, 1, 3));
    let (h, w) = (range(rng, 3, 6), range(rng, 3, 6));
    let k = if rng.below(4) == 0 { 1 } else { 3 };
    let x = random(&[n, cin, h, w], rng, -1.0, 1.0)?;
    let wt = random(&[cout, cin, k, k], rng, -1.0, 1.0)?;
    let b = random(&[cout], rng, -1.0, 1.0)?;
    let r = random(&[n, cout, h, w], rng, -1.0, 1.0)?;
    let (_, cache) = conv2d_forward(&x, &wt, &b)?;
    let mut g = conv2d_backward(&cache, &r)?;
    if fault == Some(Fault::ConvWeightGrad) {
        g.weight = g.weight.map(|v| v * 1.01);
    }
    let eval = |t: &[Tensor<f64>]| Ok(Some(dot(&conv2d_forward(&t[0], &t[1], &t[2])?.0, &r)));
    compare(entry, &mut [x, wt, b], &[g.input, g.weight, g.bias], &eval)
}

fn check_convtranspose2d(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let (n, cin, cout) = (range(rng, 1, 2), range(rng, 1, 3), range(rng, 1, 3));
    let (h, w) = (range(rng, 1, 4), range(rng, 1, 4));
    let x = random(&[n, cin, h, w], rng, -1.0, 1.0)?;
    let wt = random(&[cin, cout, 2, 2], rng, -1.0, 1.0)?;
    let b = random(&[cout], rng, -1.0, 1.0)?;
    let r = random(&[n, cout, 2 * h, 2 * w], rng, -1.0, 1.0)?;
    let (_, cache) = convtranspose2d_forward(&x, &wt, &b)?;
    let g = convtranspose2d_backward(&cache, &r)?;
    let eval = |t: &[Tensor<f64>]| {
        Ok(Some(dot(&convtranspose2d_forward(&t[0], &t[1], &t[2])?.0, &r)))
    };
    compare(entry, &mut [x, wt, b], &[g.input, g.weight, g.bias], &eval)
}

fn check_maxpool2d(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let (n, c) = (range(rng, 1, 2), range(rng, 1, 3));
    let (h, w) = (2 * range(rng, 1, 3), 2 * range(rng, 1, 3));
    // Distinct values spaced far wider than the step keep every window's
    // winner fixed under perturbation.
    let len = n * c * h * w;
    let mut values: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    rng.shuffle(&mut values);
    let x = Tensor::from_vec(&[n, c, h, w], values)?;
    let r = random(&[n, c, h / 2, w / 2], rng, -1.0, 1.0)?;
    let (_, cache) = maxpool2d_forward(&x)?;
    let g = maxpool2d_backward(&cache, &r)?;
    let eval = |t: &[Tensor<f64>]| Ok(Some(dot(&maxpool2d_forward(&t[0])?.0, &r)));
    compare(entry, &mut [x], &[g], &eval)
}

fn check_relu(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let dims = [range(rng, 1, 3), range(rng, 1, 8)];
    let mut x = random(&dims, rng, 0.01, 1.0)?;
    for v in x.data_mut() {
        if rng.below(2) == 0 {
            *v = -*v;
        }
    }
    let r = random(&dims, rng, -1.0, 1.0)?;
    let (_, cache) = relu(&x);
    let g = relu_backward(&cache, &r)?;
    let eval = |t: &[Tensor<f64>]| Ok(Some(dot(&relu(&t[0]).0, &r)));
    compare(entry, &mut [x], &[g], &eval)
}

fn check_linear(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let (batch, n_in, n_out) = (range(rng, 1, 3), range(rng, 1, 6), range(rng, 1, 5));
    let x = random(&[batch, n_in], rng, -1.0, 1.0)?;
    let wt = random(&[n_in, n_out], rng, -1.0, 1.0)?;
    let b = random(&[n_out], rng, -1.0, 1.0)?;
    let r = random(&[batch, n_out], rng, -1.0, 1.0)?;
    let (_, cache) = linear_forward(&x, &wt, &b)?;
    let g = linear_backward(&cache, &r)?;
    let eval = |t: &[Tensor<f64>]| Ok(Some(dot(&linear_forward(&t[0], &t[1], &t[2])?.0, &r)));
    compare(entry, &mut [x, wt, b], &[g.input, g.weight, g.bias], &eval)
}

fn check_concat(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let (n, ca, cb) = (range(rng, 1, 2), range(rng, 1, 3), range(rng, 1, 3));
    let (h, w) = (range(rng, 1, 4), range(rng, 1, 4));
    let a = random(&[n, ca, h, w], rng, -1.0, 1.0)?;
    let b = random(&[n, cb, h, w], rng, -1.0, 1.0)?;
    let r = random(&[n, ca + cb, h, w], rng, -1.0, 1.0)?;
    let (_, cache) = concat_channels(&a, &b)?;
    let (ga, gb) = concat_backward(&cache, &r)?;
    let eval = |t: &[Tensor<f64>]| Ok(Some(dot(&concat_channels(&t[0], &t[1])?.0, &r)));
    compare(entry, &mut [a, b], &[ga, gb], &eval)
}

fn check_cross_entropy(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let batch = range(rng, 1, 4);
    let logits = random(&[batch, 4], rng, -3.0, 3.0)?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(4)).collect();
    let (_, g) = cross_entropy(&logits, &labels)?;
    let eval = |t: &[Tensor<f64>]| Ok(Some(cross_entropy(&t[0], &labels)?.0));
    compare(entry, &mut [logits], &[g], &eval)
}

fn check_bce(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let dims = [range(rng, 1, 2), 1, range(rng, 1, 4), range(rng, 1, 4)];
    let logits = random(&dims, rng, -4.0, 4.0)?;
    let n: usize = dims.iter().product();
    let target = Tensor::from_vec(&dims, (0..n).map(|_| rng.below(2) as f64).collect())?;
    let (_, g) = bce_with_logits(&logits, &target)?;
    let eval = |t: &[Tensor<f64>]| Ok(Some(bce_with_logits(&t[0], &target)?.0));
    compare(entry, &mut [logits], &[g], &eval)
}

fn check_network(rng: &mut Rng, entry: &mut LayerCheck, _: Option<Fault>) -> Result<()> {
    let arch = Arch::tiny();
    let params = ModelParams::<f64>::init(arch.clone(), rng.next_u64())?;
    // Small random biases so that no unit sits exactly at a kink.
    let mut tensors = params.tensors().to_vec();
    for (spec, t) in arch.manifest().iter().zip(tensors.iter_mut()) {
        if spec.fan_in.is_none() {
            *t = random(t.dims(), rng, -0.1, 0.1)?;
        }
    }
    let batch = 2;
    let s = arch.input_size;
    let image = random(&[batch, arch.in_channels, s, s], rng, 0.0, 1.0)?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(arch.classes)).collect();
    let target = Tensor::from_vec(
        &[batch, 1, s, s],
        (0..batch * s * s).map(|_| rng.below(2) as f64).collect(),
    )?;

    let model = ModelParams::from_tensors(arch.clone(), tensors.clone())?;
    let (out, cache) = forward(&model, &image)?;
    let (_, g_cls) = cross_entropy(&out.class_logits, &labels)?;
    let (_, g_seg) = bce_with_logits(&out.mask_logits, &target)?;
    let grads = backward(&model, &cache, &g_cls, &g_seg)?;
    let base_pattern = cache.activation_pattern();

    let eval = |t: &[Tensor<f64>]| {
        let model = ModelParams::from_tensors(arch.clone(), t.to_vec())?;
        let (out, cache) = forward(&model, &image)?;
        if cache.activation_pattern() != base_pattern {
            return Ok(None);
        }
        let (cls, _) = cross_entropy(&out.class_logits, &labels)?;
        let (seg, _) = bce_with_logits(&out.mask_logits, &target)?;
        Ok(Some(cls + seg))
    };
    compare(entry, &mut tensors, grads.tensors(), &eval)
}
