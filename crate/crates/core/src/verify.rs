//! Built-in gradient-check suite over every differentiable op and both
//! networks at toy sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, grad_check_coords, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{BoundParams, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ModelParams};
use crate::nn::{self, ConvSpec, ConvTransposeSpec, INSTANCE_NORM_EPS};
use crate::objectives::{self, LossMode};
use crate::tensor::{Shape, Tensor};

pub const GRAD_CHECK_EPS: f32 = 1e-3;
pub const GRAD_CHECK_TOLERANCE: f64 = 5e-3;

#[derive(Clone, Debug)]
pub struct GradCaseResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_CHECK_TOLERANCE
    }
}

type CaseFn = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;

const CASES: &[(&str, CaseFn)] = &[
    ("add", case_add),
    ("sub", case_sub),
    ("mul", case_mul),
    ("neg", case_neg),
    ("square", case_square),
    ("abs", case_abs),
    ("scale", case_scale),
    ("softplus", case_softplus),
    ("mean", case_mean),
    ("relu", case_relu),
    ("leaky_relu", case_leaky_relu),
    ("tanh", case_tanh),
    ("reflection_pad", case_reflection_pad),
    ("conv2d.input", case_conv_input),
    ("conv2d.weight", case_conv_weight),
    ("conv2d.bias", case_conv_bias),
    ("conv_transpose2d.input", case_convt_input),
    ("conv_transpose2d.weight", case_convt_weight),
    ("conv_transpose2d.bias", case_convt_bias),
    ("instance_norm.input", case_norm_input),
    ("instance_norm.gamma", case_norm_gamma),
    ("instance_norm.beta", case_norm_beta),
    ("loss.adversarial_lsgan", case_adv_lsgan),
    ("loss.adversarial_log", case_adv_log),
    ("loss.cycle", case_cycle),
    ("generator", case_generator),
    ("discriminator", case_discriminator),
];

/// Names accepted by [`run_case`].
pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|(n, _)| *n).collect()
}

/// Runs one named case. Each case draws from its own stream of `seed`.
pub fn run_case(name: &str, seed: u64) -> Result<GradCaseResult> {
    let (i, (name, f)) = CASES
        .iter()
        .enumerate()
        .find(|(_, (n, _))| *n == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown gradcheck op `{name}`; known: {}", case_names().join(", "))))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
    Ok(GradCaseResult { name, report: f(&mut rng)? })
}

pub fn run_all(seed: u64) -> Result<Vec<GradCaseResult>> {
    CASES.iter().map(|(n, _)| run_case(n, seed)).collect()
}

fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w).expect("suite shapes are non-empty")
}

fn uniform(s: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(s, -1.0, 1.0, rng)
}

/// Uniform in `[-1, -margin] ∪ [margin, 1]`, for ops with a kink at zero.
fn away_from_zero(s: Shape, margin: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(s, |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Scalar probe `Σ wᵢ·(yᵢ - bᵢ)` with fixed weights `|wᵢ| ∈ [0.5, 1]` and
/// `b` the output at the unperturbed point, so the probe stays near zero.
fn probe(tape: &Tape, y: &Var, w: &Tensor, base: &Tensor) -> Result<Var> {
    let centered = tape.sub(y, &Var::constant(base.clone()))?;
    let prod = tape.mul(&centered, &Var::constant(w.clone()))?;
    let m = tape.reduce_mean(&prod)?;
    tape.scale(&m, y.shape().numel() as f32)
}

fn check_probe<F>(x: &Tensor, rng: &mut ChaCha8Rng, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Var) -> Result<Var>,
{
    let base = f(&Tape::new(), &Var::constant(x.clone()))?.into_value();
    let w = away_from_zero(base.shape(), 0.5, rng);
    grad_check(|t, v| probe(t, &f(t, v)?, &w, &base), x, GRAD_CHECK_EPS)
}

fn case_binary(rng: &mut ChaCha8Rng, op: fn(&Tape, &Var, &Var) -> Result<Var>) -> Result<GradCheckReport> {
    let s = shape(2, 3, 4, 4);
    let x = uniform(s, rng);
    let other = uniform(s, rng);
    check_probe(&x, rng, |t, v| op(t, v, &Var::constant(other.clone())))
}

fn case_add(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_binary(rng, |t, a, b| t.add(a, b))
}

fn case_sub(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_binary(rng, |t, a, b| t.sub(b, a))
}

fn case_mul(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_binary(rng, |t, a, b| t.mul(a, b))
}

fn case_unary(rng: &mut ChaCha8Rng, kinked: bool, op: fn(&Tape, &Var) -> Result<Var>) -> Result<GradCheckReport> {
    let s = shape(2, 3, 4, 4);
    let x = if kinked { away_from_zero(s, 0.05, rng) } else { uniform(s, rng) };
    check_probe(&x, rng, op)
}

fn case_neg(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, false, |t, x| t.neg(x))
}

fn case_square(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, false, |t, x| t.square(x))
}

fn case_abs(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, true, |t, x| t.abs(x))
}

fn case_scale(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, false, |t, x| t.scale(x, -2.5))
}

fn case_softplus(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, false, |t, x| t.softplus(x))
}

fn case_relu(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, true, nn::relu)
}

fn case_leaky_relu(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, true, |t, x| nn::leaky_relu(t, x, 0.2))
}

fn case_tanh(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_unary(rng, false, nn::tanh)
}

fn case_mean(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = uniform(shape(2, 3, 4, 4), rng);
    check_probe(&x, rng, |t, v| t.reduce_mean(v))
}

fn case_reflection_pad(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = uniform(shape(1, 2, 5, 5), rng);
    check_probe(&x, rng, |t, v| nn::reflection_pad(t, v, 2))
}

/// Scales a linear operand down so the op output, and with it the f32
/// rounding of the output, is small while the gradient with respect to
/// that operand is unchanged.
fn shrink(t: &Tensor) -> Tensor {
    t.map(|v| v * 0.01)
}

struct ConvCase {
    spec: ConvSpec,
    x: Tensor,
    w: Tensor,
    b: Tensor,
}

fn conv_case(rng: &mut ChaCha8Rng) -> Result<ConvCase> {
    let spec = ConvSpec::new(3, 4, 3, 2, 1);
    let x = uniform(shape(2, 3, 7, 7), rng);
    let w = Tensor::uniform(spec.weight_shape()?, -0.5, 0.5, rng);
    let b = uniform(Shape::channels(4)?, rng);
    Ok(ConvCase { spec, x, w, b })
}

fn case_conv_input(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let c = conv_case(rng)?;
    let (w, b) = (Var::constant(c.w), Var::constant(shrink(&c.b)));
    check_probe(&shrink(&c.x), rng, |t, v| nn::conv2d(t, v, &w, &b, &c.spec))
}

fn case_conv_weight(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let c = conv_case(rng)?;
    let (x, b) = (Var::constant(c.x), Var::constant(shrink(&c.b)));
    check_probe(&shrink(&c.w), rng, |t, v| nn::conv2d(t, &x, v, &b, &c.spec))
}

fn case_conv_bias(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let c = conv_case(rng)?;
    let (x, w) = (Var::constant(c.x), Var::constant(c.w));
    check_probe(&c.b, rng, |t, v| nn::conv2d(t, &x, &w, v, &c.spec))
}

struct ConvTCase {
    spec: ConvTransposeSpec,
    x: Tensor,
    w: Tensor,
    b: Tensor,
}

fn convt_case(rng: &mut ChaCha8Rng) -> Result<ConvTCase> {
    let spec = ConvTransposeSpec {
        in_channels: 3,
        out_channels: 2,
        kernel: 3,
        stride: 2,
        padding: 1,
        output_padding: 1,
    };
    let x = uniform(shape(1, 3, 4, 4), rng);
    let w = Tensor::uniform(spec.weight_shape()?, -0.5, 0.5, rng);
    let b = uniform(Shape::channels(2)?, rng);
    Ok(ConvTCase { spec, x, w, b })
}

fn case_convt_input(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let c = convt_case(rng)?;
    let (w, b) = (Var::constant(c.w), Var::constant(shrink(&c.b)));
    check_probe(&shrink(&c.x), rng, |t, v| nn::conv_transpose2d(t, v, &w, &b, &c.spec))
}

fn case_convt_weight(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let c = convt_case(rng)?;
    let (x, b) = (Var::constant(c.x), Var::constant(shrink(&c.b)));
    check_probe(&shrink(&c.w), rng, |t, v| nn::conv_transpose2d(t, &x, v, &b, &c.spec))
}

fn case_convt_bias(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let c = convt_case(rng)?;
    let (x, w) = (Var::constant(c.x), Var::constant(c.w));
    check_probe(&c.b, rng, |t, v| nn::conv_transpose2d(t, &x, &w, v, &c.spec))
}

fn norm_case(rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor, Tensor)> {
    let x = uniform(shape(2, 3, 4, 4), rng);
    let g = Tensor::uniform(Shape::channels(3)?, 0.5, 1.5, rng);
    let b = uniform(Shape::channels(3)?, rng);
    Ok((x, g, b))
}

fn case_norm_input(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (x, g, b) = norm_case(rng)?;
    let (g, b) = (Var::constant(g), Var::constant(b));
    // The output is invariant to the input scale while the gradient grows
    // as the scale shrinks.
    let x = x.map(|v| v * 0.2);
    check_probe(&x, rng, |t, v| nn::instance_norm(t, v, &g, &b, INSTANCE_NORM_EPS))
}

fn case_norm_gamma(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (x, g, b) = norm_case(rng)?;
    let (x, b) = (Var::constant(x), Var::constant(b));
    check_probe(&g, rng, |t, v| nn::instance_norm(t, &x, v, &b, INSTANCE_NORM_EPS))
}

fn case_norm_beta(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (x, g, b) = norm_case(rng)?;
    let (x, g) = (Var::constant(x), Var::constant(g));
    check_probe(&b, rng, |t, v| nn::instance_norm(t, &x, &g, v, INSTANCE_NORM_EPS))
}

/// Logits `center ± [0.2, 2]`, away from the loss's stationary point.
fn logits(center: f32, rng: &mut ChaCha8Rng) -> Tensor {
    away_from_zero(shape(1, 1, 2, 2), 0.1, rng).map(|v| center + 2.0 * v)
}

fn case_adv(rng: &mut ChaCha8Rng, mode: LossMode) -> Result<GradCheckReport> {
    let real = Var::constant(logits(1.0, rng));
    let fake = logits(0.0, rng);
    let d = grad_check(
        |t, v| objectives::adversarial_d_loss(t, &real, v, mode),
        &fake,
        GRAD_CHECK_EPS,
    )?;
    let g = grad_check(|t, v| objectives::adversarial_g_loss(t, v, mode), &logits(1.0, rng), GRAD_CHECK_EPS)?;
    Ok(if g.max_rel_error > d.max_rel_error { g } else { d })
}

fn case_adv_lsgan(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_adv(rng, LossMode::LeastSquares)
}

fn case_adv_log(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    case_adv(rng, LossMode::Log)
}

fn case_cycle(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let s = shape(1, 3, 4, 4);
    let x = Var::constant(uniform(s, rng));
    let y = Var::constant(uniform(s, rng));
    let y_rec = Var::constant(uniform(s, rng));
    let offset = away_from_zero(s, 0.05, rng);
    let x_rec = x.value().zip_map(&offset, "cycle case", |a, b| a + b)?;
    grad_check(|t, v| objectives::cycle_loss(t, &x, v, &y, &y_rec), &x_rec, GRAD_CHECK_EPS)
}

/// Conditioning of a toy network for a first-kernel gradient check.
struct Conditioning {
    /// Value for every instance-norm `beta`, placing ReLU inputs well on
    /// their linear side so `eps` steps do not cross kinks.
    beta: f32,
    /// Scale of the checked kernel. Instance norm makes the loss invariant
    /// to this scale, so a small kernel raises the gradient above f32 noise.
    checked_scale: f32,
    /// Extra gain on the output conv, keeping tanh out of saturation.
    out_gain: f32,
}

fn condition(params: &mut ModelParams, checked: &str, c: &Conditioning, rng: &mut ChaCha8Rng) -> Result<()> {
    for (name, t) in params.iter_mut() {
        if name.ends_with(".norm.beta") {
            *t = t.map(|_| c.beta);
            continue;
        }
        if !name.ends_with(".weight") {
            continue;
        }
        let [o, i, kh, kw] = t.shape().dims();
        let fan_in = if name.starts_with("dec") { o * kh * kw } else { i * kh * kw };
        let mut std = (1.0 / fan_in as f32).sqrt();
        if name == "out.weight" {
            std *= c.out_gain / (1.0 + c.beta * c.beta).sqrt();
        }
        *t = if name == checked {
            uniform(t.shape(), rng).map(|v| v * c.checked_scale)
        } else {
            Tensor::randn(t.shape(), std, rng)
        };
    }
    // An unnormalized first layer gets its shift through the bias instead.
    if checked == "conv1.weight" {
        let w = params.get(checked)?;
        let per_filter = w.data().iter().map(|v| v * v).sum::<f32>() / w.shape().n() as f32;
        let spread = (per_filter / 3.0).sqrt();
        if let Some(b) = params.get_mut("conv1.bias") {
            *b = b.map(|_| c.beta * spread);
        }
    }
    Ok(())
}

/// Checks a scalar network loss against the top-left 3x3 window of the
/// first input channel of the first output filter of `param`.
fn check_kernel_window<F>(params: &ModelParams, param: &str, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &BoundParams) -> Result<Var>,
{
    let kernel = params.get(param)?.clone();
    let coords: Vec<usize> = (0..3)
        .flat_map(|y| (0..3).map(move |x| (y, x)))
        .map(|(y, x)| kernel.index(0, 0, y, x))
        .collect();
    grad_check_coords(
        |t, v| {
            let mut bound = params.bind(t, false);
            bound.replace(param, v.clone())?;
            loss(t, &bound)
        },
        &kernel,
        GRAD_CHECK_EPS,
        &coords,
    )
}

fn case_generator(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let spec = GeneratorSpec {
        in_channels: 3,
        out_channels: 3,
        base_filters: 1,
        n_res_blocks: 1,
        image_size: 16,
    };
    let mut g = Generator::build(spec, rng.random())?;
    let c = Conditioning {
        beta: 3.0,
        checked_scale: 0.01,
        out_gain: 0.5,
    };
    condition(&mut g.params, "enc1.weight", &c, rng)?;
    let x = Var::constant(uniform(shape(1, 3, 16, 16), rng));
    let base = g.run(x.value())?;
    let probe_w = away_from_zero(base.shape(), 0.5, rng);
    check_kernel_window(&g.params, "enc1.weight", |t, bound| {
        let y = g.forward(t, bound, &x)?;
        probe(t, &y, &probe_w, &base)
    })
}

fn case_discriminator(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let spec = DiscriminatorSpec {
        in_channels: 3,
        filters: vec![2, 4],
        kernel: 4,
        instance_norm: true,
    };
    let mut d = Discriminator::build(spec, rng.random())?;
    let c = Conditioning {
        beta: 4.0,
        checked_scale: 0.01,
        out_gain: 1.0,
    };
    condition(&mut d.params, "conv1.weight", &c, rng)?;
    let x = Var::constant(uniform(shape(1, 3, 16, 16), rng));
    let base = d.run(x.value())?;
    let probe_w = away_from_zero(base.shape(), 0.5, rng);
    check_kernel_window(&d.params, "conv1.weight", |t, bound| {
        let logits = d.forward(t, bound, &x)?;
        probe(t, &logits, &probe_w, &base)
    })
}

/// One line of the self-test report.
#[derive(Clone, Debug)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SelfCheck {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        SelfCheck {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// `<conv_transpose(y), x> == <y, conv(x)>` for random geometry sharing one
/// kernel buffer; returns the worst relative gap over `cases` draws.
pub fn conv_adjoint_gap(cases: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..k);
        let size = rng.random_range(k.max(2)..9);
        let conv = ConvSpec::new(cin, cout, k, stride, pad);
        let Some(o) = conv.output_size(size) else { continue };
        let back = o.checked_sub(1).map(|v| v * stride + k).and_then(|v| v.checked_sub(2 * pad));
        let Some(back) = back else { continue };
        if back > size || size - back >= stride {
            continue;
        }
        let convt = ConvTransposeSpec {
            in_channels: cout,
            out_channels: cin,
            kernel: k,
            stride,
            padding: pad,
            output_padding: size - back,
        };
        let w = uniform(conv.weight_shape()?, rng);
        let x = uniform(shape(1, cin, size, size), rng);
        let y = uniform(shape(1, cout, o, o), rng);
        let tape = Tape::new();
        let wv = Var::constant(w);
        let cx = nn::conv2d(&tape, &Var::constant(x.clone()), &wv, &Var::constant(Tensor::zeros(Shape::channels(cout)?)), &conv)?;
        let ty = nn::conv_transpose2d(&tape, &Var::constant(y.clone()), &wv, &Var::constant(Tensor::zeros(Shape::channels(cin)?)), &convt)?;
        let lhs = ty.value().dot(&x)?;
        let rhs = y.dot(cx.value())?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Ok(worst)
}

/// Gradient suite plus structural checks that need no reference
/// implementation.
pub fn selftest(seed: u64) -> Result<Vec<SelfCheck>> {
    let mut out = Vec::new();
    for r in run_all(seed)? {
        out.push(SelfCheck::new(
            format!("gradcheck.{}", r.name),
            r.passed(),
            format!("max_rel_error={:.3e}", r.report.max_rel_error),
        ));
    }
    let spec = DiscriminatorSpec::default();
    let rf = crate::models::receptive_field(&spec);
    out.push(SelfCheck::new("patchgan.receptive_field", rf == (70, 70), format!("{}x{}", rf.0, rf.1)));
    let side = spec.output_size(256);
    out.push(SelfCheck::new("patchgan.logit_map_256", side == Some(30), format!("{side:?}")));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAD70);
    let gap = conv_adjoint_gap(50, &mut rng)?;
    out.push(SelfCheck::new("conv.adjoint", gap < 1e-4, format!("max_rel_gap={gap:.3e}")));

    let tape = Tape::new();
    let ones = Var::constant(Tensor::ones(shape(1, 1, 4, 4)));
    let zeros = Var::constant(Tensor::zeros(shape(1, 1, 4, 4)));
    let g_at_real = objectives::adversarial_g_loss(&tape, &ones, LossMode::LeastSquares)?.value().item();
    let d_at_perfect = objectives::adversarial_d_loss(&tape, &ones, &zeros, LossMode::LeastSquares)?.value().item();
    let cyc_exact = objectives::cycle_loss(&tape, &ones, &ones, &zeros, &zeros)?.value().item();
    out.push(SelfCheck::new(
        "loss.identities",
        g_at_real == 0.0 && d_at_perfect == 0.0 && cyc_exact == 0.0,
        format!("g={g_at_real} d={d_at_perfect} cyc={cyc_exact}"),
    ));

    let mut pool = crate::pool::ImagePool::new(crate::pool::DEFAULT_POOL_CAPACITY, seed);
    let mut max_len = 0;
    for i in 0..200 {
        pool.query(Tensor::full(shape(1, 1, 1, 1), i as f32))?;
        max_len = max_len.max(pool.len());
    }
    out.push(SelfCheck::new(
        "pool.capacity",
        max_len == crate::pool::DEFAULT_POOL_CAPACITY,
        format!("max_len={max_len}"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_case_is_an_error() {
        assert!(run_case("conv3d", 0).is_err());
    }

    #[test]
    fn default_seed_passes_every_check() {
        for c in selftest(0).unwrap() {
            assert!(c.passed, "{} {}", c.name, c.detail);
        }
    }

    #[test]
    fn case_names_are_unique() {
        let mut names = case_names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CASES.len());
    }
}

