//! Central finite-difference verification of tape gradients.
//!
//! The checked function builds its computation on a fresh `f64` tape from
//! the supplied input handles and returns a scalar. Analytic gradients come
//! from [`Tape::backward`]; numeric ones from `(f(x+h) - f(x-h)) / 2h` per
//! coordinate. The error metric per coordinate is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
//!
//! Networks built from ReLU and max-pool are only piecewise smooth. When a
//! perturbation flips a branch (see [`Tape::branch_signature`]) the step is
//! shrunk by 10x up to [`GradCheckOptions::max_shrink`] times; if both
//! sides still leave the base piece, a second-order one-sided difference is
//! taken on whichever side stays in it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-3;
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub kink_aware: bool,
    pub max_shrink: u32,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            kink_aware: true,
            max_shrink: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub coordinates: usize,
    /// Coordinates whose step had to be shrunk or made one-sided.
    pub kink_adjusted: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Checks with default options and step `eps`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    grad_check_with(
        f,
        inputs,
        GradCheckOptions {
            eps,
            ..Default::default()
        },
    )
}

/// Same as [`grad_check`] with a fault injected into the analytic pass;
/// used to prove the checker detects broken backward rules.
pub fn grad_check_faulty<F>(
    f: F,
    inputs: &[Tensor<f64>],
    options: GradCheckOptions,
    fault: Option<(OpKind, f64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    run(f, inputs, options, fault)
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor<f64>], options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    run(f, inputs, options, None)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape.value(out).item()?, tape.branch_signature()))
}

fn run<F>(
    f: F,
    inputs: &[Tensor<f64>],
    options: GradCheckOptions,
    fault: Option<(OpKind, f64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    if !(options.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("step {} must be positive", options.eps)));
    }
    let mut tape = Tape::new();
    if let Some((kind, scale)) = fault {
        tape.inject_backward_fault(kind, scale);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base_value = tape.value(out).item()?;
    let base_sig = tape.branch_signature();
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let (again, again_sig) = evaluate(&f, inputs)?;
    if again.to_bits() != base_value.to_bits() || again_sig != base_sig {
        return Err(Error::NonDeterministic(format!(
            "two evaluations at the same point gave {base_value:e} and {again:e}"
        )));
    }

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();

    let probe = |input: usize, index: usize, delta: f64| -> Result<(f64, u64)> {
        let mut shifted = inputs.to_vec();
        let v = &mut shifted[input].data_mut()[index];
        *v += delta;
        evaluate(&f, &shifted)
    };

    let results: Vec<(Coordinate, bool)> = coords
        .par_iter()
        .map(|&(input, index)| {
            let mut h = options.eps;
            let mut numeric = None;
            let mut adjusted = false;
            for attempt in 0..=options.max_shrink {
                let (fp, sp) = probe(input, index, h)?;
                let (fm, sm) = probe(input, index, -h)?;
                if !options.kink_aware || (sp == base_sig && sm == base_sig) {
                    numeric = Some((fp - fm) / (2.0 * h));
                    adjusted = attempt > 0;
                    break;
                }
                if attempt < options.max_shrink {
                    h /= 10.0;
                }
            }
            let numeric = match numeric {
                Some(n) => n,
                None => {
                    adjusted = true;
                    one_sided(&probe, input, index, h, base_value, base_sig)?
                }
            };
            let a = analytic[input][index];
            Ok((
                Coordinate {
                    input,
                    index,
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric),
                },
                adjusted,
            ))
        })
        .collect::<Result<_>>()?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: results.len(),
        kink_adjusted: 0,
    };
    for (coord, adjusted) in results {
        report.kink_adjusted += usize::from(adjusted);
        if report.worst.is_none() || coord.rel_error > report.max_rel_error {
            report.max_rel_error = coord.rel_error;
            report.worst = Some(coord);
        }
    }
    Ok(report)
}

/// Second-order one-sided difference on the side that stays in the base
/// piece; plain central difference if neither does.
fn one_sided<P>(probe: &P, input: usize, index: usize, h: f64, f0: f64, base_sig: u64) -> Result<f64>
where
    P: Fn(usize, usize, f64) -> Result<(f64, u64)>,
{
    for dir in [-1.0, 1.0] {
        let (f1, s1) = probe(input, index, dir * h)?;
        let (f2, s2) = probe(input, index, dir * 2.0 * h)?;
        if s1 == base_sig && s2 == base_sig {
            return Ok(dir * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h));
        }
    }
    let (fp, _) = probe(input, index, h)?;
    let (fm, _) = probe(input, index, -h)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Checks each differentiable primitive on its own small random problem.
/// Every case is scalarized through a fixed random projection so all
/// outputs carry distinct weights. Returns `(op, report)` per case.
pub fn check_primitives(
    seed: u64,
    options: GradCheckOptions,
    fault: Option<(OpKind, f64)>,
) -> Result<Vec<(OpKind, GradCheckReport)>> {
    use crate::kernels::Padding;
    use crate::rng::Rng;
    use crate::tape::Mode;

    let mut rng = Rng::new(seed);
    let mut random = |shape: &[usize], scale: f64| Tensor::from_fn(shape, |_| rng.uniform_in(-scale, scale));
    let proj = random(&[64], 1.0)?;
    let project = move |t: &mut Tape<f64>, y: Var| -> Result<Var> {
        let n = t.value(y).len();
        let flat = t.reshape(y, &[n])?;
        let w = t.constant(Tensor::new(&[n], proj.data()[..n].to_vec())?);
        let p = t.mul(flat, w)?;
        Ok(t.sum(p))
    };
    let image = random(&[1, 4, 4, 2], 1.0)?;
    let conv_w = random(&[3, 3, 2, 2], 1.0)?;
    let bias2 = random(&[2], 0.5)?;
    let mat = random(&[3, 4], 2.0)?;
    let dense_w = random(&[4, 2], 1.0)?;
    let one_hot = Tensor::new(&[3, 4], vec![1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0.])?;
    let pair = random(&[6], 1.0)?;
    let other = random(&[6], 1.0)?;

    type Case<'a> = (OpKind, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync + 'a>);
    let cases: Vec<Case> = vec![
        (
            OpKind::Conv2d,
            vec![image.clone(), conv_w, bias2.clone()],
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 2, Padding::Same)?;
                project(t, y)
            }),
        ),
        (OpKind::Relu, vec![image.clone()], Box::new(|t, v| {
            let y = t.relu(v[0]);
            project(t, y)
        })),
        (OpKind::MaxPool2d, vec![image.clone()], Box::new(|t, v| {
            let y = t.maxpool2d(v[0], 2, 2)?;
            project(t, y)
        })),
        (OpKind::Dense, vec![mat.clone(), dense_w, bias2], Box::new(|t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            project(t, y)
        })),
        (OpKind::Sigmoid, vec![mat.clone()], Box::new(|t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y)
        })),
        (OpKind::Softmax, vec![mat.clone()], Box::new(|t, v| {
            let y = t.softmax(v[0])?;
            project(t, y)
        })),
        (OpKind::Dropout, vec![image.clone()], Box::new(|t, v| {
            let y = t.dropout(v[0], 0.3, Mode::Train, &mut Rng::new(7))?;
            project(t, y)
        })),
        (OpKind::Reshape, vec![image], Box::new(|t, v| {
            let y = t.reshape(v[0], &[2, 16])?;
            project(t, y)
        })),
        (OpKind::Add, vec![pair.clone(), other.clone()], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y)
        })),
        (OpKind::Mul, vec![pair, other], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y)
        })),
        (OpKind::CrossEntropy, vec![mat.clone()], Box::new(|t, v| {
            let p = t.softmax(v[0])?;
            let y = t.constant(one_hot.clone());
            t.cross_entropy(p, y)
        })),
        (OpKind::BinaryCrossEntropy, vec![mat], Box::new(|t, v| {
            let p = t.sigmoid(v[0]);
            let y = t.constant(one_hot.clone());
            t.binary_cross_entropy(p, y)
        })),
    ];
    cases
        .into_iter()
        .map(|(kind, inputs, f)| Ok((kind, run(f, &inputs, options, fault)?)))
        .collect()
}
