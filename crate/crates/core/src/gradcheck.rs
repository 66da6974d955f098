//! Central finite-difference verification of tape gradients (double precision).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::metrics::{ClassReduction, TverskyWeights, DEFAULT_SMOOTH};
use crate::rng;
use crate::tensor::Tensor;
use crate::unet::{self, attention_gate, GateVars, Mode, ModelParams, UNetConfig};

pub const DEFAULT_EPS: f64 = 1e-4;

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// Largest [`relative_error`] over paired gradient buffers.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.iter().zip(n).map(|(&a, &n)| relative_error(a, n)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn loss_of<F>(build: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok(g.value(loss).values()[0])
}

/// Analytic gradients of the scalar built by `build` w.r.t. every input.
pub fn analytic_gradient<F>(build: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect())
}

/// Central differences at the given `(input, element)` coordinates.
pub fn numeric_gradient_at<F>(build: &F, inputs: &[Tensor<f64>], coords: &[(usize, usize)], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    coords
        .iter()
        .map(|&(i, j)| {
            let x0 = work[i].values()[j];
            work[i].values_mut()[j] = x0 + eps;
            let up = loss_of(build, &work)?;
            work[i].values_mut()[j] = x0 - eps;
            let down = loss_of(build, &work)?;
            work[i].values_mut()[j] = x0;
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}

/// Compares analytic and central-difference gradients over every element of
/// every input.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
    grad_check_coords(&build, inputs, &coords, eps)
}

/// Like [`grad_check`] but only at up to `per_input` seeded random elements
/// of each input; for models too large to difference exhaustively.
pub fn grad_check_sampled<F>(build: F, inputs: &[Tensor<f64>], eps: f64, per_input: usize, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut r = rng::stream(seed, "gradcheck.sample", 0);
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        if t.len() <= per_input {
            coords.extend((0..t.len()).map(|j| (i, j)));
        } else {
            coords.extend((0..per_input).map(|_| (i, r.random_range(0..t.len()))));
        }
    }
    grad_check_coords(&build, inputs, &coords, eps)
}

fn grad_check_coords<F>(build: &F, inputs: &[Tensor<f64>], coords: &[(usize, usize)], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradient(build, inputs)?;
    let numeric = numeric_gradient_at(build, inputs, coords, eps)?;
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: coords.len() };
    for (&(i, j), &n) in coords.iter().zip(&numeric) {
        let e = relative_error(analytic[i][j], n);
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = e;
            report.worst = (i, j);
        }
    }
    Ok(report)
}

/// End-to-end check of the model: soft Tversky loss of `forward` against
/// central differences at up to `per_tensor` seeded elements of every
/// trainable tensor. Returns the check and the name of the worst tensor.
#[allow(clippy::too_many_arguments)]
pub fn model_grad_check(
    cfg: &UNetConfig,
    params: &ModelParams<f64>,
    batch: &Tensor<f64>,
    target: &Tensor<f64>,
    mode: Mode,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<(GradCheck, String)> {
    let run = |p: &ModelParams<f64>, backward: bool| -> Result<(f64, unet::ForwardPass<f64>)> {
        let mut fp = unet::forward(cfg, p, batch, mode)?;
        let l = fp.graph.soft_tversky_loss(fp.probs, target, TverskyWeights::default(), DEFAULT_SMOOTH, ClassReduction::Mean)?;
        if backward {
            fp.graph.backward(l)?;
        }
        Ok((fp.graph.value(l).values()[0], fp))
    };
    let loss_of = |p: &ModelParams<f64>| run(p, false).map(|(l, _)| l);
    let analytic = run(params, true)?.1.grads();
    let names: Vec<String> = params.trainable().map(|(n, _)| n.clone()).collect();
    let mut r = rng::stream(seed, "gradcheck.model", 0);
    let mut work = params.clone();
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for (ti, name) in names.iter().enumerate() {
        let len = params.get(name)?.len();
        let coords: Vec<usize> =
            if len <= per_tensor { (0..len).collect() } else { (0..per_tensor).map(|_| r.random_range(0..len)).collect() };
        let a = analytic.get(name).ok_or_else(|| crate::Error::MissingGradient(name.clone()))?;
        for j in coords {
            let x0 = params.get(name)?.values()[j];
            work.get_mut(name)?.values_mut()[j] = x0 + eps;
            let up = loss_of(&work)?;
            work.get_mut(name)?.values_mut()[j] = x0 - eps;
            let down = loss_of(&work)?;
            work.get_mut(name)?.values_mut()[j] = x0;
            let e = relative_error(a[j], (up - down) / (2.0 * eps));
            report.checked += 1;
            if e > report.max_rel_error || e.is_nan() {
                report.max_rel_error = e;
                report.worst = (ti, j);
            }
        }
    }
    let worst = names.get(report.worst.0).cloned().unwrap_or_default();
    Ok((report, worst))
}

/// Seeded uniform tensor in `[-scale, scale]`.
pub fn random_tensor(extents: &[usize], scale: f64, seed: u64, name: &str) -> Tensor<f64> {
    let mut r = rng::stream(seed, name, 0);
    Tensor::from_fn(extents, |_| r.random_range(-scale..scale))
}

/// Reduces a non-scalar output to a scalar with fixed random weights so each
/// output element gets a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = random_tensor(g.value(out).extents(), 1.0, seed, "gradcheck.readout");
    let wv = g.constant(w);
    let p = g.mul(out, wv)?;
    g.sum(p)
}

/// Pushes values at least 0.05 away from zero so central differences never
/// straddle the kink of a rectifier.
fn off_kink(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v < 0.0 { v - 0.05 } else { v + 0.05 })
}

/// One named case of the operator suite.
pub struct OpCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    #[allow(clippy::type_complexity)]
    pub build: alloc::boxed::Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>,
}

fn case(
    name: String,
    inputs: Vec<Tensor<f64>>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase { name, inputs, build: alloc::boxed::Box::new(build) }
}

/// Every differentiable operator on three seeded shapes each, reduced to a
/// scalar by [`weighted_sum`].
pub fn operator_suite(seed: u64) -> Vec<OpCase> {
    let mut out = Vec::new();
    let shapes: [(usize, usize, [usize; 3]); 3] = [(1, 2, [4, 4, 4]), (2, 1, [2, 4, 6]), (1, 3, [6, 4, 2])];
    for (si, &(n, c, d)) in shapes.iter().enumerate() {
        let s = seed.wrapping_add(si as u64 * 1000);
        let x5 = [n, c, d[0], d[1], d[2]];
        let rt = |e: &[usize], tag: &str| random_tensor(e, 1.0, s, tag);

        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (2, 2, 0)] {
            let co = 3;
            out.push(case(
                format!("conv3d k{k} s{stride} p{pad} {x5:?}"),
                vec![rt(&x5, "x"), rt(&[co, c, k, k, k], "w"), rt(&[co], "b")],
                move |g, v| {
                    let y = g.conv3d(v[0], v[1], Some(v[2]), stride, pad)?;
                    weighted_sum(g, y, s)
                },
            ));
        }
        out.push(case(
            format!("conv3d_1x1 {x5:?}"),
            vec![rt(&x5, "x"), rt(&[2, c, 1, 1, 1], "w"), rt(&[2], "b")],
            move |g, v| {
                let y = g.conv3d_1x1(v[0], v[1], Some(v[2]))?;
                weighted_sum(g, y, s)
            },
        ));
        out.push(case(
            format!("transposed_conv3d {x5:?}"),
            vec![rt(&x5, "x"), rt(&[c, 2, 2, 2, 2], "w")],
            move |g, v| {
                let y = g.transposed_conv3d(v[0], v[1], 2)?;
                weighted_sum(g, y, s)
            },
        ));
        out.push(case(format!("upsample_trilinear {x5:?}"), vec![rt(&x5, "x")], move |g, v| {
            let y = g.upsample_trilinear(v[0], 2)?;
            weighted_sum(g, y, s)
        }));
        out.push(case(format!("maxpool3d {x5:?}"), vec![rt(&x5, "x")], move |g, v| {
            let y = g.maxpool3d(v[0], 2)?;
            weighted_sum(g, y, s)
        }));
        out.push(case(
            format!("batchnorm train {x5:?}"),
            vec![rt(&x5, "x"), rt(&[c], "gamma"), rt(&[c], "beta")],
            move |g, v| {
                let (y, _) = g.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, y, s)
            },
        ));
        let mean = rt(&[c], "mean").into_values();
        let var: Vec<f64> = rt(&[c], "var").values().iter().map(|v| v.abs() + 0.5).collect();
        out.push(case(
            format!("batchnorm eval {x5:?}"),
            vec![rt(&x5, "x"), rt(&[c], "gamma"), rt(&[c], "beta")],
            move |g, v| {
                let y = g.batchnorm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                weighted_sum(g, y, s)
            },
        ));
        out.push(case(format!("relu {x5:?}"), vec![off_kink(rt(&x5, "x"))], move |g, v| {
            let y = g.relu(v[0])?;
            weighted_sum(g, y, s)
        }));
        out.push(case(format!("leaky_relu {x5:?}"), vec![off_kink(rt(&x5, "x"))], move |g, v| {
            let y = g.leaky_relu(v[0], 0.01)?;
            weighted_sum(g, y, s)
        }));
        out.push(case(format!("sigmoid {x5:?}"), vec![random_tensor(&x5, 4.0, s, "x")], move |g, v| {
            let y = g.sigmoid(v[0])?;
            weighted_sum(g, y, s)
        }));
        out.push(case(format!("softmax_channels {x5:?}"), vec![random_tensor(&x5, 3.0, s, "x")], move |g, v| {
            let y = g.softmax_channels(v[0])?;
            weighted_sum(g, y, s)
        }));
        out.push(case(format!("dropout {x5:?}"), vec![rt(&x5, "x")], move |g, v| {
            let y = g.dropout(v[0], 0.3, true, &mut rng::stream(s, "gradcheck.dropout", 0))?;
            weighted_sum(g, y, s)
        }));
        out.push(case(format!("add/mul {x5:?}"), vec![rt(&x5, "a"), rt(&x5, "b")], move |g, v| {
            let y = g.add(v[0], v[1])?;
            let z = g.mul(y, v[1])?;
            weighted_sum(g, z, s)
        }));
        out.push(case(
            format!("gate_mul {x5:?}"),
            vec![rt(&x5, "x"), rt(&[n, 1, d[0], d[1], d[2]], "alpha")],
            move |g, v| {
                let y = g.gate_mul(v[0], v[1])?;
                weighted_sum(g, y, s)
            },
        ));
        out.push(case(
            format!("concat_channels {x5:?}"),
            vec![rt(&x5, "a"), rt(&[n, 2, d[0], d[1], d[2]], "b")],
            move |g, v| {
                let y = g.concat_channels(v[0], v[1])?;
                weighted_sum(g, y, s)
            },
        ));
        let onehot = random_onehot(n, 4, d, s);
        out.push(case(
            format!("soft_tversky_loss {:?}", [n, 4, d[0], d[1], d[2]]),
            vec![random_tensor(&[n, 4, d[0], d[1], d[2]], 2.0, s, "logits")],
            move |g, v| {
                let p = g.softmax_channels(v[0])?;
                g.soft_tversky_loss(p, &onehot, TverskyWeights::default(), DEFAULT_SMOOTH, ClassReduction::Mean)
            },
        ));
        // attention gate: x at twice g's resolution, F_int = F_g
        let (fx, fg) = (c, 2);
        let gd = [d[0] / 2, d[1] / 2, d[2] / 2];
        out.push(case(
            format!("attention_gate x{x5:?}"),
            vec![
                rt(&x5, "x"),
                rt(&[n, fg, gd[0], gd[1], gd[2]], "g"),
                rt(&[fg, fx, 2, 2, 2], "w_x"),
                rt(&[fg, fg, 1, 1, 1], "w_g"),
                rt(&[fg], "w_g_bias"),
                rt(&[1, fg, 1, 1, 1], "psi"),
                rt(&[1], "psi_bias"),
            ],
            move |g, v| {
                let p = GateVars { w_x: v[2], w_g: v[3], w_g_bias: v[4], psi: v[5], psi_bias: v[6] };
                let out = attention_gate(g, v[0], v[1], &p)?;
                weighted_sum(g, out.gated, s)
            },
        ));
    }
    out
}

/// Seeded one-hot `(N, C, D, H, W)` target.
pub fn random_onehot(n: usize, c: usize, d: [usize; 3], seed: u64) -> Tensor<f64> {
    let sp = d[0] * d[1] * d[2];
    let mut r = rng::stream(seed, "gradcheck.onehot", 0);
    let mut t = Tensor::zeros(&[n, c, d[0], d[1], d[2]]);
    for b in 0..n {
        for v in 0..sp {
            let k = r.random_range(0..c);
            t.values_mut()[(b * c + k) * sp + v] = 1.0;
        }
    }
    t
}

/// Runs [`operator_suite`] and returns `(name, max relative error)` per case.
pub fn run_operator_suite(seed: u64, eps: f64) -> Result<Vec<(String, f64)>> {
    operator_suite(seed)
        .into_iter()
        .map(|c| {
            let r = grad_check(|g, v| (c.build)(g, v), &c.inputs, eps)?;
            Ok((c.name, r.max_rel_error))
        })
        .collect()
}
