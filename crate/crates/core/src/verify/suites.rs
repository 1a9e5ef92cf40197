use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{experiments as exp, oracle, Outcome, VerifyOptions};
use crate::checkpoint;
use crate::data::{synth_dataset, AnnotatedScene, Point};
use crate::error::Result;
use crate::model::{gcm_embed, gcm_transform, Forward, Mode, Pscnet};
use crate::nn::{conv1d_channel, conv2d, BatchNorm, BnMode, Conv2dSpec};
use crate::params::Bindings;
use crate::supervision::{
    bayesian_loss, build_posterior, counting_loss, grid_coordinates, overall_loss, PosteriorSpec,
};
use crate::tensor::{grad_check_many, GradCheckOptions, GradCheckReport, Reduce, Tape, Tensor, Var};
use crate::train::{evaluate, train, EvalReport, TrainConfig};

const OP_TOLERANCE: f64 = 1e-6;
const MODEL_TOLERANCE: f64 = 1e-4;
const GRADIENT_TIME_LIMIT_SECS: f64 = 120.0;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Uniform magnitudes in `[0.1, 1]` with random sign, clear of kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape")
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// `Σ op(inputs) ⊙ r` for a random projection `r` appended as the last input.
fn projected(op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> OpFn {
    Box::new(move |t, v| {
        let (r, rest) = v.split_last().expect("projection input");
        let y = op(t, rest)?;
        let y = t.mul(y, *r)?;
        t.sum_all(y)
    })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Vec<Tensor<f64>>, OpFn)>> {
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = Vec::new();
    let a = rand_t(rng, &[3, 4], -1.0, 1.0);
    let b = rand_t(rng, &[4], -1.0, 1.0);
    let r34 = rand_t(rng, &[3, 4], -1.0, 1.0);
    cases.push(("add", vec![a.clone(), b.clone(), r34.clone()], projected(|t, v| t.add(v[0], v[1]))));
    cases.push(("sub", vec![a.clone(), b.clone(), r34.clone()], projected(|t, v| t.sub(v[0], v[1]))));
    cases.push(("mul", vec![a.clone(), b.clone(), r34.clone()], projected(|t, v| t.mul(v[0], v[1]))));
    let den = rand_t(rng, &[4], 0.5, 2.0);
    cases.push(("div", vec![a.clone(), den, r34.clone()], projected(|t, v| t.div(v[0], v[1]))));
    let k = away_from_zero(rng, &[3, 4]);
    cases.push(("relu", vec![k.clone(), r34.clone()], projected(|t, v| t.relu(v[0]))));
    cases.push(("tanh", vec![a.clone(), r34.clone()], projected(|t, v| t.tanh(v[0]))));
    cases.push(("abs", vec![k, r34.clone()], projected(|t, v| t.abs(v[0]))));
    cases.push(("scale", vec![a.clone(), r34.clone()], projected(|t, v| t.scale(v[0], -1.7))));
    cases.push(("offset", vec![a.clone(), r34.clone()], projected(|t, v| t.offset(v[0], 0.3))));
    let r12 = rand_t(rng, &[12], -1.0, 1.0);
    cases.push(("reshape", vec![a.clone(), r12], projected(|t, v| t.reshape(v[0], vec![12]))));
    let r3 = rand_t(rng, &[3], -1.0, 1.0);
    cases.push((
        "sum",
        vec![a.clone(), r3.clone()],
        projected(|t, v| t.reduce(Reduce::Sum, v[0], &[1], 0.0, false)),
    ));
    cases.push((
        "l2_norm",
        vec![a, r3],
        projected(|t, v| t.reduce(Reduce::L2Norm, v[0], &[1], 1e-4, false)),
    ));

    let spec = Conv2dSpec::new(4, 6, 3).groups(2).dilation(2);
    cases.push((
        "conv2d",
        vec![
            rand_t(rng, &[4, 5, 6], -1.0, 1.0),
            rand_t(rng, &spec.weight_shape(), -1.0, 1.0),
            rand_t(rng, &[6], -1.0, 1.0),
            rand_t(rng, &[6, 5, 6], -1.0, 1.0),
        ],
        projected(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), &spec)),
    ));
    cases.push((
        "conv1d_channel",
        vec![rand_t(rng, &[16], -1.0, 1.0), rand_t(rng, &[3], -1.0, 1.0), rand_t(rng, &[16], -1.0, 1.0)],
        projected(|t, v| t.conv1d_channel(v[0], v[1])),
    ));
    let bn_in = vec![
        rand_t(rng, &[3, 4, 5], -1.0, 1.0),
        rand_t(rng, &[3], 0.5, 1.5),
        rand_t(rng, &[3], -0.5, 0.5),
        rand_t(rng, &[3, 4, 5], -1.0, 1.0),
    ];
    cases.push((
        "batch_norm_train",
        bn_in.clone(),
        projected(|t, v| Ok(t.batch_norm2d(v[0], v[1], v[2], &BatchNorm::new(3), BnMode::Train)?.0)),
    ));
    let (mean, var) = ([0.1, -0.2, 0.3], [0.5, 1.2, 0.9]);
    cases.push((
        "batch_norm_eval",
        bn_in,
        projected(move |t, v| {
            let mode = BnMode::Eval {
                running_mean: &mean,
                running_var: &var,
            };
            Ok(t.batch_norm2d(v[0], v[1], v[2], &BatchNorm::new(3), mode)?.0)
        }),
    ));
    cases.push((
        "adaptive_avg_pool",
        vec![rand_t(rng, &[2, 5, 7], -1.0, 1.0), rand_t(rng, &[2, 3, 2], -1.0, 1.0)],
        projected(|t, v| t.adaptive_avg_pool(v[0], 3, 2)),
    ));
    cases.push((
        "max_pool2",
        vec![rand_t(rng, &[2, 4, 6], -1.0, 1.0), rand_t(rng, &[2, 2, 3], -1.0, 1.0)],
        projected(|t, v| t.max_pool2(v[0])),
    ));
    cases.push((
        "bilinear_resize",
        vec![rand_t(rng, &[2, 4, 6], -1.0, 1.0), rand_t(rng, &[2, 7, 5], -1.0, 1.0)],
        projected(|t, v| t.bilinear_resize(v[0], 7, 5)),
    ));
    cases.push((
        "concat_channels",
        vec![rand_t(rng, &[2, 3, 3], -1.0, 1.0), rand_t(rng, &[1, 3, 3], -1.0, 1.0), rand_t(rng, &[3, 3, 3], -1.0, 1.0)],
        projected(|t, v| t.concat_channels(v[0], v[1])),
    ));
    cases.push((
        "gcm_chain",
        vec![
            rand_t(rng, &[4, 6, 6], -1.0, 1.0),
            rand_t(rng, &[4], 0.5, 1.5),
            rand_t(rng, &[3], -1.0, 1.0),
            rand_t(rng, &[4], -1.0, 1.0),
            rand_t(rng, &[4], -1.0, 1.0),
        ],
        Box::new(|t, v| {
            let s = gcm_embed(t, v[0], v[1], 1e-4)?;
            let st = gcm_transform(t, s, v[2], 1e-4, crate::model::NormScale::SqrtChannels)?;
            let y = crate::model::gcm_gate_apply(t, v[0], st, v[3], v[4], crate::model::GateForm::Residual)?;
            t.sum_all(y)
        }),
    ));
    let points = vec![Point::new(9.0, 13.0), Point::new(30.0, 20.0)];
    let post = build_posterior(&points, &grid_coordinates(6, 6, 8), &PosteriorSpec { sigma: 8.0, margin: Some(7.2) })?;
    cases.push((
        "overall_loss",
        vec![rand_t(rng, &[1, 6, 6], 0.0, 0.05)],
        Box::new(move |t, v| {
            let b = bayesian_loss(t, v[0], &post)?;
            let s = t.sum_all(v[0])?;
            let c = counting_loss(t, s, 2.0)?;
            overall_loss(t, b, c, 0.1)
        }),
    ));
    Ok(cases)
}

fn full_model_check(opts: &VerifyOptions) -> Result<GradCheckReport> {
    let model = Pscnet::new(opts.model_config());
    let mut params = model.init_params::<f64>(4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for name in ["gcm.gate_weight", "gcm.gate_bias"] {
        let t = params.get_mut(name)?;
        *t = Tensor::uniform(t.shape().to_vec(), -0.5, 0.5, &mut rng).with_requires_grad(true);
    }
    let image = Tensor::<f64>::uniform(vec![3, 32, 32], 0.0, 1.0, &mut rng);
    let points = [Point::new(5.0, 7.0), Point::new(20.5, 24.0)];
    let spec = PosteriorSpec { sigma: 8.0, margin: Some(4.8) };
    let posterior = build_posterior(&points, &grid_coordinates(4, 4, 8), &spec)?;
    let mut inputs: Vec<(String, Tensor<f64>)> = params
        .iter()
        .filter(|(_, t)| t.requires_grad())
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    inputs.push(("image".into(), image));
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
    grad_check_many(
        |tape, vars| {
            let n = vars.len() - 1;
            let b = Bindings::from_pairs(names[..n].iter().cloned().zip(vars[..n].iter().copied()));
            let mut f = Forward::with_bindings(tape, &params, b, Mode::Train);
            let d = model.forward(&mut f, vars[n])?;
            let tape = f.tape();
            let bayes = bayesian_loss(tape, d, &posterior)?;
            let s = tape.sum_all(d)?;
            let c = counting_loss(tape, s, 2.0)?;
            overall_loss(tape, bayes, c, 0.1)
        },
        &inputs,
        GradCheckOptions {
            step: 1e-6,
            max_per_input: Some(3),
            seed: 2,
        },
    )
}

pub(super) fn gradients(opts: &VerifyOptions) -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_op = ("", 0.0f64);
    let mut failures = Vec::new();
    let cases = op_cases(&mut rng)?;
    let n_ops = cases.len();
    for (name, tensors, f) in cases {
        let inputs: Vec<(String, Tensor<f64>)> =
            tensors.into_iter().enumerate().map(|(i, t)| (format!("in{i}"), t)).collect();
        let r = grad_check_many(f, &inputs, GradCheckOptions::exhaustive(1e-5))?;
        if r.max_rel_error > worst_op.1 {
            worst_op = (name, r.max_rel_error);
        }
        if r.max_rel_error >= OP_TOLERANCE {
            failures.push(format!("{name} {:.2e}", r.max_rel_error));
        }
    }
    let model = full_model_check(opts)?;
    let secs = start.elapsed().as_secs_f64();
    let passed = failures.is_empty() && model.max_rel_error < MODEL_TOLERANCE && secs < GRADIENT_TIME_LIMIT_SECS;
    let mut detail = format!(
        "{n_ops} ops worst {} {:.2e} (< {OP_TOLERANCE:.0e}); toy model {} components max rel {:.2e} (< {MODEL_TOLERANCE:.0e}); {secs:.1}s (< {GRADIENT_TIME_LIMIT_SECS}s)",
        worst_op.0, worst_op.1, model.checked, model.max_rel_error
    );
    if !failures.is_empty() {
        detail += &format!("; failing: {}", failures.join(", "));
    }
    if let Some((name, i)) = &model.worst {
        if model.max_rel_error >= MODEL_TOLERANCE {
            detail += &format!("; worst {name}[{i}] analytic {:.6e} numeric {:.6e}", model.analytic, model.numeric);
        }
    }
    Ok(Outcome::new(passed, detail))
}

pub(super) fn bayesian_oracle(_: &VerifyOptions) -> Result<Outcome> {
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut post_err, mut loss_err, mut row_err, mut mass_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for case in 0..50 {
        let n = rng.gen_range(0..=5);
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let sigma = [2.0, 8.0, 32.0][case % 3];
        let background = (case / 3) % 2 == 0;
        let (ih, iw) = (8.0 * h as f64, 8.0 * w as f64);
        let points: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.0..iw), rng.gen_range(0.0..ih))).collect();
        let grid = grid_coordinates(h, w, 8);
        let margin = background.then(|| 0.15 * ih.min(iw));
        let p = build_posterior(&points, &grid, &PosteriorSpec { sigma, margin })?;
        let o = oracle::posterior(&points, &grid, sigma, margin);
        for (m, row) in o.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                post_err = post_err.max((p.get(m, k) - v).abs());
            }
            row_err = row_err.max((p.row(m).iter().sum::<f64>() - 1.0).abs());
        }
        let d = Tensor::<f64>::uniform(vec![1, h, w], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let dv = tape.constant(d.clone())?;
        let l = bayesian_loss(&mut tape, dv, &p)?;
        let expect = oracle::bayesian_loss(d.data(), &o, background || n == 0);
        loss_err = loss_err.max((tape.value(l).data()[0] - expect).abs());
        let e: f64 = oracle::expected_counts(d.data(), &o).iter().sum();
        mass_err = mass_err.max((e - d.sum()).abs());
    }
    let passed = post_err < TOL && loss_err < TOL && row_err < TOL && mass_err < TOL;
    Ok(Outcome::new(
        passed,
        format!(
            "50 cases: posterior max dev {post_err:.1e}, loss max dev {loss_err:.1e}, row-sum dev {row_err:.1e}, mass dev {mass_err:.1e} (all < {TOL:.0e})"
        ),
    ))
}

pub(super) fn gcm_identities(opts: &VerifyOptions) -> Result<Outcome> {
    let config = opts.model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    // (a) zero-initialised gate leaves the network identical to the ablation
    let with = Pscnet::new(config.clone());
    let without = Pscnet::new(crate::model::PscnetConfig {
        use_gcm: false,
        ..config.clone()
    });
    let params = with.init_params::<f32>(5)?;
    let image = Tensor::<f32>::uniform(vec![3, 64, 64], 0.0, 1.0, &mut rng);
    let a = with.predict(&params, &image)?;
    let b = without.predict(&params, &image)?;
    let train_mode = |m: &Pscnet| -> Result<Vec<u32>> {
        let mut tape = Tape::new();
        let (d, _) = m.forward_train(&mut tape, &params, &image)?;
        Ok(tape.value(d).data().iter().map(|v| v.to_bits()).collect())
    };
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a) == bits(&b) && train_mode(&with)? == train_mode(&without)?;

    // (b) Σ s̃² = C·S/(S+ε) with S = Σ ŝ²
    let eps = config.gcm.epsilon;
    let mut norm_dev = 0.0f64;
    for &c in &[8usize, 64, config.gcm.channels] {
        let s = Tensor::<f64>::uniform(vec![c], 0.0, 3.0, &mut rng);
        let k = Tensor::<f64>::uniform(vec![3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let sv = tape.constant(s.clone())?;
        let kv = tape.constant(k.clone())?;
        let st = gcm_transform(&mut tape, sv, kv, eps, config.gcm.norm_scale)?;
        let lhs: f64 = tape.value(st).data().iter().map(|v| v * v).sum();
        let s_hat = oracle::sliding_conv1d(s.data(), k.data());
        let big_s: f64 = s_hat.iter().map(|v| v * v).sum();
        norm_dev = norm_dev.max((lhs - c as f64 * big_s / (big_s + eps)).abs());
    }

    // (c) embedding against the loop form
    let mut embed_dev = 0.0f64;
    for _ in 0..5 {
        let x = Tensor::<f64>::uniform(vec![6, 5, 7], -1.0, 1.0, &mut rng);
        let alpha = Tensor::<f64>::uniform(vec![6], 0.5, 1.5, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let av = tape.constant(alpha.clone())?;
        let s = gcm_embed(&mut tape, xv, av, eps)?;
        let o = oracle::context_embedding(x.data(), 6, 35, alpha.data(), eps);
        for (u, v) in tape.value(s).data().iter().zip(&o) {
            embed_dev = embed_dev.max((u - v).abs());
        }
    }
    let passed = identical && norm_dev < 1e-6 && embed_dev < 1e-7;
    Ok(Outcome::new(
        passed,
        format!(
            "zero gate vs ablated bit-identical: {identical}; Σs̃² dev {norm_dev:.1e} (< 1e-6); embedding dev {embed_dev:.1e} (< 1e-7)"
        ),
    ))
}

pub(super) fn conv_oracles(_: &VerifyOptions) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut grouped, mut dense) = (0.0f64, 0.0f64);
    for &(c, o, k, g, dil) in &[
        (4usize, 4usize, 3usize, 1usize, 1usize),
        (6, 3, 5, 1, 2),
        (8, 8, 3, 2, 1),
        (8, 16, 5, 4, 1),
        (16, 16, 7, 8, 1),
        (16, 8, 9, 4, 2),
        (4, 4, 1, 4, 1),
    ] {
        let (h, w) = (rng.gen_range(3..9), rng.gen_range(3..9));
        let spec = Conv2dSpec::new(c, o, k).groups(g).dilation(dil);
        let x = Tensor::<f64>::uniform(vec![c, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(vec![o], -1.0, 1.0, &mut rng);
        let y = conv2d(&x, &wt, Some(&b), &spec)?;
        let r = oracle::grouped_conv(x.data(), c, h, w, wt.data(), o, k, g, dil, Some(b.data()));
        let dev = y.data().iter().zip(&r).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        if g == 1 {
            let dr = oracle::dense_conv(x.data(), c, h, w, wt.data(), o, k, dil, Some(b.data()));
            let dd = y.data().iter().zip(&dr).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            dense = dense.max(dd);
        } else {
            grouped = grouped.max(dev);
        }
    }
    let mut c1 = 0.0f64;
    for &c in &[1usize, 2, 5, 16, 128] {
        let s: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = conv1d_channel(&s, &k)?;
        let r = oracle::sliding_conv1d(&s, &k);
        c1 = c1.max(y.iter().zip(&r).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
    }
    let passed = grouped < 1e-6 && dense < 1e-6 && c1 < 1e-7;
    Ok(Outcome::new(
        passed,
        format!("grouped dev {grouped:.1e} (< 1e-6); G=1 dense dev {dense:.1e} (< 1e-6); conv1d k=3 dev {c1:.1e} (< 1e-7)"),
    ))
}

pub(super) fn shape_law(opts: &VerifyOptions) -> Result<Outcome> {
    let model = Pscnet::new(opts.model_config());
    let params = model.init_params::<f32>(6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut bad = Vec::new();
    for &h in &[64usize, 128, 256] {
        for &w in &[64usize, 128, 256] {
            let image = Tensor::<f32>::uniform(vec![3, h, w], 0.0, 1.0, &mut rng);
            let d = model.predict(&params, &image)?;
            if d.shape() != [1, h / 8, w / 8] || d.data().iter().any(|&v| v < 0.0) {
                bad.push(format!("{h}x{w} -> {:?}", d.shape()));
            }
        }
    }
    Ok(Outcome::new(
        bad.is_empty(),
        if bad.is_empty() {
            "9 input sizes give (H/8)x(W/8) nonnegative densities".to_string()
        } else {
            format!("violations: {}", bad.join(", "))
        },
    ))
}

pub(super) fn metrics(_: &VerifyOptions) -> Result<Outcome> {
    let r = EvalReport::from_counts(&[10.0, 20.0], &[12.0, 16.0])?;
    let fixture = (r.mae - 3.0).abs() < 1e-4 && (r.rmse - 3.1623).abs() < 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut jensen = 0;
    let mut oracle_dev = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(1..50);
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..300.0)).collect();
        let a: Vec<f64> = (0..k).map(|_| rng.gen_range(0..300) as f64).collect();
        let rep = EvalReport::from_counts(&p, &a)?;
        jensen += (rep.mae <= rep.rmse) as usize;
        let (m, s) = oracle::mae_rmse(&p, &a);
        oracle_dev = oracle_dev.max((m - rep.mae).abs()).max((s - rep.rmse).abs());
    }
    let passed = fixture && jensen == 100 && oracle_dev < 1e-9;
    Ok(Outcome::new(
        passed,
        format!(
            "fixture MAE {:.4} RMSE {:.4} (expect 3.0000 3.1623); MAE <= RMSE on {jensen}/100; oracle dev {oracle_dev:.1e}",
            r.mae, r.rmse
        ),
    ))
}

pub(super) fn overfit(opts: &VerifyOptions) -> Result<Outcome> {
    let start = Instant::now();
    let scenes = synth_dataset(&exp::overfit_data())?;
    let model = Pscnet::new(opts.model_config());
    let cfg = exp::overfit_train();
    let out = train(&model, &scenes, &cfg)?;
    let report = evaluate(&model, &out.last, &scenes, cfg.max_shorter_side)?;
    let secs = start.elapsed().as_secs_f64();
    let passed = report.mae < exp::OVERFIT_MAE_BOUND && secs < exp::OVERFIT_TIME_LIMIT_SECS;
    Ok(Outcome::new(
        passed,
        format!(
            "{} steps: training MAE {:.4} RMSE {:.4} (expect MAE < {}); {secs:.0}s (< {}s)",
            out.losses.len(),
            report.mae,
            report.rmse,
            exp::OVERFIT_MAE_BOUND,
            exp::OVERFIT_TIME_LIMIT_SECS
        ),
    ))
}

pub(super) fn generalization(opts: &VerifyOptions) -> Result<Outcome> {
    let scenes = synth_dataset(&exp::generalization_data())?;
    let (train_set, test_set) = scenes.split_at(exp::GENERALIZATION_TRAIN);
    let model = Pscnet::new(opts.model_config());
    let cfg = exp::generalization_train();
    let out = train(&model, train_set, &cfg)?;
    let report = evaluate(&model, &out.best, test_set, cfg.max_shorter_side)?;
    let counts: Vec<f64> = test_set.iter().map(|s| s.count() as f64).collect();
    let baseline = oracle::constant_mean_mae(&counts);
    Ok(Outcome::new(
        report.mae < baseline,
        format!(
            "held-out MAE {:.4} vs constant-mean baseline {:.4} (best step {})",
            report.mae, baseline, out.best_step
        ),
    ))
}

fn parse_field(line: &str, key: &str) -> Option<f64> {
    line.split(' ').find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

pub(super) fn lambda_ablation(opts: &VerifyOptions) -> Result<Outcome> {
    let scenes = synth_dataset(&exp::short_data())?;
    let model = Pscnet::new(opts.model_config());
    let mut runs = Vec::new();
    let mut consistent = true;
    for &lambda in &exp::LAMBDA_GRID {
        let mut cfg = exp::short_train();
        cfg.supervision.lambda = lambda;
        let out = train(&model, &scenes, &cfg)?;
        for line in &out.log {
            let (b, c, t) = (
                parse_field(line, "bayes"),
                parse_field(line, "count"),
                parse_field(line, "total"),
            );
            match (b, c, t) {
                (Some(b), Some(c), Some(t)) => consistent &= (b + lambda * c - t).abs() <= 1e-5 * (1.0 + t.abs()),
                _ => consistent = false,
            }
        }
        runs.push(out.log);
    }
    let distinct = runs[0] != runs[1] && runs[1] != runs[2] && runs[0] != runs[2];
    let steps: Vec<usize> = runs.iter().map(|r| r.len()).collect();
    Ok(Outcome::new(
        consistent && distinct,
        format!(
            "lambda {:?} ran {steps:?} steps; total = bayes + lambda*count in every line: {consistent}; logs pairwise distinct: {distinct}",
            exp::LAMBDA_GRID
        ),
    ))
}

fn seeded_run(model: &Pscnet, scenes: &[AnnotatedScene], cfg: &TrainConfig) -> Result<(Vec<u8>, Vec<u8>, Vec<String>)> {
    let out = train(model, scenes, cfg)?;
    Ok((checkpoint::encode(&out.best)?, checkpoint::encode(&out.last)?, out.log))
}

pub(super) fn determinism(opts: &VerifyOptions) -> Result<Outcome> {
    let scenes = synth_dataset(&exp::short_data())?;
    let model = Pscnet::new(opts.model_config());
    let cfg = exp::short_train();
    let first = seeded_run(&model, &scenes, &cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .map_err(|e| crate::Error::invalid("determinism", e.to_string()))?;
    let second = pool.install(|| seeded_run(&model, &scenes, &cfg))?;
    let same_ckpt = first.0 == second.0 && first.1 == second.1;
    let same_log = first.2 == second.2;
    Ok(Outcome::new(
        same_ckpt && same_log,
        format!(
            "two seeded runs (default pool, then 3 threads): checkpoints byte-identical {same_ckpt} ({} bytes), logs identical {same_log} ({} lines)",
            first.1.len(),
            first.2.len()
        ),
    ))
}

