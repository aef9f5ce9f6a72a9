use covid_am::image::Image;
use covid_am::model::{self, graph, MergeWeights, ModelParams, ParamVars};
use covid_am::numkernel::{grad_check, Tape, Tensor, Var};
use covid_am::voting::{sha_graph, ShaParams, ShaVars};
use covid_am::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Pixels kept away from zero so relu kinks are not straddled by the probe.
fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::new(size, size, (0..size * size).map(|_| rng.random_range(0.05f32..1.0)).collect()).unwrap()
}

/// Fixed weighting so vector-valued ops reduce to a scalar loss.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let v = tape.value(y)?.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, &[v.len(), 1], -1.0, 1.0);
    let flat = tape.reshape(y, &[1, v.len()])?;
    let wv = tape.constant(w);
    let s = tape.matmul(flat, wv)?;
    tape.reshape(s, &[1])
}

fn check(seed: u64, at: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) {
    let err = grad_check(f, at, H).unwrap();
    assert!(err < TOL, "seed {seed}: relative error {err:e}");
}

#[test]
fn primitive_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[5, 5, 2], -1.0, 1.0);
        let k = random_tensor(&mut rng, &[3, 3, 2, 3], -1.0, 1.0);

        let kc = k.clone();
        check(seed, &x, |t, v| {
            let kv = t.constant(kc.clone());
            let y = t.conv2d(v, kv, 2, 1)?;
            weighted_sum(t, y, seed)
        });
        let xc = x.clone();
        check(seed, &k, |t, v| {
            let xv = t.constant(xc.clone());
            let y = t.conv2d(xv, v, 1, 1)?;
            weighted_sum(t, y, seed)
        });

        let b = random_tensor(&mut rng, &[2], -1.0, 1.0);
        let xc = x.clone();
        check(seed, &b, |t, v| {
            let xv = t.constant(xc.clone());
            let y = t.add_bias(xv, v)?;
            weighted_sum(t, y, seed)
        });

        // relu away from its kink
        let away: Vec<f64> = x.data().iter().map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v }).collect();
        let away = Tensor::new(x.shape(), away).unwrap();
        check(seed, &away, |t, v| {
            let y = t.relu(v)?;
            weighted_sum(t, y, seed)
        });
        check(seed, &x, |t, v| {
            let y = t.sigmoid(v)?;
            weighted_sum(t, y, seed)
        });

        let a = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let m = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let mc = m.clone();
        check(seed, &a, |t, v| {
            let mv = t.constant(mc.clone());
            let y = t.matmul(v, mv)?;
            weighted_sum(t, y, seed)
        });
        let ac = a.clone();
        check(seed, &m, |t, v| {
            let av = t.constant(ac.clone());
            let y = t.matmul(av, v)?;
            weighted_sum(t, y, seed)
        });
        check(seed, &a, |t, v| {
            let y = t.transpose(v)?;
            weighted_sum(t, y, seed)
        });

        let other = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let oc = other.clone();
        check(seed, &a, |t, v| {
            let o = t.constant(oc.clone());
            let s = t.add(v, o)?;
            let p = t.mul(s, v)?;
            let y = t.scale(p, 0.7)?;
            weighted_sum(t, y, seed)
        });

        let row = random_tensor(&mut rng, &[6], -2.0, 2.0);
        check(seed, &row, |t, v| {
            let y = t.softmax(v)?;
            weighted_sum(t, y, seed)
        });
        check(seed, &a, |t, v| {
            let y = t.softmax(v)?;
            weighted_sum(t, y, seed)
        });

        let map = random_tensor(&mut rng, &[5, 5], 0.0, 1.0);
        let mc = map.clone();
        check(seed, &x, |t, v| {
            let mv = t.constant(mc.clone());
            let y = t.spatial_mul(v, mv)?;
            weighted_sum(t, y, seed)
        });
        let xc = x.clone();
        check(seed, &map, |t, v| {
            let xv = t.constant(xc.clone());
            let y = t.spatial_mul(xv, v)?;
            weighted_sum(t, y, seed)
        });
        check(seed, &x, |t, v| {
            let y = t.global_avg_pool(v)?;
            weighted_sum(t, y, seed)
        });

        let r = random_tensor(&mut rng, &[4], -1.0, 1.0);
        let ac = a.clone();
        check(seed, &r, |t, v| {
            let av = t.constant(ac.clone());
            let first = t.row(av, 1)?;
            let stacked = t.stack_rows(&[v, first, v])?;
            let second = t.row(stacked, 2)?;
            let a = weighted_sum(t, second, seed)?;
            let b = weighted_sum(t, v, seed + 1)?;
            t.mean(&[a, b])
        });

        let p = Tensor::scalar(rng.random_range(0.2..0.8));
        let target = f64::from(u8::from(rng.random_bool(0.5)));
        check(seed, &p, |t, v| t.bce(v, target, 1e-7));
    }
}

#[test]
fn bce_gradient_at_half() {
    let err = grad_check(|t, v| t.bce(v, 1.0, 1e-7), &Tensor::scalar(0.5), H).unwrap();
    assert!(err < TOL);
    let mut tape = Tape::new();
    let p = tape.variable(Tensor::scalar(0.5));
    let loss = tape.bce(p, 1.0, 1e-7).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!((g.get(p).unwrap().data()[0] + 2.0).abs() < 1e-12);
}

fn params_for(seed: u64, alpha: f64) -> ModelParams {
    ModelParams::init(seed, MergeWeights::new(alpha).unwrap())
}

#[test]
fn forward_slice_gradients() {
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = params_for(seed, 0.5);
        let input = model::input_tensor(&random_image(&mut rng, 16));
        let r = model::grad_check_forward(&input, &params, H).unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {:e}", r.max_rel_error);
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        skipped += r.skipped_kinks;
    }
    println!("forward_slice: worst {worst:e} over {checked} coordinates, {skipped} kink crossings skipped");
    assert!(skipped * 50 < checked, "too many kink crossings: {skipped} of {checked}");
}

#[test]
fn forward_slice_gradients_small_step() {
    // With a small step almost no probe reaches a kink.
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = params_for(seed, 0.5);
        let input = model::input_tensor(&random_image(&mut rng, 16));
        let r = model::grad_check_forward(&input, &params, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "seed {seed}: {:e}", r.max_rel_error);
    }
}

#[test]
fn forward_slice_input_gradient() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params = params_for(seed, 0.3);
        let input = model::input_tensor(&random_image(&mut rng, 16));
        let err = grad_check(
            |t, v| {
                let vars = ParamVars::record(t, &params, false);
                let (conf, _) = graph::forward(t, v, &vars, params.merge)?;
                Ok(conf)
            },
            &input,
            H,
        )
        .unwrap();
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn alpha_one_zeroes_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = params_for(3, 1.0);
    let input = model::input_tensor(&random_image(&mut rng, 16));
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, &params, true);
    let x = tape.constant(input.clone());
    let (conf, _) = graph::forward(&mut tape, x, &vars, params.merge).unwrap();
    let out = tape.value(conf).unwrap().item().unwrap();
    let grads = tape.backward(conf).unwrap();
    for v in [vars.attention_weight, vars.attention_bias] {
        if let Some(g) = grads.get(v) {
            assert!(g.data().iter().all(|&x| x == 0.0));
        }
    }
    assert!(grads.get(vars.head_weight).unwrap().data().iter().any(|&x| x != 0.0));

    // Output independent of the attention parameters.
    let mut changed = params.clone();
    changed.attention_weight.data_mut().iter_mut().for_each(|w| *w += 3.0);
    changed.attention_bias.data_mut()[0] -= 2.0;
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(3), 16);
    let a = model::forward_slice(&img, &params).unwrap().0.value();
    let b = model::forward_slice(&img, &changed).unwrap().0.value();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&out));
}

#[test]
fn aggregator_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = 4;
        let mut sha = ShaParams::init(width, seed);
        // Non-zero query and head so every path carries gradient.
        for t in [&mut sha.query, &mut sha.head_weight] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let feats: Vec<Tensor> = (0..rng.random_range(1..6))
            .map(|_| random_tensor(&mut rng, &[width], -1.0, 1.0))
            .collect();
        let names = sha.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect::<Vec<_>>();
        for (which, (name, at)) in names.iter().enumerate() {
            let err = grad_check(
                |t, v| {
                    let mut vars = ShaVars::record(t, &sha, false);
                    match which {
                        0 => vars.query = v,
                        1 => vars.key = v,
                        2 => vars.value = v,
                        3 => vars.cls_token = v,
                        4 => vars.head_weight = v,
                        _ => vars.head_bias = v,
                    }
                    let fs: Vec<Var> = feats.iter().map(|f| t.constant(f.clone())).collect();
                    Ok(sha_graph(t, &fs, &vars)?.0)
                },
                at,
                H,
            )
            .unwrap();
            assert!(err < TOL, "seed {seed}, {name}: {err:e}");
        }
    }
}

