//! End-to-end acceptance suite. Prints one `[PRIMARY]` PASS/FAIL line per
//! criterion and fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svnet::autodiff::{finite_difference_check_many, relative_error, Graph, NormStats, ParamKind, PoolMode, Var};
use svnet::binkernel::{
    binary_linear_full, binary_linear_full_unpacked, bitpack, bitpack_columns, naive_sign_gemm, ste_backward,
    xnor_popcount_gemm, STE_CLIP,
};
use svnet::geometry::{
    apply_rotation, extract_initial_features, knn_graph, random_rotation, rotate_vectors, signed_permutation_rotation,
    PointCloud, SVFeature,
};
use svnet::netbuild::{
    build_model, count_model_ops, load_checkpoint, save_checkpoint, BinarizeScheme, Config, Model, ModelConfig,
    Prepared, TrainConfig,
};
use svnet::svcore::{
    aggregate, coordinate_frame, equivariant_norm, invariant_head, invariant_projection, regroup_edges,
    svblock_forward, vector_mapping, LinearParams, NormParams, SVBlockParams, StatsMode, Toggles,
};
use svnet::tensor::Tensor;
use svnet::train::{train_model, Dataset, RotMode, Split, TrainOptions};

type Check = Result<String, String>;

fn svnet_bin() -> &'static str {
    env!("CARGO_BIN_EXE_svnet")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(args: &[&str]) -> Result<(String, Duration), String> {
    let start = Instant::now();
    let out = Command::new(svnet_bin())
        .args(args)
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!(
            "svnet {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok((String::from_utf8_lossy(&out.stdout).into_owned(), elapsed))
}

/// Value of `key=...` on the first line containing all of `filters`.
fn field(text: &str, filters: &[&str], key: &str) -> Option<String> {
    let line = text.lines().find(|l| filters.iter().all(|f| l.contains(f)))?;
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .map(str::to_string)
}

fn num(text: &str, filters: &[&str], key: &str) -> Result<f64, String> {
    field(text, filters, key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no {key} in output for {filters:?}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect(),
        None,
    )
    .unwrap()
}

fn rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b) / a.max_abs().max(1.0)
}

fn small_model(backbone: &str, binarize: BinarizeScheme) -> ModelConfig {
    ModelConfig {
        backbone: backbone.into(),
        k: 6,
        channels: vec![12, 24],
        global_dim: 16,
        binarize,
        ..ModelConfig::default()
    }
}

fn criterion_1() -> Check {
    let (out, elapsed) = cli(&["count-ops", "--table1"])?;
    let near = |v: f64, target: f64| (v / 1e6 - target).abs() <= 0.1;
    let vanilla = num(&out, &["table1 mode=vanilla macs="], "macs")?;
    let fp = num(&out, &["table1 mode=sv_fp macs="], "macs")?;
    let bm = num(&out, &["table1 mode=sv_binary macs="], "macs")?;
    let ba = num(&out, &["table1 mode=sv_binary macs="], "adds")?;
    let bb = num(&out, &["table1 mode=sv_binary macs="], "bops")?;
    let half = num(&out, &["mode=sv_binary", "term=scalar_update"], "bops")?;
    ensure(near(vanilla, 67.1), || format!("vanilla {vanilla} MACs"))?;
    ensure(near(fp, 39.9), || format!("sv_fp {fp} MACs"))?;
    ensure(near(bm, 0.4) && near(ba, 6.0) && near(bb, 33.6), || {
        format!("sv_binary {bm} MACs {ba} ADDs {bb} BOPs")
    })?;
    ensure(half == 33_554_432.0, || format!("scalar-update BOPs {half}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "vanilla={:.1}M sv_fp={:.1}M sv_binary={:.1}M/{:.1}M/{:.1}M half_term={half} in {:.0?}",
        vanilla / 1e6,
        fp / 1e6,
        bm / 1e6,
        ba / 1e6,
        bb / 1e6,
        elapsed
    ))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_op = 0.0f64;
    let track = |name: &str, d: f64, worst: &mut f64| -> Result<(), String> {
        *worst = worst.max(d);
        ensure(d <= 1e-11, || format!("{name}: deviation {d:e}"))
    };
    let toggles = [
        Toggles::default(),
        Toggles {
            scalar_concat: false,
            vector_reweight: true,
        },
        Toggles {
            scalar_concat: true,
            vector_reweight: false,
        },
    ];
    for t in 0..100u64 {
        let rot = random_rotation(1000 + t);
        let n = 12;
        let v = random_tensor(&mut rng, 4, 3 * n);
        let rv = rotate_vectors(&v, &rot);
        let map = LinearParams::full(random_tensor(&mut rng, 4, 5));
        let d = rel_diff(&rotate_vectors(&vector_mapping(&v, &map).unwrap(), &rot), &vector_mapping(&rv, &map).unwrap());
        track("vector_mapping", d, &mut worst_op)?;
        let bmap = map.clone().into_binary_weight();
        let d = rel_diff(
            &rotate_vectors(&vector_mapping(&v, &bmap).unwrap(), &rot),
            &vector_mapping(&rv, &bmap).unwrap(),
        );
        track("vector_mapping binary_weight", d, &mut worst_op)?;
        let fparams = LinearParams::full(random_tensor(&mut rng, 4, 3));
        let frame = coordinate_frame(&v, &fparams).unwrap();
        let rframe = coordinate_frame(&rv, &fparams).unwrap();
        track("coordinate_frame", rel_diff(&rotate_vectors(&frame, &rot), &rframe), &mut worst_op)?;
        let proj = invariant_projection(&frame, &v).unwrap();
        track(
            "invariant_projection",
            rel_diff(&proj, &invariant_projection(&rframe, &rv).unwrap()),
            &mut worst_op,
        )?;
        let s = random_tensor(&mut rng, 3, n);
        let x = SVFeature::new(s.clone(), v.clone()).unwrap();
        let rx = x.rotated(&rot);
        let agg = aggregate(&x, 3, PoolMode::Max).unwrap();
        let ragg = aggregate(&rx, 3, PoolMode::Max).unwrap();
        track("aggregate", rel_diff(&agg.rotated(&rot).vectors, &ragg.vectors), &mut worst_op)?;
        track("aggregate scalars", rel_diff(&agg.scalars, &ragg.scalars), &mut worst_op)?;
        let mut norm = NormParams::new(3, 4);
        let y = equivariant_norm(&x, StatsMode::Train, &mut norm.clone()).unwrap();
        let ry = equivariant_norm(&rx, StatsMode::Train, &mut norm).unwrap();
        track("equivariant_norm", rel_diff(&y.rotated(&rot).vectors, &ry.vectors), &mut worst_op)?;
        track("equivariant_norm scalars", rel_diff(&y.scalars, &ry.scalars), &mut worst_op)?;
        let tg = toggles[t as usize % 3];
        let block = SVBlockParams::random((3, 4), (5, 2), tg, true, &mut rng).unwrap();
        let y = svblock_forward(&x, &block).unwrap();
        let ry = svblock_forward(&rx, &block).unwrap();
        track("svblock_forward", rel_diff(&y.rotated(&rot).vectors, &ry.vectors), &mut worst_op)?;
        track("svblock_forward scalars", rel_diff(&y.scalars, &ry.scalars), &mut worst_op)?;
        let head = LinearParams::full(random_tensor(&mut rng, 4, 3));
        track(
            "invariant_head",
            rel_diff(&invariant_head(&x, &head).unwrap(), &invariant_head(&rx, &head).unwrap()),
            &mut worst_op,
        )?;
        let cloud = random_cloud(&mut rng, 10);
        let graph = knn_graph(&cloud, 3).unwrap();
        let rcloud = apply_rotation(&cloud, &rot);
        let ef = LinearParams::full(random_tensor(&mut rng, 2, 3));
        let e = extract_initial_features(&cloud, &graph, &ef).unwrap();
        let re = extract_initial_features(&rcloud, &knn_graph(&rcloud, 3).unwrap(), &ef).unwrap();
        track("extract vectors", rel_diff(&e.rotated(&rot).vectors, &re.vectors), &mut worst_op)?;
        track("extract scalars", rel_diff(&e.scalars, &re.scalars), &mut worst_op)?;
        let nodes = SVFeature::new(random_tensor(&mut rng, 2, 10), random_tensor(&mut rng, 2, 30)).unwrap();
        let r = regroup_edges(&nodes, &graph).unwrap();
        let rr = regroup_edges(&nodes.rotated(&rot), &graph).unwrap();
        track("regroup_edges", rel_diff(&r.rotated(&rot).vectors, &rr.vectors), &mut worst_op)?;
    }
    let mut worst_model = 0.0f64;
    for backbone in ["pointnet_like", "dgcnn_like"] {
        let m = build_model(&small_model(backbone, BinarizeScheme::None), 21).unwrap();
        let clouds: Vec<PointCloud> = (0..2).map(|_| random_cloud(&mut rng, 32)).collect();
        let base = m.logits(&clouds).unwrap();
        for t in 0..100 {
            let rot = random_rotation(2000 + t);
            let rc: Vec<PointCloud> = clouds.iter().map(|c| apply_rotation(c, &rot)).collect();
            let d = rel_diff(&base, &m.logits(&rc).unwrap());
            worst_model = worst_model.max(d);
            ensure(d <= 1e-10, || format!("{backbone} logits deviate by {d:e}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "per-op max {worst_op:.1e} (≤1e-11), models max {worst_model:.1e} (≤1e-10), 100 rotations, {:.1?}",
        elapsed
    ))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut summary = Vec::new();
    for backbone in ["pointnet_like", "dgcnn_like"] {
        for scheme in [BinarizeScheme::None, BinarizeScheme::Vanilla] {
            let mut m = build_model(&small_model(backbone, scheme), 31).unwrap();
            perturb_buffers(&mut m, &mut rng);
            let clouds: Vec<PointCloud> = (0..2).map(|_| random_cloud(&mut rng, 24)).collect();
            let base = m.logits(&clouds).unwrap();
            let mut same = 0;
            for i in 0..24 {
                let rot = signed_permutation_rotation(i).unwrap();
                let rc: Vec<PointCloud> = clouds.iter().map(|c| apply_rotation(c, &rot)).collect();
                if m.logits(&rc).unwrap().bit_eq(&base) {
                    same += 1;
                }
            }
            ensure(same == 24, || format!("{backbone} {scheme:?}: {same}/24"))?;
            summary.push(format!("{backbone}/{scheme:?} 24/24"));
        }
    }
    Ok(summary.join(", "))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let signs = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::from_vec(
            r,
            c,
            (0..r * c).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        )
        .unwrap()
    };
    let mut odd = 0;
    for i in 0..10_000 {
        let m = rng.random_range(1..6);
        let p = rng.random_range(1..6);
        // every third instance straddles word boundaries
        let n = if i % 3 == 0 { [63, 64, 65, 127, 129, 200][i / 3 % 6] } else { rng.random_range(1..80) };
        if n % 64 != 0 {
            odd += 1;
        }
        let a = signs(&mut rng, m, n);
        let b = signs(&mut rng, n, p);
        let fast = xnor_popcount_gemm(&bitpack(&a).unwrap(), &bitpack_columns(&b).unwrap()).unwrap();
        let slow = naive_sign_gemm(&a, &b).unwrap();
        ensure(fast == slow, || format!("instance {i} ({m}x{n}x{p}) differs"))?;
    }
    for i in 0..500 {
        let (din, dout, cols) = (rng.random_range(1..140), rng.random_range(1..9), rng.random_range(1..7));
        let mut params = LinearParams::full(random_tensor(&mut rng, din, dout))
            .with_bias(random_tensor(&mut rng, dout, 1).into_data())
            .into_binary_full();
        params.beta = Some(random_tensor(&mut rng, din, 1).into_data());
        params.gamma = Some(random_tensor(&mut rng, dout, 1).into_data());
        let x = random_tensor(&mut rng, din, cols);
        let packed = binary_linear_full(&x, &params).unwrap();
        let dense = binary_linear_full_unpacked(&x, &params).unwrap();
        ensure(packed.bit_eq(&dense), || format!("binary_linear_full instance {i} differs"))?;
    }
    Ok(format!(
        "10000/10000 GEMM instances exact ({odd} with non-word-multiple inner dim), 500/500 binary_linear_full exact"
    ))
}

/// Largest relative error between tape and central-difference gradients of
/// the training loss over every trainable parameter of `model`.
fn model_gradient_error(model: &Model, batch: &[&Prepared], labels: &[usize], h: f64) -> f64 {
    let loss_of = |m: &Model| -> (f64, Option<std::collections::BTreeMap<String, Tensor>>) {
        let mut g = Graph::new();
        let logits = m.forward(&mut g, batch, true, &mut Vec::new()).unwrap();
        let loss = g.cross_entropy(logits, labels).unwrap();
        (g.value(loss)[(0, 0)], Some(g.backward(loss).unwrap().into_params()))
    };
    let (_, grads) = loss_of(model);
    let grads = grads.unwrap();
    let names: Vec<String> = model
        .store
        .iter()
        .filter(|(_, _, k)| *k == ParamKind::Trainable)
        .map(|(n, _, _)| n.to_string())
        .collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for name in names {
        let orig = model.store.get(&name).unwrap().clone();
        let zero = Tensor::zeros(orig.rows(), orig.cols());
        let analytic = grads.get(&name).unwrap_or(&zero);
        for idx in 0..orig.len() {
            let mut t = orig.clone();
            let (hi, lo) = (orig.data()[idx] + h, orig.data()[idx] - h);
            t.data_mut()[idx] = hi;
            probe.store.set(&name, t.clone()).unwrap();
            let plus = loss_of(&probe).0;
            t.data_mut()[idx] = lo;
            probe.store.set(&name, t).unwrap();
            let minus = loss_of(&probe).0;
            worst = worst.max(relative_error(analytic.data()[idx], (plus - minus) / (hi - lo)));
        }
        probe.store.set(&name, orig).unwrap();
    }
    worst
}

fn criterion_5() -> Check {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    type Prim = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> svnet::Result<Var>>);
    let weights = |rng: &mut ChaCha8Rng, r, c| random_tensor(rng, r, c);
    let w_lin = weights(&mut rng, 3, 5);
    let w_act = weights(&mut rng, 3, 5);
    let w_cat = weights(&mut rng, 5, 4);
    let w_pool = weights(&mut rng, 3, 2);
    let w_vpool = weights(&mut rng, 2, 6);
    let w_seg = weights(&mut rng, 2, 12);
    let w_proj = weights(&mut rng, 6, 4);
    let w_gather = weights(&mut rng, 2, 5);
    let w_bn = weights(&mut rng, 3, 6);
    let w_vn = weights(&mut rng, 2, 12);
    let eval_mean = [0.2, -0.1, 0.3];
    let eval_var = [0.9, 1.4, 0.6];
    let prims: Vec<Prim> = vec![
        ("linear", vec![random_tensor(&mut rng, 4, 3), random_tensor(&mut rng, 4, 5), random_tensor(&mut rng, 3, 1)], {
            let w = w_lin.clone();
            Box::new(move |g, v| {
                let y = g.linear(v[1], v[0], Some(v[2]))?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("sigmoid", vec![random_tensor(&mut rng, 3, 5)], {
            let w = w_act.clone();
            Box::new(move |g, v| {
                let y = g.sigmoid(v[0]);
                g.weighted_sum(y, w.clone())
            })
        }),
        ("relu", vec![random_tensor(&mut rng, 3, 5).map(|x| if x.abs() < 0.05 { x + 0.1 } else { x })], {
            let w = w_act.clone();
            Box::new(move |g, v| {
                let y = g.relu(v[0]);
                g.weighted_sum(y, w.clone())
            })
        }),
        ("add/sub/concat", vec![random_tensor(&mut rng, 2, 4), random_tensor(&mut rng, 2, 4), random_tensor(&mut rng, 1, 4)], {
            let w = w_cat.clone();
            Box::new(move |g, v| {
                let a = g.add(v[0], v[1])?;
                let s = g.sub(a, v[1])?;
                let s = g.add(s, v[0])?;
                let y = g.concat_rows(&[s, v[2], a])?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("pool max/mean", vec![random_tensor(&mut rng, 3, 8)], {
            let w = w_pool.clone();
            Box::new(move |g, v| {
                let a = g.pool(v[0], 4, 1, PoolMode::Max)?;
                let b = g.pool(v[0], 4, 1, PoolMode::Mean)?;
                let y = g.add(a, b)?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("pool vectors", vec![random_tensor(&mut rng, 2, 12)], {
            let w = w_vpool.clone();
            Box::new(move |g, v| {
                let y = g.pool(v[0], 2, 3, PoolMode::Mean)?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("scale_segments", vec![random_tensor(&mut rng, 2, 12), random_tensor(&mut rng, 2, 2)], {
            let w = w_seg.clone();
            Box::new(move |g, v| {
                let y = g.scale_segments(v[0], v[1], 6)?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("project", vec![random_tensor(&mut rng, 3, 12), random_tensor(&mut rng, 2, 12)], {
            let w = w_proj.clone();
            Box::new(move |g, v| {
                let y = g.project(v[0], v[1])?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("gather", vec![random_tensor(&mut rng, 2, 4)], {
            let w = w_gather.clone();
            Box::new(move |g, v| {
                let y = g.gather(v[0], vec![3, 0, 0, 2, 1], 1)?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("batch_norm", vec![random_tensor(&mut rng, 3, 6), random_tensor(&mut rng, 3, 1), random_tensor(&mut rng, 3, 1)], {
            let w = w_bn.clone();
            Box::new(move |g, v| {
                let a = g.batch_norm(v[0], v[1], v[2], NormStats::Batch)?;
                let b = g.batch_norm(
                    v[0],
                    v[1],
                    v[2],
                    NormStats::Running {
                        mean: &eval_mean,
                        var: &eval_var,
                    },
                )?;
                let y = g.add(a, b)?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("vector_norm", vec![random_tensor(&mut rng, 2, 12), random_tensor(&mut rng, 2, 1)], {
            let w = w_vn.clone();
            Box::new(move |g, v| {
                let a = g.vector_norm(v[0], v[1], None)?;
                let b = g.vector_norm(v[0], v[1], Some(&[0.7, 1.3]))?;
                let y = g.add(a, b)?;
                g.weighted_sum(y, w.clone())
            })
        }),
        ("cross_entropy", vec![random_tensor(&mut rng, 4, 3)], Box::new(|g, v| g.cross_entropy(v[0], &[0, 3, 1]))),
    ];
    let mut worst = 0.0f64;
    for (name, inputs, f) in &prims {
        let e = finite_difference_check_many(f, inputs, h).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(e);
        ensure(e <= 1e-4, || format!("{name}: relative error {e:e}"))?;
    }

    let cfg = ModelConfig {
        backbone: "pointnet_like".into(),
        k: 4,
        channels: vec![9, 12],
        global_dim: 8,
        classes: 3,
        ..ModelConfig::default()
    };
    let model = build_model(&cfg, 51).unwrap();
    let clouds: Vec<Prepared> = (0..3).map(|_| model.prepare(random_cloud(&mut rng, 10)).unwrap()).collect();
    let refs: Vec<&Prepared> = clouds.iter().collect();
    let net = model_gradient_error(&model, &refs, &[0, 2, 1], h);
    ensure(net <= 1e-4, || format!("2-block network: relative error {net:e}"))?;

    let grid: Vec<f64> = (0..=4000).map(|i| -2.0 + i as f64 * 1e-3).collect();
    let x = Tensor::from_vec(1, grid.len(), grid.clone()).unwrap();
    let up = Tensor::from_vec(1, grid.len(), grid.iter().map(|v| 1.0 + v * v).collect()).unwrap();
    let ste = ste_backward(&up, &x).unwrap();
    let mut g = Graph::new();
    let xv = g.param("x", x.clone());
    let s = g.sign(xv).unwrap();
    let loss = g.weighted_sum(s, up.clone()).unwrap();
    let tape = g.backward(loss).unwrap().wrt(xv).cloned().unwrap_or(Tensor::zeros(1, grid.len()));
    for (i, &xi) in grid.iter().enumerate() {
        let expect = if -STE_CLIP < xi && xi < STE_CLIP { up.data()[i] } else { 0.0 };
        ensure(ste.data()[i] == expect && tape.data()[i] == expect, || {
            format!("STE mismatch at x={xi}")
        })?;
    }
    Ok(format!(
        "{} primitives max {worst:.1e}, 2-block net {net:.1e} (≤1e-4), STE exact on {} grid points",
        prims.len(),
        grid.len()
    ))
}

fn desk_data(dir: &Path) -> Result<PathBuf, String> {
    let data = dir.join("data");
    cli(&[
        "gen-data", "--classes", "4", "--points", "256", "--train", "160", "--test", "40", "--seed", "0", "--out",
        data.to_str().unwrap(),
    ])?;
    Ok(data)
}

struct Trained {
    ckpt: PathBuf,
    epochs: usize,
    elapsed: Duration,
}

fn train_cli(config: &str, extra: &[&str], data: &Path, out: &Path) -> Result<Trained, String> {
    let cfg = repo_root().join("configs").join(config);
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--protocol",
        "I/SO3",
        "--seed",
        "0",
        "--select",
        "last",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let (text, elapsed) = cli(&args)?;
    Ok(Trained {
        ckpt: out.to_path_buf(),
        epochs: text.lines().filter(|l| l.starts_with("epoch=")).count(),
        elapsed,
    })
}

fn eval_cli(ckpt: &Path, data: &Path, rot: &str, trials: usize) -> Result<f64, String> {
    let t = trials.to_string();
    let (out, _) = cli(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--test-rot",
        rot,
        "--trials",
        &t,
    ])?;
    num(&out, &["mean_acc="], "mean_acc")
}

struct LearningRuns {
    _dir: tempfile::TempDir,
    data: PathBuf,
    fp: Trained,
    binary: Trained,
}

fn learning_runs() -> Result<LearningRuns, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = desk_data(dir.path())?;
    let fp = train_cli("desk.toml", &[], &data, &dir.path().join("fp.svnc"))?;
    let binary = train_cli("desk_binary.toml", &[], &data, &dir.path().join("bin.svnc"))?;
    Ok(LearningRuns {
        _dir: dir,
        data,
        fp,
        binary,
    })
}

fn criterion_6(runs: &Result<LearningRuns, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let log = std::fs::read_to_string(repo_root().join("pilot/pilot_run.log")).map_err(|e| format!("pilot log: {e}"))?;
    ensure(log.contains("last_test_acc="), || "pilot log has no training result".into())?;
    let mut parts = Vec::new();
    for (name, run, floor) in [("fp", &runs.fp, 0.90), ("binary", &runs.binary, 0.70)] {
        let so3 = eval_cli(&run.ckpt, &runs.data, "so3", 3)?;
        let z = eval_cli(&run.ckpt, &runs.data, "z", 3)?;
        ensure(run.epochs <= 60, || format!("{name}: {} epochs", run.epochs))?;
        ensure(run.elapsed < Duration::from_secs(600), || format!("{name}: took {:?}", run.elapsed))?;
        ensure(so3 >= floor, || format!("{name}: I/SO3 accuracy {so3} < {floor}"))?;
        ensure(z == so3, || format!("{name}: z accuracy {z} != SO3 accuracy {so3}"))?;
        parts.push(format!(
            "{name} I/SO3={so3:.3} I/z={z:.3} ({} epochs, {:.0}s)",
            run.epochs,
            run.elapsed.as_secs_f64()
        ));
    }
    Ok(parts.join(", "))
}

fn criterion_7(runs: &Result<LearningRuns, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = train_cli("desk.toml", &["--baseline"], &runs.data, &dir.path().join("base.svnc"))?;
    let b_up = eval_cli(&base.ckpt, &runs.data, "none", 1)?;
    let b_so3 = eval_cli(&base.ckpt, &runs.data, "so3", 3)?;
    let s_up = eval_cli(&runs.fp.ckpt, &runs.data, "none", 1)?;
    let s_so3 = eval_cli(&runs.fp.ckpt, &runs.data, "so3", 3)?;
    let (b_drop, s_drop) = (b_up - b_so3, s_up - s_so3);
    ensure(b_drop >= 0.20, || format!("baseline drop {b_drop:.3} < 0.20"))?;
    ensure(s_drop == 0.0, || format!("SVNet drop {s_drop}"))?;
    Ok(format!(
        "baseline upright={b_up:.3} SO3={b_so3:.3} drop={:.1}pts; SVNet upright={s_up:.3} SO3={s_so3:.3} drop={:.1}pts",
        100.0 * b_drop,
        100.0 * s_drop
    ))
}

fn criterion_8() -> Check {
    let desk = Config::parse(&std::fs::read_to_string(repo_root().join("configs/desk.toml")).unwrap()).unwrap();
    let train_set = Dataset::synthetic(4, 64, 16, 80, Split::Train).unwrap();
    let one_epoch = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..desk.train.clone()
    };
    let run = |model: ModelConfig| -> Result<(u64, u64, u64), String> {
        for scheme in [BinarizeScheme::None, BinarizeScheme::Vanilla] {
            let cfg = Config {
                model: ModelConfig {
                    binarize: scheme,
                    ..model.clone()
                },
                train: one_epoch.clone(),
            };
            let m = Model::build(&cfg, 0).map_err(|e| e.to_string())?;
            let opts = TrainOptions {
                train: &cfg.train,
                train_rot: RotMode::So3,
                test: None,
                seed: 0,
            };
            let out = train_model(m, &train_set, &opts, |_| {}).map_err(|e| e.to_string())?;
            ensure(out.log.len() == 1 && out.log[0].loss.is_finite(), || "training failed".into())?;
            if scheme == BinarizeScheme::Vanilla {
                let c = count_model_ops(&out.model, 256).map_err(|e| e.to_string())?;
                return Ok((c.macs(), c.adds(), c.bops()));
            }
        }
        unreachable!()
    };
    let ratios = [("1:0", 1.0), ("2:1", 2.0 / 3.0), ("1:1", 0.5), ("0:1", 0.0)];
    let mut profiles = Vec::new();
    for (label, r) in ratios {
        let p = run(ModelConfig {
            sv_ratio: r,
            ..desk.model.clone()
        })
        .map_err(|e| format!("sv_ratio {label}: {e}"))?;
        profiles.push((label, p));
    }
    let share = |(_, a, b): (u64, u64, u64)| b as f64 / (a + b) as f64;
    let (_, scalar) = profiles[0];
    let (_, vector) = profiles[3];
    ensure(scalar.2 > scalar.0 && scalar.2 > scalar.1, || format!("1:0 not BOPs-dominant: {scalar:?}"))?;
    ensure(vector.1 > vector.0 && vector.1 > vector.2, || format!("0:1 not ADDs-dominant: {vector:?}"))?;
    ensure(
        profiles.windows(2).all(|w| share(w[0].1) > share(w[1].1)),
        || format!("BOPs share not ordered by ratio: {profiles:?}"),
    )?;
    let mut toggled = Vec::new();
    for (c, r) in [(true, true), (true, false), (false, true), (false, false)] {
        let p = run(ModelConfig {
            scalar_concat: c,
            vector_reweight: r,
            ..desk.model.clone()
        })
        .map_err(|e| format!("toggles concat={c} reweight={r}: {e}"))?;
        toggled.push(p);
    }
    let mut all: Vec<(u64, u64, u64)> = profiles.iter().map(|p| p.1).chain(toggled[1..].iter().copied()).collect();
    all.sort();
    all.dedup();
    ensure(all.len() == 7, || format!("profiles not distinct: {profiles:?} {toggled:?}"))?;
    let fmt = |(m, a, b): (u64, u64, u64)| format!("{:.2}M/{:.2}M/{:.2}M", m as f64 / 1e6, a as f64 / 1e6, b as f64 / 1e6);
    Ok(format!(
        "MACs/ADDs/BOPs 1:0={} 2:1={} 1:1={} 0:1={}; 4 toggle sets distinct",
        fmt(profiles[0].1),
        fmt(profiles[1].1),
        fmt(profiles[2].1),
        fmt(profiles[3].1)
    ))
}

fn perturb_buffers(m: &mut Model, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = m.store.iter().map(|(n, _, _)| n.to_string()).collect();
    for n in names {
        let mut t = m.store.get(&n).unwrap().clone();
        for v in t.data_mut() {
            *v += rng.random_range(0.0..0.3);
        }
        m.store.set(&n, t).unwrap();
    }
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let train_set = Dataset::synthetic(4, 32, 8, 90, Split::Train).unwrap();
    let mut parts = Vec::new();
    for scheme in [BinarizeScheme::None, BinarizeScheme::Vanilla] {
        let cfg = Config {
            model: small_model("dgcnn_like", scheme),
            train: TrainConfig {
                epochs: 1,
                batch_size: 4,
                ..TrainConfig::default()
            },
        };
        let m = Model::build(&cfg, 91).unwrap();
        let opts = TrainOptions {
            train: &cfg.train,
            train_rot: RotMode::So3,
            test: None,
            seed: 0,
        };
        let m = train_model(m, &train_set, &opts, |_| {}).map_err(|e| e.to_string())?.model;
        let path = dir.path().join(format!("{scheme:?}.svnc"));
        save_checkpoint(&m, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let mut same = 0;
        for _ in 0..100 {
            let c = random_cloud(&mut rng, 24);
            if m.logits(&[c.clone()]).unwrap().bit_eq(&back.logits(&[c]).unwrap()) {
                same += 1;
            }
        }
        ensure(same == 100, || format!("{scheme:?}: {same}/100 identical"))?;
        parts.push(format!("{scheme:?} 100/100"));
    }
    Ok(parts.join(", "))
}

fn run(results: &mut Vec<(usize, &'static str, Check)>, id: usize, name: &'static str, f: impl FnOnce() -> Check) {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("[PRIMARY] criterion {id} {name}: {status} ({detail})");
    results.push((id, name, outcome));
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "table1-reproduction", criterion_1);
    run(&mut results, 2, "equivariance-suite", criterion_2);
    run(&mut results, 3, "exact-invariance", criterion_3);
    run(&mut results, 4, "kernel-bit-exactness", criterion_4);
    run(&mut results, 5, "gradient-checks", criterion_5);
    let runs = learning_runs();
    run(&mut results, 6, "desk-scale-learning", || criterion_6(&runs));
    run(&mut results, 7, "rotation-sensitivity-contrast", || criterion_7(&runs));
    run(&mut results, 8, "ablation-machinery", criterion_8);
    run(&mut results, 9, "checkpoint-round-trip", criterion_9);
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, r)| r.is_err())
        .map(|(id, name, _)| format!("{id} {name}"))
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
