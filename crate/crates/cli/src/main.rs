use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svnet::binkernel::{bench_kernel, KernelRegistry};
use svnet::geometry::{apply_rotation, random_rotation, signed_permutation_rotation, synthesize_shapes, PointCloud};
use svnet::netbuild::{
    build_model, count_model_ops, count_ops, load_checkpoint, load_checkpoint_for, save_checkpoint, BinarizeScheme,
    Config, Model, Table1Mode,
};
use svnet::train::{evaluate, generate_dataset, train_model, Dataset, EvalProtocol, RotMode, Split, TrainOptions};

#[derive(Parser)]
#[command(name = "svnet", version, about = "Rotation-equivariant binarizable point-cloud networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic shape dataset as XYZ files plus manifests.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, default_value_t = 160)]
        train: usize,
        #[arg(long, default_value_t = 40)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and save the best checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Train/test rotations such as I/SO3, z/SO3 or SO3/SO3.
        #[arg(long, default_value = "I/SO3")]
        protocol: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Full-precision epochs first, then binary epochs.
        #[arg(long)]
        two_step: bool,
        /// Rotation-sensitive scalar model on raw coordinates.
        #[arg(long)]
        baseline: bool,
        /// Which model to save: highest held-out accuracy or the final epoch.
        #[arg(long, value_enum, default_value_t = Select::Best)]
        select: Select,
    },
    /// Accuracy over independently rotated passes of the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Expected architecture; a mismatching checkpoint is rejected.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "so3")]
        test_rot: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check logit invariance of a checkpoint under rotations.
    EquivCheck {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = EquivMode::Fp)]
        mode: EquivMode,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-layer and total MACs/ADDs/BOPs.
    CountOps {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        points: usize,
        /// Print the reference block for C1 = C2 = 256, N = 1024.
        #[arg(long)]
        table1: bool,
    },
    /// Time GEMM kernels and print a CSV.
    Bench {
        /// Comma-separated kernel names.
        #[arg(long, default_value = "xnor,signadd,floatref", value_delimiter = ',')]
        kernel: Vec<String>,
        /// Comma-separated sizes.
        #[arg(long, default_value = "256,1024", value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Select {
    Best,
    Last,
}

#[derive(Clone, Copy, ValueEnum)]
enum EquivMode {
    Fp,
    Exact,
}

fn read_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::parse(&text).with_context(|| format!("{}", p.display()))
        }
    }
}

fn gen_data(classes: usize, points: usize, train: usize, test: usize, seed: u64, out: &Path) -> Result<()> {
    let n = generate_dataset(out, classes, points, train, test, seed)?;
    println!("wrote {n} files to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<&Path>,
    data: &Path,
    protocol: &str,
    epochs: Option<usize>,
    seed: u64,
    out: &Path,
    two_step: bool,
    baseline: bool,
    select: Select,
) -> Result<()> {
    let mut cfg = read_config(config)?;
    let protocol: EvalProtocol = protocol.parse()?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if two_step {
        cfg.model.binarize = BinarizeScheme::TwoStep;
    }
    if baseline {
        cfg.model.backbone = "baseline".into();
        cfg.model.binarize = BinarizeScheme::None;
    }
    cfg.validate().map_err(|(k, m)| anyhow::anyhow!("config error: {k}: {m}"))?;
    let train_set = Dataset::load(data, Split::Train)?;
    let test_set = Dataset::load(data, Split::Test)?;
    let model = Model::build(&cfg, seed)?;
    println!(
        "model backbone={} params={} protocol={protocol} epochs={}",
        cfg.model.backbone,
        model.parameter_count(),
        cfg.train.epochs
    );
    let start = Instant::now();
    let opts = TrainOptions {
        train: &cfg.train,
        train_rot: protocol.train_rot,
        test: Some((&test_set, protocol.test_rot)),
        seed,
    };
    let outcome = train_model(model, &train_set, &opts, |line| {
        println!("{line}");
        let _ = std::io::stdout().flush();
    })?;
    let last_acc = outcome.log.last().and_then(|l| l.test_acc).context("no epochs were run")?;
    let (best, best_acc) = outcome.best.context("no epochs were run")?;
    let (chosen, label) = match select {
        Select::Best => (&best, "best"),
        Select::Last => (&outcome.model, "last"),
    };
    save_checkpoint(chosen, out)?;
    println!(
        "saved={} select={label} best_test_acc={best_acc:.4} last_test_acc={last_acc:.4} seconds={:.1}",
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn parse_rot(s: &str) -> Result<RotMode> {
    Ok(s.parse()?)
}

fn eval(ckpt: &Path, data: &Path, config: Option<&Path>, test_rot: &str, trials: usize, seed: u64) -> Result<()> {
    let model = match config {
        Some(_) => load_checkpoint_for(ckpt, &read_config(config)?)?,
        None => load_checkpoint(ckpt)?,
    };
    let rot = parse_rot(test_rot)?;
    let test_set = Dataset::load(data, Split::Test)?;
    let report = evaluate(&model, &test_set, rot, trials, seed)?;
    println!("test_rot={rot} {report}");
    Ok(())
}

fn random_inputs(model: &Model, count: usize, points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = model.model_config().classes.min(svnet::geometry::NUM_SHAPE_CLASSES);
    (0..count)
        .map(|i| Ok(synthesize_shapes(i % classes, points, rng.random())?))
        .collect()
}

fn equiv_check(ckpt: &Path, trials: usize, mode: EquivMode, points: usize, tol: f64, seed: u64) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let inputs = random_inputs(&model, 4, points, seed)?;
    let base = model.logits(&inputs)?;
    match mode {
        EquivMode::Fp => {
            let scale = base.max_abs().max(1.0);
            let mut worst = 0.0f64;
            for t in 0..trials {
                let rot = random_rotation(seed.wrapping_add(1 + t as u64));
                let rotated: Vec<PointCloud> = inputs.iter().map(|c| apply_rotation(c, &rot)).collect();
                worst = worst.max(model.logits(&rotated)?.max_abs_diff(&base) / scale);
            }
            println!("mode=fp trials={trials} max_rel_deviation={worst:.3e} tol={tol:.1e}");
            if !(worst <= tol) {
                bail!("logit deviation {worst:.3e} exceeds {tol:.1e}");
            }
        }
        EquivMode::Exact => {
            let mut same = 0;
            for i in 0..24 {
                let rot = signed_permutation_rotation(i)?;
                let rotated: Vec<PointCloud> = inputs.iter().map(|c| apply_rotation(c, &rot)).collect();
                if model.logits(&rotated)?.bit_eq(&base) {
                    same += 1;
                }
            }
            println!("mode=exact bit_identical={same}/24");
            if same != 24 {
                bail!("only {same}/24 signed-permutation rotations gave bit-identical logits");
            }
        }
    }
    Ok(())
}

fn count_ops_cmd(config: Option<&Path>, points: usize, table1: bool) -> Result<()> {
    if table1 {
        println!("table1 C1=256 C2=256 N=1024");
        for mode in [Table1Mode::Vanilla, Table1Mode::SvFp, Table1Mode::SvBinary] {
            let c = count_ops(256, 256, 1024, mode);
            for l in c.layers() {
                println!(
                    "table1 mode={} term={} macs={} adds={} bops={}",
                    mode.as_str(),
                    l.name,
                    l.macs,
                    l.adds,
                    l.bops
                );
            }
            println!(
                "table1 mode={} macs={} ({:.1}M) adds={} ({:.1}M) bops={} ({:.1}M)",
                mode.as_str(),
                c.macs(),
                c.macs() as f64 / 1e6,
                c.adds(),
                c.adds() as f64 / 1e6,
                c.bops(),
                c.bops() as f64 / 1e6
            );
        }
        if config.is_none() {
            return Ok(());
        }
    }
    let cfg = read_config(config)?;
    let mut model = build_model(&cfg.model, 0)?;
    if cfg.model.binarize == BinarizeScheme::TwoStep {
        svnet::netbuild::binarize_plan(&mut model, svnet::netbuild::BinarizePlan::TwoStepPhase2)?;
    }
    let c = count_model_ops(&model, points)?;
    println!(
        "model backbone={} sv_ratio={} binarize={:?} points={points} (desk-scale widths {:?})",
        cfg.model.backbone,
        cfg.model.sv_ratio,
        cfg.model.binarize,
        cfg.model.channel_plan()
    );
    print!("{}", c.report());
    Ok(())
}

fn bench(kernels: &[String], sizes: &[usize], trials: usize, seed: u64) -> Result<()> {
    let reg = KernelRegistry::default();
    let mut rows = Vec::new();
    println!("{}", svnet::binkernel::BenchRow::CSV_HEADER);
    for name in kernels {
        let k = reg.get(name)?;
        for &n in sizes {
            let row = bench_kernel(k, n, trials, seed)?;
            println!("{}", row.to_csv());
            rows.push(row);
        }
    }
    for &n in sizes {
        let find = |k: &str| rows.iter().find(|r| r.kernel == k && r.n == n).map(|r| r.ns_per_op);
        if let Some(f) = find("floatref") {
            for k in ["xnor", "signadd"] {
                if let Some(t) = find(k) {
                    println!("# speedup {k}_vs_floatref n={n} ratio={:.2}", f / t);
                }
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            classes,
            points,
            train,
            test,
            seed,
            out,
        } => gen_data(classes, points, train, test, seed, &out),
        Command::Train {
            config,
            data,
            protocol,
            epochs,
            seed,
            out,
            two_step,
            baseline,
            select,
        } => train(config.as_deref(), &data, &protocol, epochs, seed, &out, two_step, baseline, select),
        Command::Eval {
            ckpt,
            data,
            config,
            test_rot,
            trials,
            seed,
        } => eval(&ckpt, &data, config.as_deref(), &test_rot, trials, seed),
        Command::EquivCheck {
            ckpt,
            trials,
            mode,
            points,
            tol,
            seed,
        } => equiv_check(&ckpt, trials, mode, points, tol, seed),
        Command::CountOps { config, points, table1 } => count_ops_cmd(config.as_deref(), points, table1),
        Command::Bench { kernel, n, trials, seed } => bench(&kernel, &n, trials, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
