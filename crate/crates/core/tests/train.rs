use svnet::netbuild::{BinarizeScheme, Config, Model, ModelConfig, TrainConfig};
use svnet::train::{
    evaluate, generate_dataset, train_model, Dataset, EpochLog, Phase, RotMode, Split, TrainOptions,
};

fn tiny_config(binarize: BinarizeScheme, epochs: usize) -> Config {
    Config {
        model: ModelConfig {
            k: 4,
            channels: vec![9, 12],
            global_dim: 8,
            binarize,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs,
            batch_size: 4,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn generated_data_is_reproducible_and_balanced() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(generate_dataset(a.path(), 4, 256, 40, 8, 3).unwrap(), 48);
    generate_dataset(b.path(), 4, 256, 40, 8, 3).unwrap();
    for split in ["train", "test"] {
        let name = format!("{split}.manifest");
        let ma = std::fs::read(a.path().join(&name)).unwrap();
        assert_eq!(ma, std::fs::read(b.path().join(&name)).unwrap());
        let text = String::from_utf8(ma).unwrap();
        let mut hist = [0usize; 4];
        for line in text.lines() {
            let (file, class) = line.split_once('\t').unwrap();
            hist[class.parse::<usize>().unwrap()] += 1;
            assert_eq!(
                std::fs::read(a.path().join(file)).unwrap(),
                std::fs::read(b.path().join(file)).unwrap()
            );
        }
        assert!(hist.iter().all(|&h| h == hist[0]), "{hist:?}");
    }
    let files = std::fs::read_dir(a.path().join("train")).unwrap().count()
        + std::fs::read_dir(a.path().join("test")).unwrap().count();
    assert_eq!(files, 48);
    let d = Dataset::load(a.path(), Split::Train).unwrap();
    assert_eq!(d.len(), 40);
    assert_eq!(d.clouds[0].len(), 256);
    assert_eq!(d.labels()[..4], [0, 1, 2, 3]);
}

#[test]
fn loaded_data_matches_in_memory_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), 4, 32, 8, 4, 1).unwrap();
    let disk = Dataset::load(dir.path(), Split::Test).unwrap();
    let mem = Dataset::synthetic(4, 32, 4, 1, Split::Test).unwrap();
    assert_eq!(disk.clouds, mem.clouds);
}

#[test]
fn bad_manifests_are_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m");
    std::fs::write(&p, "a.xyz 0\n").unwrap();
    assert!(Dataset::from_manifest(&p).is_err());
    std::fs::write(&p, "a.xyz\tzero\n").unwrap();
    assert!(Dataset::from_manifest(&p).is_err());
    std::fs::write(&p, "missing.xyz\t0\n").unwrap();
    assert!(Dataset::from_manifest(&p).is_err());
    std::fs::write(dir.path().join("bad.xyz"), "1 2\n").unwrap();
    std::fs::write(&p, "bad.xyz\t0\n").unwrap();
    let e = Dataset::from_manifest(&p).unwrap_err();
    assert!(e.to_string().contains("line 1"), "{e}");
    std::fs::write(&p, "").unwrap();
    assert!(Dataset::from_manifest(&p).is_err());
    assert!(Dataset::load(&dir.path().join("nothing"), Split::Train).is_err());
}

fn run(cfg: &Config, seed: u64) -> Vec<EpochLog> {
    let train = Dataset::synthetic(4, 24, 8, 0, Split::Train).unwrap();
    let test = Dataset::synthetic(4, 24, 4, 0, Split::Test).unwrap();
    let model = Model::build(cfg, seed).unwrap();
    let opts = TrainOptions {
        train: &cfg.train,
        train_rot: RotMode::So3,
        test: Some((&test, RotMode::So3)),
        seed,
    };
    train_model(model, &train, &opts, |_| {}).unwrap().log
}

#[test]
fn training_is_deterministic_per_seed() {
    let cfg = tiny_config(BinarizeScheme::None, 2);
    let a = run(&cfg, 5);
    assert_eq!(a, run(&cfg, 5));
    assert_ne!(a, run(&cfg, 6));
    assert!(a.iter().all(|l| l.loss.is_finite()));
    let line = a[0].to_string();
    for key in ["epoch=1", "phase=fp", "lr=", "loss=", "acc=", "test_acc="] {
        assert!(line.contains(key), "{line}");
    }
}

#[test]
fn two_step_logs_both_phases() {
    let mut cfg = tiny_config(BinarizeScheme::TwoStep, 3);
    cfg.train.fp_epochs = Some(1);
    let log = run(&cfg, 0);
    let phases: Vec<Phase> = log.iter().map(|l| l.phase).collect();
    assert_eq!(phases, [Phase::FullPrecision, Phase::Binary, Phase::Binary]);
    assert_eq!(log.iter().map(|l| l.epoch).collect::<Vec<_>>(), [1, 2, 3]);
}

#[test]
fn vanilla_trains_binary_from_the_start() {
    let log = run(&tiny_config(BinarizeScheme::Vanilla, 1), 0);
    assert_eq!(log[0].phase, Phase::Binary);
}

#[test]
fn invariant_model_has_zero_spread() {
    let cfg = tiny_config(BinarizeScheme::None, 1);
    let test = Dataset::synthetic(4, 24, 8, 2, Split::Test).unwrap();
    let model = Model::build(&cfg, 1).unwrap();
    let so3 = evaluate(&model, &test, RotMode::So3, 3, 0).unwrap();
    let z = evaluate(&model, &test, RotMode::Z, 2, 0).unwrap();
    assert_eq!(so3.spread, 0.0);
    assert!(so3.logit_spread <= 1e-10, "{}", so3.logit_spread);
    assert_eq!(so3.mean, z.mean);
    assert!(evaluate(&model, &test, RotMode::So3, 0, 0).is_err());
}

#[test]
fn upright_protocol_applies_no_rotation() {
    let cfg = Config {
        model: ModelConfig {
            backbone: "baseline".into(),
            ..tiny_config(BinarizeScheme::None, 1).model
        },
        ..tiny_config(BinarizeScheme::None, 1)
    };
    let test = Dataset::synthetic(4, 24, 4, 2, Split::Test).unwrap();
    let model = Model::build(&cfg, 0).unwrap();
    let r = evaluate(&model, &test, RotMode::None, 3, 0).unwrap();
    assert_eq!(r.logit_spread, 0.0);
    let direct = model.logits(&test.clouds).unwrap();
    let rotated = evaluate(&model, &test, RotMode::So3, 2, 0).unwrap();
    assert!(rotated.logit_spread > 0.0);
    assert_eq!(direct.shape(), (4, 4));
}
