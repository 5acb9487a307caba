mod common;

use common::rng;
use rand::Rng;
use sre_unet::data::{gen_synthetic_vessels, Sample};
use sre_unet::net::{Gradients, Param};
use sre_unet::optim::{
    adamw_step, blob_path, cosine_lr, load_checkpoint, save_checkpoint, train, AdamWConfig,
    AdamWState, Checkpoint, LogRow, TrainConfig, TrainOutput, Trainer, LOG_HEADER,
};
use sre_unet::{build_unet, Error, UNetConfig};

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        net: UNetConfig {
            base_channels: 4,
            ..UNetConfig::default()
        },
        seed: 13,
        epochs,
        steps_per_epoch: 2,
        batch_size: 2,
        patch_size: 24,
        optimizer: AdamWConfig {
            lr0: 2e-3,
            ..AdamWConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn tiny_data() -> Vec<Sample> {
    gen_synthetic_vessels(4, 3, 32).unwrap()
}

/// Plain f64 AdamW, written out step by step.
struct RefAdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl RefAdamW {
    fn step(&mut self, p: &mut [f64], g: &[f64], h: &AdamWConfig, lr: f64) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / (1.0 - h.beta1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - h.beta2.powi(self.t));
            let decay = lr * h.weight_decay * p[i];
            p[i] -= lr * m_hat / (v_hat.sqrt() + h.eps) + decay;
        }
    }
}

#[test]
fn adamw_matches_reference() {
    let h = AdamWConfig {
        lr0: 1e-2,
        weight_decay: 0.1,
        ..AdamWConfig::default()
    };
    let mut r = rng(8);
    let n = 40;
    let init: Vec<f32> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut params = vec![Param {
        name: "w".into(),
        shape: vec![n],
        data: init.clone(),
    }];
    let mut state = AdamWState::new(h, &params);
    let mut reference: Vec<f64> = init.iter().map(|&v| f64::from(v)).collect();
    let mut ref_opt = RefAdamW {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    for step in 0..25 {
        let g: Vec<f32> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let lr = cosine_lr(step, 25, h.lr0);
        let grads = Gradients {
            names: vec!["w".into()],
            grads: vec![g.clone()],
        };
        adamw_step(&mut params, &grads, &mut state, lr).unwrap();
        let g64: Vec<f64> = g.iter().map(|&v| f64::from(v)).collect();
        ref_opt.step(&mut reference, &g64, &h, lr);
    }
    assert_eq!(state.step, 25);
    for (a, b) in params[0].data.iter().zip(&reference) {
        assert!((f64::from(*a) - b).abs() <= 1e-5, "{a} vs {b}");
    }
}

fn single(values: Vec<f32>) -> (Vec<Param<f32>>, Gradients<f32>) {
    let n = values.len();
    let params = vec![Param {
        name: "w".into(),
        shape: vec![n],
        data: values,
    }];
    let grads = Gradients {
        names: vec!["w".into()],
        grads: vec![vec![0.0; n]],
    };
    (params, grads)
}

#[test]
fn adamw_with_zero_gradient() {
    let (mut params, grads) = single(vec![0.5, -2.0, 3.0]);
    let mut state = AdamWState::new(
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &params,
    );
    adamw_step(&mut params, &grads, &mut state, 1e-2).unwrap();
    assert_eq!(params[0].data, [0.5, -2.0, 3.0]);

    let (mut params, grads) = single(vec![0.5, -2.0, 3.0]);
    let mut state = AdamWState::new(
        AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        },
        &params,
    );
    adamw_step(&mut params, &grads, &mut state, 1e-2).unwrap();
    for (got, orig) in params[0].data.iter().zip([0.5f32, -2.0, 3.0]) {
        assert!((f64::from(*got) - f64::from(orig) * (1.0 - 1e-2 * 0.1)).abs() < 1e-7);
    }
}

#[test]
fn adamw_rejects_mismatched_gradients() {
    let mut params = vec![Param {
        name: "w".into(),
        shape: vec![2],
        data: vec![0.0, 1.0],
    }];
    let mut state = AdamWState::new(AdamWConfig::default(), &params);
    let grads = Gradients {
        names: vec!["w".into()],
        grads: vec![vec![1.0]],
    };
    assert!(adamw_step(&mut params, &grads, &mut state, 1e-3).is_err());
    assert_eq!(state.step, 0);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 100, 5e-4), 5e-4);
    assert!((cosine_lr(50, 100, 5e-4) - 2.5e-4).abs() < 1e-15);
    assert!(cosine_lr(100, 100, 5e-4).abs() < 1e-18);
    assert!(cosine_lr(150, 100, 5e-4).abs() < 1e-18);
    let lrs: Vec<f64> = (0..=100).map(|s| cosine_lr(s, 100, 1.0)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data();
    let mut t = Trainer::new(tiny_config(3)).unwrap();
    t.run_epoch(&data).unwrap();
    let ckpt = t.checkpoint();
    let path = dir.path().join("c.json");
    save_checkpoint(&ckpt, &path).unwrap();
    assert!(blob_path(&path).is_file());
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, ckpt.params);
    assert_eq!(back.optimizer, ckpt.optimizer);
    assert_eq!((back.epoch, back.step, back.seed), (1, 2, 13));
    assert_eq!(back.config, ckpt.config);
    let net = back.to_network().unwrap();
    let x = data[0].image.clone();
    assert_eq!(net.infer(&x).unwrap(), t.network().infer(&x).unwrap());

    // weights-only checkpoints also load
    let bare = Checkpoint::from_network(t.network(), None, 1);
    save_checkpoint(&bare, &dir.path().join("bare.json")).unwrap();
    assert!(load_checkpoint(&dir.path().join("bare.json"))
        .unwrap()
        .optimizer
        .is_none());
}

#[test]
fn corrupt_checkpoints_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let net = build_unet::<f32>(&tiny_config(1).net, 1).unwrap();
    let path = dir.path().join("c.json");
    save_checkpoint(&Checkpoint::from_network(&net, None, 0), &path).unwrap();
    let blob = std::fs::read(blob_path(&path)).unwrap();

    std::fs::write(blob_path(&path), &blob[..blob.len() - 4]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CorruptCheckpoint(_))
    ));

    let mut flipped = blob.clone();
    flipped[17] ^= 0x40;
    std::fs::write(blob_path(&path), &flipped).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CorruptCheckpoint(_))
    ));

    std::fs::write(blob_path(&path), &blob).unwrap();
    assert!(load_checkpoint(&path).is_ok());
    std::fs::write(&path, "{ not json").unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CorruptCheckpoint(_))
    ));
}

fn comparable(rows: &[LogRow]) -> Vec<(usize, u64, f64, f64)> {
    rows.iter()
        .map(|r| (r.epoch, r.step, r.loss, r.lr))
        .collect()
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = tiny_data();
    let dir = tempfile::tempdir().unwrap();
    let full_out = TrainOutput {
        dir: dir.path().join("full"),
    };
    let full = train(tiny_config(4), &data, Some(&full_out), None).unwrap();

    let part_out = TrainOutput {
        dir: dir.path().join("part"),
    };
    let mut cfg = tiny_config(4);
    cfg.checkpoint_every = 2;
    // stop after epoch 2 by training a shorter schedule's worth of epochs by hand
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.run_epoch(&data).unwrap();
    t.run_epoch(&data).unwrap();
    std::fs::create_dir_all(&part_out.dir).unwrap();
    let mid = part_out.dir.join("mid.json");
    save_checkpoint(&t.checkpoint(), &mid).unwrap();
    let resumed = train(cfg, &data, Some(&part_out), Some(&mid)).unwrap();

    assert_eq!(resumed.network().params(), full.network().params());
    assert_eq!(resumed.optimizer(), full.optimizer());
    assert_eq!(comparable(resumed.log()), comparable(&full.log()[4..]));
    assert_eq!(comparable(t.log()), comparable(&full.log()[..4]));

    let log = std::fs::read_to_string(full_out.log_path()).unwrap();
    assert_eq!(log.lines().next().unwrap(), LOG_HEADER);
    assert_eq!(log.lines().count(), 1 + 8);
    assert!(full_out.final_checkpoint().is_file());
}

#[test]
fn resume_rejects_mismatched_runs() {
    let data = tiny_data();
    let mut t = Trainer::new(tiny_config(2)).unwrap();
    t.run_epoch(&data).unwrap();
    let ckpt = t.checkpoint();
    let mut other = tiny_config(2);
    other.seed = 14;
    assert!(matches!(
        Trainer::resume(other, &ckpt),
        Err(Error::Config(_))
    ));
    let mut no_opt = ckpt.clone();
    no_opt.optimizer = None;
    assert!(matches!(
        Trainer::resume(tiny_config(2), &no_opt),
        Err(Error::Config(_))
    ));
    t.run_epoch(&data).unwrap();
    assert!(t.is_done());
    assert!(t.run_epoch(&data).is_err());
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = tiny_data();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| train(tiny_config(2), &data, None, None).unwrap())
    };
    let (a, b, c) = (run(1), run(1), run(3));
    assert_eq!(a.network().params(), b.network().params());
    assert_eq!(a.network().params(), c.network().params());
    assert_eq!(comparable(a.log()), comparable(c.log()));
}

#[test]
fn bad_training_inputs_are_config_errors() {
    assert!(matches!(
        train(tiny_config(1), &[], None, None),
        Err(Error::Config(_))
    ));
    let mut cfg = tiny_config(1);
    cfg.patch_size = 22;
    assert!(matches!(
        train(cfg, &tiny_data(), None, None),
        Err(Error::Config(_))
    ));
    let mut cfg = tiny_config(1);
    cfg.patch_size = 64;
    assert!(matches!(
        train(cfg, &tiny_data(), None, None),
        Err(Error::Config(_))
    ));
    let mut cfg = tiny_config(1);
    cfg.optimizer.beta1 = 1.0;
    assert!(Trainer::new(cfg).is_err());
    let mut cfg = tiny_config(1);
    cfg.batch_size = 0;
    assert!(Trainer::new(cfg).is_err());
}

#[test]
fn short_run_halves_the_loss() {
    let data = gen_synthetic_vessels(7, 8, 64).unwrap();
    let cfg = TrainConfig {
        net: UNetConfig {
            base_channels: 8,
            ..UNetConfig::default()
        },
        seed: 1,
        epochs: 50,
        steps_per_epoch: 4,
        batch_size: 8,
        patch_size: 48,
        optimizer: AdamWConfig {
            lr0: 2e-3,
            ..AdamWConfig::default()
        },
        ..TrainConfig::default()
    };
    let t = train(cfg, &data[..4], None, None).unwrap();
    let losses = t.epoch_losses();
    assert_eq!(losses.len(), 50);
    let (first, last) = (losses[0].1, losses[49].1);
    eprintln!("loss {first:.4} -> {last:.4}");
    assert!(last <= 0.5 * first, "{first} -> {last}");

    let mut ema = losses[0].1;
    let mut trace = Vec::new();
    for &(_, l) in &losses {
        ema = 0.8 * ema + 0.2 * l;
        trace.push(ema);
    }
    assert!(trace[49] < trace[24] && trace[24] < trace[4], "{trace:?}");
    assert!(t.log().last().unwrap().lr < 1e-6);
}
