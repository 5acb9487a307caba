use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use serde_json::json;
use sre_unet::data::{
    gen_synthetic_vessels, load_dataset, make_rotated_testset_with_angles, write_dataset, Dataset,
    Split,
};
use sre_unet::kernel::expand_theta;
use sre_unet::metrics::{evaluate, EvalOptions, EvalReport};
use sre_unet::net::{count_flops, FlopReport};
use sre_unet::ops::{
    conv2d_fast_counted, conv2d_ref_counted, sre_conv_band_pooled_counted, ConvSpec, OpCounter,
};
use sre_unet::optim::{load_checkpoint, train, Checkpoint, TrainOutput};
use sre_unet::{
    build_band_partition, build_unet, par, rng, BandTheta, Network, SreConvParams, Tensor4,
    UNetConfig, D4,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run_dir::RunDir;

const EQUIV_DOMAIN: u64 = 0xE0;
const BENCH_DOMAIN: u64 = 0xBE;

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.data.root {
        Some(root) => Ok(load_dataset(root, cfg.data.layout)?.0),
        None => Ok(Dataset {
            samples: gen_synthetic_vessels(
                cfg.data.synthetic_seed,
                cfg.data.synthetic_count,
                cfg.data.synthetic_size,
            )?,
        }),
    }
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?)
}

pub fn bandmap(k: usize, pgm: Option<&Path>, out: Option<RunDir>) -> Result<(), CliError> {
    let part = build_band_partition(k)?;
    let text = part.render();
    print!("{text}");
    println!("bands: {}  sizes: {:?}", part.bands(), part.band_sizes());
    let scale = |p: &sre_unet::BandPartition| -> Vec<f32> {
        p.band_grid().iter().map(|&b| b as f32).collect()
    };
    if let Some(path) = pgm {
        let hi = (part.bands() - 1) as f32;
        sre_unet::data::write_gray_map(path, &scale(&part), k, k, 0.0, hi)?;
    }
    if let Some(dir) = out {
        write_text(&dir.join("bandmap.txt"), &text)?;
        let hi = (part.bands() - 1) as f32;
        sre_unet::data::write_gray_map(&dir.join("bandmap.pgm"), &scale(&part), k, k, 0.0, hi)?;
        dir.commit("ok")?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, count: usize, size: usize, dir: RunDir) -> Result<(), CliError> {
    let samples = gen_synthetic_vessels(cfg.data.synthetic_seed, count, size)?;
    let manifest = write_dataset(&samples, dir.path())?;
    println!("wrote {} samples ({size}x{size})", manifest.samples.len());
    dir.commit("ok")?;
    Ok(())
}

pub fn run_train(cfg: &RunConfig, resume: Option<&Path>, mut dir: RunDir) -> Result<(), CliError> {
    if let Some(p) = resume {
        open_checkpoint(p)?;
    }
    let data = load_data(cfg)?;
    let train_set = data.split(Split::Train);
    let out = TrainOutput {
        dir: dir.path().to_path_buf(),
    };
    let trainer = train(cfg.train.clone(), &train_set, Some(&out), resume)?;
    let losses = trainer.epoch_losses();
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!(
            "trained {} epochs on {} images: loss {:.4} -> {:.4}",
            trainer.epoch(),
            train_set.len(),
            first.1,
            last.1
        );
        dir.note("final_loss", json!(last.1));
    }
    dir.note("params", json!(trainer.network().count_params()));
    dir.commit("ok")?;
    Ok(())
}

fn print_summary(report: &EvalReport) {
    let s = &report.summary;
    println!("{} samples, label mode {:?}", s.samples, s.label_mode);
    println!(
        "{:>18} {:>9} {:>9} {:>9} {:>9}",
        "", "dice", "iou", "auc", "eq_mse"
    );
    let line = |name: &str, m: &sre_unet::metrics::RowMetrics| {
        println!(
            "{name:>18} {:>9.4} {:>9.4} {:>9.4} {:>9.2e}",
            m.dice, m.iou, m.auc, m.equivariance_mse
        );
    };
    line("0°", &s.original);
    if let Some(r) = &s.rotated {
        line("rotated (excl. 0°)", r);
        line("all angles", &s.all_angles);
    }
}

pub fn run_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    rotated: bool,
    dir: RunDir,
) -> Result<(), CliError> {
    let ckpt = open_checkpoint(checkpoint)?;
    let net = ckpt.to_network()?;
    let data = load_data(cfg)?;
    let test = data.split(Split::Test);
    if test.is_empty() {
        return Err(CliError::Data("dataset has no test split".into()));
    }
    let angles = if rotated {
        cfg.eval.angles.clone()
    } else {
        vec![0]
    };
    let set = make_rotated_testset_with_angles(&test, &angles);
    let opts = EvalOptions {
        threshold: cfg.eval.threshold,
        label_mode: cfg.eval.label_mode,
        use_fov: cfg.eval.use_fov,
        keep_diff_maps: rotated && cfg.eval.diff_maps,
    };
    let report = evaluate(&net, &set, &opts)?;
    report.write_csv(&dir.join("eval_rows.csv"))?;
    report.write_summary(&dir.join("eval_summary.json"))?;
    if opts.keep_diff_maps {
        report.write_diff_maps(&dir.join("diff_maps"))?;
    }
    print_summary(&report);
    dir.commit("ok")?;
    Ok(())
}

#[derive(Serialize)]
struct EquivCase {
    source: String,
    size: usize,
    max_abs_diff: Vec<f64>,
}

#[derive(Serialize)]
struct EquivReport {
    conv_type: String,
    tolerance: f64,
    violation_threshold: f64,
    expect_violation: bool,
    max_abs_diff: f64,
    passed: bool,
    cases: Vec<EquivCase>,
}

/// Largest `|f(g·x) − g·f(x)|` for each of the 8 D4 elements.
pub fn d4_errors(net: &Network<f32>, x: &Tensor4<f32>) -> Result<Vec<f64>, CliError> {
    let y = net.infer(x)?;
    D4::all()
        .iter()
        .map(|&g| Ok(net.infer(&x.transform(g))?.max_abs_diff(&y.transform(g))))
        .collect()
}

fn square_crop(image: &Tensor4<f32>, multiple: usize) -> Tensor4<f32> {
    let s = image.h().min(image.w()) / multiple * multiple;
    let (top, left) = ((image.h() - s) / 2, (image.w() - s) / 2);
    Tensor4::from_fn([1, image.c(), s, s], |_, c, y, x| {
        image.at(0, c, y + top, x + left)
    })
}

pub fn equiv_check(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    expect_violation: bool,
    dir: Option<RunDir>,
) -> Result<(), CliError> {
    let net = match checkpoint {
        Some(p) => open_checkpoint(p)?.to_network()?,
        None => build_unet::<f32>(&cfg.train.net, cfg.train.seed)?,
    };
    let e = &cfg.equiv;
    let m = net.config().size_multiple();
    if e.size == 0 || !e.size.is_multiple_of(m) {
        return Err(CliError::Usage(format!(
            "equiv.size must be a positive multiple of {m}"
        )));
    }
    let mut cases = Vec::new();
    for i in 0..e.random_inputs {
        let mut r = rng::stream(cfg.train.seed, EQUIV_DOMAIN, i as u64);
        let x = Tensor4::from_fn(
            [1, net.config().in_channels, e.size, e.size],
            |_, _, _, _| r.gen::<f32>(),
        );
        cases.push(EquivCase {
            source: format!("random{i}"),
            size: e.size,
            max_abs_diff: d4_errors(&net, &x)?,
        });
    }
    if e.real_inputs > 0 {
        let data = load_data(cfg)?;
        for s in data.samples.iter().take(e.real_inputs) {
            let x = square_crop(&s.image, m);
            if x.h() == 0 {
                continue;
            }
            cases.push(EquivCase {
                source: s.id.clone(),
                size: x.h(),
                max_abs_diff: d4_errors(&net, &x)?,
            });
        }
    }
    let worst = cases
        .iter()
        .flat_map(|c| c.max_abs_diff.iter().copied())
        .fold(0.0f64, f64::max);
    let passed = if expect_violation {
        worst > e.violation_threshold
    } else {
        worst <= e.tolerance
    };
    println!(
        "{} net, {} inputs: max |f(g·x) - g·f(x)| = {worst:.3e} ({})",
        net.config().conv_type,
        cases.len(),
        if expect_violation {
            if passed {
                "violation observed as expected"
            } else {
                "expected a violation but none exceeded the threshold"
            }
        } else if passed {
            "within tolerance"
        } else {
            "TOLERANCE EXCEEDED"
        }
    );
    let report = EquivReport {
        conv_type: net.config().conv_type.to_string(),
        tolerance: e.tolerance,
        violation_threshold: e.violation_threshold,
        expect_violation,
        max_abs_diff: worst,
        passed,
        cases,
    };
    if let Some(mut dir) = dir {
        write_json(&dir.join("equiv.json"), &report)?;
        dir.note("passed", json!(passed));
        dir.commit(if passed { "ok" } else { "gate_failed" })?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Gate(format!(
            "equivariance gate failed: max abs diff {worst:.3e}"
        )))
    }
}

#[derive(Serialize)]
struct CountEntry {
    role: &'static str,
    config: UNetConfig,
    report: FlopReport,
}

pub fn count(cfg: &RunConfig, size: usize, dir: Option<RunDir>) -> Result<(), CliError> {
    let sre_cfg = &cfg.train.net;
    let entries = [
        ("sre", sre_cfg.clone()),
        ("standard_twin", sre_cfg.standard_twin()),
        ("reference_unet", UNetConfig::reference_unet()),
    ];
    let mut out = Vec::new();
    let mut csv = String::from(
        "net,layer,kind,c_in,c_out,k,bands,height,width,params,dense_mults,band_pooled_mults\n",
    );
    for (role, c) in entries {
        let net = build_unet::<f32>(&c, 0)?;
        let report = count_flops(&net, size, size)?;
        for l in &report.layers {
            if let Some(b) = l.bands {
                let want = l.c_out * l.c_in * b + if c.bias { l.c_out } else { 0 };
                if l.params != want {
                    return Err(CliError::Gate(format!(
                        "{role}/{}: {} params, expected {want}",
                        l.name, l.params
                    )));
                }
            }
            writeln!(
                csv,
                "{role},{},{},{},{},{},{},{},{},{},{},{}",
                l.name,
                l.kind,
                l.c_in,
                l.c_out,
                l.k,
                l.bands.map_or(String::new(), |b| b.to_string()),
                l.height,
                l.width,
                l.params,
                l.dense.mults,
                l.band_pooled.mults
            )
            .unwrap();
        }
        println!(
            "{role:>15}: k={:?} base={} params={} ({:.3}M)  mults/{size}²: dense {:.3e}, band-pooled {:.3e}",
            c.k_list,
            c.base_channels,
            report.total_params,
            report.total_params as f64 / 1e6,
            report.total_dense.mults as f64,
            report.total_band_pooled.mults as f64
        );
        out.push(CountEntry {
            role,
            config: c,
            report,
        });
    }
    let (sre, twin) = (out[0].report.total_params, out[1].report.total_params);
    if cfg.train.net.conv_type == sre_unet::ConvType::Sre && sre >= twin {
        return Err(CliError::Gate(format!(
            "SRE net has {sre} params, matched twin {twin}"
        )));
    }
    if let Some(dir) = dir {
        write_json(&dir.join("count.json"), &out)?;
        write_text(&dir.join("count_layers.csv"), &csv)?;
        dir.commit("ok")?;
    }
    Ok(())
}

fn time_min<R>(repeats: usize, mut f: impl FnMut() -> R) -> (f64, R) {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let r = f();
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(r);
    }
    (best, last.expect("at least one repeat"))
}

pub fn bench(cfg: &RunConfig, dir: RunDir) -> Result<(), CliError> {
    let mut csv = String::from(
        "n,c_in,c_out,size,k,bands,path,threads,seconds,mults,adds,max_abs_diff_vs_ref\n",
    );
    let spec = ConvSpec::same();
    for (si, s) in cfg.bench.shapes.iter().enumerate() {
        let part = build_band_partition(s.k)?;
        let b = part.bands();
        let mut r = rng::stream(cfg.train.seed, BENCH_DOMAIN, si as u64);
        let x = Tensor4::from_fn([s.n, s.c_in, s.size, s.size], |_, _, _, _| {
            r.gen_range(-1.0f32..1.0)
        });
        let theta = BandTheta::new(
            s.c_out,
            s.c_in,
            b,
            (0..s.c_out * s.c_in * b)
                .map(|_| r.gen_range(-0.5f32..0.5))
                .collect(),
        )?;
        let bias: Vec<f32> = (0..s.c_out).map(|_| r.gen_range(-0.1f32..0.1)).collect();
        let dense = expand_theta(&theta, &part)?;
        let params = SreConvParams::new(theta, Some(bias.clone()))?;

        let run = |path: &str| -> Result<(f64, Tensor4<f32>, u64, u64), CliError> {
            let counter = OpCounter::new();
            let (t, y) = time_min(cfg.bench.repeats, || {
                counter.reset();
                match path {
                    "conv2d_ref" => {
                        conv2d_ref_counted(&x, &dense, Some(&bias), &spec, Some(&counter))
                    }
                    "conv2d_fast" => {
                        conv2d_fast_counted(&x, &dense, Some(&bias), &spec, Some(&counter))
                    }
                    _ => sre_conv_band_pooled_counted(&x, &params, &part, &spec, &counter),
                }
            });
            Ok((t, y?, counter.mults(), counter.adds()))
        };
        let (t_ref, y_ref, m_ref, a_ref) = run("conv2d_ref")?;
        let mut rows = vec![("conv2d_ref", t_ref, m_ref, a_ref, 0.0)];
        for path in ["conv2d_fast", "sre_conv_band_pooled"] {
            let (t, y, m, a) = run(path)?;
            rows.push((path, t, m, a, y.max_abs_diff(&y_ref)));
        }
        for (path, t, m, a, d) in rows {
            writeln!(
                csv,
                "{},{},{},{},{},{b},{path},{},{t:.6},{m},{a},{d:.3e}",
                s.n,
                s.c_in,
                s.c_out,
                s.size,
                s.k,
                par::threads()
            )
            .unwrap();
            println!(
                "k={:<2} {path:<21} {:>9.3} ms  mults {m:>12}  diff {d:.2e}",
                s.k,
                t * 1e3
            );
        }
    }
    write_text(&dir.join("bench.csv"), &csv)?;
    dir.commit("ok")?;
    Ok(())
}
