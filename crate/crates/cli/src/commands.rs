//! Execution of resolved invocations.

use std::fs;
use std::path::{Path, PathBuf};

use ncct::config::{Mode, Precision, TrainConfig};
use ncct::dataset::{
    generate_toy_dataset, inject_asymmetric_noise, inject_symmetric_noise, load_dataset,
    save_dataset, sidecar_path, ConfusionPairs, Dataset, SplitTag, ToySpec,
};
use ncct::model::{load_checkpoint, save_checkpoint, ModelParams};
use ncct::report::{
    confusion_csv, confusion_text, metrics_csv, parse_metrics_csv, parse_sweep_csv, sweep_csv,
    LinePlot, MetricsRow, Series, SweepRow,
};
use ncct::trainer::{evaluate, run_parallel, train_with_hook, Metrics};
use ncct::Error;

use crate::manifest::{io_error, Invocation, NoiseKind};

/// The pairs table shipped with the tool.
pub const DEFAULT_PAIRS: &str = include_str!("../data/rafdb_pairs.txt");

type Result<T> = std::result::Result<T, Error>;

/// What a finished command produced.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub config_text: Option<String>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn parse_pairs(text: Option<&str>) -> Result<ConfusionPairs> {
    text.unwrap_or(DEFAULT_PAIRS).parse()
}

fn inject(d: &Dataset, kind: NoiseKind, rate: f64, pairs: Option<&str>, seed: u64) -> Result<Dataset> {
    match kind {
        NoiseKind::Sym => inject_symmetric_noise(d, rate, seed),
        NoiseKind::Asym => {
            let pairs = parse_pairs(pairs)?;
            if let Some((&s, &t)) = pairs.iter().find(|(&s, &t)| s.max(t) >= d.num_classes) {
                return Err(Error::InvalidArgument(format!(
                    "pair {s},{t} names a class outside 0..{}",
                    d.num_classes
                )));
            }
            inject_asymmetric_noise(d, rate, &pairs, seed)
        }
    }
}

fn load_train(path: &Path) -> Result<Dataset> {
    let d = load_dataset(path)?;
    if d.split != SplitTag::Train {
        return Err(Error::InvalidArgument(format!(
            "{} is tagged split={}, expected a training set",
            path.display(),
            d.split
        )));
    }
    Ok(d)
}

fn load_params(path: &Path, precision: Precision) -> Result<ModelParams<f64>> {
    let p = load_checkpoint(path)?;
    // Round-trip through the training precision so evaluation sees exactly
    // the values training evaluated.
    Ok(match precision {
        Precision::F32 => p.cast::<f32>().cast(),
        Precision::F64 => p,
    })
}

fn eval_in(params: &ModelParams<f64>, test: &Dataset, precision: Precision) -> Result<Metrics> {
    match precision {
        Precision::F32 => evaluate(&params.cast::<f32>(), test),
        Precision::F64 => evaluate(params, test),
    }
}

pub fn execute(inv: &Invocation) -> Result<Outcome> {
    match inv {
        Invocation::GenData {
            classes,
            per_class,
            size,
            variation,
            split,
            seed,
            out,
        } => {
            let split: SplitTag = split.parse()?;
            let d = generate_toy_dataset(&ToySpec {
                num_classes: *classes,
                per_class: *per_class,
                height: *size,
                width: *size,
                variation: *variation,
                seed: *seed,
            })?
            .with_split(split);
            save_dataset(&d, out)?;
            eprintln!("wrote {} samples ({classes} classes, {size}x{size}) to {}", d.len(), out.display());
            Ok(Outcome {
                outputs: vec![out.clone(), sidecar_path(out)],
                config_text: None,
            })
        }
        Invocation::InjectNoise {
            input,
            kind,
            rate,
            pairs,
            seed,
            out,
        } => {
            let d = load_dataset(input)?;
            let noisy = inject(&d, *kind, *rate, pairs.as_deref(), *seed)?;
            save_dataset(&noisy, out)?;
            println!("realized noise rate {:.3}", noisy.noise_rate());
            Ok(Outcome {
                outputs: vec![out.clone(), sidecar_path(out)],
                config_text: None,
            })
        }
        Invocation::Train {
            train,
            test,
            config,
            out,
        } => run_train(train, test, config, out),
        Invocation::Eval {
            checkpoint,
            test,
            precision,
            out,
        } => {
            let params = load_params(checkpoint, *precision)?;
            let test = load_dataset(test)?;
            let m = eval_in(&params, &test, *precision)?;
            print!("{}", confusion_text(&m.confusion, None));
            let mut outputs = vec![];
            if let Some(dir) = out {
                make_dir(dir)?;
                let (csv, txt) = (dir.join("confusion.csv"), dir.join("confusion.txt"));
                write(&csv, &confusion_csv(&m.confusion))?;
                write(&txt, &confusion_text(&m.confusion, None))?;
                outputs = vec![csv, txt];
            }
            Ok(Outcome {
                outputs,
                config_text: None,
            })
        }
        Invocation::SweepK {
            train,
            test,
            config,
            ks,
            modes,
            kind,
            rates,
            pairs,
            out,
        } => run_sweep(train, test, config, ks, modes, *kind, rates, pairs.as_deref(), out),
        Invocation::Report {
            metrics,
            checkpoint,
            test,
            sweep,
            precision,
            out,
        } => run_report(metrics, checkpoint, test, sweep.as_deref(), *precision, out),
    }
}

fn run_train(train: &Path, test: &Path, config: &TrainConfig, out: &Path) -> Result<Outcome> {
    let train_set = load_train(train)?;
    let test_set = load_dataset(test)?;
    make_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut outputs = vec![metrics_path.clone()];
    let mut rows: Vec<MetricsRow> = Vec::new();
    let total = config.epochs;
    let mut hook = |e: &ncct::trainer::EpochStats, p: &ModelParams<f64>| -> Result<()> {
        rows.push(e.into());
        write(&metrics_path, &metrics_csv(&rows))?;
        eprintln!(
            "epoch {:>3}/{total} acc {:.4} L_s {:.4} L_c {:.4} confident {:.3}",
            e.epoch, e.test_accuracy, e.mean_supervised, e.mean_consistency, e.confident_fraction
        );
        if config.checkpoint_every > 0 && e.epoch % config.checkpoint_every == 0 {
            let path = out.join(format!("epoch_{:03}.ncpt", e.epoch));
            save_checkpoint(p, &path)?;
            outputs.push(path);
        }
        Ok(())
    };
    let result = train_with_hook(config, &train_set, &test_set, &mut hook)?;
    let final_path = out.join("final.ncpt");
    save_checkpoint(&result.params, &final_path)?;
    outputs.push(final_path);
    println!(
        "max_acc {:.4} last5_mean {:.4}",
        result.max_accuracy, result.last5_mean
    );
    Ok(Outcome {
        outputs,
        config_text: Some(config.to_string()),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    train: &Path,
    test: &Path,
    config: &TrainConfig,
    ks: &[usize],
    modes: &[Mode],
    kind: NoiseKind,
    rates: &[f64],
    pairs: Option<&str>,
    out: &Path,
) -> Result<Outcome> {
    let clean = load_train(train)?;
    let test_set = load_dataset(test)?;
    for &k in ks {
        if k == 0 || k > clean.num_classes {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                clean.num_classes
            )));
        }
    }
    let noisy: Vec<Dataset> = rates
        .iter()
        .map(|&r| inject(&clean, kind, r, pairs, config.seed))
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        for &mode in modes {
            let k_values: Vec<Option<usize>> = if mode.uses_k() {
                ks.iter().map(|&k| Some(k)).collect()
            } else {
                vec![None]
            };
            for k in k_values {
                let c = TrainConfig {
                    mode,
                    k: k.unwrap_or(config.k),
                    ..config.clone()
                };
                jobs.push((ri, rate, k, c));
            }
        }
    }
    eprintln!("sweep: {} training runs", jobs.len());
    let rows: Vec<SweepRow> = run_parallel(jobs, |(ri, rate, k, c)| {
        let r = ncct::trainer::train(&c, &noisy[ri], &test_set)?;
        eprintln!(
            "  {} rate {rate} k {} -> last5_mean {:.4}",
            c.mode,
            k.map_or("-".into(), |k| k.to_string()),
            r.last5_mean
        );
        Ok(SweepRow {
            mode: c.mode,
            noise_kind: kind.name().into(),
            noise_rate: rate,
            k,
            seed: c.seed,
            max_acc: r.max_accuracy,
            last5_mean: r.last5_mean,
        })
    })?;
    make_dir(out)?;
    let csv_path = out.join("sweep.csv");
    let svg_path = out.join("sweep.svg");
    write(&csv_path, &sweep_csv(&rows))?;
    write(&svg_path, &sweep_plot(&rows).to_svg())?;
    Ok(Outcome {
        outputs: vec![csv_path, svg_path],
        config_text: Some(config.to_string()),
    })
}

fn percent(rate: f64) -> String {
    format!("{}%", (rate * 1000.0).round() / 10.0)
}

/// One curve of last-5 accuracy against k per (mode, noise rate); modes
/// that ignore k are drawn flat across the k range.
pub fn sweep_plot(rows: &[SweepRow]) -> LinePlot {
    let ks: Vec<f64> = rows.iter().filter_map(|r| r.k).map(|k| k as f64).collect();
    let (k0, k1) = ks
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &k| (a.min(k), b.max(k)));
    let modes: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.mode.name()).collect();
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let name = if modes.len() > 1 {
            format!("{} {}", r.mode, percent(r.noise_rate))
        } else {
            percent(r.noise_rate)
        };
        let points: Vec<(f64, f64)> = match r.k {
            Some(k) => vec![(k as f64, r.last5_mean)],
            None if k0 <= k1 => vec![(k0, r.last5_mean), (k1, r.last5_mean)],
            None => vec![(0.0, r.last5_mean)],
        };
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.extend(points),
            None => series.push(Series { name, points }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    LinePlot {
        title: "Effect of k".into(),
        x_label: "k".into(),
        y_label: "last-5 mean test accuracy".into(),
        series,
    }
}

fn run_report(
    metrics: &Path,
    checkpoint: &Path,
    test: &Path,
    sweep: Option<&Path>,
    precision: Precision,
    out: &Path,
) -> Result<Outcome> {
    let text = fs::read_to_string(metrics).map_err(|e| io_error(metrics, e))?;
    let rows = parse_metrics_csv(&text)?;
    let params = load_params(checkpoint, precision)?;
    let test_set = load_dataset(test)?;
    let m = eval_in(&params, &test_set, precision)?;
    make_dir(out)?;
    let table = confusion_text(&m.confusion, None);
    print!("{table}");
    let paths = [
        out.join("confusion.txt"),
        out.join("confusion.csv"),
        out.join("accuracy.svg"),
    ];
    write(&paths[0], &table)?;
    write(&paths[1], &confusion_csv(&m.confusion))?;
    let curve = |name: &str, f: fn(&MetricsRow) -> f64| Series {
        name: name.into(),
        points: rows.iter().map(|r| (r.epoch as f64, f(r))).collect(),
    };
    let plot = LinePlot {
        title: "Test accuracy by epoch".into(),
        x_label: "epoch".into(),
        y_label: "fraction".into(),
        series: vec![
            curve("test accuracy", |r| r.test_acc),
            curve("confident fraction", |r| r.confident_frac),
        ],
    };
    write(&paths[2], &plot.to_svg())?;
    let mut outputs = paths.to_vec();
    if let Some(sweep) = sweep {
        let text = fs::read_to_string(sweep).map_err(|e| io_error(sweep, e))?;
        let path = out.join("sweep.svg");
        write(&path, &sweep_plot(&parse_sweep_csv(&text)?).to_svg())?;
        outputs.push(path);
    }
    if let Some(last) = rows.last() {
        if last.test_acc != m.accuracy {
            eprintln!(
                "warning: checkpoint accuracy {} differs from the last metrics row {}",
                m.accuracy, last.test_acc
            );
        }
    }
    Ok(Outcome {
        outputs,
        config_text: None,
    })
}
