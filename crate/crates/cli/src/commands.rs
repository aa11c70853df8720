use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use metrix::analysis::{
    lambda_grid, positivity_curve, MetricsReport, PositivityConfig, UNIFORMITY_T,
};
use metrix::data::{Dataset, GaussianSpec};
use metrix::loss::PluginKind;
use metrix::mixup::{MixPairPolicy, MixupTypes};
use metrix::trainer::{init_model, train as train_model, RunState, RECALL_KS};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::{Axis, CliError};

/// Recall cutoffs written to `metrics.csv`.
const CSV_KS: [usize; 3] = [1, 2, 4];

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut out = create(path)?;
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn gen_data(out: &Path, spec: &GaussianSpec) -> Result<(), CliError> {
    let dataset = Dataset::generate_gaussian(spec).map_err(|e| CliError::Config(e.to_string()))?;
    for (name, split) in [("examples.txt", false), ("split.txt", true)] {
        let path = out.join(name);
        let mut w = create(&path)?;
        if split {
            dataset.write_split(&mut w)?;
        } else {
            dataset.write_examples(&mut w)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    println!(
        "wrote {} examples of {} classes to {}",
        dataset.len(),
        dataset.class_count(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Constants {
    alignment_exponent: f64,
    uniformity_t: f64,
    recall_ks: Vec<usize>,
}

#[derive(Serialize)]
struct ReservoirSummary {
    capacity: usize,
    seen: u64,
    kept: usize,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a ExperimentConfig,
    final_metrics: Option<&'a MetricsReport>,
    constants: Constants,
    reservoir: ReservoirSummary,
}

fn metrics_csv(state: &RunState, w: &mut impl Write) -> std::io::Result<()> {
    let ks: Vec<String> = CSV_KS.iter().map(|k| format!("recall@{k}")).collect();
    writeln!(
        w,
        "epoch,train_loss,{},alignment,uniformity,utilization",
        ks.join(",")
    )?;
    for log in &state.log {
        let Some(m) = &log.metrics else { continue };
        write!(w, "{},{}", log.epoch, log.train_loss)?;
        for k in CSV_KS {
            write!(w, ",{}", m.recall(k).unwrap_or(f64::NAN))?;
        }
        writeln!(w, ",{},{},{}", m.alignment, m.uniformity, m.utilization)?;
    }
    Ok(())
}

pub fn train(out: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let cfg = cfg.resolved()?;
    let dataset = cfg.dataset(out)?;
    let state = train_model(&dataset, &cfg.train_config())?;
    let dir = cfg.run_dir(out);

    write_file(&dir.join("metrics.csv"), |w| metrics_csv(&state, w))?;
    for (epoch, model) in &state.checkpoints {
        let path = dir.join(format!("checkpoint-epoch-{epoch}.txt"));
        let mut w = create(&path)?;
        model.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    let path = dir.join("model.txt");
    let mut w = create(&path)?;
    state.model.write_checkpoint(&mut w)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let summary = RunSummary {
        config: &cfg,
        final_metrics: state.final_metrics(),
        constants: Constants {
            alignment_exponent: 2.0,
            uniformity_t: UNIFORMITY_T,
            recall_ks: RECALL_KS.to_vec(),
        },
        reservoir: ReservoirSummary {
            capacity: cfg.trainer.reservoir,
            seen: state.reservoir.seen(),
            kept: state.reservoir.entries().len(),
        },
    };
    write_file(&dir.join("run.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;

    if let Some(m) = state.final_metrics() {
        println!(
            "epoch {}: recall@1 {:.4} alignment {:.4} uniformity {:.4} utilization {:.4}",
            state.epoch,
            m.recall(1).unwrap_or(f64::NAN),
            m.alignment,
            m.uniformity,
            m.utilization
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

/// One ablation setting: the label written to the CSV and the config to train.
fn ablation_settings(
    cfg: &ExperimentConfig,
    axis: Axis,
    values: &str,
) -> Result<Vec<(String, ExperimentConfig)>, CliError> {
    let bad = |v: &str, why: String| CliError::Config(format!("--values: `{v}`: {why}"));
    let mut baseline = cfg.clone();
    baseline.mixup.w = 0.0;
    let mut out = vec![("baseline".to_string(), baseline)];
    for raw in values.split(',').map(str::trim) {
        if raw.is_empty() {
            return Err(bad(raw, "empty value".into()));
        }
        let mut c = cfg.clone();
        let label = match axis {
            Axis::K => {
                let k: usize = raw.parse().map_err(|e| bad(raw, format!("{e}")))?;
                c.mixup.k_hard = k;
                c.mixup.k_manifold = Some(k);
                k.to_string()
            }
            Axis::Pairs => {
                c.mixup.pairs = raw
                    .parse::<MixPairPolicy>()
                    .map_err(|e| bad(raw, e.to_string()))?;
                c.mixup.pairs.to_string()
            }
            Axis::Mixtype => {
                c.mixup.mix_type = raw
                    .parse::<MixupTypes>()
                    .map_err(|e| bad(raw, e.to_string()))?;
                c.mixup.mix_type.to_string()
            }
            Axis::W => {
                let w: f64 = raw.parse().map_err(|e| bad(raw, format!("{e}")))?;
                c.mixup.w = w;
                w.to_string()
            }
        };
        c.train_config()
            .validate()
            .map_err(|e| bad(raw, e.to_string()))?;
        out.push((label, c));
    }
    Ok(out)
}

pub fn ablate(
    out: &Path,
    cfg: &ExperimentConfig,
    axis: Axis,
    values: &str,
) -> Result<(), CliError> {
    if cfg.ablate.repeats == 0 {
        return Err(CliError::Config("--repeats: must be at least 1".into()));
    }
    let cfg = cfg.resolved()?;
    let dataset = cfg.dataset(out)?;
    let settings = ablation_settings(&cfg, axis, values)?;
    let repeats = cfg.ablate.repeats;
    let jobs: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|i| (0..repeats as u64).map(move |r| (i, r)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut tc = settings[i].1.train_config();
            tc.seed = tc.seed.wrapping_add(r);
            let state = train_model(&dataset, &tc)?;
            let m = state
                .final_metrics()
                .ok_or_else(|| CliError::Config("trainer: no evaluation epoch".into()))?;
            Ok(RECALL_KS
                .iter()
                .map(|&k| m.recall(k).unwrap_or(f64::NAN))
                .collect())
        })
        .collect::<Result<_, CliError>>()?;

    let axis_name = match axis {
        Axis::K => "k",
        Axis::Pairs => "pairs",
        Axis::Mixtype => "mixtype",
        Axis::W => "w",
    };
    let path = cfg.run_dir(out).join(format!("ablation-{axis_name}.csv"));
    write_file(&path, |w| {
        let ks: Vec<String> = RECALL_KS.iter().map(|k| format!("recall@{k}")).collect();
        writeln!(w, "axis,value,{}", ks.join(","))?;
        for (i, (label, _)) in settings.iter().enumerate() {
            let runs = &results[i * repeats..(i + 1) * repeats];
            write!(w, "{axis_name},{label}")?;
            for j in 0..RECALL_KS.len() {
                let mean = runs.iter().map(|r| r[j]).sum::<f64>() / repeats as f64;
                write!(w, ",{mean}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Parses `start:end:step`.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || {
        CliError::Config(format!(
            "positivity.grid: expected `start:end:step`, got `{text}`"
        ))
    };
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    lambda_grid(start, end, step).map_err(|e| CliError::Config(format!("positivity.grid: {e}")))
}

pub fn positivity(out: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let cfg = cfg.resolved()?;
    let (_, plugin) = cfg.loss.resolve()?;
    if plugin.kind != PluginKind::Ms {
        return Err(CliError::Config(format!(
            "loss.name: positivity needs `ms`, got `{}`",
            cfg.loss.name
        )));
    }
    let pc = PositivityConfig {
        grid: parse_grid(&cfg.positivity.grid)?,
        samples: cfg.positivity.n,
        mixup_type: cfg.positivity.mix_type,
        seed: cfg.positivity.seed,
    };
    if pc.samples == 0 {
        return Err(CliError::Config("positivity.n: must be at least 1".into()));
    }
    let dataset = cfg.dataset(out)?;
    let model = init_model(&dataset, &cfg.train_config())?;
    let curve = positivity_curve(&model, &dataset, &plugin, &pc)?;
    let path = cfg.run_dir(out).join("positivity.csv");
    write_file(&path, |w| {
        writeln!(w, "lambda,empirical,theoretical,n")?;
        for i in 0..curve.lambdas.len() {
            writeln!(
                w,
                "{},{},{},{}",
                curve.lambdas[i], curve.empirical[i], curve.theoretical[i], curve.samples
            )?;
        }
        Ok(())
    })?;
    println!("wrote {}", path.display());
    Ok(())
}
