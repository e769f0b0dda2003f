use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use velo_core::baselines::{best_lr, lr_grid, lr_sweep_with};
use velo_core::eval_harness::{
    aggregate_report, batch_sweep, build_envelope, continuation, fit_timing, measure_velo_step, speedup, CurveStore,
    Speedup, SweepOptimizer,
};
use velo_core::meta_es::{meta_train as run_meta_train, MetaObjective, VeloObjective};
use velo_core::numkit::RngKey;
use velo_core::task_zoo::cfgtext::Value;
use velo_core::task_zoo::{Family, Problem, Task};
use velo_core::train::{train, LearningCurve};
use velo_core::velo_net::{init_meta_params, load_checkpoint, save_checkpoint, MetaParams, VeloOptimizer};
use velo_dist::{serve, worker_loop, Client, FixedTasks, LearnerConfig, LearnerCore, Request, Response, WorkerConfig, ZooTasks};

use crate::settings::Settings;

fn tasks(s: &Settings) -> Result<Vec<Arc<dyn Problem>>> {
    if s.tasks.is_empty() {
        bail!("config lists no `family` tasks");
    }
    s.tasks
        .iter()
        .map(|c| Ok(Arc::new(Task::from_config(c)?) as Arc<dyn Problem>))
        .collect()
}

fn initial_theta(s: &Settings, seed: u64, theta: Option<&Path>) -> Result<MetaParams> {
    match theta {
        Some(p) => Ok(load_checkpoint(p)?),
        None => Ok(init_meta_params(RngKey::new(seed).fold_label("theta_init"), s.meta.dims())),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Synchronous meta-training; checkpoints land in `out/ckpt/`.
pub fn meta_train(s: &Settings, seed: u64, out: &Path, theta: Option<&Path>) -> Result<PathBuf> {
    let cfg = s.meta.train_config(seed)?;
    let theta0 = initial_theta(s, seed, theta)?;
    let dims = theta0.dims;
    let objectives: Vec<Arc<dyn MetaObjective>> = tasks(s)?
        .into_iter()
        .map(|p| {
            let mut o = VeloObjective::new(p, dims);
            o.eval_batches = s.meta.eval_batches;
            Arc::new(o) as Arc<dyn MetaObjective>
        })
        .collect();
    fs::create_dir_all(out)?;
    let mut log = BufWriter::new(File::create(out.join("meta_train.jsonl"))?);
    let every = s.meta.checkpoint_every;
    let learner = run_meta_train(&cfg, &objectives, theta0.flat, |l, entry| {
        let line = serde_json::to_string(entry).expect("outer log serializes");
        writeln!(log, "{line}").map_err(|e| velo_core::Error::io(out.join("meta_train.jsonl"), e))?;
        eprintln!(
            "outer step {:>5}  mean meta-loss {:.5}  skipped {}",
            l.version, entry.mean_meta_loss, entry.skipped
        );
        if every > 0 && l.version % every == 0 {
            let p = MetaParams::from_flat(dims, l.theta.clone())?;
            save_checkpoint(&p, &out.join("ckpt").join(format!("step_{}.theta", l.version)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let path = out.join("theta.theta");
    save_checkpoint(&MetaParams::from_flat(dims, learner.theta)?, &path)?;
    Ok(path)
}

/// Run the learner until `outer_steps` updates have been applied, then
/// write `out/theta.theta`.
pub fn serve_learner(s: &Settings, seed: u64, out: &Path, listen: &str, theta: Option<&Path>) -> Result<PathBuf> {
    let theta0 = initial_theta(s, seed, theta)?;
    let core = LearnerCore::new(
        theta0,
        LearnerConfig {
            batch: s.meta.batch,
            staleness_limit: s.meta.staleness_limit,
            outer_lr: s.meta.outer_lr,
            checkpoint_every: s.meta.checkpoint_every,
            out_dir: Some(out.to_path_buf()),
        },
    )?;
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    let server = serve(listener, core)?;
    eprintln!("learner listening on {}", server.addr());
    let mut client = Client::connect(&server.addr().to_string())?;
    loop {
        if let Response::Status(st) = client.call(&Request::Status)? {
            if st.version >= s.meta.outer_steps {
                break;
            }
        }
        thread::sleep(Duration::from_millis(100));
    }
    drop(client);
    let core = server.shutdown();
    let path = out.join("theta.theta");
    save_checkpoint(&core.theta(), &path)?;
    Ok(path)
}

pub fn run_worker(s: &Settings, seed: u64, learner: &str, worker_id: Option<u64>) -> Result<velo_dist::WorkerStats> {
    let mut cfg = WorkerConfig::new(worker_id.unwrap_or(s.worker.worker_id), learner, s.meta.train_config(seed)?);
    cfg.cache_size = s.worker.cache_size;
    cfg.resample_after = s.worker.resample_after;
    cfg.resample_prob = s.worker.resample_prob;
    cfg.max_gradients = (s.worker.max_gradients > 0).then_some(s.worker.max_gradients);
    let stop = AtomicBool::new(false);
    let stats = if s.tasks.is_empty() {
        let mut src = ZooTasks {
            family_weights: Family::ALL.iter().map(|&f| (f, 1.0)).collect(),
            dims: s.meta.dims(),
        };
        worker_loop(&cfg, &mut src, &stop)?
    } else {
        let objectives = tasks(s)?
            .into_iter()
            .map(|p| Arc::new(VeloObjective::new(p, s.meta.dims())) as Arc<dyn MetaObjective>)
            .collect();
        worker_loop(&cfg, &mut FixedTasks::new(objectives), &stop)?
    };
    Ok(stats)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub task: String,
    pub optimizer: String,
    pub best_lr: f64,
    pub mean_final_loss: f64,
}

/// Learning-rate sweeps for every configured baseline on every task;
/// curves go to the store under `out`.
pub fn baseline_sweep(s: &Settings, out: &Path) -> Result<Vec<SweepSummary>> {
    let store = CurveStore::new(out);
    let lrs = s.sweep.lrs.clone().unwrap_or_else(lr_grid);
    if lrs.is_empty() {
        bail!("sweep has no learning rates");
    }
    let mut rows = Vec::new();
    for task in tasks(s)? {
        for &kind in &s.sweep.optimizers {
            let curves = lr_sweep_with(kind, &lrs, task.as_ref(), s.sweep.steps, &s.sweep.seeds, s.sweep.record_every)?;
            for c in &curves {
                store.put(c)?;
            }
            let (lr, loss) = best_lr(&curves, &lrs, s.sweep.seeds.len());
            rows.push(SweepSummary {
                task: task.name(),
                optimizer: kind.name().to_string(),
                best_lr: lr,
                mean_final_loss: loss,
            });
        }
    }
    let mut csv = String::from("task,optimizer,best_lr,mean_final_loss\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.task, r.optimizer, r.best_lr, r.mean_final_loss);
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    Ok(rows)
}

/// Train every task with fixed meta-parameters over the evaluation seeds.
pub fn apply(s: &Settings, out: &Path, theta: &Path) -> Result<Vec<LearningCurve>> {
    let theta = Arc::new(load_checkpoint(theta)?);
    let store = CurveStore::new(out);
    let mut curves = Vec::new();
    for task in tasks(s)? {
        for &sd in &s.eval.seeds {
            let mut opt = VeloOptimizer::new(theta.clone());
            let mut c = train(task.as_ref(), &mut opt, s.eval.steps, sd, s.eval.record_every)?;
            c.optimizer_id = s.eval.target.clone();
            store.put(&c)?;
            curves.push(c);
        }
    }
    Ok(curves)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Speedups {
    /// optimizer id → task id → speedup.
    pub optimizers: BTreeMap<String, BTreeMap<String, Speedup>>,
}

/// Speedup of every target curve group against the baseline envelope of
/// its task; writes `speedups.json` and `speedups.csv`.
pub fn normalize(s: &Settings, out: &Path) -> Result<Speedups> {
    let store = CurveStore::new(out);
    let mut result = Speedups::default();
    for task in store.tasks()? {
        let curves = store.load_task(&task)?;
        let (base, rest): (Vec<_>, Vec<_>) = curves.into_iter().partition(|c| c.optimizer_id.starts_with(&s.eval.baseline));
        if base.is_empty() {
            eprintln!("skipping {task}: no `{}` curves", s.eval.baseline);
            continue;
        }
        let env = build_envelope(&base, s.eval.ema_decay)?;
        let mut groups: BTreeMap<String, Vec<LearningCurve>> = BTreeMap::new();
        for c in rest.into_iter().filter(|c| c.optimizer_id.starts_with(&s.eval.target)) {
            groups.entry(c.optimizer_id.clone()).or_default().push(c);
        }
        for (opt, runs) in groups {
            let loss = runs.iter().map(LearningCurve::final_loss).sum::<f64>() / runs.len() as f64;
            let steps = runs.iter().map(LearningCurve::final_step).max().unwrap_or(0);
            match speedup(loss, steps, &env) {
                Ok(sp) => {
                    result.optimizers.entry(opt).or_default().insert(task.clone(), sp);
                }
                Err(e) => eprintln!("skipping {task}/{opt}: {e}"),
            }
        }
    }
    write_json(&out.join("speedups.json"), &result)?;
    let mut csv = String::from("optimizer,task,speedup,kind\n");
    for (opt, per_task) in &result.optimizers {
        for (task, sp) in per_task {
            let _ = writeln!(csv, "{opt},{task},{},{:?}", sp.value, sp.kind);
        }
    }
    write_text(&out.join("speedups.csv"), &csv)?;
    Ok(result)
}

/// Aggregate `speedups.json` into `report.{csv,json,svg}`.
pub fn report(out: &Path) -> Result<velo_core::eval_harness::Report> {
    let path = out.join("speedups.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let sp: Speedups = serde_json::from_str(&text)?;
    let per_opt: BTreeMap<String, Vec<f64>> = sp
        .optimizers
        .into_iter()
        .map(|(k, v)| (k, v.into_values().map(|s| s.value).collect()))
        .collect();
    let rep = aggregate_report(&per_opt);
    rep.write(out)?;
    Ok(rep)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationSummary {
    pub task: String,
    pub mode: String,
    pub loss_at_splice: f64,
    pub final_loss: f64,
}

pub fn continue_runs(s: &Settings, seed: u64, out: &Path, theta: &Path) -> Result<Vec<ContinuationSummary>> {
    let theta = Arc::new(load_checkpoint(theta)?);
    let store = CurveStore::new(out);
    let c = &s.continuation;
    let mut rows = Vec::new();
    for task in tasks(s)? {
        for &mode in &c.modes {
            let run = continuation(task.as_ref(), theta.clone(), mode, c.t1, c.t2, seed)?;
            store.put(&run.curve)?;
            let splice = run.curve.records.iter().find(|r| r.step == c.t1).map(|r| r.loss).unwrap_or(f64::NAN);
            rows.push(ContinuationSummary {
                task: task.name(),
                mode: mode.name().to_string(),
                loss_at_splice: splice,
                final_loss: run.curve.final_loss(),
            });
        }
    }
    write_json(&out.join("continuation.json"), &rows)?;
    Ok(rows)
}

pub fn batch_sweep_cmd(s: &Settings, out: &Path, theta: Option<&Path>) -> Result<Vec<velo_core::eval_harness::BatchSweepRow>> {
    let Some(base) = s.tasks.first().cloned() else {
        bail!("batch sweep needs one `family` task");
    };
    let mut optimizers = Vec::new();
    for name in &s.batch_sweep.optimizers {
        if name == "velo" {
            let Some(p) = theta else {
                bail!("batch sweep over `velo` needs --theta");
            };
            optimizers.push(SweepOptimizer::Velo(Arc::new(load_checkpoint(p)?)));
        } else {
            optimizers.push(SweepOptimizer::Baseline(velo_core::baselines::BaselineKind::parse(name)?));
        }
    }
    let make = move |b: usize| -> velo_core::Result<Arc<dyn Problem>> {
        let cfg = base.clone().set_static("batch_size", Value::Int(b as i64));
        Ok(Arc::new(Task::from_config(&cfg)?))
    };
    let lrs = s.sweep.lrs.clone().unwrap_or_else(lr_grid);
    let rows = batch_sweep(
        &make,
        s.batch_sweep.examples,
        &s.batch_sweep.batch_sizes,
        &optimizers,
        &lrs,
        &s.batch_sweep.seeds,
    )?;
    let mut csv = String::from("optimizer,batch,steps,final_loss,best_lr\n");
    for r in &rows {
        let lr = r.best_lr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{lr}", r.optimizer, r.batch, r.steps, r.final_loss);
    }
    write_text(&out.join("batch_sweep.csv"), &csv)?;
    write_json(&out.join("batch_sweep.json"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingOutput {
    pub measurements: Vec<(f64, f64)>,
    pub fit: velo_core::eval_harness::TimingFit,
}

pub fn fit_timing_cmd(s: &Settings, seed: u64, out: &Path, theta: Option<&Path>) -> Result<TimingOutput> {
    let theta = initial_theta(s, seed, theta)?;
    let mut measurements = Vec::new();
    for &n in &s.timing.params {
        let t = measure_velo_step(&theta, n, s.timing.reps)?;
        eprintln!("{n:>10} params  {t:.3e} s/step");
        measurements.push((n as f64, t));
    }
    let fit = fit_timing(&measurements)?;
    let result = TimingOutput { measurements, fit };
    write_json(&out.join("timing.json"), &result)?;
    Ok(result)
}
