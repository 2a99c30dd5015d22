//! The four commands behind the CLI surface.

use crate::config::Config;
use crate::data::{self, fmt_f64, DatasetTable, LabelColumn, LabelKind};
use gptape::adgraph::Value;
use gptape::datasets::{class_blobs, smooth_regression, BlobConfig};
use gptape::error::{Error, Result};
use gptape::inference::{hmc_sample, minimize, HmcConfig, Mode, Objective, TraceRow};
use gptape::kernels::{parse_kernel, KernelExpr};
use gptape::models::{
    Dataset, GpmcModel, GprModel, ModelArtifact, SgpmcModel, SgprModel, SvgpModel, VgpModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct CommonArgs {
    pub seed: u64,
    pub out: PathBuf,
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn load_table(cfg: &Config, seed: u64) -> Result<DatasetTable> {
    let spec = cfg.require("data")?;
    if let Some(kind) = spec.strip_prefix("synthetic:") {
        let n = cfg.usize_or("synthetic.n", 300)?;
        let d = cfg.usize_or("synthetic.d", 2)?;
        let noise = cfg.f64_or("synthetic.noise", 0.6)?;
        return match kind {
            "blobs" => {
                let classes = cfg.usize_or("synthetic.classes", 3)?;
                let center_scale = cfg.f64_or("synthetic.center_scale", 3.0)?;
                let d = class_blobs(&BlobConfig {
                    classes,
                    n,
                    input_dim: d,
                    center_scale,
                    noise,
                    seed,
                });
                Ok(DatasetTable {
                    x: d.x,
                    y: d.y,
                    label_kind: LabelKind::IntegerClass,
                })
            }
            "regression" => {
                let d = smooth_regression(n, d, noise, seed);
                Ok(DatasetTable {
                    x: d.x,
                    y: d.y,
                    label_kind: LabelKind::Real,
                })
            }
            other => Err(Error::Parse(format!("unknown synthetic dataset {other:?}"))),
        };
    }
    if spec == "idx" {
        let images = cfg.require("data.images")?;
        let labels = cfg.require("data.labels")?;
        return data::load_idx(Path::new(images), Path::new(labels));
    }
    let header = cfg.bool_or("header", false)?;
    let label = match cfg.get("label_column") {
        None | Some("last") => LabelColumn::Last,
        Some(s) => LabelColumn::Index(s.parse().map_err(|_| {
            Error::Parse(format!("label_column: expected `last` or an index, got {s:?}"))
        })?),
    };
    data::load_csv(Path::new(spec), label, header)
}

fn load_dataset(cfg: &Config, seed: u64) -> Result<Dataset> {
    load_table(cfg, seed)?.into_dataset()
}

/// Discrete likelihoods need class-valued labels; catch the mismatch with
/// a dataset-level message before model construction.
fn check_label_kind(table: &DatasetTable, likelihood: &str) -> Result<()> {
    let discrete = likelihood == "bernoulli"
        || likelihood == "poisson"
        || likelihood.starts_with("multiclass");
    if discrete && table.label_kind == LabelKind::Real {
        return Err(Error::Data(format!(
            "likelihood {likelihood} expects integer labels, but the label column              holds real values"
        )));
    }
    Ok(())
}

fn kernel_expr(cfg: &Config) -> Result<KernelExpr> {
    parse_kernel(&cfg.str_or("kernel", "rbf()"))
}

/// Seeded inducing initialization: a random subset of the training rows.
fn init_inducing(data: &Dataset, m: usize, seed: u64) -> Result<Value> {
    if m == 0 || m > data.len() {
        return Err(Error::ModelConfig(format!(
            "inducing = {m} must be in 1..={}",
            data.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed_1d);
    let idx = rand::seq::index::sample(&mut rng, data.len(), m).into_vec();
    Ok(Value::from_fn(m, data.input_dim(), |i, j| data.x[(idx[i], j)]))
}

fn apply_fixes(store: &mut gptape::foundation::ParamStore, cfg: &Config) -> Result<()> {
    for name in cfg.fixed_params() {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::ModelConfig(format!("fix: unknown parameter {name:?}")))?;
        store.param_mut(id).fixed = true;
    }
    Ok(())
}

fn apply_priors(store: &mut gptape::foundation::ParamStore, cfg: &Config) -> Result<()> {
    for (name, prior) in cfg.priors()? {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::ModelConfig(format!("prior: unknown parameter {name:?}")))?;
        store.param_mut(id).prior = Some(prior);
    }
    Ok(())
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("iteration,objective,seconds\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{}\n",
            r.iteration,
            fmt_f64(r.objective),
            fmt_f64(r.seconds)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

enum FitModel {
    Gpr(GprModel),
    Sgpr(SgprModel),
    Vgp(VgpModel),
    Svgp(SvgpModel),
}

impl FitModel {
    fn artifact(&self) -> ModelArtifact {
        match self {
            FitModel::Gpr(m) => m.artifact(),
            FitModel::Sgpr(m) => m.artifact(),
            FitModel::Vgp(m) => m.artifact(),
            FitModel::Svgp(m) => m.artifact(),
        }
    }

    fn store_mut(&mut self) -> &mut gptape::foundation::ParamStore {
        match self {
            FitModel::Gpr(m) => &mut m.store,
            FitModel::Sgpr(m) => &mut m.store,
            FitModel::Vgp(m) => &mut m.store,
            FitModel::Svgp(m) => &mut m.store,
        }
    }

    fn minimize(&mut self, iters: usize, rate: f64, mode: Mode) -> Result<Vec<TraceRow>> {
        match self {
            FitModel::Gpr(m) => minimize(m, iters, rate, mode),
            FitModel::Sgpr(m) => minimize(m, iters, rate, mode),
            FitModel::Vgp(m) => minimize(m, iters, rate, mode),
            FitModel::Svgp(m) => minimize(m, iters, rate, mode),
        }
    }

    fn objective(&mut self) -> Result<f64> {
        Ok(match self {
            FitModel::Gpr(m) => -m.log_marginal()?,
            FitModel::Sgpr(m) => -m.bound()?,
            FitModel::Vgp(m) => -m.elbo()?,
            FitModel::Svgp(m) => -m.elbo(None)?,
        })
    }
}

/// The supported model/likelihood cells: exact and collapsed inference
/// need conjugacy, everything else is open.
fn check_table_cell(model: &str, likelihood: &str) -> Result<()> {
    if matches!(model, "gpr" | "sgpr") && likelihood != "gaussian" {
        return Err(Error::ModelConfig(format!(
            "{model} supports only the gaussian likelihood; the model table pairs \
             non-gaussian likelihoods with vgp/svgp (variational) or gpmc/sgpmc (MCMC)"
        )));
    }
    Ok(())
}

pub fn cmd_fit(cfg: &Config, args: &CommonArgs, resume: Option<&Path>) -> Result<()> {
    ensure_out(&args.out)?;
    let model_kind = cfg.require("model")?.to_string();
    let likelihood = cfg.str_or("likelihood", "gaussian");
    if matches!(model_kind.as_str(), "gpmc" | "sgpmc") {
        return Err(Error::ModelConfig(format!(
            "{model_kind} is trained by MCMC; use the sample command"
        )));
    }
    check_table_cell(&model_kind, &likelihood)?;
    let table = load_table(cfg, args.seed)?;
    check_label_kind(&table, &likelihood)?;
    let data = table.into_dataset()?;
    let kexpr = kernel_expr(cfg)?;
    let whiten = cfg.bool_or("whiten", true)?;

    let mut model = if let Some(path) = resume {
        let artifact = ModelArtifact::from_json(&std::fs::read_to_string(path)?)?;
        if artifact.model != model_kind {
            return Err(Error::ModelConfig(format!(
                "resume artifact holds a {} model, config says {model_kind}",
                artifact.model
            )));
        }
        match model_kind.as_str() {
            "gpr" => FitModel::Gpr(GprModel::from_artifact(&artifact, data)?),
            "sgpr" => FitModel::Sgpr(SgprModel::from_artifact(&artifact, data)?),
            "vgp" => FitModel::Vgp(VgpModel::from_artifact(&artifact, data)?),
            "svgp" => FitModel::Svgp(SvgpModel::from_artifact(&artifact, data)?),
            other => return Err(Error::ModelConfig(format!("unknown model {other:?}"))),
        }
    } else {
        match model_kind.as_str() {
            "gpr" => FitModel::Gpr(GprModel::new(data, &kexpr)?),
            "sgpr" => {
                let m = cfg.usize_or("inducing", 10)?;
                let z = init_inducing(&data, m, args.seed)?;
                FitModel::Sgpr(SgprModel::new(data, &kexpr, z)?)
            }
            "vgp" => FitModel::Vgp(VgpModel::new(data, &kexpr, &likelihood)?),
            "svgp" => {
                let m = cfg.usize_or("inducing", 10)?;
                let z = init_inducing(&data, m, args.seed)?;
                FitModel::Svgp(SvgpModel::new(data, &kexpr, &likelihood, z, whiten)?)
            }
            other => return Err(Error::ModelConfig(format!("unknown model {other:?}"))),
        }
    };
    apply_fixes(model.store_mut(), cfg)?;
    apply_priors(model.store_mut(), cfg)?;

    let iters = cfg.usize_or("iters", 100)?;
    let rate = cfg.f64_or("rate", 0.01)?;
    let minibatch = cfg.usize_or("minibatch", 0)?;
    let mode = if minibatch == 0 {
        Mode::FullBatch
    } else {
        Mode::Stochastic {
            batch_size: minibatch,
            seed: args.seed,
        }
    };
    let initial = model.objective()?;
    let trace = model.minimize(iters, rate, mode)?;
    let final_obj = model.objective()?;

    let artifact_path = args.out.join("model.json");
    std::fs::write(&artifact_path, model.artifact().to_json()?)?;
    write_trace(&args.out.join("trace.csv"), &trace)?;
    println!(
        "fit {model_kind}: objective {initial:.6} -> {final_obj:.6} over {iters} iterations"
    );
    println!("artifact: {}", artifact_path.display());
    Ok(())
}

/// A placeholder dataset for artifacts whose prediction path never touches
/// training data (SVGP predicts from Z and the variational state alone).
fn placeholder_data(a: &ModelArtifact) -> Result<Dataset> {
    let z = a
        .z
        .clone()
        .ok_or_else(|| Error::ModelConfig("artifact is missing z".into()))?;
    let y = Value::zeros(z.rows(), 1);
    Dataset::new(z, y)
}

pub fn cmd_predict(
    artifact_path: &Path,
    input: &Path,
    cfg: Option<&Config>,
    args: &CommonArgs,
) -> Result<()> {
    ensure_out(&args.out)?;
    let artifact = ModelArtifact::from_json(&std::fs::read_to_string(artifact_path)?)?;
    let header = cfg.map_or(Ok(false), |c| c.bool_or("header", false))?;
    let xnew = data::load_features(input, header)?;

    let needs_data = matches!(artifact.model.as_str(), "gpr" | "sgpr" | "vgp");
    let dataset = if needs_data {
        let cfg = cfg.ok_or_else(|| {
            Error::ModelConfig(format!(
                "{} prediction conditions on the training data; pass --config with its data keys",
                artifact.model
            ))
        })?;
        load_dataset(cfg, args.seed)?
    } else {
        placeholder_data(&artifact)?
    };

    let (mean, var) = match artifact.model.as_str() {
        "gpr" => GprModel::from_artifact(&artifact, dataset)?.predict_y(&xnew)?,
        "sgpr" => SgprModel::from_artifact(&artifact, dataset)?.predict_y(&xnew)?,
        "vgp" => VgpModel::from_artifact(&artifact, dataset)?.predict_y(&xnew)?,
        "svgp" => SvgpModel::from_artifact(&artifact, dataset)?.predict_y(&xnew)?,
        other => {
            return Err(Error::ModelConfig(format!(
                "prediction is not defined for {other:?} artifacts; draw posterior \
                 samples with the sample command instead"
            )))
        }
    };

    let path = args.out.join("predictions.csv");
    if mean.cols() > 1 {
        // multiclass: per-class probabilities
        let header: Vec<String> = (0..mean.cols()).map(|c| format!("p_{c}")).collect();
        let rows: Vec<Vec<f64>> = (0..mean.rows()).map(|i| mean.row(i).to_vec()).collect();
        data::write_csv(&path, &header.join(","), &rows)?;
    } else {
        let rows: Vec<Vec<f64>> = (0..mean.rows())
            .map(|i| vec![mean[(i, 0)], var[(i, 0)]])
            .collect();
        data::write_csv(&path, "mean,variance", &rows)?;
    }
    println!("predictions: {}", path.display());
    Ok(())
}

pub fn cmd_sample(cfg: &Config, args: &CommonArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let model_kind = cfg.require("model")?.to_string();
    if !matches!(model_kind.as_str(), "gpmc" | "sgpmc") {
        return Err(Error::ModelConfig(format!(
            "sample drives gpmc or sgpmc; {model_kind} is trained with fit"
        )));
    }
    let data = load_dataset(cfg, args.seed)?;
    let kexpr = kernel_expr(cfg)?;
    let likelihood = cfg.str_or("likelihood", "gaussian");

    // `hmc.samples` counts total iterations; burn-in rows are discarded,
    // so the chain file holds samples - burn rows.
    let total = cfg.usize_or("hmc.samples", 1000)?;
    let burn = cfg.usize_or("hmc.burn", 100)?;
    if burn >= total {
        return Err(Error::ModelConfig(format!(
            "hmc.burn = {burn} must be below hmc.samples = {total}"
        )));
    }
    let hmc_cfg = HmcConfig {
        step_size: cfg.f64_or("hmc.step", 0.1)?,
        leapfrog_steps: cfg.usize_or("hmc.leapfrog", 10)?,
        samples: total - burn,
        burn_in: burn,
        seed: args.seed,
    };

    let chain_path = args.out.join("chain.csv");
    let chain = match model_kind.as_str() {
        "gpmc" => {
            let mut m = GpmcModel::new(data, &kexpr, &likelihood)?;
            apply_fixes(&mut m.store, cfg)?;
            apply_priors(&mut m.store, cfg)?;
            m.validate_priors()?;
            let header = chain_header(&m.store, m.v.len());
            let init = m.position();
            let chain = hmc_sample(&mut m, &init, &hmc_cfg)?;
            let rows = chain_rows(&chain, |pos| {
                m.set_position(pos).expect("chain positions are valid");
                m.constrained_params()
            });
            write_chain(&chain_path, &header, &rows)?;
            chain
        }
        _ => {
            let m_ind = cfg.usize_or("inducing", 10)?;
            let z = init_inducing(&data, m_ind, args.seed)?;
            let mut m = SgpmcModel::new(data, &kexpr, &likelihood, z)?;
            apply_fixes(&mut m.store, cfg)?;
            apply_priors(&mut m.store, cfg)?;
            m.validate_priors()?;
            let header = chain_header(&m.store, m.v.len());
            let init = m.position();
            let chain = hmc_sample(&mut m, &init, &hmc_cfg)?;
            let rows = chain_rows(&chain, |pos| {
                m.set_position(pos).expect("chain positions are valid");
                m.constrained_params()
            });
            write_chain(&chain_path, &header, &rows)?;
            chain
        }
    };
    println!(
        "sampled {} draws (accept rate {:.3}, {} divergences): {}",
        chain.samples.len(),
        chain.accept_rate(),
        chain.divergences,
        chain_path.display()
    );
    Ok(())
}

fn chain_header(store: &gptape::foundation::ParamStore, v_len: usize) -> String {
    let mut cols = vec!["target".to_string()];
    for id in store.ids() {
        let p = store.param(id);
        if p.fixed {
            continue;
        }
        if p.len() == 1 {
            cols.push(p.name.clone());
        } else {
            for i in 0..p.len() {
                cols.push(format!("{}.{i}", p.name));
            }
        }
    }
    for i in 0..v_len {
        cols.push(format!("v.{i}"));
    }
    cols.join(",")
}

/// One row per retained sample: target value, constrained hyperparameters,
/// whitened latents.
fn chain_rows(
    chain: &gptape::inference::Chain,
    mut constrained_at: impl FnMut(&[f64]) -> Vec<(String, Vec<f64>)>,
) -> Vec<Vec<f64>> {
    chain
        .samples
        .iter()
        .zip(&chain.targets)
        .map(|(pos, target)| {
            let params = constrained_at(pos);
            // elementwise transforms: the free hyperparameter block has the
            // same length as its constrained values
            let param_dim: usize = params.iter().map(|(_, v)| v.len()).sum();
            let mut row = Vec::with_capacity(1 + pos.len());
            row.push(*target);
            for (_, vals) in &params {
                row.extend_from_slice(vals);
            }
            row.extend_from_slice(&pos[param_dim..]);
            row
        })
        .collect()
}

fn write_chain(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    data::write_csv(path, header, rows)
}

pub struct BenchRow {
    pub config_id: String,
    pub threads: usize,
    pub minibatch: usize,
    pub inducing: usize,
    pub repeats: usize,
    pub iterations: usize,
    pub ips_mean: f64,
    pub ips_std: f64,
}

/// The throughput protocol: per (thread count x minibatch size)
/// configuration, run the stochastic training loop for a fixed iteration
/// count, repeated; only the iteration loop is timed.
pub fn run_bench(cfg: &Config, seed: u64) -> Result<Vec<BenchRow>> {
    let data = if cfg.get("data").is_some() {
        load_dataset(cfg, seed)?
    } else {
        class_blobs(&BlobConfig::benchmark_default(seed))
    };
    let classes = data
        .y
        .data()
        .iter()
        .fold(0usize, |acc, &v| acc.max(v as usize + 1))
        .max(2);
    let likelihood = format!("multiclass:{classes}");

    let thread_counts = cfg.usize_list_or("bench.threads", &[1, 2, 3, 4, 5, 6])?;
    let batch_sizes = cfg.usize_list_or("bench.minibatch", &[200])?;
    let m = cfg.usize_or("bench.inducing", 100)?;
    let iters = cfg.usize_or("bench.iters", 50)?;
    let repeats = cfg.usize_or("bench.repeats", 5)?;
    let rate = cfg.f64_or("bench.rate", 0.001)?;
    let kexpr = kernel_expr(cfg)?;
    if repeats == 0 {
        return Err(Error::ModelConfig("bench.repeats must be >= 1".into()));
    }
    for &t in &thread_counts {
        if t == 0 {
            return Err(Error::ModelConfig("thread counts must be >= 1".into()));
        }
    }

    let mut rows = Vec::new();
    for &threads in &thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::ModelConfig(format!("thread pool: {e}")))?;
        for &batch in &batch_sizes {
            let batch = batch.min(data.len());
            let z = init_inducing(&data, m, seed)?;
            let mut model = SvgpModel::new(data.clone(), &kexpr, &likelihood, z, true)?;
            // graph construction happens here, outside the timed region
            let warm: Vec<usize> = (0..batch).collect();
            let _ = pool.install(|| model.value_and_grad(Some(&warm)))?;
            let init_state = model.state();

            let mut ips = Vec::with_capacity(repeats);
            for repeat in 0..repeats {
                model.set_state(&init_state)?;
                let mode = Mode::Stochastic {
                    batch_size: batch,
                    seed: seed.wrapping_add(repeat as u64),
                };
                let start = Instant::now();
                pool.install(|| minimize(&mut model, iters, rate, mode))?;
                let elapsed = start.elapsed().as_secs_f64();
                ips.push(iters as f64 / elapsed);
            }
            let mean = ips.iter().sum::<f64>() / repeats as f64;
            let std = if repeats > 1 {
                (ips.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (repeats as f64 - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            rows.push(BenchRow {
                config_id: format!("t{threads}-b{batch}"),
                threads,
                minibatch: batch,
                inducing: m,
                repeats,
                iterations: iters,
                ips_mean: mean,
                ips_std: std,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_bench(cfg: &Config, args: &CommonArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let rows = run_bench(cfg, args.seed)?;
    let path = args.out.join("bench.csv");
    let mut out = String::from(
        "config,threads,minibatch,inducing,repeats,iterations,ips_mean,ips_std\n",
    );
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.config_id,
            r.threads,
            r.minibatch,
            r.inducing,
            r.repeats,
            r.iterations,
            fmt_f64(r.ips_mean),
            fmt_f64(r.ips_std)
        ));
    }
    let mut f = std::fs::File::create(&path)?;
    f.write_all(out.as_bytes())?;
    for r in &rows {
        println!(
            "{:>10}  {:>7.2} ± {:>6.2} iterations/s",
            r.config_id, r.ips_mean, r.ips_std
        );
    }
    println!("benchmark table: {}", path.display());
    Ok(())
}
