//! The six pipelines behind the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use unside::graph::{compute_stats, median_bandwidth, permutation_test, GraphEncoding, GraphInstance, PermutationTest};
use unside::io::{
    read_flat_dataset, read_graphs, write_calibration_csv, write_jsonl, write_loss_csv, GraphRecord, SampleRecord,
};
use unside::par::{map_indexed, stream_rng};
use unside::paths::{DirichletPath, InterpolantPath, NoiseSchedule, DEFAULT_A, DEFAULT_EPS_T};
use unside::posterior::{
    read_checkpoint, train, write_checkpoint, AtomDataset, Checkpoint, DenseDenoiser, ExactPosterior, MiniMpnn,
    MpnnConfig, Optimizer, PosteriorModel, TrainConfig,
};
use unside::sampling::{
    sample_batch, sample_traced, DecodeMode, Guidance, PropertyHead, PropertyRegressor, PropertyTrainConfig,
    SampleRunConfig, StepTrace,
};
use unside::simplex::{sample_dirichlet, DirichletParams, Layout, MarginalMixturePrior};
use unside::toy::{guidance_demo, GuidanceDemoConfig};
use unside::voronoi::calibration_curve;
use unside::Execution;

use crate::config::{parse_list, ConfigFile};
use crate::{
    CalibrateArgs, Cli, Command, EvalArgs, GuidanceDemoArgs, NoiseDemoArgs, SampleArgs, ScheduleArgs, TrainArgs,
    ValidationError,
};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

struct Ctx {
    cfg: ConfigFile,
    seed: u64,
    out: Option<PathBuf>,
    exec: Execution,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = match &self.out {
            Some(p) => p.clone(),
            None => self.cfg.get::<PathBuf>("out")?.unwrap_or_else(|| PathBuf::from(".")),
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn out_file(&self, default: &str) -> Result<PathBuf> {
        let path = match &self.out {
            Some(p) => p.clone(),
            None => self.cfg.get::<PathBuf>("out")?.unwrap_or_else(|| PathBuf::from(default)),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    fn schedule(&self, args: &ScheduleArgs, base: Option<&NoiseSchedule>) -> Result<NoiseSchedule> {
        let a = self.cfg.resolve(args.a, "a", base.map_or(DEFAULT_A, NoiseSchedule::a))?;
        let kappa = self.cfg.resolve(args.kappa, "kappa", base.map_or(0.0, NoiseSchedule::kappa))?;
        let eps_t = self.cfg.resolve(args.eps_t, "eps_t", base.map_or(DEFAULT_EPS_T, NoiseSchedule::eps_t))?;
        Ok(NoiseSchedule::new(a, kappa, eps_t)?)
    }
}

/// Runs the selected command and returns the files it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = cfg.resolve_opt(cli.threads, "threads")?;
    if threads == Some(0) {
        bail!(invalid("--threads must be >= 1"));
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        seed: cfg.resolve(cli.seed, "seed", 0)?,
        out: cli.out.clone(),
        exec: if threads == Some(1) { Execution::Sequential } else { Execution::Parallel },
        cfg,
    };
    match &cli.command {
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::NoiseDemo(a) => noise_demo(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Sample(a) => sample_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::GuidanceDemo(a) => guidance_demo_cmd(&ctx, a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn calibrate(ctx: &Ctx, args: &CalibrateArgs) -> Result<Vec<PathBuf>> {
    let k = ctx.cfg.resolve(args.k, "k", 3usize)?;
    let a_list = ctx.cfg.resolve(args.a.clone(), "a", "1,3,10".to_string())?;
    let points = ctx.cfg.resolve(args.points, "points", 101usize)?;
    let kappa = ctx.cfg.resolve(args.kappa, "kappa", 0.0)?;
    let eps_t = ctx.cfg.resolve(args.eps_t, "eps_t", DEFAULT_EPS_T)?;
    let strengths: Vec<f64> = parse_list(&a_list)?;
    if strengths.is_empty() {
        bail!(invalid("--a needs at least one value"));
    }
    let dir = ctx.out_dir()?;
    let mut written = Vec::new();
    for a in strengths {
        let schedule = NoiseSchedule::new(a, kappa, eps_t)?;
        let curve = calibration_curve(&schedule, k, points)?;
        let path = dir.join(format!("calibration_K{k}_a{a}.csv"));
        write_calibration_csv(&path, &curve)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct CloudPoint {
    origin: usize,
    x: Vec<f64>,
}

#[derive(Serialize)]
struct Cloud {
    path: &'static str,
    t: f64,
    t_eval: f64,
    concentration: f64,
    points: Vec<CloudPoint>,
}

const DEMO_TIMES: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.0];
const DEMO_K: usize = 3;

fn noise_demo(ctx: &Ctx, args: &NoiseDemoArgs) -> Result<Vec<PathBuf>> {
    let points = ctx.cfg.resolve(args.points, "points", 500usize)?;
    let schedule = ctx.schedule(&args.schedule, None)?;
    let path = DirichletPath::new(schedule, DEMO_K)?;
    let flat = DirichletParams::new(vec![1.0; DEMO_K])?;
    let mut clouds = Vec::new();
    for (i, &t) in DEMO_TIMES.iter().enumerate() {
        let t_eval = t.min(schedule.t_max());
        let mut rng = stream_rng(ctx.seed, 2 * i as u64);
        let pts = (0..points)
            .map(|p| {
                let origin = p % DEMO_K;
                Ok(CloudPoint {
                    origin,
                    x: path.noise_forward(origin, t_eval, &mut rng)?.into_coords(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        clouds.push(Cloud {
            path: "dirichlet",
            t,
            t_eval,
            concentration: schedule.alpha(t_eval)?,
            points: pts,
        });

        let interp = InterpolantPath::new(t, DEMO_K)?;
        let mut rng = stream_rng(ctx.seed, 2 * i as u64 + 1);
        let pts = (0..points)
            .map(|p| {
                let origin = p % DEMO_K;
                let x0 = sample_dirichlet(&flat, &mut rng);
                Ok(CloudPoint {
                    origin,
                    x: interp.forward(origin, &x0)?.into_coords(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        clouds.push(Cloud {
            path: "interpolant",
            t,
            t_eval: t,
            concentration: t,
            points: pts,
        });
    }
    let out = ctx.out_file("noise_demo.json")?;
    write_json(
        &out,
        &json!({"k": DEMO_K, "a": schedule.a(), "kappa": schedule.kappa(), "clouds": clouds}),
    )?;
    Ok(vec![out])
}

/// Everything needed besides the tensors to rebuild a denoiser.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenoiserMeta {
    layout: Layout,
    schedule: ScheduleMeta,
    #[serde(default)]
    hidden: Option<Vec<usize>>,
    #[serde(default)]
    mpnn: Option<MpnnConfig>,
    #[serde(default)]
    graph: Option<GraphEncoding>,
    /// Per-channel marginals of the training data, used for the prior.
    marginals: Vec<Vec<f64>>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PropertyMeta {
    layout: Layout,
    schedule: ScheduleMeta,
    head: PropertyHead,
    classes: usize,
    #[serde(default)]
    graph: Option<GraphEncoding>,
    train: PropertyTrainConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ScheduleMeta {
    a: f64,
    kappa: f64,
    eps_t: f64,
}

impl ScheduleMeta {
    fn of(s: &NoiseSchedule) -> Self {
        Self {
            a: s.a(),
            kappa: s.kappa(),
            eps_t: s.eps_t(),
        }
    }

    fn build(self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.a, self.kappa, self.eps_t)?)
    }
}

/// A dataset loaded from disk, with its graph encoding when it holds graphs.
struct LoadedData {
    dataset: AtomDataset,
    graph: Option<GraphEncoding>,
}

fn load_data(path: &Path, graph: bool, k: Option<usize>) -> Result<LoadedData> {
    if !graph {
        return Ok(LoadedData {
            dataset: read_flat_dataset(path, k)?,
            graph: None,
        });
    }
    let graphs = read_graphs(path)?;
    let Some(first) = graphs.first() else {
        bail!(invalid(format!("{}: no graphs", path.display())));
    };
    let n = first.n();
    if graphs.iter().any(|g| g.n() != n) {
        bail!(invalid(format!("{}: graphs must all have the same number of nodes", path.display())));
    }
    let max_node = graphs.iter().flat_map(|g| g.node_cats().iter().copied()).max().unwrap_or(0);
    let enc = GraphEncoding {
        n,
        k_v: if max_node == 0 { 1 } else { max_node + 1 },
        k_e: 2,
    };
    let clean = graphs.iter().map(|g| enc.encode(g)).collect::<unside::Result<Vec<_>>>()?;
    Ok(LoadedData {
        dataset: AtomDataset::from_samples(enc.layout()?, &clean)?,
        graph: Some(enc),
    })
}

fn channel_marginals(ds: &AtomDataset) -> Vec<Vec<f64>> {
    (0..ds.layout().channels().len())
        .map(|c| ds.channel_marginal(c).probs().to_vec())
        .collect()
}

fn edge_counts(ds: &AtomDataset, enc: &GraphEncoding) -> Vec<usize> {
    let skip = if enc.has_nodes() { enc.n } else { 0 };
    ds.atoms().iter().map(|a| a[skip..].iter().filter(|c| **c != 0).count()).collect()
}

fn train_cmd(ctx: &Ctx, args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let dataset_path = ctx
        .cfg
        .resolve_opt(args.dataset.clone(), "dataset")?
        .ok_or_else(|| invalid("train needs --dataset"))?;
    let graph = args.graph || ctx.cfg.get::<bool>("graph")?.unwrap_or(false);
    let k = ctx.cfg.resolve_opt(args.k, "k")?;
    let data = load_data(&dataset_path, graph, k)?;
    let schedule = ctx.schedule(&args.schedule, None)?;
    let model_kind = ctx.cfg.resolve(args.model.clone(), "model", "dense".to_string())?;
    let steps_opt = ctx.cfg.resolve_opt(args.steps, "steps")?;
    let batch_opt = ctx.cfg.resolve_opt(args.batch_size, "batch_size")?;
    let lr_opt = ctx.cfg.resolve_opt(args.lr, "lr")?;
    let momentum_opt = ctx.cfg.resolve_opt(args.momentum, "momentum")?;
    let dir = ctx.out_dir()?;
    let ckpt_path = dir.join("model.ckpt");
    let loss_path = dir.join("loss.csv");
    let layout = data.dataset.layout().clone();

    if model_kind == "property" {
        let Some(enc) = data.graph else {
            bail!(invalid("the property model predicts edge counts and needs --graph"));
        };
        let defaults = PropertyTrainConfig::default();
        let cfg = PropertyTrainConfig {
            lr: lr_opt.unwrap_or(defaults.lr),
            momentum: momentum_opt.unwrap_or(defaults.momentum),
            steps: steps_opt.unwrap_or(defaults.steps),
            batch_size: batch_opt.unwrap_or(defaults.batch_size),
            seed: ctx.seed,
        };
        let labels = edge_counts(&data.dataset, &enc);
        let classes = enc.n * (enc.n - 1) / 2 + 1;
        let mut model = PropertyRegressor::zeros(layout.clone(), PropertyHead::Softmax, classes)?;
        let trace = model.train(&data.dataset, &labels, &schedule, &cfg)?;
        let meta = PropertyMeta {
            layout,
            schedule: ScheduleMeta::of(&schedule),
            head: PropertyHead::Softmax,
            classes,
            graph: Some(enc),
            train: cfg,
        };
        write_checkpoint(
            &ckpt_path,
            &Checkpoint {
                model: "property".into(),
                meta: serde_json::to_value(&meta)?,
                params: model.params().clone(),
            },
        )?;
        write_loss_csv(&loss_path, &trace)?;
        return Ok(vec![ckpt_path, loss_path]);
    }

    let default_gamma = match data.graph {
        None => 1.0,
        Some(enc) if enc.has_nodes() => 0.5,
        Some(_) => 0.0,
    };
    let optimizer = match ctx.cfg.resolve(args.optimizer.clone(), "optimizer", "momentum".to_string())?.as_str() {
        "sgd" => Optimizer::Sgd,
        "momentum" => Optimizer::Momentum {
            beta: momentum_opt.unwrap_or(0.9),
        },
        other => bail!(invalid(format!("unknown optimizer {other:?} (expected sgd or momentum)"))),
    };
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        gamma: ctx.cfg.resolve(args.gamma, "gamma", default_gamma)?,
        lr: lr_opt.unwrap_or(defaults.lr),
        optimizer,
        steps: steps_opt.unwrap_or(defaults.steps),
        batch_size: batch_opt.unwrap_or(defaults.batch_size),
        seed: ctx.seed,
    };
    let mut init_rng = stream_rng(ctx.seed, 2);
    let mut meta = DenoiserMeta {
        layout: layout.clone(),
        schedule: ScheduleMeta::of(&schedule),
        hidden: None,
        mpnn: None,
        graph: data.graph,
        marginals: channel_marginals(&data.dataset),
        train: Some(cfg),
    };
    let (trace, params) = match model_kind.as_str() {
        "dense" => {
            let hidden: Vec<usize> = parse_list(&ctx.cfg.resolve(args.hidden.clone(), "hidden", "64".to_string())?)?;
            let mut model = DenseDenoiser::new(layout, &hidden, &mut init_rng)?;
            let trace = train(&mut model, &data.dataset, &schedule, &cfg)?;
            meta.hidden = Some(hidden);
            (trace, unside::posterior::Trainable::params(&model).clone())
        }
        "mpnn" => {
            let Some(enc) = data.graph else {
                bail!(invalid("the message-passing model needs --graph"));
            };
            let config = MpnnConfig {
                n: enc.n,
                k_v: enc.k_v,
                k_e: enc.k_e,
                d_h: ctx.cfg.resolve(args.d_h, "d_h", 32usize)?,
                rounds: ctx.cfg.resolve(args.rounds, "rounds", 2usize)?,
            };
            let mut model = MiniMpnn::new(config, &mut init_rng)?;
            let trace = train(&mut model, &data.dataset, &schedule, &cfg)?;
            meta.mpnn = Some(config);
            (trace, unside::posterior::Trainable::params(&model).clone())
        }
        other => bail!(invalid(format!("unknown model {other:?} (expected dense, mpnn or property)"))),
    };
    write_checkpoint(
        &ckpt_path,
        &Checkpoint {
            model: model_kind,
            meta: serde_json::to_value(&meta)?,
            params,
        },
    )?;
    write_loss_csv(&loss_path, &trace)?;
    Ok(vec![ckpt_path, loss_path])
}

enum Denoiser {
    Dense(DenseDenoiser),
    Mpnn(MiniMpnn),
    Exact(ExactPosterior),
}

impl Denoiser {
    fn as_model(&self) -> &dyn PosteriorModel {
        match self {
            Self::Dense(m) => m,
            Self::Mpnn(m) => m,
            Self::Exact(m) => m,
        }
    }
}

struct LoadedDenoiser {
    model: Denoiser,
    schedule: NoiseSchedule,
    graph: Option<GraphEncoding>,
    marginals: Vec<Vec<f64>>,
}

fn load_denoiser(path: &Path) -> Result<LoadedDenoiser> {
    let ckpt = read_checkpoint(path)?;
    let meta: DenoiserMeta = serde_json::from_value(ckpt.meta.clone())
        .with_context(|| format!("{}: malformed checkpoint metadata", path.display()))?;
    let model = match (ckpt.model.as_str(), &meta.hidden, &meta.mpnn) {
        ("dense", Some(hidden), _) => Denoiser::Dense(DenseDenoiser::from_params(meta.layout.clone(), hidden, &ckpt.params)?),
        ("mpnn", _, Some(cfg)) => Denoiser::Mpnn(MiniMpnn::from_params(*cfg, &ckpt.params)?),
        (other, _, _) => bail!(invalid(format!("{}: {other:?} is not a denoiser checkpoint", path.display()))),
    };
    Ok(LoadedDenoiser {
        model,
        schedule: meta.schedule.build()?,
        graph: meta.graph,
        marginals: meta.marginals,
    })
}

fn load_property(path: &Path) -> Result<PropertyRegressor> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.model != "property" {
        bail!(invalid(format!("{}: not a property checkpoint", path.display())));
    }
    let meta: PropertyMeta = serde_json::from_value(ckpt.meta.clone())
        .with_context(|| format!("{}: malformed checkpoint metadata", path.display()))?;
    Ok(PropertyRegressor::from_params(meta.layout, meta.head, meta.classes, &ckpt.params)?)
}

fn priors(layout: &Layout, marginals: &[Vec<f64>], kappa: f64) -> Result<Vec<MarginalMixturePrior>> {
    if kappa == 0.0 {
        return Ok(layout.channels().iter().map(|c| MarginalMixturePrior::uniform(c.k)).collect());
    }
    if marginals.len() != layout.channels().len() {
        bail!(invalid("per-channel marginals are missing for a kappa > 0 prior"));
    }
    marginals
        .iter()
        .map(|m| Ok(MarginalMixturePrior::new(unside::simplex::CategoricalDist::from_weights(m)?, kappa)?))
        .collect()
}

fn sample_cmd(ctx: &Ctx, args: &SampleArgs) -> Result<Vec<PathBuf>> {
    let graph_flag = args.graph || ctx.cfg.get::<bool>("graph")?.unwrap_or(false);
    let k = ctx.cfg.resolve_opt(args.k, "k")?;
    let exact = args.exact_posterior || ctx.cfg.get::<bool>("exact_posterior")?.unwrap_or(false);
    let checkpoint = ctx.cfg.resolve_opt(args.checkpoint.clone(), "checkpoint")?;

    let loaded = match (exact, checkpoint) {
        (true, Some(_)) => bail!(invalid("use either --checkpoint or --exact-posterior, not both")),
        (false, None) => bail!(invalid("sample needs --checkpoint or --exact-posterior with --dataset")),
        (false, Some(path)) => {
            let mut l = load_denoiser(&path)?;
            l.schedule = ctx.schedule(&args.schedule, Some(&l.schedule))?;
            l
        }
        (true, None) => {
            let path = ctx
                .cfg
                .resolve_opt(args.dataset.clone(), "dataset")?
                .ok_or_else(|| invalid("--exact-posterior needs --dataset"))?;
            let data = load_data(&path, graph_flag, k)?;
            let schedule = ctx.schedule(&args.schedule, None)?;
            LoadedDenoiser {
                marginals: channel_marginals(&data.dataset),
                graph: data.graph,
                model: Denoiser::Exact(ExactPosterior::new(data.dataset, schedule)),
                schedule,
            }
        }
    };
    let model = loaded.model.as_model();
    let layout = model.layout().clone();
    let schedule = loaded.schedule;

    let count = ctx.cfg.resolve(args.count, "count", 100usize)?;
    if count == 0 {
        bail!(invalid("--count must be >= 1"));
    }
    let decode = match ctx.cfg.resolve(args.decode.clone(), "decode", "sample".to_string())?.as_str() {
        "sample" => DecodeMode::SamplePosterior,
        "argmax" => DecodeMode::ArgmaxPosterior,
        other => bail!(invalid(format!("unknown decode mode {other:?} (expected sample or argmax)"))),
    };
    let config = SampleRunConfig {
        nfe: ctx.cfg.resolve(args.nfe, "nfe", 64usize)?,
        correctors_per_step: ctx.cfg.resolve(args.correctors, "correctors", 0usize)?,
        priors: priors(&layout, &loaded.marginals, schedule.kappa())?,
        decode,
        seed: ctx.seed,
    };

    let omega = ctx.cfg.resolve(args.omega, "omega", 1.0)?;
    let mode = ctx.cfg.resolve(args.guidance.clone(), "guidance", "none".to_string())?;
    let conditional_holder: Denoiser;
    let property_holder: PropertyRegressor;
    let guidance = match mode.as_str() {
        "none" => Guidance::None,
        "classifier-free" => {
            conditional_holder = if let Some(p) = ctx.cfg.resolve_opt(args.conditional.clone(), "conditional")? {
                load_denoiser(&p)?.model
            } else if let Some(p) = ctx.cfg.resolve_opt(args.conditional_dataset.clone(), "conditional_dataset")? {
                Denoiser::Exact(ExactPosterior::new(load_data(&p, graph_flag, k)?.dataset, schedule))
            } else {
                bail!(invalid("classifier-free guidance needs --conditional or --conditional-dataset"));
            };
            if conditional_holder.as_model().layout() != &layout {
                bail!(invalid("the conditional model has a different layout"));
            }
            Guidance::ClassifierFree {
                conditional: conditional_holder.as_model(),
                omega,
            }
        }
        "classifier" => {
            let p = ctx
                .cfg
                .resolve_opt(args.property.clone(), "property")?
                .ok_or_else(|| invalid("classifier guidance needs --property"))?;
            property_holder = load_property(&p)?;
            if unside::sampling::PropertyModel::layout(&property_holder) != &layout {
                bail!(invalid("the property model has a different layout"));
            }
            let target = ctx
                .cfg
                .resolve_opt(args.target, "target")?
                .ok_or_else(|| invalid("classifier guidance needs --target"))?;
            Guidance::Classifier {
                property: &property_holder,
                target,
                omega,
            }
        }
        other => bail!(invalid(format!(
            "unknown guidance {other:?} (expected none, classifier-free or classifier)"
        ))),
    };

    let trace = args.trace || ctx.cfg.get::<bool>("trace")?.unwrap_or(false);
    let (samples, traces): (Vec<Vec<usize>>, Vec<Option<Vec<StepTrace>>>) = if trace {
        config.validate(&layout, &schedule)?;
        map_indexed(ctx.exec, count, |c| {
            let mut rng = stream_rng(config.seed, c as u64);
            sample_traced(model, &config, &guidance, &schedule, &mut rng)
        })
        .into_iter()
        .map(|r| r.map(|(s, t)| (s, Some(t))))
        .collect::<unside::Result<Vec<_>>>()?
        .into_iter()
        .unzip()
    } else {
        let s = sample_batch(model, &config, &guidance, &schedule, count, ctx.exec)?;
        let n = s.len();
        (s, vec![None; n])
    };

    let records = samples
        .iter()
        .zip(traces)
        .map(|(s, t)| {
            let mut v = match &loaded.graph {
                Some(enc) => serde_json::to_value(GraphRecord::from_graph(&enc.decode(s)?)?)?,
                None => serde_json::to_value(SampleRecord { sample: s.clone() })?,
            };
            if let Some(t) = t {
                v["trace"] = serde_json::to_value(t)?;
            }
            Ok(v)
        })
        .collect::<Result<Vec<Value>>>()?;
    let out = ctx.out_file("samples.jsonl")?;
    write_jsonl(&out, &records)?;
    Ok(vec![out])
}

#[derive(Serialize)]
struct MetricSummary {
    mean: f64,
    std: f64,
    runs: Vec<PermutationTest>,
}

fn pad(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.resize(len, 0.0);
    v
}

fn features(graphs: &[GraphInstance], width: usize) -> [Vec<Vec<f64>>; 3] {
    let stats: Vec<_> = graphs.iter().map(compute_stats).collect();
    [
        stats.iter().map(|s| pad(s.degree_hist.clone(), width)).collect(),
        stats.iter().map(|s| s.clustering_hist.clone()).collect(),
        stats.iter().map(|s| s.spectrum_hist.clone()).collect(),
    ]
}

fn eval_cmd(ctx: &Ctx, args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let generated = ctx
        .cfg
        .resolve_opt(args.generated.clone(), "generated")?
        .ok_or_else(|| invalid("eval needs --generated"))?;
    let reference = ctx
        .cfg
        .resolve_opt(args.reference.clone(), "reference")?
        .ok_or_else(|| invalid("eval needs --reference"))?;
    let runs = ctx.cfg.resolve(args.runs, "runs", 1usize)?;
    let permutations = ctx.cfg.resolve(args.permutations, "permutations", 200usize)?;
    let gen = read_graphs(&generated)?;
    let reference = read_graphs(&reference)?;
    if runs == 0 || gen.len() < 2 * runs {
        bail!(invalid(format!("cannot split {} generated graphs into {runs} runs of at least 2", gen.len())));
    }
    if reference.len() < 2 {
        bail!(invalid("need at least 2 reference graphs"));
    }
    let width = gen.iter().chain(&reference).map(GraphInstance::n).max().unwrap_or(1);
    let ref_feats = features(&reference, width);
    let chunk = gen.len() / runs;
    let mut per_metric: [Vec<PermutationTest>; 3] = Default::default();
    for r in 0..runs {
        let gen_feats = features(&gen[r * chunk..(r + 1) * chunk], width);
        for m in 0..3 {
            let sigma = median_bandwidth(&gen_feats[m], &ref_feats[m]);
            per_metric[m].push(permutation_test(
                &gen_feats[m],
                &ref_feats[m],
                sigma,
                permutations,
                ctx.seed.wrapping_add(r as u64),
                ctx.exec,
            )?);
        }
    }
    let summarise = |tests: Vec<PermutationTest>| {
        let n = tests.len() as f64;
        let mean = tests.iter().map(|t| t.statistic).sum::<f64>() / n;
        let var = tests.iter().map(|t| (t.statistic - mean).powi(2)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            runs: tests,
        }
    };
    let [deg, clus, spec] = per_metric;
    let out = ctx.out_file("eval.json")?;
    write_json(
        &out,
        &json!({
            "generated": gen.len(),
            "reference": reference.len(),
            "runs": runs,
            "degree": summarise(deg),
            "clustering": summarise(clus),
            "spectral": summarise(spec),
        }),
    )?;
    Ok(vec![out])
}

fn guidance_demo_cmd(ctx: &Ctx, args: &GuidanceDemoArgs) -> Result<Vec<PathBuf>> {
    let d = GuidanceDemoConfig::default();
    let seeds = match ctx.cfg.resolve_opt(args.seeds.clone(), "seeds")? {
        Some(s) => parse_list(&s)?,
        None => d.seeds.clone(),
    };
    let config = GuidanceDemoConfig {
        n: ctx.cfg.resolve(args.n, "n", d.n)?,
        graphs: ctx.cfg.resolve(args.graphs, "graphs", d.graphs)?,
        p: ctx.cfg.resolve(args.p, "p", d.p)?,
        data_seed: ctx.seed,
        omega: ctx.cfg.resolve(args.omega, "omega", d.omega)?,
        target: ctx.cfg.resolve_opt(args.target, "target")?,
        samples: ctx.cfg.resolve(args.samples, "samples", d.samples)?,
        nfe: ctx.cfg.resolve(args.nfe, "nfe", d.nfe)?,
        seeds,
        property: PropertyTrainConfig {
            steps: ctx.cfg.resolve(args.property_steps, "property_steps", d.property.steps)?,
            ..d.property
        },
    };
    let report = guidance_demo(&config, ctx.exec)?;
    let out = ctx.out_file("guidance_demo.json")?;
    write_json(&out, &json!({"config": config, "report": report}))?;
    Ok(vec![out])
}
