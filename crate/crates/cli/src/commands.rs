use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::builder::TypedValueParser;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use langnav_core::command::Vocabulary;
use langnav_core::datastore::{compute_stats, generate_split, read_manifest, read_split, SPLIT_NAMES};
use langnav_core::metrics::{evaluate_split, plot_svg, EvalConfig, EvalEpisode, MetricReport};
use langnav_core::navctl::{run_episode, Grounder};
use langnav_core::oracle::OracleGrounder;
use langnav_core::worldsim::generate_map;
use langnav_grounder::{load_checkpoint, load_split_samples, save_checkpoint, train, GrounderModel, NeuralGrounder};

use crate::annotate::{serve_annotation, AnnotateConfig, HumanStore};
use crate::config::{sidecar_for, RunConfig};
use crate::service::{serve_grounding, RemoteGrounder};

#[derive(Debug, Parser)]
#[command(name = "langnav", version, about = "Language-guided driving on a built-in simulator")]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate oracle-annotated episodes.
    Dataset {
        /// Episodes in the chosen split, or in train when no split is given.
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["train", "val", "test"])]
        split: Option<String>,
    },
    /// Train a grounding model.
    Train {
        /// Dataset root or a split directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["1", "2", "4", "6", "8"]).map(|s| s.parse::<usize>().unwrap()))]
        frames: usize,
        #[arg(long)]
        context: bool,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Drive every episode of a split live and score it.
    Eval {
        #[command(flatten)]
        grounder: GrounderArgs,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-episode SVG plots.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Drive one recorded episode live.
    Run {
        #[command(flatten)]
        grounder: GrounderArgs,
        #[arg(long)]
        episode: PathBuf,
    },
    /// Serve the annotation protocol.
    Annotate {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        map_seed: u64,
    },
    /// Serve a model over the grounding protocol.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        model: PathBuf,
    },
    /// Summarise the splits of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference checks of every layer and of the full model.
    Gradcheck,
    /// Train and evaluate the S, SC, M8, MC4 and MC8 variants.
    Ablation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Skip training where a checkpoint already exists.
        #[arg(long)]
        reuse: bool,
    },
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group = clap::ArgGroup::new("grounder").required(true).multiple(false))]
pub struct GrounderArgs {
    #[arg(long, group = "grounder")]
    pub model: Option<PathBuf>,
    /// Ground-truth grounder with simulator access.
    #[arg(long, group = "grounder")]
    pub oracle: bool,
    /// Address of a grounding service.
    #[arg(long, group = "grounder", requires = "frames")]
    pub remote: Option<String>,
    /// Frames per query sent to a remote grounder.
    #[arg(long)]
    pub frames: Option<usize>,
}

/// Parses `argv` and runs it. Returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            let text = e.to_string();
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn flag(map: &mut Map<String, Value>, path: &[&str], v: impl Serialize) {
    let mut cur = map;
    for key in &path[..path.len() - 1] {
        cur = cur
            .entry(key.to_string())
            .or_insert_with(|| json!({}))
            .as_object_mut()
            .expect("flag paths are objects");
    }
    cur.insert(path[path.len() - 1].to_string(), serde_json::to_value(v).expect("flag serializes"));
}

fn resolve(cli: &Cli, flags: impl FnOnce(&mut Map<String, Value>)) -> Result<RunConfig> {
    let mut m = Map::new();
    if let Some(t) = cli.threads {
        flag(&mut m, &["threads"], t);
    }
    flags(&mut m);
    RunConfig::resolve(cli.config.as_deref(), Value::Object(m))
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset {
            episodes,
            seed,
            out,
            split,
        } => {
            let cfg = resolve(&cli, |m| {
                if let Some(s) = seed {
                    flag(m, &["seed"], s);
                }
                flag(m, &["dataset", split.as_deref().unwrap_or("train")], episodes);
                flag(m, &["paths", "out"], out);
            })?;
            let splits: Vec<&str> = match split {
                Some(s) => vec![s.as_str()],
                None => SPLIT_NAMES.to_vec(),
            };
            for s in splits {
                let m = generate_split(&cfg.dataset, s, out, cfg.threads)
                    .with_context(|| format!("generating {s} into {}", out.display()))?;
                eprintln!("{s}: {} episodes", m.episodes.len());
            }
            cfg.save(&out.join("run_config.json"))
        }
        Command::Train {
            data,
            frames,
            context,
            steps,
            out,
            seed,
            lr,
            batch,
        } => {
            let cfg = resolve(&cli, |m| {
                flag(m, &["model", "n_frames"], frames);
                flag(m, &["model", "use_context"], context);
                flag(m, &["train", "steps"], steps);
                if let Some(s) = seed {
                    flag(m, &["seed"], s);
                }
                if let Some(l) = lr {
                    flag(m, &["train", "lr0"], l);
                }
                if let Some(b) = batch {
                    flag(m, &["train", "batch"], b);
                }
                flag(m, &["paths", "data"], data);
                flag(m, &["paths", "out"], out);
            })?;
            train_model(&cfg, data, out)?;
            Ok(())
        }
        Command::Eval {
            grounder,
            split,
            report,
            plots,
        } => {
            let cfg = resolve(&cli, |m| {
                flag(m, &["paths", "split"], split);
                flag(m, &["paths", "report"], report);
                if let Some(p) = plots {
                    flag(m, &["paths", "plots"], p);
                }
                if let Some(p) = &grounder.model {
                    flag(m, &["paths", "model"], p);
                }
            })?;
            let (id, mut g) = make_grounder(grounder, &cfg)?;
            let r = eval_split(&cfg, &id, g.as_mut(), split, plots.as_deref())?;
            write_report(&r, report)?;
            cfg.save(&sidecar_for(report))?;
            println!(
                "{id}: TC {:.3}  nDTW {:.3}  Frechet {:.2} m over {} episodes",
                r.aggregate.tc_mean, r.aggregate.ndtw_mean, r.aggregate.frechet_mean, r.aggregate.episodes
            );
            Ok(())
        }
        Command::Run { grounder, episode } => {
            let cfg = resolve(&cli, |m| flag(m, &["paths", "episode"], episode))?;
            let (_, mut g) = make_grounder(grounder, &cfg)?;
            let (man, _) = read_manifest(episode).with_context(|| format!("reading episode {}", episode.display()))?;
            let world = generate_map(man.map_seed);
            let ec = eval_config(&cfg);
            let result = run_episode(&world, &man.spec(), g.as_mut(), &Vocabulary::default(), &ec.cam, &ec.nav);
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
        Command::Annotate { port, out, map_seed } => {
            let cfg = resolve(&cli, |m| {
                flag(m, &["port"], port);
                flag(m, &["paths", "out"], out);
            })?;
            let store = Arc::new(HumanStore::open(out, cfg.seed)?);
            cfg.save(&store.dir().join("run_config.json"))?;
            let acfg = AnnotateConfig {
                map_seed: *map_seed,
                nav: cfg.nav,
                oracle: cfg.oracle,
                camera: cfg.dataset.camera,
                click_camera: cfg.dataset.click_camera,
                frame_interval: Duration::from_millis(cfg.frame_interval_ms),
            };
            let listener = TcpListener::bind(("127.0.0.1", cfg.port)).with_context(|| format!("binding port {}", cfg.port))?;
            eprintln!("annotation service on {}", listener.local_addr()?);
            serve_annotation(listener, generate_map(*map_seed), acfg, store)?;
            Ok(())
        }
        Command::Serve { port, model } => {
            let cfg = resolve(&cli, |m| {
                flag(m, &["port"], port);
                flag(m, &["paths", "model"], model);
            })?;
            let (m, _) = load_model(model)?;
            let listener = TcpListener::bind(("127.0.0.1", cfg.port)).with_context(|| format!("binding port {}", cfg.port))?;
            eprintln!("grounding service on {}", listener.local_addr()?);
            serve_grounding(listener, Arc::new(m))?;
            Ok(())
        }
        Command::Stats { data } => {
            resolve(&cli, |m| flag(m, &["paths", "data"], data))?;
            let dirs = split_dirs(data)?;
            println!("split\tepisodes\tframes\tmean_words\tmean_clicks");
            for d in dirs {
                let s = compute_stats(&d).with_context(|| format!("reading {}", d.display()))?;
                println!("{}", s.row());
            }
            Ok(())
        }
        Command::Gradcheck => {
            resolve(&cli, |_| {})?;
            gradcheck()
        }
        Command::Ablation {
            data,
            steps,
            out,
            reuse,
        } => {
            let cfg = resolve(&cli, |m| {
                flag(m, &["train", "steps"], steps);
                flag(m, &["paths", "data"], data);
                flag(m, &["paths", "out"], out);
            })?;
            ablation(&cfg, data, out, *reuse)
        }
    }
}

/// The five variants compared in the ablation: (frames, context).
pub const ABLATION: [(usize, bool); 5] = [(1, false), (1, true), (8, false), (4, true), (8, true)];

fn split_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    if data.join("split.json").exists() {
        return Ok(vec![data.to_path_buf()]);
    }
    let dirs: Vec<PathBuf> = SPLIT_NAMES
        .iter()
        .chain(std::iter::once(&crate::annotate::HUMAN_SPLIT))
        .map(|s| data.join(s))
        .filter(|d| d.join("split.json").exists())
        .collect();
    if dirs.is_empty() {
        bail!("no split.json under {}", data.display());
    }
    Ok(dirs)
}

fn train_dir(data: &Path) -> PathBuf {
    if data.join("split.json").exists() {
        data.to_path_buf()
    } else {
        data.join("train")
    }
}

pub fn train_model(cfg: &RunConfig, data: &Path, out: &Path) -> Result<GrounderModel<f32>> {
    let vocab = Vocabulary::default();
    let dir = train_dir(data);
    let samples = load_split_samples(&dir, &vocab, cfg.model.stride)
        .with_context(|| format!("loading training data from {}", dir.display()))?;
    let mut model = GrounderModel::<f32>::new(cfg.model.clone(), cfg.seed).map_err(|e| anyhow::anyhow!(e.0))?;
    let variant = cfg.model.variant();
    let report = train(&mut model, &samples, &cfg.train, |l| {
        eprintln!(
            "{variant} step {:>5}  lr {:.2e}  nav {:.4}  traj {:.4}",
            l.step, l.lr, l.nav_loss, l.traj_loss
        )
    })
    .map_err(|e| anyhow::anyhow!(e.0))?;
    save_checkpoint(&model, &vocab, Some(&cfg.train), Some(&report), out)
        .with_context(|| format!("writing {}", out.display()))?;
    cfg.save(&sidecar_for(out))?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<(GrounderModel<f32>, langnav_grounder::Sidecar)> {
    if !path.exists() {
        bail!("model file {} does not exist", path.display());
    }
    load_checkpoint(path, &Vocabulary::default()).with_context(|| format!("loading model {}", path.display()))
}

fn make_grounder(args: &GrounderArgs, cfg: &RunConfig) -> Result<(String, Box<dyn Grounder>)> {
    if args.oracle {
        let g = OracleGrounder::new(cfg.dataset.camera, cfg.oracle, 1);
        return Ok(("oracle".into(), Box::new(g)));
    }
    if let Some(addr) = &args.remote {
        let frames = args.frames.unwrap_or(1);
        let g = RemoteGrounder::connect(addr.as_str(), frames).with_context(|| format!("connecting to {addr}"))?;
        return Ok((format!("remote:{addr}"), Box::new(g)));
    }
    let path = args.model.as_ref().expect("clap enforces one grounder");
    let (m, _) = load_model(path)?;
    Ok((m.cfg.variant(), Box::new(NeuralGrounder::new(Arc::new(m)))))
}

pub fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        nav: cfg.nav,
        cam: cfg.dataset.camera,
        ..EvalConfig::default()
    }
}

/// Episodes of a split in manifest order.
pub fn eval_episodes(split: &Path) -> Result<Vec<EvalEpisode>> {
    let m = read_split(split).with_context(|| format!("reading split {}", split.display()))?;
    m.episodes
        .iter()
        .map(|e| {
            let (man, _) = read_manifest(&split.join(e)).with_context(|| format!("reading episode {e}"))?;
            Ok(EvalEpisode {
                id: man.id.clone(),
                map_seed: man.map_seed,
                spec: man.spec(),
                gt_path: man.gt_path.clone(),
            })
        })
        .collect()
}

pub fn eval_split(
    cfg: &RunConfig,
    id: &str,
    g: &mut dyn Grounder,
    split: &Path,
    plots: Option<&Path>,
) -> Result<MetricReport> {
    let eps = eval_episodes(split)?;
    let name = read_split(split)?.split;
    let out = evaluate_split(id, &name, &eps, g, &Vocabulary::default(), &eval_config(cfg));
    if let Some(dir) = plots {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (ep, res) in eps.iter().zip(&out.results) {
            let svg = plot_svg(&generate_map(ep.map_seed), &ep.gt_path, &res.driven_path, &ep.spec.goal_pose);
            fs::write(dir.join(format!("{}.svg", ep.id)), svg)?;
        }
    }
    Ok(out.report)
}

fn write_report(r: &MetricReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, r.to_json()).with_context(|| format!("writing {}", path.display()))
}

fn gradcheck() -> Result<()> {
    let mut ok = true;
    for c in langnav_nn::checks::layer_checks().map_err(|e| anyhow::anyhow!(e.0))? {
        println!(
            "{:<24} max rel err {:.2e}  (tol {:.0e})  {}",
            c.name,
            c.report.max_rel_error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        );
        ok &= c.passed();
    }
    for ctx in [false, true] {
        let r = langnav_grounder::checks::model_grad_check(ctx, true).map_err(|e| anyhow::anyhow!(e.0))?;
        let pass = r.max_rel_error < 1e-3;
        println!(
            "{:<24} max rel err {:.2e}  (tol 1e-3)  {}",
            if ctx { "model with context" } else { "model" },
            r.max_rel_error,
            if pass { "ok" } else { "FAIL" }
        );
        ok &= pass;
    }
    if !ok {
        bail!("gradient check failed");
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    model: PathBuf,
    tc: f64,
    ndtw: f64,
    frechet: f64,
    train_seconds: f64,
}

fn ablation(cfg: &RunConfig, data: &Path, out: &Path, reuse: bool) -> Result<()> {
    let test = data.join("test");
    let mut rows = Vec::new();
    for (frames, context) in ABLATION {
        let mut c = cfg.clone();
        c.model.n_frames = frames;
        c.model.use_context = context;
        let variant = c.model.variant();
        let path = out.join(format!("{variant}.nnw"));
        let model = if reuse && path.exists() {
            load_model(&path)?.0
        } else {
            train_model(&c, data, &path)?
        };
        let seconds = langnav_grounder::checkpoint::read_sidecar(&path)?
            .report
            .map_or(0.0, |r| r.seconds);
        let mut g = NeuralGrounder::new(Arc::new(model));
        let r = eval_split(&c, &variant, &mut g, &test, None)?;
        write_report(&r, &out.join(format!("{variant}.report.json")))?;
        println!(
            "{variant:<5} TC {:.3}  nDTW {:.3}  Frechet {:.2} m",
            r.aggregate.tc_mean, r.aggregate.ndtw_mean, r.aggregate.frechet_mean
        );
        rows.push(AblationRow {
            variant,
            model: path,
            tc: r.aggregate.tc_mean,
            ndtw: r.aggregate.ndtw_mean,
            frechet: r.aggregate.frechet_mean,
            train_seconds: seconds,
        });
    }
    fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    cfg.save(&out.join("run_config.json"))
}
