//! The batch commands. Each resolves its configuration, runs once per seed
//! and returns the files it wrote relative to the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cohf::experiment::{
    fit, model_seed, run_method, score, test_tasks, train_tasks, Method, ProtocolConfig, ProtocolData,
};
use cohf::hetgraph::{load_graph_dir, write_graph, ClassId, HeteroGraph};
use cohf::metalearn::{write_loss_trace, TrainConfig};
use cohf::numcore::gradcheck::GroupError;
use cohf::oodgen::{gen_scm_graph, make_splits, make_two_env_splits, ScmConfig, SplitConfig};
use cohf::selfcheck::{end_to_end_gradients, op_gradients};
use cohf::vae_hgnn::{Ablation, CohfModel};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{Kind, RunConfig, Schema};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmd {
    GenScm,
    Split,
    Train,
    Eval,
    Ablate,
    Gradcheck,
    Baseline,
}

impl Cmd {
    pub const ALL: [Cmd; 7] = [
        Cmd::GenScm,
        Cmd::Split,
        Cmd::Train,
        Cmd::Eval,
        Cmd::Ablate,
        Cmd::Gradcheck,
        Cmd::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cmd::GenScm => "gen-scm",
            Cmd::Split => "split",
            Cmd::Train => "train",
            Cmd::Eval => "eval",
            Cmd::Ablate => "ablate",
            Cmd::Gradcheck => "gradcheck",
            Cmd::Baseline => "baseline",
        }
    }

    pub fn from_name(s: &str) -> Option<Cmd> {
        Cmd::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Path-valued keys whose files are hashed into the manifest.
    pub fn input_keys(self) -> &'static [&'static str] {
        match self {
            Cmd::GenScm | Cmd::Gradcheck => &[],
            Cmd::Split => &["graph_dir", "target_graph_dir"],
            Cmd::Train => &["source_dir", "query_dir"],
            Cmd::Eval => &["checkpoint", "support_dir", "query_dir"],
            Cmd::Ablate | Cmd::Baseline => &["source_dir", "support_dir", "query_dir"],
        }
    }

    pub fn schema(self) -> Schema {
        let p = ProtocolConfig::default();
        let empty = || Value::String(String::new());
        let no_classes = || Value::Array(Vec::new());
        let all_variants = Value::Array(
            std::iter::once(Ablation::None)
                .chain(Ablation::VARIANTS)
                .map(|a| Value::String(a.name().into()))
                .collect(),
        );
        let train_keys: &[&str] = &["lambda_kl", "epochs", "lr", "seed"];
        let episode_keys: &[&str] = &["n_way", "k_shot", "q_query", "m_tasks"];
        let protocol = |s: Schema| {
            s.key("source_dir", Kind::Str, empty())
                .key("support_dir", Kind::Str, empty())
                .key("query_dir", Kind::Str, empty())
                .key("train_classes", Kind::U64List, no_classes())
                .key("test_classes", Kind::U64List, no_classes())
                .key("train_tasks", Kind::U64, Value::from(p.train_tasks))
                .fields(&p.train, Some(train_keys))
                .fields(&p.episodes, None)
        };
        match self {
            Cmd::GenScm => Schema::default().fields(&p.scm, None),
            Cmd::Split => Schema::default()
                .key("graph_dir", Kind::Str, empty())
                .key("target_graph_dir", Kind::Str, empty())
                .key("standardize", Kind::Bool, Value::Bool(true))
                .fields(&SplitConfig::default(), None),
            Cmd::Train => Schema::default()
                .key("source_dir", Kind::Str, empty())
                .key("query_dir", Kind::Str, empty())
                .key("train_classes", Kind::U64List, no_classes())
                .key("train_tasks", Kind::U64, Value::from(p.train_tasks))
                .fields(&p.model, None)
                .fields(&p.train, None)
                .fields(&p.episodes, Some(&["n_way", "k_shot", "q_query"])),
            Cmd::Eval => Schema::default()
                .key("checkpoint", Kind::Str, empty())
                .key("support_dir", Kind::Str, empty())
                .key("query_dir", Kind::Str, empty())
                .key("test_classes", Kind::U64List, no_classes())
                .fields(&p.train, Some(&["seed", "ablation"]))
                .fields(&p.episodes, Some(episode_keys)),
            Cmd::Ablate => protocol(Schema::default())
                .key("variants", Kind::StrList, all_variants)
                .fields(&p.model, None),
            Cmd::Baseline => protocol(Schema::default()).fields(&p.model, Some(&["d", "n_k"])),
            Cmd::Gradcheck => Schema::default().fields(&p.train, Some(&["seed", "lambda_kl"])).key(
                "tolerance",
                Kind::F64,
                Value::from(1e-4),
            ),
        }
    }

    /// Validates the configuration without touching any input.
    pub fn check(self, cfg: &RunConfig) -> Result<(), CliError> {
        let seed = cfg.u64("seed");
        match self {
            Cmd::GenScm => ScmConfig {
                seed,
                ..cfg.build(&ProtocolConfig::default().scm)?
            }
            .validate()?,
            Cmd::Split => {
                cfg.build(&SplitConfig::default())?;
                cfg.path("graph_dir")?;
            }
            Cmd::Train => {
                protocol_config(cfg, seed)?;
                cfg.path("source_dir")?;
            }
            Cmd::Eval => {
                let base = ProtocolConfig::default();
                cfg.build(&base.episodes)?.validate().map_err(cohf::Error::from)?;
                cfg.build(&base.train)?;
                for key in ["checkpoint", "support_dir"] {
                    cfg.path(key)?;
                }
            }
            Cmd::Ablate | Cmd::Baseline => {
                protocol_config(cfg, seed)?;
                if self == Cmd::Ablate {
                    variants(cfg)?;
                }
                for key in ["source_dir", "support_dir"] {
                    cfg.path(key)?;
                }
            }
            Cmd::Gradcheck => {
                cfg.build(&TrainConfig::default())?;
            }
        }
        Ok(())
    }

    pub fn run(self, cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        match self {
            Cmd::GenScm => gen_scm(cfg, seed, out),
            Cmd::Split => split(cfg, seed, out),
            Cmd::Train => train(cfg, seed, out),
            Cmd::Eval => eval(cfg, seed, out),
            Cmd::Ablate => run_methods(cfg, seed, out, &variants(cfg)?),
            Cmd::Baseline => run_methods(cfg, seed, out, &[Method::Baseline]),
            Cmd::Gradcheck => gradcheck(cfg, seed, out),
        }
    }
}

fn variants(cfg: &RunConfig) -> Result<Vec<Method>, CliError> {
    cfg.str_list("variants")
        .iter()
        .map(|v| v.parse::<Ablation>().map(Method::Cohf))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("key `variants`: {e}")))
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load(dir: &Path) -> Result<HeteroGraph, CliError> {
    load_graph_dir(dir).map_err(|e| data_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| data_err(path, e))?;
    std::fs::write(path, text).map_err(|e| data_err(path, e))
}

fn graph_files() -> Vec<PathBuf> {
    ["nodes.csv", "edges.csv", "labels.csv"]
        .iter()
        .map(PathBuf::from)
        .collect()
}

/// Classes named by `key`, or every class labelled in all of `graphs`.
fn classes(cfg: &RunConfig, key: &str, graphs: &[&HeteroGraph]) -> BTreeSet<ClassId> {
    let listed: BTreeSet<ClassId> = cfg.u64_list(key).into_iter().map(|c| c as ClassId).collect();
    if !listed.is_empty() {
        return listed;
    }
    let mut sets = graphs
        .iter()
        .map(|g| g.labels().map(|(_, c)| c).collect::<BTreeSet<_>>());
    let first = sets.next().unwrap_or_default();
    sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
}

fn protocol_config(cfg: &RunConfig, seed: u64) -> Result<ProtocolConfig, CliError> {
    let base = ProtocolConfig::default();
    let p = ProtocolConfig {
        episodes: cfg.build(&base.episodes)?,
        train_tasks: cfg.u64("train_tasks") as usize,
        model: cfg.build(&base.model)?,
        train: TrainConfig {
            seed,
            ..cfg.build(&base.train)?
        },
        ..base
    };
    p.model.validate()?;
    p.train.validate()?;
    p.episodes.validate().map_err(cohf::Error::from)?;
    Ok(p)
}

fn gen_scm(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let scm = ScmConfig {
        seed,
        ..cfg.build(&ProtocolConfig::default().scm)?
    };
    scm.validate()?;
    let g = gen_scm_graph(&scm)?;
    write_graph(&g, out).map_err(|e| data_err(out, e))?;
    Ok(graph_files())
}

fn split(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let split = SplitConfig {
        seed,
        ..cfg.build(&SplitConfig::default())?
    };
    let prepare = |g: HeteroGraph| {
        if cfg.string("standardize") == "true" {
            g.standardized()
        } else {
            g
        }
    };
    let home = prepare(load(&cfg.path("graph_dir")?)?);
    let s = match cfg.optional_path("target_graph_dir") {
        Some(dir) => make_two_env_splits(&home, &prepare(load(&dir)?), &split)?,
        None => make_splits(&home, &split)?,
    };
    let mut files = Vec::new();
    for (name, g) in [("source", &s.source), ("support", &s.support), ("query", &s.query)] {
        write_graph(g, &out.join(name)).map_err(|e| data_err(out, e))?;
        files.extend(graph_files().into_iter().map(|f| Path::new(name).join(f)));
    }
    Ok(files)
}

fn train(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let p = protocol_config(cfg, seed)?;
    let source = load(&cfg.path("source_dir")?)?;
    let query = match cfg.optional_path("query_dir") {
        Some(dir) => load(&dir)?,
        None => source.clone(),
    };
    let data = ProtocolData {
        source_classes: classes(cfg, "train_classes", &[&source]),
        target_classes: BTreeSet::new(),
        support: query.clone(),
        source,
        query,
    };
    let mut model = CohfModel::new(p.model.clone(), data.source.feature_dim(), model_seed(seed))?;
    let tasks = train_tasks(&p, &data, seed)?;
    let trace = fit(&mut model, &data, &tasks, &p.train)?;
    model.save(&out.join("checkpoint.json"))?;
    write_loss_trace(&out.join("loss_trace.csv"), &trace)?;
    Ok(vec!["checkpoint.json".into(), "loss_trace.csv".into()])
}

fn eval(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = ProtocolConfig::default();
    let p = ProtocolConfig {
        episodes: cfg.build(&base.episodes)?,
        ..base
    };
    p.episodes.validate().map_err(cohf::Error::from)?;
    let train = TrainConfig {
        seed,
        ..cfg.build(&p.train)?
    };
    let ck = cfg.path("checkpoint")?;
    let model = CohfModel::load(&ck).map_err(|e| data_err(&ck, e))?;
    let support = load(&cfg.path("support_dir")?)?;
    let query = load(&cfg.path("query_dir")?)?;
    for g in [&support, &query] {
        if g.feature_dim() != model.d_in() {
            return Err(CliError::Data(format!(
                "graph has {} features, checkpoint expects {}",
                g.feature_dim(),
                model.d_in()
            )));
        }
    }
    let data = ProtocolData {
        target_classes: classes(cfg, "test_classes", &[&support, &query]),
        source_classes: BTreeSet::new(),
        source: support.clone(),
        support,
        query,
    };
    let tasks = test_tasks(&p, &data, seed)?;
    let metrics = score(&model, &data, &tasks, &train)?;
    metrics.save(&out.join("metrics.json"))?;
    Ok(vec!["metrics.json".into()])
}

fn run_methods(cfg: &RunConfig, seed: u64, out: &Path, methods: &[Method]) -> Result<Vec<PathBuf>, CliError> {
    let p = protocol_config(cfg, seed)?;
    let source = load(&cfg.path("source_dir")?)?;
    let support = load(&cfg.path("support_dir")?)?;
    let query = load(&cfg.path("query_dir")?)?;
    let data = ProtocolData {
        source_classes: classes(cfg, "train_classes", &[&source]),
        target_classes: classes(cfg, "test_classes", &[&support, &query]),
        source,
        support,
        query,
    };
    let outcomes = methods
        .par_iter()
        .map(|&m| run_method(&p, &data, m, seed).map(|o| (m, o)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut files = Vec::new();
    for (m, o) in outcomes {
        let dir = PathBuf::from(m.name());
        std::fs::create_dir_all(out.join(&dir)).map_err(|e| data_err(out, e))?;
        o.metrics.save(&out.join(&dir).join("metrics.json"))?;
        write_loss_trace(&out.join(&dir).join("loss_trace.csv"), &o.trace)?;
        files.push(dir.join("metrics.json"));
        files.push(dir.join("loss_trace.csv"));
    }
    Ok(files)
}

#[derive(Serialize)]
struct GradcheckReport {
    seed: u64,
    tolerance: f64,
    passed: bool,
    ops: Vec<GroupError>,
    end_to_end: Vec<GroupError>,
}

fn gradcheck(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let tolerance = cfg.f64("tolerance");
    let ops = op_gradients(seed)?;
    let end_to_end = end_to_end_gradients(seed, cfg.f64("lambda_kl"))?;
    let worst = ops
        .iter()
        .chain(&end_to_end)
        .fold(0.0f64, |m, g| m.max(g.max_rel_error));
    let passed = worst < tolerance;
    let mut by_group: BTreeMap<&str, f64> = BTreeMap::new();
    for g in ops.iter().chain(&end_to_end) {
        let e = by_group.entry(g.name.as_str()).or_default();
        *e = e.max(g.max_rel_error);
    }
    for (name, err) in &by_group {
        println!("{name:<24} {err:.3e}");
    }
    println!(
        "seed {seed}: max relative error {worst:.3e} ({})",
        if passed { "pass" } else { "FAIL" }
    );
    write_json(
        &out.join("gradcheck.json"),
        &GradcheckReport {
            seed,
            tolerance,
            passed,
            ops,
            end_to_end,
        },
    )?;
    if passed {
        Ok(vec!["gradcheck.json".into()])
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {worst:.3e} >= {tolerance:e}; report in {}",
            out.join("gradcheck.json").display()
        )))
    }
}
