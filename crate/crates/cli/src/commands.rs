use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use spine_core::ablation::{apply_graph_damage_with, fixed_ordering_space, DamageMode, FixedOrderingTemplate, GapMetric};
use spine_core::cost::{compare_models, count_model, golden_table, CostReport};
use spine_core::executor::{forward_with, random_input, Activation, ExecConfig, WeightStore, DUMP_MAGIC};
use spine_core::graph::{infer_shapes, to_dot, AlphaBase, BackboneGraph, Decoder, EdgeKind, ValidationMode};
use spine_core::head::{HeadKind, ModelWithHead};
use spine_core::search::{
    make_proxy, parse_reward, run_search, sample_candidate, space_size, write_history_jsonl, ControllerKind,
    EvolutionConfig, SearchOptions, SearchSpaceConfig,
};
use spine_core::zoo::{with_default_head_with, VariantId, Zoo};
use spine_core::Error;

use crate::{
    AblateArgs, ActivationArg, BuildArgs, Cli, Command, ControllerArg, CostArgs, DamageArg, ExecArgs, ExportArgs,
    ExportFormat, Format, MetricArg, ModelArgs, SearchArgs, TemplateArg,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownModel(_)
            | Error::SearchConfig(_)
            | Error::Head(_)
            | Error::BadAlpha(_)
            | Error::BadWidthFactor(_)
            | Error::BadRepeat(_)
            | Error::OddResolution(_)
            | Error::ResolutionUnderflow { .. }
            | Error::EmptySearch
            | Error::Io { .. } => EXIT_USAGE,
            _ => EXIT_INVALID,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = u8> = Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Build(a) => build(cli, a),
        Command::Cost(a) => cost(cli, a),
        Command::Search(a) => search(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Exec(a) => exec(cli, a),
        Command::Export(a) => export(cli, a),
    }
}

/// `json` or `table`; `dot` is rejected for verbs that have no graph output.
fn text_format(cli: &Cli) -> CliResult<Format> {
    match cli.format.unwrap_or(Format::Table) {
        Format::Dot => Err(CliError::usage("--format dot is only valid for export and ablate")),
        f => Ok(f),
    }
}

fn print_json(v: &Value) -> CliResult {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::invalid(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(EXIT_OK)
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::invalid(format!("cannot write {}: {e}", p.display()))),
        None => {
            let _ = write!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn split_override(kv: &str) -> CliResult<(&str, &str)> {
    kv.split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{kv}` is not KEY=VALUE")))
}

fn apply_graph_overrides(g: &mut BackboneGraph, overrides: &[String]) -> CliResult<()> {
    for kv in overrides {
        let (key, value) = split_override(kv)?;
        let bad = || CliError::usage(format!("bad value `{value}` for `{key}`"));
        match key {
            k if k.starts_with("head.") => {}
            "alpha" => g.alpha = value.parse().map_err(|_| bad())?,
            "output_dim" => g.output_dim = value.parse().map_err(|_| bad())?,
            "alpha_base" => {
                g.alpha_base = match value {
                    "parent" => AlphaBase::Parent,
                    "target" => AlphaBase::Target,
                    _ => return Err(bad()),
                }
            }
            other => return Err(CliError::usage(format!("unknown override `{other}`"))),
        }
    }
    Ok(())
}

fn apply_head_overrides(m: &mut ModelWithHead, overrides: &[String]) -> CliResult<()> {
    for kv in overrides {
        let (key, value) = split_override(kv)?;
        if !key.starts_with("head.") {
            continue;
        }
        let h = m
            .head
            .as_mut()
            .ok_or_else(|| CliError::usage(format!("`{key}` given but the model has no head")))?;
        h.apply_override(key, value)?;
    }
    Ok(())
}

fn load_graph(args: &ModelArgs) -> CliResult<BackboneGraph> {
    let mut g = Zoo::from_env().resolve(&args.model)?;
    apply_graph_overrides(&mut g, &args.overrides)?;
    Ok(g)
}

fn default_resolution(g: &BackboneGraph, head: Option<HeadKind>) -> u32 {
    if head.is_some_and(HeadKind::is_classifier) {
        return 224;
    }
    g.name.parse::<VariantId>().map(|v| v.default_resolution()).unwrap_or(640)
}

fn parse_head(s: Option<&str>) -> CliResult<Option<HeadKind>> {
    match s {
        None => Ok(Some(HeadKind::Retinanet)),
        Some("none") => Ok(None),
        Some(h) => Ok(Some(h.parse()?)),
    }
}

fn with_head(g: BackboneGraph, head: Option<HeadKind>, overrides: &[String], mode: ValidationMode) -> CliResult<ModelWithHead> {
    let mut m = match head {
        Some(kind) => with_default_head_with(g, kind, mode)?,
        None => ModelWithHead::backbone_with(g, mode)?,
    };
    apply_head_overrides(&mut m, overrides)?;
    Ok(m)
}

fn edge_counts(g: &BackboneGraph) -> Value {
    let conn = g.edges.iter().filter(|e| e.kind == EdgeKind::Connection).count();
    json!({
        "connection": conn,
        "orphan": g.edges.len() - conn,
        "uncertain": g.uncertain.len(),
    })
}

fn build(cli: &Cli, a: &BuildArgs) -> CliResult {
    let fmt = text_format(cli)?;
    let g = load_graph(&a.model)?.validated()?;
    let outputs: Vec<u8> = g.output_blocks().map(|b| b.level.get()).collect();
    let mut v = json!({
        "name": g.name,
        "stem_blocks": g.stem.len(),
        "permuted_blocks": g.permuted.len(),
        "expanded_blocks": g.expanded_block_count(),
        "output_order": outputs,
        "edges": edge_counts(&g),
        "alpha": g.alpha,
        "output_dim": g.output_dim,
        "decoder": format!("{:?}", g.decoder),
    });
    if let Some(r) = a.resolution {
        let shapes = infer_shapes(&g, r)?;
        let pyr: serde_json::Map<String, Value> = shapes
            .pyramid
            .iter()
            .map(|(l, s)| (format!("P{l}"), json!([s.h, s.w, s.c])))
            .collect();
        v["resolution"] = json!(r);
        v["pyramid"] = Value::Object(pyr);
    }
    match fmt {
        Format::Json => print_json(&v),
        _ => {
            let mut s = String::new();
            for (k, val) in v.as_object().expect("object") {
                let _ = writeln!(s, "{k:16} {val}");
            }
            print!("{s}");
            Ok(EXIT_OK)
        }
    }
}

fn cost(cli: &Cli, a: &CostArgs) -> CliResult {
    let fmt = text_format(cli)?;
    let g = load_graph(&a.model)?;
    if let Some(table) = &a.golden {
        return cost_golden(fmt, g, a, table);
    }
    let head = parse_head(a.head.as_deref())?;
    let res = a.resolution.unwrap_or_else(|| default_resolution(&g, head));
    let report = count_model(&with_head(g, head, &a.model.overrides, ValidationMode::Strict)?, res)?;
    if a.compare.is_empty() {
        return match fmt {
            Format::Json => print_json(&serde_json::to_value(&report).map_err(|e| CliError::invalid(e.to_string()))?),
            _ => {
                print!("{}", report.to_table());
                Ok(EXIT_OK)
            }
        };
    }
    let mut reports: Vec<CostReport> = vec![report];
    for other in &a.compare {
        let args = ModelArgs {
            model: other.clone(),
            overrides: a.model.overrides.clone(),
        };
        let g = load_graph(&args)?;
        let m = with_head(g, head, &args.overrides, ValidationMode::Strict)?;
        reports.push(count_model(&m, res)?);
    }
    let cmp = compare_models(&reports)?;
    match fmt {
        Format::Json => print_json(&serde_json::to_value(&cmp).map_err(|e| CliError::invalid(e.to_string()))?),
        _ => {
            print!("{}", cmp.to_table());
            Ok(EXIT_OK)
        }
    }
}

fn cost_golden(fmt: Format, g: BackboneGraph, a: &CostArgs, table: &str) -> CliResult {
    let t = golden_table(table).map_err(|e| CliError::usage(e.to_string()))?;
    let head = match a.head.as_deref() {
        Some(h) => Some(h.parse::<HeadKind>()?),
        None => None,
    };
    let rows: Vec<_> = t
        .rows
        .iter()
        .filter(|r| r.model == g.name)
        .filter(|r| a.resolution.is_none_or(|res| res == r.resolution))
        .filter(|r| head.is_none_or(|h| h == r.head))
        .collect();
    if rows.is_empty() {
        return Err(CliError::usage(format!(
            "{} has no row for {}{}",
            t.table,
            g.name,
            a.resolution.map(|r| format!(" at {r}")).unwrap_or_default()
        )));
    }
    let mut checks = Vec::new();
    for row in rows {
        let m = with_head(g.clone(), Some(row.head), &a.model.overrides, ValidationMode::Strict)?;
        let report = count_model(&m, row.resolution)?;
        checks.push((row.clone(), row.check(&report)));
    }
    let all_pass = checks.iter().all(|(_, c)| c.pass);
    match fmt {
        Format::Json => {
            let v: Vec<Value> = checks
                .iter()
                .map(|(row, c)| json!({"table": t.table, "head": row.head, "expected_madds": row.madds, "expected_params": row.params, "check": c}))
                .collect();
            print_json(&json!(v))?;
        }
        _ => {
            for (row, c) in &checks {
                println!(
                    "{} {} @{} {}: madds {:.2}B vs {:.2}B ({:+.2}%), params {:.2}M{} -> {}",
                    t.table,
                    c.model,
                    c.resolution,
                    row.head,
                    c.madds as f64 / 1e9,
                    row.madds / 1e9,
                    100.0 * c.madds_rel_err,
                    c.params as f64 / 1e6,
                    match (row.params, c.params_rel_err) {
                        (Some(p), Some(e)) => format!(" vs {:.2}M ({:+.2}%)", p / 1e6, 100.0 * e),
                        _ => String::new(),
                    },
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
        }
    }
    if all_pass {
        Ok(EXIT_OK)
    } else {
        Err(CliError::invalid(format!("outside the {} tolerance", t.table)))
    }
}

fn search(cli: &Cli, a: &SearchArgs) -> CliResult {
    let fmt = text_format(cli)?;
    let cfg = match &a.space {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?;
            SearchSpaceConfig::from_json(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => SearchSpaceConfig::default(),
    };
    let controller = match a.controller {
        ControllerArg::Random => ControllerKind::Random,
        ControllerArg::Evolution => ControllerKind::Evolution(EvolutionConfig {
            population: a.population,
            tournament: a.tournament,
        }),
    };
    let reward = parse_reward(&a.reward)?;
    let opts = SearchOptions {
        budget: a.budget,
        seed: cli.seed,
        batch_size: a.batch_size,
    };
    let out = run_search(&cfg, controller, reward.as_ref(), opts)?;
    if let Some(path) = &a.history {
        let file = fs::File::create(path).map_err(|e| CliError::invalid(format!("cannot write {}: {e}", path.display())))?;
        write_history_jsonl(&out.history, std::io::BufWriter::new(file))?;
    }
    let best = out.best();
    let failed = out.history.iter().filter(|h| h.error.is_some()).count();
    let v = json!({
        "controller": format!("{:?}", a.controller).to_lowercase(),
        "reward": reward.name(),
        "budget": a.budget,
        "seed": cli.seed,
        "space_size": space_size(&cfg).to_string(),
        "failed": failed,
        "best": {
            "index": best.index,
            "reward": best.reward,
            "candidate": best.candidate.record(),
        },
    });
    match fmt {
        Format::Json => print_json(&v),
        _ => {
            println!("controller   {}", v["controller"].as_str().unwrap_or_default());
            println!("reward       {}", reward.name());
            println!("space size   {}", v["space_size"].as_str().unwrap_or_default());
            println!("evaluated    {} ({} failed)", out.history.len(), failed);
            println!("best         #{} reward {}", best.index, best.reward);
            println!("permutation  {:?}", best.candidate.permutation.levels);
            println!("connections  {:?}", best.candidate.connections);
            Ok(EXIT_OK)
        }
    }
}

fn backbone_madds(g: &BackboneGraph, res: u32) -> CliResult<u64> {
    let m = ModelWithHead::backbone_with(g.clone(), ValidationMode::Relaxed)?;
    Ok(count_model(&m, res)?.grand_total.madds)
}

fn ablate(cli: &Cli, a: &AblateArgs) -> CliResult {
    let base = match (&a.model, a.template) {
        (Some(model), _) => Zoo::from_env().resolve(model)?,
        (None, Some(t)) => {
            let t = match t {
                TemplateArg::Hourglass => FixedOrderingTemplate::Hourglass,
                TemplateArg::Fish => FixedOrderingTemplate::Fish,
            };
            let cfg = fixed_ordering_space(t);
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let mut g = sample_candidate(&cfg, &mut rng)?.graph;
            g.name = t.name().to_string();
            g
        }
        (None, None) => return Err(CliError::usage("ablate needs --model or --template")),
    };
    let damaged = match a.damage {
        Some(d) => {
            let mode = match d {
                DamageArg::Short => DamageMode::RemoveShort,
                DamageArg::Long => DamageMode::RemoveLong,
                DamageArg::Sequential => DamageMode::Sequential,
            };
            let metric = match a.metric {
                MetricArg::Ordering => GapMetric::Ordering,
                MetricArg::Level => GapMetric::Level,
            };
            Some((mode, apply_graph_damage_with(&base, mode, metric)?))
        }
        None => None,
    };
    let result = damaged.as_ref().map(|(_, g)| g).unwrap_or(&base);
    let export = match (a.export, cli.format) {
        (Some(e), _) => Some(e),
        (None, Some(Format::Dot)) => Some(ExportFormat::Dot),
        _ => None,
    };
    if let Some(e) = export {
        let text = match e {
            ExportFormat::Dot => to_dot(result),
            ExportFormat::Json => result.to_canonical_json()?,
        };
        write_output(a.output.as_deref(), &text)?;
        return Ok(EXIT_OK);
    }
    let res = a.resolution.unwrap_or_else(|| default_resolution(&base, None));
    let before = backbone_madds(&base, res)?;
    let after = backbone_madds(result, res)?;
    let v = json!({
        "model": base.name,
        "damage": damaged.as_ref().map(|(m, _)| m.name()),
        "metric": format!("{:?}", a.metric).to_lowercase(),
        "permuted_blocks": [base.permuted.len(), result.permuted.len()],
        "edges": [edge_counts(&base), edge_counts(result)],
        "resolution": res,
        "backbone_madds": [before, after],
    });
    match text_format(cli)? {
        Format::Json => print_json(&v),
        _ => {
            println!("model            {}", base.name);
            println!("damage           {}", v["damage"]);
            println!("permuted blocks  {} -> {}", base.permuted.len(), result.permuted.len());
            println!("edges            {} -> {}", base.edges.len(), result.edges.len());
            println!(
                "backbone madds   {:.3}B -> {:.3}B @{res}",
                before as f64 / 1e9,
                after as f64 / 1e9
            );
            Ok(EXIT_OK)
        }
    }
}

fn exec(cli: &Cli, a: &ExecArgs) -> CliResult {
    let fmt = text_format(cli)?;
    let mut g = load_graph(&a.model)?;
    if a.proxy {
        g = make_proxy(&g)?;
    }
    let head = if a.classify {
        Some(HeadKind::Classifier)
    } else {
        None
    };
    let m = with_head(g, head, &a.model.overrides, ValidationMode::Relaxed)?;
    let res = a.input_res;
    let expected = infer_shapes(&m.graph, res)?;
    let x = random_input(res, cli.seed);
    let w = WeightStore::lazy(cli.seed);
    let cfg = ExecConfig {
        activation: match a.activation {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Swish => Activation::Swish,
        },
    };
    let out = forward_with(&m, &w, &x, &cfg)?;
    let shapes_match = out.block_shapes == expected.blocks
        && out.pyramid.iter().map(|(l, t)| (*l, t.shape())).collect::<Vec<_>>()
            == expected.pyramid.iter().map(|(l, s)| (*l, *s)).collect::<Vec<_>>();
    let mut pyramid = serde_json::Map::new();
    for (l, t) in &out.pyramid {
        let s = t.shape();
        let n = t.data().len().max(1) as f64;
        let mean_abs = t.data().iter().map(|v| v.abs() as f64).sum::<f64>() / n;
        pyramid.insert(format!("P{l}"), json!({"shape": [s.h, s.w, s.c], "mean_abs": mean_abs}));
    }
    let mut v = json!({
        "model": m.graph.name,
        "input_res": res,
        "seed": cli.seed,
        "pyramid": pyramid,
        "shapes_match": shapes_match,
    });
    if m.graph.decoder == Decoder::None {
        let s = out.final_feature.shape();
        v["final_feature"] = json!([s.h, s.w, s.c]);
    }
    if a.dump_shapes {
        let blocks: serde_json::Map<String, Value> = out
            .block_shapes
            .iter()
            .map(|(id, s)| (id.to_string(), json!([s.h, s.w, s.c])))
            .collect();
        v["blocks"] = Value::Object(blocks);
    }
    if a.classify {
        let c = spine_core::executor::forward_classifier(&m, &w, &x)?;
        let mut ranked: Vec<(usize, f32)> = c.probabilities.iter().copied().enumerate().collect();
        ranked.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
        ranked.truncate(5);
        v["classifier"] = json!({
            "feature_len": c.features.len(),
            "probability_sum": c.probabilities.iter().map(|&p| p as f64).sum::<f64>(),
            "top5": ranked,
        });
    }
    if let Some(dir) = &a.dump_raw {
        fs::create_dir_all(dir).map_err(|e| CliError::invalid(format!("cannot create {}: {e}", dir.display())))?;
        for (l, t) in &out.pyramid {
            let path = dir.join(format!("P{l}.bin"));
            let file = fs::File::create(&path).map_err(|e| CliError::invalid(format!("cannot write {}: {e}", path.display())))?;
            t.write_raw(std::io::BufWriter::new(file))
                .map_err(|e| CliError::invalid(format!("cannot write {}: {e}", path.display())))?;
        }
        v["raw_dump"] = json!({"dir": dir.display().to_string(), "magic": String::from_utf8_lossy(DUMP_MAGIC)});
    }
    match fmt {
        Format::Json => {
            print_json(&v)?;
        }
        _ => {
            println!("model         {}", m.graph.name);
            println!("input         {res}x{res}x3, seed {}", cli.seed);
            for (l, t) in &out.pyramid {
                println!("P{l}            {}", t.shape());
            }
            if let Some(blocks) = v.get("blocks").and_then(Value::as_object) {
                for (id, s) in blocks {
                    println!("block {id:6}  {s}");
                }
            }
            if let Some(c) = v.get("classifier") {
                println!("classifier    {c}");
            }
            println!("shapes match  {shapes_match}");
        }
    }
    if shapes_match {
        Ok(EXIT_OK)
    } else {
        Err(CliError::invalid("executed shapes differ from shape inference"))
    }
}

fn export(cli: &Cli, a: &ExportArgs) -> CliResult {
    let g = load_graph(&a.model)?.validated()?;
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json if a.with_plans => g.to_canonical_json_with_plans()?,
        Format::Json => g.to_canonical_json()?,
        Format::Dot => to_dot(&g),
        Format::Table => return Err(CliError::usage("export supports --format json or dot")),
    };
    write_output(a.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}
