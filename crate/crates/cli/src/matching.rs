use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use colmatch_core::matchers::MatcherRegistry;
use colmatch_core::{
    ingest_source, load_target, Action, CurationSession, Execution, SessionConfig, SessionContext,
};
use colmatch_service::dataset_name;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{read_input, write_output, CliError, CliResult, MatchArgs, OutputFormat};

pub const CANDIDATE_HEADER: &str = "configuration,source_attribute,target_attribute,rank,score,status";
const ENSEMBLE: &str = "ensemble";

#[derive(Debug)]
struct Plan {
    source: PathBuf,
    target: PathBuf,
    config: SessionConfig,
    output: Option<PathBuf>,
    format: OutputFormat,
    accepted_only: bool,
    individual: bool,
    actions: Option<PathBuf>,
    keep_going: bool,
    exec: Execution,
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    configuration: &'a str,
    source_attribute: &'a str,
    target_attribute: &'a str,
    rank: usize,
    score: f64,
    status: &'a str,
}

fn parse_weights(raw: &str) -> CliResult<BTreeMap<String, f64>> {
    raw.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (id, w) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("weight `{pair}` is not of the form id=value")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("weight `{pair}` has a non-numeric value")))?;
            Ok((id.trim().to_string(), w))
        })
        .collect()
}

fn file_options(path: &Path) -> CliResult<Map<String, Value>> {
    let bytes = read_input(path)?;
    match serde_json::from_slice(&bytes) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Input(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::Input(format!("{}: {e}", path.display()))),
    }
}

fn take<T: serde::de::DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> CliResult<Option<T>> {
    map.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| CliError::Input(format!("config key `{key}`: {e}"))))
        .transpose()
}

fn plan(args: MatchArgs) -> CliResult<Plan> {
    let (mut file, base) = match &args.config {
        Some(p) => (file_options(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (Map::new(), PathBuf::new()),
    };
    let relative = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let source = args.source.or(take::<PathBuf>(&mut file, "source")?.map(relative));
    let target = args.target.or(take::<PathBuf>(&mut file, "target")?.map(relative));
    let output = args.output.or(take::<PathBuf>(&mut file, "output")?.map(relative));
    let actions = args.actions.or(take::<PathBuf>(&mut file, "actions")?.map(relative));
    let format = match (args.format, take::<String>(&mut file, "format")?) {
        (Some(f), _) => f,
        (None, Some(f)) => match f.as_str() {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            other => return Err(CliError::Input(format!("unknown format `{other}`"))),
        },
        (None, None) => OutputFormat::Csv,
    };
    let accepted_only = args.accepted_only.or(take(&mut file, "accepted_only")?).unwrap_or(false);
    let individual = args.individual.or(take(&mut file, "individual")?).unwrap_or(false);
    let keep_going = args.keep_going || take(&mut file, "keep_going")?.unwrap_or(false);
    let sequential = args.sequential || take(&mut file, "sequential")?.unwrap_or(false);

    // Remaining file keys are session config; flags override them.
    let mut overrides = file;
    if let Some(k) = args.k {
        overrides.insert("k".into(), k.into());
    }
    if let Some(x) = args.name_threshold {
        overrides.insert("name_threshold".into(), x.into());
    }
    if let Some(x) = args.value_threshold {
        overrides.insert("value_threshold".into(), x.into());
    }
    if let Some(x) = args.alpha {
        overrides.insert("alpha".into(), x.into());
    }
    if let Some(x) = args.beta {
        overrides.insert("beta".into(), x.into());
    }
    if let Some(x) = args.auto_accept_easy {
        overrides.insert("auto_accept_easy".into(), x.into());
    }
    if let Some(raw) = &args.initial_weights {
        let weights = parse_weights(raw)?;
        overrides.insert("initial_weights".into(), serde_json::to_value(weights).expect("weights serialize"));
    }
    let config = SessionConfig::default()
        .merged(&Value::Object(overrides))
        .map_err(|e| CliError::Input(format!("invalid config: {e}")))?;

    Ok(Plan {
        source: source.ok_or_else(|| CliError::Input("--source is required".into()))?,
        target: target.ok_or_else(|| CliError::Input("--target is required".into()))?,
        config,
        output,
        format,
        accepted_only,
        individual,
        actions,
        keep_going,
        exec: if sequential { Execution::Sequential } else { Execution::Parallel },
    })
}

pub fn parse_actions(bytes: &[u8]) -> CliResult<Vec<Action>> {
    if let Ok(list) = serde_json::from_slice::<Vec<Action>>(bytes) {
        return Ok(list);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Input(format!("actions: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Input(format!("actions line {}: {e}", i + 1))))
        .collect()
}

fn session_input(e: colmatch_core::SessionError) -> CliError {
    match e {
        colmatch_core::SessionError::Model(_) | colmatch_core::SessionError::InvalidConfig(_) => {
            CliError::Input(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

fn build(plan: &Plan) -> CliResult<CurationSession> {
    let source_bytes = read_input(&plan.source)?;
    let target_bytes = read_input(&plan.target)?;
    let source_name = dataset_name(plan.source.to_str(), "source");
    let target_name = dataset_name(plan.target.to_str(), "target");
    let source = ingest_source(&source_bytes, &source_name).map_err(|e| CliError::Input(format!("{}: {e}", plan.source.display())))?;
    let target = load_target(&target_bytes, &target_name).map_err(|e| CliError::Input(format!("{}: {e}", plan.target.display())))?;
    let ctx = SessionContext {
        agent: std::sync::Arc::new(colmatch_core::agent::Agent::offline()),
        exec: plan.exec,
        ..SessionContext::default()
    };
    CurationSession::create(source, target, plan.config.clone(), MatcherRegistry::builtin(), ctx).map_err(session_input)
}

fn candidate_rows(session: &CurationSession, individual: bool) -> Vec<(String, String, String, usize, f64, &'static str)> {
    let mut rows = Vec::new();
    for list in session.candidate_lists() {
        for c in &list.candidates {
            rows.push((ENSEMBLE.to_string(), c.source.clone(), c.target.clone(), c.rank, c.ensemble_score, c.status.as_str()));
        }
    }
    if individual {
        let matrix = session.matrix();
        for (m, id) in matrix.matcher_ids().iter().enumerate() {
            for (s, source) in matrix.source_names.iter().enumerate() {
                let top = matrix.matcher_top_k(m, s, session.config().k, &Default::default());
                for (r, t) in top.into_iter().enumerate() {
                    let target = &matrix.target_names[t];
                    rows.push((id.clone(), source.clone(), target.clone(), r + 1, matrix.score(m, s, t), session.status_of(source, target).as_str()));
                }
            }
        }
    }
    rows
}

fn render(session: &CurationSession, plan: &Plan) -> CliResult<Vec<u8>> {
    if plan.accepted_only {
        return Ok(match plan.format {
            OutputFormat::Csv => session.export_csv().into_bytes(),
            OutputFormat::Json => session.export_json().into_bytes(),
        });
    }
    let rows = candidate_rows(session, plan.individual);
    match plan.format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CANDIDATE_HEADER.split(',')).map_err(|e| CliError::Runtime(e.to_string()))?;
            for (c, s, t, rank, score, status) in &rows {
                w.write_record([c.as_str(), s, t, &rank.to_string(), &score.to_string(), status])
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
        }
        OutputFormat::Json => {
            let rows: Vec<Row> = rows
                .iter()
                .map(|(c, s, t, rank, score, status)| Row {
                    configuration: c,
                    source_attribute: s,
                    target_attribute: t,
                    rank: *rank,
                    score: *score,
                    status,
                })
                .collect();
            let mut out = serde_json::to_vec_pretty(&rows).map_err(|e| CliError::Runtime(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

pub fn run(args: MatchArgs) -> CliResult<()> {
    let plan = plan(args)?;
    let actions = match &plan.actions {
        Some(p) => parse_actions(&read_input(p)?)?,
        None => Vec::new(),
    };
    let mut session = build(&plan)?;
    for (i, action) in actions.into_iter().enumerate() {
        if let Err(e) = session.apply(action) {
            let message = format!("action {} failed: {e}", i + 1);
            if plan.keep_going {
                eprintln!("colmatch: {message}");
            } else {
                return Err(CliError::Runtime(message));
            }
        }
    }
    for w in session.warnings() {
        eprintln!(
            "colmatch: warning: matcher {} scored {} -> {} as {}; clamped to {}",
            w.matcher_id, w.source, w.target, w.raw, w.clamped_to
        );
    }
    let bytes = render(&session, &plan)?;
    write_output(plan.output.as_deref(), &bytes)
}
