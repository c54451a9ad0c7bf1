use std::collections::BTreeMap;

use colmatch_core::ensemble::{EnsembleError, PrecisionTable, RankedLists};
use colmatch_core::model::normalize_name;
use colmatch_core::GroundTruth;

use crate::{read_input, write_output, CliError, CliResult, EvalArgs, EvalFormat};

const DEFAULT_CONFIGURATION: &str = "predictions";

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.contains(&normalize_name(h).as_str()))
}

/// Reads ranked predictions grouped by configuration. Rows without a rank
/// column are ranked in file order.
pub fn parse_predictions(bytes: &[u8]) -> CliResult<BTreeMap<String, RankedLists>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("predictions: {e}")))?
        .clone();
    let source = column(&headers, &["source_attribute", "source"])
        .ok_or_else(|| CliError::Input("predictions need a source_attribute column".into()))?;
    let target = column(&headers, &["target_attribute", "target"])
        .ok_or_else(|| CliError::Input("predictions need a target_attribute column".into()))?;
    let configuration = column(&headers, &["configuration"]);
    let rank = column(&headers, &["rank"]);

    let mut ranked: BTreeMap<String, BTreeMap<String, Vec<(usize, usize, String)>>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("predictions: {e}")))?;
        let field = |i: usize| {
            record
                .get(i)
                .map(str::trim)
                .ok_or_else(|| CliError::Input(format!("predictions line {} is missing a column", line + 2)))
        };
        let config = match configuration {
            Some(i) => field(i)?.to_string(),
            None => DEFAULT_CONFIGURATION.to_string(),
        };
        let r = match rank {
            Some(i) => field(i)?
                .parse()
                .map_err(|_| CliError::Input(format!("predictions line {}: rank is not an integer", line + 2)))?,
            None => 0,
        };
        ranked
            .entry(config)
            .or_default()
            .entry(field(source)?.to_string())
            .or_default()
            .push((r, line, field(target)?.to_string()));
    }
    Ok(ranked
        .into_iter()
        .map(|(config, sources)| {
            let lists = sources
                .into_iter()
                .map(|(s, mut targets)| {
                    targets.sort();
                    (s, targets.into_iter().map(|(_, _, t)| t).collect())
                })
                .collect();
            (config, lists)
        })
        .collect())
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(CliError::Input("--k needs positive integers".into()));
    }
    let predictions = parse_predictions(&read_input(&args.predictions)?)?;
    let truth = GroundTruth::parse(&read_input(&args.truth)?).map_err(|e| CliError::Input(e.to_string()))?;
    let table = PrecisionTable::evaluate(&predictions, &truth, &args.k).map_err(|e| match e {
        EnsembleError::EmptyGroundTruth | EnsembleError::InvalidK => CliError::Input(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    let json = {
        let mut v = serde_json::to_vec_pretty(&table).map_err(|e| CliError::Runtime(e.to_string()))?;
        v.push(b'\n');
        v
    };
    if let Some(path) = &args.json_output {
        write_output(Some(path), &json)?;
    }
    match args.format {
        EvalFormat::Text => write_output(None, table.to_text().as_bytes()),
        EvalFormat::Json => write_output(None, &json),
    }
}
