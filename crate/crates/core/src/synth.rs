//! Deterministic synthetic matching tasks with planted ground truth.
//!
//! A target schema is drawn from a biomedical-flavoured vocabulary with a
//! three-level hierarchy. Source columns are derived from target attributes
//! by exact duplication or by renaming plus value perturbation; distractor
//! columns have no counterpart.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Feedback;
use crate::ensemble::{CandidateStatus, GroundTruth};
use crate::model::{normalize_name, SourceAttribute, SourceDataset, TargetAttribute, TargetSchema, ValueType};
use crate::session::{Action, CurationSession};

const HIERARCHY: &[(&str, &[&str])] = &[
    ("clinical", &["diagnosis", "treatment", "follow_up", "exposure", "family_history", "pathology"]),
    ("biospecimen", &["sample", "portion", "analyte", "aliquot", "slide"]),
    ("demographic", &["demographic", "vital_status"]),
    ("molecular", &["mutation", "expression", "copy_number", "methylation"]),
    ("administrative", &["case", "project", "file", "annotation"]),
];

const TOKENS: &[&str] = &[
    "age", "tumor", "stage", "grade", "site", "primary", "diagnosis", "days", "last", "follow", "vital", "status",
    "cause", "death", "smoking", "pack", "years", "alcohol", "history", "race", "ethnicity", "gender", "weight",
    "height", "bmi", "sample", "type", "tissue", "portion", "analyte", "concentration", "volume", "method",
    "morphology", "laterality", "residual", "disease", "therapy", "radiation", "dose", "agent", "response",
    "treatment", "outcome", "prior", "malignancy", "metastasis", "lymph", "nodes", "positive", "examined",
    "margin", "invasion", "perineural", "vascular", "icd", "code", "classification", "system", "version", "figo",
    "ajcc", "clinical", "pathologic", "specimen", "collection", "anatomic", "menopause", "pregnancy", "hpv",
    "receptor", "score", "percent", "cells", "necrosis", "normal", "stromal", "nuclei", "intent", "regimen",
    "cycles", "progression", "recurrence", "event", "relapse", "biopsy", "procedure", "surgery", "imaging",
    "ecog", "karnofsky", "performance", "comorbidity", "tobacco", "exposure", "frequency", "duration",
    "education", "occupation", "country", "residence", "birth", "index", "reference", "freezing", "preservation",
    "shipping", "temperature", "quality", "integrity", "ratio", "yield", "purity", "plate", "well", "center",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("tumor", "neoplasm"),
    ("diagnosis", "dx"),
    ("treatment", "tx"),
    ("history", "hx"),
    ("therapy", "rx"),
    ("days", "d"),
    ("years", "yrs"),
    ("number", "num"),
    ("percent", "pct"),
    ("primary", "prim"),
    ("specimen", "spec"),
    ("metastasis", "mets"),
    ("radiation", "rt"),
    ("gender", "sex"),
    ("collection", "collected"),
    ("concentration", "conc"),
    ("pathologic", "path"),
    ("clinical", "clin"),
    ("temperature", "temp"),
    ("procedure", "proc"),
];

const SHARED_POOLS: &[&[&str]] = &[
    &["Yes", "No", "Unknown", "Not Reported"],
    &["Yes", "No", "Unknown"],
    &["Positive", "Negative", "Equivocal", "Not Performed", "Unknown"],
    &["Left", "Right", "Bilateral", "Midline", "Unknown"],
    &["Present", "Absent", "Indeterminate", "Not Reported"],
];

const STAGES: &[&str] = &[
    "Stage 0", "Stage I", "Stage IA", "Stage IB", "Stage II", "Stage IIA", "Stage IIB", "Stage III", "Stage IIIA",
    "Stage IIIB", "Stage IIIC", "Stage IV", "Stage IVA", "Stage IVB",
];

const WORDS: &[&str] = &[
    "Adenocarcinoma", "Carcinoma", "Squamous", "Ductal", "Lobular", "Serous", "Mucinous", "Endometrioid",
    "Clear Cell", "Papillary", "Medullary", "Sarcoma", "Lymphoma", "Melanoma", "Blood", "Bone Marrow",
    "Buccal Cell", "Saliva", "Plasma", "Serum", "Urine", "Frozen", "FFPE", "OCT", "Fresh", "Primary Tumor",
    "Recurrent Tumor", "Metastatic", "Solid Tissue Normal", "Cell Line", "Xenograft", "Chemotherapy",
    "Hormone Therapy", "Immunotherapy", "Targeted Molecular Therapy", "Radiation Therapy", "Surgery",
    "Complete Response", "Partial Response", "Stable Disease", "Progressive Disease", "Alive", "Dead",
    "Current Smoker", "Former Smoker", "Never Smoker", "White", "Asian", "Black or African American",
    "American Indian", "Native Hawaiian", "Hispanic or Latino", "Not Hispanic or Latino", "Male", "Female",
    "Ovary", "Uterus", "Breast", "Lung", "Colon", "Kidney", "Liver", "Pancreas", "Stomach", "Brain", "Skin",
    "Thyroid", "Prostate", "Bladder", "Cervix", "Esophagus", "Head and Neck", "Lymph Node", "Adrenal Gland",
    "DNA", "RNA", "Total RNA", "Protein", "WGA", "Illumina", "Affymetrix", "Nanostring", "Sanger", "PCR",
    "Grade 1", "Grade 2", "Grade 3", "Grade 4", "GX", "G1", "G2", "G3", "High Grade", "Low Grade",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    ExactDuplicate,
    Renamed,
    Distractor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub target_attributes: usize,
    pub source_attributes: usize,
    pub rows: usize,
    pub duplicate_fraction: f64,
    pub distractor_fraction: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, target_attributes: usize, source_attributes: usize) -> Self {
        Self {
            seed,
            target_attributes,
            source_attributes,
            rows: 60,
            duplicate_fraction: 0.2,
            distractor_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthTask {
    pub name: String,
    pub source: SourceDataset,
    pub target: TargetSchema,
    pub truth: GroundTruth,
    pub derivations: BTreeMap<String, Derivation>,
}

impl SynthTask {
    pub fn target_json(&self) -> String {
        serde_json::to_string_pretty(&self.target).expect("schema serializes")
    }

    /// Writes `source.csv`, `target.json` and `truth.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("source.csv"), self.source.to_delimited())?;
        std::fs::write(dir.join("target.json"), self.target_json())?;
        std::fs::write(dir.join("truth.csv"), self.truth.to_csv())?;
        Ok(())
    }
}

fn title_case(token: &str) -> String {
    let mut c = token.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn target_values(rng: &mut ChaCha8Rng) -> (ValueType, Option<Vec<String>>) {
    let roll: f64 = rng.random();
    if roll < 0.62 {
        let values: Vec<String> = match rng.random_range(0..10) {
            0..=2 => SHARED_POOLS.choose(rng).expect("non-empty").iter().map(|s| s.to_string()).collect(),
            3 => {
                let n = rng.random_range(4..=STAGES.len());
                let start = rng.random_range(0..=STAGES.len() - n);
                STAGES[start..start + n].iter().map(|s| s.to_string()).collect()
            }
            _ => {
                let n = rng.random_range(3..=12);
                let mut picked: Vec<String> = WORDS.choose_multiple(rng, n).map(|s| s.to_string()).collect();
                picked.push("Unknown".into());
                picked
            }
        };
        (ValueType::Enumeration, Some(values))
    } else if roll < 0.82 {
        (ValueType::Integer, None)
    } else if roll < 0.92 {
        (ValueType::Number, None)
    } else {
        (ValueType::Text, None)
    }
}

/// Target schema with `n` attributes over the fixed hierarchy.
pub fn generate_target(rng: &mut ChaCha8Rng, n: usize, name: &str) -> TargetSchema {
    let mut names = BTreeSet::new();
    let mut attributes = Vec::with_capacity(n);
    while attributes.len() < n {
        let (supercategory, categories) = HIERARCHY.choose(rng).expect("non-empty");
        let category = categories.choose(rng).expect("non-empty");
        let width = rng.random_range(2..=3);
        let tokens: Vec<&str> = TOKENS.choose_multiple(rng, width).copied().collect();
        let attr_name = tokens.join("_");
        if !names.insert(attr_name.clone()) {
            continue;
        }
        let (value_type, enum_values) = target_values(rng);
        attributes.push(TargetAttribute {
            name: attr_name,
            supercategory: supercategory.to_string(),
            category: category.to_string(),
            description: format!(
                "The {} recorded for the {}.",
                tokens.join(" "),
                category.replace('_', " ")
            ),
            value_type,
            enum_values,
            profile: None,
        });
    }
    attributes.sort_by(|a, b| (&a.supercategory, &a.category, &a.name).cmp(&(&b.supercategory, &b.category, &b.name)));
    TargetSchema {
        name: name.to_string(),
        attributes,
    }
}

fn abbreviate(token: &str) -> String {
    if token.len() <= 4 {
        return token.to_string();
    }
    let mut out: String = token.chars().take(1).collect();
    out.extend(token.chars().skip(1).filter(|c| !"aeiou".contains(*c)).take(3));
    out
}

fn rename(rng: &mut ChaCha8Rng, name: &str) -> String {
    let mut tokens: Vec<String> = name.split('_').map(str::to_string).collect();
    let mut changed = false;
    for t in tokens.iter_mut() {
        if let Some((_, syn)) = SYNONYMS.iter().find(|(w, _)| w == t) {
            if rng.random_bool(0.7) {
                *t = syn.to_string();
                changed = true;
            }
        }
    }
    match rng.random_range(0..6) {
        0 => {
            let i = rng.random_range(0..tokens.len());
            tokens[i] = abbreviate(&tokens[i]);
        }
        1 if tokens.len() > 1 => tokens.reverse(),
        2 => tokens.insert(0, ["pt", "patient", "subj", "case"].choose(rng).expect("non-empty").to_string()),
        3 if tokens.len() > 2 => {
            let i = rng.random_range(0..tokens.len());
            tokens.remove(i);
        }
        4 => tokens.push(["cd", "val", "desc", "cat"].choose(rng).expect("non-empty").to_string()),
        _ if !changed => {
            let i = rng.random_range(0..tokens.len());
            tokens[i] = abbreviate(&tokens[i]);
        }
        _ => {}
    }
    let joined = match rng.random_range(0..3) {
        0 => tokens.iter().map(|t| title_case(t)).collect::<Vec<_>>().join(""),
        1 => tokens.iter().map(|t| title_case(t)).collect::<Vec<_>>().join(" "),
        _ => tokens.join("_"),
    };
    if normalize_name(&joined) == normalize_name(name) {
        format!("{joined}_x")
    } else {
        joined
    }
}

fn perturb_value(rng: &mut ChaCha8Rng, value: &str) -> String {
    match rng.random_range(0..6) {
        0 => value.to_lowercase(),
        1 => value.to_uppercase(),
        2 => value
            .strip_prefix("Stage ")
            .or_else(|| value.strip_prefix("Grade "))
            .map(str::to_string)
            .unwrap_or_else(|| value.replace(' ', "_")),
        3 if value.contains(' ') => value
            .split(' ')
            .filter_map(|w| w.chars().next())
            .collect::<String>()
            .to_uppercase(),
        _ => value.to_string(),
    }
}

fn numeric_column(rng: &mut ChaCha8Rng, rows: usize, integer: bool) -> Vec<String> {
    let lo: f64 = rng.random_range(0.0..50.0);
    let span: f64 = rng.random_range(5.0..5000.0);
    (0..rows)
        .map(|_| {
            if rng.random_bool(0.05) {
                return String::new();
            }
            let x = lo + rng.random::<f64>() * span;
            if integer {
                format!("{}", x.round() as i64)
            } else {
                format!("{x:.2}")
            }
        })
        .collect()
}

fn categorical_column(rng: &mut ChaCha8Rng, rows: usize, values: &[String]) -> Vec<String> {
    (0..rows)
        .map(|_| {
            if rng.random_bool(0.05) {
                String::new()
            } else {
                values.choose(rng).expect("non-empty").clone()
            }
        })
        .collect()
}

fn text_column(rng: &mut ChaCha8Rng, rows: usize) -> Vec<String> {
    (0..rows)
        .map(|i| format!("{}-{:04}", WORDS.choose(rng).expect("non-empty").replace(' ', ""), i))
        .collect()
}

fn column_for_target(rng: &mut ChaCha8Rng, target: &TargetAttribute, rows: usize, perturb: bool) -> Vec<String> {
    match (&target.enum_values, target.value_type) {
        (Some(values), _) if !values.is_empty() => {
            let keep = rng.random_range(values.len().div_ceil(2)..=values.len());
            let mut subset: Vec<String> = values.choose_multiple(rng, keep).cloned().collect();
            if perturb {
                let style = rng.random_range(0..3);
                if style > 0 {
                    subset = subset.iter().map(|v| perturb_value(rng, v)).collect();
                }
            }
            categorical_column(rng, rows, &subset)
        }
        (_, ValueType::Integer) => numeric_column(rng, rows, true),
        (_, ValueType::Number) => numeric_column(rng, rows, false),
        _ => text_column(rng, rows),
    }
}

fn distractor(rng: &mut ChaCha8Rng, rows: usize, taken: &BTreeSet<String>) -> (String, Vec<String>) {
    loop {
        let name = format!(
            "{}_{}",
            ["internal", "legacy", "tmp", "batch", "site", "lab", "qc"].choose(rng).expect("non-empty"),
            ["flag", "id", "note", "checksum", "operator", "run", "bin"].choose(rng).expect("non-empty")
        );
        if taken.contains(&normalize_name(&name)) {
            continue;
        }
        let values = match rng.random_range(0..3) {
            0 => numeric_column(rng, rows, true),
            1 => text_column(rng, rows),
            _ => {
                let pool: Vec<String> = (0..rng.random_range(2..6)).map(|i| format!("code_{i}")).collect();
                categorical_column(rng, rows, &pool)
            }
        };
        return (name, values);
    }
}

/// One matching task.
pub fn generate_task(cfg: &SynthConfig) -> SynthTask {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = generate_target(&mut rng, cfg.target_attributes, &format!("synthetic_target_{}", cfg.seed));

    let n = cfg.source_attributes;
    let n_distractors = ((n as f64) * cfg.distractor_fraction).round() as usize;
    let n_duplicates = ((n as f64) * cfg.duplicate_fraction).round() as usize;
    let n_derived = n - n_distractors;

    let mut picks: Vec<usize> = (0..target.attributes.len()).collect();
    picks.shuffle(&mut rng);
    picks.truncate(n_derived);

    let mut columns: Vec<(String, Vec<String>, Option<String>, Derivation)> = Vec::new();
    let mut taken = BTreeSet::new();
    for (i, t_idx) in picks.iter().enumerate() {
        let t = &target.attributes[*t_idx];
        let duplicate = i < n_duplicates;
        let mut name = if duplicate { t.name.clone() } else { rename(&mut rng, &t.name) };
        while !taken.insert(normalize_name(&name)) {
            name.push_str("_2");
        }
        let values = column_for_target(&mut rng, t, cfg.rows, !duplicate);
        let kind = if duplicate { Derivation::ExactDuplicate } else { Derivation::Renamed };
        columns.push((name, values, Some(t.name.clone()), kind));
    }
    for _ in 0..n_distractors {
        let (name, values) = distractor(&mut rng, cfg.rows, &taken);
        taken.insert(normalize_name(&name));
        columns.push((name, values, None, Derivation::Distractor));
    }
    columns.shuffle(&mut rng);

    let mut truth = BTreeSet::new();
    let mut derivations = BTreeMap::new();
    let attributes = columns
        .into_iter()
        .map(|(name, values, t, kind)| {
            if let Some(t) = t {
                truth.insert((name.clone(), t));
            }
            derivations.insert(name.clone(), kind);
            SourceAttribute::new(name, values)
        })
        .collect();
    SynthTask {
        name: format!("task_{}", cfg.seed),
        source: SourceDataset::new(format!("synthetic_source_{}", cfg.seed), attributes).expect("names are unique"),
        target,
        truth: GroundTruth { pairs: truth },
        derivations,
    }
}

/// Ten tasks spanning 100–500 target and 15–30 source attributes.
pub fn benchmark_suite(seed: u64) -> Vec<SynthTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..10)
        .map(|i| {
            let targets = rng.random_range(100..=500);
            let sources = rng.random_range(15..=30);
            generate_task(&SynthConfig::new(seed.wrapping_mul(1000).wrapping_add(i), targets, sources))
        })
        .collect()
}

/// A 479-attribute target with an 18-column source, the scale of a typical
/// single-study harmonization.
pub fn study_scale_task() -> SynthTask {
    generate_task(&SynthConfig::new(479_018, 479, 18))
}

/// A random action against the current session state. Most actions are
/// valid; some are deliberately not (accepting a rejected pair, claiming a
/// value twice) so callers also exercise the error paths.
pub fn random_action<R: Rng>(rng: &mut R, session: &CurationSession) -> Action {
    let lists = session.candidate_lists();
    let roll = rng.random_range(0..100);
    let pick_pair = |rng: &mut R| {
        let list = lists.choose(rng).expect("sessions have sources");
        let c = list.candidates.choose(rng).expect("lists are non-empty");
        (c.source.clone(), c.target.clone(), c.status)
    };
    match roll {
        0..=24 => {
            let (source, target, status) = pick_pair(rng);
            if matches!(status, CandidateStatus::Suggested | CandidateStatus::Shadowed) && rng.random_bool(0.7) {
                Action::Accept { source, target }
            } else {
                Action::Reject { source, target }
            }
        }
        25..=34 => {
            let (source, target, _) = pick_pair(rng);
            Action::Accept { source, target }
        }
        35..=44 => {
            let ids = session.registry().ids();
            let n = rng.random_range(1..=ids.len());
            let weights = ids
                .choose_multiple(rng, n)
                .map(|id| (id.clone(), rng.random_range(0..=40) as f64 * 0.05))
                .collect();
            Action::SetWeights { weights }
        }
        45..=51 => Action::SetThresholds {
            name_threshold: Some(rng.random_range(70..=100) as f64 / 100.0),
            value_threshold: rng.random_bool(0.5).then(|| rng.random_range(70..=100) as f64 / 100.0),
        },
        52..=61 => {
            let keys: Vec<String> = session.agent().memory_snapshot().entries().map(|e| e.key.clone()).collect();
            let key = keys.choose(rng).cloned().unwrap_or_else(|| "missing::key".into());
            let feedback = [None, Some(Feedback::Confirmed), Some(Feedback::Corrected)]
                .choose(rng)
                .copied()
                .flatten();
            Action::Feedback { key, feedback }
        }
        62..=73 => {
            let (source, target, _) = pick_pair(rng);
            let s_values = &session.source().attribute(&source).expect("listed").profile.unique_values;
            let t_values = session.target().attribute(&target).expect("listed").values();
            match (s_values.choose(rng), rng.random_bool(0.8)) {
                (Some(sv), true) if !t_values.is_empty() => Action::EditValueMapping {
                    source,
                    target,
                    source_value: sv.clone(),
                    target_value: t_values.choose(rng).cloned(),
                },
                (Some(sv), _) => Action::EditValueMapping {
                    source,
                    target,
                    source_value: sv.clone(),
                    target_value: None,
                },
                (None, _) => Action::Undo,
            }
        }
        74..=87 => Action::Undo,
        88..=94 => Action::Redo,
        _ => Action::JumpTo {
            seq: rng.random_range(0..=session.timeline().len() as u64 + 1),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate_task(&SynthConfig::new(7, 120, 20));
        let b = generate_task(&SynthConfig::new(7, 120, 20));
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn shapes() {
        let t = generate_task(&SynthConfig::new(3, 150, 24));
        assert_eq!(t.target.attributes.len(), 150);
        assert_eq!(t.source.attributes.len(), 24);
        let distractors = t.derivations.values().filter(|d| **d == Derivation::Distractor).count();
        assert_eq!(t.truth.pairs.len(), 24 - distractors);
        for (s, tgt) in &t.truth.pairs {
            assert!(t.source.attribute(s).is_some());
            assert!(t.target.attribute(tgt).is_some());
        }
    }

    #[test]
    fn suite_ranges() {
        for task in benchmark_suite(1) {
            assert!((100..=500).contains(&task.target.attributes.len()));
            assert!((15..=30).contains(&task.source.attributes.len()));
        }
    }

    #[test]
    fn study_scale() {
        let t = study_scale_task();
        assert_eq!((t.source.attributes.len(), t.target.attributes.len()), (18, 479));
    }

    #[test]
    fn files_round_trip() {
        let t = generate_task(&SynthConfig::new(11, 100, 15));
        let dir = tempfile::tempdir().unwrap();
        t.write_to(dir.path()).unwrap();
        let src = crate::model::ingest_source(&std::fs::read(dir.path().join("source.csv")).unwrap(), &t.source.name).unwrap();
        assert_eq!(src, t.source);
        let tgt = crate::model::parse_target_schema(&std::fs::read(dir.path().join("target.json")).unwrap()).unwrap();
        assert_eq!(tgt, t.target);
        let truth = GroundTruth::parse(&std::fs::read(dir.path().join("truth.csv")).unwrap()).unwrap();
        assert_eq!(truth, t.truth);
    }
}
