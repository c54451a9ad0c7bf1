//! Source-attribute clustering, one-to-one value mapping, and distribution
//! comparison used by the drill-down views.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::model::{bin_index, bin_labels, normalize_name, SourceAttribute, ValueProfile, NUMERIC_BINS};
use crate::text;

pub const EMBEDDING_DIM: usize = 512;
pub const DEFAULT_NEIGHBORS: usize = 5;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.6;
pub const DEFAULT_MAPPING_FLOOR: f64 = 0.5;
const CATEGORICAL_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEmbedding {
    pub attribute: String,
    pub vector: Vec<f64>,
}

impl AttributeEmbedding {
    pub fn cosine(&self, other: &AttributeEmbedding) -> f64 {
        self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum()
    }
}

/// Text of one attribute as seen by an embedding provider.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeText {
    pub attribute: String,
    pub pieces: Vec<String>,
}

impl AttributeText {
    pub fn from_source(attr: &SourceAttribute) -> Self {
        Self {
            attribute: attr.name.clone(),
            pieces: text::source_pieces(attr),
        }
    }
}

/// Turns attribute texts into unit vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, batch: &[AttributeText]) -> Vec<AttributeEmbedding>;
}

/// Character-trigram TF-IDF, feature-hashed into [`EMBEDDING_DIM`] buckets.
/// IDF is computed over the batch being embedded.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedNgramEmbedder;

impl HashedNgramEmbedder {
    pub fn bucket(gram: &str) -> usize {
        (text::fnv1a(gram.as_bytes()) % EMBEDDING_DIM as u64) as usize
    }

    /// Smoothed IDF: `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(n_docs: usize, df: usize) -> f64 {
        ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn dimension(&self) -> usize {
        EMBEDDING_DIM
    }

    fn embed(&self, batch: &[AttributeText]) -> Vec<AttributeEmbedding> {
        let tfs: Vec<BTreeMap<String, f64>> = batch
            .iter()
            .map(|a| text::ngram_counts(&a.pieces, text::NGRAM))
            .collect();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for tf in &tfs {
            for gram in tf.keys() {
                *df.entry(gram.as_str()).or_default() += 1;
            }
        }
        batch
            .iter()
            .zip(&tfs)
            .map(|(attr, tf)| {
                let mut vector = vec![0.0; EMBEDDING_DIM];
                for (gram, count) in tf {
                    vector[Self::bucket(gram)] += count * Self::idf(batch.len(), df[gram.as_str()]);
                }
                let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    vector[0] = 1.0;
                } else {
                    vector.iter_mut().for_each(|x| *x /= norm);
                }
                AttributeEmbedding {
                    attribute: attr.attribute.clone(),
                    vector,
                }
            })
            .collect()
    }
}

/// Embeds a single attribute with the default provider.
pub fn embed_attribute(attr: &SourceAttribute) -> AttributeEmbedding {
    HashedNgramEmbedder
        .embed(&[AttributeText::from_source(attr)])
        .pop()
        .expect("one embedding per input")
}

pub fn embed_sources(attrs: &[SourceAttribute], provider: &dyn EmbeddingProvider) -> Vec<AttributeEmbedding> {
    let texts: Vec<AttributeText> = attrs.iter().map(AttributeText::from_source).collect();
    provider.embed(&texts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<Vec<String>>,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, attribute: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.iter().any(|a| a == attribute))
    }
}

/// kNN graph clustering: `a -> b` when `b` is among `a`'s `n_neighbors` most
/// similar attributes and their cosine is at least `threshold`; clusters are
/// the connected components.
pub fn cluster_sources(embeddings: &[AttributeEmbedding], n_neighbors: usize, threshold: f64) -> ClusterAssignment {
    let mut sorted: Vec<&AttributeEmbedding> = embeddings.iter().collect();
    sorted.sort_by(|a, b| a.attribute.cmp(&b.attribute));
    let n = sorted.len();
    let mut uf = UnionFind::<usize>::new(n);

    for i in 0..n {
        let mut neighbors: Vec<(usize, f64)> = (0..n)
            .filter(|j| *j != i)
            .map(|j| (j, sorted[i].cosine(sorted[j])))
            .collect();
        neighbors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (j, cos) in neighbors.into_iter().take(n_neighbors) {
            if cos >= threshold {
                uf.union(i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, e) in sorted.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(e.attribute.clone());
    }
    let mut clusters: Vec<Vec<String>> = groups.into_values().collect();
    clusters.sort();
    ClusterAssignment { clusters }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    pub source_value: String,
    pub target_value: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMapping {
    pub pairs: Vec<ValuePair>,
    pub unmapped_source: Vec<String>,
    pub unmapped_target: Vec<String>,
}

/// Greedy one-to-one assignment by descending value similarity, keeping pairs
/// scoring at least `floor`.
pub fn map_values_with_floor<S: AsRef<str>, T: AsRef<str>>(source: &[S], target: &[T], floor: f64) -> ValueMapping {
    let src: Vec<&str> = dedup(source);
    let tgt: Vec<&str> = dedup(target);

    let mut scored: Vec<(f64, bool, &str, &str)> = Vec::new();
    for s in &src {
        for t in &tgt {
            let score = text::value_similarity(s, t);
            if score >= floor {
                scored.push((score, s == t, s, t));
            }
        }
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(b.2))
            .then(a.3.cmp(b.3))
    });

    let mut used_s = BTreeSet::new();
    let mut used_t = BTreeSet::new();
    let mut pairs = Vec::new();
    for (score, _, s, t) in scored {
        if used_s.contains(s) || used_t.contains(t) {
            continue;
        }
        used_s.insert(s);
        used_t.insert(t);
        pairs.push(ValuePair {
            source_value: s.to_string(),
            target_value: t.to_string(),
            score,
        });
    }
    ValueMapping {
        pairs,
        unmapped_source: src.iter().filter(|s| !used_s.contains(*s)).map(|s| s.to_string()).collect(),
        unmapped_target: tgt.iter().filter(|t| !used_t.contains(*t)).map(|t| t.to_string()).collect(),
    }
}

pub fn map_values<S: AsRef<str>, T: AsRef<str>>(source: &[S], target: &[T]) -> ValueMapping {
    map_values_with_floor(source, target, DEFAULT_MAPPING_FLOOR)
}

fn dedup<S: AsRef<str>>(values: &[S]) -> Vec<&str> {
    let mut seen = BTreeSet::new();
    values
        .iter()
        .map(AsRef::as_ref)
        .filter(|v| seen.insert(*v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedBin {
    pub label: String,
    pub source_count: u64,
    pub target_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub numeric: bool,
    pub aligned_bins: Vec<AlignedBin>,
    /// `sum(min(p_s, p_t))` over normalized frequencies.
    pub overlap: f64,
}

fn overlap_of(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb) = (a.iter().sum::<u64>(), b.iter().sum::<u64>());
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 / na as f64).min(*y as f64 / nb as f64))
        .sum();
    total.clamp(0.0, 1.0)
}

/// Side-by-side distribution of two profiles. Numeric when both sides are
/// numeric (shared equal-width bins), categorical otherwise.
pub fn compare_distributions(source: &ValueProfile, target: &ValueProfile) -> DistributionComparison {
    if source.inferred_type.is_numeric() && target.inferred_type.is_numeric() {
        compare_numeric(source, target)
    } else {
        compare_categorical(source, target)
    }
}

fn compare_numeric(source: &ValueProfile, target: &ValueProfile) -> DistributionComparison {
    let (sv, tv) = (source.numeric_values(), target.numeric_values());
    let all = sv.iter().chain(&tv).map(|(x, _)| *x);
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return DistributionComparison {
            numeric: true,
            aligned_bins: Vec::new(),
            overlap: 0.0,
        };
    }
    let labels = bin_labels(lo, hi, NUMERIC_BINS);
    let count = |values: &[(f64, u64)]| {
        let mut bins = vec![0u64; labels.len()];
        for (x, c) in values {
            bins[bin_index(*x, lo, hi, labels.len())] += c;
        }
        bins
    };
    let (sc, tc) = (count(&sv), count(&tv));
    DistributionComparison {
        numeric: true,
        overlap: overlap_of(&sc, &tc),
        aligned_bins: labels
            .into_iter()
            .zip(sc.iter().zip(&tc))
            .map(|(label, (s, t))| AlignedBin {
                label,
                source_count: *s,
                target_count: *t,
            })
            .collect(),
    }
}

fn normalized_counts(profile: &ValueProfile) -> BTreeMap<String, (u64, String)> {
    let mut out: BTreeMap<String, (u64, String)> = BTreeMap::new();
    for (value, count) in &profile.value_counts {
        let entry = out
            .entry(normalize_name(value))
            .or_insert_with(|| (0, value.clone()));
        entry.0 += count;
    }
    out
}

fn compare_categorical(source: &ValueProfile, target: &ValueProfile) -> DistributionComparison {
    let (sc, tc) = (normalized_counts(source), normalized_counts(target));
    let keys: BTreeSet<&String> = sc.keys().chain(tc.keys()).collect();
    let (mut s_all, mut t_all) = (Vec::new(), Vec::new());
    for k in &keys {
        s_all.push(sc.get(*k).map_or(0, |e| e.0));
        t_all.push(tc.get(*k).map_or(0, |e| e.0));
    }
    let overlap = overlap_of(&s_all, &t_all);

    let top = |counts: &BTreeMap<String, (u64, String)>| {
        let mut v: Vec<(&String, u64)> = counts.iter().map(|(k, e)| (k, e.0)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        v.into_iter().take(CATEGORICAL_BINS).map(|(k, _)| k.clone()).collect::<Vec<_>>()
    };
    let shown: BTreeSet<String> = top(&sc).into_iter().chain(top(&tc)).collect();
    let mut aligned_bins: Vec<AlignedBin> = shown
        .into_iter()
        .map(|k| {
            let s = sc.get(&k);
            let t = tc.get(&k);
            AlignedBin {
                label: s.or(t).map(|e| e.1.clone()).unwrap_or(k.clone()),
                source_count: s.map_or(0, |e| e.0),
                target_count: t.map_or(0, |e| e.0),
            }
        })
        .collect();
    aligned_bins.sort_by(|a, b| {
        (b.source_count + b.target_count)
            .cmp(&(a.source_count + a.target_count))
            .then(a.label.cmp(&b.label))
    });
    DistributionComparison {
        numeric: false,
        aligned_bins,
        overlap,
    }
}
