use std::fmt::Write;

use super::{CandidateContext, ExplanationCategory, MemoryEntry, MAX_EXPLANATIONS};

pub const MAX_MEMORY_HITS: usize = 5;
pub const NO_PRIOR_DECISIONS: &str = "(no prior decisions)";

/// Renders the validation prompt. Identical inputs give byte-identical output.
pub fn build_prompt(ctx: &CandidateContext, memory_hits: &[MemoryEntry]) -> String {
    let mut p = String::new();

    p.push_str(
        "You are a data harmonization expert validating a schema-matching candidate.\n\
         Decide whether the source column and the target schema attribute describe the same concept.\n\
         Use the profile, the target description and permissible values, the matcher scores, the value\n\
         mapping preview and any prior decisions below. Think step by step.\n\n",
    );

    let _ = writeln!(p, "## Candidate");
    let _ = writeln!(p, "source_attribute: {}", ctx.source);
    let _ = writeln!(p, "target_attribute: {}", ctx.target);
    let _ = writeln!(p, "memory_key: {}\n", ctx.key());

    let _ = writeln!(p, "## Source profile\n{}\n", pretty(&ctx.source_profile));
    let _ = writeln!(p, "## Target attribute\n{}\n", pretty(&ctx.target_attribute));

    let _ = writeln!(p, "## Matcher scores");
    if ctx.matcher_scores.is_empty() {
        let _ = writeln!(p, "(not scored by the ensemble)");
    }
    for s in &ctx.matcher_scores {
        let _ = writeln!(p, "- {}: {:.4}", s.matcher_id, s.score);
    }
    if let (Some(score), Some(rank)) = (ctx.ensemble_score, ctx.rank) {
        let _ = writeln!(p, "- ensemble: {score:.4} (rank {rank})");
    }
    let _ = writeln!(
        p,
        "- name_similarity: {:.4}\n- token_overlap: {:.4}\n- value_overlap: {:.4}\n",
        ctx.name_similarity, ctx.token_overlap, ctx.value_overlap
    );

    let _ = writeln!(p, "## Value mapping preview");
    if ctx.value_mapping_preview.is_empty() {
        let _ = writeln!(p, "(no value pairs above the mapping floor)");
    }
    for v in &ctx.value_mapping_preview {
        let _ = writeln!(p, "- {} -> {} ({:.3})", v.source_value, v.target_value, v.score);
    }
    p.push('\n');

    let _ = writeln!(p, "## Prior decisions");
    if memory_hits.is_empty() {
        let _ = writeln!(p, "{NO_PRIOR_DECISIONS}");
    }
    for hit in memory_hits.iter().take(super::MAX_MEMORY_HITS) {
        let feedback = match hit.user_feedback {
            Some(super::Feedback::Confirmed) => "confirmed by user",
            Some(super::Feedback::Corrected) => "corrected by user",
            None => "no user feedback",
        };
        let _ = writeln!(
            p,
            "- {}: decided {} ({feedback})",
            hit.key,
            if hit.verdict.final_decision { "match" } else { "no match" }
        );
    }
    p.push('\n');

    let categories: Vec<String> = ExplanationCategory::ALL
        .iter()
        .map(|c| format!("\"{}\"", c.as_str()))
        .collect();
    let _ = writeln!(p, "## Output format");
    let _ = writeln!(
        p,
        "Respond with a single JSON object and nothing else. Give between 1 and {MAX_EXPLANATIONS} explanations."
    );
    let _ = writeln!(
        p,
        "{{\n  \"explanations\": [\n    {{\n      \"is_match\": true | false,\n      \"category\": one of [{}],\n      \"reasoning\": \"<detailed reasoning>\",\n      \"references\": [\"<evidence such as values or descriptions>\"],\n      \"confidence\": <number between 0 and 1>\n    }}\n  ],\n  \"final_decision\": true | false\n}}",
        categories.join(", ")
    );
    p
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}
