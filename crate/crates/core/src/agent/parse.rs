use serde_json::Value;

use super::{synthesize_decision, AgentError, AgentVerdict, Explanation, ExplanationCategory, MAX_EXPLANATIONS};

/// Locates the first complete top-level JSON object in `text`, tolerating
/// surrounding prose and code fences.
pub fn extract_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' if start.is_some() => in_string = true,
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start?..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn malformed(msg: impl Into<String>) -> AgentError {
    AgentError::MalformedModelResponse(msg.into())
}

fn parse_explanation(idx: usize, value: &Value) -> Result<Explanation, AgentError> {
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(format!("explanation {idx} is not an object")))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| malformed(format!("explanation {idx} missing `{name}`")));

    let is_match = field("is_match")?
        .as_bool()
        .ok_or_else(|| malformed(format!("explanation {idx}: `is_match` must be boolean")))?;
    let category_raw = field("category")?
        .as_str()
        .ok_or_else(|| malformed(format!("explanation {idx}: `category` must be a string")))?;
    let category = ExplanationCategory::parse(category_raw)
        .ok_or_else(|| malformed(format!("explanation {idx}: unknown category `{category_raw}`")))?;
    let reasoning = field("reasoning")?
        .as_str()
        .ok_or_else(|| malformed(format!("explanation {idx}: `reasoning` must be a string")))?
        .to_string();
    let references = field("references")?
        .as_array()
        .ok_or_else(|| malformed(format!("explanation {idx}: `references` must be a list")))?
        .iter()
        .map(|r| {
            r.as_str()
                .map(str::to_string)
                .ok_or_else(|| malformed(format!("explanation {idx}: references must be strings")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let confidence = field("confidence")?
        .as_f64()
        .ok_or_else(|| malformed(format!("explanation {idx}: `confidence` must be a number")))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(malformed(format!("explanation {idx}: confidence {confidence} outside [0, 1]")));
    }
    Ok(Explanation {
        is_match,
        category,
        reasoning,
        references,
        confidence,
    })
}

/// Parses and validates a model response. Either every invariant holds and a
/// full verdict is returned, or the response is rejected as a whole.
pub fn parse_verdict(response: &str, model_id: &str) -> Result<AgentVerdict, AgentError> {
    let object = extract_object(response).ok_or_else(|| malformed("no JSON object in response"))?;
    let value: Value = serde_json::from_str(object).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
    let list = value
        .get("explanations")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing `explanations` list"))?;
    if list.is_empty() || list.len() > MAX_EXPLANATIONS {
        return Err(malformed(format!(
            "expected 1 to {MAX_EXPLANATIONS} explanations, got {}",
            list.len()
        )));
    }
    let explanations = list
        .iter()
        .enumerate()
        .map(|(i, v)| parse_explanation(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    let final_decision = match value.get("final_decision") {
        None | Some(Value::Null) => synthesize_decision(&explanations),
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(malformed("`final_decision` must be boolean")),
    };
    Ok(AgentVerdict {
        explanations,
        final_decision,
        model_id: model_id.to_string(),
        from_fallback: false,
    })
}
