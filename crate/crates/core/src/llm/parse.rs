//! Output grammars of the AI units.
//!
//! Three shapes are used: a flat list (one item per line), `key: value`
//! mapping lines, and `|`-delimited records. A lone `None` (or `[]`) means
//! an empty answer. Errors carry a short reason; [`super::invoke`] turns a
//! second failure into `MalformedOutput`.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingValue {
    List(Vec<String>),
    Text(String),
}

fn content_lines(raw: &str) -> impl Iterator<Item = &str> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .map(strip_bullet)
}

fn strip_bullet(line: &str) -> &str {
    for prefix in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(prefix) {
            return rest.trim();
        }
    }
    line
}

fn is_empty_answer(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t.eq_ignore_ascii_case("none") || t == "[]"
}

/// One item per line; bullets stripped. A line ending in `:` is a header,
/// which the grammar does not allow.
pub fn parse_list_output(raw: &str) -> Result<Vec<String>, String> {
    if is_empty_answer(raw) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in content_lines(raw) {
        if line.ends_with(':') {
            return Err(format!("unexpected header line {line:?}"));
        }
        out.push(line.to_string());
    }
    Ok(out)
}

fn parse_value(value: &str) -> MappingValue {
    let v = value.trim();
    match v.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        Some(inner) => MappingValue::List(
            inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        ),
        None => MappingValue::Text(v.to_string()),
    }
}

fn split_mapping<'a>(
    raw: &'a str,
    split: impl Fn(&'a str) -> Option<(&'a str, &'a str)>,
) -> Result<Vec<(String, MappingValue)>, String> {
    if is_empty_answer(raw) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in content_lines(raw) {
        let (key, value) =
            split(line).ok_or_else(|| format!("expected `key: value`, got {line:?}"))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(format!("empty key or value in {line:?}"));
        }
        out.push((key.to_string(), parse_value(value)));
    }
    Ok(out)
}

/// `key: value` lines split at the first colon. A bracketed value
/// `[a, b]` becomes a list.
pub fn parse_mapping_output(raw: &str) -> Result<Vec<(String, MappingValue)>, String> {
    split_mapping(raw, |l| l.split_once(':'))
}

/// `entity: label` lines split at the last colon, so entity names may
/// contain colons while labels may not.
pub fn parse_label_output(raw: &str) -> Result<Vec<(String, String)>, String> {
    split_mapping(raw, |l| l.rsplit_once(':'))?
        .into_iter()
        .map(|(k, v)| match v {
            MappingValue::Text(t) => Ok((k, t)),
            MappingValue::List(_) => Err(format!("label for {k:?} must be a single value")),
        })
        .collect()
}

/// Records of exactly `fields` non-empty `|`-separated fields.
pub fn parse_delimited(raw: &str, fields: usize) -> Result<Vec<Vec<String>>, String> {
    if is_empty_answer(raw) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in content_lines(raw) {
        let parts: Vec<String> = line.split('|').map(|p| p.trim().to_string()).collect();
        if parts.len() != fields || parts.iter().any(String::is_empty) {
            return Err(format!(
                "expected {fields} `|`-separated fields, got {line:?}"
            ));
        }
        out.push(parts);
    }
    Ok(out)
}
