//! `{name}` placeholder substitution used by driver templates and prompts.
//!
//! Only identifiers from a declared slot set are treated as placeholders, so
//! literal braces in Python code or prose (`{}`, `{x: 1}`, f-strings) pass
//! through untouched. Substitution is a single left-to-right pass: text
//! inserted for one slot is never rescanned.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("placeholder `{{{slot}}}` has no binding")]
pub struct RenderError {
    pub slot: String,
}

/// Slots referenced by `body`, in first-occurrence order.
pub fn slots_in<'a>(body: &'a str, known: &[&str]) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for (_, _, name) in placeholders(body, known) {
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

pub fn render(body: &str, known: &[&str], bindings: &BTreeMap<&str, String>) -> Result<String, RenderError> {
    let mut out = String::with_capacity(body.len());
    let mut cursor = 0;
    for (start, end, name) in placeholders(body, known) {
        let value = bindings.get(name).ok_or_else(|| RenderError { slot: name.to_string() })?;
        out.push_str(&body[cursor..start]);
        out.push_str(value);
        cursor = end;
    }
    out.push_str(&body[cursor..]);
    Ok(out)
}

fn placeholders<'a>(body: &'a str, known: &[&str]) -> Vec<(usize, usize, &'a str)> {
    let bytes = body.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'}' && j > i + 1 {
                let name = &body[i + 1..j];
                if known.contains(&name) {
                    found.push((i, j + 1, name));
                    i = j + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn substitutes_known_slots_only() {
        let out = render("{code}\nx = {}\ny = {z}\nf({inputs})", &["code", "inputs"], &bind(&[("code", "A"), ("inputs", "1")])).unwrap();
        assert_eq!(out, "A\nx = {}\ny = {z}\nf(1)");
    }

    #[test]
    fn missing_binding_names_slot() {
        let err = render("{code} {inputs}", &["code", "inputs"], &bind(&[("code", "")])).unwrap_err();
        assert_eq!(err.slot, "inputs");
    }

    #[test]
    fn inserted_text_is_not_rescanned() {
        let out = render("{code}|{inputs}", &["code", "inputs"], &bind(&[("code", "{inputs}"), ("inputs", "9")])).unwrap();
        assert_eq!(out, "{inputs}|9");
    }

    #[test]
    fn slot_listing() {
        assert_eq!(slots_in("{b}{a}{b}{c}", &["a", "b"]), vec!["b", "a"]);
    }
}
