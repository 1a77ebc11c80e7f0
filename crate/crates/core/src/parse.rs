//! Response structure: `<think>`/`<answer>` blocks and fenced code blocks.

/// Contents of the last complete `<answer>...</answer>` block.
pub fn answer_block(response: &str) -> Option<&str> {
    let end = response.rfind("</answer>")?;
    let start = response[..end].rfind("<answer>")? + "<answer>".len();
    Some(&response[start..end])
}

/// A fenced block: the info string after the opening fence and the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fence<'a> {
    pub lang: &'a str,
    pub body: String,
}

/// All complete ```` ``` ```` blocks in `text`, in order. Unterminated blocks
/// are dropped.
pub fn fenced_blocks(text: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut open: Option<(&str, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        match open.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    open = Some((info.trim(), Vec::new()));
                }
            }
            Some((lang, mut body)) => {
                if trimmed == "```" {
                    out.push(Fence { lang, body: body.join("\n") });
                } else if let Some(idx) = line.rfind("```").filter(|_| trimmed.ends_with("```")) {
                    // closing fence glued to the last content line
                    body.push(&line[..idx]);
                    out.push(Fence { lang, body: body.join("\n") });
                } else {
                    body.push(line);
                    open = Some((lang, body));
                }
            }
        }
    }
    out
}

pub fn blocks_with_lang<'a>(blocks: &'a [Fence<'a>], langs: &[&str]) -> impl Iterator<Item = &'a Fence<'a>> + 'a {
    let langs: Vec<String> = langs.iter().map(|s| s.to_ascii_lowercase()).collect();
    blocks.iter().filter(move |b| langs.iter().any(|l| b.lang.eq_ignore_ascii_case(l)))
}

/// Body of the first block tagged with one of `langs`, or the whole text when
/// it carries no fences at all.
pub fn fenced_or_bare(text: &str, langs: &[&str]) -> Option<String> {
    let blocks = fenced_blocks(text);
    if let Some(b) = blocks_with_lang(&blocks, langs).next() {
        return non_empty(&b.body);
    }
    if let [only] = blocks.as_slice() {
        if only.lang.is_empty() {
            return non_empty(&only.body);
        }
    }
    if text.contains("```") {
        return None;
    }
    non_empty(text)
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim_matches(|c: char| c == '\n' || c == '\r');
    if t.trim().is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}
