//! Outbound prompt templates. The text lives in `prompts/*.txt`; every
//! builder here is a pure function of its inputs.

pub const GENERATION: &str = include_str!("../../prompts/generation.txt");
pub const POSITIVE: &str = include_str!("../../prompts/positive.txt");
pub const NEGATIVE: &str = include_str!("../../prompts/negative.txt");
pub const EMPTY: &str = include_str!("../../prompts/empty.txt");
pub const COMMENT_EDIT: &str = include_str!("../../prompts/comment_edit.txt");
pub const REGION_EDIT: &str = include_str!("../../prompts/region_edit.txt");

/// Prefix shared by both edit templates; the stub backend keys on it.
pub(crate) const EDIT_PREFIX: &str = "i have implemented a website";
pub(crate) const REGION_MARKER: &str = "feedback for several regions";
pub(crate) const GENERATION_MARKER: &str = "here is a description of the webpage: ";

/// Seed prompt for description synthesis. Not one of the fixed templates:
/// it only has to elicit ten new descriptions per call.
pub(crate) const DESCRIPTIONS_PREFIX: &str = "here are some example descriptions of app screens:";

/// Replaces `{name}` placeholders in one left-to-right scan, so substituted
/// values are never re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after
            .find('}')
            .and_then(|close| values.iter().find(|(k, _)| *k == &after[..close]).map(|(_, v)| (close, v)));
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn generation_prompt(description: &str) -> String {
    fill(GENERATION, &[("description", description)])
}

pub fn positive_prompt(description: &str) -> String {
    fill(POSITIVE, &[("description", description)])
}

pub fn negative_prompt(description: &str) -> String {
    fill(NEGATIVE, &[("description", description)])
}

pub fn empty_prompt() -> String {
    EMPTY.to_owned()
}

/// Comments are listed one per line, each prefixed with `- `.
pub fn format_comment_list<S: AsRef<str>>(comments: &[S]) -> String {
    comments
        .iter()
        .map(|c| format!("- {}", c.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Each region is `- region N: comment` followed by its snippet in an html fence.
pub fn format_region_list<S: AsRef<str>, T: AsRef<str>>(grounded: &[(S, T)]) -> String {
    grounded
        .iter()
        .enumerate()
        .map(|(i, (comment, snippet))| {
            format!("- region {}: {}\n```html\n{}\n```", i + 1, comment.as_ref(), snippet.as_ref())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn comment_edit_prompt<S: AsRef<str>>(html: &str, comments: &[S]) -> String {
    fill(COMMENT_EDIT, &[("html", html), ("comments", &format_comment_list(comments))])
}

pub fn region_edit_prompt<S: AsRef<str>, T: AsRef<str>>(html: &str, grounded: &[(S, T)]) -> String {
    fill(REGION_EDIT, &[("html", html), ("regions", &format_region_list(grounded))])
}

pub fn descriptions_prompt<S: AsRef<str>>(examples: &[S]) -> String {
    let listed = examples
        .iter()
        .map(|e| format!("- {}", e.as_ref()))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "{DESCRIPTIONS_PREFIX}\n{listed}\n\ngenerate 10 more unique descriptions of app screens in the same style. \
         describe the functionality, layout, and content of each screen. respond with one description per line."
    )
}
