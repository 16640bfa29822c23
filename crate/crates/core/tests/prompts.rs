//! Outbound prompts compared byte-for-byte with frozen fixtures.

use std::path::PathBuf;

use serde::Deserialize;
use uifeedback::gateway::prompts;

#[derive(Deserialize)]
struct Inputs {
    descriptions: Vec<String>,
    htmls: Vec<String>,
    comments: Vec<Vec<String>>,
    regions: Vec<Vec<(String, String)>>,
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts")
}

fn inputs() -> Inputs {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("inputs.json")).unwrap()).unwrap()
}

fn fixture(name: &str, i: usize) -> String {
    std::fs::read_to_string(fixture_dir().join(format!("{name}_{i}.txt"))).unwrap()
}

#[test]
fn all_templates_match_fixtures() {
    let inp = inputs();
    for i in 0..3 {
        let d = &inp.descriptions[i];
        assert_eq!(prompts::generation_prompt(d), fixture("generation", i), "generation {i}");
        assert_eq!(prompts::positive_prompt(d), fixture("positive", i), "positive {i}");
        assert_eq!(prompts::negative_prompt(d), fixture("negative", i), "negative {i}");
        assert_eq!(prompts::empty_prompt(), fixture("empty", i), "empty {i}");
        assert_eq!(
            prompts::comment_edit_prompt(&inp.htmls[i], &inp.comments[i]),
            fixture("comment_edit", i),
            "comment edit {i}"
        );
        assert_eq!(
            prompts::region_edit_prompt(&inp.htmls[i], &inp.regions[i]),
            fixture("region_edit", i),
            "region edit {i}"
        );
    }
}

#[test]
fn scoring_prompts_spelled_out() {
    assert_eq!(prompts::positive_prompt("a login screen"), "ui screenshot. well-designed. a login screen");
    assert_eq!(prompts::negative_prompt("a login screen"), "ui screenshot. poor design. a login screen");
    assert_eq!(prompts::empty_prompt(), "ui screenshot. poor design. empty screen");
    assert!(prompts::generation_prompt("X").ends_with("do not use SVGs. here is a description of the webpage: X"));
}

#[test]
fn substituted_braces_are_not_reexpanded() {
    let p = prompts::generation_prompt("a {description} card");
    assert!(p.ends_with("webpage: a {description} card"));
    let p = prompts::comment_edit_prompt("<p>{comments}</p>", &["keep {html} literal"]);
    assert!(p.contains("<p>{comments}</p>"));
    assert!(p.contains("- keep {html} literal"));
}
