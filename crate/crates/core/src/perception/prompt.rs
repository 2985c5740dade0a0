use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use image::RgbImage;
use regex::Regex;

use super::PerceptionError;
use crate::materials::MaterialLibrary;

/// Above this many candidates the list is written one line per family.
pub const GROUP_THRESHOLD: usize = 24;

const SYSTEM_TEXT: &str = "You are a materials engineer. You identify what the parts of everyday \
objects are made of from photographs and give typical physical properties for that material.";

const ANSWER_FORMAT: &str = "material: <id>; density: <kg/m3>; youngs_modulus: <Pa>; poisson: <value>";

/// Text and images for one request. Images are kept decoded; the transport
/// encodes them.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<RgbImage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: String,
    pub family: String,
}

impl Candidate {
    pub fn all(library: &MaterialLibrary) -> Vec<Candidate> {
        library
            .records()
            .map(|r| Candidate {
                id: r.id.clone(),
                family: r.family.clone(),
            })
            .collect()
    }
}

/// Single-image request for a short description of the whole object.
pub fn description_prompt(image: RgbImage) -> PromptBundle {
    PromptBundle {
        system_text: SYSTEM_TEXT.into(),
        user_text: "Describe the object in this photograph in two or three sentences: what it is, \
which parts it has, and what each part appears to be made of."
            .into(),
        images: vec![image],
    }
}

/// Part query over a triptych: describe the highlighted part first, then pick
/// its material from `candidates` and close with a fenced answer line.
pub fn build_prompt(
    description: &str,
    candidates: &[Candidate],
    triptych: Vec<RgbImage>,
) -> Result<PromptBundle, PerceptionError> {
    if candidates.is_empty() {
        return Err(PerceptionError::NoCandidates);
    }
    let mut text = String::new();
    text.push_str(
        "The first image shows the whole object. The second image is the same view with one part \
tinted red. The third image shows only that part on a white background.\n\n",
    );
    if !description.trim().is_empty() {
        let _ = writeln!(text, "Object description: {}\n", description.trim());
    }
    text.push_str("First, describe the red part in one or two sentences.\n");
    text.push_str(
        "Then name the material of the red part, choosing strictly from the candidate list below, \
and state its mass density, Young's modulus and Poisson's ratio.\n\n",
    );
    text.push_str(&candidate_list(candidates));
    let _ = write!(
        text,
        "\nFinish with a fenced code block holding exactly one line in this format, using a candidate \
id verbatim and plain numbers in SI units:\n```\n{ANSWER_FORMAT}\n```\n"
    );
    Ok(PromptBundle {
        system_text: SYSTEM_TEXT.into(),
        user_text: text,
        images: triptych,
    })
}

fn candidate_list(candidates: &[Candidate]) -> String {
    let mut out = String::from("Candidates:\n");
    if candidates.len() <= GROUP_THRESHOLD {
        for c in candidates {
            let _ = writeln!(out, "- {} ({})", c.id, c.family);
        }
        return out;
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for c in candidates {
        groups.entry(&c.family).or_default().push(&c.id);
    }
    for (family, ids) in groups {
        let _ = writeln!(out, "{family}: {}", ids.join(", "));
    }
    out
}

/// Sent after an unparseable reply.
pub fn repair_instruction() -> String {
    format!(
        "Your reply did not end with the required block. Reply again with only a fenced code block \
containing exactly one line:\n```\n{ANSWER_FORMAT}\n```"
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub material: String,
    pub density: Option<f64>,
    pub youngs_modulus: Option<f64>,
    pub poisson: Option<f64>,
}

impl ParsedAnswer {
    /// `(density, youngs_modulus, poisson)` when all three were numeric.
    pub fn quoted(&self) -> Option<(f64, f64, f64)> {
        Some((self.density?, self.youngs_modulus?, self.poisson?))
    }
}

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n?(.*?)```").unwrap());
static ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*material\s*:\s*([^;]+?)\s*;\s*density\s*:\s*([^;]*?)\s*;\s*youngs_modulus\s*:\s*([^;]*?)\s*;\s*poisson\s*:\s*([^;]*?)\s*;?\s*$",
    )
    .unwrap()
});

/// Extracts the answer line from the last fenced block that holds one.
pub fn parse_answer(reply: &str) -> Option<ParsedAnswer> {
    FENCE
        .captures_iter(reply)
        .filter_map(|c| {
            let body = c.get(1)?.as_str();
            let line = body.lines().map(str::trim).rfind(|l| !l.is_empty())?;
            let a = ANSWER.captures(line)?;
            Some(ParsedAnswer {
                material: a[1].trim().to_string(),
                density: number(&a[2]),
                youngs_modulus: number(&a[3]),
                poisson: number(&a[4]),
            })
        })
        .last()
}

/// Parses a number, tolerating a trailing unit and digit separators.
fn number(s: &str) -> Option<f64> {
    let token = s.split_whitespace().next()?.replace(['_', ','], "");
    token.parse().ok()
}
