//! Rule-based answer verification and evaluation metrics.
//!
//! Answers are pulled from the last balanced `\boxed{…}` group, normalized
//! through a documented list of rewrite rules, and compared either as exact
//! rationals or as canonical strings. On top of that sit the per-problem
//! metrics: Pass@1 (mean candidate correctness) and Maj@k (does the most
//! frequent canonical answer verify against gold).
//!
//! The normalization repertoire is a documented subset of what CAS-backed
//! checkers do: whitespace and sizing markup, \frac rewriting, trailing
//! punctuation, configurable unit words, unary signs, percent forms, and
//! thousands separators. Symbolic equivalence beyond string equality
//! (e.g. `x+1` vs `1+x`) is out of scope.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::InstructionRecord;

pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Unit words stripped from the tail of an answer ("40 degrees" → "40").
pub const DEFAULT_UNIT_WORDS: &[&str] = &[
    "units", "unit", "degrees", "degree", "cm", "meters", "miles", "hours", "minutes", "seconds",
    "dollars", "points", "ways",
];

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("sample {problem_id} has no candidates")]
    EmptyCandidates { problem_id: String },
    #[error("k = {k} out of range for {n} candidates")]
    KOutOfRange { k: usize, n: usize },
    #[error("record {id} has no gold answer")]
    MissingGold { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Numeric,
    Symbolic,
    Missing,
}

/// An extracted final answer with its canonical and numeric readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub raw: String,
    pub canonical: String,
    /// Exact value when the canonical form parses as a rational number.
    #[serde(skip)]
    pub numeric: Option<BigRational>,
    pub kind: AnswerKind,
    /// Set when the boxed group ran to end-of-string with unbalanced braces.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbalanced: bool,
}

impl ExtractedAnswer {
    pub fn missing() -> Self {
        ExtractedAnswer {
            raw: String::new(),
            canonical: String::new(),
            numeric: None,
            kind: AnswerKind::Missing,
            unbalanced: false,
        }
    }

    /// Builds an answer from a bare answer string (no box extraction), as
    /// used for gold answers in eval files.
    pub fn from_raw(raw: &str) -> Self {
        if raw.trim().is_empty() {
            return ExtractedAnswer::missing();
        }
        let canonical = normalize_answer(raw);
        if canonical.is_empty() {
            return ExtractedAnswer::missing();
        }
        let numeric = parse_rational(&canonical);
        let kind = if numeric.is_some() {
            AnswerKind::Numeric
        } else {
            AnswerKind::Symbolic
        };
        ExtractedAnswer {
            raw: raw.to_string(),
            canonical,
            numeric,
            kind,
            unbalanced: false,
        }
    }
}

/// Extracts the content of the last balanced `\boxed{…}` group.
///
/// The scan is brace-aware, so nested groups like `\boxed{\frac{1}{2}}`
/// survive intact. When the last group never closes, the content up to the
/// end of the string is taken and the result is flagged `unbalanced`.
pub fn extract_boxed(solution: &str) -> ExtractedAnswer {
    const MARKER: &str = "\\boxed{";
    let mut last: Option<(String, bool)> = None;
    let mut offset = 0;
    while let Some(pos) = solution[offset..].find(MARKER) {
        let content_start = offset + pos + MARKER.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in solution[content_start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(content_start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                last = Some((solution[content_start..e].to_string(), false));
                offset = e + 1;
            }
            None => {
                last = Some((solution[content_start..].to_string(), true));
                break;
            }
        }
    }
    let (raw, unbalanced) = match last {
        Some(v) => v,
        None => return ExtractedAnswer::missing(),
    };
    let mut answer = ExtractedAnswer::from_raw(&raw);
    answer.raw = raw;
    answer.unbalanced = unbalanced;
    answer
}

/// Applies the normalization rules. Idempotent.
pub fn normalize_answer(raw: &str) -> String {
    normalize_with_units(raw, DEFAULT_UNIT_WORDS)
}

/// Rewrites can cascade (stripping one marker may expose another), so the
/// single pass runs to a fixpoint; a fixpoint is trivially idempotent.
pub fn normalize_with_units(raw: &str, unit_words: &[&str]) -> String {
    let mut current = raw.to_string();
    for _ in 0..8 {
        let next = normalize_pass(&current, unit_words);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_pass(raw: &str, unit_words: &[&str]) -> String {
    let mut s = raw.trim().to_string();

    // LaTeX spacing and sizing markup carries no answer content.
    for markup in [
        "\\left", "\\right", "\\big", "\\Big", "\\bigg", "\\Bigg", "\\displaystyle",
        "\\textstyle", "\\limits", "\\,", "\\;", "\\:", "\\!", "\\quad", "\\qquad",
    ] {
        s = s.replace(markup, "");
    }
    s = s.replace("\\ ", " ");
    s = s.replace('~', " ");
    s = s.replace('$', "");
    s = s.replace("\\%", "%");
    s = s.replace("\\$", "");
    s = strip_text_wrappers(&s);
    s = rewrite_fracs(&s);

    let mut t = s.trim().to_string();
    loop {
        let before = t.clone();
        // trailing sentence punctuation
        while t.ends_with(['.', ',', ';', ':']) {
            // keep a decimal point only when digits follow; trailing ones go
            t.pop();
        }
        t = t.trim().to_string();
        // trailing unit words, longest first so "square units" wins over "units"
        let lower = t.to_lowercase();
        let mut sorted_units: Vec<&str> = unit_words.to_vec();
        sorted_units.sort_by_key(|u| std::cmp::Reverse(u.len()));
        for unit in sorted_units {
            if lower.ends_with(unit) {
                let cut = t.len() - unit.len();
                let head = t[..cut].trim_end();
                // only strip when something numeric-ish remains
                if !head.is_empty() && head != "-" {
                    t = head.to_string();
                    break;
                }
            }
        }
        if t == before {
            break;
        }
    }

    t = collapse_spaces(&t);
    t = normalize_sign(&t);
    t = strip_thousands_separators(&t);
    t
}

fn strip_text_wrappers(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    loop {
        match rest.find("\\text{") {
            Some(pos) => {
                out.push_str(&rest[..pos]);
                let body_start = pos + "\\text{".len();
                let mut depth = 1usize;
                let mut end = None;
                for (i, c) in rest[body_start..].char_indices() {
                    match c {
                        '{' => depth += 1,
                        '}' => {
                            depth -= 1;
                            if depth == 0 {
                                end = Some(body_start + i);
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                match end {
                    Some(e) => {
                        out.push_str(&rest[body_start..e]);
                        rest = &rest[e + 1..];
                    }
                    None => {
                        out.push_str(&rest[body_start..]);
                        rest = "";
                    }
                }
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
        if rest.is_empty() {
            break;
        }
    }
    out
}

/// Rewrites `\frac{a}{b}`, `\dfrac{a}{b}`, `\tfrac{a}{b}` (and the bare
/// `\frac12` form) to `a/b`, innermost first so nesting resolves.
fn rewrite_fracs(s: &str) -> String {
    let mut current = s.to_string();
    for _ in 0..64 {
        let next = rewrite_one_frac_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn rewrite_one_frac_pass(s: &str) -> String {
    // rfind picks the last (and with nesting, an innermost) occurrence, so
    // repeated passes resolve nested fracs from the inside out
    for marker in ["\\dfrac", "\\tfrac", "\\frac"] {
        if let Some(pos) = s.rfind(marker) {
            let after = &s[pos + marker.len()..];
            if let Some((num, den, consumed)) = parse_frac_args(after) {
                let rewritten = format!("{num}/{den}");
                let mut out = String::with_capacity(s.len());
                out.push_str(&s[..pos]);
                out.push_str(&rewritten);
                out.push_str(&after[consumed..]);
                return out;
            }
        }
    }
    s.to_string()
}

fn parse_frac_args(s: &str) -> Option<(String, String, usize)> {
    let (num, after_num) = parse_frac_arg(s)?;
    let (den, after_den) = parse_frac_arg(&s[after_num..])?;
    Some((num, den, after_num + after_den))
}

fn parse_frac_arg(s: &str) -> Option<(String, usize)> {
    let mut chars = s.char_indices().peekable();
    // skip leading spaces between \frac and its argument
    let mut start = 0;
    while let Some(&(i, c)) = chars.peek() {
        if c == ' ' {
            chars.next();
            start = i + c.len_utf8();
        } else {
            break;
        }
    }
    let (_, first) = chars.next()?;
    if first == '{' {
        let body_start = start + 1;
        let mut depth = 1usize;
        for (i, c) in s[body_start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        let body = &s[body_start..body_start + i];
                        // a frac inside must already be rewritten (innermost
                        // first); leave this pass alone if one remains
                        if body.contains("\\frac") || body.contains("\\dfrac") || body.contains("\\tfrac") {
                            return None;
                        }
                        return Some((body.to_string(), body_start + i + 1));
                    }
                }
                _ => {}
            }
        }
        None
    } else if first.is_ascii_digit() {
        // \frac12 shorthand: single-digit arguments
        Some((first.to_string(), start + 1))
    } else {
        None
    }
}

fn collapse_spaces(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = false;
    for c in s.trim().chars() {
        if c == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(c);
            last_space = false;
        }
    }
    out
}

fn normalize_sign(s: &str) -> String {
    let mut t = s.trim().to_string();
    if let Some(stripped) = t.strip_prefix('+') {
        t = stripped.trim_start().to_string();
    }
    // "-0", "-0.0", "-0/5" → "0"
    if let Some(body) = t.strip_prefix('-') {
        if let Some(r) = parse_rational(body.trim_start()) {
            if r.is_zero() {
                return body.trim_start().to_string();
            }
        }
    }
    t
}

/// "1,234,567.89" → "1234567.89"; only applies when the whole string is a
/// digit-grouped number, so tuples like "(1,2)" are untouched.
fn strip_thousands_separators(s: &str) -> String {
    let (sign, body) = match s.strip_prefix('-') {
        Some(b) => ("-", b),
        None => ("", s),
    };
    let parts: Vec<&str> = body.split('.').collect();
    if parts.len() > 2 {
        return s.to_string();
    }
    let int_part = parts[0];
    let groups: Vec<&str> = int_part.split(',').collect();
    if groups.len() < 2 {
        return s.to_string();
    }
    let well_formed = (1..=3).contains(&groups[0].len())
        && groups[0].chars().all(|c| c.is_ascii_digit())
        && groups[1..]
            .iter()
            .all(|g| g.len() == 3 && g.chars().all(|c| c.is_ascii_digit()))
        && parts.get(1).is_none_or(|f| f.chars().all(|c| c.is_ascii_digit()));
    if !well_formed {
        return s.to_string();
    }
    let mut out = String::from(sign);
    out.push_str(&groups.concat());
    if let Some(frac) = parts.get(1) {
        out.push('.');
        out.push_str(frac);
    }
    out
}

/// Parses a canonical string as an exact rational: integers, decimals,
/// scientific notation, `a/b` fractions, and percent forms of any of those.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some(body) = s.strip_suffix('%') {
        let base = parse_rational(body.trim_end())?;
        return Some(base / BigRational::from_integer(BigInt::from(100)));
    }
    if let Some((num, den)) = s.split_once('/') {
        let n = parse_plain_number(num.trim())?;
        let d = parse_plain_number(den.trim())?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    parse_plain_number(s)
}

fn parse_plain_number(s: &str) -> Option<BigRational> {
    if s.is_empty() {
        return None;
    }
    let (mantissa, exponent) = match s.split_once(['e', 'E']) {
        Some((m, e)) => {
            let exp: i64 = e.parse().ok()?;
            (m, exp)
        }
        None => (s, 0),
    };
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(d) => (-1, d),
        None => (1, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits_joined = format!("{int_part}{frac_part}");
    let value: BigInt = digits_joined.parse().ok()?;
    let mut result = BigRational::from_integer(value * BigInt::from(sign));
    let scale = frac_part.len() as i64 - exponent;
    let ten = BigInt::from(10);
    if scale > 0 {
        result /= BigRational::from_integer(ten.pow(scale as u32));
    } else if scale < 0 {
        result *= BigRational::from_integer(ten.pow((-scale) as u32));
    }
    Some(result)
}

/// Equality under the documented rules: exact rational equality, then
/// relative-tolerance comparison, then canonical string equality. Missing
/// answers never equal anything.
pub fn answers_equal(a: &ExtractedAnswer, b: &ExtractedAnswer, rel_tol: f64) -> bool {
    if a.kind == AnswerKind::Missing || b.kind == AnswerKind::Missing {
        return false;
    }
    match (&a.numeric, &b.numeric) {
        (Some(x), Some(y)) => {
            if x == y {
                return true;
            }
            let (xf, yf) = match (x.to_f64(), y.to_f64()) {
                (Some(xf), Some(yf)) => (xf, yf),
                _ => return false,
            };
            let scale = xf.abs().max(yf.abs());
            if scale == 0.0 {
                return xf == yf;
            }
            (xf - yf).abs() <= rel_tol * scale
        }
        _ => a.canonical == b.canonical,
    }
}

/// One evaluation problem: a gold answer and sampled candidate answers.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub problem_id: String,
    pub gold: ExtractedAnswer,
    pub candidates: Vec<ExtractedAnswer>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub problem_id: String,
    pub pass_at_1: f64,
    pub maj_at_k: bool,
    pub majority_answer: String,
    pub correct_count: usize,
    pub k: usize,
}

/// Scores one problem over its first `k` candidates.
///
/// Pass@1 is the mean per-candidate correctness. The majority answer is the
/// most frequent canonical string, ties broken by earliest first occurrence.
pub fn score_sample(sample: &EvalSample, k: usize, rel_tol: f64) -> Result<Verdict, VerifyError> {
    if sample.candidates.is_empty() {
        return Err(VerifyError::EmptyCandidates {
            problem_id: sample.problem_id.clone(),
        });
    }
    if k == 0 || k > sample.candidates.len() {
        return Err(VerifyError::KOutOfRange {
            k,
            n: sample.candidates.len(),
        });
    }
    let window = &sample.candidates[..k];
    let correct_count = window
        .iter()
        .filter(|c| answers_equal(c, &sample.gold, rel_tol))
        .count();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    for (i, cand) in window.iter().enumerate() {
        *counts.entry(cand.canonical.as_str()).or_insert(0) += 1;
        first_seen.entry(cand.canonical.as_str()).or_insert(i);
    }
    let (majority_canonical, _) = counts
        .iter()
        .map(|(&canon, &count)| (canon, count))
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then_with(|| first_seen[b.0].cmp(&first_seen[a.0]))
        })
        .expect("window is non-empty");
    let majority_rep = &window[first_seen[majority_canonical]];
    let maj_at_k = answers_equal(majority_rep, &sample.gold, rel_tol);

    Ok(Verdict {
        problem_id: sample.problem_id.clone(),
        pass_at_1: correct_count as f64 / k as f64,
        maj_at_k,
        majority_answer: majority_canonical.to_string(),
        correct_count,
        k,
    })
}

/// Does this record's own answer section verify against its gold answer?
pub fn label_correctness(record: &InstructionRecord, rel_tol: f64) -> Result<bool, VerifyError> {
    let gold_raw = record.gold_answer.as_deref().ok_or_else(|| VerifyError::MissingGold {
        id: record.id.to_string(),
    })?;
    let gold = ExtractedAnswer::from_raw(gold_raw);
    let extracted = extract_boxed(&record.answer_section);
    Ok(answers_equal(&extracted, &gold, rel_tol))
}
