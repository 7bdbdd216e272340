//! Grammar for model outputs: the tagged reasoning/answer format, the
//! outliner's prompt list, and the answer-to-label matching ladder.

use thiserror::Error;

use crate::types::{normalize_label_token, AspectPrompt, ClassLabel, LabelSet, MatchMethod};

pub const DEFAULT_POSTFIX: &str = "Describe it in detail.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no <answer>...</answer> region in model output")]
    MissingAnswerTag,
    #[error("found {found} list items, expected {expected}")]
    TooFewItems { found: usize, expected: usize },
}

/// Formats a reasoning/answer pair in the tagged output grammar.
pub fn render_tagged(reasoning: &str, answer: &str) -> String {
    format!("<reasoning>{reasoning}</reasoning><answer>{answer}</answer>")
}

/// Content of the first `<tag>...</tag>` region, tag names matched
/// case-insensitively.
fn tagged_region<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = lower.find(&open)? + open.len();
    let end = start + lower[start..].find(&close)?;
    Some(&text[start..end])
}

/// Extracts `(reasoning, answer)`; reasoning may be absent, answer may not.
pub fn parse_tagged_output(text: &str) -> Result<(String, String), ParseError> {
    let answer = tagged_region(text, "answer").ok_or(ParseError::MissingAnswerTag)?;
    let reasoning = tagged_region(text, "reasoning").unwrap_or("");
    Ok((reasoning.trim().to_string(), answer.trim().to_string()))
}

fn strip_plural(s: &str) -> &str {
    match s.strip_suffix('s') {
        Some(stem) if !stem.is_empty() => stem,
        _ => s,
    }
}

/// True when `needle` occurs in `hay` with non-alphanumeric characters (or
/// the string ends) on both sides.
fn contains_word(hay: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = hay[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Maps a free-text answer to a class label via EXACT, NORMALIZED (plural
/// stripped) and SUBSTRING rungs. A substring hit on two or more labels is
/// ambiguous and yields UNKNOWN.
pub fn match_label<'a>(
    answer: &str,
    labels: &'a LabelSet,
) -> (Option<&'a ClassLabel>, MatchMethod) {
    let norm = normalize_label_token(answer);
    if norm.is_empty() {
        return (None, MatchMethod::None);
    }
    let forms: Vec<(&ClassLabel, Vec<String>)> = labels
        .labels()
        .iter()
        .map(|l| (l, l.normalized_forms()))
        .collect();

    if let Some((label, _)) = forms.iter().find(|(_, fs)| fs.iter().any(|f| *f == norm)) {
        return (Some(label), MatchMethod::Exact);
    }

    let stem = strip_plural(&norm);
    if let Some((label, _)) = forms
        .iter()
        .find(|(_, fs)| fs.iter().any(|f| strip_plural(f) == stem))
    {
        return (Some(label), MatchMethod::Normalized);
    }

    let hits: Vec<&ClassLabel> = forms
        .iter()
        .filter(|(_, fs)| fs.iter().any(|f| contains_word(&norm, f)))
        .map(|(l, _)| *l)
        .collect();
    match hits.as_slice() {
        [only] => (Some(only), MatchMethod::Substring),
        _ => (None, MatchMethod::None),
    }
}

/// Recognizes a list marker at the start of a trimmed line and returns the
/// remaining item text.
fn strip_marker(line: &str) -> Option<&str> {
    for bullet in ["-", "•", "*"] {
        if let Some(rest) = line.strip_prefix(bullet) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return Some(rest.trim());
            }
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        for punct in [".", ")"] {
            if let Some(after) = rest.strip_prefix(punct) {
                if after.is_empty() || after.starts_with(char::is_whitespace) {
                    return Some(after.trim());
                }
            }
        }
    }
    None
}

/// Splits an item at its first sentence boundary ('.', '!' or '?' followed
/// by whitespace).
pub fn split_prefix_postfix(item: &str) -> (String, String) {
    let item = item.trim();
    let mut chars = item.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let prefix = item[..i + c.len_utf8()].trim();
                    let postfix = item[i + c.len_utf8()..].trim();
                    if !postfix.is_empty() {
                        return (prefix.to_string(), postfix.to_string());
                    }
                }
            }
        }
    }
    (item.to_string(), DEFAULT_POSTFIX.to_string())
}

/// Parses a numbered or bulleted list into exactly `n` aspect prompts.
/// Unmarked lines continue the previous item; text before the first marker
/// is ignored.
pub fn parse_prompt_list(text: &str, n: usize) -> Result<Vec<AspectPrompt>, ParseError> {
    let mut items: Vec<String> = Vec::new();
    let mut in_item = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = strip_marker(line) {
            items.push(rest.to_string());
            in_item = true;
        } else if in_item {
            let last = items.last_mut().expect("in_item implies an item");
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(line);
        }
    }
    items.retain(|s| !s.is_empty());
    if items.len() < n {
        return Err(ParseError::TooFewItems {
            found: items.len(),
            expected: n,
        });
    }
    Ok(items
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, item)| {
            let (prefix, postfix) = split_prefix_postfix(item);
            AspectPrompt {
                index: i + 1,
                prefix,
                postfix,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tagged_examples() {
        assert_eq!(
            parse_tagged_output("<reasoning>fur and whiskers</reasoning><answer>cat</answer>"),
            Ok(("fur and whiskers".into(), "cat".into()))
        );
        assert_eq!(
            parse_tagged_output("Sure! <reasoning>A</reasoning> text <answer> dog </answer> extra"),
            Ok(("A".into(), "dog".into()))
        );
        assert_eq!(
            parse_tagged_output("<answer>ship</answer>"),
            Ok(("".into(), "ship".into()))
        );
        assert_eq!(
            parse_tagged_output("<REASONING>x</Reasoning><ANSWER>Frog</answer>"),
            Ok(("x".into(), "Frog".into()))
        );
        assert_eq!(
            parse_tagged_output("<reasoning>x</reasoning> it is a cat"),
            Err(ParseError::MissingAnswerTag)
        );
        assert_eq!(
            parse_tagged_output("<answer>cat"),
            Err(ParseError::MissingAnswerTag)
        );
    }

    #[test]
    fn tag_search_survives_non_ascii_text() {
        let out = parse_tagged_output("Ünïcödé <reasoning>É</reasoning><answer>çat</answer>");
        assert_eq!(out, Ok(("É".into(), "çat".into())));
    }

    #[test]
    fn ladder_examples() {
        let cifar = LabelSet::cifar10();
        let name = |r: (Option<&ClassLabel>, MatchMethod)| (r.0.map(|l| l.name().to_string()), r.1);
        assert_eq!(name(match_label("Cat.", &cifar)), (Some("cat".into()), MatchMethod::Exact));
        assert_eq!(
            name(match_label("this is an automobile", &cifar)),
            (Some("automobile".into()), MatchMethod::Substring)
        );
        assert_eq!(name(match_label("a cat or a dog", &cifar)), (None, MatchMethod::None));
        assert_eq!(name(match_label("Trucks", &cifar)), (Some("truck".into()), MatchMethod::Normalized));
        assert_eq!(name(match_label("a plane", &cifar)), (Some("airplane".into()), MatchMethod::Exact));
        assert_eq!(name(match_label("xyzzy", &cifar)), (None, MatchMethod::None));
        assert_eq!(name(match_label("", &cifar)), (None, MatchMethod::None));
        // "cat" inside "category" is not word-bounded
        assert_eq!(name(match_label("category unclear", &cifar)), (None, MatchMethod::None));
        let ood = LabelSet::ood_cv();
        assert_eq!(name(match_label("Dining table", &ood)), (Some("diningtable".into()), MatchMethod::Exact));
    }

    #[test]
    fn exact_wins_over_substring() {
        // "car" is both an EXACT alias of automobile and would be a substring.
        let cifar = LabelSet::cifar10();
        let (label, method) = match_label("The car!", &cifar);
        assert_eq!(label.unwrap().name(), "automobile");
        assert_eq!(method, MatchMethod::Exact);
    }

    #[test]
    fn prompt_list_examples() {
        let text = "1. Focus on the animal. Describe its fur.\n2. Focus on the background. Describe the scene.\n3. Focus on colors. Describe the palette.";
        let prompts = parse_prompt_list(text, 3).unwrap();
        let pairs: Vec<(&str, &str)> = prompts
            .iter()
            .map(|p| (p.prefix.as_str(), p.postfix.as_str()))
            .collect();
        assert_eq!(
            pairs,
            vec![
                ("Focus on the animal.", "Describe its fur."),
                ("Focus on the background.", "Describe the scene."),
                ("Focus on colors.", "Describe the palette."),
            ]
        );
        assert_eq!(prompts.iter().map(|p| p.index).collect::<Vec<_>>(), vec![1, 2, 3]);

        let single = parse_prompt_list("- Look at the shape", 1).unwrap();
        assert_eq!(single[0].prefix, "Look at the shape");
        assert_eq!(single[0].postfix, DEFAULT_POSTFIX);

        assert_eq!(
            parse_prompt_list("1. a. b.\n2. c. d.", 3),
            Err(ParseError::TooFewItems { found: 2, expected: 3 })
        );
    }

    #[test]
    fn prompt_list_markers_and_continuations() {
        let text = "Here are the prompts:\n1) Focus on the wings! Describe their span.\n   They may be folded.\n• Focus on the sky? Describe clouds.\n* Colors\n4. Extra item. Ignored.";
        let prompts = parse_prompt_list(text, 3).unwrap();
        assert_eq!(prompts[0].prefix, "Focus on the wings!");
        assert_eq!(prompts[0].postfix, "Describe their span. They may be folded.");
        assert_eq!(prompts[1].prefix, "Focus on the sky?");
        assert_eq!(prompts[2].prefix, "Colors");
        assert_eq!(prompts[2].postfix, DEFAULT_POSTFIX);
        // "1.5" is not a list marker
        assert!(parse_prompt_list("1.5 meters tall", 1).is_err());
    }

    proptest! {
        #[test]
        fn tagged_round_trip(r in "[^<>]{0,60}", y in "[^<>]{0,30}") {
            let (r, y) = (r.trim().to_string(), y.trim().to_string());
            prop_assert_eq!(parse_tagged_output(&render_tagged(&r, &y)), Ok((r, y)));
        }

        #[test]
        fn match_label_is_case_and_punct_invariant(idx in 0usize..10, upper in any::<bool>(), punct in "[.!?,;:\"' ]{0,3}") {
            let cifar = LabelSet::cifar10();
            let name = cifar.labels()[idx].name().to_string();
            let shown = if upper { name.to_uppercase() } else { name.clone() };
            let (label, method) = match_label(&format!("{punct}{shown}{punct}"), &cifar);
            prop_assert_eq!(label.map(|l| l.name().to_string()), Some(name));
            prop_assert_eq!(method, MatchMethod::Exact);
        }

        #[test]
        fn prompt_list_never_pads(count in 0usize..6, n in 1usize..6) {
            let text: String = (1..=count).map(|i| format!("{i}. Focus on part {i}. Describe it.\n")).collect();
            match parse_prompt_list(&text, n) {
                Ok(ps) => { prop_assert!(count >= n); prop_assert_eq!(ps.len(), n); }
                Err(ParseError::TooFewItems { found, expected }) => {
                    prop_assert!(count < n); prop_assert_eq!((found, expected), (count, n));
                }
                Err(e) => prop_assert!(false, "unexpected {e:?}"),
            }
        }
    }
}
