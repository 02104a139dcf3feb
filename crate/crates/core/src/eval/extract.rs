//! Answer extraction for binary label sets.

/// Returns the label whose first occurrence in `raw` comes earliest, or
/// `None` when no label occurs.
///
/// Matching is case-insensitive. A label whose edge character is
/// alphanumeric only matches at a word boundary on that side, so `no` does
/// not match inside `know`. A parenthesised label such as `(a)` also
/// matches the bare standalone token `a`. Ties at the same position go to
/// the longer match, then to label order.
pub fn extract_answer<'a>(raw: &str, labels: &'a [String]) -> Option<&'a str> {
    let text = raw.to_lowercase();
    let mut best: Option<(usize, std::cmp::Reverse<usize>, usize)> = None;
    for (li, label) in labels.iter().enumerate() {
        let needle = label.trim().to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut forms = vec![needle.clone()];
        if let Some(inner) = needle.strip_prefix('(').and_then(|s| s.strip_suffix(')')) {
            if !inner.is_empty() {
                forms.push(inner.to_owned());
            }
        }
        for form in &forms {
            if let Some(pos) = first_bounded(&text, form) {
                let cand = (pos, std::cmp::Reverse(form.len()), li);
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
        }
    }
    best.map(|(_, _, li)| labels[li].as_str())
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn first_bounded(text: &str, needle: &str) -> Option<usize> {
    let check_left = needle.chars().next().is_some_and(is_word);
    let check_right = needle.chars().next_back().is_some_and(is_word);
    text.match_indices(needle).map(|(pos, _)| pos).find(|&pos| {
        let left_ok = !check_left || text[..pos].chars().next_back().is_none_or(|c| !is_word(c));
        let right_ok = !check_right || text[pos + needle.len()..].chars().next().is_none_or(|c| !is_word(c));
        left_ok && right_ok
    })
}
