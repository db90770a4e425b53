/// Letters, optionally joined by single internal apostrophes or hyphens.
pub fn is_word(s: &str) -> bool {
    let mut prev_letter = false;
    let mut any = false;
    for c in s.chars() {
        if c.is_alphabetic() {
            prev_letter = true;
            any = true;
        } else if (c == '\'' || c == '-') && prev_letter {
            prev_letter = false;
        } else {
            return false;
        }
    }
    any && prev_letter
}

/// Accepts a raw subword sample only if it starts a new word: it must begin
/// with a space and the rest must be a plain word. Returns the word without
/// the leading space.
pub fn space_prefix_filter(raw: &str) -> Option<String> {
    let rest = raw.strip_prefix(' ')?;
    is_word(rest).then(|| rest.to_string())
}

/// Case-folded form with leading/trailing non-alphanumerics removed, used for
/// exact-match comparisons against ground truth.
pub fn normalize_for_match(s: &str) -> String {
    s.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn filter_examples() {
        assert_eq!(space_prefix_filter(" agree").as_deref(), Some("agree"));
        assert_eq!(space_prefix_filter("ly"), None);
        assert_eq!(space_prefix_filter(" ,"), None);
        assert_eq!(space_prefix_filter(" don't").as_deref(), Some("don't"));
        assert_eq!(space_prefix_filter(" well-known").as_deref(), Some("well-known"));
        assert_eq!(space_prefix_filter(" 1984"), None);
        assert_eq!(space_prefix_filter("  two"), None);
        assert_eq!(space_prefix_filter(" end."), None);
        assert_eq!(space_prefix_filter(" -x"), None);
        assert_eq!(space_prefix_filter(" x-"), None);
        assert_eq!(space_prefix_filter(" "), None);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_for_match("Tidy?"), "tidy");
        assert_eq!(normalize_for_match("\"Don't,"), "don't");
    }

    proptest! {
        #[test]
        fn accepted_words_are_stable(raw in " ?[a-zA-Z'\\-,.0-9]{0,12}") {
            if let Some(word) = space_prefix_filter(&raw) {
                let again = space_prefix_filter(&format!(" {word}"));
                prop_assert_eq!(again.as_deref(), Some(word.as_str()));
                prop_assert!(!word.contains(' '));
            }
        }
    }
}
