//! Text normalization used for WER scoring and the proxy scorers.

const STRIPPED: &[char] = &['.', ',', '?', '!', ';', ':', '"', '(', ')', '-', '_'];

/// Normalizes a transcript into lowercase word tokens.
///
/// Lowercases, deletes underscores (`X_M_L_` becomes `xml`), strips the
/// punctuation set `. , ? ! ; : " ( )` and hyphens, keeps apostrophes only
/// when they sit inside a word, and splits on whitespace.
pub fn normalize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .filter_map(|word| {
            let kept: String = word.chars().filter(|c| !STRIPPED.contains(c)).collect();
            let trimmed = kept.trim_matches('\'');
            (!trimmed.is_empty()).then(|| trimmed.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn contraction_survives() {
        assert_eq!(normalize_text("I don't know."), vec!["i", "don't", "know"]);
    }

    #[test]
    fn empty_input() {
        assert!(normalize_text("").is_empty());
        assert!(normalize_text("  ... ,, _ ").is_empty());
    }

    #[test]
    fn underscores_removed() {
        assert_eq!(normalize_text("X_M_L_ file, OK?"), vec!["xml", "file", "ok"]);
    }

    #[test]
    fn quotes_and_hyphens() {
        assert_eq!(
            normalize_text("\"Well-known\" (really) 'quoted'"),
            vec!["wellknown", "really", "quoted"]
        );
    }

    proptest! {
        #[test]
        fn idempotent(s in "[a-zA-Z_ .,?!;:'\"()-]{0,40}") {
            let once = normalize_text(&s);
            let twice = normalize_text(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
