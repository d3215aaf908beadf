/// Lowercases and splits on every non-alphanumeric character, dropping empty
/// terms. No stemming and no stopword removal.
pub fn analyze(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(
            analyze("The Beatles' 1st album -- \"Please Please Me\""),
            vec!["the", "beatles", "1st", "album", "please", "please", "me"]
        );
        assert!(analyze("  ,.;  ").is_empty());
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,60}") {
            let once = analyze(&s);
            let twice = analyze(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
