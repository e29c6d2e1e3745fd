//! Sentence segmentation and tokenization.
//!
//! A sentence ends at `.`, `!` or `?` followed by whitespace or the end of
//! the text. Tokens are maximal runs of alphanumeric characters, lowercased;
//! all-digit runs become [`NUM_TOKEN`]. Sentences without tokens are dropped.

pub const NUM_TOKEN: &str = "<num>";

pub fn segment_and_tokenize(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    let mut word = String::new();
    let mut chars = text.chars().peekable();

    fn flush_word(word: &mut String, sentence: &mut Vec<String>) {
        if word.is_empty() {
            return;
        }
        if word.chars().all(|c| c.is_numeric()) {
            sentence.push(NUM_TOKEN.to_string());
        } else {
            sentence.push(word.to_lowercase());
        }
        word.clear();
    }

    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        flush_word(&mut word, &mut current);
        let boundary = matches!(c, '.' | '!' | '?')
            && chars.peek().map_or(true, |next| next.is_whitespace());
        if boundary && !current.is_empty() {
            sentences.push(std::mem::take(&mut current));
        }
    }
    flush_word(&mut word, &mut current);
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Joins tokens back into readable text for reports.
pub fn detokenize(tokens: &[String]) -> String {
    let mut s = tokens.join(" ");
    s.push_str(" .");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(expected: &[&[&str]]) -> Vec<Vec<String>> {
        expected
            .iter()
            .map(|s| s.iter().map(|t| t.to_string()).collect())
            .collect()
    }

    #[test]
    fn examples() {
        assert!(segment_and_tokenize("").is_empty());
        assert_eq!(segment_and_tokenize("no effusion ."), sents(&[&["no", "effusion"]]));
        assert_eq!(
            segment_and_tokenize("BP 120. Stable."),
            sents(&[&["bp", "<num>"], &["stable"]])
        );
    }

    #[test]
    fn decimal_points_do_not_split() {
        assert_eq!(
            segment_and_tokenize("Temp 37.5 today! ok?"),
            sents(&[&["temp", "<num>", "<num>", "today"], &["ok"]])
        );
    }

    #[test]
    fn punctuation_only_sentences_vanish() {
        assert!(segment_and_tokenize(" . ! ?  -- ").is_empty());
        assert_eq!(
            segment_and_tokenize("b12 deficiency"),
            sents(&[&["b12", "deficiency"]])
        );
    }
}
