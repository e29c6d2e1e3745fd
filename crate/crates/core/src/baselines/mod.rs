//! Bag-of-words comparison systems: a tf-idf vocabulary feeding either a
//! collapsed Gibbs LDA topic model or DBOW paragraph vectors, each followed by
//! a linear SVM per task.

pub mod dbow;
pub mod lda;
pub mod svm;
pub mod tfidf;

use std::collections::HashSet;
use std::path::Path;

use crate::{Error, Result};

pub use dbow::{dbow_fit, dbow_infer, DbowConfig, DbowModel};
pub use lda::{lda_fit, lda_infer, LdaConfig, TopicModel};
pub use svm::{svm_fit, svm_objective, svm_score, LinearModel, Standardizer, SvmConfig};
pub use tfidf::{build_tfidf_vocab, TfidfVocabulary};

const BUNDLED_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(BUNDLED_STOPWORDS)
}

/// One token per line; blank lines and `#` comments are ignored.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    std::fs::read_to_string(path)
        .map(|t| parse_stopwords(&t))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_list() {
        let s = default_stopwords();
        assert!(s.len() > 300);
        assert!(s.contains("the") && s.contains("of"));
        assert!(!s.contains("sepsis"));
        assert_eq!(parse_stopwords("# c\nThe\n\n a \n").len(), 2);
    }
}
