//! Plain-text corpora and n-gram count features.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{map_label, Task};
use crate::error::{Error, Result};

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Tokenized documents with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Vec<String>>,
    pub labels: DVector<f64>,
    pub task: Task,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Corpus {
        Corpus {
            documents: rows.iter().map(|&i| self.documents[i].clone()).collect(),
            labels: self.labels.select_rows(rows),
            task: self.task,
        }
    }
}

/// One document per line as `label<TAB>text`. Blank lines are skipped.
pub fn load_corpus(
    path: impl AsRef<Path>,
    task: Task,
    label_map: Option<&BTreeMap<String, f64>>,
) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, task, label_map)
}

pub fn parse_corpus(text: &str, task: Task, label_map: Option<&BTreeMap<String, f64>>) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("line {}", n + 1);
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{location}: expected label<TAB>text")))?;
        labels.push(map_label(label.trim(), label_map, task, &location)?);
        documents.push(tokenize(body));
    }
    if documents.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    Ok(Corpus {
        documents,
        labels: DVector::from_vec(labels),
        task,
    })
}

/// The `size` most frequent n-grams of a training corpus, ranked by total
/// occurrence count (descending) and then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramVocabulary {
    pub n: usize,
    pub entries: Vec<(String, u64)>,
    /// Requested size; `entries` may be shorter.
    pub size: usize,
}

fn ngrams(doc: &[String], n: usize) -> impl Iterator<Item = String> + '_ {
    doc.windows(n).map(|w| w.join(" "))
}

impl NgramVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-document counts of each vocabulary entry. Unseen n-grams are
    /// ignored.
    pub fn transform(&self, documents: &[Vec<String>]) -> DMatrix<f64> {
        let index: HashMap<&str, usize> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (g.as_str(), i))
            .collect();
        let mut counts = DMatrix::zeros(documents.len(), self.entries.len());
        for (row, doc) in documents.iter().enumerate() {
            for gram in ngrams(doc, self.n) {
                if let Some(&col) = index.get(gram.as_str()) {
                    counts[(row, col)] += 1.0;
                }
            }
        }
        counts
    }
}

/// Builds the vocabulary from `corpus` and returns its count matrix.
pub fn build_ngram_features(
    corpus: &[Vec<String>],
    n: usize,
    size: usize,
) -> Result<(DMatrix<f64>, NgramVocabulary)> {
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    if n == 0 || size == 0 {
        return Err(Error::Config(format!("n-gram order and size must be positive, got n = {n}, N = {size}")));
    }
    let mut totals: HashMap<String, u64> = HashMap::new();
    for doc in corpus {
        for gram in ngrams(doc, n) {
            *totals.entry(gram).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = totals.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(size);
    let vocab = NgramVocabulary { n, entries, size };
    Ok((vocab.transform(corpus), vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn bigram_example() {
        let (counts, vocab) = build_ngram_features(&[doc("a b a b")], 2, 2).unwrap();
        assert_eq!(
            vocab.entries,
            vec![("a b".to_string(), 2), ("b a".to_string(), 1)]
        );
        assert_eq!(counts, DMatrix::from_row_slice(1, 2, &[2.0, 1.0]));
    }

    #[test]
    fn short_document_gives_zero_row_and_truncation() {
        let (counts, vocab) = build_ngram_features(&[doc("x y z"), doc("w")], 2, 10).unwrap();
        assert_eq!(vocab.len(), 2);
        assert_eq!(vocab.size, 10);
        assert_eq!(counts.row(1).sum(), 0.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        let (_, vocab) = build_ngram_features(&[doc("d c b a"), doc("b a")], 2, 3).unwrap();
        let names: Vec<&str> = vocab.entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(names, vec!["b a", "c b", "d c"]);
    }

    #[test]
    fn frozen_vocabulary_ignores_unseen() {
        let (_, vocab) = build_ngram_features(&[doc("good movie good movie")], 2, 5).unwrap();
        let test = vocab.transform(&[doc("Good Movie bad movie")]);
        let col = vocab.entries.iter().position(|e| e.0 == "good movie").unwrap();
        assert_eq!(test[(0, col)], 1.0);
        assert_eq!(test.sum(), 1.0);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize(" The\tcat  SAT\n"), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn corpus_parsing() {
        let c = parse_corpus("5\tGreat blender\n\n1\tbroke fast\n", Task::Regression, None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.labels.as_slice(), &[5.0, 1.0]);
        assert!(parse_corpus("no tab here\n", Task::Regression, None).is_err());
        assert!(parse_corpus("", Task::Regression, None).is_err());
        assert!(parse_corpus("3\tx\n", Task::ClassificationPm1, None).is_err());
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let corpus: Vec<Vec<String>> = (0..30)
            .map(|i| doc(&format!("w{} w{} w{} w{}", i % 3, i % 5, i % 7, i % 2)))
            .collect();
        let a = build_ngram_features(&corpus, 2, 8).unwrap();
        let b = build_ngram_features(&corpus, 2, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.1.entries.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }
}
