//! Question text to bag-of-words counts.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::WordCountMatrix;

const DEFAULT_STOP_WORDS: &str = include_str!("../data/stopwords.txt");

/// Lowercases, splits on every non-alphanumeric character, and drops tokens
/// shorter than two characters or made only of digits.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().count() >= 2 && !tok.chars().all(char::is_numeric))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DocumentContent {
    /// Free text, run through [`tokenize`].
    Text(String),
    /// Pre-tokenized terms (e.g. tags); each term is one token after
    /// lowercasing, multiword terms included.
    Terms(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub question_id: String,
    pub content: DocumentContent,
}

impl Document {
    pub fn text(question_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            content: DocumentContent::Text(text.into()),
        }
    }

    pub fn terms(question_id: impl Into<String>, terms: Vec<String>) -> Self {
        Self {
            question_id: question_id.into(),
            content: DocumentContent::Terms(terms),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        match &self.content {
            DocumentContent::Text(text) => tokenize(text),
            DocumentContent::Terms(terms) => terms
                .iter()
                .map(|t| t.trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        }
    }
}

/// One document per question, ids unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.question_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate question_id {:?} in corpus",
                    doc.question_id
                )));
            }
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Reorders documents to follow `question_ids`. Every id must have exactly
    /// one document and every document must belong to a listed id.
    pub fn aligned_to(&self, question_ids: &[String]) -> Result<Corpus> {
        let mut by_id: HashMap<&str, &Document> = self
            .documents
            .iter()
            .map(|d| (d.question_id.as_str(), d))
            .collect();
        let mut documents = Vec::with_capacity(question_ids.len());
        for id in question_ids {
            match by_id.remove(id.as_str()) {
                Some(doc) => documents.push(doc.clone()),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "question_id {id:?} has responses but no corpus document"
                    )))
                }
            }
        }
        if let Some(extra) = self
            .documents
            .iter()
            .find(|d| by_id.contains_key(d.question_id.as_str()))
        {
            return Err(Error::InvalidArgument(format!(
                "corpus question_id {:?} does not appear in the responses",
                extra.question_id
            )));
        }
        Ok(Corpus { documents })
    }
}

/// Lowercase words excluded from every vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopWordList {
    words: HashSet<String>,
}

impl StopWordList {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { words }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One word per line; `#` starts a comment.
    pub fn parse(contents: &str) -> Self {
        Self::new(
            contents
                .lines()
                .map(|line| line.split('#').next().unwrap_or("")),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&contents))
    }

    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOP_WORDS)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Distinct tokens of the corpus minus stop words and words seen fewer than
/// `min_count` times in total, sorted by descending count then
/// lexicographically.
pub fn build_vocabulary(
    corpus: &Corpus,
    stops: &StopWordList,
    min_count: usize,
) -> Result<Vec<String>> {
    let mut totals: HashMap<String, usize> = HashMap::new();
    for doc in corpus.documents() {
        for tok in doc.tokens() {
            if !stops.contains(&tok) {
                *totals.entry(tok).or_default() += 1;
            }
        }
    }
    let mut vocab: Vec<(String, usize)> = totals
        .into_iter()
        .filter(|&(_, n)| n >= min_count.max(1))
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(vocab.into_iter().map(|(w, _)| w).collect())
}

/// Counts of each vocabulary word in each document; other tokens are ignored.
pub fn count_matrix(corpus: &Corpus, vocab: &[String]) -> Result<WordCountMatrix> {
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(v, w)| (w.as_str(), v))
        .collect();
    let mut counts = Array2::<u32>::zeros((corpus.len(), vocab.len()));
    for (i, doc) in corpus.documents().iter().enumerate() {
        for tok in doc.tokens() {
            if let Some(&v) = index.get(tok.as_str()) {
                counts[[i, v]] += 1;
            }
        }
    }
    WordCountMatrix::new(vocab.to_vec(), counts)
}
