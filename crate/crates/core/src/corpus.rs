//! Vocabulary, labeled datasets, and batching.
//!
//! Corpus files hold one pre-tokenized sentence per line with tokens
//! separated by spaces. Each category lives in its own file; the file's
//! position in the argument list is its label.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pad_id: usize,
    bos_id: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, pad: &str, bos: &str) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("token `{t}` appears twice")));
            }
        }
        let pad_id = *index
            .get(pad)
            .ok_or_else(|| Error::invalid(format!("vocabulary lacks pad token `{pad}`")))?;
        let bos_id = *index
            .get(bos)
            .ok_or_else(|| Error::invalid(format!("vocabulary lacks bos token `{bos}`")))?;
        if pad_id == bos_id {
            return Err(Error::DuplicateReserved(pad.to_string()));
        }
        Ok(Self {
            tokens,
            index,
            pad_id,
            bos_id,
        })
    }

    /// Vocabulary for oracle data: content tokens `"0"..` take ids
    /// `0..content_size` so oracle ids and vocabulary ids coincide; pad and
    /// bos follow.
    pub fn synthetic(content_size: usize) -> Self {
        let mut tokens: Vec<String> = (0..content_size).map(|i| i.to_string()).collect();
        tokens.push(PAD.to_string());
        tokens.push(BOS.to_string());
        Self::from_tokens(tokens, PAD, BOS).expect("synthetic vocabulary is well formed")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn bos_id(&self) -> usize {
        self.bos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, sentence: &str) -> std::result::Result<Vec<usize>, String> {
        sentence
            .split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| t.to_string()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i).map(String::as_str).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decodes the unpadded prefix of a sequence.
    pub fn decode_sequence(&self, seq: &TokenSequence) -> String {
        self.decode(seq.content())
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Writes one token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens, PAD, BOS)
    }
}

/// Builds a vocabulary from corpus files.
///
/// `reserved[0]` becomes the pad token and `reserved[1]` the bos token; all
/// reserved tokens take the lowest ids in the order given. Corpus tokens
/// follow, sorted by descending frequency and then lexicographically.
pub fn build_vocab<P: AsRef<Path>>(corpus_files: &[P], reserved: &[&str]) -> Result<Vocabulary> {
    if reserved.len() < 2 {
        return Err(Error::invalid("reserved tokens must include pad and bos"));
    }
    for (i, r) in reserved.iter().enumerate() {
        if reserved[..i].contains(r) {
            return Err(Error::DuplicateReserved(r.to_string()));
        }
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for path in corpus_files {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for tok in text.split_whitespace() {
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !reserved.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = reserved
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens, reserved[0], reserved[1])
}

/// A fixed-length, right-padded token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub effective_length: usize,
}

impl TokenSequence {
    /// A sequence with no padding.
    pub fn full(ids: Vec<usize>) -> Self {
        let effective_length = ids.len();
        Self {
            ids,
            effective_length,
        }
    }

    /// Truncates or pads `content` to `len`. Returns the sequence and whether
    /// truncation happened.
    pub fn padded(mut content: Vec<usize>, len: usize, pad_id: usize) -> (Self, bool) {
        let truncated = content.len() > len;
        content.truncate(len);
        let effective_length = content.len();
        content.resize(len, pad_id);
        (
            Self {
                ids: content,
                effective_length,
            },
            truncated,
        )
    }

    pub fn content(&self) -> &[usize] {
        &self.ids[..self.effective_length]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub sequences: Vec<TokenSequence>,
    pub labels: Vec<usize>,
    pub num_categories: usize,
    pub seq_len: usize,
    /// Sentences cut down to `seq_len` while loading.
    pub truncated: usize,
}

impl LabeledDataset {
    pub fn new(
        sequences: Vec<TokenSequence>,
        labels: Vec<usize>,
        num_categories: usize,
        seq_len: usize,
    ) -> Result<Self> {
        if sequences.len() != labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: sequences.len(),
                actual: labels.len(),
            });
        }
        for (s, &l) in sequences.iter().zip(&labels) {
            if l >= num_categories {
                return Err(Error::CategoryOutOfRange {
                    category: l,
                    k: num_categories,
                });
            }
            if s.len() != seq_len {
                return Err(Error::Dimension {
                    context: "sequence length",
                    expected: seq_len,
                    actual: s.len(),
                });
            }
        }
        Ok(Self {
            sequences,
            labels,
            num_categories,
            seq_len,
            truncated: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Indices of the sequences labeled `category`.
    pub fn category_indices(&self, category: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == category)
            .collect()
    }

    pub fn category_count(&self, category: usize) -> usize {
        self.labels.iter().filter(|&&l| l == category).count()
    }

    pub fn max_id(&self) -> Option<usize> {
        self.sequences.iter().flat_map(|s| s.ids.iter()).copied().max()
    }

    /// Appends another dataset with the same category count and length.
    pub fn extend(&mut self, other: LabeledDataset) -> Result<()> {
        if other.num_categories != self.num_categories || other.seq_len != self.seq_len {
            return Err(Error::invalid("datasets disagree on k or sequence length"));
        }
        self.sequences.extend(other.sequences);
        self.labels.extend(other.labels);
        self.truncated += other.truncated;
        Ok(())
    }

    /// Sequences of one category as a new single-category view (labels kept).
    pub fn subset(&self, indices: &[usize]) -> (Vec<TokenSequence>, Vec<usize>) {
        (
            indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Writes the sequences of `category`, padding stripped, one per line.
    pub fn write_category(&self, category: usize, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (s, &l) in self.sequences.iter().zip(&self.labels) {
            if l == category {
                text.push_str(&vocab.decode_sequence(s));
                text.push('\n');
            }
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads one file per category, padding or truncating every sentence to
/// `seq_len`. Blank lines are skipped.
pub fn load_labeled<P: AsRef<Path>>(
    paths_per_category: &[P],
    vocab: &Vocabulary,
    seq_len: usize,
) -> Result<LabeledDataset> {
    if paths_per_category.is_empty() {
        return Err(Error::invalid("at least one category file is required"));
    }
    if seq_len == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    let mut truncated = 0;
    for (category, path) in paths_per_category.iter().enumerate() {
        let path: PathBuf = path.as_ref().to_path_buf();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let before = sequences.len();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ids = vocab.encode(line).map_err(|token| Error::OutOfVocabulary {
                token,
                path: path.clone(),
                line: lineno + 1,
            })?;
            let (seq, cut) = TokenSequence::padded(ids, seq_len, vocab.pad_id());
            truncated += usize::from(cut);
            sequences.push(seq);
            labels.push(category);
        }
        if sequences.len() == before {
            return Err(Error::invalid(format!(
                "category {category} file {} has no sentences",
                path.display()
            )));
        }
    }
    if truncated > 0 {
        log::warn!("{truncated} sentences truncated to length {seq_len}");
    }
    let mut ds = LabeledDataset::new(sequences, labels, paths_per_category.len(), seq_len)?;
    ds.truncated = truncated;
    Ok(ds)
}

/// A minibatch of sequences and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sequences: Vec<TokenSequence>,
    pub labels: Vec<usize>,
}

/// Endless seed-deterministic stream of minibatches.
///
/// In per-category mode every batch comes from a single category and
/// categories take turns; otherwise batches are drawn from the pooled data.
/// Each pool is reshuffled whenever fewer than `batch_size` unread items
/// remain, so every batch is full.
#[derive(Debug)]
pub struct BatchIter<'a> {
    dataset: &'a LabeledDataset,
    batch_size: usize,
    pools: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    next_pool: usize,
    rng: ChaCha8Rng,
}

pub fn batch_iter(
    dataset: &LabeledDataset,
    batch_size: usize,
    per_category: bool,
    seed: u64,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let pools: Vec<Vec<usize>> = if per_category {
        (0..dataset.num_categories)
            .map(|c| dataset.category_indices(c))
            .collect()
    } else {
        vec![(0..dataset.len()).collect()]
    };
    for (i, pool) in pools.iter().enumerate() {
        if pool.len() < batch_size {
            return Err(Error::invalid(format!(
                "batch size {batch_size} exceeds the {} sequences available in pool {i}",
                pool.len()
            )));
        }
    }
    let cursors = vec![usize::MAX; pools.len()];
    Ok(BatchIter {
        dataset,
        batch_size,
        pools,
        cursors,
        next_pool: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl BatchIter<'_> {
    /// Batches that make up one pass over the data.
    pub fn batches_per_epoch(&self) -> usize {
        self.pools
            .iter()
            .map(|p| p.len().div_ceil(self.batch_size))
            .sum()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let p = self.next_pool;
        self.next_pool = (self.next_pool + 1) % self.pools.len();
        if self.cursors[p] == usize::MAX || self.cursors[p] + self.batch_size > self.pools[p].len() {
            self.pools[p].shuffle(&mut self.rng);
            self.cursors[p] = 0;
        }
        let start = self.cursors[p];
        self.cursors[p] += self.batch_size;
        let idx = &self.pools[p][start..start + self.batch_size];
        let (sequences, labels) = self.dataset.subset(idx);
        Some(Batch { sequences, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn tiny_corpus_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "a.txt", "a b\n");
        let v = build_vocab(&[&f], &[PAD, BOS]).unwrap();
        assert_eq!(v.size(), 4);
        assert_eq!(v.tokens(), &[PAD, BOS, "a", "b"]);
        let again = build_vocab(&[&f, &f], &[PAD, BOS]).unwrap();
        assert_eq!(again.tokens(), v.tokens());
        assert_eq!(build_vocab(&[&f], &[PAD, BOS]).unwrap(), v);
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "a.txt", "z y y\nb a\n");
        let v = build_vocab(&[&f], &[PAD, BOS]).unwrap();
        assert_eq!(v.tokens(), &[PAD, BOS, "y", "a", "b", "z"]);
    }

    #[test]
    fn vocab_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(dir.path(), "e.txt", "\n\n");
        assert!(matches!(
            build_vocab(&[&empty], &[PAD, BOS]),
            Err(Error::EmptyCorpus)
        ));
        let f = write(dir.path(), "a.txt", "a\n");
        assert!(matches!(
            build_vocab(&[&f], &[PAD, PAD]),
            Err(Error::DuplicateReserved(_))
        ));
    }

    #[test]
    fn vocab_scales_with_distinct_words() {
        let dir = tempfile::tempdir().unwrap();
        let words: Vec<String> = (0..6216).map(|i| format!("w{i}")).collect();
        let f = write(dir.path(), "mr.txt", &words.join(" "));
        let v = build_vocab(&[&f], &[PAD, BOS]).unwrap();
        assert_eq!(v.size(), 6216 + 2);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::synthetic(5);
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        assert_eq!(v.pad_id(), 5);
        assert_eq!(v.bos_id(), 6);
    }

    #[test]
    fn load_two_categories() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.txt", "x y\ny\nx x x\n");
        let b = write(dir.path(), "b.txt", "y y\nx\ny x y x y x\n");
        let v = build_vocab(&[&a, &b], &[PAD, BOS]).unwrap();
        let ds = load_labeled(&[&a, &b], &v, 5).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.labels, vec![0, 0, 0, 1, 1, 1]);
        assert!(ds.sequences.iter().all(|s| s.len() == 5));
        assert_eq!(ds.truncated, 1);
        assert_eq!(ds.sequences[1].effective_length, 1);
        assert_eq!(&ds.sequences[1].ids[1..], &[v.pad_id(); 4]);
    }

    #[test]
    fn single_category_labels_are_zero() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.txt", "x y\ny\n");
        let v = build_vocab(&[&a], &[PAD, BOS]).unwrap();
        let ds = load_labeled(&[&a], &v, 15).unwrap();
        assert!(ds.labels.iter().all(|&l| l == 0));
        assert_eq!(ds.seq_len, 15);
    }

    #[test]
    fn out_of_vocabulary_names_the_token() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.txt", "x y\n");
        let b = write(dir.path(), "b.txt", "x mystery\n");
        let v = build_vocab(&[&a], &[PAD, BOS]).unwrap();
        let err = load_labeled(&[&a, &b], &v, 4).unwrap_err();
        match err {
            Error::OutOfVocabulary { token, line, .. } => {
                assert_eq!(token, "mystery");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    fn six_sequence_dataset() -> LabeledDataset {
        let seqs = (0..6).map(|i| TokenSequence::full(vec![i, i])).collect();
        LabeledDataset::new(seqs, vec![0, 0, 0, 1, 1, 1], 2, 2).unwrap()
    }

    #[test]
    fn per_category_batches_alternate() {
        let ds = six_sequence_dataset();
        let batches: Vec<Batch> = batch_iter(&ds, 2, true, 3).unwrap().take(6).collect();
        for (i, b) in batches.iter().enumerate() {
            assert!(b.labels.iter().all(|&l| l == i % 2));
            assert_eq!(b.sequences.len(), 2);
        }
    }

    #[test]
    fn batch_order_is_seeded() {
        let ds = six_sequence_dataset();
        let a: Vec<Batch> = batch_iter(&ds, 2, false, 9).unwrap().take(10).collect();
        let b: Vec<Batch> = batch_iter(&ds, 2, false, 9).unwrap().take(10).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_preconditions() {
        let ds = six_sequence_dataset();
        assert!(batch_iter(&ds, 7, true, 0).is_err());
        assert!(batch_iter(&ds, 0, false, 0).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec(0usize..20, 1..12)) {
            let v = Vocabulary::synthetic(20);
            let sentence = words.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ");
            let ids = v.encode(&sentence).unwrap();
            prop_assert_eq!(v.decode(&ids), sentence);
        }

        #[test]
        fn padding_keeps_content(words in proptest::collection::vec(0usize..9, 1..10), len in 1usize..12) {
            let (seq, cut) = TokenSequence::padded(words.clone(), len, 99);
            let keep = words.len().min(len);
            prop_assert_eq!(seq.content(), &words[..keep]);
            prop_assert_eq!(cut, words.len() > len);
            prop_assert!(seq.ids[keep..].iter().all(|&t| t == 99));
        }

        #[test]
        fn per_category_batches_are_pure(seed in any::<u64>()) {
            let ds = six_sequence_dataset();
            for b in batch_iter(&ds, 3, true, seed).unwrap().take(8) {
                prop_assert!(b.labels.iter().all(|&l| l == b.labels[0]));
            }
        }
    }
}
