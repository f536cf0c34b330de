//! Tokenization, vocabulary construction and fixed-length integer encoding.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Lowercase, drop punctuation other than `,` and `.` (which become their
/// own tokens), split on whitespace.
pub fn normalize_and_tokenize(raw: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(raw.len() + 8);
    for ch in raw.chars().flat_map(char::to_lowercase) {
        match ch {
            ',' | '.' => {
                spaced.push(' ');
                spaced.push(ch);
                spaced.push(' ');
            }
            c if c.is_alphanumeric() => spaced.push(c),
            c if c.is_whitespace() => spaced.push(' '),
            _ => {}
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

/// Frequency-ranked token/index map with four reserved entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `limit - 4` most frequent tokens; ties go to the token seen first.
    pub fn build<'a, I, S>(sentences: I, limit: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if limit <= NUM_SPECIAL {
            return Err(Error::InvalidArgument(format!(
                "vocabulary limit must be at least {}, got {limit}",
                NUM_SPECIAL + 1
            )));
        }
        // token -> (count, first occurrence)
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut seen = 0usize;
        for sentence in sentences {
            for tok in sentence.as_ref() {
                let entry = counts.entry(tok.as_str()).or_insert((0, seen));
                entry.0 += 1;
                seen += 1;
            }
        }
        if seen == 0 {
            return Err(Error::Empty("corpus"));
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIAL_TOKENS.contains(t))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(
                ranked
                    .into_iter()
                    .take(limit - NUM_SPECIAL)
                    .map(|(t, ..)| t.to_string()),
            )
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Rebuild from an index-ordered token list, e.g. one read from disk.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::InvalidArgument("duplicate token in vocabulary".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        self.tokens
            .get(index)
            .map(String::as_str)
            .unwrap_or(SPECIAL_TOKENS[UNK])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_token_list(text.lines().map(str::to_string).collect())
    }
}

/// A sentence encoded to exactly `m` indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    /// Positions before padding (includes EOS when the sentence fit).
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.indices.len()
    }

    pub fn real(&self) -> &[usize] {
        &self.indices[..self.true_length]
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.indices.len()).map(|i| i < self.true_length).collect()
    }
}

/// Append EOS and pad to `m`, or truncate to the first `m` tokens (no EOS).
pub fn encode(tokens: &[String], vocab: &Vocabulary, m: usize) -> Result<TokenSequence> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("max length must be >= 2, got {m}")));
    }
    let mut indices: Vec<usize> = tokens.iter().take(m).map(|t| vocab.index_of(t)).collect();
    if indices.len() < m {
        indices.push(EOS);
    }
    let true_length = indices.len();
    indices.resize(m, PAD);
    Ok(TokenSequence { indices, true_length })
}

/// Tokens up to the first EOS, skipping PAD and SOS.
pub fn decode_tokens(indices: &[usize], vocab: &Vocabulary) -> Vec<String> {
    indices
        .iter()
        .take_while(|&&i| i != EOS)
        .filter(|&&i| i != PAD && i != SOS)
        .map(|&i| vocab.token(i).to_string())
        .collect()
}

pub fn decode(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    decode_tokens(&seq.indices, vocab).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(normalize_and_tokenize("A Dog runs."), toks("a dog runs ."));
        assert_eq!(normalize_and_tokenize("Hello!!!"), toks("hello"));
        assert!(normalize_and_tokenize("").is_empty());
        assert_eq!(normalize_and_tokenize("Yes, it's  fine?"), toks("yes , its fine"));
    }

    #[test]
    fn build_small_vocabulary() {
        let corpus = vec![toks("a a b")];
        let v = Vocabulary::build(&corpus, 6).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<sos>", "<eos>", "<unk>", "a", "b"]);
    }

    #[test]
    fn rare_token_maps_to_unk() {
        let corpus = vec![toks("a a b b c")];
        let v = Vocabulary::build(&corpus, 6).unwrap();
        assert_eq!(v.index_of("c"), UNK);
        let seq = encode(&toks("c a"), &v, 4).unwrap();
        assert_eq!(seq.indices, vec![UNK, 4, EOS, PAD]);
    }

    #[test]
    fn frequency_ties_keep_first_occurrence() {
        let corpus = vec![toks("y x"), toks("x y z")];
        let v = Vocabulary::build(&corpus, 6).unwrap();
        assert_eq!(&v.tokens()[4..], &["y", "x"]);
    }

    #[test]
    fn vocabulary_errors() {
        let corpus = vec![toks("a")];
        assert!(Vocabulary::build(&corpus, 4).is_err());
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(Vocabulary::build(&empty, 10), Err(Error::Empty(_))));
    }

    #[test]
    fn encode_examples() {
        let corpus = vec![toks("a dog")];
        let v = Vocabulary::build(&corpus, 10).unwrap();
        let seq = encode(&toks("a dog"), &v, 5).unwrap();
        assert_eq!(seq.indices, vec![v.index_of("a"), v.index_of("dog"), EOS, PAD, PAD]);
        assert_eq!(seq.true_length, 3);

        let long: Vec<String> = (0..12).map(|_| "a".to_string()).collect();
        let seq = encode(&long, &v, 10).unwrap();
        assert_eq!(seq.indices.len(), 10);
        assert!(!seq.indices.contains(&EOS));
        assert_eq!(seq.true_length, 10);

        assert!(encode(&long, &v, 1).is_err());
    }

    #[test]
    fn decode_stops_at_eos_and_skips_specials() {
        let corpus = vec![toks("a b")];
        let v = Vocabulary::build(&corpus, 10).unwrap();
        let a = v.index_of("a");
        let b = v.index_of("b");
        assert_eq!(decode_tokens(&[SOS, a, PAD, b, EOS, a], &v), toks("a b"));
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let corpus = vec![toks("the cat sat on the mat .")];
        let v = Vocabulary::build(&corpus, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_is_identity_below_max_len(
            words in proptest::collection::vec(0usize..6, 0..9),
        ) {
            let lexicon = ["a", "b", "c", "d", "e", "f"];
            let corpus = vec![lexicon.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
            let v = Vocabulary::build(&corpus, 20).unwrap();
            let sent: Vec<String> = words.iter().map(|&i| lexicon[i].to_string()).collect();
            let seq = encode(&sent, &v, 10).unwrap();
            proptest::prop_assert_eq!(decode_tokens(&seq.indices, &v), sent);
            // no PAD before a non-PAD token
            let first_pad = seq.indices.iter().position(|&i| i == PAD).unwrap_or(10);
            proptest::prop_assert!(seq.indices[first_pad..].iter().all(|&i| i == PAD));
            proptest::prop_assert_eq!(seq.indices[seq.true_length - 1], EOS);
        }
    }
}
