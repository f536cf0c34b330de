//! Corpora: file loading and small synthetic grammars used as desk-scale
//! stand-ins for natural-language datasets.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::text::normalize_and_tokenize;

/// One training example. Unpaired corpora use `target == source`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    /// Generator name and seed, or the path the corpus was read from.
    pub provenance: String,
    pub paired: bool,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

const DETS: &[&str] = &["the", "a"];
const ADJS: &[&str] = &[
    "big", "small", "old", "young", "happy", "tall", "quiet", "busy", "tired", "brave", "clever", "kind",
];
const NOUNS: &[&str] = &[
    "dog", "cat", "man", "woman", "child", "bird", "horse", "girl", "boy", "farmer", "teacher", "doctor", "cook",
    "player", "dancer", "singer",
];
// (third person, base form)
const VERBS: &[(&str, &str)] = &[
    ("sees", "see"),
    ("chases", "chase"),
    ("likes", "like"),
    ("helps", "help"),
    ("watches", "watch"),
    ("follows", "follow"),
    ("finds", "find"),
    ("meets", "meet"),
    ("calls", "call"),
    ("feeds", "feed"),
    ("greets", "greet"),
    ("pushes", "push"),
    ("carries", "carry"),
    ("visits", "visit"),
];
const ADVS: &[&str] = &["today", "again", "slowly", "quickly", "often", "outside"];

/// Built-in sentence generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grammar {
    /// Single subject-verb-object sentences with optional adjectives and adverb.
    Svo,
    /// Statement -> question pairs; one statement admits several questions.
    QuestionGen,
}

impl Grammar {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "svo" => Ok(Grammar::Svo),
            "qgen" => Ok(Grammar::QuestionGen),
            other => Err(Error::UnknownGrammar(other.to_string())),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Grammar::Svo => "svo",
            Grammar::QuestionGen => "qgen",
        }
    }

    pub fn paired(self) -> bool {
        matches!(self, Grammar::QuestionGen)
    }

    pub fn word_list(self) -> Vec<&'static str> {
        let mut words: Vec<&str> = DETS.iter().chain(ADJS).chain(NOUNS).copied().collect();
        words.extend(VERBS.iter().map(|v| v.0));
        words.push(".");
        match self {
            Grammar::Svo => words.extend(ADVS),
            Grammar::QuestionGen => {
                words.extend(VERBS.iter().map(|v| v.1));
                words.extend(["who", "what", "does"]);
            }
        }
        words
    }

    fn noun_phrase(rng: &mut Rng, out: &mut Vec<&'static str>) -> &'static str {
        out.push(DETS[rng.below(DETS.len())]);
        if rng.bernoulli(0.5) {
            out.push(ADJS[rng.below(ADJS.len())]);
        }
        let noun = NOUNS[rng.below(NOUNS.len())];
        out.push(noun);
        noun
    }

    fn sample(self, rng: &mut Rng) -> Example {
        let mut subj = Vec::new();
        Self::noun_phrase(rng, &mut subj);
        let verb = VERBS[rng.below(VERBS.len())];
        let mut obj = Vec::new();
        Self::noun_phrase(rng, &mut obj);

        let mut statement: Vec<&str> = subj
            .iter()
            .copied()
            .chain([verb.0])
            .chain(obj.iter().copied())
            .collect();
        match self {
            Grammar::Svo => {
                if rng.bernoulli(0.3) {
                    statement.push(ADVS[rng.below(ADVS.len())]);
                }
                statement.push(".");
                let s = statement.join(" ");
                Example {
                    source: s.clone(),
                    target: s,
                }
            }
            Grammar::QuestionGen => {
                statement.push(".");
                let question: Vec<&str> = match rng.below(3) {
                    0 => ["who", verb.0].into_iter().chain(obj.iter().copied()).collect(),
                    1 => ["what", "does"]
                        .into_iter()
                        .chain(subj.iter().copied())
                        .chain([verb.1])
                        .collect(),
                    _ => ["does"]
                        .into_iter()
                        .chain(subj.iter().copied())
                        .chain([verb.1])
                        .chain(obj.iter().copied())
                        .collect(),
                };
                Example {
                    source: statement.join(" "),
                    target: question.join(" "),
                }
            }
        }
    }

    /// Whether a token list is a sentence this grammar can emit (either side
    /// of a pair for paired grammars).
    pub fn accepts<S: AsRef<str>>(self, tokens: &[S]) -> bool {
        let t: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        match self {
            Grammar::Svo => parse_statement(&t, true),
            Grammar::QuestionGen => parse_statement(&t, false) || parse_question(&t),
        }
    }
}

fn parse_np(t: &[&str], mut i: usize) -> Option<usize> {
    if !DETS.contains(t.get(i)?) {
        return None;
    }
    i += 1;
    if ADJS.contains(t.get(i)?) {
        i += 1;
    }
    NOUNS.contains(t.get(i)?).then_some(i + 1)
}

fn is_verb3(w: Option<&&str>) -> bool {
    w.is_some_and(|w| VERBS.iter().any(|v| v.0 == *w))
}

fn is_verb_base(w: Option<&&str>) -> bool {
    w.is_some_and(|w| VERBS.iter().any(|v| v.1 == *w))
}

fn parse_statement(t: &[&str], allow_adverb: bool) -> bool {
    let Some(i) = parse_np(t, 0) else { return false };
    if !is_verb3(t.get(i)) {
        return false;
    }
    let Some(mut i) = parse_np(t, i + 1) else { return false };
    if allow_adverb && t.get(i).is_some_and(|w| ADVS.contains(w)) {
        i += 1;
    }
    t.get(i) == Some(&".") && i + 1 == t.len()
}

fn parse_question(t: &[&str]) -> bool {
    match t.first() {
        Some(&"who") => is_verb3(t.get(1)) && parse_np(t, 2) == Some(t.len()),
        Some(&"what") => {
            t.get(1) == Some(&"does") && parse_np(t, 2).is_some_and(|i| is_verb_base(t.get(i)) && i + 1 == t.len())
        }
        Some(&"does") => parse_np(t, 1).is_some_and(|i| is_verb_base(t.get(i)) && parse_np(t, i + 1) == Some(t.len())),
        _ => false,
    }
}

/// Default split: 10% validation, 10% test, the rest training.
fn split_sizes(n: usize) -> (usize, usize, usize) {
    let valid = n / 10;
    let test = n / 10;
    (n - valid - test, valid, test)
}

impl Corpus {
    /// `n` distinct examples from a built-in grammar, deterministic per seed.
    pub fn generate(grammar_id: &str, n: usize, seed: u64) -> Result<Self> {
        let grammar = Grammar::from_id(grammar_id)?;
        if n == 0 {
            return Err(Error::InvalidArgument("corpus size must be >= 1".into()));
        }
        let mut rng = Rng::new(seed);
        let mut seen = HashSet::new();
        let mut examples = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while examples.len() < n {
            attempts += 1;
            if attempts > n.saturating_mul(1000) {
                return Err(Error::InvalidArgument(format!(
                    "grammar `{grammar_id}` cannot produce {n} distinct sentences"
                )));
            }
            let ex = grammar.sample(&mut rng);
            if seen.insert(ex.source.clone()) {
                examples.push(ex);
            }
        }
        let (n_train, n_valid, _) = split_sizes(n);
        let test = examples.split_off(n_train + n_valid);
        let valid = examples.split_off(n_train);
        Ok(Corpus {
            provenance: format!("grammar={grammar_id} seed={seed}"),
            paired: grammar.paired(),
            train: examples,
            valid,
            test,
        })
    }

    /// Read a corpus from a directory holding `train.txt`, `valid.txt` and
    /// `test.txt`, or from a single file that is split 80/10/10 in order.
    /// Lines containing a tab are `source<TAB>target` pairs.
    pub fn load(path: &Path) -> Result<Self> {
        let read = |p: &Path| -> Result<Vec<Example>> {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(text.lines().filter(|l| !l.trim().is_empty()).map(parse_line).collect())
        };
        let (train, valid, test) = if path.is_dir() {
            (
                read(&path.join("train.txt"))?,
                read(&path.join("valid.txt"))?,
                read(&path.join("test.txt"))?,
            )
        } else {
            let mut all = read(path)?;
            let (n_train, n_valid, _) = split_sizes(all.len());
            let test = all.split_off(n_train + n_valid);
            let valid = all.split_off(n_train);
            (all, valid, test)
        };
        if train.is_empty() {
            return Err(Error::Empty("training partition"));
        }
        let paired = train.iter().chain(&valid).chain(&test).any(|e| e.source != e.target);
        Ok(Corpus {
            provenance: format!("file={}", path.display()),
            paired,
            train,
            valid,
            test,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, part) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let mut out = String::new();
            for ex in part {
                if self.paired {
                    out.push_str(&format!("{}\t{}\n", ex.source, ex.target));
                } else {
                    out.push_str(&ex.source);
                    out.push('\n');
                }
            }
            let p = dir.join(name);
            std::fs::write(&p, out).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokenized training sentences from both sides, for vocabulary building.
    pub fn training_tokens(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for ex in &self.train {
            out.push(normalize_and_tokenize(&ex.source));
            if self.paired {
                out.push(normalize_and_tokenize(&ex.target));
            }
        }
        out
    }
}

fn parse_line(line: &str) -> Example {
    match line.split_once('\t') {
        Some((s, t)) => Example {
            source: s.trim().to_string(),
            target: t.trim().to_string(),
        },
        None => Example {
            source: line.trim().to_string(),
            target: line.trim().to_string(),
        },
    }
}
