//! Word lists and pattern files loaded at startup.
//!
//! Every file is UTF-8, one entry per line, `#` starts a comment line. The
//! default set is compiled into the binary; a data directory can override any
//! subset of files by name. The SHA-256 digest of each loaded file enters the
//! pipeline's configuration hash.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, LazyLock};

use regex::{Regex, RegexBuilder};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

pub const STOPWORDS_FILE: &str = "stopwords.txt";
pub const NOISE_LEXICON_FILE: &str = "noise_lexicon.tsv";
pub const DETAIL_CUES_FILE: &str = "detail_cues.txt";
pub const CONSTRAINT_CUES_FILE: &str = "constraint_cues.txt";
pub const META_PHRASES_FILE: &str = "meta_phrases.txt";
pub const ANSWER_LEAKAGE_FILE: &str = "answer_leakage.tsv";
pub const FACT_TABLE_FILE: &str = "fact_table.tsv";
pub const MIXUP_VOCAB_FILE: &str = "mixup_vocab.txt";

const EMBEDDED: [(&str, &str); 8] = [
    (STOPWORDS_FILE, include_str!("../data/stopwords.txt")),
    (NOISE_LEXICON_FILE, include_str!("../data/noise_lexicon.tsv")),
    (DETAIL_CUES_FILE, include_str!("../data/detail_cues.txt")),
    (CONSTRAINT_CUES_FILE, include_str!("../data/constraint_cues.txt")),
    (META_PHRASES_FILE, include_str!("../data/meta_phrases.txt")),
    (ANSWER_LEAKAGE_FILE, include_str!("../data/answer_leakage.tsv")),
    (FACT_TABLE_FILE, include_str!("../data/fact_table.tsv")),
    (MIXUP_VOCAB_FILE, include_str!("../data/mixup_vocab.txt")),
];

/// Shortest correction target that gets derived noise variants.
const MIN_VARIANT_SOURCE_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakageKind {
    Answer,
    Reasoning,
}

#[derive(Debug, Clone)]
pub struct LeakagePattern {
    pub kind: LeakageKind,
    pub regex: Regex,
}

/// All lexical resources used by heuristics, guards, mocks and corruption.
#[derive(Debug, Clone)]
pub struct Lexicons {
    stopwords: HashSet<String>,
    /// misspelling -> correction, straight from the noise lexicon.
    corrections: HashMap<String, String>,
    /// Vowel-dropped and QWERTY-substituted variants of correction targets.
    variants: HashMap<String, String>,
    detail_cues: HashSet<String>,
    constraint_cues: HashSet<String>,
    meta_phrases: Vec<String>,
    leakage: Vec<LeakagePattern>,
    facts: Vec<(String, String)>,
    mixup_vocab: Vec<String>,
    digests: BTreeMap<String, String>,
}

fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn split_tab<'a>(file: &str, line: usize, l: &'a str) -> Result<(&'a str, &'a str), ConfigError> {
    l.split_once('\t')
        .map(|(a, b)| (a.trim(), b.trim()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| ConfigError::DataFile {
            file: file.to_owned(),
            line,
            reason: "expected two tab-separated fields".into(),
        })
}

fn word_set(text: &str) -> HashSet<String> {
    entries(text).map(|(_, l)| l.trim().to_lowercase()).collect()
}

fn qwerty_neighbors(c: char) -> &'static str {
    match c {
        'q' => "wa",
        'w' => "qeas",
        'e' => "wrsd",
        'r' => "etdf",
        't' => "ryfg",
        'y' => "tugh",
        'u' => "yihj",
        'i' => "uojk",
        'o' => "ipkl",
        'p' => "ol",
        'a' => "qwsz",
        's' => "awedxz",
        'd' => "serfcx",
        'f' => "drtgvc",
        'g' => "ftyhbv",
        'h' => "gyujnb",
        'j' => "huikmn",
        'k' => "jiolm",
        'l' => "kop",
        'z' => "asx",
        'x' => "zsdc",
        'c' => "xdfv",
        'v' => "cfgb",
        'b' => "vghn",
        'n' => "bhjm",
        'm' => "njk",
        _ => "",
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// The word with every vowel after the first letter removed.
fn drop_vowels(word: &str) -> String {
    let mut chars = word.chars();
    let first = chars.next().map(String::from).unwrap_or_default();
    first + &chars.filter(|c| !is_vowel(*c)).collect::<String>()
}

/// Every single-letter QWERTY-neighbour substitution of `word`.
fn adjacent_substitutions(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    for (i, c) in chars.iter().enumerate() {
        for n in qwerty_neighbors(*c).chars() {
            let mut v = chars.clone();
            v[i] = n;
            out.push(v.into_iter().collect());
        }
    }
    out
}

impl Lexicons {
    /// The compiled-in default resources.
    pub fn embedded() -> Self {
        Self::shared().as_ref().clone()
    }

    /// The compiled-in default resources, parsed once per process.
    pub fn shared() -> Arc<Lexicons> {
        static SHARED: LazyLock<Arc<Lexicons>> = LazyLock::new(|| {
            let files: BTreeMap<&str, String> =
                EMBEDDED.iter().map(|(n, t)| (*n, (*t).to_owned())).collect();
            Arc::new(Lexicons::from_texts(&files).expect("embedded data files are valid"))
        });
        SHARED.clone()
    }

    /// Loads resources from `dir`, falling back to the embedded copy for any
    /// file that is not present there.
    pub fn from_dir(dir: &Path) -> Result<Self, ConfigError> {
        let mut files = BTreeMap::new();
        for (name, embedded) in EMBEDDED {
            let path = dir.join(name);
            let text = if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?
            } else {
                embedded.to_owned()
            };
            files.insert(name, text);
        }
        Self::from_texts(&files)
    }

    fn from_texts(files: &BTreeMap<&str, String>) -> Result<Self, ConfigError> {
        let get = |n: &str| files.get(n).map(String::as_str).unwrap_or_default();

        let stopwords = word_set(get(STOPWORDS_FILE));

        let mut corrections = HashMap::new();
        for (line, l) in entries(get(NOISE_LEXICON_FILE)) {
            let (wrong, right) = split_tab(NOISE_LEXICON_FILE, line, l)?;
            corrections.insert(wrong.to_lowercase(), right.to_lowercase());
        }

        let mut leakage = Vec::new();
        for (line, l) in entries(get(ANSWER_LEAKAGE_FILE)) {
            let (kind, pattern) = split_tab(ANSWER_LEAKAGE_FILE, line, l)?;
            let kind = match kind {
                "answer" => LeakageKind::Answer,
                "reasoning" => LeakageKind::Reasoning,
                other => {
                    return Err(ConfigError::DataFile {
                        file: ANSWER_LEAKAGE_FILE.into(),
                        line,
                        reason: format!("unknown pattern kind `{other}`"),
                    })
                }
            };
            let regex = RegexBuilder::new(pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| ConfigError::DataFile {
                    file: ANSWER_LEAKAGE_FILE.into(),
                    line,
                    reason: e.to_string(),
                })?;
            leakage.push(LeakagePattern { kind, regex });
        }

        let mut facts = Vec::new();
        for (line, l) in entries(get(FACT_TABLE_FILE)) {
            let (entity, fact) = split_tab(FACT_TABLE_FILE, line, l)?;
            facts.push((entity.to_lowercase(), fact.to_owned()));
        }

        let mut meta_phrases: Vec<String> = entries(get(META_PHRASES_FILE))
            .map(|(_, l)| l.trim().to_lowercase())
            .collect();
        // Longest first so "here is the rewritten prompt" wins over "here is".
        meta_phrases.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));

        let mut mixup_vocab = Vec::new();
        let mut seen = HashSet::new();
        for (_, l) in entries(get(MIXUP_VOCAB_FILE)) {
            let w = l.trim().to_lowercase();
            if seen.insert(w.clone()) {
                mixup_vocab.push(w);
            }
        }

        let digests = files
            .iter()
            .map(|(n, t)| ((*n).to_owned(), hex::encode(Sha256::digest(t.as_bytes()))))
            .collect();

        let mut lex = Lexicons {
            stopwords,
            corrections,
            variants: HashMap::new(),
            detail_cues: word_set(get(DETAIL_CUES_FILE)),
            constraint_cues: word_set(get(CONSTRAINT_CUES_FILE)),
            meta_phrases,
            leakage,
            facts,
            mixup_vocab,
            digests,
        };
        lex.variants = lex.derive_variants();
        Ok(lex)
    }

    /// Derived noise forms: vowel-dropped and adjacent-key variants of every
    /// correction target. Forms that are themselves known words are excluded.
    fn derive_variants(&self) -> HashMap<String, String> {
        let known: HashSet<&str> = self
            .stopwords
            .iter()
            .chain(self.corrections.values())
            .chain(self.mixup_vocab.iter())
            .chain(self.detail_cues.iter())
            .chain(self.constraint_cues.iter())
            .map(String::as_str)
            .collect();
        let mut targets: Vec<&String> = self.corrections.values().collect();
        targets.sort();
        targets.dedup();

        let mut variants = HashMap::new();
        for target in targets {
            if target.chars().count() < MIN_VARIANT_SOURCE_LEN {
                continue;
            }
            let mut forms = adjacent_substitutions(target);
            forms.push(drop_vowels(target));
            for form in forms {
                if form == *target
                    || form.chars().count() < 3
                    || known.contains(form.as_str())
                    || self.corrections.contains_key(&form)
                {
                    continue;
                }
                variants.entry(form).or_insert_with(|| target.clone());
            }
        }
        variants
    }

    pub fn is_stopword(&self, normalized: &str) -> bool {
        self.stopwords.contains(normalized)
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    /// Correction for a normalized token, from the lexicon or a derived variant.
    pub fn correction(&self, normalized: &str) -> Option<&str> {
        self.corrections
            .get(normalized)
            .or_else(|| self.variants.get(normalized))
            .map(String::as_str)
    }

    pub fn is_lexicon_misspelling(&self, normalized: &str) -> bool {
        self.corrections.contains_key(normalized)
    }

    pub fn is_derived_variant(&self, normalized: &str) -> bool {
        self.variants.contains_key(normalized)
    }

    pub fn is_detail_cue(&self, normalized: &str) -> bool {
        self.detail_cues.contains(normalized)
    }

    pub fn is_constraint_cue(&self, normalized: &str) -> bool {
        self.constraint_cues.contains(normalized)
    }

    /// Meta-commentary openers, lowercased, longest first.
    pub fn meta_phrases(&self) -> &[String] {
        &self.meta_phrases
    }

    pub fn leakage_patterns(&self) -> &[LeakagePattern] {
        &self.leakage
    }

    /// Fact table entries as (lowercased entity, fact sentence).
    pub fn facts(&self) -> &[(String, String)] {
        &self.facts
    }

    pub fn mixup_vocab(&self) -> &[String] {
        &self.mixup_vocab
    }

    /// File name -> SHA-256 hex digest of the loaded bytes.
    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.digests
    }
}

impl Default for Lexicons {
    fn default() -> Self {
        Self::embedded()
    }
}
