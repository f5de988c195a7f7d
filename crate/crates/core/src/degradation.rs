//! Seeded input corruption: word deletion and word mixup.
//!
//! Positions are drawn with a SplitMix64 stream and a partial Fisher-Yates
//! shuffle, so outputs are reproducible across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EmptyInput};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n` by rejection sampling (`n > 0`).
    pub fn bounded(&mut self, n: u64) -> u64 {
        assert!(n > 0, "bounded(0)");
        // 2^64 mod n: draws below it would bias the low residues.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }
}

/// Seed for line `index` of a corpus corrupted under `seed`.
pub fn line_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::new(seed ^ index.wrapping_mul(GOLDEN_GAMMA)).next_u64()
}

/// `round_half_up(rate * n)`.
pub fn affected_count(rate: f64, n: usize) -> usize {
    // The epsilon absorbs representation error in products like 0.15 * 30.
    (rate * n as f64 + 0.5 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Delete,
    Mixup,
}

impl std::str::FromStr for CorruptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delete" => Ok(CorruptionMode::Delete),
            "mixup" => Ok(CorruptionMode::Mixup),
            other => Err(format!("unknown mode `{other}` (expected delete or mixup)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub mode: CorruptionMode,
    /// Fraction of word tokens affected, in the open interval (0, 1).
    pub rate: f64,
    pub seed: u64,
    /// Identifies the mixup vocabulary (its digest enters the config hash).
    pub vocab_id: String,
}

impl CorruptionSpec {
    pub fn new(mode: CorruptionMode, rate: f64, seed: u64) -> Result<Self, ConfigError> {
        let spec = CorruptionSpec {
            mode,
            rate,
            seed,
            vocab_id: "mixup_vocab.txt".to_owned(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(ConfigError::invalid("rate", format!("{} is outside (0, 1)", self.rate)));
        }
        Ok(())
    }
}

/// Result of corrupting one line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub text: String,
    /// Word tokens in the input.
    pub n: usize,
    /// Tokens deleted or replaced.
    pub k: usize,
    /// Affected token positions, in selection order.
    pub positions: Vec<usize>,
}

/// Per-corpus output with an audit of empty lines passed through.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCorruption {
    pub lines: Vec<Corruption>,
    pub empty_lines: usize,
}

/// Applies a [`CorruptionSpec`] with a fixed mixup vocabulary.
#[derive(Debug, Clone)]
pub struct Corruptor<'a> {
    spec: CorruptionSpec,
    vocab: &'a [String],
}

impl<'a> Corruptor<'a> {
    pub fn new(spec: CorruptionSpec, vocab: &'a [String]) -> Result<Self, ConfigError> {
        spec.validate()?;
        if spec.mode == CorruptionMode::Mixup && vocab.len() < 2 {
            return Err(ConfigError::invalid("vocab", "mixup needs at least two words"));
        }
        Ok(Corruptor { spec, vocab })
    }

    pub fn spec(&self) -> &CorruptionSpec {
        &self.spec
    }

    /// Corrupts `text` with the spec's own seed.
    pub fn corrupt(&self, text: &str) -> Result<Corruption, EmptyInput> {
        self.corrupt_seeded(text, self.spec.seed)
    }

    fn corrupt_seeded(&self, text: &str, seed: u64) -> Result<Corruption, EmptyInput> {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        let n = tokens.len();
        if n == 0 {
            return Err(EmptyInput);
        }
        let k = affected_count(self.spec.rate, n).min(n);
        let mut rng = SplitMix64::new(seed);
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + rng.bounded((n - i) as u64) as usize;
            order.swap(i, j);
        }
        let positions = order[..k].to_vec();
        let text = match self.spec.mode {
            CorruptionMode::Delete => {
                let mut drop = vec![false; n];
                for &p in &positions {
                    drop[p] = true;
                }
                tokens
                    .iter()
                    .zip(drop)
                    .filter_map(|(t, d)| (!d).then_some(*t))
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            CorruptionMode::Mixup => {
                for &p in &positions {
                    let word = loop {
                        let w = &self.vocab[rng.bounded(self.vocab.len() as u64) as usize];
                        if w != tokens[p] {
                            break w;
                        }
                    };
                    tokens[p] = word;
                }
                tokens.join(" ")
            }
        };
        Ok(Corruption { text, n, k, positions })
    }

    /// Corrupts line `index` of a corpus under the derived line seed.
    pub fn corrupt_line(&self, index: usize, text: &str) -> Result<Corruption, EmptyInput> {
        self.corrupt_seeded(text, line_seed(self.spec.seed, index as u64))
    }

    /// Corrupts every line independently. Empty lines pass through unchanged
    /// and are counted.
    pub fn corrupt_corpus<S: AsRef<str>>(&self, lines: &[S]) -> CorpusCorruption {
        let mut out = CorpusCorruption::default();
        for (i, line) in lines.iter().enumerate() {
            let line = line.as_ref();
            match self.corrupt_line(i, line) {
                Ok(c) => out.lines.push(c),
                Err(EmptyInput) => {
                    out.empty_lines += 1;
                    out.lines.push(Corruption {
                        text: line.to_owned(),
                        n: 0,
                        k: 0,
                        positions: Vec::new(),
                    });
                }
            }
        }
        out
    }
}
