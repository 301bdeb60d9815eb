//! Text front-end: tokenization, lexicon lookup with per-character fallback,
//! and assembly of an [`Utterance`] (phoneme IDs plus word spans).

use std::collections::HashMap;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("no words left after tokenization")]
    EmptyInput,
    #[error("cannot spell word {word:?}: character {ch:?} is not an inventory symbol")]
    UnknownSymbol { word: String, ch: char },
    #[error("lexicon line {line}: {reason}")]
    LexiconFormat { line: usize, reason: String },
}

const EDGE_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Pronunciation dictionary over a fixed phoneme inventory.
///
/// Phoneme IDs are positions in the inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<usize>>,
    inventory: Vec<String>,
    symbol_ids: HashMap<String, usize>,
}

impl Lexicon {
    /// Builds a lexicon from an inventory and `(word, symbols)` pairs.
    pub fn new<I, W, S>(inventory: Vec<String>, entries: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = (W, Vec<S>)>,
        W: AsRef<str>,
        S: AsRef<str>,
    {
        let mut symbol_ids = HashMap::with_capacity(inventory.len());
        for (id, sym) in inventory.iter().enumerate() {
            if symbol_ids.insert(sym.clone(), id).is_some() {
                return Err(TextError::LexiconFormat {
                    line: 1,
                    reason: format!("duplicate inventory symbol {sym:?}"),
                });
            }
        }
        let mut lex = Lexicon {
            entries: HashMap::new(),
            inventory,
            symbol_ids,
        };
        for (idx, (word, symbols)) in entries.into_iter().enumerate() {
            lex.insert(word.as_ref(), &symbols, idx + 2)?;
        }
        Ok(lex)
    }

    fn insert<S: AsRef<str>>(
        &mut self,
        word: &str,
        symbols: &[S],
        line: usize,
    ) -> Result<(), TextError> {
        if word.is_empty() {
            return Err(TextError::LexiconFormat {
                line,
                reason: "empty word".into(),
            });
        }
        if symbols.is_empty() {
            return Err(TextError::LexiconFormat {
                line,
                reason: format!("entry {word:?} has no phonemes"),
            });
        }
        let ids = symbols
            .iter()
            .map(|s| {
                self.symbol_ids
                    .get(s.as_ref())
                    .copied()
                    .ok_or_else(|| TextError::LexiconFormat {
                        line,
                        reason: format!("symbol {:?} not in inventory", s.as_ref()),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.entries.insert(word.to_lowercase(), ids);
        Ok(())
    }

    /// Parses the text lexicon format: a `#inventory: p1 p2 ...` first line,
    /// then `word<TAB>ph1 ph2 ...` lines. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut lines = text.lines().enumerate();
        let inventory = loop {
            match lines.next() {
                None => {
                    return Err(TextError::LexiconFormat {
                        line: 1,
                        reason: "missing #inventory line".into(),
                    })
                }
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => {
                    let rest = l.trim().strip_prefix("#inventory:").ok_or_else(|| {
                        TextError::LexiconFormat {
                            line: i + 1,
                            reason: "expected `#inventory:` header".into(),
                        }
                    })?;
                    break rest
                        .split_whitespace()
                        .map(str::to_owned)
                        .collect::<Vec<_>>();
                }
            }
        };
        if inventory.is_empty() {
            return Err(TextError::LexiconFormat {
                line: 1,
                reason: "empty inventory".into(),
            });
        }
        let mut lex = Lexicon::new(inventory, std::iter::empty::<(&str, Vec<&str>)>())?;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (word, phones) = line
                .split_once('\t')
                .ok_or_else(|| TextError::LexiconFormat {
                    line: i + 1,
                    reason: "expected word<TAB>phonemes".into(),
                })?;
            let symbols: Vec<&str> = phones.split_whitespace().collect();
            lex.insert(word.trim(), &symbols, i + 1)?;
        }
        Ok(lex)
    }

    pub fn inventory(&self) -> &[String] {
        &self.inventory
    }

    pub fn inventory_size(&self) -> usize {
        self.inventory.len()
    }

    pub fn symbol_id(&self, symbol: &str) -> Option<usize> {
        self.symbol_ids.get(symbol).copied()
    }

    pub fn lookup(&self, word: &str) -> Option<&[usize]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Phoneme sequence of a sentence together with the span each word covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub words: Vec<String>,
    pub phoneme_ids: Vec<usize>,
    pub spans: Vec<Range<usize>>,
}

impl Utterance {
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_phonemes(&self) -> usize {
        self.phoneme_ids.len()
    }
}

/// Splits on whitespace, strips edge punctuation and lowercases.
pub fn tokenize(raw_text: &str) -> Result<Vec<String>, TextError> {
    let words: Vec<String> = raw_text
        .split_whitespace()
        .map(|w| w.trim_matches(EDGE_PUNCT).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(TextError::EmptyInput);
    }
    Ok(words)
}

/// Looks `word` up in the lexicon, falling back to spelling it with
/// single-character inventory symbols.
pub fn phonemize(word: &str, lexicon: &Lexicon) -> Result<Vec<usize>, TextError> {
    if let Some(ids) = lexicon.lookup(word) {
        return Ok(ids.to_vec());
    }
    let mut buf = [0u8; 4];
    word.chars()
        .map(|ch| {
            lexicon
                .symbol_id(ch.encode_utf8(&mut buf))
                .ok_or_else(|| TextError::UnknownSymbol {
                    word: word.to_owned(),
                    ch,
                })
        })
        .collect()
}

pub fn build_utterance(raw_text: &str, lexicon: &Lexicon) -> Result<Utterance, TextError> {
    let words = tokenize(raw_text)?;
    let mut phoneme_ids = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    for word in &words {
        let start = phoneme_ids.len();
        phoneme_ids.extend(phonemize(word, lexicon)?);
        spans.push(start..phoneme_ids.len());
    }
    Ok(Utterance {
        words,
        phoneme_ids,
        spans,
    })
}
