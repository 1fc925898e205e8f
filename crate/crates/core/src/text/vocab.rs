//! Word-level vocabulary with single-token special markers.
//!
//! Regular tokens are whitespace/punctuation-split words ranked by corpus
//! frequency (ties broken lexicographically). Marker strings are matched
//! greedily before word splitting so each marker always maps to one id.

use crate::text::TextError;
use indexmap::IndexMap;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub type TokenId = u32;

#[derive(Debug, Clone)]
pub struct Vocab {
    regular: IndexMap<String, TokenId>,
    special: IndexMap<String, TokenId>,
    unk_id: TokenId,
    /// Marker strings sorted longest-first for greedy matching.
    markers_by_len: Vec<String>,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.regular.len() + 1 + self.special.len()
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn regular_count(&self) -> usize {
        self.regular.len()
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.regular.get(word).copied()
    }

    pub fn marker_id(&self, marker: &str) -> Option<TokenId> {
        self.special.get(marker).copied()
    }

    pub fn is_marker_id(&self, id: TokenId) -> bool {
        id > self.unk_id && (id as usize) < self.size()
    }

    pub fn token_string(&self, id: TokenId) -> Option<&str> {
        let id = id as usize;
        let r = self.regular.len();
        if id < r {
            self.regular.get_index(id).map(|(k, _)| k.as_str())
        } else if id == r {
            Some("<unk>")
        } else {
            self.special.get_index(id - r - 1).map(|(k, _)| k.as_str())
        }
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter_map(|&id| self.token_string(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Line format: `id<TAB>kind<TAB>token`, kind in {regular, unk, marker}.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (word, id) in &self.regular {
            writeln!(f, "{id}\tregular\t{word}")?;
        }
        writeln!(f, "{}\tunk\t<unk>", self.unk_id)?;
        for (marker, id) in &self.special {
            writeln!(f, "{id}\tmarker\t{marker}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, TextError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut regular = IndexMap::new();
        let mut special = IndexMap::new();
        let mut unk_id = None;
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (id, kind, token) = match (parts.next(), parts.next(), parts.next()) {
                (Some(i), Some(k), Some(t)) => (i, k, t),
                _ => {
                    return Err(TextError::VocabParse {
                        line: lineno + 1,
                        msg: "expected id<TAB>kind<TAB>token".into(),
                    })
                }
            };
            let id: TokenId = id.parse().map_err(|_| TextError::VocabParse {
                line: lineno + 1,
                msg: format!("bad id '{id}'"),
            })?;
            match kind {
                "regular" => {
                    regular.insert(token.to_string(), id);
                }
                "unk" => unk_id = Some(id),
                "marker" => {
                    special.insert(token.to_string(), id);
                }
                other => {
                    return Err(TextError::VocabParse {
                        line: lineno + 1,
                        msg: format!("unknown kind '{other}'"),
                    })
                }
            }
        }
        let unk_id = unk_id.ok_or(TextError::VocabParse {
            line: 0,
            msg: "missing unk row".into(),
        })?;
        let mut markers_by_len: Vec<String> = special.keys().cloned().collect();
        markers_by_len.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        Ok(Vocab {
            regular,
            special,
            unk_id,
            markers_by_len,
        })
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c| !is_word_char(c)).filter(|w| !w.is_empty())
}

/// Split `text` into word pieces and marker hits, markers matched greedily
/// (longest match wins at equal positions, so `<ST_P12>` beats `<ST_P1>`).
fn segment<'a>(text: &'a str, markers_by_len: &'a [String]) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut rest = text;
    loop {
        let hit = markers_by_len
            .iter()
            .filter_map(|m| rest.find(m.as_str()).map(|pos| (pos, m)))
            .min_by(|(pa, ma), (pb, mb)| pa.cmp(pb).then(mb.len().cmp(&ma.len())));
        match hit {
            Some((pos, marker)) => {
                for w in split_words(&rest[..pos]) {
                    pieces.push(Piece::Word(w));
                }
                pieces.push(Piece::Marker(marker));
                rest = &rest[pos + marker.len()..];
            }
            None => {
                for w in split_words(rest) {
                    pieces.push(Piece::Word(w));
                }
                return pieces;
            }
        }
    }
}

enum Piece<'a> {
    Word(&'a str),
    Marker(&'a str),
}

/// Deterministic tokenization; unknown words map to the unk id.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    segment(text, &vocab.markers_by_len)
        .into_iter()
        .map(|p| match p {
            Piece::Word(w) => vocab.word_id(w).unwrap_or(vocab.unk_id),
            Piece::Marker(m) => vocab
                .marker_id(m)
                .expect("markers_by_len only holds known markers"),
        })
        .collect()
}

/// Frequency-ranked word vocabulary over `corpus_texts`, capped at
/// `max_regular_tokens`, with `marker_strings` appended as single tokens.
pub fn build_vocab(
    corpus_texts: &[String],
    marker_strings: &[&str],
    max_regular_tokens: usize,
) -> Result<Vocab, TextError> {
    if corpus_texts.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut seen = std::collections::HashSet::new();
    for m in marker_strings {
        if m.is_empty() {
            return Err(TextError::EmptyMarker);
        }
        if !seen.insert(*m) {
            return Err(TextError::DuplicateMarker(m.to_string()));
        }
    }
    let mut markers_by_len: Vec<String> = marker_strings.iter().map(|m| m.to_string()).collect();
    markers_by_len.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));

    let mut counts: HashMap<&str, u64> = HashMap::new();
    for text in corpus_texts {
        for piece in segment(text, &markers_by_len) {
            if let Piece::Word(w) = piece {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|(wa, ca), (wb, cb)| cb.cmp(ca).then(wa.cmp(wb)));
    ranked.truncate(max_regular_tokens);

    let regular: IndexMap<String, TokenId> = ranked
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.to_string(), i as TokenId))
        .collect();
    let unk_id = regular.len() as TokenId;
    let special: IndexMap<String, TokenId> = marker_strings
        .iter()
        .enumerate()
        .map(|(i, m)| (m.to_string(), unk_id + 1 + i as TokenId))
        .collect();
    Ok(Vocab {
        regular,
        special,
        unk_id,
        markers_by_len,
    })
}
