//! Token vocabulary shared by the text side and the SELFIES side.
//!
//! Text form: a header line then one token per line in id order:
//!
//! ```text
//! #moldiff-vocab v1 selfies=<start>+<count>
//! [MASK]
//! [EOS]
//! ...
//! ```

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{ChemError, Result};
use crate::selfies::{SelfiesSequence, SelfiesToken};

pub type TokenId = usize;

pub const MASK: &str = "[MASK]";
pub const EOS: &str = "[EOS]";
pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const UNK: &str = "[UNK]";
pub const RESERVED: [&str; 5] = [MASK, EOS, PAD, BOS, UNK];

const HEADER: &str = "#moldiff-vocab v1";
const PUNCTUATION: &[char] = &[',', '.', ':', ';', '?', '!', '(', ')', '='];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    selfies: Option<Range<TokenId>>,
}

impl Vocab {
    /// Reserved tokens followed by `words`. Duplicates are an error.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new(), selfies: None };
        for t in RESERVED.into_iter().chain(words) {
            v.push(t)?;
        }
        Ok(v)
    }

    fn push(&mut self, t: &str) -> Result<TokenId> {
        if t.is_empty() || t.contains(char::is_whitespace) {
            return Err(ChemError::VocabFormat(format!("bad token {t:?}")));
        }
        if self.index.contains_key(t) {
            return Err(ChemError::DuplicateToken(t.to_string()));
        }
        let id = self.tokens.len();
        self.tokens.push(t.to_string());
        self.index.insert(t.to_string(), id);
        Ok(id)
    }

    /// Appends `new_tokens` as one contiguous block and returns the block.
    pub fn extend(&self, new_tokens: &[String]) -> Result<(Vocab, Range<TokenId>)> {
        let mut v = self.clone();
        let start = v.len();
        for t in new_tokens {
            v.push(t)?;
        }
        let end = v.len();
        Ok((v, start..end))
    }

    /// Appends the full dialect alphabet and records its block.
    pub fn with_selfies(&self) -> Result<(Vocab, Range<TokenId>)> {
        if self.selfies.is_some() {
            return Err(ChemError::DuplicateToken("selfies block already registered".into()));
        }
        let alphabet: Vec<String> = SelfiesToken::alphabet().iter().map(ToString::to_string).collect();
        let (mut v, range) = self.extend(&alphabet)?;
        v.selfies = Some(range.clone());
        Ok((v, range))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn mask(&self) -> TokenId {
        0
    }

    pub fn eos(&self) -> TokenId {
        1
    }

    pub fn pad(&self) -> TokenId {
        2
    }

    pub fn bos(&self) -> TokenId {
        3
    }

    pub fn unk(&self) -> TokenId {
        4
    }

    pub fn selfies_range(&self) -> Option<Range<TokenId>> {
        self.selfies.clone()
    }

    pub fn is_selfies(&self, id: TokenId) -> bool {
        self.selfies.as_ref().is_some_and(|r| r.contains(&id))
    }

    /// Vocabulary id of a dialect token. Panics without a SELFIES block.
    pub fn selfies_id(&self, tok: SelfiesToken) -> TokenId {
        self.selfies.as_ref().expect("vocab has no selfies block").start + tok.dialect_id()
    }

    pub fn selfies_token(&self, id: TokenId) -> Option<SelfiesToken> {
        let r = self.selfies.as_ref()?;
        r.contains(&id).then(|| SelfiesToken::from_dialect_id(id - r.start)).flatten()
    }

    pub fn encode_selfies(&self, seq: &SelfiesSequence) -> Vec<TokenId> {
        seq.tokens().iter().map(|&t| self.selfies_id(t)).collect()
    }

    /// Maps ids back to a sequence; `None` if any id is outside the block.
    pub fn decode_selfies(&self, ids: &[TokenId]) -> Option<SelfiesSequence> {
        ids.iter().map(|&i| self.selfies_token(i)).collect::<Option<Vec<_>>>().map(SelfiesSequence::new)
    }

    /// Parses bracket text and maps every token to its vocabulary id.
    pub fn tokenize_selfies(&self, text: &str) -> Result<Vec<TokenId>> {
        let seq = SelfiesSequence::parse(text)?;
        if self.selfies.is_none() {
            return Err(ChemError::VocabFormat("vocab has no selfies block".into()));
        }
        Ok(self.encode_selfies(&seq))
    }

    /// Splits plain text into words, single digits, punctuation marks and
    /// bracketed SELFIES tokens. Case is kept; unknown pieces map to UNK.
    pub fn tokenize_text(&self, text: &str) -> Vec<TokenId> {
        split_text(text).into_iter().map(|piece| self.id(&piece).unwrap_or(self.unk())).collect()
    }

    /// Inverse of [`Vocab::tokenize_text`] up to whitespace: digits and
    /// SELFIES tokens glue to each other, punctuation glues to the left.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev: Option<&str> = None;
        for &id in ids {
            let Some(t) = self.token(id) else { continue };
            let glue = match prev {
                None => true,
                Some(p) => {
                    (is_numeric_piece(p) && is_numeric_piece(t) && !(p == "." && t == "."))
                        || (p.starts_with('[')
                            && t.starts_with('[')
                            && self.is_selfies(id)
                            && self.id(p).is_some_and(|i| self.is_selfies(i)))
                        || (t.len() == 1 && PUNCTUATION.contains(&t.chars().next().unwrap()) && t != "(")
                        || p == "("
                }
            };
            if !glue {
                out.push(' ');
            }
            out.push_str(t);
            prev = Some(t);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        if let Some(r) = &self.selfies {
            out.push_str(&format!(" selfies={}+{}", r.start, r.len()));
        }
        out.push('\n');
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| ChemError::VocabFormat(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = header.strip_prefix(HEADER).ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut selfies = None;
        for field in rest.split_whitespace() {
            let spec = field.strip_prefix("selfies=").ok_or_else(|| bad(format!("unknown header field {field:?}")))?;
            let (s, c) = spec.split_once('+').ok_or_else(|| bad(format!("bad range {spec:?}")))?;
            let s: usize = s.parse().map_err(|_| bad(format!("bad range {spec:?}")))?;
            let c: usize = c.parse().map_err(|_| bad(format!("bad range {spec:?}")))?;
            selfies = Some(s..s.checked_add(c).ok_or_else(|| bad("range overflows".into()))?);
        }
        let mut v = Self { tokens: Vec::new(), index: HashMap::new(), selfies: None };
        for line in lines {
            v.push(line)?;
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if v.token(i) != Some(r) {
                return Err(bad(format!("reserved id {i} must be {r}")));
            }
        }
        if let Some(r) = &selfies {
            let alphabet = SelfiesToken::alphabet();
            if r.len() != alphabet.len() || r.end > v.len() {
                return Err(bad("selfies block does not match the dialect".into()));
            }
            for (k, t) in alphabet.iter().enumerate() {
                if v.tokens[r.start + k] != t.to_string() {
                    return Err(bad(format!("selfies block entry {k} is not {t}")));
                }
            }
        }
        v.selfies = selfies;
        Ok(v)
    }
}

fn is_numeric_piece(t: &str) -> bool {
    t == "." || t == "-" || (t.len() == 1 && t.as_bytes()[0].is_ascii_digit())
}

/// Text segmentation used by [`Vocab::tokenize_text`].
pub fn split_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if ch == '[' {
            if let Some(end) = text[i..].find(']') {
                flush(&mut word, &mut out);
                out.push(text[i..=i + end].to_string());
                while chars.peek().is_some_and(|&(j, _)| j <= i + end) {
                    chars.next();
                }
                continue;
            }
        }
        if ch.is_whitespace() {
            flush(&mut word, &mut out);
        } else if ch.is_ascii_digit() || PUNCTUATION.contains(&ch) || ch == '-' || ch == '[' || ch == ']' {
            flush(&mut word, &mut out);
            out.push(ch.to_string());
        } else {
            word.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Vocab {
        Vocab::from_words(["the", "molecule", "has", "atoms", "0", "1", "2", "5", ".", ","]).unwrap()
    }

    #[test]
    fn extension_is_contiguous() {
        let mut words: Vec<String> = (0..95).map(|i| format!("w{i}")).collect();
        words.sort();
        let b = Vocab::from_words(words.iter().map(String::as_str)).unwrap();
        assert_eq!(b.len(), 100);
        let (v, r) = b.with_selfies().unwrap();
        assert_eq!(r, 100..126);
        assert_eq!(v.id("[C]"), Some(100));
        let (same, empty) = b.extend(&[]).unwrap();
        assert_eq!(same, b);
        assert!(empty.is_empty());
        assert_eq!(b.extend(&["w3".to_string()]), Err(ChemError::DuplicateToken("w3".into())));
    }

    #[test]
    fn text_round_trip() {
        let (v, _) = base().with_selfies().unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("#moldiff-vocab v1\n[EOS]\n[MASK]\n[PAD]\n[BOS]\n[UNK]\n").is_err());
        assert!(Vocab::from_text("[MASK]\n").is_err());
        assert!(Vocab::from_text("#moldiff-vocab v1 selfies=5+26\n[MASK]\n[EOS]\n[PAD]\n[BOS]\n[UNK]\n").is_err());
    }

    #[test]
    fn tokenize_and_render_text() {
        let (v, _) = base().with_selfies().unwrap();
        let ids = v.tokenize_text("the molecule has 12.50 atoms, [C][=O].");
        assert_eq!(v.render(&ids), "the molecule has 12.50 atoms, [C][=O].");
        assert!(v.tokenize_text("zebra").iter().all(|&i| i == v.unk()));
    }

    #[test]
    fn tokenize_selfies_ids() {
        let (v, r) = base().with_selfies().unwrap();
        let ids = v.tokenize_selfies("[C][=O]").unwrap();
        assert_eq!(ids, vec![v.id("[C]").unwrap(), v.id("[=O]").unwrap()]);
        assert!(ids.iter().all(|i| r.contains(i)));
        assert_eq!(v.tokenize_selfies("[C][Q]"), Err(ChemError::UnknownToken("[Q]".into())));
    }
}
