//! Token stream construction and the numeric vocabulary.
//!
//! Words are turned into tokens by mechanical bound transcription (hyphens
//! and sign-joining dots dropped, spelling otherwise untouched). Proper names,
//! places, months and numbers collapse into placeholder tokens keyed on their
//! determinatives, damaged words become `<BRK>`, and italic (syllabic) runs are
//! bracketed by `<i>`/`</i>` stream tokens.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Deref;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{MarkedWord, SupPosition, TransliteratedDocument};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("cannot build a vocabulary from an empty training stream")]
    EmptyTrainingStream,
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("vocabulary file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        Token(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn reserved(&self) -> Option<Reserved> {
        Reserved::ALL.into_iter().find(|r| r.as_str() == self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::new(s)
    }
}

impl From<Reserved> for Token {
    fn from(r: Reserved) -> Self {
        Token::new(r.as_str())
    }
}

/// Tokens with fixed meaning. Their ids are their positions in [`Reserved::ALL`]
/// in every vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reserved {
    Name,
    GodName,
    FemaleName,
    Location,
    Month,
    Num,
    Break,
    Unknown,
    ItalicOpen,
    ItalicClose,
    Eos,
}

impl Reserved {
    pub const ALL: [Reserved; 11] = [
        Reserved::Name,
        Reserved::GodName,
        Reserved::FemaleName,
        Reserved::Location,
        Reserved::Month,
        Reserved::Num,
        Reserved::Break,
        Reserved::Unknown,
        Reserved::ItalicOpen,
        Reserved::ItalicClose,
        Reserved::Eos,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reserved::Name => "NAME",
            Reserved::GodName => "GODNAME",
            Reserved::FemaleName => "FEMALENAME",
            Reserved::Location => "LOCATION",
            Reserved::Month => "MONTH",
            Reserved::Num => "NUM",
            Reserved::Break => "<BRK>",
            Reserved::Unknown => "<UNK>",
            Reserved::ItalicOpen => "<i>",
            Reserved::ItalicClose => "</i>",
            Reserved::Eos => "<EOS>",
        }
    }

    pub fn id(self) -> TokenId {
        TokenId(self as u32)
    }

    pub fn token(self) -> Token {
        Token::from(self)
    }

    /// Placeholders (NAME, NUM, ...) are legitimate completions; the markup
    /// and bookkeeping tokens are not.
    pub fn is_candidate(self) -> bool {
        !matches!(
            self,
            Reserved::Break
                | Reserved::Unknown
                | Reserved::Eos
                | Reserved::ItalicOpen
                | Reserved::ItalicClose
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// True unless this is one of the non-completion reserved tokens.
    pub fn is_candidate(self) -> bool {
        Reserved::ALL
            .get(self.index())
            .map_or(true, |r| r.is_candidate())
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EncodedSequence(pub Vec<TokenId>);

impl Deref for EncodedSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl AsRef<[TokenId]> for EncodedSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for EncodedSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        EncodedSequence(ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerOptions {
    /// Merge runs of adjacent `<BRK>` into one.
    pub collapse_breaks: bool,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        TokenizerOptions {
            collapse_breaks: true,
        }
    }
}

/// Joins syllables by deleting hyphens and the dots between logogram signs.
/// Italic words are wrapped in `<i>`/`</i>`.
pub fn bound_transcribe(word: &MarkedWord) -> Vec<Token> {
    let joined: String = word
        .surface
        .chars()
        .filter(|c| *c != '-' && *c != '.' && !c.is_whitespace())
        .collect();
    if joined.is_empty() {
        return vec![Reserved::Unknown.token()];
    }
    if word.italic {
        vec![
            Reserved::ItalicOpen.token(),
            Token(joined),
            Reserved::ItalicClose.token(),
        ]
    } else {
        vec![Token(joined)]
    }
}

/// Two name-class determinatives on one word. Classification still succeeds
/// using the precedence I/Id > d > f; this records what was overridden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterminativeConflict {
    pub chosen: Reserved,
    pub overridden: Reserved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified {
    pub tokens: Vec<Token>,
    pub conflict: Option<DeterminativeConflict>,
}

fn sup_matches(word: &MarkedWord, position: SupPosition, names: &[&str]) -> bool {
    word.superscripts
        .iter()
        .any(|s| s.position == position && names.contains(&s.text.as_str()))
}

fn is_simple_number(surface: &str) -> bool {
    const FRACTIONS: &str = "½⅓⅔¼¾⅕⅙⅚⅛⅝";
    let mut has_digit = false;
    let mut prev_sep = true;
    for c in surface.chars() {
        if c.is_ascii_digit() || FRACTIONS.contains(c) {
            has_digit = true;
            prev_sep = false;
        } else if matches!(c, '/' | '+' | '.' | ',') {
            if prev_sep {
                return false;
            }
            prev_sep = true;
        } else {
            return false;
        }
    }
    has_digit && !prev_sep
}

/// Maps one word to its token fragment.
///
/// Precedence: damage, then name classes (`I`/`Id` before NAME, `d` GODNAME,
/// `f` FEMALENAME), then location (`uru` before or `ki` after), month (`iti`
/// before), plain numbers, and finally bound transcription.
pub fn classify(word: &MarkedWord) -> Classified {
    let done = |r: Reserved| Classified {
        tokens: vec![r.token()],
        conflict: None,
    };
    if word.damage {
        return done(Reserved::Break);
    }
    let name_classes: Vec<Reserved> = [
        (Reserved::Name, &["I", "Id"][..]),
        (Reserved::GodName, &["d"][..]),
        (Reserved::FemaleName, &["f"][..]),
    ]
    .into_iter()
    .filter(|(_, sups)| sup_matches(word, SupPosition::Before, sups))
    .map(|(r, _)| r)
    .collect();
    if let Some(&chosen) = name_classes.first() {
        return Classified {
            tokens: vec![chosen.token()],
            conflict: name_classes.get(1).map(|&overridden| DeterminativeConflict {
                chosen,
                overridden,
            }),
        };
    }
    if sup_matches(word, SupPosition::Before, &["uru", "URU"])
        || sup_matches(word, SupPosition::After, &["ki", "KI"])
    {
        return done(Reserved::Location);
    }
    if sup_matches(word, SupPosition::Before, &["iti", "ITI"]) {
        return done(Reserved::Month);
    }
    if is_simple_number(&word.surface) {
        return done(Reserved::Num);
    }
    Classified {
        tokens: bound_transcribe(word),
        conflict: None,
    }
}

/// Tokenizes one text line. Adjacent italic words share one `<i>..</i>` span,
/// `<BRK>` runs collapse (when enabled) and the line ends with `<EOS>`.
pub fn tokenize_line(line: &[MarkedWord], options: &TokenizerOptions) -> Vec<Token> {
    let close = Reserved::ItalicClose.token();
    let brk = Reserved::Break.token();
    let mut out: Vec<Token> = Vec::with_capacity(line.len() + 1);
    for word in line {
        let classified = classify(word);
        if let Some(conflict) = &classified.conflict {
            tracing::debug!(surface = %word.surface, ?conflict, "conflicting determinatives");
        }
        let mut frag = classified.tokens.into_iter().peekable();
        if frag.peek().is_some_and(|t| t.reserved() == Some(Reserved::ItalicOpen))
            && out.last() == Some(&close)
        {
            out.pop();
            frag.next();
        }
        for tok in frag {
            if options.collapse_breaks && tok == brk && out.last() == Some(&brk) {
                continue;
            }
            out.push(tok);
        }
    }
    out.push(Reserved::Eos.token());
    out
}

pub fn tokenize_document(doc: &TransliteratedDocument, options: &TokenizerOptions) -> Vec<Vec<Token>> {
    doc.lines
        .iter()
        .map(|l| tokenize_line(l, options))
        .collect()
}

/// Bidirectional token/id map built from training counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<Token, TokenId>,
    min_count: u64,
    /// Counts from the training stream; empty when loaded from a file.
    train_counts: BTreeMap<Token, u64>,
}

const VOCAB_MAGIC: &str = "AKVOC1";

impl Vocabulary {
    /// Reserved tokens first, then tokens with count >= `min_count` by
    /// descending count and ascending text.
    pub fn build<'a>(
        train_tokens: impl IntoIterator<Item = &'a Token>,
        min_count: u64,
    ) -> Result<Self, TokenizeError> {
        let mut counts: BTreeMap<Token, u64> = BTreeMap::new();
        for t in train_tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(TokenizeError::EmptyTrainingStream);
        }
        let mut kept: Vec<(&Token, u64)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_count && t.reserved().is_none())
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens: Vec<Token> = Reserved::ALL
            .iter()
            .map(|r| r.token())
            .chain(kept.into_iter().map(|(t, _)| t.clone()))
            .collect();
        let mut vocab = Vocabulary::from_tokens(tokens, min_count)?;
        vocab.train_counts = counts;
        Ok(vocab)
    }

    fn from_tokens(tokens: Vec<Token>, min_count: u64) -> Result<Self, TokenizeError> {
        for (i, r) in Reserved::ALL.iter().enumerate() {
            if tokens.get(i).map(Token::as_str) != Some(r.as_str()) {
                return Err(TokenizeError::Format(format!(
                    "reserved token {} missing at id {i}",
                    r.as_str()
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.0.is_empty() || t.0.contains(char::is_whitespace) {
                return Err(TokenizeError::Format(format!("bad token {:?}", t.0)));
            }
            if ids.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(TokenizeError::Format(format!("duplicate token {}", t)));
            }
        }
        Ok(Vocabulary {
            tokens,
            ids,
            min_count,
            train_counts: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn train_counts(&self) -> &BTreeMap<Token, u64> {
        &self.train_counts
    }

    pub fn id_of(&self, token: &Token) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: TokenId) -> Option<&Token> {
        self.tokens.get(id.index())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[Token]) -> EncodedSequence {
        let unk = Reserved::Unknown.id();
        EncodedSequence(
            tokens
                .iter()
                .map(|t| self.id_of(t).unwrap_or(unk))
                .collect(),
        )
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<Token>, TokenizeError> {
        ids.iter()
            .map(|&id| self.token_of(id).cloned().ok_or(TokenizeError::UnknownId(id.0)))
            .collect()
    }

    /// SHA-256 over the ordered token list; identifies the id assignment.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.0.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }

    /// `AKVOC1 <min_count> <V>` followed by one token per line in id order.
    pub fn to_file_string(&self) -> String {
        let mut s = format!("{VOCAB_MAGIC} {} {}\n", self.min_count, self.tokens.len());
        for t in &self.tokens {
            s.push_str(&t.0);
            s.push('\n');
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self, TokenizeError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TokenizeError::Format("empty file".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        let [magic, min_count, size] = parts[..] else {
            return Err(TokenizeError::Format(format!("bad header `{header}`")));
        };
        if magic != VOCAB_MAGIC {
            return Err(TokenizeError::Format(format!("bad magic `{magic}`")));
        }
        let min_count: u64 = min_count
            .parse()
            .map_err(|_| TokenizeError::Format("bad min_count".into()))?;
        let size: usize = size
            .parse()
            .map_err(|_| TokenizeError::Format("bad size".into()))?;
        let tokens: Vec<Token> = lines.map(Token::new).collect();
        if tokens.len() != size {
            return Err(TokenizeError::Format(format!(
                "header declares {size} tokens, found {}",
                tokens.len()
            )));
        }
        Vocabulary::from_tokens(tokens, min_count)
    }
}

/// Writes lines of tokens as space-separated text, one line per text line.
pub fn token_stream_to_string(lines: &[Vec<Token>]) -> String {
    let mut s = String::new();
    for line in lines {
        let words: Vec<&str> = line.iter().map(Token::as_str).collect();
        s.push_str(&words.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_token_stream(text: &str) -> Vec<Vec<Token>> {
    text.lines()
        .map(|l| l.split_whitespace().map(Token::new).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Superscript;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(Token::new).collect()
    }

    fn name(surface: &str) -> MarkedWord {
        MarkedWord::plain(surface).with_sup(Superscript::before("I"))
    }

    #[test]
    fn bound_transcription() {
        assert_eq!(bound_transcribe(&MarkedWord::italic("ma-na")), toks("<i> mana </i>"));
        assert_eq!(bound_transcribe(&MarkedWord::plain("kù.babbar")), toks("kùbabbar"));
        assert_eq!(bound_transcribe(&MarkedWord::plain("a")), toks("a"));
        assert_eq!(bound_transcribe(&MarkedWord::plain("-")), toks("<UNK>"));
    }

    #[test]
    fn classification_rules() {
        let c = |w: MarkedWord| classify(&w).tokens;
        assert_eq!(c(name("ba-la-ṭu")), toks("NAME"));
        assert_eq!(c(MarkedWord::plain("x").with_sup(Superscript::before("Id"))), toks("NAME"));
        assert_eq!(c(MarkedWord::plain("AMAR.UTU").with_sup(Superscript::before("d"))), toks("GODNAME"));
        assert_eq!(c(MarkedWord::plain("x").with_sup(Superscript::before("f"))), toks("FEMALENAME"));
        assert_eq!(
            c(MarkedWord::plain("babylon-spelling").with_sup(Superscript::after("ki"))),
            toks("LOCATION")
        );
        assert_eq!(c(MarkedWord::plain("x").with_sup(Superscript::before("uru"))), toks("LOCATION"));
        assert_eq!(c(MarkedWord::plain("bára").with_sup(Superscript::before("iti"))), toks("MONTH"));
        assert_eq!(c(MarkedWord::plain("2")), toks("NUM"));
        assert_eq!(c(MarkedWord::plain("1/2")), toks("NUM"));
        assert_eq!(c(MarkedWord::plain("1+½")), toks("NUM"));
        assert_eq!(c(MarkedWord::plain("2-ú")), toks("2ú"));
        assert_eq!(c(MarkedWord::plain("[x x]").damaged()), toks("<BRK>"));
        // "ki" before is not a location marker
        assert_eq!(c(MarkedWord::plain("a").with_sup(Superscript::before("ki"))), toks("a"));
    }

    #[test]
    fn damage_beats_name_and_conflicts_are_reported() {
        let damaged = name("ba-la-ṭu").damaged();
        assert_eq!(classify(&damaged).tokens, toks("<BRK>"));

        let both = MarkedWord::plain("x")
            .with_sup(Superscript::before("d"))
            .with_sup(Superscript::before("I"));
        let c = classify(&both);
        assert_eq!(c.tokens, toks("NAME"));
        assert_eq!(
            c.conflict,
            Some(DeterminativeConflict {
                chosen: Reserved::Name,
                overridden: Reserved::GodName
            })
        );
        let loc_and_name = name("x").with_sup(Superscript::after("ki"));
        let c = classify(&loc_and_name);
        assert_eq!(c.tokens, toks("NAME"));
        assert_eq!(c.conflict, None);
    }

    pub(crate) fn golden_line() -> Vec<MarkedWord> {
        vec![
            MarkedWord::plain("2"),
            MarkedWord::plain("ma-na"),
            MarkedWord::plain("kù.babbar"),
            MarkedWord::italic("šá"),
            name("ba-la-ṭu"),
            MarkedWord::plain("a"),
            MarkedWord::italic("šú"),
            MarkedWord::italic("šá"),
            name("na-din"),
        ]
    }

    #[test]
    fn printed_fragment() {
        let got = tokenize_line(&golden_line(), &TokenizerOptions::default());
        assert_eq!(
            got,
            toks("NUM mana kùbabbar <i> šá </i> NAME a <i> šú šá </i> NAME <EOS>")
        );
    }

    #[test]
    fn empty_line_and_break_collapse() {
        let opts = TokenizerOptions::default();
        assert_eq!(tokenize_line(&[], &opts), toks("<EOS>"));
        let line = vec![
            MarkedWord::plain("a"),
            MarkedWord::plain("[x").damaged(),
            MarkedWord::plain("x]").damaged(),
            MarkedWord::plain("b"),
        ];
        assert_eq!(tokenize_line(&line, &opts), toks("a <BRK> b <EOS>"));
        let keep = TokenizerOptions {
            collapse_breaks: false,
        };
        assert_eq!(tokenize_line(&line, &keep), toks("a <BRK> <BRK> b <EOS>"));
    }

    fn repeat(s: &str, n: usize) -> Vec<Token> {
        (0..n).map(|_| Token::new(s)).collect()
    }

    #[test]
    fn vocabulary_threshold() {
        let two = repeat("kaspu", 2);
        let v = Vocabulary::build(&two, 3).unwrap();
        assert_eq!(v.id_of(&Token::new("kaspu")), None);
        assert_eq!(v.len(), 11);
        let three = repeat("kaspu", 3);
        let v = Vocabulary::build(&three, 3).unwrap();
        assert_eq!(v.id_of(&Token::new("kaspu")), Some(TokenId(11)));
        for (i, r) in Reserved::ALL.iter().enumerate() {
            assert_eq!(v.id_of(&r.token()), Some(TokenId(i as u32)));
        }
        assert_eq!(
            Vocabulary::build(&Vec::<Token>::new(), 3),
            Err(TokenizeError::EmptyTrainingStream)
        );
    }

    #[test]
    fn vocabulary_order() {
        let mut stream = repeat("b", 3);
        stream.extend(repeat("a", 3));
        stream.extend(repeat("c", 5));
        stream.extend(repeat("NAME", 7));
        let v = Vocabulary::build(&stream, 3).unwrap();
        assert_eq!(&v.tokens()[11..], &toks("c a b")[..]);
    }

    #[test]
    fn encode_decode() {
        let line = tokenize_line(&golden_line(), &TokenizerOptions::default());
        let mut stream = Vec::new();
        for _ in 0..3 {
            stream.extend(line.iter().cloned());
        }
        let v = Vocabulary::build(&stream, 3).unwrap();
        let enc = v.encode(&line);
        assert_eq!(enc.len(), 14);
        assert_eq!(v.decode(&enc).unwrap(), line);

        let enc = v.encode(&toks("mana ṭuppu"));
        assert_eq!(enc[1], Reserved::Unknown.id());
        assert_eq!(v.decode(&enc).unwrap(), toks("mana <UNK>"));
        assert_eq!(
            v.decode(&[TokenId(v.len() as u32)]),
            Err(TokenizeError::UnknownId(v.len() as u32))
        );
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let stream = toks("a a a b b b c");
        let v = Vocabulary::build(&stream, 2).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("AKVOC1 2 13\nNAME\n"));
        let back = Vocabulary::from_file_str(&text).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.content_hash(), v.content_hash());
        assert!(Vocabulary::from_file_str("AKVOC1 2 3\na\nb\nc\n").is_err());
        assert!(Vocabulary::from_file_str(&text.replace("AKVOC1 2 13", "AKVOC1 2 14")).is_err());
    }

    #[test]
    fn token_stream_text() {
        let lines = vec![toks("NUM mana <EOS>"), toks("<EOS>")];
        let s = token_stream_to_string(&lines);
        assert_eq!(s, "NUM mana <EOS>\n<EOS>\n");
        assert_eq!(parse_token_stream(&s), lines);
    }
}
