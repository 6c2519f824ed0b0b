//! Transliteration ingestion.
//!
//! Saved HTML pages are reduced to lines of [`MarkedWord`]s. Everything except
//! italics and superscripts is stripped; those two carry meaning (syllabic vs.
//! logographic readings, and determinatives) and survive as word fields.
//! Damage notation is detected on the surface text and flagged per word.
//!
//! Documents are archived as plain text, one file per document, with a
//! manifest that records the train/test assignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ego_tree::NodeRef;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scraper::{Html, Node, Selector};
use thiserror::Error;

use crate::tokenizer::{Reserved, Token};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document `{0}` has no transliteration content")]
    EmptyDocument(String),
    #[error("malformed markup in `{doc_id}`: {reason}")]
    MalformedMarkup { doc_id: String, reason: String },
    #[error("test fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("invalid content selector `{0}`")]
    InvalidSelector(String),
    #[error("archive format error: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupPosition {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Superscript {
    pub text: String,
    pub position: SupPosition,
}

impl Superscript {
    pub fn before(text: impl Into<String>) -> Self {
        Superscript {
            text: text.into(),
            position: SupPosition::Before,
        }
    }

    pub fn after(text: impl Into<String>) -> Self {
        Superscript {
            text: text.into(),
            position: SupPosition::After,
        }
    }
}

/// One transliterated word with the markup that matters downstream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MarkedWord {
    /// Surface form, hyphens and brackets intact.
    pub surface: String,
    pub italic: bool,
    pub superscripts: Vec<Superscript>,
    /// Touched by break or damage notation.
    pub damage: bool,
}

impl MarkedWord {
    pub fn plain(surface: impl Into<String>) -> Self {
        MarkedWord {
            surface: surface.into(),
            italic: false,
            superscripts: Vec::new(),
            damage: false,
        }
    }

    pub fn italic(surface: impl Into<String>) -> Self {
        MarkedWord {
            italic: true,
            ..MarkedWord::plain(surface)
        }
    }

    pub fn with_sup(mut self, sup: Superscript) -> Self {
        self.superscripts.push(sup);
        self
    }

    pub fn damaged(mut self) -> Self {
        self.damage = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransliteratedDocument {
    pub doc_id: String,
    pub lines: Vec<Vec<MarkedWord>>,
    pub source_uri: String,
}

impl TransliteratedDocument {
    pub fn word_count(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }

    /// Renders the archive text form: one line per text line, superscripts as
    /// `^{..}` prefixes/suffixes and italic words wrapped in `<i>`/`</i>`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&render_line(line));
            out.push('\n');
        }
        out
    }
}

pub fn render_line(line: &[MarkedWord]) -> String {
    let words: Vec<String> = line.iter().map(render_word).collect();
    words.join(" ")
}

fn render_word(word: &MarkedWord) -> String {
    let mut s = String::new();
    for sup in word.superscripts.iter().filter(|s| s.position == SupPosition::Before) {
        s.push_str("^{");
        s.push_str(&sup.text);
        s.push('}');
    }
    if word.italic {
        s.push_str("<i>");
    }
    s.push_str(&word.surface);
    if word.italic {
        s.push_str("</i>");
    }
    for sup in word.superscripts.iter().filter(|s| s.position == SupPosition::After) {
        s.push_str("^{");
        s.push_str(&sup.text);
        s.push('}');
    }
    s
}

/// Parses one line of the archive text form back into words.
///
/// Italic spans may cover several words (`<i>šú šá</i>`); the italic state
/// resets at the end of the line.
pub fn parse_rendered_line(text: &str) -> Vec<MarkedWord> {
    let mut words = Vec::new();
    let mut italic_open = false;
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        let mut before = Vec::new();
        while let Some((sup, tail)) = take_sup_prefix(rest) {
            before.push(sup);
            rest = tail;
        }
        let mut after = Vec::new();
        while let Some((head, sup)) = take_sup_suffix(rest) {
            after.insert(0, sup);
            rest = head;
        }
        let mut italic = italic_open;
        if let Some(r) = rest.strip_prefix("<i>") {
            rest = r;
            italic = true;
            italic_open = true;
        }
        if let Some(r) = rest.strip_suffix("</i>") {
            rest = r;
            italic_open = false;
        }
        if rest.is_empty() {
            continue;
        }
        let mut word = MarkedWord {
            italic,
            ..MarkedWord::plain(rest)
        };
        word.superscripts
            .extend(before.into_iter().map(Superscript::before));
        word.superscripts.extend(after.into_iter().map(Superscript::after));
        words.push(word);
    }
    mark_damage(&mut words);
    words
}

fn take_sup_prefix(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix("^{")?;
    let end = body.find('}')?;
    let text = &body[..end];
    if text.is_empty() {
        return None;
    }
    Some((text.to_string(), &body[end + 1..]))
}

fn take_sup_suffix(s: &str) -> Option<(&str, String)> {
    let body = s.strip_suffix('}')?;
    let start = body.rfind("^{")?;
    let text = &body[start + 2..];
    if text.is_empty() || text.contains('}') {
        return None;
    }
    Some((&body[..start], text.to_string()))
}

/// Parses a whole archived document.
pub fn parse_rendered(doc_id: &str, source_uri: &str, text: &str) -> TransliteratedDocument {
    TransliteratedDocument {
        doc_id: doc_id.to_string(),
        lines: text.lines().map(parse_rendered_line).collect(),
        source_uri: source_uri.to_string(),
    }
}

// Damage notation.

const DAMAGE_OPEN: [char; 2] = ['[', '⸢'];
const DAMAGE_CLOSE: [char; 2] = [']', '⸣'];

fn is_lacuna_sign(surface: &str) -> bool {
    let core: String = surface
        .chars()
        .filter(|c| !DAMAGE_OPEN.contains(c) && !DAMAGE_CLOSE.contains(c))
        .collect();
    if core.contains("...") || core.contains('…') {
        return true;
    }
    let mut signs = core.split(['-', '.']).filter(|s| !s.is_empty()).peekable();
    signs.peek().is_some() && signs.all(|s| s == "x" || s == "x+")
}

/// Flags words touched by damage notation: any bracket character, words lying
/// inside an open bracket span, ellipses and `x` lacuna signs. Bracket state
/// does not carry across lines.
pub fn mark_damage(line: &mut [MarkedWord]) {
    let mut depth = 0usize;
    for word in line.iter_mut() {
        let mut touched = depth > 0;
        for c in word.surface.chars() {
            if DAMAGE_OPEN.contains(&c) {
                depth += 1;
                touched = true;
            } else if DAMAGE_CLOSE.contains(&c) {
                depth = depth.saturating_sub(1);
                touched = true;
            }
        }
        if touched || is_lacuna_sign(&word.surface) {
            word.damage = true;
        }
    }
}

// HTML extraction.

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    /// CSS selector for the transliteration container. When unset the whole
    /// body is used.
    pub content_selector: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Style {
    italic: bool,
    sup: bool,
}

#[derive(Debug, Default)]
struct LineCollector {
    lines: Vec<Vec<(char, Style)>>,
    current: Vec<(char, Style)>,
}

impl LineCollector {
    fn push_text(&mut self, text: &str, style: Style) {
        self.current.extend(text.chars().map(|c| (c, style)));
    }

    fn break_line(&mut self) {
        let line = std::mem::take(&mut self.current);
        if line.iter().any(|(c, _)| !c.is_whitespace()) {
            self.lines.push(line);
        }
    }
}

const SKIPPED: &[&str] = &["head", "script", "style", "noscript", "template", "title"];
const BLOCKS: &[&str] = &[
    "p", "div", "li", "tr", "td", "th", "h1", "h2", "h3", "h4", "h5", "h6", "ul", "ol", "table",
    "section", "article", "blockquote", "pre", "dd", "dt",
];

fn walk(
    node: NodeRef<'_, Node>,
    style: Style,
    out: &mut LineCollector,
    doc_id: &str,
) -> Result<(), IngestError> {
    match node.value() {
        Node::Text(text) => out.push_text(text, style),
        Node::Element(el) => {
            let name = el.name();
            if SKIPPED.contains(&name) {
                return Ok(());
            }
            if name == "br" {
                out.break_line();
                return Ok(());
            }
            let mut inner = style;
            match name {
                "i" | "em" => inner.italic = true,
                "sup" => {
                    if style.sup {
                        return Err(IngestError::MalformedMarkup {
                            doc_id: doc_id.to_string(),
                            reason: "superscript nested inside superscript".into(),
                        });
                    }
                    inner.sup = true;
                }
                _ => {}
            }
            let block = BLOCKS.contains(&name);
            if block {
                out.break_line();
            }
            for child in node.children() {
                walk(child, inner, out, doc_id)?;
            }
            if block {
                out.break_line();
            }
        }
        _ => {
            for child in node.children() {
                walk(child, style, out, doc_id)?;
            }
        }
    }
    Ok(())
}

struct Segment {
    text: String,
    italic: Vec<bool>,
    sup: bool,
}

/// Splits a styled line into whitespace-delimited chunks of same-sup segments.
fn chunks(line: &[(char, Style)]) -> Vec<Vec<Segment>> {
    let mut out: Vec<Vec<Segment>> = Vec::new();
    let mut chunk: Vec<Segment> = Vec::new();
    for &(c, style) in line {
        if c.is_whitespace() {
            if !chunk.is_empty() {
                out.push(std::mem::take(&mut chunk));
            }
            continue;
        }
        match chunk.last_mut() {
            Some(seg) if seg.sup == style.sup => {
                seg.text.push(c);
                seg.italic.push(style.italic);
            }
            _ => chunk.push(Segment {
                text: c.to_string(),
                italic: vec![style.italic],
                sup: style.sup,
            }),
        }
    }
    if !chunk.is_empty() {
        out.push(chunk);
    }
    out
}

fn words_from_line(line: &[(char, Style)]) -> Vec<MarkedWord> {
    let mut words: Vec<MarkedWord> = Vec::new();
    // Superscripts standing alone wait for the next word.
    let mut pending: Vec<String> = Vec::new();
    for chunk in chunks(line) {
        let body_start = chunk.iter().position(|s| !s.sup);
        let Some(body_start) = body_start else {
            pending.extend(chunk.into_iter().map(|s| s.text));
            continue;
        };
        let mut surface = String::new();
        let mut italic = false;
        let mut sups: Vec<Superscript> = pending.drain(..).map(Superscript::before).collect();
        for (i, seg) in chunk.into_iter().enumerate() {
            if i < body_start {
                sups.push(Superscript::before(seg.text));
            } else if seg.sup {
                // Superscripts inside or after the body attach after it.
                sups.push(Superscript::after(seg.text));
            } else {
                italic |= seg
                    .text
                    .chars()
                    .zip(&seg.italic)
                    .any(|(c, &it)| it && c.is_alphanumeric());
                surface.push_str(&seg.text);
            }
        }
        words.push(MarkedWord {
            surface,
            italic,
            superscripts: sups,
            damage: false,
        });
    }
    if let Some(last) = words.last_mut() {
        last.superscripts
            .extend(pending.drain(..).map(Superscript::after));
    }
    mark_damage(&mut words);
    words
}

/// Extracts a document from saved HTML with default options.
pub fn extract_document(html: &str, doc_id: &str) -> Result<TransliteratedDocument, IngestError> {
    extract_document_with(html, doc_id, &ExtractOptions::default())
}

pub fn extract_document_with(
    html: &str,
    doc_id: &str,
    options: &ExtractOptions,
) -> Result<TransliteratedDocument, IngestError> {
    if html.trim().is_empty() {
        return Err(IngestError::EmptyDocument(doc_id.to_string()));
    }
    let parsed = Html::parse_document(html);
    let mut collector = LineCollector::default();
    match &options.content_selector {
        Some(sel) => {
            let selector =
                Selector::parse(sel).map_err(|_| IngestError::InvalidSelector(sel.clone()))?;
            for el in parsed.select(&selector) {
                collector.break_line();
                walk(*el, Style::default(), &mut collector, doc_id)?;
                collector.break_line();
            }
        }
        None => walk(parsed.tree.root(), Style::default(), &mut collector, doc_id)?,
    }
    collector.break_line();

    let lines: Vec<Vec<MarkedWord>> = collector
        .lines
        .iter()
        .map(|l| words_from_line(l))
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(IngestError::EmptyDocument(doc_id.to_string()));
    }
    Ok(TransliteratedDocument {
        doc_id: doc_id.to_string(),
        lines,
        source_uri: String::new(),
    })
}

/// Reads every `.html` file in `dir`; the file stem is the document id.
/// Files are processed in sorted order.
pub fn extract_directory(
    dir: &Path,
    options: &ExtractOptions,
) -> Result<Vec<TransliteratedDocument>, IngestError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("html") || e.eq_ignore_ascii_case("htm"))
        })
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let doc_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let bytes = fs::read(&path)?;
        let html = String::from_utf8_lossy(&bytes);
        let mut doc = extract_document_with(&html, &doc_id, options)?;
        doc.source_uri = path.display().to_string();
        docs.push(doc);
    }
    Ok(docs)
}

// Splitting.

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<TransliteratedDocument>,
    pub test: Vec<TransliteratedDocument>,
    pub seed: u64,
    pub test_fraction: f64,
}

impl CorpusSplit {
    pub fn assignment(&self) -> BTreeMap<&str, SplitPart> {
        let mut map = BTreeMap::new();
        for d in &self.train {
            map.insert(d.doc_id.as_str(), SplitPart::Train);
        }
        for d in &self.test {
            map.insert(d.doc_id.as_str(), SplitPart::Test);
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Test,
}

impl fmt::Display for SplitPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPart::Train => "train",
            SplitPart::Test => "test",
        })
    }
}

/// Document-level split. Doc ids are sorted, shuffled with a seeded ChaCha
/// stream, and the first `round(fraction * n)` go to test. Both halves come
/// back in doc-id order.
pub fn split_corpus(
    corpus: Vec<TransliteratedDocument>,
    test_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit, IngestError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(IngestError::InvalidFraction(test_fraction));
    }
    if corpus.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for d in &corpus {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(IngestError::DuplicateDocId(d.doc_id.clone()));
        }
    }
    let mut ids: Vec<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_test = (test_fraction * corpus.len() as f64).round() as usize;
    let test_ids: HashSet<String> = ids[..n_test].iter().map(|s| s.to_string()).collect();

    let (mut test, mut train): (Vec<_>, Vec<_>) = corpus
        .into_iter()
        .partition(|d| test_ids.contains(&d.doc_id));
    train.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    test.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(CorpusSplit {
        train,
        test,
        seed,
        test_fraction,
    })
}

// Statistics.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub document_count: usize,
    pub total_word_count: usize,
    pub unique_word_count: usize,
    pub count_once: usize,
    pub count_twice: usize,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents: {}", self.document_count)?;
        writeln!(f, "total_words: {}", self.total_word_count)?;
        writeln!(f, "unique_words: {}", self.unique_word_count)?;
        writeln!(f, "words_once: {}", self.count_once)?;
        write!(f, "words_twice: {}", self.count_twice)
    }
}

/// Exact counts over a pre-`<UNK>` token stream. Structural tokens (`<i>`,
/// `</i>`, `<EOS>`) are not words and are skipped.
pub fn corpus_stats<'a>(
    corpus: &[TransliteratedDocument],
    tokens: impl IntoIterator<Item = &'a Token>,
) -> CorpusStats {
    let structural = [Reserved::ItalicOpen, Reserved::ItalicClose, Reserved::Eos];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0;
    for tok in tokens {
        if structural.iter().any(|r| r.as_str() == tok.as_str()) {
            continue;
        }
        total += 1;
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    CorpusStats {
        document_count: corpus.len(),
        total_word_count: total,
        unique_word_count: counts.len(),
        count_once: counts.values().filter(|&&c| c == 1).count(),
        count_twice: counts.values().filter(|&&c| c == 2).count(),
    }
}

// Archive.

const MANIFEST_MAGIC: &str = "AKMANIFEST1";
const MANIFEST_FILE: &str = "manifest.tsv";
const DOCS_DIR: &str = "docs";

/// Writes the corpus archive: `docs/<doc_id>.txt` plus `manifest.tsv`.
/// Output is byte-identical for identical input.
pub fn write_archive(dir: &Path, split: &CorpusSplit) -> Result<(), IngestError> {
    let docs_dir = dir.join(DOCS_DIR);
    if docs_dir.exists() {
        fs::remove_dir_all(&docs_dir)?;
    }
    fs::create_dir_all(&docs_dir)?;
    let mut manifest = format!(
        "{MANIFEST_MAGIC}\nseed\t{}\ntest_fraction\t{}\n",
        split.seed, split.test_fraction
    );
    let mut rows: Vec<(&TransliteratedDocument, SplitPart)> = split
        .train
        .iter()
        .map(|d| (d, SplitPart::Train))
        .chain(split.test.iter().map(|d| (d, SplitPart::Test)))
        .collect();
    rows.sort_by(|a, b| a.0.doc_id.cmp(&b.0.doc_id));
    for (doc, part) in rows {
        if doc.doc_id.contains(['\t', '\n', '/']) {
            return Err(IngestError::Archive(format!("unusable doc id `{}`", doc.doc_id)));
        }
        fs::write(docs_dir.join(format!("{}.txt", doc.doc_id)), doc.render())?;
        manifest.push_str(&format!("{}\t{}\t{}\n", doc.doc_id, part, doc.source_uri));
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive(dir: &Path) -> Result<CorpusSplit, IngestError> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut lines = manifest.lines();
    let bad = |what: &str| IngestError::Archive(format!("manifest: {what}"));
    if lines.next() != Some(MANIFEST_MAGIC) {
        return Err(bad("missing header"));
    }
    let mut field = |key: &str| -> Result<String, IngestError> {
        let line = lines.next().ok_or_else(|| bad("truncated"))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('\t'))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected `{key}`")))
    };
    let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
    let test_fraction: f64 = field("test_fraction")?
        .parse()
        .map_err(|_| bad("test_fraction"))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for row in lines {
        let mut cols = row.splitn(3, '\t');
        let (Some(id), Some(part)) = (cols.next(), cols.next()) else {
            return Err(bad(&format!("row `{row}`")));
        };
        let source = cols.next().unwrap_or_default();
        let text = fs::read_to_string(dir.join(DOCS_DIR).join(format!("{id}.txt")))?;
        let doc = parse_rendered(id, source, &text);
        match part {
            "train" => train.push(doc),
            "test" => test.push(doc),
            other => return Err(bad(&format!("unknown split `{other}`"))),
        }
    }
    Ok(CorpusSplit {
        train,
        test,
        seed,
        test_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(doc: &TransliteratedDocument, i: usize) -> &[MarkedWord] {
        &doc.lines[i]
    }

    #[test]
    fn extracts_italic_words() {
        let doc = extract_document("<p>2 <i>ma-na</i> kù.babbar</p>", "d1").unwrap();
        assert_eq!(doc.lines.len(), 1);
        assert_eq!(
            line(&doc, 0),
            &[
                MarkedWord::plain("2"),
                MarkedWord::italic("ma-na"),
                MarkedWord::plain("kù.babbar"),
            ]
        );
    }

    #[test]
    fn superscript_before_word() {
        let doc = extract_document("<p><sup>I</sup>ba-la-ṭu</p>", "d1").unwrap();
        assert_eq!(
            line(&doc, 0),
            &[MarkedWord::plain("ba-la-ṭu").with_sup(Superscript::before("I"))]
        );
    }

    #[test]
    fn superscript_after_word_and_detached() {
        let doc = extract_document("<p>TIN.TIR<sup>ki</sup> <sup>d</sup> AMAR.UTU</p>", "d").unwrap();
        assert_eq!(
            line(&doc, 0),
            &[
                MarkedWord::plain("TIN.TIR").with_sup(Superscript::after("ki")),
                MarkedWord::plain("AMAR.UTU").with_sup(Superscript::before("d")),
            ]
        );
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            extract_document("", "x"),
            Err(IngestError::EmptyDocument(_))
        ));
        assert!(matches!(
            extract_document("<html><head><title>t</title></head><body> </body></html>", "x"),
            Err(IngestError::EmptyDocument(_))
        ));
    }

    #[test]
    fn nested_superscripts_are_malformed() {
        let err = extract_document("<p>a<sup>b<sup>c</sup></sup></p>", "x").unwrap_err();
        assert!(matches!(err, IngestError::MalformedMarkup { .. }));
    }

    #[test]
    fn line_breaks_and_paragraphs_delimit_lines() {
        let html = "<div>a-na<br>ina <b>muḫ</b>-ḫi<p>x</p></div><script>var a = 1;</script>";
        let doc = extract_document(html, "d").unwrap();
        let rendered: Vec<String> = doc.lines.iter().map(|l| render_line(l)).collect();
        assert_eq!(rendered, vec!["a-na", "ina muḫ-ḫi", "x"]);
    }

    #[test]
    fn unclosed_tags_recover() {
        let doc = extract_document("<p><i>a-na <p>šá", "d").unwrap();
        assert_eq!(doc.lines.len(), 2);
        assert!(doc.lines[0][0].italic);
    }

    #[test]
    fn content_selector_limits_extraction() {
        let html = r#"<body><nav>Home Menu</nav><div class="translit"><p>a-na</p></div></body>"#;
        let opts = ExtractOptions {
            content_selector: Some("div.translit".into()),
        };
        let doc = extract_document_with(html, "d", &opts).unwrap();
        assert_eq!(doc.lines, vec![vec![MarkedWord::plain("a-na")]]);
    }

    #[test]
    fn damage_marks() {
        let mut words: Vec<MarkedWord> = ["a-na", "[x", "šá", "x]", "ina", "⸢ki⸣", "...", "x-x", "šu"]
            .iter()
            .map(|s| MarkedWord::plain(*s))
            .collect();
        mark_damage(&mut words);
        let flags: Vec<bool> = words.iter().map(|w| w.damage).collect();
        assert_eq!(
            flags,
            vec![false, true, true, true, false, true, true, true, false]
        );
    }

    #[test]
    fn rendered_form_round_trips() {
        let html = "<p>2 <i>ma-na</i> <sup>I</sup>ba-la-ṭu URU<sup>ki</sup> [x x] <i>šú šá</i></p><p>a</p>";
        let doc = extract_document(html, "d").unwrap();
        let again = parse_rendered("d", "", &doc.render());
        assert_eq!(doc, again);
        assert_eq!(again.render(), doc.render());
    }

    fn docs(n: usize) -> Vec<TransliteratedDocument> {
        (0..n)
            .map(|i| TransliteratedDocument {
                doc_id: format!("doc{i:03}"),
                lines: vec![vec![MarkedWord::plain("a")]],
                source_uri: String::new(),
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_corpus(docs(10), 0.1, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (9, 1));
        let s = split_corpus(docs(10), 0.0, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (10, 0));
        let s = split_corpus(docs(10), 1.0, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (0, 10));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_corpus(docs(50), 0.2, 7).unwrap();
        let b = split_corpus(docs(50), 0.2, 7).unwrap();
        assert_eq!(a, b);
        let c = split_corpus(docs(50), 0.2, 8).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(
            split_corpus(docs(3), 1.5, 0),
            Err(IngestError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_corpus(docs(3), -0.1, 0),
            Err(IngestError::InvalidFraction(_))
        ));
        assert!(matches!(split_corpus(vec![], 0.1, 0), Err(IngestError::EmptyCorpus)));
        let mut d = docs(2);
        d[1].doc_id = d[0].doc_id.clone();
        assert!(matches!(
            split_corpus(d, 0.5, 0),
            Err(IngestError::DuplicateDocId(_))
        ));
    }

    #[test]
    fn stats_hand_count() {
        let toks: Vec<Token> = ["a", "b", "a", "c", "<EOS>"].iter().map(|s| Token::new(*s)).collect();
        let s = corpus_stats(&docs(1), &toks);
        assert_eq!(s.total_word_count, 4);
        assert_eq!(s.unique_word_count, 3);
        assert_eq!(s.count_once, 2);
        assert_eq!(s.count_twice, 1);
        assert_eq!(corpus_stats(&[], &[]), CorpusStats::default());
    }

    #[test]
    fn archive_round_trip() {
        let dir = std::env::temp_dir().join(format!("restore-archive-{}", std::process::id()));
        let html = "<p>2 <i>ma-na</i> <sup>I</sup>ba-la-ṭu</p>";
        let mut corpus = Vec::new();
        for i in 0..4 {
            corpus.push(extract_document(html, &format!("t{i}")).unwrap());
        }
        let split = split_corpus(corpus, 0.25, 1).unwrap();
        write_archive(&dir, &split).unwrap();
        let back = read_archive(&dir).unwrap();
        assert_eq!(back, split);
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec![
            "a-na", "šá", "ma-na", "kù.babbar", "2", "[x", "x]", "ṭu", "DUMU", "...", "1/2",
        ])
        .prop_map(str::to_string)
    }

    fn html_line() -> impl Strategy<Value = String> {
        prop::collection::vec((word(), 0u8..4), 1..8).prop_map(|ws| {
            let parts: Vec<String> = ws
                .into_iter()
                .map(|(w, style)| match style {
                    0 => w,
                    1 => format!("<i>{w}</i>"),
                    2 => format!("<sup>I</sup>{w}"),
                    _ => format!("{w}<sup>ki</sup>"),
                })
                .collect();
            format!("<p>{}</p>", parts.join(" "))
        })
    }

    fn corpus() -> impl Strategy<Value = Vec<TransliteratedDocument>> {
        (1usize..40).prop_map(|n| {
            (0..n)
                .map(|i| TransliteratedDocument {
                    doc_id: format!("d{i}"),
                    lines: vec![vec![MarkedWord::plain("a")]],
                    source_uri: String::new(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn extraction_is_stable_under_render(lines in prop::collection::vec(html_line(), 1..5)) {
            let html = lines.concat();
            let doc = extract_document(&html, "p").unwrap();
            let again = parse_rendered("p", "", &doc.render());
            prop_assert_eq!(&doc, &again);
        }

        #[test]
        fn split_partitions(corpus in corpus(), frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let n = corpus.len();
            let ids: HashSet<String> = corpus.iter().map(|d| d.doc_id.clone()).collect();
            let s = split_corpus(corpus, frac, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.test.len(), n);
            prop_assert_eq!(s.test.len(), (frac * n as f64).round() as usize);
            let train: HashSet<String> = s.train.iter().map(|d| d.doc_id.clone()).collect();
            let test: HashSet<String> = s.test.iter().map(|d| d.doc_id.clone()).collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(&train | &test, ids);
        }

        #[test]
        fn stats_totals_add(a in prop::collection::vec("[a-d]", 0..30), b in prop::collection::vec("[a-d]", 0..30)) {
            let ta: Vec<Token> = a.iter().map(|s| Token::new(s.as_str())).collect();
            let tb: Vec<Token> = b.iter().map(|s| Token::new(s.as_str())).collect();
            let both: Vec<Token> = ta.iter().chain(&tb).cloned().collect();
            let sa = corpus_stats(&[], &ta);
            let sb = corpus_stats(&[], &tb);
            let sab = corpus_stats(&[], &both);
            prop_assert_eq!(sab.total_word_count, sa.total_word_count + sb.total_word_count);
            prop_assert!(sab.count_once + sab.count_twice <= sab.unique_word_count);
        }
    }
}
