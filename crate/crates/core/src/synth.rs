//! Seeded generator of template-based "archival" documents, for exercising
//! the pipeline without a scraped corpus.
//!
//! Each record line reads
//! `HEAD amount UNIT ša VERB MARKER OBJECT name [place] month day MU year`.
//! The theme fixes the head, unit, verb family and objects; the marker after
//! the verb picks the verb within its family. The fifth word is therefore
//! predictable from the theme (several words back) and pinned down by the
//! word after it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{MarkedWord, Superscript, TransliteratedDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub documents: usize,
    pub lines_per_document: usize,
    pub themes: usize,
    /// Chance that a line carries one damaged word.
    pub damage_rate: f64,
}

impl Default for SynthConfig {
    /// About 50k tokens.
    fn default() -> Self {
        SynthConfig {
            seed: 2024,
            documents: 360,
            lines_per_document: 10,
            themes: 6,
            damage_rate: 0.08,
        }
    }
}

const SYLLABLES: [&str; 24] = [
    "ba", "la", "ṭu", "šu", "ma", "na", "ki", "ru", "ip", "pi", "am", "nu", "tu", "il", "qa", "di",
    "zu", "ra", "ga", "ri", "ha", "ṣa", "bi", "mu",
];
const LOGO_SIGNS: [&str; 12] = [
    "KÙ", "BABBAR", "ŠE", "BAR", "ZÚ", "LUM", "UDU", "NÍTA", "GADA", "SÍG", "GIŠ", "KAŠ",
];
const MARKERS: [&str; 3] = ["ina", "ana", "itti"];

struct Lexicon {
    heads: Vec<String>,
    units: Vec<[String; 2]>,
    verbs: Vec<[String; 3]>,
    objects: Vec<Vec<String>>,
    fillers: Vec<String>,
    names: Vec<String>,
    women: Vec<String>,
    places: Vec<String>,
    months: Vec<String>,
}

fn fresh(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, make: impl Fn(&mut ChaCha8Rng) -> String) -> String {
    loop {
        let w = make(rng);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn syllabic(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let parts: Vec<&str> = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    parts.join("-")
}

fn logogram(rng: &mut ChaCha8Rng) -> String {
    let a = LOGO_SIGNS.choose(rng).expect("non-empty");
    let b = LOGO_SIGNS.choose(rng).expect("non-empty");
    format!("{a}.{b}")
}

impl Lexicon {
    fn new(rng: &mut ChaCha8Rng, themes: usize) -> Self {
        let mut used: BTreeSet<String> = ["ša", "MU"].iter().map(|s| s.to_string()).collect();
        used.extend(MARKERS.iter().map(|s| s.to_string()));
        let mut syl = |rng: &mut ChaCha8Rng, min, max| fresh(rng, &mut used, |r| syllabic(r, min, max));
        let verbs = (0..themes)
            .map(|_| std::array::from_fn(|_| syl(rng, 2, 3)))
            .collect();
        let objects = (0..themes).map(|_| (0..4).map(|_| syl(rng, 2, 3)).collect()).collect();
        let fillers = (0..20).map(|_| syl(rng, 1, 3)).collect();
        let names = (0..40).map(|_| syl(rng, 2, 4)).collect();
        let women = (0..10).map(|_| syl(rng, 2, 4)).collect();
        let places = (0..10).map(|_| syl(rng, 2, 3)).collect();
        let months = (0..12).map(|_| syl(rng, 1, 2)).collect();
        let mut logos = BTreeSet::new();
        let mut logo = |rng: &mut ChaCha8Rng| fresh(rng, &mut logos, logogram);
        let heads = (0..themes).map(|_| logo(rng)).collect();
        let unit_pool: Vec<String> = (0..themes.div_ceil(2) + 1).map(|_| logo(rng)).collect();
        let units = (0..themes)
            .map(|t| [unit_pool[t / 2].clone(), unit_pool[t / 2 + 1].clone()])
            .collect();
        Lexicon {
            heads,
            units,
            verbs,
            objects,
            fillers,
            names,
            women,
            places,
            months,
        }
    }
}

fn amount(rng: &mut ChaCha8Rng) -> MarkedWord {
    let n = if rng.gen_bool(0.2) {
        ["1/2", "1/3", "2/3"].choose(rng).expect("non-empty").to_string()
    } else {
        rng.gen_range(1..=60).to_string()
    };
    MarkedWord::plain(n)
}

fn person(rng: &mut ChaCha8Rng, lex: &Lexicon) -> MarkedWord {
    if rng.gen_bool(0.15) {
        MarkedWord::plain(lex.women.choose(rng).expect("non-empty").clone()).with_sup(Superscript::before("f"))
    } else {
        MarkedWord::plain(lex.names.choose(rng).expect("non-empty").clone()).with_sup(Superscript::before("I"))
    }
}

fn record_line(rng: &mut ChaCha8Rng, lex: &Lexicon) -> Vec<MarkedWord> {
    let t = rng.gen_range(0..lex.heads.len());
    let v = rng.gen_range(0..MARKERS.len());
    let pick = |rng: &mut ChaCha8Rng, xs: &[String]| xs.choose(rng).expect("non-empty").clone();
    let mut line = vec![
        MarkedWord::plain(lex.heads[t].clone()),
        amount(rng),
        MarkedWord::plain(lex.units[t][rng.gen_range(0..2)].clone()),
        MarkedWord::italic("ša"),
        MarkedWord::italic(lex.verbs[t][v].clone()),
        MarkedWord::italic(MARKERS[v]),
        MarkedWord::italic(pick(rng, &lex.objects[t])),
    ];
    if rng.gen_bool(0.3) {
        line.push(MarkedWord::italic(pick(rng, &lex.fillers)));
    }
    line.push(person(rng, lex));
    if rng.gen_bool(0.5) {
        line.push(MarkedWord::plain(pick(rng, &lex.places)).with_sup(Superscript::after("ki")));
    }
    line.push(MarkedWord::plain(pick(rng, &lex.months)).with_sup(Superscript::before("iti")));
    line.push(MarkedWord::plain(rng.gen_range(1..=30).to_string()));
    line.push(MarkedWord::plain("MU"));
    line.push(MarkedWord::plain(rng.gen_range(1..=40).to_string()));
    line
}

fn witness_line(rng: &mut ChaCha8Rng, lex: &Lexicon) -> Vec<MarkedWord> {
    vec![
        MarkedWord::plain("IGI"),
        person(rng, lex),
        MarkedWord::plain("A"),
        person(rng, lex),
    ]
}

/// Deterministic for a given config.
pub fn generate(config: &SynthConfig) -> Vec<TransliteratedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lex = Lexicon::new(&mut rng, config.themes.max(1));
    (0..config.documents)
        .map(|d| {
            let lines = (0..config.lines_per_document)
                .map(|_| {
                    let mut line = if rng.gen_bool(0.15) {
                        witness_line(&mut rng, &lex)
                    } else {
                        record_line(&mut rng, &lex)
                    };
                    if rng.gen_bool(config.damage_rate) {
                        let i = rng.gen_range(1..line.len());
                        let w = &mut line[i];
                        w.surface = format!("{}-[x]", w.surface);
                        w.superscripts.clear();
                        w.damage = true;
                    }
                    line
                })
                .collect();
            TransliteratedDocument {
                doc_id: format!("synth-{d:04}"),
                lines,
                source_uri: format!("synthetic://{}/{d}", config.seed),
            }
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// An HTML page in the shape the extractor expects: one `<p>` per line,
/// `<i>` for italics and `<sup>` for determinatives.
pub fn to_html(doc: &TransliteratedDocument) -> String {
    let mut s = format!(
        "<!DOCTYPE html>\n<html><head><title>{}</title></head><body>\n<div class=\"translit\">\n",
        escape(&doc.doc_id)
    );
    for line in &doc.lines {
        s.push_str("<p>");
        let words: Vec<String> = line
            .iter()
            .map(|w| {
                let mut out = String::new();
                for sup in w.superscripts.iter().filter(|s| s.position == crate::ingest::SupPosition::Before) {
                    let _ = write!(out, "<sup>{}</sup>", escape(&sup.text));
                }
                if w.italic {
                    let _ = write!(out, "<i>{}</i>", escape(&w.surface));
                } else {
                    out.push_str(&escape(&w.surface));
                }
                for sup in w.superscripts.iter().filter(|s| s.position == crate::ingest::SupPosition::After) {
                    let _ = write!(out, "<sup>{}</sup>", escape(&sup.text));
                }
                out
            })
            .collect();
        s.push_str(&words.join(" "));
        s.push_str("</p>\n");
    }
    s.push_str("</div>\n</body></html>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_document_with, ExtractOptions};
    use crate::tokenizer::{tokenize_document, TokenizerOptions};

    fn small() -> SynthConfig {
        SynthConfig {
            documents: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()), generate(&small()));
        assert_ne!(
            generate(&small()),
            generate(&SynthConfig {
                seed: 1,
                ..small()
            })
        );
    }

    #[test]
    fn default_size_is_about_fifty_thousand_tokens() {
        let docs = generate(&SynthConfig::default());
        let opts = TokenizerOptions::default();
        let n: usize = docs
            .iter()
            .flat_map(|d| tokenize_document(d, &opts))
            .map(|l| l.len())
            .sum();
        assert!((40_000..60_000).contains(&n), "{n}");
    }

    #[test]
    fn html_extracts_back_to_the_same_lines() {
        let opts = ExtractOptions {
            content_selector: Some("div.translit".into()),
        };
        for doc in generate(&small()) {
            let back = extract_document_with(&to_html(&doc), &doc.doc_id, &opts).unwrap();
            assert_eq!(back.lines, doc.lines, "{}", doc.doc_id);
        }
    }

    #[test]
    fn fifth_word_follows_the_theme() {
        let docs = generate(&small());
        let opts = TokenizerOptions::default();
        let mut seen = std::collections::BTreeMap::new();
        for line in docs.iter().flat_map(|d| tokenize_document(d, &opts)) {
            let words: Vec<&str> = line
                .iter()
                .map(|t| t.as_str())
                .filter(|t| !matches!(*t, "<i>" | "</i>" | "<EOS>"))
                .collect();
            if words.len() >= 10 && !words.contains(&"<BRK>") {
                let key = (words[0].to_string(), words[5].to_string());
                let fifth = words[4].to_string();
                assert_eq!(*seen.entry(key).or_insert_with(|| fifth.clone()), fifth);
            }
        }
        assert!(seen.len() > 6);
    }
}
