mod common;

use std::fs;

use clap::Parser;
use tempfile::TempDir;

use common::{copy_artifacts, field, pipeline, small_config, TEXT};
use restore_cli::commands::{
    complete_cmd, eval_masked_cmd, eval_mcq_cmd, eval_perplexity_cmd, ingest, load_lstm, load_ngram, load_vocab, run,
    split, stats, train_lstm, train_ngram, AnyModel, Cli, Mode, ModelKind,
};
use restore_cli::{CliError, OutputFormat};
use restore_core::lm::checkpoint::CheckpointError;
use restore_core::ngram::fit_ngram_with;
use restore_core::tokenizer::{parse_token_stream, EncodedSequence, Token, TokenId, Vocabulary};

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn ingest_counts_documents_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path());
    let out = ingest(&config, Some(20), TEXT).unwrap();
    assert_eq!(field(&out, "documents"), Some("20"));
    assert_eq!(field(&out, "test_documents"), Some("2"));
    let first = read_dir_bytes(&config.paths.archive());
    assert!(first.iter().any(|(n, _)| n == "manifest.tsv"));

    let again = ingest(&config, None, TEXT).unwrap();
    assert_eq!(again, out);
    assert_eq!(read_dir_bytes(&config.paths.archive()), first);

    let s = stats(&config, TEXT).unwrap();
    assert_eq!(field(&s, "documents"), Some("20"));
    assert_eq!(field(&s, "total_words"), field(&out, "total_words"));
}

#[test]
fn ingest_without_pages_fails() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path());
    assert!(matches!(ingest(&config, None, TEXT), Err(CliError::MissingInput(..))));
    fs::create_dir_all(&config.paths.corpus_dir).unwrap();
    assert!(ingest(&config, None, TEXT).is_err());
}

#[test]
fn commands_name_their_missing_inputs() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path());
    assert!(matches!(stats(&config, TEXT), Err(CliError::MissingInput(_, "ingest"))));
    assert!(matches!(split(&config, TEXT), Err(CliError::MissingInput(_, "ingest"))));
    assert!(matches!(train_lstm(&config, TEXT), Err(CliError::MissingInput(_, "split"))));
    assert!(matches!(train_ngram(&config, TEXT), Err(CliError::MissingInput(_, "split"))));
}

#[test]
fn split_writes_vocabulary_and_streams() {
    let p = pipeline();
    let paths = &p.config.paths;
    let vocab = load_vocab(&p.config).unwrap();
    for part in ["train", "valid", "test"] {
        let lines = parse_token_stream(&fs::read_to_string(paths.tokens(part)).unwrap());
        assert!(!lines.is_empty(), "{part} is empty");
    }
    // every training token is in the vocabulary
    let train = parse_token_stream(&fs::read_to_string(paths.tokens("train")).unwrap());
    for t in train.iter().flatten() {
        assert!(vocab.id_of(t).is_some(), "{t:?} missing");
    }
    assert_eq!(vocab.id_of(&Token::new("<EOS>")), Some(TokenId(10)));
}

#[test]
fn ngram_file_reloads_to_the_same_counts() {
    let p = pipeline();
    let vocab = load_vocab(&p.config).unwrap();
    let loaded = load_ngram(&p.config, &vocab).unwrap();
    let train: Vec<EncodedSequence> =
        parse_token_stream(&fs::read_to_string(p.config.paths.tokens("train")).unwrap())
            .iter()
            .map(|l| vocab.encode(l))
            .collect();
    let s = &p.config.ngram;
    let refit = fit_ngram_with(&train, s.order, s.alpha, s.smoothing().unwrap(), vocab.len()).unwrap();
    assert_eq!(loaded.counts(), refit.counts());
    assert_eq!(loaded, refit);
}

#[test]
fn lstm_training_is_deterministic() {
    let p = pipeline();
    let dir = TempDir::new().unwrap();
    let config = copy_artifacts(dir.path());
    fs::remove_file(config.paths.lstm()).unwrap();
    let out = train_lstm(&config, TEXT).unwrap();
    assert_eq!(field(&out, "epochs"), Some("2"));
    assert_eq!(
        fs::read(config.paths.lstm()).unwrap(),
        fs::read(p.config.paths.lstm()).unwrap()
    );
}

#[test]
fn checkpoint_refuses_a_foreign_vocabulary() {
    let dir = TempDir::new().unwrap();
    let config = copy_artifacts(dir.path());
    let vocab = load_vocab(&config).unwrap();
    let extra = Token::new("zz-not-a-word");
    let tokens: Vec<Token> = (0..vocab.len() as u32)
        .filter_map(|i| vocab.token_of(TokenId(i)).cloned())
        .chain(std::iter::once(extra))
        .collect();
    let other = Vocabulary::build(tokens.iter(), 1).unwrap();
    fs::write(config.paths.vocab(), other.to_file_string()).unwrap();
    let other = load_vocab(&config).unwrap();
    assert!(matches!(
        load_lstm(&config, &other),
        Err(CliError::Checkpoint(CheckpointError::VocabMismatch))
    ));
}

#[test]
fn perplexity_report_has_both_bases() {
    let p = pipeline();
    for kind in [ModelKind::Ngram, ModelKind::Lstm] {
        let out = eval_perplexity_cmd(&p.config, kind, TEXT).unwrap();
        let nll: f64 = field(&out, "mean_nll").unwrap().parse().unwrap();
        let pe: f64 = field(&out, "perplexity_e").unwrap().parse().unwrap();
        let p2: f64 = field(&out, "perplexity_2").unwrap().parse().unwrap();
        assert!(nll > 0.0);
        assert!((pe - nll.exp()).abs() < 1e-3 * pe);
        assert!((p2 - pe).abs() < 1e-3 * pe);
    }
}

#[test]
fn masked_report_has_rank_metrics() {
    let p = pipeline();
    for (kind, mode) in [
        (ModelKind::Ngram, Mode::Start),
        (ModelKind::Ngram, Mode::Full),
        (ModelKind::Lstm, Mode::Start),
    ] {
        let out = eval_masked_cmd(&p.config, kind, mode, TEXT).unwrap();
        let n: usize = field(&out, "n_items").unwrap().parse().unwrap();
        let mrr: f64 = field(&out, "mrr").unwrap().parse().unwrap();
        let h1: f64 = field(&out, "hit@1").unwrap().parse().unwrap();
        let h10: f64 = field(&out, "hit@10").unwrap().parse().unwrap();
        assert!(n > 0);
        assert!((0.0..=1.0).contains(&mrr));
        assert!(h1 <= mrr + 1e-9 && h1 <= h10);
    }
    let machine = eval_masked_cmd(&p.config, ModelKind::Ngram, Mode::Start, OutputFormat::Machine).unwrap();
    let rows: Vec<&str> = machine.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].split('\t').any(|h| h == "mrr"));
    assert_eq!(rows[0].split('\t').count(), rows[1].split('\t').count());
}

#[test]
fn mcq_accuracy_matches_direct_scoring() {
    let p = pipeline();
    let vocab = load_vocab(&p.config).unwrap();
    let test = parse_token_stream(&fs::read_to_string(p.config.paths.tokens("test")).unwrap());
    let first = test.iter().find(|l| l.len() >= 4 && l[1].as_str() != "NUM").unwrap();
    let second = test.iter().find(|l| l.len() >= 4 && l[1] != first[1] && l[1].as_str() != "NUM").unwrap();
    let lines = [first, second];
    let words = |ts: &[Token]| ts.iter().map(Token::as_str).collect::<Vec<_>>().join(" ");
    let mut file = String::from("# left\tright\tc0\tc1\tc2\tc3\tcorrect\tl1\tl2\tl3\n\n");
    let mut questions = Vec::new();
    for (q, l) in lines.iter().enumerate() {
        let (left, right) = (&l[..1], &l[2..]);
        let choices = [
            l[1].as_str().to_string(),
            lines[1 - q][1].as_str().to_string(),
            "NUM".to_string(),
            format!("{} {}", l[1].as_str(), l[1].as_str()),
        ];
        file.push_str(&format!(
            "{}\t{}\t{}\t0\tsemantic\tsyntactic\tboth\n",
            words(left),
            words(right),
            choices.join("\t")
        ));
        questions.push((left.to_vec(), right.to_vec(), choices));
    }
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("q.tsv");
    fs::write(&path, file).unwrap();

    let vocab_ref = &vocab;
    let model = AnyModel::load(&p.config, ModelKind::Ngram, vocab_ref).unwrap();
    let expected_correct = questions
        .iter()
        .filter(|(left, right, choices)| {
            let score = |c: &str| {
                let filled: Vec<Token> = left
                    .iter()
                    .cloned()
                    .chain(c.split_whitespace().map(Token::new))
                    .chain(right.iter().cloned())
                    .collect();
                model.lm().score_sequence(&vocab_ref.encode(&filled).0)
            };
            let s: Vec<f64> = choices.iter().map(|c| score(c)).collect();
            s[1..].iter().all(|&x| s[0] > x)
        })
        .count();

    let out = eval_mcq_cmd(&p.config, ModelKind::Ngram, &path, false, TEXT).unwrap();
    assert_eq!(field(&out, "n_items"), Some("2"));
    let acc: f64 = field(&out, "accuracy").unwrap().parse().unwrap();
    assert!((acc - expected_correct as f64 / 2.0).abs() < 1e-9, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("question ")).count(), 2);

    fs::write(&path, "a\tb\tc\n").unwrap();
    assert!(matches!(
        eval_mcq_cmd(&p.config, ModelKind::Ngram, &path, false, TEXT),
        Err(CliError::Eval(_))
    ));
}

#[test]
fn complete_lists_k_candidates() {
    let p = pipeline();
    let test = parse_token_stream(&fs::read_to_string(p.config.paths.tokens("test")).unwrap());
    let l = test.iter().find(|l| l.len() >= 3).unwrap();
    let out = complete_cmd(&p.config, ModelKind::Lstm, l[0].as_str(), l[2].as_str(), Mode::Full, 5, TEXT).unwrap();
    assert_eq!(out.lines().count(), 5);
    assert!(out.starts_with("  1. "));
    let machine = complete_cmd(&p.config, ModelKind::Ngram, l[0].as_str(), "", Mode::Start, 3, OutputFormat::Machine)
        .unwrap();
    let rows: Vec<&str> = machine.lines().collect();
    assert_eq!(rows[0], "rank\ttoken\tlog_score");
    assert_eq!(rows.len(), 4);
    assert!(complete_cmd(&p.config, ModelKind::Ngram, "", "", Mode::Start, 0, TEXT).is_err());
}

#[tokio::test]
async fn command_line_parses_and_runs() {
    let p = pipeline();
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("restore.toml");
    fs::write(&cfg_path, p.config.to_toml()).unwrap();
    let cli = Cli::try_parse_from([
        "restore",
        "--config",
        cfg_path.to_str().unwrap(),
        "--format",
        "machine",
        "complete",
        "--model",
        "ngram",
        "--mode",
        "start",
        "--k",
        "3",
    ])
    .unwrap();
    let out = run(cli).await.unwrap();
    assert_eq!(out.lines().count(), 4);

    let cli = Cli::try_parse_from(["restore", "--config", cfg_path.to_str().unwrap(), "stats"]).unwrap();
    assert!(field(&run(cli).await.unwrap(), "unique_words").is_some());

    assert!(Cli::try_parse_from(["restore", "eval-masked", "--mode", "middle"]).is_err());
    fs::write(&cfg_path, "[lm]\nbogus = 1\n").unwrap();
    let cli = Cli::try_parse_from(["restore", "--config", cfg_path.to_str().unwrap(), "stats"]).unwrap();
    assert!(matches!(run(cli).await, Err(CliError::Config(_))));
}
