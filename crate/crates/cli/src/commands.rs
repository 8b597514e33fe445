use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rationale_audit::corpus::{
    coarse_pos, read_jsonl, write_jsonl, CoarsePos, Corpus, Embeddings, LexiconTagger, Sentence, Split, TAGGER_VERSION,
};
use rationale_audit::models::{load_checkpoint, save_checkpoint, train, EvalMetrics, RationaleModel, RationaleTrace};
use rationale_audit::perturbation::{
    perturbed_sentence, BertMlm, Perturbation, PerturbationManifest, Perturber, Proposer, StubProposer, WordNet,
};
use rationale_audit::stability::{
    build_report, diff_masks, pair_traces, prediction_preserving, write_report, ChangeHistogram, ChangeRecord,
    StabilityReport,
};
use rationale_audit::study::{self, StudyPair};
use rationale_audit::synthetic::{self, SyntheticSpec};
use rationale_audit::trojan::{self, CueScheme, PolarityLists};
use rationale_audit::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::*;

pub(crate) fn dispatch(command: &Command, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    m.version("tagger", TAGGER_VERSION);
    match command {
        Command::PrepareCorpus(a) => prepare_corpus(a, config, out, m),
        Command::Train(a) => train_cmd(a, config, out, m),
        Command::Eval(a) => eval(a, out, m),
        Command::Perturb(a) => perturb(a, config, out, m),
        Command::Trace(a) => trace(a, out, m),
        Command::Audit(a) => audit(a, config, out, m),
        Command::Trojan(a) => trojan_cmd(a, config, out, m),
        Command::Study(a) => study_cmd(a, config, out, m),
        Command::Score(a) => score(a, out, m),
        Command::Report(a) => report(a, out, m),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.line(), e.to_string()))
}

const EMBEDDINGS: &str = "embeddings.txt";

fn load_corpus_dir(dir: &Path, m: &mut RunManifest) -> Result<(Corpus, Embeddings)> {
    m.input(dir)?;
    let corpus = Corpus::read_cache(dir)?;
    let tokens: Vec<&str> = corpus.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
    let embeddings = Embeddings::load_for_tokens(&dir.join(EMBEDDINGS), tokens)?;
    Ok((corpus, embeddings))
}

#[derive(Serialize)]
struct CorpusStats {
    train: usize,
    validation: usize,
    test: usize,
    label_histogram: [usize; 5],
    token_types: usize,
    types_with_vectors: usize,
    dim: usize,
}

fn prepare_corpus(a: &PrepareArgs, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    let emb_path = out.join(EMBEDDINGS);
    let (corpus, embeddings) = if a.synthetic {
        let c = &config.corpus;
        let corpus = synthetic::corpus(SyntheticSpec {
            train: c.synthetic_train,
            validation: c.synthetic_validation,
            test: c.synthetic_test,
            seed: c.synthetic_seed,
        });
        let text = synthetic::embeddings_text(&synthetic::vocabulary(), c.synthetic_dim, c.synthetic_seed);
        std::fs::write(&emb_path, text).map_err(|e| Error::io(&emb_path, e))?;
        let tokens: Vec<&str> = corpus.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
        let embeddings = Embeddings::load_for_tokens(&emb_path, tokens)?;
        synthetic::write_wordnet(&out.join("wordnet"))?;
        let stub = out.join("proposals.tsv");
        std::fs::write(&stub, synthetic::proposals_tsv()).map_err(|e| Error::io(&stub, e))?;
        (corpus, embeddings)
    } else {
        let (sst, vectors) = (a.sst.as_ref().expect("clap"), a.embeddings.as_ref().expect("clap"));
        m.input(sst)?;
        m.input(vectors)?;
        let corpus = rationale_audit::corpus::load_sst(sst, LexiconTagger::bundled())?;
        let tokens: Vec<&str> = corpus.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
        let embeddings = Embeddings::load_for_tokens(vectors, tokens)?;
        (corpus, embeddings)
    };
    corpus.write_cache(out)?;
    embeddings.write_text(&emb_path)?;
    let mut types: Vec<&str> = corpus.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
    types.sort_unstable();
    types.dedup();
    let stats = CorpusStats {
        train: corpus.train.len(),
        validation: corpus.validation.len(),
        test: corpus.test.len(),
        label_histogram: corpus.label_histogram(),
        token_types: types.len(),
        types_with_vectors: types.iter().filter(|t| embeddings.vocab.get(t).is_some()).count(),
        dim: embeddings.dim(),
    };
    log::info!(
        "corpus: {}/{}/{} sentences, {} of {} token types have vectors",
        stats.train,
        stats.validation,
        stats.test,
        stats.types_with_vectors,
        stats.token_types
    );
    write_json(&out.join("stats.json"), &stats)
}

#[derive(Serialize)]
struct EvalReport {
    model: String,
    seed: u64,
    parameters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<EvalMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<EvalMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<EvalMetrics>,
}

fn train_cmd(a: &TrainArgs, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    let kind = a.model.parse()?;
    let mut tc = config.train.clone();
    tc.kind = kind;
    let (corpus, embeddings) = load_corpus_dir(&a.corpus, m)?;
    let (model, history) = train(&corpus, embeddings, tc)?;
    save_checkpoint(&model, &out.join("model.ckpt"))?;
    write_jsonl(&out.join("metrics.jsonl"), &history)?;
    let report = EvalReport {
        model: kind.to_string(),
        seed: model.seed(),
        parameters: model.num_parameters(),
        validation: Some(model.evaluate(&corpus.validation)),
        test: Some(model.evaluate(&corpus.test)),
        split: None,
        metrics: None,
    };
    write_json(&out.join("eval.json"), &report)
}

fn load_model(path: &Path, extra_vectors: Option<&Path>, words: &[&str], m: &mut RunManifest) -> Result<RationaleModel> {
    m.input(path)?;
    let mut model = load_checkpoint(path)?;
    if let Some(vectors) = extra_vectors {
        m.input(vectors)?;
        let added = model.embeddings.extend_from_file(vectors, words.iter().copied())?;
        log::info!("added vectors for {added} word forms");
    }
    Ok(model)
}

fn eval(a: &EvalArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let split: Split = a.split.parse()?;
    let model = load_model(&a.checkpoint, None, &[], m)?;
    m.input(&a.corpus)?;
    let corpus = Corpus::read_cache(&a.corpus)?;
    let traces = model.trace_all(corpus.split(split));
    write_jsonl(&out.join("traces.jsonl"), &traces)?;
    let report = EvalReport {
        model: model.kind().to_string(),
        seed: model.seed(),
        parameters: model.num_parameters(),
        validation: None,
        test: None,
        split: Some(split.name().to_string()),
        metrics: Some(EvalMetrics::from_traces(&traces)),
    };
    write_json(&out.join("eval.json"), &report)
}

fn load_proposer(spec: &str, m: &mut RunManifest) -> Result<Box<dyn Proposer>> {
    let (kind, path) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("proposer: expected `bert:<dir>` or `stub:<file>`, got `{spec}`")))?;
    let path = Path::new(path);
    let unreachable = |e: Error| Error::Config(format!("proposer {spec}: {e}"));
    let proposer: Box<dyn Proposer> = match kind {
        "bert" => Box::new(BertMlm::load(path).map_err(unreachable)?),
        "stub" => Box::new(StubProposer::from_file(path).map_err(unreachable)?),
        other => return Err(Error::Config(format!("proposer: unknown kind `{other}`"))),
    };
    m.input(path)?;
    Ok(proposer)
}

const PERTURBATIONS: &str = "perturbations.jsonl";
const PERTURBATION_MANIFEST: &str = "perturbation_manifest.json";

fn perturb(a: &PerturbArgs, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    let split: Split = a.split.parse()?;
    m.input(&a.corpus)?;
    let corpus = Corpus::read_cache(&a.corpus)?;
    let proposer = load_proposer(&a.proposer, m)?;
    m.input(&a.wordnet)?;
    let wordnet = WordNet::load(&a.wordnet)?;
    let perturber = Perturber {
        proposer: proposer.as_ref(),
        wordnet: &wordnet,
        candidates: config.perturb.candidates,
    };
    let sentences = corpus.split(split);
    let perturbations = perturber.build_dataset(sentences)?;
    log::info!("{} perturbations for {} sentences", perturbations.len(), sentences.len());
    write_jsonl(&out.join(PERTURBATIONS), &perturbations)?;
    m.version("proposer", proposer.id());
    m.version("wordnet", wordnet.version());
    write_json(
        &out.join(PERTURBATION_MANIFEST),
        &PerturbationManifest {
            split: split.name().to_string(),
            proposer: proposer.id(),
            wordnet_version: wordnet.version().to_string(),
            tagger_version: TAGGER_VERSION.to_string(),
            candidates: config.perturb.candidates,
            sentences: sentences.len(),
            perturbations: perturbations.len(),
            created: chrono::Utc::now().to_rfc3339(),
        },
    )
}

fn load_perturbations(dir: &Path, m: &mut RunManifest) -> Result<(Vec<Perturbation>, PerturbationManifest)> {
    m.input(dir)?;
    let list: Vec<Perturbation> = read_jsonl(&dir.join(PERTURBATIONS))?;
    for p in &list {
        p.validate()?;
    }
    let manifest: PerturbationManifest = read_json(&dir.join(PERTURBATION_MANIFEST))?;
    m.version("proposer", manifest.proposer.clone());
    m.version("wordnet", manifest.wordnet_version.clone());
    Ok((list, manifest))
}

/// Perturbed sentences (re-tagged) in dataset order.
fn apply_perturbations(corpus: &Corpus, perturbations: &[Perturbation]) -> Result<Vec<Sentence>> {
    let by_id: HashMap<u32, &Sentence> = corpus.iter().map(|s| (s.id, s)).collect();
    let tagger = LexiconTagger::bundled();
    perturbations
        .iter()
        .map(|p| {
            let s = by_id
                .get(&p.sentence_id)
                .ok_or_else(|| Error::Integrity(format!("perturbation refers to unknown sentence {}", p.sentence_id)))?;
            perturbed_sentence(s, p, tagger)
        })
        .collect()
}

fn trace_perturbed(model: &RationaleModel, sentences: &[Sentence]) -> Vec<RationaleTrace> {
    let mut traces = model.trace_all(sentences);
    for (i, t) in traces.iter_mut().enumerate() {
        t.perturbation = Some(i as u32);
    }
    traces
}

fn replacement_words(perturbations: &[Perturbation]) -> Vec<&str> {
    perturbations.iter().map(|p| p.replacement.as_str()).collect()
}

fn trace(a: &TraceArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let split: Split = a.split.parse()?;
    let perturbations = match &a.perturbations {
        Some(dir) => Some(load_perturbations(dir, m)?.0),
        None => None,
    };
    let words = perturbations.as_deref().map(replacement_words).unwrap_or_default();
    let model = load_model(&a.checkpoint, a.embeddings.as_deref(), &words, m)?;
    m.input(&a.corpus)?;
    let corpus = Corpus::read_cache(&a.corpus)?;
    write_jsonl(&out.join("traces.jsonl"), &model.trace_all(corpus.split(split)))?;
    if let Some(ps) = perturbations {
        let sentences = apply_perturbations(&corpus, &ps)?;
        write_jsonl(&out.join("perturbed_traces.jsonl"), &trace_perturbed(&model, &sentences))?;
    }
    Ok(())
}

fn coarse(tags: &[String]) -> Vec<CoarsePos> {
    tags.iter().map(|t| coarse_pos(t)).collect()
}

fn audit(a: &AuditArgs, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    let (perturbations, pmanifest) = load_perturbations(&a.perturbations, m)?;
    let split: Split = pmanifest.split.parse()?;
    let model = load_model(&a.checkpoint, a.embeddings.as_deref(), &replacement_words(&perturbations), m)?;
    m.input(&a.corpus)?;
    let corpus = Corpus::read_cache(&a.corpus)?;
    let sentences = corpus.split(split);
    let originals = model.trace_all(sentences);
    let perturbed_sentences = apply_perturbations(&corpus, &perturbations)?;
    let perturbed = trace_perturbed(&model, &perturbed_sentences);

    let all: Vec<RationaleTrace> = originals.iter().chain(&perturbed).cloned().collect();
    let pairs = pair_traces(&perturbations, &all)?;
    let records: Vec<ChangeRecord> = pairs
        .iter()
        .map(|p| {
            let tags = coarse(&perturbed_sentences[p.index as usize].pos);
            diff_masks(p.original, p.perturbed, p.perturbation, p.index, &tags)
        })
        .collect::<Result<_>>()?;
    let tags: Vec<Vec<CoarsePos>> = sentences.iter().map(|s| coarse(&s.pos)).collect();
    let with_tags: Vec<(&RationaleTrace, &[CoarsePos])> = originals.iter().zip(&tags).map(|(t, g)| (t, g.as_slice())).collect();
    let report = build_report(model.kind(), model.seed(), &records, &with_tags, config.audit.bucket_width);
    log::info!(
        "{}: {} perturbations, {} keep the prediction, {:.1}% without selection change",
        model.kind(),
        report.perturbations,
        report.preserved,
        report.change_percentages[0]
    );

    write_jsonl(&out.join("traces.jsonl"), &originals)?;
    write_jsonl(&out.join("perturbed_traces.jsonl"), &perturbed)?;
    write_jsonl(&out.join(PERTURBATIONS), &perturbations)?;
    write_json(&out.join(PERTURBATION_MANIFEST), &pmanifest)?;
    write_jsonl(&out.join("records.jsonl"), &records)?;
    write_report(&report, &records, &out.join("report"))
}

fn trojan_cmd(a: &TrojanArgs, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    let (corpus, embeddings) = load_corpus_dir(&a.corpus, m)?;
    let lists = match &a.polarity_words {
        Some(path) => {
            m.input(path)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            PolarityLists::from_tsv(&text)?
        }
        None => PolarityLists::bundled(),
    };
    let binary = trojan::binarize(&corpus);
    let schemes = match a.scheme {
        SchemeArg::Length => vec![CueScheme::Length],
        SchemeArg::Polarity => vec![CueScheme::Polarity],
        SchemeArg::Both => vec![CueScheme::Length, CueScheme::Polarity],
    };
    let mut reports = Vec::new();
    for scheme in schemes {
        let t = trojan::run(&binary, &embeddings, scheme, &lists, &config.trojan)?;
        log::info!(
            "{scheme}: blackbox {:.4}, pipeline {:.4}, agreement {:.4}",
            t.report.blackbox_accuracy,
            t.report.pipeline_accuracy,
            t.report.distillation_agreement
        );
        reports.push(t.report);
    }
    trojan::write_report(&reports, out)
}

fn study_cmd(a: &StudyArgs, config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    m.input(&a.audit)?;
    let perturbations: Vec<Perturbation> = read_jsonl(&a.audit.join(PERTURBATIONS))?;
    let mut traces: Vec<RationaleTrace> = read_jsonl(&a.audit.join("traces.jsonl"))?;
    traces.extend(read_jsonl::<RationaleTrace>(&a.audit.join("perturbed_traces.jsonl"))?);
    let pairs = pair_traces(&perturbations, &traces)?;
    let s = &config.study;
    match a.kind {
        StudyKind::Quality => {
            let pool: Vec<StudyPair> = pairs.iter().map(StudyPair::from_trace_pair).collect();
            let (form, key) = study::gen_quality_study(&pool, s.n_items, s.seed)?;
            study::write_quality(&form, &key, out)
        }
        StudyKind::Matching => {
            let (kept, _) = prediction_preserving(&pairs);
            let pool: Vec<StudyPair> = kept.iter().map(StudyPair::from_trace_pair).collect();
            let (form, key) = study::gen_matching_study(&pool, s.n_train, s.n_test, s.seed)?;
            study::write_matching(&form, &key, out)
        }
    }
}

fn score(a: &ScoreArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    m.input(&a.responses)?;
    m.input(&a.key)?;
    let responses = study::read_responses(&a.responses)?;
    let key: study::MatchingKey = read_json(&a.key)?;
    let score = study::score_matching(&responses, &key)?;
    log::info!(
        "{} of {} correct ({:.4}), two-sided p = {:.4}",
        score.n_correct,
        score.n_total,
        score.accuracy,
        score.p_value
    );
    write_json(&out.join("score.json"), &score)
}

fn report(a: &ReportArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let mut reports: Vec<StabilityReport> = Vec::new();
    for dir in &a.audits {
        m.input(dir)?;
        reports.push(read_json(&dir.join("report").join("report.json"))?);
    }
    let f4 = |v: f64| format!("{v:.4}");
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), f4);

    let path = out.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["model", "seed", "perturbations", "preserved", "discard_rate"];
    let bins: Vec<String> = ChangeHistogram::LABELS.iter().map(|l| format!("changes_{l}_percent")).collect();
    header.extend(bins.iter().map(String::as_str));
    header.extend(["direct_fraction", "highly_unstable_fraction", "location_p_value"]);
    w.write_record(&header)?;
    for r in &reports {
        let mut row = vec![
            r.model.to_string(),
            r.seed.to_string(),
            r.perturbations.to_string(),
            r.preserved.to_string(),
            f4(r.discard_rate),
        ];
        row.extend(r.change_percentages.iter().map(|&p| f4(p)));
        row.extend([
            opt(r.direct_fraction),
            opt(r.highly_unstable_fraction),
            opt(r.location_uniformity.p_value),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("prediction_shift.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "seed", "label", "original_percent", "perturbed_percent", "delta"])?;
    for r in &reports {
        let ps = &r.prediction_shift;
        for l in 0..ps.original.len() {
            w.write_record([
                r.model.to_string(),
                r.seed.to_string(),
                l.to_string(),
                f4(ps.original[l]),
                f4(ps.perturbed[l]),
                f4(ps.delta[l]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut s = String::from("# Audit comparison\n\n## Selection changes per prediction-preserving perturbation\n\n");
    let _ = writeln!(s, "| model | seed | {} | direct |", ChangeHistogram::LABELS.join(" | "));
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for r in &reports {
        let pct: Vec<String> = r.change_percentages.iter().map(|p| format!("{p:.1}%")).collect();
        let direct = r.direct_fraction.map_or("n/a".into(), |f| format!("{:.1}%", 100.0 * f));
        let _ = writeln!(s, "| {} | {} | {} | {direct} |", r.model, r.seed, pct.join(" | "));
    }
    let _ = writeln!(s, "\n## Predicted label distribution, change after perturbation\n");
    let _ = writeln!(s, "| model | seed | 0 | 1 | 2 | 3 | 4 |\n|---|---|---|---|---|---|---|");
    for r in &reports {
        let ps = &r.prediction_shift;
        let cells: Vec<String> = (0..ps.original.len())
            .map(|l| format!("{:.1} ({:+.1})", ps.original[l], ps.delta[l]))
            .collect();
        let _ = writeln!(s, "| {} | {} | {} |", r.model, r.seed, cells.join(" | "));
    }
    let path = out.join("summary.md");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
