//! Command implementations. Each command is deterministic given the config
//! and seed; artifacts land under `paths.out_dir` with `.meta.json` sidecars
//! recording the config hash and seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use kpat_core::corpus::{read_jsonl, write_jsonl, Split, Utterance};
use kpat_core::datastore::{build_datastore, BuildOptions, Datastore, DatastoreError};
use kpat_core::eval::{
    bins_tsv, build_report, compare_report, frequency_bins, EvalError, EvalReport,
};
use kpat_core::index::{AnnIndex, IndexError};
use kpat_core::knn::{InterpolationParams, KnnError, KpatDecoder};
use kpat_core::lexicon::{Lexicon, PHONE_VOCAB};
use kpat_core::model::{
    evaluate_model, ModelError, PatConfig, PatModel, TrainItem, TrainOptions, Trainer,
};
use kpat_core::sim::{build_corpus, SimError, SlotCatalog, Templates};
use kpat_core::tokenizer::Vocabulary;

use crate::config::{ArtifactMeta, ConfigError, Preset, RunConfig};

#[derive(Debug, Error)]
pub enum CmdError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    DataMismatch(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::DataMismatch(_) => 3,
            CmdError::Numeric(_) => 4,
            CmdError::Other(_) => 1,
        }
    }
}

macro_rules! impl_from_err {
    ($ty:ty) => {
        impl From<$ty> for CmdError {
            fn from(e: $ty) -> Self {
                map_error(e.to_string(), classify(&e))
            }
        }
    };
}

enum Class {
    Mismatch,
    Numeric,
    Other,
}

fn classify<E>(e: &E) -> Class
where
    E: std::fmt::Display + std::any::Any,
{
    let any = e as &dyn std::any::Any;
    if let Some(m) = any.downcast_ref::<ModelError>() {
        return match m {
            ModelError::NonFiniteLoss { .. } => Class::Numeric,
            ModelError::Tensor(kpat_core::TensorError::NonFinite { .. }) => Class::Numeric,
            _ => Class::Other,
        };
    }
    if let Some(d) = any.downcast_ref::<DatastoreError>() {
        return match d {
            DatastoreError::ChecksumMismatch
            | DatastoreError::TokenizerMismatch { .. }
            | DatastoreError::DimMismatch { .. } => Class::Mismatch,
            DatastoreError::Tensor(kpat_core::TensorError::NonFinite { .. }) => Class::Numeric,
            _ => Class::Other,
        };
    }
    if let Some(i) = any.downcast_ref::<IndexError>() {
        return match i {
            IndexError::DatastoreMismatch | IndexError::DimMismatch { .. } => Class::Mismatch,
            _ => Class::Other,
        };
    }
    if let Some(ev) = any.downcast_ref::<EvalError>() {
        return match ev {
            EvalError::CountMismatch { .. } | EvalError::TestSetMismatch(_) => Class::Mismatch,
            _ => Class::Other,
        };
    }
    if let Some(k) = any.downcast_ref::<KnnError>() {
        return match k {
            KnnError::Datastore(DatastoreError::ChecksumMismatch)
            | KnnError::Datastore(DatastoreError::TokenizerMismatch { .. })
            | KnnError::Index(IndexError::DatastoreMismatch) => Class::Mismatch,
            _ => Class::Other,
        };
    }
    Class::Other
}

fn map_error(msg: String, class: Class) -> CmdError {
    match class {
        Class::Mismatch => CmdError::DataMismatch(msg),
        Class::Numeric => CmdError::Numeric(msg),
        Class::Other => CmdError::Other(msg),
    }
}

impl_from_err!(ModelError);
impl_from_err!(DatastoreError);
impl_from_err!(IndexError);
impl_from_err!(EvalError);
impl_from_err!(KnnError);

impl From<SimError> for CmdError {
    fn from(e: SimError) -> Self {
        CmdError::Other(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Other(format!("io error: {e}"))
    }
}

impl From<kpat_core::corpus::CorpusError> for CmdError {
    fn from(e: kpat_core::corpus::CorpusError) -> Self {
        CmdError::Other(e.to_string())
    }
}

impl From<kpat_core::tokenizer::TokenizerError> for CmdError {
    fn from(e: kpat_core::tokenizer::TokenizerError) -> Self {
        CmdError::Other(e.to_string())
    }
}

impl From<kpat_core::lexicon::LexiconError> for CmdError {
    fn from(e: kpat_core::lexicon::LexiconError) -> Self {
        CmdError::Other(e.to_string())
    }
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Ctx {
    fn meta(&self, command: &str) -> ArtifactMeta {
        ArtifactMeta::new(command, &self.hash, self.cfg.seed)
    }

    fn load_lexicon(&self) -> Result<Lexicon, CmdError> {
        self.cfg
            .require_input("paths.lexicon", &self.cfg.paths.lexicon)?;
        Ok(Lexicon::load(&self.cfg.paths.lexicon)?)
    }

    fn load_vocab(&self) -> Result<Vocabulary, CmdError> {
        let path = self.cfg.vocab_path();
        self.cfg.require_input("vocab (run train first)", &path)?;
        Ok(Vocabulary::load(&path)?)
    }

    fn load_model(&self) -> Result<PatModel<f32>, CmdError> {
        let path = self.cfg.checkpoint_path();
        self.cfg
            .require_input("checkpoint (run train first)", &path)?;
        Ok(PatModel::<f32>::load(&path)?)
    }

    fn load_split(&self, split: &str) -> Result<Vec<Utterance>, CmdError> {
        let path = self.cfg.corpus_file(split);
        self.cfg.require_input("corpus (run gen-data first)", &path)?;
        Ok(read_jsonl(&path)?)
    }

    fn model_config(&self, vocab_size: usize) -> PatConfig {
        let mut cfg = match self.cfg.preset {
            Preset::Desk => PatConfig::desk(vocab_size, PHONE_VOCAB),
            Preset::Paper => PatConfig::paper(vocab_size, PHONE_VOCAB),
        };
        let o = &self.cfg.model;
        if let Some(v) = o.n_enc_layers {
            cfg.n_enc_layers = v;
        }
        if let Some(v) = o.n_dec_layers {
            cfg.n_dec_layers = v;
        }
        if let Some(v) = o.d_k {
            cfg.d_k = v;
        }
        if let Some(v) = o.n_heads {
            cfg.n_heads = v;
        }
        if let Some(v) = o.d_ff {
            cfg.d_ff = v;
        }
        if let Some(v) = o.dropout_rate {
            cfg.dropout_rate = v;
        }
        if let Some(v) = o.input_dropout_rate {
            cfg.input_dropout_rate = v;
        }
        if let Some(v) = o.clean_swap_prob {
            cfg.clean_swap_prob = v;
        }
        if let Some(v) = o.attn_temperature {
            cfg.attn_temperature = v;
        }
        if let Some(v) = o.max_len {
            cfg.max_len = v;
        }
        if let Some(v) = o.label_smoothing {
            cfg.label_smoothing = v;
        }
        cfg
    }
}

pub fn to_train_items(
    utts: &[Utterance],
    vocab: &Vocabulary,
    lexicon: &Lexicon,
) -> Vec<TrainItem> {
    utts.iter()
        .map(|u| TrainItem {
            asr: vocab.encode(&u.asr).ids,
            clean: vocab.encode(&u.reference).ids,
            phones: lexicon.phonemize(&u.asr).ids,
            target: vocab.encode(&u.reference).ids,
        })
        .collect()
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(ctx: &Ctx) -> Result<(), CmdError> {
    let cfg = &ctx.cfg;
    cfg.require_input("paths.entities_dir", &cfg.paths.entities_dir)?;
    cfg.require_input("paths.templates", &cfg.paths.templates)?;
    let lexicon = ctx.load_lexicon()?;
    let domains: Vec<&str> = cfg.gen.domains.iter().map(String::as_str).collect();
    let mut catalog = SlotCatalog::load_dir(&cfg.paths.entities_dir, &domains)?;
    let oov_catalog = catalog.split_off_oov(cfg.gen.oov_fraction);
    let templates = Templates::load(&cfg.paths.templates)?;
    let set = build_corpus(
        &catalog,
        &oov_catalog,
        &templates,
        &lexicon,
        &cfg.gen.sizes(),
        &cfg.gen.noise,
        cfg.gen.zipf_s,
        cfg.seed,
    )?;
    std::fs::create_dir_all(cfg.corpus_dir())?;
    for (split, utts) in [
        ("train", &set.train),
        ("dev", &set.dev),
        ("test", &set.test),
        ("oov", &set.oov),
    ] {
        let path = cfg.corpus_file(split);
        write_jsonl(&path, utts)?;
        ctx.meta("gen-data").write_for(&path)?;
        log::info!("wrote {} utterances to {}", utts.len(), path.display());
    }
    Ok(())
}

// ------------------------------------------------------------------- train

pub fn train(ctx: &Ctx) -> Result<(), CmdError> {
    let cfg = &ctx.cfg;
    let lexicon = ctx.load_lexicon()?;
    let train_utts = ctx.load_split("train")?;
    let dev_utts = ctx.load_split("dev")?;

    let vocab_path = cfg.vocab_path();
    let vocab = if vocab_path.exists() {
        log::info!("reusing vocabulary at {}", vocab_path.display());
        Vocabulary::load(&vocab_path)?
    } else {
        let mut lines = Vec::with_capacity(train_utts.len() * 2);
        for u in &train_utts {
            lines.push(u.reference.clone());
            lines.push(u.asr.clone());
        }
        let vocab = Vocabulary::train(&lines, cfg.vocab_size)?;
        std::fs::create_dir_all(&cfg.paths.out_dir)?;
        vocab.save(&vocab_path)?;
        ctx.meta("train").write_for(&vocab_path)?;
        log::info!("trained vocabulary of {} tokens", vocab.size());
        vocab
    };

    let model = PatModel::<f32>::new(ctx.model_config(vocab.size()), cfg.seed)?;
    let mut trainer = Trainer::new(
        model,
        TrainOptions {
            batch_size: cfg.train.batch_size,
            lr_factor: cfg.train.lr_factor,
            warmup_steps: cfg.train.warmup_steps,
            seed: cfg.seed,
        },
    );
    let items = to_train_items(&train_utts, &vocab, &lexicon);
    let dev_items: Vec<&Utterance> = dev_utts.iter().take(cfg.train.dev_eval_limit).collect();

    let mut log_lines = String::from("epoch\tloss\ttoken_acc\tdev_wer\n");
    for epoch in 0..cfg.train.epochs {
        let stats = trainer.train_epoch(&items, epoch)?;
        let dev_wer = if dev_items.is_empty() {
            f64::NAN
        } else {
            let mut counts = kpat_core::eval::WerCounts::default();
            for u in &dev_items {
                let tokens = vocab.encode(&u.asr).ids;
                let phones = lexicon.phonemize(&u.asr).ids;
                let out = trainer
                    .model()
                    .greedy_decode(&tokens, &phones, cfg.decode.max_len)?;
                counts.add(&u.reference, &vocab.decode(&out))?;
            }
            counts.rate()
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, token acc {:.4}, dev wer {:.4}",
            stats.mean_loss,
            stats.token_accuracy,
            dev_wer
        );
        log_lines.push_str(&format!(
            "{epoch}\t{:.6}\t{:.6}\t{:.6}\n",
            stats.mean_loss, stats.token_accuracy, dev_wer
        ));
        if stats.token_accuracy >= cfg.train.stop_at_accuracy {
            log::info!("stopping early at accuracy {:.4}", stats.token_accuracy);
            break;
        }
    }
    std::fs::create_dir_all(&cfg.paths.out_dir)?;
    std::fs::write(cfg.paths.out_dir.join("train_log.tsv"), log_lines)?;

    let final_eval = evaluate_model(trainer.model(), &items)?;
    log::info!(
        "final teacher-forced train accuracy {:.4}",
        final_eval.token_accuracy
    );

    let ckpt = cfg.checkpoint_path();
    trainer.model().save(&ckpt)?;
    ctx.meta("train").write_for(&ckpt)?;
    log::info!("checkpoint written to {}", ckpt.display());
    Ok(())
}

// --------------------------------------------------------- build-datastore

pub fn cmd_build_datastore(
    ctx: &Ctx,
    splits: &[String],
    domain: Option<&str>,
    output: Option<&Path>,
) -> Result<(), CmdError> {
    let cfg = &ctx.cfg;
    let lexicon = ctx.load_lexicon()?;
    let vocab = ctx.load_vocab()?;
    let model = ctx.load_model()?;
    let opts = BuildOptions {
        domain_filter: domain.map(str::to_string),
        strict_first_token: false,
    };
    let mut combined: Option<Datastore> = None;
    for split in splits {
        let utts = ctx.load_split(split)?;
        let ds = build_datastore(&model, &vocab, &lexicon, &utts, &opts)?;
        log::info!("{split}: memorized {} entries", ds.len());
        combined = Some(match combined {
            None => ds,
            Some(acc) => Datastore::merge(&acc, &ds)?,
        });
    }
    let mut ds = combined.ok_or_else(|| CmdError::Other("no splits given".into()))?;
    ds.set_meta("config_hash", serde_json::json!(ctx.hash));
    ds.set_meta("seed", serde_json::json!(cfg.seed));
    ds.set_meta("splits", serde_json::json!(splits));
    if let Some(d) = domain {
        ds.set_meta("domain_filter", serde_json::json!(d));
    }
    let tag = datastore_tag(splits, domain);
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.datastore_path(&tag));
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    ds.save(&path)?;
    ctx.meta("build-datastore").write_for(&path)?;
    log::info!("datastore of {} entries written to {}", ds.len(), path.display());
    Ok(())
}

pub fn datastore_tag(splits: &[String], domain: Option<&str>) -> String {
    let mut tag = splits.join("+");
    if let Some(d) = domain {
        tag.push('_');
        tag.push_str(d);
    }
    tag
}

// ------------------------------------------------------------- build-index

pub fn cmd_build_index(ctx: &Ctx, tag: &str, self_check: bool) -> Result<(), CmdError> {
    let cfg = &ctx.cfg;
    let ds_path = cfg.datastore_path(tag);
    cfg.require_input("datastore (run build-datastore first)", &ds_path)?;
    let ds = Datastore::load(&ds_path)?;
    let index = AnnIndex::build(
        &ds,
        cfg.index.n_centroids,
        cfg.index.train_sample,
        cfg.seed,
    )?;
    if self_check {
        let step = (ds.len() / 7).max(1);
        for i in (0..ds.len()).step_by(step) {
            let res = index.search(&ds, ds.key(i), 1, index.n_centroids())?;
            if res.0.first().map(|n| (n.entry, n.dist)) != Some((i as u64, 0.0)) {
                return Err(CmdError::Numeric(format!(
                    "self-check failed: stored key {i} not retrieved at distance 0"
                )));
            }
        }
        log::info!("self-check passed: stored keys retrieve themselves at distance 0");
    }
    let path = cfg.index_path(tag);
    index.save(&path)?;
    ctx.meta("build-index").write_for(&path)?;
    log::info!(
        "index with {} centroids over {} entries written to {}",
        index.n_centroids(),
        ds.len(),
        path.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ decode

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Pat,
    Kpat,
}

#[derive(Serialize)]
struct HypRecord<'a> {
    hyp: &'a str,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    input: &'a str,
    output: &'a str,
    per_step: &'a [kpat_core::knn::StepTrace],
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_decode(
    ctx: &Ctx,
    mode: DecodeMode,
    split: &str,
    datastore_tag: &str,
    params_override: InterpolationParams,
    trace: bool,
    output: Option<&Path>,
) -> Result<(), CmdError> {
    let cfg = &ctx.cfg;
    let lexicon = ctx.load_lexicon()?;
    let vocab = ctx.load_vocab()?;
    let model = ctx.load_model()?;
    let utts = ctx.load_split(split)?;

    let out_path = output.map(Path::to_path_buf).unwrap_or_else(|| {
        cfg.hyp_dir().join(match mode {
            DecodeMode::Pat => format!("pat_{split}.jsonl"),
            DecodeMode::Kpat => format!("kpat_{split}_{datastore_tag}.jsonl"),
        })
    });
    std::fs::create_dir_all(out_path.parent().unwrap_or(Path::new(".")))?;

    let mut hyp_file = std::io::BufWriter::new(std::fs::File::create(&out_path)?);
    let mut trace_file = if trace {
        let mut os = out_path.as_os_str().to_owned();
        os.push(".trace.jsonl");
        Some(std::io::BufWriter::new(std::fs::File::create(
            PathBuf::from(os),
        )?))
    } else {
        None
    };

    let ds;
    let index;
    let decoder = match mode {
        DecodeMode::Pat => None,
        DecodeMode::Kpat => {
            let ds_path = cfg.datastore_path(datastore_tag);
            cfg.require_input("datastore (run build-datastore first)", &ds_path)?;
            ds = Datastore::load(&ds_path)?;
            let idx_path = cfg.index_path(datastore_tag);
            index = if idx_path.exists() {
                Some(AnnIndex::load(&idx_path)?)
            } else {
                log::warn!(
                    "no index at {}; falling back to exact search",
                    idx_path.display()
                );
                None
            };
            Some(KpatDecoder::new(
                &model,
                &vocab,
                &ds,
                index.as_ref(),
                params_override,
            )?)
        }
    };

    for u in &utts {
        let tokens = vocab.encode(&u.asr).ids;
        let phones = lexicon.phonemize(&u.asr).ids;
        let (ids, steps) = match &decoder {
            None => (
                model.greedy_decode(&tokens, &phones, cfg.decode.max_len)?,
                None,
            ),
            Some(d) => d.decode(&tokens, &phones, cfg.decode.max_len, trace)?,
        };
        let text = vocab.decode(&ids);
        serde_json::to_writer(&mut hyp_file, &HypRecord { hyp: &text })
            .map_err(|e| CmdError::Other(e.to_string()))?;
        hyp_file.write_all(b"\n")?;
        if let (Some(f), Some(steps)) = (trace_file.as_mut(), steps) {
            serde_json::to_writer(
                f.by_ref(),
                &TraceRecord {
                    input: &u.asr,
                    output: &text,
                    per_step: &steps,
                },
            )
            .map_err(|e| CmdError::Other(e.to_string()))?;
            f.write_all(b"\n")?;
        }
    }
    hyp_file.flush()?;
    if let Some(mut f) = trace_file {
        f.flush()?;
    }
    ctx.meta("decode").write_for(&out_path)?;
    log::info!("wrote {} hypotheses to {}", utts.len(), out_path.display());
    Ok(())
}

pub fn read_hyps(path: &Path) -> Result<Vec<String>, CmdError> {
    #[derive(serde::Deserialize)]
    struct Rec {
        hyp: String,
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Rec = serde_json::from_str(line)
            .map_err(|e| CmdError::Other(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec.hyp);
    }
    Ok(out)
}

// -------------------------------------------------------------------- eval

pub fn cmd_eval(
    ctx: &Ctx,
    split: &str,
    hyp_path: &Path,
    baseline_path: Option<&Path>,
    name: Option<&str>,
) -> Result<(), CmdError> {
    let cfg = &ctx.cfg;
    cfg.require_input("hyp", hyp_path)?;
    let utts = ctx.load_split(split)?;
    let hyps = read_hyps(hyp_path)?;
    if hyps.len() != utts.len() {
        return Err(CmdError::DataMismatch(format!(
            "hypothesis count {} does not match {} references in split {split}",
            hyps.len(),
            utts.len()
        )));
    }
    let stem = name
        .map(str::to_string)
        .or_else(|| {
            hyp_path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
        })
        .unwrap_or_else(|| "eval".to_string());
    let mut report = build_report(&stem, &utts, &hyps)?;
    annotate(&mut report, ctx);
    std::fs::create_dir_all(cfg.reports_dir())?;
    let report_path = cfg.reports_dir().join(format!("{stem}.report.json"));
    std::fs::write(&report_path, to_pretty(&report)?)?;
    log::info!(
        "{stem}: wer {:.4}, slot recall {:.4}, slot accuracy {:.4} -> {}",
        report.wer,
        report.slot_recall,
        report.slot_accuracy,
        report_path.display()
    );

    if let Some(base_path) = baseline_path {
        cfg.require_input("baseline", base_path)?;
        let base_hyps = read_hyps(base_path)?;
        if base_hyps.len() != utts.len() {
            return Err(CmdError::DataMismatch(format!(
                "baseline count {} does not match {} references",
                base_hyps.len(),
                utts.len()
            )));
        }
        let base_stem = base_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "baseline".into());
        let mut base_report = build_report(&base_stem, &utts, &base_hyps)?;
        annotate(&mut base_report, ctx);
        let cmp = compare_report(&base_report, &report)?;
        let cmp_path = cfg.reports_dir().join(format!("{stem}.compare.json"));
        std::fs::write(&cmp_path, to_pretty(&cmp)?)?;
        log::info!(
            "werr vs {base_stem}: {:.2}% ({} -> {})",
            cmp.werr_percent,
            base_report.wer,
            report.wer
        );

        // frequency-binned breakdown needs the training corpus
        let train = ctx.load_split("train")?;
        let rows = frequency_bins(&train, &utts, &base_hyps, &hyps)?;
        let tsv_path = cfg.reports_dir().join(format!("{stem}.bins.tsv"));
        std::fs::write(&tsv_path, bins_tsv(&rows))?;
        log::info!("frequency bins written to {}", tsv_path.display());
    }
    Ok(())
}

fn annotate(report: &mut EvalReport, ctx: &Ctx) {
    report
        .meta
        .extra
        .insert("config_hash".into(), serde_json::json!(ctx.hash));
    report
        .meta
        .extra
        .insert("seed".into(), serde_json::json!(ctx.cfg.seed));
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String, CmdError> {
    serde_json::to_string_pretty(value).map_err(|e| CmdError::Other(e.to_string()))
}

pub fn split_from_str(s: &str) -> Result<Split, CmdError> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        "oov" => Ok(Split::Oov),
        other => Err(CmdError::Other(format!("unknown split {other:?}"))),
    }
}
