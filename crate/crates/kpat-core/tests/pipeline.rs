//! End-to-end pipeline at toy scale: generate a corpus, train a small
//! model, memorize decoder states, and decode with score interpolation.

use kpat_core::corpus::Utterance;
use kpat_core::datastore::{build_datastore, BuildOptions, Datastore};
use kpat_core::index::AnnIndex;
use kpat_core::knn::{InterpolationParams, KpatDecoder};
use kpat_core::lexicon::Lexicon;
use kpat_core::model::{PatConfig, PatModel, TrainItem, TrainOptions, Trainer};
use kpat_core::sim::{build_corpus, GenSizes, NoiseParams, SlotCatalog, Templates};
use kpat_core::tokenizer::Vocabulary;

const LEXICON: &str = "\
I  AY
STAY  S T EY
IN  IH N
MY  M AY
HOUSE  HH AW S
IS  IH Z
AT  AE T
LIVE  L IH V
ON  AA N
BEDFORD  B EH D F ER D
BEDWORTH  B EH D W ER TH
BELFORD  B EH L F ER D
OAKWOOD  OW K W UH D
OAKSHIRE  OW K SH AY R
ELMWOOD  EH L M W UH D
ELMHURST  EH L M HH ER S T
MAPLEWOOD  M EY P AH L W UH D
LAKEWOOD  L EY K W UH D
LAKEVIEW  L EY K V Y UW
HILLCREST  HH IH L K R EH S T
HILLSIDE  HH IH L S AY D
FAIRVIEW  F EH R V Y UW
FAIRHOPE  F EH R HH OW P
BRIARWOOD  B R AY ER W UH D
CEDARHURST  S IY D ER HH ER S T
CEDARWOOD  S IY D ER W UH D
NORWOOD  N AO R W UH D
NORFOLK  N AO R F AH K
WESTWOOD  W EH S T W UH D
WESTPORT  W EH S T P AO R T
EASTWOOD  IY S T W UH D
EASTPORT  IY S T P AO R T
KIRKWOOD  K ER K W UH D
KIRKLAND  K ER K L AH N D
GREENWOOD  G R IY N W UH D
GREENPORT  G R IY N P AO R T
ASHFORD  AE SH F ER D
ASHLAND  AE SH L AH N D
CRESTWOOD  K R EH S T W UH D
CRESTLINE  K R EH S T L AY N
";

fn fixtures() -> (Lexicon, SlotCatalog, SlotCatalog, Templates) {
    let lexicon = Lexicon::parse(LEXICON).unwrap();
    let mut catalog = SlotCatalog::default();
    catalog.domains.insert(
        "street_names".into(),
        [
            "bedford", "oakwood", "elmwood", "elmhurst", "maplewood", "lakewood", "lakeview",
            "hillcrest", "hillside", "fairview", "briarwood", "cedarhurst", "cedarwood",
            "norwood", "westwood", "eastwood", "kirkwood", "greenwood", "ashford", "crestwood",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    let mut oov = SlotCatalog::default();
    oov.domains.insert(
        "street_names".into(),
        ["belford", "fairhope", "norfolk", "westport", "kirkland"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let templates =
        Templates::parse("street_names\ti stay in {entity}\nstreet_names\tmy house is at {entity}\n")
            .unwrap();
    (lexicon, catalog, oov, templates)
}

fn to_items(utts: &[Utterance], vocab: &Vocabulary, lexicon: &Lexicon) -> Vec<TrainItem> {
    utts.iter()
        .map(|u| TrainItem {
            asr: vocab.encode(&u.asr).ids,
            clean: vocab.encode(&u.reference).ids,
            phones: lexicon.phonemize(&u.asr).ids,
            target: vocab.encode(&u.reference).ids,
        })
        .collect()
}

#[test]
fn corpus_to_knn_decode_round_trip() {
    let (lexicon, catalog, oov_catalog, templates) = fixtures();
    let sizes = GenSizes {
        train_refs: 150,
        dev_refs: 10,
        test_refs: 20,
        oov_refs: 10,
        train_variants: 2,
    };
    let noise = NoiseParams { seed: 11, ..NoiseParams::default() };
    let corpus = build_corpus(&catalog, &oov_catalog, &templates, &lexicon, &sizes, &noise, 1.1, 303).unwrap();
    assert_eq!(corpus.train.len(), 300);

    let mut lines: Vec<String> = Vec::new();
    for u in &corpus.train {
        lines.push(u.reference.clone());
        lines.push(u.asr.clone());
    }
    let vocab = Vocabulary::train(&lines, 160).unwrap();

    let cfg = PatConfig {
        d_k: 32,
        n_heads: 4,
        d_ff: 128,
        text_vocab: vocab.size(),
        phone_vocab: kpat_core::lexicon::PHONE_VOCAB,
        dropout_rate: 0.05,
        ..PatConfig::desk(vocab.size(), kpat_core::lexicon::PHONE_VOCAB)
    };
    let model = PatModel::<f32>::new(cfg, 7).unwrap();
    let mut trainer = Trainer::new(
        model,
        TrainOptions {
            batch_size: 16,
            lr_factor: 1.0,
            warmup_steps: 120,
            seed: 5,
        },
    );
    let items = to_items(&corpus.train, &vocab, &lexicon);
    let mut acc = 0.0;
    for epoch in 0..12 {
        let stats = trainer.train_epoch(&items, epoch).unwrap();
        acc = stats.token_accuracy;
    }
    assert!(acc > 0.85, "training accuracy only reached {acc}");
    let model = trainer.into_model();

    // lambda = 0 decoding is token-identical to plain greedy decoding
    let ds_train =
        build_datastore(&model, &vocab, &lexicon, &corpus.train, &BuildOptions::default()).unwrap();
    let expected_entries: usize = corpus
        .train
        .iter()
        .map(|u| vocab.encode(&u.reference).ids.len())
        .sum();
    assert_eq!(ds_train.len(), expected_entries);

    let index = AnnIndex::build(&ds_train, Some(24), usize::MAX, 99).unwrap();
    let lambda0 = InterpolationParams { lambda: 0.0, ..InterpolationParams::default() };
    let decoder = KpatDecoder::new(&model, &vocab, &ds_train, Some(&index), lambda0).unwrap();
    for u in corpus.test.iter().take(8) {
        let tokens = vocab.encode(&u.asr).ids;
        let phones = lexicon.phonemize(&u.asr).ids;
        let greedy = model.greedy_decode(&tokens, &phones, 24).unwrap();
        let (kpat, _) = decoder.decode(&tokens, &phones, 24, false).unwrap();
        assert_eq!(kpat, greedy, "lambda 0 must match greedy on {:?}", u.asr);
    }

    // single-utterance memorization: with lambda = 1 the datastore alone
    // steers decoding through the memorized target
    let probe = corpus.test[0].clone();
    let ds_one = build_datastore(
        &model,
        &vocab,
        &lexicon,
        std::slice::from_ref(&probe),
        &BuildOptions::default(),
    )
    .unwrap();
    let target = vocab.encode(&probe.reference).ids;
    assert_eq!(ds_one.len(), target.len());
    let lambda1 = InterpolationParams { lambda: 1.0, ..InterpolationParams::default() };
    let decoder1 = KpatDecoder::new(&model, &vocab, &ds_one, None, lambda1).unwrap();
    let tokens = vocab.encode(&probe.asr).ids;
    let phones = lexicon.phonemize(&probe.asr).ids;
    let (out, trace) = decoder1.decode(&tokens, &phones, target.len(), true).unwrap();
    assert_eq!(out, target, "memorized utterance not reproduced");
    let trace = trace.unwrap();
    assert_eq!(trace.len(), target.len());
    assert!(trace.iter().all(|t| t.lambda_used == 1.0));

    // exhaustive probing matches exact search inside the decoder
    let full = InterpolationParams {
        lambda: 0.5,
        nprobe: index.n_centroids(),
        ..InterpolationParams::default()
    };
    let dec_ivf = KpatDecoder::new(&model, &vocab, &ds_train, Some(&index), full).unwrap();
    let dec_exact = KpatDecoder::new(&model, &vocab, &ds_train, None, full).unwrap();
    for u in corpus.test.iter().take(6) {
        let tokens = vocab.encode(&u.asr).ids;
        let phones = lexicon.phonemize(&u.asr).ids;
        let (a, _) = dec_ivf.decode(&tokens, &phones, 24, false).unwrap();
        let (b, _) = dec_exact.decode(&tokens, &phones, 24, false).unwrap();
        assert_eq!(a, b);
    }

    // decoding is deterministic across repeat runs
    let u = &corpus.test[1];
    let tokens = vocab.encode(&u.asr).ids;
    let phones = lexicon.phonemize(&u.asr).ids;
    let (a, _) = dec_ivf.decode(&tokens, &phones, 24, false).unwrap();
    let (b, _) = dec_ivf.decode(&tokens, &phones, 24, false).unwrap();
    assert_eq!(a, b);

    // datastore file round trip preserves retrieval behavior
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("train.kpat");
    ds_train.save(&ds_path).unwrap();
    let ds_back = Datastore::load(&ds_path).unwrap();
    assert_eq!(ds_back.len(), ds_train.len());
    assert_eq!(ds_back.content_checksum(), ds_train.content_checksum());
    let idx_path = dir.path().join("train.kivf");
    index.save(&idx_path).unwrap();
    let idx_back = AnnIndex::load(&idx_path).unwrap();
    idx_back.verify(&ds_back).unwrap();
}

#[test]
fn wrong_model_checksum_is_refused() {
    let (lexicon, catalog, oov_catalog, templates) = fixtures();
    let sizes = GenSizes {
        train_refs: 4,
        dev_refs: 1,
        test_refs: 1,
        oov_refs: 1,
        train_variants: 1,
    };
    let noise = NoiseParams::default();
    let corpus = build_corpus(&catalog, &oov_catalog, &templates, &lexicon, &sizes, &noise, 1.1, 1).unwrap();
    let vocab = Vocabulary::train(corpus.train.iter().map(|u| u.reference.as_str()), 120).unwrap();
    let cfg = PatConfig {
        d_k: 32,
        n_heads: 4,
        d_ff: 64,
        ..PatConfig::desk(vocab.size(), kpat_core::lexicon::PHONE_VOCAB)
    };
    let model_a = PatModel::<f32>::new(cfg.clone(), 1).unwrap();
    let model_b = PatModel::<f32>::new(cfg, 2).unwrap();
    let ds = build_datastore(&model_a, &vocab, &lexicon, &corpus.train, &BuildOptions::default()).unwrap();
    let params = InterpolationParams::default();
    assert!(KpatDecoder::new(&model_a, &vocab, &ds, None, params).is_ok());
    assert!(KpatDecoder::new(&model_b, &vocab, &ds, None, params).is_err());
}
