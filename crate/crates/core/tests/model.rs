use proptest::prelude::*;
use rand::SeedableRng;

use metatag_core::data::{build_vocabs, EncodedSentence, Sentence, Task, Vocabs};
use metatag_core::encoders::{GatherPoint, GatherStrategy};
use metatag_core::meta::{MetaDropout, MetaParams};
use metatag_core::model::{sentence_loss, Part, TaggerModel};
use metatag_core::nn::{GaussianScale, ModelRng, Phase};
use metatag_core::tensor::{Graph, Init, ParamStore, Tensor};
use metatag_core::training::{joint_loss, part_loss, CharModel, TrainConfig};
use metatag_core::Error;

fn corpus() -> Vec<Sentence> {
    vec![
        Sentence::from_tagged(&[("the", "DT"), ("dog", "NN"), ("barks", "VBZ")], Task::Xpos),
        Sentence::from_tagged(&[("a", "DT"), ("cat", "NN"), ("sleeps", "VBZ"), ("here", "RB")], Task::Xpos),
        Sentence::from_tagged(&[("x", "SYM"), ("y", "SYM"), ("z", "SYM")], Task::Xpos),
    ]
}

fn small_config(char_model: CharModel) -> TrainConfig {
    let mut c = TrainConfig::default().scaled(6);
    c.model.char_lstm_layers = 2;
    c.model.word_lstm_layers = 1;
    c.model.char_model = char_model;
    c
}

fn build(config: TrainConfig) -> (TaggerModel, Vec<EncodedSentence>) {
    let corpus = corpus();
    let vocabs = build_vocabs(&corpus, Task::Xpos, 1, false).unwrap();
    let data = vocabs.encode_all(&corpus).unwrap();
    (TaggerModel::new(config, vocabs, None).unwrap(), data)
}

fn encode(vocabs: &Vocabs, words: &[&str]) -> EncodedSentence {
    let pairs: Vec<(&str, &str)> = words.iter().map(|w| (*w, "NN")).collect();
    vocabs.encode(&Sentence::from_tagged(&pairs, Task::Xpos)).unwrap()
}

fn char_reps(model: &TaggerModel, s: &EncodedSentence) -> Tensor {
    let mut g = Graph::with_params(&model.store);
    let out = model.encode_char(&mut g, s, &mut Phase::infer()).unwrap();
    g.value(out.reps).clone()
}

#[test]
fn sentence_model_sees_context_token_model_does_not() {
    for (model_kind, context_sensitive) in [(CharModel::Sentence, true), (CharModel::Token, false)] {
        let (model, _) = build(small_config(model_kind));
        let a = char_reps(&model, &encode(&model.vocabs, &["the", "dog", "barks"]));
        let b = char_reps(&model, &encode(&model.vocabs, &["the", "dog", "sleeps"]));
        let same = a.row_slice(1) == b.row_slice(1);
        assert_eq!(same, !context_sensitive, "{model_kind}");
        assert_eq!(a.row_slice(0) == b.row_slice(0), !context_sensitive, "{model_kind}");
    }
}

#[test]
fn single_character_tokens_make_first_and_last_coincide() {
    let mut reps = Vec::new();
    for points in [[GatherPoint::FFirst, GatherPoint::BFirst], [GatherPoint::FLast, GatherPoint::BLast]] {
        let mut c = small_config(CharModel::Sentence);
        c.model.gather = GatherStrategy::new(&points).unwrap();
        let (model, data) = build(c);
        let mut g = Graph::with_params(&model.store);
        let out = model.encode_char(&mut g, &data[2], &mut Phase::infer()).unwrap();
        reps.push((g.value(out.reps).clone(), g.value(out.logits).clone()));
        // multi-character tokens do distinguish the strategies
        let out = model.encode_char(&mut g, &data[0], &mut Phase::infer()).unwrap();
        reps.push((g.value(out.reps).clone(), g.value(out.logits).clone()));
    }
    assert_eq!(reps[0], reps[2]);
    assert_ne!(reps[1].0, reps[3].0);
}

#[test]
fn gather_order_does_not_matter() {
    let a = GatherStrategy::new(&[GatherPoint::BLast, GatherPoint::FFirst]).unwrap();
    let b = GatherStrategy::new(&[GatherPoint::FFirst, GatherPoint::BLast, GatherPoint::FFirst]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_string(), "f-first+b-last");
    assert_eq!("b-last,f-first".parse::<GatherStrategy>().unwrap(), a);
    assert!(GatherStrategy::new(&[]).is_err());
    assert_eq!(GatherStrategy::all().len(), 4);
    assert_eq!(GatherStrategy::ablation_set().len(), 4);
}

#[test]
fn shapes_follow_the_configuration() {
    let (model, data) = build(small_config(CharModel::Sentence));
    let s = &data[1];
    let mut g = Graph::with_params(&model.store);
    let out = model.forward(&mut g, s, &mut Phase::infer(), false, true).unwrap();
    let tags = model.vocabs.tags.len();
    assert_eq!(g.shape(out.char.reps), &[4, 4 * 6]);
    assert_eq!(g.shape(out.char.features), &[4, 6]);
    assert_eq!(g.shape(out.word.reps), &[4, 2 * 6]);
    assert_eq!(g.shape(out.meta.combined), &[4, 6]);
    for l in [out.char.logits, out.word.logits, out.meta.logits] {
        assert_eq!(g.shape(l), &[4, tags]);
    }
    assert_eq!(model.meta.input_size(), 12);
}

#[test]
fn paper_sized_meta_input_is_1600_wide_char_input_800() {
    // |g| = 4 * 400 for the char MLP input, |o| = 2 * 400 for the word MLP input
    let mut rng = ModelRng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let char = metatag_core::encoders::CharSentEncoderParams::new(
        &mut store,
        5,
        100,
        Init::Zeros,
        400,
        1,
        400,
        GaussianScale::FanIn,
        GatherStrategy::all(),
        3,
        &mut rng,
    )
    .unwrap();
    assert_eq!(store.value(char.mlp.w).shape(), &[1600, 400]);
    let meta = MetaParams::new(&mut store, 400, 400, 400, 1, 400, GaussianScale::FanIn, 3, &mut rng).unwrap();
    assert_eq!(meta.input_size(), 800);
    assert_eq!(store.value(meta.mlp.w).shape(), &[800, 400]);
}

#[test]
fn pretrained_embeddings_get_no_update_and_words_start_at_zero() {
    let (model, data) = build(small_config(CharModel::Sentence));
    let mut g = Graph::with_params(&model.store);
    let loss = part_loss(&mut g, &model, &data[0], Part::Word, &mut Phase::train_seeded(1))
        .unwrap()
        .unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.param(model.word.pretrained).is_none());
    assert!(!model.param_ids(Part::Word).contains(&model.word.pretrained));
    // default init: learned word embeddings zero and no pretrained file, so the word input is 0
    let mut g = Graph::with_params(&model.store);
    let e = metatag_core::nn::embedding_lookup(&mut g, model.word.embeddings, &data[0].word_ids).unwrap();
    assert!(g.value(e).data().iter().all(|&v| v == 0.0));
}

fn grad_mass(model: &TaggerModel, loss: impl FnOnce(&mut Graph<'_>) -> metatag_core::tensor::Var) -> [f64; 3] {
    let mut store = model.store.clone();
    let grads = {
        let mut g = Graph::with_params(&model.store);
        let l = loss(&mut g);
        g.backward(l).unwrap()
    };
    store.zero_grad();
    store.accumulate(&grads);
    Part::ALL.map(|p| store.grad_l1(&model.param_ids(p)))
}

#[test]
fn meta_loss_is_isolated_from_encoders_unless_joint() {
    let (model, data) = build(small_config(CharModel::Sentence));
    let s = &data[1];
    let meta = grad_mass(&model, |g| {
        part_loss(g, &model, s, Part::Meta, &mut Phase::train_seeded(3)).unwrap().unwrap()
    });
    assert_eq!(meta[0], 0.0);
    assert_eq!(meta[1], 0.0);
    assert!(meta[2] > 0.0);
    let char = grad_mass(&model, |g| {
        part_loss(g, &model, s, Part::Char, &mut Phase::train_seeded(3)).unwrap().unwrap()
    });
    assert!(char[0] > 0.0 && char[1] == 0.0 && char[2] == 0.0);
    let word = grad_mass(&model, |g| {
        part_loss(g, &model, s, Part::Word, &mut Phase::train_seeded(3)).unwrap().unwrap()
    });
    assert!(word[0] == 0.0 && word[1] > 0.0 && word[2] == 0.0);

    // the meta loss alone, not detached, does reach the encoders
    let meta_joint = grad_mass(&model, |g| {
        let out = model.forward(g, s, &mut Phase::train_seeded(3), true, false).unwrap();
        sentence_loss(g, out.meta.logits, s).unwrap().unwrap()
    });
    assert!(meta_joint.iter().all(|&m| m > 0.0), "{meta_joint:?}");
    let joint = grad_mass(&model, |g| joint_loss(g, &model, s, &mut Phase::train_seeded(3)).unwrap().unwrap());
    assert!(joint.iter().all(|&m| m > 0.0));
}

#[test]
fn meta_rejects_mismatched_lengths_and_handles_one_token() {
    let mut rng = ModelRng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let meta = MetaParams::new(&mut store, 3, 2, 4, 1, 5, GaussianScale::Unit, 6, &mut rng).unwrap();
    let mut g = Graph::with_params(&store);
    let c = g.constant(Tensor::zeros(&[2, 3]));
    let w = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(
        meta.combine(&mut g, c, w, true, MetaDropout::NONE, &mut Phase::infer()),
        Err(Error::InvalidArgument(_))
    ));
    let c = g.constant(Tensor::row(vec![0.1, 0.2, 0.3]));
    let w = g.constant(Tensor::row(vec![-1.0, 1.0]));
    let out = meta.combine(&mut g, c, w, true, MetaDropout::NONE, &mut Phase::infer()).unwrap();
    assert_eq!(g.shape(out.logits), &[1, 6]);
    assert_eq!(g.shape(out.combined), &[1, 5]);
}

#[test]
fn empty_sentence_is_rejected() {
    let (model, _) = build(small_config(CharModel::Token));
    let empty = EncodedSentence {
        word_ids: vec![],
        char_ids: vec![],
        spans: vec![],
        tags: vec![],
    };
    assert!(model.predict_all(&empty).is_err());
}

#[test]
fn same_seed_same_model() {
    let (a, data) = build(small_config(CharModel::Sentence));
    let (b, _) = build(small_config(CharModel::Sentence));
    assert_eq!(
        a.store.iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>(),
        b.store.iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>()
    );
    assert_eq!(a.predict_all(&data[0]).unwrap(), b.predict_all(&data[0]).unwrap());
    let mut c = small_config(CharModel::Sentence);
    c.seed = 2;
    let (c, _) = build(c);
    assert_ne!(a.store.value(a.word.mlp.w), c.store.value(c.word.mlp.w));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn one_output_row_per_token(words in prop::collection::vec("[a-z]{1,5}", 1..6), token_model in any::<bool>()) {
        let kind = if token_model { CharModel::Token } else { CharModel::Sentence };
        let (model, _) = build(small_config(kind));
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let s = encode(&model.vocabs, &refs);
        let preds = model.predict_all(&s).unwrap();
        for p in &preds {
            prop_assert_eq!(p.len(), words.len());
            prop_assert!(p.iter().all(|&t| t < model.vocabs.tags.len()));
        }
        prop_assert_eq!(char_reps(&model, &s).rows(), words.len());
    }
}
