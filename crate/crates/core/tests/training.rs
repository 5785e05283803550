use entailner::corpus::synth::{SynthConfig, SynthWorld};
use entailner::corpus::{kshot_sample, type_inventory, KShotConfig, TaggedSentence, K_GRID};
use entailner::decoding::{estimate_transitions, DecodeConfig};
use entailner::instances::{EntailmentInstance, InstanceBuilder, SamplingConfig};
use entailner::prompting::{CandidateMode, TypeNames};
use entailner::scoring::backend::{new_backend, MaskedLm};
use entailner::scoring::{PromptModel, PromptSetup};
use entailner::training::*;

fn small_backbone(world: &SynthWorld, seed: u64) -> Box<dyn MaskedLm> {
    let text = world.pretraining_text(300, 0);
    let vocab = backbone_vocab(&text, &world.types(), &TypeNames::default());
    let cfg =
        serde_json::json!({ "hidden": 32, "layers": 1, "heads": 2, "ffn": 64, "max_len": 64 });
    new_backend("tiny-transformer", vocab, &cfg, seed).unwrap()
}

fn data(world: &SynthWorld, n: usize, seed: u64) -> Vec<TaggedSentence> {
    world.corpus(&SynthConfig::default(), n, seed)
}

fn instances(train: &[TaggedSentence]) -> Vec<EntailmentInstance> {
    InstanceBuilder::new(CandidateMode::Word, 1)
        .build(train, &SamplingConfig::default(), &type_inventory(train))
        .unwrap()
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        grad_accum: 1,
        max_steps: steps,
        eval_every: 2,
        patience: None,
        ..TrainConfig::default()
    }
}

#[test]
fn accumulated_micro_batches_match_one_large_batch() {
    let world = SynthWorld::new(3);
    let train = data(&world, 12, 1);
    let insts = instances(&train);
    assert!(insts.len() >= 32);
    let model = PromptModel::new(
        small_backbone(&world, 1),
        PromptSetup::new(type_inventory(&train)),
    )
    .unwrap();

    let micro = TrainConfig {
        batch_size: 2,
        grad_accum: 16,
        ..TrainConfig::default()
    };
    let large = TrainConfig {
        batch_size: 32,
        grad_accum: 1,
        ..TrainConfig::default()
    };
    let (la, ga) = first_step_gradients(&model, &insts, &micro).unwrap();
    let (lb, gb) = first_step_gradients(&model, &insts, &large).unwrap();
    assert!((la - lb).abs() <= 1e-5 * lb.abs(), "{la} vs {lb}");
    assert_eq!(ga.len(), gb.len());

    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for (name, a) in &ga {
        let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = gb[name].flatten_all().unwrap().to_vec1().unwrap();
        for (x, y) in a.iter().zip(&b) {
            diff += (f64::from(*x) - f64::from(*y)).powi(2);
            norm += f64::from(*y).powi(2);
        }
    }
    let rel = diff.sqrt() / norm.sqrt();
    assert!(rel <= 1e-5, "relative gradient difference {rel}");
}

#[test]
fn same_seed_gives_same_first_losses() {
    let world = SynthWorld::new(4);
    let train = data(&world, 6, 2);
    let insts = instances(&train);
    let losses = || {
        let model = PromptModel::new(
            small_backbone(&world, 9),
            PromptSetup::new(type_inventory(&train)),
        )
        .unwrap();
        train_entailment(&model, &insts, &quick(2), None, &TrainOptions::default())
            .unwrap()
            .losses
    };
    let a = losses();
    let b = losses();
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
}

#[test]
fn best_checkpoint_reproduces_dev_score() {
    let world = SynthWorld::new(5);
    let all = data(&world, 30, 3);
    let (train, dev) = all.split_at(20);
    let types = type_inventory(train);
    let insts = instances(train);
    let tm = estimate_transitions(train, &types).unwrap();
    let decode = DecodeConfig::default();
    let model = PromptModel::new(small_backbone(&world, 2), PromptSetup::new(types)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..TrainOptions::default()
    };
    let ev = EntailDev {
        sentences: dev,
        transitions: &tm,
        decode: &decode,
    };
    let record = train_entailment(&model, &insts, &quick(6), Some(ev), &opts).unwrap();

    let best = record.best_score.unwrap();
    let max = record
        .evals
        .iter()
        .map(|e| e.score)
        .fold(f64::MIN, f64::max);
    assert_eq!(best, max);
    let loaded = PromptModel::load(record.best_checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(decode.evaluate(&loaded, dev, &tm).unwrap().f1, best);
    assert_eq!(decode.evaluate(&model, dev, &tm).unwrap().f1, best);
}

#[test]
fn transfer_crosses_type_inventories() {
    let news = SynthWorld::new(6);
    let movie = SynthWorld::movie(6);
    let mut text = news.pretraining_text(150, 0);
    text.extend(movie.pretraining_text(150, 0));
    let mut types = news.types();
    types.extend(movie.types());
    let vocab = backbone_vocab(&text, &types, &TypeNames::default());
    let cfg =
        serde_json::json!({ "hidden": 32, "layers": 1, "heads": 2, "ffn": 64, "max_len": 64 });
    let backbone = new_backend("tiny-transformer", vocab, &cfg, 0).unwrap();

    let rich = data(&news, 20, 1);
    let low_all = data(&movie, 30, 1);
    let low_train = kshot_sample(&low_all[..20], &KShotConfig::new(2, 0)).unwrap();
    let pc = PipelineConfig {
        train: quick(3),
        ..PipelineConfig::default()
    };
    let out = transfer_pipeline(
        backbone.as_ref(),
        Splits {
            train: &rich,
            dev: &rich[..5],
            test: &[],
        },
        Splits {
            train: &low_train,
            dev: &low_all[20..25],
            test: &low_all[25..],
        },
        &pc,
        &pc,
        &TrainOptions::default(),
    )
    .unwrap();
    assert_eq!(out.low.model.setup().entity_types, movie.types());
    assert_eq!(out.low.transitions.types, movie.types());
    assert!(out.low.test.is_some());
    assert_eq!(out.low.record.lineage.notes["stage"], "transfer");
}

#[test]
fn every_k_on_the_grid_is_accepted() {
    let world = SynthWorld::new(7);
    let pool = data(&world, 3000, 4);
    for &k in &K_GRID {
        let sample = kshot_sample(&pool, &KShotConfig::new(k, 1)).unwrap();
        let counts = entailner::corpus::mention_counts(&sample);
        assert!(world.types().iter().all(|t| counts[t] >= k), "k={k}");
    }
}

#[test]
fn baseline_tagger_trains_and_round_trips() {
    let world = SynthWorld::new(8);
    let all = data(&world, 20, 5);
    let (train, dev) = all.split_at(15);
    let tagger = BaselineTagger::new(small_backbone(&world, 3), &type_inventory(train), 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        ..quick(4)
    };
    let record = train_baseline(&tagger, train, dev, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(record.steps_run, 4);
    assert!(record.losses.iter().all(|l| l.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    tagger.save(dir.path()).unwrap();
    let loaded = BaselineTagger::load(dir.path()).unwrap();
    assert_eq!(loaded.evaluate(dev).unwrap(), tagger.evaluate(dev).unwrap());
}
