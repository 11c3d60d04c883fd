//! End-to-end learning witnesses: planted structural recovery and
//! memorization through the full text path.

#![allow(dead_code)]

use std::time::Instant;

use mocosa_core::eval::{evaluate, Metrics, RankConfig};
use mocosa_core::model::ModelScorer;
use mocosa_core::tokenizer::Tokenizer;
use mocosa_core::{Model, ScoreMode, Split, TextInputs, Trainer};

use crate::common::{
    full_text_configs, placeholder_text, planted_graph, seeded, struct_only_configs, text_corpus, PlantedOracle,
};

pub struct PlantedOutcome {
    pub oracle: Metrics,
    pub held_out: Metrics,
    pub train: Metrics,
    pub seconds: f64,
}

/// Struct-only training on the planted lattice graph, with the generating
/// embeddings scored first as a solvability check.
pub fn planted_recovery(seed: u64) -> PlantedOutcome {
    let planted = planted_graph(seed);
    let g = &planted.graph;
    let oracle = evaluate(&PlantedOracle(&planted), g, Split::Test, &RankConfig::default()).unwrap();
    let (inputs, text) = placeholder_text(g);
    let (model_cfg, train_cfg) = struct_only_configs(text);
    let model = Model::new(model_cfg, g.num_entities(), g.num_relations(), &mut seeded(seed + 2)).unwrap();
    let mut trainer = Trainer::new(g, &inputs, model, train_cfg, seed + 2).unwrap();
    let start = Instant::now();
    for _ in 0..train_cfg.epochs {
        trainer.train_epoch().unwrap();
    }
    let seconds = start.elapsed().as_secs_f64();
    let model = trainer.into_model();
    let scorer = ModelScorer::new(&model, g, &inputs, ScoreMode::Struct, 0.0).unwrap();
    let held = evaluate(&scorer, g, Split::Test, &RankConfig::default()).unwrap();
    let train = evaluate(&scorer, g, Split::Train, &RankConfig::default()).unwrap();
    PlantedOutcome {
        oracle: oracle.report.overall,
        held_out: held.report.overall,
        train: train.report.overall,
        seconds,
    }
}

/// Full configuration (in-batch, momentum hard, intra-relation negatives and
/// structural prefixes) on the 50-entity corpus, ranked on its own training
/// triples.
pub fn memorization(seed: u64, verbose: bool) -> Metrics {
    let g = text_corpus(seed);
    let tokenizer = Tokenizer::from_graph(&g, 1);
    let (model_cfg, train_cfg) = full_text_configs(tokenizer.len());
    let inputs = TextInputs::new(&g, tokenizer, model_cfg.text.max_len);
    let model = Model::new(model_cfg, g.num_entities(), g.num_relations(), &mut seeded(seed)).unwrap();
    let mut trainer = Trainer::new(&g, &inputs, model, train_cfg, seed).unwrap();
    let start = Instant::now();
    for _ in 0..train_cfg.epochs {
        let m = trainer.train_epoch().unwrap();
        if verbose {
            println!("{}  ({:.1}s)", m.tsv_row(), start.elapsed().as_secs_f64());
        }
    }
    let model = trainer.into_model();
    let scorer = ModelScorer::new(&model, &g, &inputs, ScoreMode::Text, 0.0).unwrap();
    evaluate(&scorer, &g, Split::Train, &RankConfig::default())
        .unwrap()
        .report
        .overall
}
