//! Fixtures shared by integration tests: a planted translational graph and a
//! tiny model configuration for struct-only training.
#![allow(dead_code)]

use mocosa_core::eval::Scorer;
use mocosa_core::graph::{anonymous_entities, anonymous_relations, SplitTriples};
use mocosa_core::loss::LossConfig;
use mocosa_core::optim::AdamWConfig;
use mocosa_core::text::TextEncoderConfig;
use mocosa_core::tokenizer::Tokenizer;
use mocosa_core::{
    AseKind, EntityId, KnowledgeGraph, ModelConfig, RelationId, Result, TextInputs, TrainConfig, TrainMode, Triple,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const PLANTED_ENTITIES: usize = 200;
pub const PLANTED_RELATIONS: usize = 8;
pub const PLANTED_DIM: usize = 32;
pub const PLANTED_NOISE: f64 = 0.05;

/// A graph whose entities sit on a noisy hypercube lattice: entity `v` is
/// `b + Σ_j bit_j(v)·r_j + noise`, and `(h, r_j, t)` holds exactly when `t`
/// is `h` with bit `j` switched on. Every true tail therefore satisfies
/// `E_t ≈ E_h + E_r`.
pub struct Planted {
    pub graph: KnowledgeGraph,
    pub entities: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..dim).map(|_| normal.sample(rng)).collect()
}

pub fn planted_graph(seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<u32> = (0..1u32 << PLANTED_RELATIONS).collect();
    nodes.shuffle(&mut rng);
    nodes.truncate(PLANTED_ENTITIES);
    let id_of: std::collections::HashMap<u32, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let scale = 1.0 / (PLANTED_DIM as f64).sqrt();
    let base = gaussian(&mut rng, PLANTED_DIM, scale);
    let relations: Vec<Vec<f64>> = (0..PLANTED_RELATIONS)
        .map(|_| gaussian(&mut rng, PLANTED_DIM, scale))
        .collect();
    let entities: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&v| {
            let noise = gaussian(&mut rng, PLANTED_DIM, PLANTED_NOISE);
            (0..PLANTED_DIM)
                .map(|k| {
                    let lattice: f64 = (0..PLANTED_RELATIONS)
                        .filter(|j| v >> j & 1 == 1)
                        .map(|j| relations[j][k])
                        .sum();
                    base[k] + lattice + noise[k]
                })
                .collect()
        })
        .collect();

    let mut triples = Vec::new();
    for (h, &v) in nodes.iter().enumerate() {
        for j in 0..PLANTED_RELATIONS {
            if v >> j & 1 == 0 {
                if let Some(&t) = id_of.get(&(v | 1 << j)) {
                    triples.push(Triple::new(h, j, t));
                }
            }
        }
    }
    triples.shuffle(&mut rng);
    let held = triples.len() / 10;
    let test = triples.split_off(triples.len() - held);
    let graph = KnowledgeGraph::build(
        anonymous_entities(PLANTED_ENTITIES),
        anonymous_relations(PLANTED_RELATIONS),
        SplitTriples {
            train: triples,
            valid: Vec::new(),
            test,
        },
    )
    .unwrap();
    Planted {
        graph,
        entities,
        relations,
    }
}

/// Scores with the generating embeddings: `cos(E_h ± E_r, E_t)`, with the
/// minus sign for inverse relations.
pub struct PlantedOracle<'a>(pub &'a Planted);

impl Scorer for PlantedOracle<'_> {
    fn num_candidates(&self) -> usize {
        self.0.entities.len()
    }

    fn score_batch(&self, queries: &[(EntityId, RelationId)]) -> Result<Vec<Vec<f64>>> {
        let p = self.0;
        Ok(queries
            .iter()
            .map(|(h, r)| {
                let (j, sign) = if r.0 < PLANTED_RELATIONS {
                    (r.0, 1.0)
                } else {
                    (r.0 - PLANTED_RELATIONS, -1.0)
                };
                let q: Vec<f64> = p.entities[h.0]
                    .iter()
                    .zip(&p.relations[j])
                    .map(|(a, b)| a + sign * b)
                    .collect();
                p.entities.iter().map(|t| cosine(&q, t)).collect()
            })
            .collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Minimal text side for runs that never touch the text encoders.
pub fn placeholder_text(graph: &KnowledgeGraph) -> (TextInputs, TextEncoderConfig) {
    let tokenizer = Tokenizer::from_graph(graph, 1);
    let cfg = TextEncoderConfig {
        layers: 1,
        hidden: 4,
        heads: 1,
        max_len: 8,
        vocab_size: tokenizer.len(),
        ffn: 4,
    };
    (TextInputs::new(graph, tokenizer, 8), cfg)
}

pub fn struct_only_configs(text: TextEncoderConfig) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        struct_dim: PLANTED_DIM,
        ase: AseKind::Additive,
        text,
        use_ase: true,
        shared_encoders: true,
        tau_init: 0.05,
    };
    let train = TrainConfig {
        mode: TrainMode::StructOnly,
        loss: LossConfig::default(),
        optimizer: AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        },
        batch_size: 64,
        epochs: 150,
        use_mh: false,
        use_ir: false,
        ..Default::default()
    };
    (model, train)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let _: u64 = rng.gen();
    rng
}

const ADJECTIVES: [&str; 10] = [
    "amber", "brisk", "coral", "dusty", "early", "frozen", "golden", "hollow", "ivory", "jagged",
];
const NOUNS: [&str; 10] = [
    "harbor", "meadow", "lantern", "quarry", "orchard", "beacon", "canyon", "glacier", "thicket", "summit",
];
const FILLER: [&str; 16] = [
    "old", "small", "northern", "busy", "quiet", "famous", "remote", "river", "stone", "market", "village", "near",
    "tower", "coast", "valley", "hill",
];
const RELATIONS: [(&str, &str); 4] = [
    ("located in", "the place where something is"),
    ("part of", "a larger whole"),
    ("neighbor of", "an adjacent item"),
    ("named after", "the origin of a name"),
];

/// A 50-entity corpus with unique names and descriptions and two outgoing
/// facts per entity.
pub fn text_corpus(seed: u64) -> KnowledgeGraph {
    use mocosa_core::graph::{EntityRecord, RelationRecord};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<String> = ADJECTIVES
        .iter()
        .flat_map(|a| NOUNS.iter().map(move |n| format!("{a} {n}")))
        .collect();
    names.shuffle(&mut rng);
    names.truncate(50);
    let mut seen = std::collections::HashSet::new();
    let entities: Vec<EntityRecord> = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let description = loop {
                let d: Vec<&str> = (0..4).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
                let d = format!("{name} is a {}", d.join(" "));
                if seen.insert(d.clone()) {
                    break d;
                }
            };
            EntityRecord {
                id: EntityId(i),
                name,
                description,
            }
        })
        .collect();
    let relations = RELATIONS
        .iter()
        .enumerate()
        .map(|(i, (n, d))| RelationRecord {
            id: RelationId(i),
            name: (*n).to_string(),
            description: (*d).to_string(),
        })
        .collect();
    let mut facts = std::collections::BTreeSet::new();
    for h in 0..50 {
        while facts.iter().filter(|t: &&Triple| t.head.0 == h).count() < 2 {
            let t = rng.gen_range(0..50);
            if t != h {
                facts.insert(Triple::new(h, rng.gen_range(0..RELATIONS.len()), t));
            }
        }
    }
    KnowledgeGraph::build(
        entities,
        relations,
        SplitTriples {
            train: facts.into_iter().collect(),
            ..Default::default()
        },
    )
    .unwrap()
}

/// The full configuration (in-batch, momentum hard, intra-relation negatives
/// and structural prefixes) at toy scale.
pub fn full_text_configs(vocab_size: usize) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        struct_dim: 64,
        ase: AseKind::Additive,
        text: TextEncoderConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            max_len: 64,
            vocab_size,
            ffn: 256,
        },
        use_ase: true,
        shared_encoders: false,
        tau_init: 0.05,
    };
    let train = TrainConfig {
        mode: TrainMode::Joint,
        optimizer: AdamWConfig {
            lr: 2e-3,
            ..Default::default()
        },
        batch_size: 32,
        epochs: 40,
        queue_size: 512,
        hardest_k: 32,
        mix_count: 16,
        ..Default::default()
    };
    (model, train)
}
