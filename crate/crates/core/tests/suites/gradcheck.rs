//! Central finite-difference checks for every tape primitive and for the full
//! joint loss through a small two-layer encoder.

#![allow(dead_code)]

use mocosa_core::autodiff::{Tape, Var};
use mocosa_core::graph::{anonymous_relations, EntityRecord, KnowledgeGraph, SplitTriples, Triple};
use mocosa_core::loss::{contrastive_loss, inverse_temperature, structural_loss, total_loss};
use mocosa_core::model::{Model, ModelConfig, TextInputs};
use mocosa_core::params::Binder;
use mocosa_core::structural::{struct_score_matrix, AseKind};
use mocosa_core::text::TextEncoderConfig;
use mocosa_core::tokenizer::Tokenizer;
use mocosa_core::{EntityId, RelationId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const STEP: f64 = 1e-5;
const PRIMITIVE_TOL: f64 = 1e-4;
const END_TO_END_TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.2..2.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), or the plain difference when both are tiny.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Reduces `f(inputs)` to a scalar with a fixed random weighting and compares
/// tape gradients with central differences for every input element.
fn check<F>(name: &str, seed: u64, inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).shape()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let weight = random(&mut rng, out_shape[0], out_shape[1]);

    let eval = |inputs: &[Tensor]| -> (f64, Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let w = tape.constant(weight.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        (tape.value(loss).item(), tape, loss, vars)
    };

    let (_, mut tape, root, vars) = eval(&inputs);
    tape.backward(root).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(&inputs)
        .map(|(v, x)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()))
        })
        .collect();

    for (i, input) in inputs.iter().enumerate() {
        let numeric: Vec<f64> = (0..input.len())
            .map(|k| {
                let mut plus = inputs.clone();
                plus[i].data_mut()[k] += STEP;
                let mut minus = inputs.clone();
                minus[i].data_mut()[k] -= STEP;
                (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP)
            })
            .collect();
        let err = relative_error(analytic[i].data(), &numeric);
        assert!(
            err <= PRIMITIVE_TOL,
            "{name} seed {seed} input {i}: relative error {err:.3e}\nanalytic {:?}\nnumeric  {:?}",
            analytic[i].data(),
            numeric
        );
    }
}

fn for_seeds(mut body: impl FnMut(u64, &mut ChaCha8Rng)) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        body(seed, &mut rng);
    }
}

pub fn elementwise_primitives() {
    for_seeds(|seed, rng| {
        let (m, n) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let a = random(rng, m, n);
        let b = random(rng, m, n);
        check("add", seed, vec![a.clone(), b.clone()], |t, v| {
            t.add(v[0], v[1]).unwrap()
        });
        check("sub", seed, vec![a.clone(), b.clone()], |t, v| {
            t.sub(v[0], v[1]).unwrap()
        });
        check("mul", seed, vec![a.clone(), b.clone()], |t, v| {
            t.mul(v[0], v[1]).unwrap()
        });
        check("scale", seed, vec![a.clone()], |t, v| t.scale(v[0], -1.7));
        check("exp", seed, vec![a.clone()], |t, v| t.exp(v[0]));
        check("log", seed, vec![positive(rng, m, n)], |t, v| t.log(v[0]));
        check("gelu", seed, vec![random(rng, m, n)], |t, v| t.gelu(v[0]));
        check("transpose", seed, vec![a.clone()], |t, v| t.transpose(v[0]));
        check("sum", seed, vec![a.clone()], |t, v| t.sum(v[0]));
        check("mean", seed, vec![a], |t, v| t.mean(v[0]));
    });
}

pub fn broadcast_primitives() {
    for_seeds(|seed, rng| {
        let (m, n) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let x = random(rng, m, n);
        let row = random(rng, 1, n);
        let s = random(rng, 1, 1);
        check("mul_scalar", seed, vec![x.clone(), s], |t, v| {
            t.mul_scalar(v[0], v[1]).unwrap()
        });
        check("add_row", seed, vec![x.clone(), row.clone()], |t, v| {
            t.add_row(v[0], v[1]).unwrap()
        });
        check("mul_row", seed, vec![x, row], |t, v| t.mul_row(v[0], v[1]).unwrap());
    });
}

pub fn matrix_primitives() {
    for_seeds(|seed, rng| {
        let (m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let a = random(rng, m, k);
        let b = random(rng, k, n);
        let c = random(rng, n, k);
        check("matmul", seed, vec![a.clone(), b], |t, v| t.matmul(v[0], v[1]).unwrap());
        check("matmul_bt", seed, vec![a.clone(), c.clone()], |t, v| {
            t.matmul_bt(v[0], v[1]).unwrap()
        });
        let d = random(rng, m, n);
        check("concat_rows", seed, vec![c.clone(), random(rng, 2, k)], |t, v| {
            t.concat_rows(&[v[0], v[1]]).unwrap()
        });
        check("concat_cols", seed, vec![a.clone(), d], |t, v| {
            t.concat_cols(&[v[0], v[1]]).unwrap()
        });
        let wide = random(rng, 3, 4);
        check("slice_rows", seed, vec![wide.clone()], |t, v| t.slice_rows(v[0], 1, 2));
        check("slice_cols", seed, vec![wide], |t, v| t.slice_cols(v[0], 1, 3));
    });
}

pub fn row_normalisers() {
    for_seeds(|seed, rng| {
        let (m, n) = (rng.gen_range(1..4), rng.gen_range(2..6));
        let x = random(rng, m, n);
        check("softmax_rows", seed, vec![x.clone()], |t, v| t.softmax_rows(v[0]));
        check("l2_normalize_rows", seed, vec![x.clone()], |t, v| {
            t.l2_normalize_rows(v[0], 1e-12)
        });
        check("layer_norm_rows", seed, vec![x.clone()], |t, v| {
            t.layer_norm_rows(v[0], 1e-5)
        });
        let mask: Vec<bool> = (0..m * n).map(|_| rng.gen_bool(0.6)).collect();
        // at least one entry per row so every row has a finite value
        let mut mask = mask;
        for r in 0..m {
            mask[r * n] = true;
        }
        check("masked_logsumexp_rows", seed, vec![x], move |t, v| {
            t.masked_logsumexp_rows(v[0], &mask).unwrap()
        });
    });
}

pub fn indexing_primitives() {
    for_seeds(|seed, rng| {
        let (m, n) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let table = random(rng, m, n);
        let idx: Vec<usize> = (0..5).map(|_| rng.gen_range(0..m)).collect();
        check("gather_rows", seed, vec![table.clone()], move |t, v| {
            t.gather_rows(v[0], &idx)
        });
        let groups: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..m)).collect())
            .collect();
        check("pool_rows", seed, vec![table.clone()], move |t, v| {
            t.pool_rows(v[0], &groups)
        });
        let mut mask: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.5)).collect();
        mask[0] = true;
        check("masked_mean_rows", seed, vec![table.clone()], move |t, v| {
            t.masked_mean_rows(v[0], &mask)
        });
        let at: Vec<(usize, usize)> = (0..4).map(|_| (rng.gen_range(0..m), rng.gen_range(0..n))).collect();
        check("pick", seed, vec![table], move |t, v| t.pick(v[0], &at));
    });
}

pub fn rotation_primitive() {
    for_seeds(|seed, rng| {
        let m = rng.gen_range(1..4);
        let x = random(rng, m, 4);
        let p = random(rng, m, 4);
        check("pair_rotate", seed, vec![x, p], |t, v| {
            t.pair_rotate(v[0], v[1], 1e-12).unwrap()
        });
    });
}

pub fn composed_attention_block() {
    // scaled dot-product attention with a prepended key/value row
    for_seeds(|seed, rng| {
        let q = random(rng, 3, 4);
        let k = random(rng, 3, 4);
        let v = random(rng, 3, 4);
        let pk = random(rng, 1, 4);
        let pv = random(rng, 1, 4);
        check("attention", seed, vec![q, k, v, pk, pv], |t, x| {
            let keys = t.concat_rows(&[x[3], x[1]]).unwrap();
            let vals = t.concat_rows(&[x[4], x[2]]).unwrap();
            let s = t.matmul_bt(x[0], keys).unwrap();
            let s = t.scale(s, 0.5);
            let a = t.softmax_rows(s);
            t.matmul(a, vals).unwrap()
        });
    });
}

fn toy_graph() -> KnowledgeGraph {
    let names = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];
    let entities = names
        .iter()
        .enumerate()
        .map(|(i, n)| EntityRecord {
            id: EntityId(i),
            name: (*n).to_string(),
            description: format!("{n} is item number {i}"),
        })
        .collect();
    KnowledgeGraph::build(
        entities,
        anonymous_relations(2),
        SplitTriples {
            train: vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 2),
                Triple::new(2, 1, 3),
                Triple::new(3, 1, 4),
                Triple::new(4, 0, 5),
            ],
            ..Default::default()
        },
    )
    .unwrap()
}

/// The joint objective on a fixed batch, computed from scratch on a new tape.
fn joint_loss(model: &Model, graph: &KnowledgeGraph, inputs: &TextInputs, mh: &Tensor) -> (f64, Vec<Option<Tensor>>) {
    let batch: Vec<Triple> = graph.training_examples().into_iter().take(4).collect();
    let pairs: Vec<(EntityId, RelationId)> = batch.iter().map(|t| (t.head, t.relation)).collect();
    let tails: Vec<EntityId> = batch.iter().map(|t| t.tail).collect();
    let mut tape = Tape::new();
    let mut b = Binder::trainable(model.store());
    let log_tau = b.var(&mut tape, model.log_tau_param());
    let inv_tau = inverse_temperature(&mut tape, log_tau);
    let ase = model.query_ase(&mut tape, &mut b, &pairs).unwrap();
    let seqs: Vec<Vec<u32>> = pairs.iter().map(|(h, r)| inputs.hr_seq(graph, *h, *r)).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let h_hr = model.encode_queries(&mut tape, &mut b, &refs, Some(ase)).unwrap();
    let h_t = model.encode_tails(&mut tape, &mut b, inputs, &tails).unwrap();
    let sims = tape.matmul_bt(h_hr, h_t).unwrap();
    let mixed = tape.constant(mh.clone());
    let s_mh = tape.matmul_bt(h_hr, mixed).unwrap();
    let all = tape.concat_cols(&[sims, s_mh]).unwrap();
    let n = 4 + mh.rows();
    let mut allowed = vec![true; 4 * n];
    for q in 0..4 {
        allowed[q * n + q] = false;
    }
    let positives = [0, 1, 2, 3];
    let l_cl = contrastive_loss(&mut tape, all, &positives, &allowed, inv_tau, 0.02).unwrap();
    let et = model.table().entity_rows(&mut tape, &mut b, &tails);
    let ds = struct_score_matrix(&mut tape, ase, et).unwrap();
    let ib: Vec<bool> = (0..16).map(|i| i % 5 != 0).collect();
    let l_dis = structural_loss(&mut tape, ds, &positives, &ib, inv_tau, 0.02).unwrap();
    let loss = total_loss(&mut tape, l_cl, l_dis, 0.5).unwrap();
    let value = tape.value(loss).item();
    tape.backward(loss).unwrap();
    (value, b.grads(&tape))
}

pub fn end_to_end_joint_loss() {
    let graph = toy_graph();
    let tokenizer = Tokenizer::from_graph(&graph, 1);
    let inputs = TextInputs::new(&graph, tokenizer.clone(), 16);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let config = ModelConfig {
            struct_dim: 4,
            ase: [AseKind::Additive, AseKind::Hadamard, AseKind::Rotation][seed as usize % 3],
            text: TextEncoderConfig {
                layers: 2,
                hidden: 8,
                heads: 2,
                max_len: 16,
                vocab_size: tokenizer.len(),
                ffn: 16,
            },
            use_ase: true,
            shared_encoders: seed % 2 == 0,
            tau_init: 0.3,
        };
        let mut model = Model::new(config, graph.num_entities(), graph.num_relations(), &mut rng).unwrap();
        let mh_rows: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let mh = Tensor::from_rows(&mh_rows);
        let (_, grads) = joint_loss(&model, &graph, &inputs, &mh);

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let ids: Vec<_> = model.store().ids().collect();
        for id in ids {
            let Some(g) = &grads[id.index()] else { continue };
            let len = g.len();
            // sample coordinates of the large embedding tables, check the rest fully
            let coords: Vec<usize> = if len > 64 {
                (0..32).map(|_| rng.gen_range(0..len)).collect()
            } else {
                (0..len).collect()
            };
            for k in coords {
                let orig = model.store().get(id).data()[k];
                model.store_mut().get_mut(id).data_mut()[k] = orig + STEP;
                let plus = joint_loss(&model, &graph, &inputs, &mh).0;
                model.store_mut().get_mut(id).data_mut()[k] = orig - STEP;
                let minus = joint_loss(&model, &graph, &inputs, &mh).0;
                model.store_mut().get_mut(id).data_mut()[k] = orig;
                analytic.push(g.data()[k]);
                numeric.push((plus - minus) / (2.0 * STEP));
            }
        }
        let err = relative_error(&analytic, &numeric);
        assert!(
            err <= END_TO_END_TOL,
            "seed {seed}: end-to-end relative error {err:.3e}"
        );
    }
}
