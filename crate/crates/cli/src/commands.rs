//! Subcommand implementations. Each returns the text printed on stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mocosa_core::eval::{
    best_alpha, build_queries, miou, rank_scored, rerank_sweep, score_queries, Evaluation, RankConfig, RerankConfig,
};
use mocosa_core::model::ModelScorer;
use mocosa_core::tokenizer::Tokenizer;
use mocosa_core::train::EpochMetrics;
use mocosa_core::{Model, Split, SplitSet, TextInputs, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, Dataset};
use crate::error::{CliError, Result};
use crate::report;
use crate::vocab;

/// Queries scored per encoder pass at inference.
const SCORE_CHUNK: usize = 256;

/// The regimes compared by `rerank-sweep`: no re-ranking and neighbour sets
/// drawn from progressively more splits.
pub const SWEEP_REGIMES: [SplitSet; 4] = [SplitSet::NONE, SplitSet::TRAIN, SplitSet::TRAIN_VALID, SplitSet::ALL];

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn dataset_dir(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| CliError::Config("no dataset given: pass --dataset or set dataset in the config".into()))
}

pub fn build_vocab(dataset: &Path, min_freq: usize, out: &Path) -> Result<String> {
    let ds = load_dataset(dataset)?;
    let tok = Tokenizer::from_graph(&ds.graph, min_freq.max(1));
    vocab::write_vocab(out, &tok)?;
    Ok(format!("tokens\t{}\nvocab\t{}\n", tok.len(), out.display()))
}

pub struct TrainOutcome {
    pub epochs: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
    pub sha256: String,
}

pub fn train(cfg: &RunConfig, dataset: Option<&Path>) -> Result<TrainOutcome> {
    let ds = load_dataset(&dataset_dir(cfg, dataset)?)?;
    let tok = match &cfg.vocab {
        Some(p) => vocab::read_vocab(p)?,
        None => Tokenizer::from_graph(&ds.graph, cfg.min_freq),
    };
    let g = &ds.graph;
    let model_cfg = cfg.model_config(tok.len());
    let inputs = TextInputs::new(g, tok.clone(), cfg.max_len);
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(model_cfg, g.num_entities(), g.num_relations(), &mut init)?;
    let mut trainer = Trainer::new(g, &inputs, model, cfg.train, init.gen())?;
    let mut log = format!("{}\n", EpochMetrics::TSV_HEADER);
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        let m = trainer.train_epoch()?;
        let _ = writeln!(log, "{}", m.tsv_row());
        epochs.push(m);
    }
    if let Some(p) = &cfg.metrics {
        write(p, &log)?;
    }
    let model = trainer.into_model();
    let sha256 = checkpoint::save(&cfg.checkpoint, &model, &tok, g.num_entities(), g.num_relations())?;
    Ok(TrainOutcome {
        epochs,
        checkpoint: cfg.checkpoint.clone(),
        sha256,
    })
}

impl TrainOutcome {
    pub fn render(&self) -> String {
        let mut s = format!("{}\n", EpochMetrics::TSV_HEADER);
        for m in &self.epochs {
            let _ = writeln!(s, "{}", m.tsv_row());
        }
        let _ = writeln!(s, "checkpoint\t{}", self.checkpoint.display());
        let _ = writeln!(s, "sha256\t{}", self.sha256);
        s
    }
}

/// A dataset and a checkpoint that fits it.
pub struct Loaded {
    pub ds: Dataset,
    pub ck: Checkpoint,
    pub inputs: TextInputs,
}

/// Loads the dataset and checkpoint named by the flags or the config. With
/// `check_dims`, the checkpoint must also match the config's model settings.
pub fn load_for_inference(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    checkpoint: Option<&Path>,
    check_dims: bool,
) -> Result<Loaded> {
    let ck_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.checkpoint.clone());
    let ck = checkpoint::load(&ck_path)?;
    let ds = load_dataset(&dataset_dir(cfg, dataset)?)?;
    let expected = if check_dims {
        cfg.model_config(ck.tokenizer.len())
    } else {
        *ck.model.config()
    };
    checkpoint::check_compatible(
        &ck_path,
        &ck,
        &expected,
        ds.graph.num_entities(),
        ds.graph.num_relations(),
    )?;
    let inputs = TextInputs::new(&ds.graph, ck.tokenizer.clone(), ck.model.config().text.max_len);
    Ok(Loaded { ds, ck, inputs })
}

impl Loaded {
    fn scorer<'a>(&'a self, cfg: &RunConfig) -> Result<ModelScorer<'a>> {
        Ok(ModelScorer::new(
            &self.ck.model,
            &self.ds.graph,
            &self.inputs,
            cfg.score_mode,
            cfg.train.loss.beta,
        )?)
    }

    pub fn evaluate(&self, cfg: &RunConfig, split: Split, filter: SplitSet) -> Result<Evaluation> {
        let scorer = self.scorer(cfg)?;
        let scored = score_queries(&scorer, build_queries(&self.ds.graph, split), SCORE_CHUNK)?;
        let rerank = (cfg.rerank_alpha > 0.0).then_some(RerankConfig {
            alpha: cfg.rerank_alpha,
            neighbor_splits: cfg.rerank_splits,
        });
        let rc = RankConfig {
            filter_splits: filter,
            rerank,
            keep_top: report::TOP_K,
        };
        Ok(rank_scored(&self.ds.graph, &scored, &rc)?)
    }
}

pub struct EvalPaths<'a> {
    pub summary: Option<&'a Path>,
    pub details: Option<&'a Path>,
}

pub fn eval(cfg: &RunConfig, loaded: &Loaded, split: Split, out: EvalPaths<'_>) -> Result<String> {
    let ev = loaded.evaluate(cfg, split, cfg.filter_splits)?;
    let summary = report::summary(&loaded.ds, &ev.report);
    if let Some(p) = out.summary {
        write(p, &summary)?;
    }
    if let Some(p) = out.details {
        write(p, &report::details(&loaded.ds, &ev))?;
    }
    Ok(summary)
}

/// Predictions for every query of the split. Known train and valid facts are
/// removed from each list; the split's own answers stay.
pub fn export_predictions(cfg: &RunConfig, loaded: &Loaded, split: Split, out: &Path) -> Result<String> {
    let known = SplitSet::of(
        &[Split::Train, Split::Valid]
            .into_iter()
            .filter(|s| *s != split)
            .collect::<Vec<_>>(),
    );
    let ev = loaded.evaluate(cfg, split, known)?;
    write(out, &report::predictions(&loaded.ds, &ev))?;
    Ok(format!(
        "queries\t{}\npredictions\t{}\n",
        ev.results.len(),
        out.display()
    ))
}

/// Grid-searches α per regime on the validation split, then reports the
/// evaluation split at each regime's selected α. Without validation
/// triples the evaluation split itself is used for selection, and the
/// output says so.
pub fn rerank_sweep_cmd(cfg: &RunConfig, loaded: &Loaded, split: Split) -> Result<String> {
    let g = &loaded.ds.graph;
    let scorer = loaded.scorer(cfg)?;
    let select_on = if g.triples(Split::Valid).is_empty() {
        split
    } else {
        Split::Valid
    };
    let sel = score_queries(&scorer, build_queries(g, select_on), SCORE_CHUNK)?;
    let grid = rerank_sweep(g, &sel, cfg.filter_splits, &SWEEP_REGIMES, &cfg.alpha_grid)?;
    let target = if select_on == split {
        None
    } else {
        Some(score_queries(&scorer, build_queries(g, split), SCORE_CHUNK)?)
    };
    let mut s = format!("# grid on {}\n{}\n", select_on.name(), report::SWEEP_HEADER);
    s.push_str(&report::sweep_rows(&grid));
    let _ = writeln!(
        s,
        "# selected alpha, evaluated on {}\n{}",
        split.name(),
        report::SWEEP_HEADER
    );
    for regime in SWEEP_REGIMES {
        let Some(best) = best_alpha(&grid, regime) else {
            continue;
        };
        let rows = rerank_sweep(
            g,
            target.as_ref().unwrap_or(&sel),
            cfg.filter_splits,
            &[regime],
            &[best.alpha],
        )?;
        s.push_str(&report::sweep_rows(&rows));
    }
    Ok(s)
}

pub fn miou_cmd(dataset: &Path) -> Result<String> {
    let ds = load_dataset(dataset)?;
    let m = miou(&ds.graph)?;
    Ok(report::miou_table(&ds, &m))
}
