use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use sdgnn::data::{
    build_vocabs, corpus_stats, load_dataset, load_unlabeled, load_word_vectors, parse_conllu, record_to_json,
    synth_corpus, LoadReport, Record,
};
use sdgnn::eval::{auroc, classification_metrics};
use sdgnn::graphbuild::make_batch;
use sdgnn::model::{param_count, Mode, Sdgnn, SdgnnConfig};
use sdgnn::numcore::Rng;
use sdgnn::train::{self as trainer, load_checkpoint, save_checkpoint, Checkpoint};

use crate::config::{usage, RunConfig};

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| usage(format!("missing --{flag} (or `{flag}=` in the config file)")))
}

/// Loads records, reporting every malformed line on stderr. In strict mode
/// any malformed line fails the command after all have been reported.
fn load_records(path: &Path, flag: &str, strict: bool, labelled: bool) -> Result<Vec<Record>> {
    let is_conllu = path.extension().is_some_and(|e| e == "conllu");
    let report = if is_conllu {
        let text = fs::read_to_string(path).with_context(|| format!("--{flag} {}", path.display()))?;
        let records = parse_conllu(&text)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| Record {
                id: format!("sent-{}", i + 1),
                tokens: s.tokens,
                arcs: s.arcs,
                genres: Vec::new(),
                label: 0,
            })
            .collect();
        LoadReport { records, errors: Vec::new() }
    } else if labelled {
        load_dataset(path, false)?
    } else {
        load_unlabeled(path, false)?
    };
    for e in &report.errors {
        eprintln!("{}: {e}", path.display());
    }
    if strict && !report.errors.is_empty() {
        bail!("{}: {} malformed records (set strict=false to skip them)", path.display(), report.errors.len());
    }
    if report.records.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(report.records)
}

/// Stdout unless `out` is set.
fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("--out {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(out: &Option<PathBuf>, value: &impl Serialize) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn open_checkpoint(cfg: &RunConfig) -> Result<(Checkpoint, Sdgnn)> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let net = ckpt.network()?;
    Ok((ckpt, net))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs: usize,
    best_epoch: usize,
    best_val_auroc: Option<f64>,
    final_train_loss: Option<f64>,
    best_checkpoint: &'a Path,
    final_checkpoint: &'a Path,
    log: &'a Path,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let train_path = required(&cfg.train, "train")?;
    let val_path = required(&cfg.val, "val")?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("sdgnn-run"));
    let tc = cfg.train_config();
    tc.validate()?;
    // vocabulary sizes are placeholders until the data is read
    SdgnnConfig { num_relations: 1, vocab_size: 2, ..cfg.model.clone() }.validate()?;

    let train_set = load_records(train_path, "train", cfg.strict, true)?;
    let val_set = load_records(val_path, "val", cfg.strict, true)?;
    let vocabs = build_vocabs(&train_set, cfg.min_freq)?;
    let model = cfg.model.clone().with_vocabs(&vocabs);
    let mut rng = Rng::new(cfg.seed);
    let embeddings = match &cfg.vectors {
        Some(p) => {
            let m = load_word_vectors(p, &vocabs.words, model.d_word, &mut rng)?;
            eprintln!("{} of {} words have pretrained vectors", m.pretrained_count(), vocabs.words.len());
            Some(m)
        }
        None => None,
    };
    let (net, store) =
        Sdgnn::init(model.clone(), model.mode.relation_map(&vocabs.relations), embeddings.as_ref(), &mut rng)?;
    eprintln!(
        "training on {} records ({} validation), {} words, {} relation labels, {} parameters",
        train_set.len(),
        val_set.len(),
        vocabs.words.len(),
        vocabs.relations.len(),
        param_count(&model).total
    );
    fs::create_dir_all(&out_dir).with_context(|| format!("--out {}", out_dir.display()))?;

    let max_epochs = tc.max_epochs;
    let outcome = trainer::train(&net, store, &vocabs, &train_set, &val_set, &tc, |e| {
        eprintln!(
            "epoch {}/{max_epochs} loss {:.5} val_auroc {:.4} val_f1 {:.4} ({:.2}s)",
            e.epoch, e.train_loss, e.val_auroc, e.val_f1, e.seconds
        );
    })?;

    let mut log = String::new();
    for e in &outcome.log {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    let log_path = out_dir.join("train_log.jsonl");
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    let best_path = out_dir.join("best.ckpt");
    let final_path = out_dir.join("final.ckpt");
    save_checkpoint(&outcome.best, &best_path)?;
    save_checkpoint(&outcome.last, &final_path)?;

    emit(
        &None,
        &TrainSummary {
            epochs: outcome.log.len(),
            best_epoch: outcome.best.epoch,
            best_val_auroc: outcome.best.best_val_auroc,
            final_train_loss: outcome.log.last().map(|e| e.train_loss),
            best_checkpoint: &best_path,
            final_checkpoint: &final_path,
            log: &log_path,
        },
    )
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (ckpt, net) = open_checkpoint(cfg)?;
    let data = required(&cfg.data, "data")?;
    let records = load_records(data, "data", cfg.strict, true)?;
    let probs = trainer::predict(&net, &ckpt.params, &ckpt.vocabs, &records)
        .with_context(|| format!("scoring {} with {}", data.display(), ckpt_name(cfg)))?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    auroc(&probs, &labels)?;
    emit(&cfg.out, &classification_metrics(&probs, &labels, cfg.threshold)?)
}

fn ckpt_name(cfg: &RunConfig) -> String {
    cfg.checkpoint.as_deref().map_or_else(String::new, |p| p.display().to_string())
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    y_hat: f64,
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let (ckpt, net) = open_checkpoint(cfg)?;
    let data = required(&cfg.data, "data")?;
    let records = load_records(data, "data", cfg.strict, false)?;
    let probs = trainer::predict(&net, &ckpt.params, &ckpt.vocabs, &records)
        .with_context(|| format!("scoring {} with {}", data.display(), ckpt_name(cfg)))?;
    let mut w = output(&cfg.out)?;
    for (r, p) in records.iter().zip(probs) {
        serde_json::to_writer(&mut w, &Prediction { id: &r.id, y_hat: p })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EdgeDump<'a> {
    /// Receiving token, 1-based like the record's arcs.
    u: usize,
    /// Neighbor the message comes from.
    v: usize,
    relation: &'a str,
    /// One weight per layer.
    weights: Vec<f64>,
}

#[derive(Serialize)]
struct InspectDump<'a> {
    id: &'a str,
    mode: Mode,
    label: u8,
    y_hat: f64,
    tokens: Vec<&'a str>,
    edges: Vec<EdgeDump<'a>>,
    pooling: &'a [f64],
}

pub fn inspect(cfg: &RunConfig, id: &str) -> Result<()> {
    let (ckpt, net) = open_checkpoint(cfg)?;
    let data = required(&cfg.data, "data")?;
    let records = load_records(data, "data", cfg.strict, false)?;
    let record =
        records.iter().find(|r| r.id == id).ok_or_else(|| anyhow!("no record with id {id:?} in {}", data.display()))?;
    let batch = make_batch(&[record], &ckpt.vocabs, net.config().max_len)?;
    let out = net.forward(&ckpt.params, &batch)?;

    let graph = &batch.graphs[0];
    let edges: Vec<EdgeDump> = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| EdgeDump {
            u: e.receiver + 1,
            v: e.neighbor + 1,
            relation: ckpt.vocabs.relations.label(e.relation).unwrap_or("?"),
            weights: out.edge_weights[0].iter().map(|layer| layer[i]).collect(),
        })
        .collect();
    let tokens: Vec<&str> = record.tokens[..graph.n()].iter().map(|t| t.surface.as_str()).collect();
    emit(
        &cfg.out,
        &InspectDump {
            id: &record.id,
            mode: net.config().mode,
            label: record.label,
            y_hat: out.probs[0],
            tokens,
            edges,
            pooling: &out.pooling[0],
        },
    )
}

pub fn stats(cfg: &RunConfig) -> Result<()> {
    let data = required(&cfg.data, "data")?;
    let records = load_records(data, "data", cfg.strict, true)?;
    emit(&cfg.out, &corpus_stats(&records)?)
}

pub fn synth(cfg: &RunConfig, n: usize) -> Result<()> {
    if n < 2 {
        return Err(usage(format!("--n must be at least 2, got {n}")));
    }
    let mut w = output(&cfg.out)?;
    for r in synth_corpus(n, cfg.seed) {
        writeln!(w, "{}", record_to_json(&r))?;
    }
    w.flush()?;
    if let Some(p) = &cfg.out {
        eprintln!("wrote {n} records to {}", p.display());
    }
    Ok(())
}
