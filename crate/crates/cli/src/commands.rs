use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use g2t_core::corpus::{
    apply_min_freq_threshold, build_vocab, corpus_statistics, load_dir, strip_corpus_prefixes, tokenize, ParallelCorpus,
    Side, Split, Vocabulary,
};
use g2t_core::decoding::{translate_corpus, DecodeConfig, Ensemble};
use g2t_core::metrics::{evaluate, evaluate_tokens, MetricReport};
use g2t_core::numerics::SeededRng;
use g2t_core::training::{aggregate, train_with_observer, SeedResult, TrainConfig, TrainData};
use g2t_core::transformer::{load_pretrained_embeddings, Checkpoint, EmbeddingSide, TransformerModel, WordVectors};

use crate::config::{load_config, resolve, CorpusMode, RunConfig};
use crate::{Cli, Command, SweepAxis, UsageError};

pub const SOURCE_VOCAB_FILE: &str = "vocab.gloss";
pub const TARGET_VOCAB_FILE: &str = "vocab.txt";
pub const STATS_FILE: &str = "stats.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

const MODEL_STREAM: u64 = 0x6d6f_6465_6c00;
const VECTORS_STREAM: u64 = 0x7665_6374_6f72;

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.workdir, cli.config.as_deref(), &cli.overrides)?;
    let ctx = Session { workdir: &cli.workdir, cfg: &cfg };
    match &cli.command {
        Command::Preprocess => ctx.preprocess(),
        Command::Train => ctx.train(),
        Command::Translate {
            checkpoints,
            input,
            output,
        } => ctx.translate(checkpoints, input, output),
        Command::Evaluate { hyp, reference, output } => ctx.evaluate(hyp, reference, output.as_deref()),
        Command::Stats { dir } => ctx.stats(dir.as_deref()),
        Command::Sweep {
            axis,
            values,
            checkpoints,
        } => ctx.sweep(*axis, values.as_deref(), checkpoints),
    }
}

struct Session<'a> {
    workdir: &'a Path,
    cfg: &'a RunConfig,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn lines(sentences: &[Vec<String>]) -> String {
    sentences.iter().map(|s| s.join(" ") + "\n").collect()
}

fn stats_report(corpus: &ParallelCorpus) -> String {
    let mut out = String::new();
    for (title, side) in [("Gloss", Side::Source), ("Text", Side::Target)] {
        out.push_str(title);
        out.push('\n');
        out.push_str(&corpus_statistics(corpus, side).to_table());
        out.push('\n');
    }
    out
}

/// A trained model with its dev/test hypotheses and scores.
struct Scored {
    metrics: BTreeMap<String, f64>,
    hypotheses: BTreeMap<Split, Vec<Vec<String>>>,
}

impl<'a> Session<'a> {
    fn path(&self, p: &str) -> PathBuf {
        resolve(self.workdir, p)
    }

    fn at(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn out_dir(&self) -> PathBuf {
        self.path(&self.cfg.run.out_dir)
    }

    fn save_config(&self, dir: &Path) -> Result<()> {
        write(&dir.join(CONFIG_FILE), self.cfg.to_toml())
    }

    fn preprocess(&self) -> Result<()> {
        let data = &self.cfg.data;
        let raw = self.path(&data.raw_dir);
        let mut corpus = load_dir(&raw).with_context(|| format!("cannot load raw corpus from {}", raw.display()))?;
        if data.mode == CorpusMode::Aslg {
            corpus = strip_corpus_prefixes(&corpus, &data.asl_prefixes);
            for &side in &data.threshold_sides {
                corpus = apply_min_freq_threshold(&corpus, side, data.min_freq)?;
            }
        }
        let out = self.path(&data.prepared_dir);
        corpus.write_dir(&out)?;
        build_vocab(&corpus, Side::Source).save(&out.join(SOURCE_VOCAB_FILE))?;
        build_vocab(&corpus, Side::Target).save(&out.join(TARGET_VOCAB_FILE))?;
        let report = stats_report(&corpus);
        write(&out.join(STATS_FILE), &report)?;
        self.save_config(&out)?;
        print!("{report}");
        Ok(())
    }

    fn stats(&self, dir: Option<&Path>) -> Result<()> {
        let dir = dir.map_or_else(|| self.path(&self.cfg.data.prepared_dir), |d| self.at(d));
        let corpus = load_dir(&dir)?;
        print!("{}", stats_report(&corpus));
        Ok(())
    }

    fn prepared(&self) -> Result<(ParallelCorpus, Vocabulary, Vocabulary)> {
        let dir = self.path(&self.cfg.data.prepared_dir);
        let corpus = load_dir(&dir).with_context(|| format!("cannot load prepared corpus from {}", dir.display()))?;
        let vocab = |file: &str, side: Side| -> Result<Vocabulary> {
            let p = dir.join(file);
            Ok(if p.exists() {
                Vocabulary::load(&p)?
            } else {
                build_vocab(&corpus, side)
            })
        };
        let src = vocab(SOURCE_VOCAB_FILE, Side::Source)?;
        let tgt = vocab(TARGET_VOCAB_FILE, Side::Target)?;
        Ok((corpus, src, tgt))
    }

    fn fresh_model(&self, seed: u64, src: &Vocabulary, tgt: &Vocabulary) -> Result<TransformerModel<f32>> {
        let m = &self.cfg.model;
        let mut model = TransformerModel::new(m.model_config(src.len(), tgt.len()), &mut SeededRng::derive(seed, MODEL_STREAM))?;
        let mut rng = SeededRng::derive(seed, VECTORS_STREAM);
        for (file, side, vocab) in [
            (&m.source_vectors, EmbeddingSide::Encoder, src),
            (&m.target_vectors, EmbeddingSide::Decoder, tgt),
        ] {
            if let Some(file) = file {
                let path = self.path(file);
                let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                let vectors = WordVectors::parse(&text).with_context(|| format!("in {}", path.display()))?;
                let cov = load_pretrained_embeddings(&mut model, &vectors, side, vocab, &mut rng)?;
                eprintln!(
                    "{side:?} vectors: {}/{} tokens covered ({:.1}%)",
                    cov.matched,
                    cov.total,
                    cov.percent()
                );
            }
        }
        Ok(model)
    }

    /// Trains one model into `dir` and scores it on dev and test.
    fn train_and_score(
        &self,
        cfg: &RunConfig,
        seed: u64,
        dir: &Path,
        corpus: &ParallelCorpus,
        src: &Vocabulary,
        tgt: &Vocabulary,
    ) -> Result<Scored> {
        let data = TrainData::from_corpus(corpus, src.clone(), tgt.clone())?;
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let model = self.fresh_model(seed, src, tgt)?;
        let outcome = train_with_observer(model, &data, &train_cfg, Some(dir), |r| {
            eprintln!(
                "seed {seed} step {:>6} epoch {:>6.2} lr {:.3e} train {:.4} dev loss {:.4} dev BLEU-4 {:.2}{}",
                r.step,
                r.epoch,
                r.lr,
                r.train_loss,
                r.dev_loss,
                r.dev_bleu4,
                if r.improved { " *" } else { "" }
            )
        })?;
        Checkpoint {
            model: outcome.best.clone(),
            source_vocab: src.clone(),
            target_vocab: tgt.clone(),
        }
        .save(&dir.join(BEST_CHECKPOINT))?;
        let mut scored = score(&[&outcome.best], corpus, src, tgt, &cfg.decode, cfg)?;
        if let Some(best) = outcome.log.best_record() {
            scored.metrics.insert("best_step".into(), best.step as f64);
            scored.metrics.insert("dev_loss".into(), best.dev_loss);
        }
        for (split, hyps) in &scored.hypotheses {
            write(&dir.join(format!("{}.hyp", split.name())), lines(hyps))?;
        }
        Ok(scored)
    }

    fn train(&self) -> Result<()> {
        let (corpus, src, tgt) = self.prepared()?;
        let out = self.out_dir();
        self.save_config(&out)?;
        if self.cfg.run.seeds.is_empty() {
            bail!(UsageError("run.seeds is empty".into()));
        }
        let mut runs = Vec::new();
        for &seed in &self.cfg.run.seeds {
            let dir = out.join(format!("seed{seed}"));
            let scored = self.train_and_score(self.cfg, seed, &dir, &corpus, &src, &tgt)?;
            runs.push(SeedResult {
                seed,
                metrics: scored.metrics,
                checkpoint: Some(PathBuf::from(format!("seed{seed}")).join(BEST_CHECKPOINT)),
            });
        }
        let report = aggregate(runs);
        let json = serde_json::to_string_pretty(&report)? + "\n";
        write(&out.join(REPORT_FILE), json)?;
        for (k, v) in &report.mean {
            println!("{k:<12} {v:>10.4} ± {:.4}", report.std[k]);
        }
        Ok(())
    }

    fn load_checkpoints(&self, paths: &[PathBuf]) -> Result<Vec<Checkpoint<f32>>> {
        if paths.is_empty() {
            bail!(UsageError("at least one --checkpoint is required".into()));
        }
        let ckpts = paths
            .iter()
            .map(|p| {
                let p = self.at(p);
                Checkpoint::<f32>::load(&p).with_context(|| format!("cannot load checkpoint {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        for (p, c) in paths.iter().zip(&ckpts).skip(1) {
            if c.target_vocab != ckpts[0].target_vocab || c.source_vocab != ckpts[0].source_vocab {
                bail!(
                    "configuration error: {} uses different vocabularies from {}",
                    p.display(),
                    paths[0].display()
                );
            }
        }
        Ok(ckpts)
    }

    fn translate(&self, checkpoints: &[PathBuf], input: &Path, output: &Path) -> Result<()> {
        let ckpts = self.load_checkpoints(checkpoints)?;
        let input = self.at(input);
        let text = fs::read_to_string(&input).with_context(|| format!("cannot read {}", input.display()))?;
        let sources: Vec<Vec<String>> = text.lines().map(tokenize).collect();
        let ens = Ensemble::new(ckpts.iter().map(|c| &c.model).collect())?;
        let hyps = translate_corpus(&ens, &sources, &ckpts[0].source_vocab, &ckpts[0].target_vocab, &self.cfg.decode)?;
        write(&self.at(output), lines(&hyps))?;
        eprintln!("translated {} sentences with {} model(s)", hyps.len(), ckpts.len());
        Ok(())
    }

    fn evaluate(&self, hyp: &Path, reference: &Path, output: Option<&Path>) -> Result<()> {
        let report = evaluate(&self.at(hyp), &self.at(reference), self.cfg.metrics)?;
        print!("{}", report.to_text());
        if let Some(out) = output {
            write(&self.at(out), serde_json::to_string_pretty(&report)? + "\n")?;
        }
        Ok(())
    }

    fn sweep(&self, axis: SweepAxis, values: Option<&str>, checkpoints: &[PathBuf]) -> Result<()> {
        let grid = match values {
            Some(v) => parse_grid(v)?,
            None => default_grid(axis),
        };
        let (corpus, src, tgt) = self.prepared()?;
        let out = self.out_dir().join(format!("sweep_{}", axis_name(axis)));
        self.save_config(&out)?;
        let mut rows = Vec::new();
        match axis {
            SweepAxis::Beam => {
                let ckpts = self.load_checkpoints(checkpoints)?;
                let models: Vec<&TransformerModel<f32>> = ckpts.iter().map(|c| &c.model).collect();
                let (src, tgt) = (&ckpts[0].source_vocab, &ckpts[0].target_vocab);
                for &v in &grid {
                    if v < 1.0 || v.fract() != 0.0 {
                        bail!(UsageError(format!("beam width must be a positive integer, got {v}")));
                    }
                    let decode = DecodeConfig {
                        beam_width: v as usize,
                        ..self.cfg.decode.clone()
                    };
                    rows.push((v, score(&models, &corpus, src, tgt, &decode, self.cfg)?.metrics));
                }
            }
            SweepAxis::Warmup | SweepAxis::Lr => {
                let seed = *self
                    .cfg
                    .run
                    .seeds
                    .first()
                    .ok_or_else(|| UsageError("run.seeds is empty".into()))?;
                for &v in &grid {
                    let mut cfg = self.cfg.clone();
                    if axis == SweepAxis::Warmup {
                        if v < 1.0 || v.fract() != 0.0 {
                            bail!(UsageError(format!("warmup must be a positive integer, got {v}")));
                        }
                        cfg.train.warmup_steps = v as u64;
                    } else {
                        cfg.train.initial_lr = v;
                    }
                    let dir = out.join(format_value(v));
                    rows.push((v, self.train_and_score(&cfg, seed, &dir, &corpus, &src, &tgt)?.metrics));
                }
            }
        }
        let table = sweep_table(axis, &rows);
        write(&out.join("sweep.tsv"), &table)?;
        print!("{table}");
        Ok(())
    }
}

/// Decodes dev and test (when present) and scores them against the references.
fn score(
    models: &[&TransformerModel<f32>],
    corpus: &ParallelCorpus,
    src: &Vocabulary,
    tgt: &Vocabulary,
    decode: &DecodeConfig,
    cfg: &RunConfig,
) -> Result<Scored> {
    let ens = Ensemble::new(models.to_vec())?;
    let mut scored = Scored {
        metrics: BTreeMap::new(),
        hypotheses: BTreeMap::new(),
    };
    for split in [Split::Dev, Split::Test] {
        let pairs = corpus.pairs(split);
        if pairs.is_empty() {
            continue;
        }
        let sources: Vec<Vec<String>> = pairs.iter().map(|p| p.source.clone()).collect();
        let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
        let hyps = translate_corpus(&ens, &sources, src, tgt, decode)?;
        let report = evaluate_tokens(&lowercase(&hyps, cfg), &lowercase(&refs, cfg), cfg.metrics)?;
        insert_report(&mut scored.metrics, split.name(), &report);
        scored.hypotheses.insert(split, hyps);
    }
    Ok(scored)
}

fn lowercase(s: &[Vec<String>], cfg: &RunConfig) -> Vec<Vec<String>> {
    if !cfg.metrics.lowercase {
        return s.to_vec();
    }
    s.iter().map(|t| t.iter().map(|w| w.to_lowercase()).collect()).collect()
}

fn insert_report(metrics: &mut BTreeMap<String, f64>, prefix: &str, r: &MetricReport) {
    for (n, b) in r.bleu.iter().enumerate() {
        metrics.insert(format!("{prefix}_bleu{}", n + 1), *b);
    }
    metrics.insert(format!("{prefix}_rouge_l"), r.rouge_l);
    metrics.insert(format!("{prefix}_meteor"), r.meteor);
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Beam => "beam",
        SweepAxis::Warmup => "warmup",
        SweepAxis::Lr => "lr",
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Parses a comma-separated list of numbers.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| UsageError(format!("`{s}` is not a number"))))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        bail!(UsageError("sweep needs at least one value".into()));
    }
    Ok(values)
}

/// The standard grid for each axis: beam widths 1 to 10 then 15 to 100 in
/// steps of 5, warmup 1k to 8k, and the learning rates 0.01 to 1.
pub fn default_grid(axis: SweepAxis) -> Vec<f64> {
    match axis {
        SweepAxis::Beam => (1..=10).chain((15..=100).step_by(5)).map(f64::from).collect(),
        SweepAxis::Warmup => (1..=8).map(|k| f64::from(k) * 1000.0).collect(),
        SweepAxis::Lr => vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    }
}

fn sweep_table(axis: SweepAxis, rows: &[(f64, BTreeMap<String, f64>)]) -> String {
    let cell = |m: &BTreeMap<String, f64>, k: &str| m.get(k).map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"));
    let mut out = format!("{}\tdev_bleu4\ttest_bleu4\n", axis_name(axis));
    for (v, m) in rows {
        out.push_str(&format!("{}\t{}\t{}\n", format_value(*v), cell(m, "dev_bleu4"), cell(m, "test_bleu4")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beam_grid_matches_the_figure_axis() {
        let g = default_grid(SweepAxis::Beam);
        assert_eq!(g.len(), 28);
        assert_eq!(&g[..10], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(g[10], 15.0);
        assert_eq!(*g.last().unwrap(), 100.0);
    }

    #[test]
    fn warmup_grid_has_eight_rows() {
        let g = default_grid(SweepAxis::Warmup);
        assert_eq!(g, vec![1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 7000.0, 8000.0]);
    }

    #[test]
    fn grids_parse_and_reject_empty_lists() {
        assert_eq!(parse_grid("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert!(parse_grid("").unwrap_err().is::<UsageError>());
        assert!(parse_grid(" , ").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn single_value_table_has_one_row() {
        let mut m = BTreeMap::new();
        m.insert("dev_bleu4".to_owned(), 12.345);
        let t = sweep_table(SweepAxis::Lr, &[(0.5, m)]);
        assert_eq!(t, "lr\tdev_bleu4\ttest_bleu4\n0.5\t12.35\t-\n");
    }
}
