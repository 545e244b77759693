//! Acceptance suite: one PASS/FAIL/SKIP line per primary criterion.
//!
//! Every expected value is derived here, independently of the library code
//! under test. Tolerances are fixed constants below.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use g2t_cli::commands::{default_grid, BEST_CHECKPOINT, REPORT_FILE};
use g2t_cli::{run, SweepAxis};
use g2t_core::corpus::{build_vocab, corpus_statistics, decode, load_dir, synthetic_corpus, ParallelCorpus, Side, Split, BOS_ID, EOS_ID};
use g2t_core::decoding::{beam_search, ensemble_distribution, greedy_decode, DecodeConfig, Ensemble};
use g2t_core::metrics::{bleu, lcs_len, meteor, rouge_l};
use g2t_core::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use g2t_core::training::{
    batch_loss, loss_and_gradients, noam_lr, token_accuracy, train, AdamConfig, BatchUnit, Example, OptimizerState,
    TrainConfig, TrainData,
};
use g2t_core::transformer::{Mode, ModelConfig, TransformerModel};

const GRAD_TOL_F64: f64 = 1e-5;
const GRAD_TOL_F32: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const MEMO_BUDGET: Duration = Duration::from_secs(600);
const MEMO_MIN_ACCURACY: f64 = 0.99;
const MEMO_MIN_EXACT: usize = 48;
const METRIC_TOL: f64 = 1e-4;
const LCS_FIXTURES: usize = 1000;
const SCHEDULE_TOL: f64 = 1e-12;
const ADAM_TOL: f64 = 1e-10;
const PHOENIX_RAW_BLEU: (f64, f64) = (1.36, 0.2);
const ASLG_RAW_BLEU: (f64, f64) = (20.63, 0.5);
const ASLG_PREPARED_BLEU: (f64, f64) = (38.37, 1.0);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------------------
// Gradients

#[derive(Debug, Clone, Copy)]
enum Op {
    MatmulLeft,
    MatmulRight,
    MatmulBtLeft,
    MatmulBtRight,
    Transpose,
    Add,
    Mul,
    AddRow,
    Scale,
    Relu,
    Softmax,
    MaskedSoftmax,
    LayerNormInput,
    LayerNormGain,
    LayerNormBias,
    Dropout,
    Gather,
    SliceCols,
    SliceRows,
    ConcatCols,
    ConcatRows,
    Sum,
    Mean,
    CrossEntropy,
    SmoothedCrossEntropy,
}

const OPS: [Op; 25] = [
    Op::MatmulLeft,
    Op::MatmulRight,
    Op::MatmulBtLeft,
    Op::MatmulBtRight,
    Op::Transpose,
    Op::Add,
    Op::Mul,
    Op::AddRow,
    Op::Scale,
    Op::Relu,
    Op::Softmax,
    Op::MaskedSoftmax,
    Op::LayerNormInput,
    Op::LayerNormGain,
    Op::LayerNormBias,
    Op::Dropout,
    Op::Gather,
    Op::SliceCols,
    Op::SliceRows,
    Op::ConcatCols,
    Op::ConcatRows,
    Op::Sum,
    Op::Mean,
    Op::CrossEntropy,
    Op::SmoothedCrossEntropy,
];

/// Values exactly representable in f32, so both precisions see the same inputs.
fn random_f32_exact(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32 as f64).collect()
}

fn input_shape(op: Op) -> Vec<usize> {
    match op {
        Op::MatmulRight => vec![4, 2],
        Op::MatmulBtRight => vec![5, 4],
        Op::LayerNormGain | Op::LayerNormBias | Op::AddRow => vec![4],
        Op::Gather => vec![5, 3],
        Op::SliceRows => vec![4, 3],
        Op::CrossEntropy | Op::SmoothedCrossEntropy => vec![4, 5],
        _ => vec![3, 4],
    }
}

fn constant<T: Real>(g: &mut Graph<T>, shape: &[usize], data: &[f64]) -> Var {
    g.constant(Tensor::from_f64(shape, data).unwrap())
}

/// Applies `op` to `x`; `k` holds the fixed operands.
fn apply<T: Real>(op: Op, g: &mut Graph<T>, x: Var, k: &[f64]) -> Var {
    match op {
        Op::MatmulLeft => {
            let b = constant(g, &[4, 2], &k[..8]);
            g.matmul(x, b).unwrap()
        }
        Op::MatmulRight => {
            let a = constant(g, &[3, 4], &k[..12]);
            g.matmul(a, x).unwrap()
        }
        Op::MatmulBtLeft => {
            let b = constant(g, &[5, 4], &k[..20]);
            g.matmul_bt(x, b).unwrap()
        }
        Op::MatmulBtRight => {
            let a = constant(g, &[3, 4], &k[..12]);
            g.matmul_bt(a, x).unwrap()
        }
        Op::Transpose => g.transpose(x).unwrap(),
        Op::Add => {
            let b = constant(g, &[3, 4], &k[..12]);
            let y = g.add(x, b).unwrap();
            g.add(y, x).unwrap()
        }
        Op::Mul => {
            let b = constant(g, &[3, 4], &k[..12]);
            let y = g.mul(x, b).unwrap();
            g.mul(y, x).unwrap()
        }
        Op::AddRow => {
            let a = constant(g, &[2, 4], &k[..8]);
            g.add_row(a, x).unwrap()
        }
        Op::Scale => g.scale(x, T::from_f64_lossy(0.375)).unwrap(),
        Op::Relu => g.relu(x).unwrap(),
        Op::Softmax => g.softmax(x, None).unwrap(),
        Op::MaskedSoftmax => {
            let mask = [false, true, true, false, false, false, true, false, true, false, false, false];
            g.softmax(x, Some(&mask)).unwrap()
        }
        Op::LayerNormInput => {
            let gain = constant(g, &[4], &k[..4]);
            let bias = constant(g, &[4], &k[4..8]);
            g.layer_norm(x, gain, bias, T::from_f64_lossy(1e-6)).unwrap()
        }
        Op::LayerNormGain => {
            let input = constant(g, &[3, 4], &k[..12]);
            let bias = constant(g, &[4], &k[12..16]);
            g.layer_norm(input, x, bias, T::from_f64_lossy(1e-6)).unwrap()
        }
        Op::LayerNormBias => {
            let input = constant(g, &[3, 4], &k[..12]);
            let gain = constant(g, &[4], &k[12..16]);
            g.layer_norm(input, gain, x, T::from_f64_lossy(1e-6)).unwrap()
        }
        Op::Dropout => g.dropout(x, 0.25, true, &mut SeededRng::new(77)).unwrap(),
        Op::Gather => g.gather(x, &[4, 0, 4, 2]).unwrap(),
        Op::SliceCols => g.slice_cols(x, 1, 2).unwrap(),
        Op::SliceRows => g.slice_rows(x, 1, 2).unwrap(),
        Op::ConcatCols => {
            let a = g.slice_cols(x, 0, 1).unwrap();
            let b = g.slice_cols(x, 1, 3).unwrap();
            g.concat_cols(&[b, a, b]).unwrap()
        }
        Op::ConcatRows => g.concat_rows(&[x, x]).unwrap(),
        Op::Sum => g.sum(x).unwrap(),
        Op::Mean => g.mean(x).unwrap(),
        Op::CrossEntropy => g.cross_entropy(x, &[2, 1, 0, 4], 0.0, None).unwrap(),
        Op::SmoothedCrossEntropy => g.cross_entropy(x, &[2, 1, 0, 4], 0.1, Some(1)).unwrap(),
    }
}

/// `sum(w ⊙ op(x))` and, optionally, its gradient with respect to `x`.
fn weighted_loss<T: Real>(op: Op, x: &[f64], k: &[f64], w: &[f64], grad: bool) -> (f64, Vec<f64>) {
    let mut store = ParamStore::<T>::new();
    let id = store.add("x", Tensor::from_f64(&input_shape(op), x).unwrap());
    let mut g = Graph::with_params(&store);
    let xv = g.param(id);
    let y = apply(op, &mut g, xv, k);
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let wv = constant(&mut g, &shape, &w[..n]);
    let p = g.mul(y, wv).unwrap();
    let s = g.sum(p).unwrap();
    let value = g.value(s).item().to_f64_lossy();
    if !grad {
        return (value, Vec::new());
    }
    let grads = g.backward(s).unwrap();
    (value, grads.get_or_zeros(id, &store).to_f64_vec())
}

/// Worst relative error over all ops: (f64 analytic vs f64 FD, f32 analytic vs f64 FD).
fn check_ops() -> (f64, f64, String) {
    let mut rng = SeededRng::new(2024);
    let (mut worst64, mut worst32, mut at) = (0.0f64, 0.0f64, String::new());
    for op in OPS {
        let n: usize = input_shape(op).iter().product();
        let x = random_f32_exact(n, &mut rng);
        let k = random_f32_exact(24, &mut rng);
        let w = random_f32_exact(64, &mut rng);
        let (_, g64) = weighted_loss::<f64>(op, &x, &k, &w, true);
        let (_, g32) = weighted_loss::<f32>(op, &x, &k, &w, true);
        let h = 1e-6;
        for i in 0..n {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let fd = (weighted_loss::<f64>(op, &up, &k, &w, false).0 - weighted_loss::<f64>(op, &down, &k, &w, false).0)
                / (2.0 * h);
            let e64 = rel_err(g64[i], fd, 1e-6);
            let e32 = rel_err(g32[i], fd, 1e-3);
            if e64 > worst64 {
                worst64 = e64;
                at = format!("{op:?}[{i}]");
            }
            worst32 = worst32.max(e32);
        }
    }
    (worst64, worst32, at)
}

fn mini(tied: bool) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        d_model: 16,
        num_heads: 2,
        ffn_dim: 32,
        dropout: 0.0,
        tie_decoder_embeddings: tied,
        max_positions: 32,
        ..ModelConfig::default()
    }
    .with_vocab(11, 11)
}

fn mini_batch() -> Vec<Example> {
    vec![
        Example::new(vec![4, 7, 9, 10, 5], vec![6, 8, 4]),
        Example::new(vec![8, 4], vec![10, 5, 5, 9, 7]),
    ]
}

fn model_loss(model: &TransformerModel<f64>, ex: &[Example]) -> f64 {
    let refs: Vec<&Example> = ex.iter().collect();
    let mut g = Graph::with_params(model.params());
    let l = batch_loss(model, &mut g, &refs, 0.1, &mut Mode::Inference).unwrap();
    g.value(l).item()
}

fn model_fd(model: &TransformerModel<f64>, id: ParamId, k: usize, h: f64, ex: &[Example]) -> f64 {
    let mut m = model.clone();
    let x = m.params().value(id).data()[k];
    m.params_mut().value_mut(id).data_mut()[k] = x + h;
    let up = model_loss(&m, ex);
    m.params_mut().value_mut(id).data_mut()[k] = x - h;
    let down = model_loss(&m, ex);
    (up - down) / (2.0 * h)
}

fn model_grads<T: Real>(model: &TransformerModel<T>, ex: &[Example]) -> Vec<(ParamId, Vec<f64>)> {
    let refs: Vec<&Example> = ex.iter().collect();
    let (_, grads) = loss_and_gradients(model, &refs, 0.1, &mut Mode::Inference).unwrap();
    model
        .params()
        .iter()
        .map(|(id, _)| (id, grads.get_or_zeros(id, model.params()).to_f64_vec()))
        .collect()
}

/// Every coordinate in f64; 40 sampled coordinates in f32.
fn check_model(tied: bool) -> (f64, f64, usize) {
    let ex = mini_batch();
    let reference = TransformerModel::<f64>::new(mini(tied), &mut SeededRng::new(31)).unwrap();
    let single: TransformerModel<f32> = reference.cast();
    let exact: TransformerModel<f64> = single.cast();
    let mut worst64 = 0.0f64;
    let mut count = 0;
    let g64 = model_grads(&exact, &ex);
    for (id, g) in &g64 {
        for (k, &a) in g.iter().enumerate() {
            worst64 = worst64.max(rel_err(a, model_fd(&exact, *id, k, 1e-6, &ex), 1e-4));
            count += 1;
        }
    }
    let g32 = model_grads(&single, &ex);
    let mut rng = SeededRng::new(33);
    let mut worst32 = 0.0f64;
    for _ in 0..40 {
        let p = rng.below(g32.len());
        let k = rng.below(g32[p].1.len());
        let fd = model_fd(&exact, g32[p].0, k, 1e-3, &ex);
        worst32 = worst32.max(rel_err(g32[p].1[k], fd, 1e-3));
    }
    (worst64, worst32, count)
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let (op64, op32, at) = check_ops();
    let (u64_, u32_, nu) = check_model(false);
    let (t64, t32, nt) = check_model(true);
    let elapsed = start.elapsed();
    let worst64 = op64.max(u64_).max(t64);
    let worst32 = op32.max(u32_).max(t32);
    check(
        worst64 < GRAD_TOL_F64 && worst32 < GRAD_TOL_F32 && elapsed < GRAD_BUDGET,
        format!(
            "{} ops + full model ({nu} untied, {nt} tied coords): worst rel err f64 {worst64:.2e} (ops worst at {at}), f32 {worst32:.2e}; {:.1}s",
            OPS.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// Memorization

fn memorization() -> Verdict {
    let start = Instant::now();
    let full = synthetic_corpus(500, 11);
    let pairs = full.pairs(Split::Train)[..50].to_vec();
    let mut corpus = ParallelCorpus::new("gloss", "de");
    corpus.insert_split(Split::Dev, pairs[..10].to_vec());
    corpus.insert_split(Split::Train, pairs);
    let sv = build_vocab(&corpus, Side::Source);
    let tv = build_vocab(&corpus, Side::Target);
    let data = TrainData::from_corpus(&corpus, sv.clone(), tv.clone()).unwrap();
    let cfg = ModelConfig {
        num_layers: 2,
        d_model: 64,
        num_heads: 4,
        ffn_dim: 128,
        dropout: 0.0,
        ..ModelConfig::default()
    }
    .with_vocab(sv.len(), tv.len());
    let model = TransformerModel::<f32>::new(cfg, &mut SeededRng::new(5)).unwrap();
    let tc = TrainConfig {
        initial_lr: 0.5,
        warmup_steps: 50,
        batch_size: 50,
        batch_unit: BatchUnit::Sentences,
        patience: 10_000,
        max_epochs: 120,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = train(model, &data, &tc, None).unwrap().best;
    let acc = token_accuracy(&model, &data.train).unwrap();
    let ens = Ensemble::single(&model);
    let dc = DecodeConfig {
        beam_width: 1,
        ..Default::default()
    };
    let exact = data
        .train
        .iter()
        .filter(|ex| decode(greedy_decode(&ens, &ex.source, &dc).unwrap().output_ids(), &tv) == decode(&ex.target, &tv))
        .count();
    let elapsed = start.elapsed();
    check(
        acc > MEMO_MIN_ACCURACY && exact >= MEMO_MIN_EXACT && elapsed < MEMO_BUDGET,
        format!(
            "d_model 64, 50 pairs: token accuracy {:.2}%, {exact}/50 exact; {:.1}s",
            100.0 * acc,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// Metrics

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// LCS by enumerating every subsequence of the shorter sentence.
fn brute_lcs(a: &[usize], b: &[usize]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |s: &[usize]| {
        let mut it = long.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << short.len())
        .filter_map(|mask| {
            let s: Vec<usize> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| short[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

fn metric_fixtures() -> Verdict {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    // BLEU-1 of "the cat sat" against "the cat sat down": all unigrams match, BP = e^(1 - 4/3).
    let bleu1 = bleu(&[toks("the cat sat")], &[toks("the cat sat down")], 1).unwrap().score;
    expect("BLEU-1", bleu1, 100.0 * (1.0f64 - 4.0 / 3.0).exp(), METRIC_TOL);
    // ROUGE-L of "a b c" against "a c d": LCS 2, P = R = 2/3.
    let r = rouge_l(&[toks("a b c")], &[toks("a c d")], 1.0).unwrap();
    let (p, rc) = (2.0 / 3.0, 2.0 / 3.0);
    expect("ROUGE-L", r, 100.0 * 2.0 * p * rc / (p + rc), METRIC_TOL);
    expect("ROUGE-L disjoint", rouge_l(&[toks("a b")], &[toks("c d")], 1.0).unwrap(), 0.0, 0.0);
    // METEOR of "the cat" against itself: F = 1, penalty 0.5 (1/2)^3.
    let m = meteor(&[toks("the cat")], &[toks("the cat")]).unwrap();
    expect("METEOR", m, 100.0 * (1.0 - 0.5 * 0.5f64.powi(3)), METRIC_TOL);
    expect("METEOR no match", meteor(&[toks("x y")], &[toks("a b")]).unwrap(), 0.0, 0.0);
    // Identical corpora: BLEU is exactly 100 at every order.
    let corpus: Vec<Vec<String>> = ["es regnet im norden", "morgen wird es sonnig und warm", "am tag bis zu zwanzig grad"]
        .iter()
        .map(|s| toks(s))
        .collect();
    for n in 1..=4 {
        let b = bleu(&corpus, &corpus, n).unwrap().score;
        if b != 100.0 {
            failures.push(format!("identical BLEU-{n} = {b}"));
        }
    }
    let mut rng = SeededRng::new(99);
    let mut mismatches = 0;
    for _ in 0..LCS_FIXTURES {
        let a: Vec<usize> = (0..rng.below(9)).map(|_| rng.below(4)).collect();
        let b: Vec<usize> = (0..rng.below(9)).map(|_| rng.below(4)).collect();
        let words = |s: &[usize]| -> Vec<String> { s.iter().map(|i| ["a", "b", "c", "d"][*i].to_owned()).collect() };
        if lcs_len(&words(&a), &words(&b)) != brute_lcs(&a, &b) {
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        failures.push(format!("{mismatches} LCS mismatches"));
    }
    let detail = format!(
        "BLEU-1 {bleu1:.4}, ROUGE-L {r:.4}, METEOR {m:.4}, identical BLEU 100, LCS agrees on {LCS_FIXTURES} random fixtures"
    );
    if failures.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

// ---------------------------------------------------------------------------
// Datasets (conditional)

fn lower(c: &ParallelCorpus, split: Split, side: Side) -> Vec<Vec<String>> {
    c.pairs(split)
        .iter()
        .map(|p| p.side(side).iter().map(|t| t.to_lowercase()).collect())
        .collect()
}

fn raw_bleu(c: &ParallelCorpus, split: Split) -> f64 {
    bleu(&lower(c, split, Side::Source), &lower(c, split, Side::Target), 4).unwrap().score
}

fn within(v: f64, (want, tol): (f64, f64)) -> bool {
    (v - want).abs() <= tol
}

fn datasets() -> Verdict {
    let phoenix = std::env::var("G2T_PHOENIX_DIR").ok();
    let aslg = std::env::var("G2T_ASLG_DIR").ok();
    if phoenix.is_none() && aslg.is_none() {
        return Verdict::Skip("set G2T_PHOENIX_DIR and/or G2T_ASLG_DIR to the licensed corpora".into());
    }
    let mut ok = true;
    let mut parts = Vec::new();
    if let Some(dir) = phoenix {
        let c = load_dir(Path::new(&dir)).expect("PHOENIX corpus");
        let b = raw_bleu(&c, Split::Test);
        ok &= within(b, PHOENIX_RAW_BLEU);
        let g = corpus_statistics(&c, Side::Source);
        let t = corpus_statistics(&c, Side::Target);
        let stats = (
            g.get(Split::Train).phrases,
            g.get(Split::Dev).phrases,
            g.get(Split::Test).phrases,
            g.get(Split::Train).vocab,
            t.get(Split::Train).vocab,
            g.get(Split::Train).singletons,
            t.get(Split::Train).singletons,
        );
        ok &= stats == (7096, 519, 642, 1066, 2887, Some(337), Some(1077));
        parts.push(format!("PHOENIX raw BLEU-4 {b:.2}, stats {stats:?}"));
    }
    if let Some(dir) = aslg {
        let c = load_dir(Path::new(&dir)).expect("ASLG corpus");
        let raw = raw_bleu(&c, Split::Test);
        let tmp = tempfile::tempdir().unwrap();
        let code = run([
            "g2t",
            "--workdir",
            tmp.path().to_str().unwrap(),
            "--set",
            &format!("data.raw_dir=\"{dir}\""),
            "--set",
            "data.mode=\"aslg\"",
            "preprocess",
        ]);
        let prepared = load_dir(&tmp.path().join("data/prepared")).expect("prepared ASLG");
        let pre = raw_bleu(&prepared, Split::Test);
        ok &= code == 0 && within(raw, ASLG_RAW_BLEU) && within(pre, ASLG_PREPARED_BLEU);
        parts.push(format!("ASLG raw BLEU-4 {raw:.2}, preprocessed {pre:.2}"));
    }
    check(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// Decoding

fn tiny_model(src: usize, tgt: usize, seed: u64, sharpness: f64) -> TransformerModel<f64> {
    let cfg = ModelConfig {
        num_layers: 1,
        d_model: 8,
        num_heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        max_positions: 32,
        ..ModelConfig::default()
    }
    .with_vocab(src, tgt);
    let mut m = TransformerModel::new(cfg, &mut SeededRng::new(seed)).unwrap();
    let out = m.output_projection();
    let w = m.params().value(out).map(|v| v * sharpness);
    m.params_mut().replace(out, w);
    m
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - lse).collect()
}

/// Best length-normalised sequence over every continuation of at most `max_len` tokens.
fn exhaustive_best(m: &TransformerModel<f64>, src: &[usize], vocab: usize, max_len: usize) -> (f64, Vec<usize>) {
    let memory = m.encode_source(src).unwrap();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut stack = vec![(vec![BOS_ID], 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let logp = log_softmax(&m.decode_step(&memory, &prefix).unwrap().0);
        for tok in 0..vocab {
            let mut next = prefix.clone();
            next.push(tok);
            let total = lp + logp[tok];
            let len = next.len() - 1;
            if tok == EOS_ID || len == max_len {
                let score = total / len as f64;
                if score > best.0 {
                    best = (score, next[1..].to_vec());
                }
            } else {
                stack.push((next, total));
            }
        }
    }
    best
}

fn decoding_oracles() -> Verdict {
    let mut failures = Vec::new();
    for seed in 0..100 {
        let m = tiny_model(9, 7, 1000 + seed, 4.0);
        let ens = Ensemble::single(&m);
        let cfg = DecodeConfig {
            beam_width: 1,
            max_length: Some(8),
            ..Default::default()
        };
        let src = [4 + seed as usize % 5, 5, 6];
        let g = greedy_decode(&ens, &src, &cfg).unwrap();
        let b = beam_search(&ens, &src, &cfg).unwrap();
        if g.tokens != b[0].tokens {
            failures.push(format!("beam 1 != greedy for seed {seed}"));
        }
    }
    let mut exhaustive_cases = 0;
    for vocab in [5usize] {
        for max_len in 1..=4 {
            for seed in 0..5 {
                let m = tiny_model(6, vocab, 2000 + seed + 10 * max_len as u64, 3.0);
                let (score, seq) = exhaustive_best(&m, &[4, 5], vocab, max_len);
                let cfg = DecodeConfig {
                    beam_width: vocab.pow(max_len as u32),
                    max_length: Some(max_len),
                    alpha: 1.0,
                    replace_unk: false,
                };
                let top = &beam_search(&Ensemble::single(&m), &[4, 5], &cfg).unwrap()[0];
                if top.tokens[1..] != seq[..] || (top.normalized_score(1.0) - score).abs() > 1e-9 {
                    failures.push(format!("beam != exhaustive (max_len {max_len}, seed {seed})"));
                }
                exhaustive_cases += 1;
            }
        }
    }
    let m = tiny_model(9, 8, 3000, 2.0);
    let single = Ensemble::single(&m);
    for k in 2..=4 {
        let copies = Ensemble::new(vec![&m; k]).unwrap();
        for src in [[4usize, 5, 8], [7, 7, 6]] {
            let p1 = ensemble_distribution(&single, &single.encode(&src).unwrap(), &[BOS_ID, 5]).unwrap().0;
            let pk = ensemble_distribution(&copies, &copies.encode(&src).unwrap(), &[BOS_ID, 5]).unwrap().0;
            let cfg = DecodeConfig::default();
            let b1 = beam_search(&single, &src, &cfg).unwrap();
            let bk = beam_search(&copies, &src, &cfg).unwrap();
            let same_bits = p1.iter().zip(&pk).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same_bits || b1 != bk {
                failures.push(format!("ensemble of {k} copies differs"));
            }
        }
    }
    if failures.is_empty() {
        Verdict::Pass(format!(
            "beam 1 = greedy on 100 models; beam = exhaustive on {exhaustive_cases} cases (vocab 5, max_length 1..4); k-copy ensembles bit-identical for k = 2..4"
        ))
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

fn schedule_and_adam() -> Verdict {
    let (lr0, d, warmup) = (0.5, 512usize, 3000u64);
    let peak = lr0 / ((d as f64).sqrt() * (warmup as f64).sqrt());
    let at = noam_lr(warmup, lr0, d, warmup);
    let before = noam_lr(warmup - 1, lr0, d, warmup);
    let after = noam_lr(warmup + 1, lr0, d, warmup);
    let rising = lr0 / (d as f64).sqrt() * (warmup - 1) as f64 / (warmup as f64).powf(1.5);
    let falling = lr0 / (d as f64).sqrt() / ((warmup + 1) as f64).sqrt();
    let schedule_ok = (at - peak).abs() < SCHEDULE_TOL
        && (before - rising).abs() < SCHEDULE_TOL
        && (after - falling).abs() < SCHEDULE_TOL
        && before < at
        && after < at;

    let cfg = AdamConfig {
        beta1: 0.9,
        beta2: 0.998,
        eps: 1e-8,
    };
    let values = [0.7, -1.3, 0.05, 2.0];
    let grads = [0.25, -3.0, 1e-4, 0.0];
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[4], &values).unwrap());
    store.get_mut(id).grad = Tensor::from_f64(&[4], &grads).unwrap();
    let mut opt = OptimizerState::new(&store);
    let lr = 2e-3;
    opt.adam_step(&mut store, lr, &cfg).unwrap();
    let mut worst = 0.0f64;
    for i in 0..4 {
        let m_hat = (1.0 - cfg.beta1) * grads[i] / (1.0 - cfg.beta1);
        let v_hat = (1.0 - cfg.beta2) * grads[i] * grads[i] / (1.0 - cfg.beta2);
        let expected = values[i] - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        worst = worst.max((store.value(id).data()[i] - expected).abs());
    }
    check(
        schedule_ok && worst < ADAM_TOL,
        format!(
            "peak {at:.12e} vs closed form {peak:.12e}, neighbours continuous; first Adam step max abs err {worst:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// Smoke run, tied parameter count and determinism (through the CLI)

const SMOKE_OVERRIDES: &[&str] = &[
    "model.num_layers=2",
    "model.d_model=64",
    "model.num_heads=4",
    "model.ffn_dim=128",
    "model.dropout=0.1",
    "train.batch_size=600",
    "train.warmup_steps=100",
    "train.initial_lr=1.0",
    "train.patience=5",
    "train.max_epochs=40",
    "run.seeds=[3]",
];

fn g2t(workdir: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["g2t".to_owned(), "--workdir".to_owned(), workdir.display().to_string()];
    for o in SMOKE_OVERRIDES {
        args.push("--set".into());
        args.push((*o).into());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    run(args)
}

/// Writes the synthetic 500-pair corpus and runs preprocess, train, translate and evaluate.
fn pipeline(workdir: &Path) -> Result<(), String> {
    synthetic_corpus(500, 17)
        .write_dir(&workdir.join("data/raw"))
        .map_err(|e| e.to_string())?;
    let ckpt = format!("runs/g2t/seed3/{BEST_CHECKPOINT}");
    let steps: [&[&str]; 5] = [
        &["preprocess"],
        &["train"],
        &["translate", "--checkpoint", &ckpt, "--input", "data/prepared/test.gloss", "--output", "test.hyp"],
        &["translate", "--checkpoint", &ckpt, "--checkpoint", &ckpt, "--input", "data/prepared/test.gloss", "--output", "test.ens.hyp"],
        &["evaluate", "--hyp", "test.hyp", "--ref", "data/prepared/test.txt", "--output", "test.report.json"],
    ];
    for s in steps {
        let code = g2t(workdir, s);
        if code != 0 {
            return Err(format!("`g2t {}` exited with {code}", s.join(" ")));
        }
    }
    let code = g2t(
        workdir,
        &["evaluate", "--hyp", "data/prepared/dev.gloss", "--ref", "data/prepared/dev.txt", "--output", "raw.dev.json"],
    );
    if code != 0 {
        return Err(format!("raw-gloss evaluation exited with {code}"));
    }
    Ok(())
}

fn json_number(path: &Path, pointer: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.pointer(pointer).and_then(serde_json::Value::as_f64).unwrap_or(f64::NAN)
}

fn smoke_run(dir: &Path) -> Verdict {
    if let Err(e) = pipeline(dir) {
        return Verdict::Fail(e);
    }
    let report = dir.join("runs/g2t").join(REPORT_FILE);
    let model_bleu = json_number(&report, "/mean/dev_bleu4");
    // Raw-gloss baseline, recomputed here from the prepared dev files.
    let prepared = load_dir(&dir.join("data/prepared")).unwrap();
    let baseline = raw_bleu(&prepared, Split::Dev);
    let cli_baseline = json_number(&dir.join("raw.dev.json"), "/bleu/3");
    let ensemble_same = fs::read(dir.join("test.hyp")).ok() == fs::read(dir.join("test.ens.hyp")).ok();

    // Weight tying removes exactly one V_tgt x d_model matrix.
    let mut tying = Vec::new();
    for (d, heads, v_src, v_tgt) in [(64, 4, 61, 97), (512, 8, 1066, 2887)] {
        let cfg = |tied| {
            ModelConfig {
                d_model: d,
                num_heads: heads,
                ffn_dim: 2 * d,
                tie_decoder_embeddings: tied,
                ..ModelConfig::default()
            }
            .with_vocab(v_src, v_tgt)
        };
        let untied = TransformerModel::<f32>::new(cfg(false), &mut SeededRng::new(1)).unwrap().num_parameters();
        let tied = TransformerModel::<f32>::new(cfg(true), &mut SeededRng::new(1)).unwrap().num_parameters();
        tying.push((untied - tied, v_tgt * d));
    }
    let tying_ok = tying.iter().all(|(a, b)| a == b);
    check(
        model_bleu > baseline && (cli_baseline - baseline).abs() < 1e-9 && ensemble_same && tying_ok,
        format!(
            "500 synthetic pairs: dev BLEU-4 {model_bleu:.2} vs raw-gloss baseline {baseline:.2}; 2-copy ensemble output identical: {ensemble_same}; tied savings {tying:?} (got, V_tgt*d)"
        ),
    )
}

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(first: &Path) -> Verdict {
    let second = tempfile::tempdir().unwrap();
    if let Err(e) = pipeline(second.path()) {
        return Verdict::Fail(e);
    }
    let a = collect_files(first);
    let b = collect_files(second.path());
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let checkpoints = a.keys().filter(|k| k.extension().is_some_and(|e| e == "bin" || e == "ckpt")).count();
    let beam_grid = default_grid(SweepAxis::Beam).len();
    check(
        differing.is_empty() && checkpoints > 0,
        if differing.is_empty() {
            format!("{} output files byte-identical across two full runs ({checkpoints} checkpoints, hypotheses, reports, logs); beam grid {beam_grid} values", a.len())
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

fn main() {
    let smoke_dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        ("gradient correctness", Box::new(gradients)),
        ("memorization oracle", Box::new(memorization)),
        ("metric fixtures", Box::new(metric_fixtures)),
        ("dataset oracles", Box::new(datasets)),
        ("decoding oracles", Box::new(decoding_oracles)),
        ("schedule and optimizer", Box::new(schedule_and_adam)),
        ("smoke run and tied embeddings", Box::new(|| smoke_run(smoke_dir.path()))),
        ("determinism", Box::new(|| determinism(smoke_dir.path()))),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let line = match f() {
            Verdict::Pass(d) => format!("PASS  {name}: {d}"),
            Verdict::Skip(d) => format!("SKIP  {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                format!("FAIL  {name}: {d}")
            }
        };
        println!("{line}");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
