//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p moodpipe --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use moodpipe::audio::{netvlad_forward, NetVlad};
use moodpipe::config::PipelineConfig;
use moodpipe::corpus::{CorpusKind, Label};
use moodpipe::eval::{kfold_split, leak_check, metrics, ConfusionMatrix, ModelKind};
use moodpipe::models::text::attention_pool;
use moodpipe::models::{AudioModel, AudioModelConfig, FusionConfig, FusionExample, FusionModel, TextModel, TextModelConfig, Trainable};
use moodpipe::nn::param::uniform;
use moodpipe::nn::{grad_check, Bilstm, Coords, Gru, GruCell, Linear, LstmCell, Mat, ParamSet, RngState, Tape, Var};
use moodpipe::pipeline;
use moodpipe::sampling::{group_segments, training_samples, ParticipantFeatures, Sample};
use moodpipe::synth::{generate, Separability, SynthKind, SynthSpec};

type Outcome = Result<String, String>;

struct Suite {
    failed: Vec<&'static str>,
}

impl Suite {
    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name:<22} {secs:>7.1}s  {detail}"),
            Err(detail) => {
                println!("FAIL  {name:<22} {secs:>7.1}s  {detail}");
                self.failed.push(name);
            }
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Σ out ⊙ R for a fixed random R, so no coordinate sees a symmetric loss.
fn probe(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
    let (n, m) = tape.dim(out);
    let r = tape.input(uniform(n, m, 1.0, &mut RngState::new(seed)));
    let prod = tape.mul(out, r);
    let cols = tape.sum_rows(prod);
    let ones = tape.input(Mat::ones((m, 1)));
    tape.matmul(cols, ones)
}

fn sample(text: Mat, audio: Vec<Mat>, label: Label) -> Sample {
    Sample {
        audio: audio.into_iter().map(Arc::new).collect(),
        text,
        label,
        provenance: moodpipe::sampling::Provenance { participant: "x".into(), unit: moodpipe::sampling::Unit::Original },
    }
}

fn gradient_integrity() -> Outcome {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checks = 0usize;
    let mut note = |name: &str, report: moodpipe::nn::GradCheckReport| {
        checks += report.checked;
        if report.max_rel_error >= worst.0 {
            worst = (report.max_rel_error, format!("{name} {:?}", report.worst));
        }
    };
    for seed in 0..10u64 {
        let mut rng = RngState::new(100 + seed);
        let x = |rng: &mut RngState, n, m| uniform(n, m, 1.0, rng);

        let mut ps = ParamSet::new();
        let lin = Linear::new(&mut ps, "fc", 5, 4, &mut rng);
        let xi = x(&mut rng, 3, 5);
        note("linear", grad_check(&ps, |t| { let v = t.input(xi.clone()); let o = lin.forward(t, v); probe(t, o, seed) }, Coords::All));

        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "gru", 3, 4, &mut rng);
        let (xi, hi) = (x(&mut rng, 2, 3), x(&mut rng, 2, 4));
        note("gru-cell", grad_check(&ps, |t| { let (a, b) = (t.input(xi.clone()), t.input(hi.clone())); let o = cell.step(t, a, b); probe(t, o, seed) }, Coords::All));

        let mut ps = ParamSet::new();
        let gru = Gru::new(&mut ps, "gru", 3, 4, 2, 0.5, &mut rng);
        let xs: Vec<Mat> = (0..3).map(|_| x(&mut rng, 2, 3)).collect();
        note("gru-stack", grad_check(&ps, |t| {
            let vs: Vec<Var> = xs.iter().map(|m| t.input(m.clone())).collect();
            let outs = gru.forward(t, &vs, None);
            let all = t.concat_cols(&outs);
            probe(t, all, seed)
        }, Coords::All));

        let mut ps = ParamSet::new();
        let cell = LstmCell::new(&mut ps, "lstm", 3, 4, &mut rng);
        let (xi, hi, ci) = (x(&mut rng, 2, 3), x(&mut rng, 2, 4), x(&mut rng, 2, 4));
        note("lstm-cell", grad_check(&ps, |t| {
            let (a, b, c) = (t.input(xi.clone()), t.input(hi.clone()), t.input(ci.clone()));
            let (h, c) = cell.step(t, a, b, c);
            let both = t.concat_cols(&[h, c]);
            probe(t, both, seed)
        }, Coords::All));

        let mut ps = ParamSet::new();
        let bi = Bilstm::new(&mut ps, "bilstm", 3, 4, 2, 0.5, &mut rng);
        note("bilstm", grad_check(&ps, |t| {
            let vs: Vec<Var> = xs.iter().map(|m| t.input(m.clone())).collect();
            let (of, ob) = bi.forward(t, &vs, None);
            let all: Vec<Var> = of.iter().zip(&ob).map(|(&f, &b)| t.add(f, b)).collect();
            let all = t.concat_cols(&all);
            probe(t, all, seed)
        }, Coords::All));

        let mut ps = ParamSet::new();
        let nv = NetVlad::new(&mut ps, "netvlad", 5, 3, 4, &mut rng);
        let frames = x(&mut rng, 7, 5);
        note("netvlad", grad_check(&ps, |t| { let v = t.input(frames.clone()); let o = nv.forward(t, v); probe(t, o, seed) }, Coords::All));

        let mut ps = ParamSet::new();
        let w = ps.add("attention", x(&mut rng, 4, 1));
        let outs: Vec<Mat> = (0..4).map(|_| x(&mut rng, 2, 4)).collect();
        note("attention", grad_check(&ps, |t| {
            let vs: Vec<Var> = outs.iter().map(|m| t.input(m.clone())).collect();
            let (_, y) = attention_pool(t, &vs, w);
            probe(t, y, seed)
        }, Coords::All));

        // end-to-end models, dropout off: reduced sizes on every coordinate,
        // full sizes on sampled coordinates
        let label = if seed % 2 == 0 { Label::Depressed } else { Label::NonDepressed };
        let small_text = TextModel::new(TextModelConfig { input: 6, hidden: 3, layers: 2, fc_hidden: 4, dropout: 0.5 }, &mut rng);
        let s = sample(x(&mut rng, 3, 6), vec![], label);
        note("text-model", grad_check(&small_text.params, |t| small_text.batch_loss(t, &[&s], None), Coords::All));

        let small_audio = AudioModel::new(AudioModelConfig { mel_bins: 5, clusters: 3, embed: 4, hidden: 3, layers: 2, fc_hidden: 4, dropout: 0.5 }, &mut rng);
        let s = sample(Mat::zeros((3, 1)), (0..3).map(|i| x(&mut rng, 6 + i, 5)).collect(), label);
        note("audio-model", grad_check(&small_audio.params, |t| small_audio.batch_loss(t, &[&s], None), Coords::All));

        let full_text = TextModel::new(TextModelConfig::default(), &mut rng);
        let s = sample(x(&mut rng, 3, 1024), vec![], label);
        note("text-model-full", grad_check(&full_text.params, |t| full_text.batch_loss(t, &[&s], None), Coords::Sample { per_tensor: 3, seed }));

        let full_audio = AudioModel::new(AudioModelConfig::default(), &mut rng);
        let s = sample(Mat::zeros((3, 1)), (0..3).map(|_| x(&mut rng, 30, 80).mapv(|v| v * 5.0 - 10.0)).collect(), label);
        note("audio-model-full", grad_check(&full_audio.params, |t| full_audio.batch_loss(t, &[&s], None), Coords::Sample { per_tensor: 3, seed }));

        let mut fusion = FusionModel::new(FusionConfig::default(), &mut rng);
        *fusion.params.value_mut(fusion.modal_attention) = x(&mut rng, 1, 2);
        let e = FusionExample { text: x(&mut rng, 1, 128).into_raw_vec_and_offset().0, audio: x(&mut rng, 1, 256).into_raw_vec_and_offset().0, label };
        note("fusion-model", grad_check(&fusion.params, |t| fusion.batch_loss(t, &[&e], None), Coords::All));
    }
    let elapsed = start.elapsed();
    ensure(worst.0 < TOL, format!("max relative error {:.2e} at {} (tolerance {TOL:.0e})", worst.0, worst.1))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {:.1}s, budget 30s", elapsed.as_secs_f64()))?;
    Ok(format!("max relative error {:.2e} over {checks} coordinates, 10 seeds", worst.0))
}

fn metric_oracle() -> Outcome {
    let m = metrics(&ConfusionMatrix { tp: 11, fp: 3, tn: 20, fn_: 1 });
    let shown = format!("{:.2}/{:.2}/{:.2}", m.f1, m.recall, m.precision);
    ensure(shown == "0.85/0.92/0.79", format!("got F1/Recall/Precision {shown}"))?;
    Ok(format!("F1/Recall/Precision = {shown}"))
}

fn class_counts(samples: &[Sample]) -> (usize, usize) {
    let dep = samples.iter().filter(|s| s.label == Label::Depressed).count();
    (dep, samples.len() - dep)
}

fn resampling_arithmetic(tmp: &Path, three_response: &[ParticipantFeatures]) -> Outcome {
    let spec = SynthSpec {
        n_depressed: 30,
        n_control: 77,
        separability: Separability::Separable,
        kind: SynthKind::Interview { responses: 30 },
        seed: 3,
    };
    let corpus = tmp.join("interview_corpus");
    generate(&spec, &corpus).map_err(|e| e.to_string())?;
    let config = PipelineConfig {
        corpus: moodpipe::config::CorpusConfig { root: corpus, kind: CorpusKind::Interview },
        output: tmp.join("interview_out"),
        ..PipelineConfig::default()
    };
    pipeline::featurize(&config).map_err(|e| e.to_string())?;
    let set = pipeline::load_features(&config.output).map_err(|e| e.to_string())?;
    let refs: Vec<&ParticipantFeatures> = set.participants.iter().collect();
    let pool: usize = refs.iter().filter(|p| p.label == Label::Depressed).map(|p| p.responses() / 10).sum();
    ensure(pool >= 77, format!("depressed pool has only {pool} groups"))?;
    let balanced = training_samples(&refs, CorpusKind::Interview, &mut RngState::new(5)).map_err(|e| e.to_string())?;
    let counts = class_counts(&balanced.samples);
    ensure(counts == (77, 77), format!("interview balance gave {counts:?}, expected (77, 77)"))?;
    let distinct: BTreeSet<_> = balanced.samples.iter().map(|s| s.provenance.clone()).collect();
    ensure(distinct.len() == 154 && !balanced.summary.recycled, "minority groups were reused")?;

    let refs: Vec<&ParticipantFeatures> = three_response.iter().collect();
    let before = refs.iter().filter(|p| p.label == Label::Depressed).count();
    let augmented = training_samples(&refs, CorpusKind::ThreeResponse, &mut RngState::new(5)).map_err(|e| e.to_string())?;
    let (dep, non) = class_counts(&augmented.samples);
    ensure(dep == 6 * before, format!("{before} depressed became {dep}, expected {}", 6 * before))?;

    let mut groups = Vec::new();
    for n in [9usize, 10, 107] {
        let got = group_segments(&Array2::<f64>::zeros((n, 4)), "p").map(|g| g.len()).unwrap_or(0);
        ensure(got == n / 10, format!("N = {n} gave {got} groups"))?;
        groups.push(format!("N={n}:{got}"));
    }
    Ok(format!("interview 77/77 from a pool of {pool}; three-response {before}→{dep} depressed ({non} controls); groups {}", groups.join(" ")))
}

fn netvlad_invariance() -> Outcome {
    let mut rng = RngState::new(17);
    let mut ps = ParamSet::new();
    let layer = NetVlad::new(&mut ps, "netvlad", 80, 8, 256, &mut rng);
    let frames = uniform(120, 80, 3.0, &mut rng);
    let reference = netvlad_forward(&frames, &layer, &ps).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut order: Vec<usize> = (0..frames.nrows()).collect();
    for _ in 0..100 {
        order.shuffle(&mut rng);
        let shuffled = frames.select(ndarray::Axis(0), &order);
        let e = netvlad_forward(&shuffled, &layer, &ps).map_err(|e| e.to_string())?;
        worst = worst.max((&e - &reference).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:.2e} > 1e-12"))?;
    Ok(format!("max deviation {worst:.2e} over 100 shuffles"))
}

fn attention_properties() -> Outcome {
    let mut rng = RngState::new(23);
    let mut worst_sum = 0.0f64;
    let mut worst_hull = 0.0f64;
    for _ in 0..1000 {
        let t_len = rng.random_range(1..=12);
        let h = rng.random_range(1..=16);
        let scale = rng.random_range(0.1..20.0);
        let outputs: Vec<Mat> = (0..t_len).map(|_| uniform(1, h, scale, &mut rng)).collect();
        let mut ps = ParamSet::new();
        let w = ps.add("w", uniform(h, 1, scale, &mut rng));
        let mut tape = Tape::new(&ps);
        let vs: Vec<Var> = outputs.iter().map(|m| tape.input(m.clone())).collect();
        let (alpha, y) = attention_pool(&mut tape, &vs, w);
        let alpha = tape.value(alpha);
        ensure(alpha.iter().all(|&a| a >= 0.0), "negative attention weight")?;
        worst_sum = worst_sum.max((alpha.sum() - 1.0).abs());
        let y = tape.value(y);
        for d in 0..h {
            let lo = outputs.iter().map(|o| o[[0, d]]).fold(f64::INFINITY, f64::min);
            let hi = outputs.iter().map(|o| o[[0, d]]).fold(f64::NEG_INFINITY, f64::max);
            let v = y[[0, d]];
            let slack = 1e-12 * scale;
            worst_hull = worst_hull.max(lo - v - slack).max(v - hi - slack);
        }
    }
    ensure(worst_sum <= 1e-12, format!("Σα deviates by {worst_sum:.2e}"))?;
    ensure(worst_hull <= 0.0, format!("y leaves the convex hull by {worst_hull:.2e}"))?;

    // w = 0 gives the exact row mean
    let outputs: Vec<Mat> = (0..5).map(|_| uniform(1, 7, 2.0, &mut rng)).collect();
    let mut ps = ParamSet::new();
    let w = ps.add("w", Mat::zeros((7, 1)));
    let mut tape = Tape::new(&ps);
    let vs: Vec<Var> = outputs.iter().map(|m| tape.input(m.clone())).collect();
    let (_, y) = attention_pool(&mut tape, &vs, w);
    let mut mean_dev = 0.0f64;
    for d in 0..7 {
        let mean = outputs.iter().map(|o| o[[0, d]]).sum::<f64>() / 5.0;
        mean_dev = mean_dev.max((tape.value(y)[[0, d]] - mean).abs());
    }
    ensure(mean_dev <= 1e-15, format!("w = 0 differs from the row mean by {mean_dev:.2e}"))?;
    Ok(format!("1000 inputs: |Σα−1| ≤ {worst_sum:.1e}, y inside hull; w=0 mean error {mean_dev:.1e}"))
}

struct EndToEnd {
    config: PipelineConfig,
    labels: Vec<Label>,
    participants: Vec<ParticipantFeatures>,
}

fn e2e_config(corpus: &Path, out: PathBuf) -> PipelineConfig {
    let mut config = PipelineConfig {
        corpus: moodpipe::config::CorpusConfig { root: corpus.to_path_buf(), kind: CorpusKind::ThreeResponse },
        output: out,
        ..PipelineConfig::default()
    };
    config.crossval.k = 3;
    config.crossval.seed = 1;
    config
}

fn end_to_end(tmp: &Path) -> Result<(String, EndToEnd), String> {
    let start = Instant::now();
    let corpus = tmp.join("corpus");
    let spec = SynthSpec { n_depressed: 30, n_control: 132, separability: Separability::Separable, kind: SynthKind::ThreeResponse, seed: 1 };
    generate(&spec, &corpus).map_err(|e| e.to_string())?;
    let config = e2e_config(&corpus, tmp.join("out_a"));
    pipeline::featurize(&config).map_err(|e| e.to_string())?;
    let report = pipeline::crossval(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let f1 = |k: ModelKind| report.model(k).map(|m| m.pooled.metrics.f1).unwrap_or(f64::NAN);
    let (audio, text, fusion) = (f1(ModelKind::Audio), f1(ModelKind::Text), f1(ModelKind::Fusion));
    let detail = format!("pooled F1 audio {audio:.3}, text {text:.3}, fusion {fusion:.3}; {:.0}s", elapsed.as_secs_f64());
    let set = pipeline::load_features(&config.output).map_err(|e| e.to_string())?;
    let labels = set.participants.iter().map(|p| p.label).collect();
    let run = EndToEnd { config, labels, participants: set.participants };
    let ok = audio >= 0.95 && text >= 0.95 && fusion >= 0.95 && fusion >= audio.max(text) && elapsed < Duration::from_secs(600);
    if ok {
        Ok((detail, run))
    } else {
        Err(format!("{detail} (need each ≥ 0.95, fusion ≥ max, < 600s)"))
    }
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(bytes) = fs::read(&path) {
                out.insert(path.strip_prefix(root).unwrap_or(&path).to_path_buf(), bytes);
            }
        }
    }
    out
}

fn determinism(tmp: &Path, first: &EndToEnd) -> Outcome {
    let config = e2e_config(&first.config.corpus.root, tmp.join("out_b"));
    pipeline::featurize(&config).map_err(|e| e.to_string())?;
    pipeline::crossval(&config).map_err(|e| e.to_string())?;
    let a = tree_bytes(&pipeline::crossval_dir(&first.config.output));
    let b = tree_bytes(&pipeline::crossval_dir(&config.output));
    ensure(a.len() > 3, "first run wrote no artifacts")?;
    ensure(a.keys().eq(b.keys()), "the two runs wrote different file sets")?;
    let differing: Vec<String> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    ensure(differing.is_empty(), format!("files differ: {}", differing.join(", ")))?;
    let checkpoints = a.keys().filter(|k| k.extension().is_some_and(|e| e == "mmx")).count();
    Ok(format!("{} files identical ({checkpoints} checkpoint tensors, report json/txt/csv)", a.len()))
}

fn fold_hygiene(labels: &[Label]) -> Outcome {
    let ids: Vec<String> = (0..labels.len()).map(|i| format!("p{i:03}")).collect();
    for seed in 0..50u64 {
        let folds = kfold_split(labels, 3, seed).map_err(|e| e.to_string())?;
        let mut covered = BTreeSet::new();
        for (f, fold) in folds.iter().enumerate() {
            let train: BTreeSet<&str> = fold.train.iter().map(|&i| ids[i].as_str()).collect();
            let test: BTreeSet<&str> = fold.test.iter().map(|&i| ids[i].as_str()).collect();
            let overlap = train.intersection(&test).count();
            ensure(overlap == 0, format!("seed {seed}, fold {f}: {overlap} shared ids"))?;
            ensure(train.len() + test.len() == ids.len(), format!("seed {seed}, fold {f} does not cover the corpus"))?;
            for id in test {
                ensure(covered.insert(id), format!("seed {seed}: {id} tested twice"))?;
            }
        }
        ensure(covered.len() == ids.len(), format!("seed {seed}: test folds miss participants"))?;
        leak_check(&folds, &ids).map_err(|e| e.to_string())?;
    }
    Ok(format!("0 shared ids across 50 seeds × 3 folds of {} participants", labels.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut suite = Suite { failed: Vec::new() };
    suite.run("gradient-integrity", gradient_integrity);
    suite.run("metric-oracle", metric_oracle);
    suite.run("netvlad-invariance", netvlad_invariance);
    suite.run("attention-properties", attention_properties);

    let mut e2e = None;
    suite.run("end-to-end", || {
        let (detail, run) = match end_to_end(tmp.path()) {
            Ok(x) => x,
            Err(e) => return Err(e),
        };
        e2e = Some(run);
        Ok(detail)
    });
    match &e2e {
        Some(run) => {
            suite.run("resampling-arithmetic", || resampling_arithmetic(tmp.path(), &run.participants));
            suite.run("determinism", || determinism(tmp.path(), run));
            suite.run("fold-hygiene", || fold_hygiene(&run.labels));
        }
        None => {
            for name in ["resampling-arithmetic", "determinism", "fold-hygiene"] {
                suite.run(name, || Err("end-to-end run failed; no corpus to work on".into()));
            }
        }
    }

    if suite.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", suite.failed.len(), suite.failed.join(", "));
        std::process::exit(1);
    }
}
