//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use corefbridge::attention::{pairwise_scores, SimilarityKind};
use corefbridge::corpus::{gen_synthetic, SyntheticConfig};
use corefbridge::embeddings::mock::{MockBehavior, MockEmbeddingServer};
use corefbridge::embeddings::ProviderConfig;
use corefbridge::embeddings::{feature_hash_embed, EmbedResponse, EmbeddingError};
use corefbridge::metrics::{b_cubed, ceaf_e, muc, PRF};
use corefbridge::resolver::{beam_search, greedy_links, hypothesis_score, PairScores};
use corefbridge::syntax::{Inventories, SyntaxProjection};
use corefbridge::training::{
    lr_schedule, prepare_corpus, randomize_params, score_document, warmup_steps, Arm, MentionRepr,
    ModelConfig, ModelParams, TrainConfig,
};
use corefbridge_cli::commands::{self, write_corpus, Injected};
use corefbridge_cli::{Cli, CliError, Command};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const ROW_SUM_TOL: f64 = 1e-9;
const STOCHASTICITY_BUDGET: Duration = Duration::from_secs(10);
const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const METRIC_TOL: f64 = 1e-12;
const METRIC_BUDGET: Duration = Duration::from_secs(30);
const BEAM_TABLES: u64 = 200;
const EXHAUSTIVE_SCORE_TOL: f64 = 1e-12;
const ABLATION_MARGIN: f64 = 0.05;
const ABLATION_SEEDS: [u64; 3] = [41, 42, 43];
const ABLATION_BUDGET: Duration = Duration::from_secs(600);
const PEAK_LR: f64 = 2e-5;
const SCHEDULE_STEPS: usize = 1000;
const SCHEDULE_TOL: f64 = 1e-15 * PEAK_LR;

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn parse(args: &[&str]) -> Command {
    Cli::try_parse_from(std::iter::once("corefbridge").chain(args.iter().copied()))
        .expect("arguments parse")
        .command
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Outcome {
    name: &'static str,
    passed: bool,
}

fn criterion(
    name: &'static str,
    budget: Option<Duration>,
    f: impl FnOnce() -> Result<String, String>,
) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let over = budget.is_some_and(|b| took > b);
    let passed = result.is_ok() && !over;
    let mut detail = match result {
        Ok(d) | Err(d) => d,
    };
    if let (true, Some(b)) = (over, budget) {
        detail.push_str(&format!("; over budget of {:.0} s", b.as_secs_f64()));
    }
    println!(
        "{} {name} ({:.2} s): {detail}",
        if passed { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    Outcome { name, passed }
}

fn attention_stochasticity() -> Result<String, String> {
    let mut worst = 0.0f64;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=50);
        let d = if seed % 2 == 0 { 8 } else { 64 };
        let scale = rng.random_range(0.1..10.0);
        let x = Array2::from_shape_simple_fn((n, d), || scale * rng.random_range(-1.0..1.0));
        let kind = if seed % 3 == 0 {
            SimilarityKind::Cosine
        } else {
            SimilarityKind::ScaledDot
        };
        let a = pairwise_scores(x.view(), kind).map_err(|e| e.to_string())?;
        for i in 0..n {
            if a.a[[i, i]] != 0.0 {
                return Err(format!("seed {seed}: diagonal {} at row {i}", a.a[[i, i]]));
            }
            let dev = (a.a.row(i).sum() - 1.0).abs();
            worst = worst.max(dev);
            if dev > ROW_SUM_TOL {
                return Err(format!("seed {seed}: row {i} off by {dev:e}"));
            }
        }
    }
    Ok(format!("1000 inputs, worst row-sum deviation {worst:.1e}"))
}

fn gradient_fidelity() -> Result<String, String> {
    let Command::Gradcheck(a) = parse(&[
        "gradcheck",
        "--dim",
        "16",
        "--docs",
        "3",
        "--arm",
        "full",
        "--dropout",
        "0",
    ]) else {
        unreachable!()
    };
    let r = commands::gradcheck(&a).map_err(|e| e.to_string())?;
    let g = r.gradcheck.expect("gradcheck summary");
    if g.max_rel_error < GRADCHECK_TOL {
        Ok(format!(
            "max relative error {:.2e} over {} coordinates",
            g.max_rel_error, g.checked
        ))
    } else {
        Err(format!("max relative error {:.2e}", g.max_rel_error))
    }
}

fn metric_oracles() -> Result<String, String> {
    let parts = oracles::all_partitions(5);
    if parts.len() != 52 {
        return Err(format!("{} partitions of 5", parts.len()));
    }
    let close = |got: PRF, want: (f64, f64, f64)| {
        (got.precision - want.0)
            .abs()
            .max((got.recall - want.1).abs())
            .max((got.f1 - want.2).abs())
    };
    let mut worst = 0.0f64;
    for g in &parts {
        for p in &parts {
            for (name, got, want) in [
                ("muc", muc(g, p), oracles::muc(g, p)),
                ("b3", b_cubed(g, p), oracles::b_cubed(g, p)),
                ("ceaf_e", ceaf_e(g, p), oracles::ceaf_e(g, p)),
            ] {
                let err = close(got.map_err(|e| e.to_string())?, want);
                worst = worst.max(err);
                if err > METRIC_TOL {
                    return Err(format!("{name} off by {err:e} for {g:?} vs {p:?}"));
                }
            }
        }
    }
    Ok(format!(
        "2704 pairs x 3 metrics, worst deviation {worst:.1e}"
    ))
}

fn random_table(rng: &mut ChaCha8Rng, n: usize) -> PairScores {
    PairScores(
        (0..n)
            .map(|i| (0..i).map(|_| rng.random_range(0.01..0.99)).collect())
            .collect(),
    )
}

fn beam_greedy() -> Result<String, String> {
    let mut exhaustive = 0;
    for seed in 0..BEAM_TABLES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=8);
        let t = rng.random_range(0.2..0.8);
        let p = random_table(&mut rng, n);
        let greedy = greedy_links(&p, t);
        let one = beam_search(&p, 1, t);
        if one.links != greedy {
            return Err(format!(
                "table {seed}: width 1 {:?} vs greedy {greedy:?}",
                one.links
            ));
        }
        let five = beam_search(&p, 5, t);
        let g_score = hypothesis_score(&p, &greedy, t);
        if five.score < g_score {
            return Err(format!(
                "table {seed}: width 5 {} < greedy {g_score}",
                five.score
            ));
        }
        if n <= 5 {
            exhaustive += 1;
            let (links, score) = oracles::exhaustive_links(&p.0, t);
            if five.links != links || (five.score - score).abs() > EXHAUSTIVE_SCORE_TOL {
                return Err(format!(
                    "table {seed}: beam {:?} ({}) vs exhaustive {links:?} ({score})",
                    five.links, five.score
                ));
            }
        }
    }
    Ok(format!(
        "{BEAM_TABLES} tables, {exhaustive} checked against exhaustive search"
    ))
}

fn ablation_trend() -> Result<String, String> {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("synthetic.conllu");
    let Command::Generate(g) = parse(&[
        "generate",
        "--seed",
        "42",
        "--docs",
        "200",
        "--signal",
        "0.9",
        "--out",
        s(&corpus),
    ]) else {
        unreachable!()
    };
    commands::generate(&g).map_err(|e| e.to_string())?;
    let config = desk_config();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in ABLATION_SEEDS {
        let seed_s = seed.to_string();
        let Command::Ablate(a) = parse(&[
            "ablate",
            "--corpus",
            s(&corpus),
            "--config",
            s(&config),
            "--seed",
            &seed_s,
        ]) else {
            unreachable!()
        };
        let grid = commands::ablate(&a).map_err(|e| e.to_string())?;
        if let Some(r) = grid.rows.iter().find(|r| r.error.is_some()) {
            return Err(format!("seed {seed}: {} failed", r.label));
        }
        let test = |arm| grid.row(arm).unwrap().conll_f1[0];
        let (base, syntax, full) = (test(Arm::Base), test(Arm::Syntax), test(Arm::Full));
        let holds = full >= base + ABLATION_MARGIN && syntax > base;
        ok &= holds;
        lines.push(format!(
            "seed {seed}: base {:.2} +syntax {:.2} full {:.2}{}",
            base * 100.0,
            syntax * 100.0,
            full * 100.0,
            if holds { "" } else { " (ordering violated)" }
        ));
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn identity_arm() -> Result<String, String> {
    let mut compared = 0usize;
    for seed in 0..5u64 {
        let docs = gen_synthetic(&SyntheticConfig {
            seed,
            n_docs: 3,
            sentences_per_doc: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let inv = Inventories::from_corpus(&docs);
        let dim = [8, 16, 32][seed as usize % 3];
        let provider = ProviderConfig {
            dim,
            ..ProviderConfig::default()
        };
        let inputs = prepare_corpus(&docs, &provider, &inv, MentionRepr::Head).unwrap();
        let model = ModelConfig::default();
        let mut syntax = ModelParams::init(Arm::Syntax, inv.clone(), dim, &model, seed).unwrap();
        randomize_params(&mut syntax, seed + 100);
        syntax.syntax = SyntaxProjection::zeros(inv.feature_dim(), dim);
        let mut base = ModelParams::init(Arm::Base, inv, dim, &model, seed).unwrap();
        base.decoder = syntax.decoder.clone();
        for inp in &inputs {
            let (a, _) = score_document(&base, inp).map_err(|e| e.to_string())?;
            let (b, _) = score_document(&syntax, inp).map_err(|e| e.to_string())?;
            let same = a.0.iter().flatten().map(|x| x.to_bits()).eq(b
                .0
                .iter()
                .flatten()
                .map(|x| x.to_bits()));
            if !same {
                return Err(format!(
                    "seed {seed}, document {}: pair scores differ",
                    inp.doc_id
                ));
            }
            compared += a.0.iter().map(Vec::len).sum::<usize>();
        }
    }
    Ok(format!(
        "{compared} pair scores bit-identical over 15 documents"
    ))
}

fn weights_determinism() -> Result<String, String> {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c.conllu");
    let docs = gen_synthetic(&SyntheticConfig {
        seed: 42,
        n_docs: 60,
        syntax_signal: 0.9,
        ..SyntheticConfig::default()
    })
    .unwrap();
    write_corpus(&corpus, &docs).unwrap();
    let config = desk_config();
    let run = |name: &str| -> Result<(Vec<u8>, String), String> {
        let out = dir.path().join(name);
        let Command::Train(a) = parse(&[
            "train",
            "--corpus",
            s(&corpus),
            "--config",
            s(&config),
            "--arm",
            "full",
            "--out",
            s(&out),
            "--seed",
            "42",
        ]) else {
            unreachable!()
        };
        let r = commands::train(&a).map_err(|e| e.to_string())?;
        Ok((std::fs::read(out).unwrap(), r.config_digest))
    };
    let (a, da) = run("a.bin")?;
    let (b, db) = run("b.bin")?;
    if a == b && da == db {
        Ok(format!("{} byte weights files identical", a.len()))
    } else {
        Err("weights or config digest differ".into())
    }
}

fn remote_provider() -> Result<String, String> {
    let dir = TempDir::new().unwrap();
    let (dim, window, seed) = (16usize, 2usize, 3u64);
    let docs = gen_synthetic(&SyntheticConfig {
        seed: 5,
        n_docs: 4,
        sentences_per_doc: 3,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let corpus = dir.path().join("c.conllu");
    write_corpus(&corpus, &docs).unwrap();
    let weights = dir.path().join("w.bin");
    let (dim_s, seed_s) = (
        format!("embedding.dim={dim}"),
        format!("embedding.seed={seed}"),
    );
    let Command::Train(t) = parse(&[
        "train",
        "--corpus",
        s(&corpus),
        "--arm",
        "full",
        "--out",
        s(&weights),
        "--set",
        &dim_s,
        "--set",
        &seed_s,
        "--set",
        "train.epochs=2",
        "--set",
        "train.lr=0.1",
    ]) else {
        unreachable!()
    };
    commands::train(&t).map_err(|e| e.to_string())?;

    let mut injected = Injected::default();
    for d in &docs {
        let m = feature_hash_embed(d, dim, window, seed).unwrap();
        let payload = EmbedResponse {
            dim,
            rows: m.rows(),
            data: m.as_array().iter().map(|&v| Some(v)).collect(),
        };
        injected.insert(&d.id, payload);
    }
    let inj_path = dir.path().join("embeddings.json");
    injected.save(&inj_path).unwrap();

    let predict = |out: &str, extra: &[&str]| -> Result<String, CliError> {
        let out = dir.path().join(out);
        let mut args = vec![
            "predict",
            "--weights",
            s(&weights),
            "--corpus",
            s(&corpus),
            "--out",
            s(&out),
            "--set",
            &dim_s,
            "--set",
            &seed_s,
        ];
        args.extend(extra);
        let Command::Predict(p) = parse(&args) else {
            unreachable!()
        };
        commands::predict(&p)?;
        Ok(std::fs::read_to_string(out).unwrap())
    };
    let remote = |behavior: MockBehavior, timeout_ms: u64, out: &str| {
        let server = MockEmbeddingServer::start(behavior).unwrap();
        let endpoint = format!("embedding.endpoint=\"{}\"", server.endpoint());
        let timeout = format!("embedding.timeout_ms={timeout_ms}");
        predict(
            out,
            &[
                "--set",
                "embedding.kind=\"remote\"",
                "--set",
                &endpoint,
                "--set",
                &timeout,
            ],
        )
    };

    let from_file =
        predict("file.conllu", &["--embeddings", s(&inj_path)]).map_err(|e| e.to_string())?;
    let from_server = remote(
        MockBehavior::FeatureHash { dim, window, seed },
        5000,
        "remote.conllu",
    )
    .map_err(|e| e.to_string())?;
    if from_file != from_server {
        return Err("remote and injected predictions differ".into());
    }

    let mut seen = Vec::new();
    type Case = (&'static str, MockBehavior, u64, fn(&EmbeddingError) -> bool);
    let cases: [Case; 3] = [
        ("Timeout", MockBehavior::Delay { dim, ms: 2000 }, 200, |e| {
            matches!(e, EmbeddingError::Timeout(_))
        }),
        (
            "DimensionMismatch",
            MockBehavior::DropRow { dim },
            5000,
            |e| matches!(e, EmbeddingError::DimensionMismatch { .. }),
        ),
        ("NonFiniteEmbedding", MockBehavior::NaN { dim }, 5000, |e| {
            matches!(e, EmbeddingError::NonFiniteEmbedding { .. })
        }),
    ];
    for (name, behavior, timeout_ms, want) in cases {
        match remote(behavior, timeout_ms, "err.conllu") {
            Err(CliError::Embedding { source, .. }) if want(&source) => seen.push(name),
            Err(e) => return Err(format!("{name}: got {e}")),
            Ok(_) => return Err(format!("{name}: predict succeeded")),
        }
    }
    Ok(format!(
        "remote == injected over {} documents; errors surfaced: {}",
        docs.len(),
        seen.join(", ")
    ))
}

fn lr_schedule_shape() -> Result<String, String> {
    let cfg = TrainConfig::default();
    if cfg.lr != PEAK_LR {
        return Err(format!("default lr {} is not {PEAK_LR}", cfg.lr));
    }
    let total = SCHEDULE_STEPS;
    let warm = warmup_steps(total, cfg.warmup);
    if lr_schedule(0, total, &cfg) != 0.0 || lr_schedule(total, total, &cfg) != 0.0 {
        return Err("endpoints are not zero".into());
    }
    let peak = lr_schedule(warm, total, &cfg);
    if (peak - PEAK_LR).abs() > SCHEDULE_TOL {
        return Err(format!("value at warm-up boundary {warm} is {peak}"));
    }
    let mut argmax = 0;
    for step in 0..=total {
        let v = lr_schedule(step, total, &cfg);
        let want = if step <= warm {
            PEAK_LR * step as f64 / warm as f64
        } else {
            PEAK_LR * (total - step) as f64 / (total - warm) as f64
        };
        if (v - want).abs() > SCHEDULE_TOL {
            return Err(format!("step {step}: {v} vs {want}"));
        }
        if v > lr_schedule(argmax, total, &cfg) {
            argmax = step;
        }
    }
    if argmax != warm {
        return Err(format!("peak at step {argmax}, expected {warm}"));
    }
    Ok(format!(
        "{} points, peak {peak:e} at step {warm}",
        total + 1
    ))
}

#[test]
fn acceptance() {
    let outcomes = [
        criterion(
            "attention stochasticity",
            Some(STOCHASTICITY_BUDGET),
            attention_stochasticity,
        ),
        criterion(
            "gradient fidelity",
            Some(GRADCHECK_BUDGET),
            gradient_fidelity,
        ),
        criterion(
            "metric oracle equivalence",
            Some(METRIC_BUDGET),
            metric_oracles,
        ),
        criterion("beam/greedy consistency", None, beam_greedy),
        criterion("ablation trend", Some(ABLATION_BUDGET), ablation_trend),
        criterion("zero syntax projection identity", None, identity_arm),
        criterion("training determinism", None, weights_determinism),
        criterion("remote provider contract", None, remote_provider),
        criterion("lr schedule", None, lr_schedule_shape),
    ];
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
    println!(
        "{}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    assert!(failed.is_empty(), "failed: {failed:?}");
}
