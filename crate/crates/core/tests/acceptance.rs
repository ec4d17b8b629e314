//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lrdrop::cli::tiny_gradcheck;
use lrdrop::config::ExperimentConfig;
use lrdrop::data::{generate_task, Task};
use lrdrop::landscape::{evaluate_surface, flatness_metrics, sample_directions, DirectionNorm};
use lrdrop::losses::{
    attention_reg, batch_objective, hidden_state_reg, output_reg, ExampleTraces, HsrLayers,
    LossWeights, TermSwitches,
};
use lrdrop::tensor::kernels::mse_mean;
use lrdrop::tensor::{kl_bidirectional, GradientTape, ModelParams, RngStream, Tensor};
use lrdrop::trainer::study::{ablation_variant, run_flatness_study, ABLATION_ROWS};
use lrdrop::trainer::{run_seed, run_size_study};
use lrdrop::transformer::{attention_values, forward_pass, init_params, ForwardTrace, ModelConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("took {elapsed:.1?}, limit {limit:?}"),
    )
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn lrdrop(args: &[&str], cwd: &Path) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lrdrop"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "lrdrop {args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn random_model(rng: &mut RngStream, rate: f64) -> ModelConfig {
    let num_heads = 1 + rng.below(3);
    ModelConfig {
        vocab_size: 2 + rng.below(10),
        max_len: 2 + rng.below(6),
        hidden_size: num_heads * (1 + rng.below(4)),
        num_layers: 1 + rng.below(3),
        num_heads,
        ffn_size: 1 + rng.below(12),
        num_classes: 2 + rng.below(3),
        dropout_rate: rate,
        attention_capture: Default::default(),
    }
}

fn random_batch(rng: &mut RngStream, cfg: &ModelConfig, size: usize) -> Vec<(Vec<usize>, usize)> {
    (0..size)
        .map(|_| {
            let len = 1 + rng.below(cfg.max_len);
            let tokens = (0..len).map(|_| rng.below(cfg.vocab_size)).collect();
            (tokens, rng.below(cfg.num_classes))
        })
        .collect()
}

fn traces_for(
    tape: &mut GradientTape,
    batch: &[(Vec<usize>, usize)],
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
    seed: u64,
) -> Vec<ExampleTraces> {
    batch
        .iter()
        .enumerate()
        .map(|(j, (tokens, label))| ExampleTraces {
            traces: (0..k)
                .map(|p| {
                    let mut rng = RngStream::new(seed, (j * 16 + p) as u64);
                    forward_pass(tape, tokens, params, cfg, Some(&mut rng), p as u64).unwrap()
                })
                .collect(),
            label: *label,
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(2024, 1);
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let cfg = random_model(&mut rng, 0.0);
        let params = init_params(&cfg, i).map_err(|e| e.to_string())?;
        let batch = random_batch(&mut rng, &cfg, 3);
        let mut tape = GradientTape::new();
        let ex = traces_for(&mut tape, &batch, &params, &cfg, 2, i);
        let weights = LossWeights {
            alpha: 0.05 + rng.uniform(),
            beta: 0.05 + rng.uniform(),
            gamma: 0.05 + rng.uniform(),
        };
        let (_, b) = batch_objective(&mut tape, &ex, &weights, &TermSwitches::default(), 1.0)
            .map_err(|e| e.to_string())?;
        worst = worst.max(b.hsr).max(b.mhar).max(b.or_);
        check(
            b.hsr < 1e-12 && b.mhar < 1e-12 && b.or_ < 1e-12,
            format!("config {i}: {b:?}"),
        )?;
        check(
            b.total == b.ce,
            format!("config {i}: total {} != ce {}", b.total, b.ce),
        )?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("20 configs, largest regularizer {worst:e}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let r = tiny_gradcheck(seed).map_err(|e| e.to_string())?;
        check(
            r.coordinates >= 200,
            format!("only {} coordinates", r.coordinates),
        )?;
        check(r.max_rel_error < 1e-4, format!("seed {seed}: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
    }
    let dir = scratch("gradcheck");
    let out = lrdrop(&["gradcheck"], &dir)?;
    check(out.status.code() == Some(0), "gradcheck subcommand failed")?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "max relative error {worst:.2e} over 200 coordinates, 3 seeds"
    ))
}

fn criterion_3() -> Outcome {
    // Symmetrized KL by direct summation.
    let (p, q) = ([0.5, 0.5], [0.25, 0.75]);
    let kl = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    let oracle = 0.5 * (kl(&p, &q) + kl(&q, &p));
    let got = kl_bidirectional(&Tensor::vector(p.to_vec()), &Tensor::vector(q.to_vec()))
        .map_err(|e| e.to_string())?;
    check((oracle - 0.137326).abs() < 1e-6, format!("oracle {oracle}"))?;
    check((got - 0.137326).abs() < 1e-6, format!("kl {got}"))?;

    let m = |rows: &[Vec<f64>]| Tensor::from_rows(rows).unwrap();
    let (out, a) = attention_values(
        &m(&[vec![1.0], vec![0.0]]),
        &m(&[vec![1.0], vec![0.0]]),
        &m(&[vec![1.0], vec![2.0]]),
    )
    .map_err(|e| e.to_string())?;
    let e = 1f64.exp();
    let expect_a = [e / (e + 1.0), 1.0 / (e + 1.0), 0.5, 0.5];
    for (x, y) in a.data().iter().zip(expect_a) {
        check((x - y).abs() < 1e-6, format!("attention {:?}", a.data()))?;
    }
    for (x, y) in a.data().iter().zip([0.731059, 0.268941, 0.5, 0.5]) {
        check((x - y).abs() < 1e-6, format!("attention {:?}", a.data()))?;
    }
    let expect_out = [expect_a[0] + 2.0 * expect_a[1], 1.5];
    for (x, y) in out.data().iter().zip(expect_out) {
        check(
            (x - y).abs() < 1e-12,
            format!("attention output {:?}", out.data()),
        )?;
    }

    let mse1 = mse_mean(
        &m(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
        &m(&[vec![1.0, 2.0], vec![3.0, 5.0]]),
    )
    .map_err(|e| e.to_string())?;
    let mse2 = mse_mean(&Tensor::vector(vec![0.0]), &Tensor::vector(vec![2.0]))
        .map_err(|e| e.to_string())?;
    check(mse1 == 0.25 && mse2 == 4.0, format!("mse {mse1} {mse2}"))?;

    let w = LossWeights::uniform(0.5);
    let total = w.combine(1.0, 0.2, 0.3, 0.4);
    let oracle = 1.0 + 0.2 * 0.5 + 0.3 * 0.5 + 0.4 * 0.5;
    check(total == oracle, format!("weighted sum {total} vs {oracle}"))?;
    check(
        (total - 1.45).abs() < 1e-15,
        format!("weighted sum {total}"),
    )?;
    Ok(format!(
        "kl {got:.6}, A[0] = [{:.6}, {:.6}], weighted sum {total}",
        a.data()[0],
        a.data()[1]
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = RngStream::new(77, 4);
    for i in 0..20u64 {
        let rate = 0.1 + 0.3 * rng.uniform();
        let cfg = random_model(&mut rng, rate);
        let params = init_params(&cfg, 100 + i).map_err(|e| e.to_string())?;
        let batch = random_batch(&mut rng, &cfg, 4);
        let gamma = 0.01 + rng.uniform();
        let weights = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma,
        };
        let mut tape = GradientTape::new();
        let ex = traces_for(&mut tape, &batch, &params, &cfg, 2, i);
        let (_, b) = batch_objective(&mut tape, &ex, &weights, &TermSwitches::default(), 1.0)
            .map_err(|e| e.to_string())?;
        check(b.hsr == 0.0 && b.mhar == 0.0, format!("batch {i}: {b:?}"))?;
        check(
            b.total.to_bits() == (b.ce + gamma * b.or_).to_bits(),
            format!("batch {i}: total {} vs {}", b.total, b.ce + gamma * b.or_),
        )?;
    }
    Ok("20 random batches, total == ce + gamma*or bitwise".into())
}

/// The parity setting shared by criteria 5 and 10.
fn parity_config() -> ExperimentConfig {
    ExperimentConfig {
        task: Task::Parity,
        data_size: 2560,
        seq_len: 4,
        train_size: Some(256),
        seeds: (1..=10).collect(),
        epochs: 30,
        batch_size: 8,
        alpha: 0.1,
        beta: 0.1,
        gamma: 0.1,
        k: 2,
        workers: 1,
        landscape_eval_size: Some(256),
        ..Default::default()
    }
}

fn criteria_5_and_10() -> (Outcome, Outcome) {
    let cfg = parity_config();
    let start = Instant::now();
    let study = match run_size_study(&cfg, &[256]) {
        Ok(s) => s,
        Err(e) => return (Err(e.to_string()), Err("training failed".into())),
    };
    let elapsed = start.elapsed();
    let (out, comparisons) = study;
    println!("{}", out.table.to_text().trim_end());
    let dir = scratch("parity256");
    let _ = fs::write(dir.join("results.csv"), out.table.to_csv());

    let c5 = (|| {
        let c = comparisons.first().ok_or("no comparison")?;
        println!(
            "  welch t = {:.4}, df = {:.2}, p = {:.4}, gap = {:+.4}",
            c.t, c.df, c.p, c.gap
        );
        within(elapsed, Duration::from_secs(15 * 60))?;
        check(
            c.mean_a >= c.mean_b - 0.005,
            format!("LR-Drop {:.4} < baseline {:.4} - 0.005", c.mean_a, c.mean_b),
        )?;
        Ok(format!(
            "LR-Drop {:.4} vs baseline {:.4} over 10 seeds in {elapsed:.0?}",
            c.mean_a, c.mean_b
        ))
    })();

    let c10 = (|| {
        let arms: Vec<_> = out.arms.iter().rev().cloned().collect();
        let (report, records) = run_flatness_study(&cfg, &arms).map_err(|e| e.to_string())?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
        fs::write(dir.join("metrics.json"), json + "\n").map_err(|e| e.to_string())?;
        let mut csv = String::from("arm,seed,mean_rise,max_rise,radius_at_2x\n");
        for r in &records {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.label, r.seed, r.metrics.mean_rise, r.metrics.max_rise, r.metrics.radius_at_2x
            ));
        }
        fs::write(dir.join("flatness.csv"), csv).map_err(|e| e.to_string())?;
        let lr = &report.arms[0];
        let base = &report.arms[1];
        check(
            lr.mean_rise.len() == 10 && base.mean_rise.len() == 10,
            "missing seeds",
        )?;
        let flatter = if lr.mean_of_mean_rise < base.mean_of_mean_rise {
            "LR-Drop flatter"
        } else {
            "baseline flatter"
        };
        Ok(format!(
            "mean_rise LR-Drop {:.4} vs baseline {:.4} ({flatter}); archived in {}",
            lr.mean_of_mean_rise,
            base.mean_of_mean_rise,
            dir.display()
        ))
    })();
    (c5, c10)
}

const STUDY_CONFIG: &str = r#"{
  "task": "first-token",
  "data_size": 100,
  "seq_len": 5,
  "hidden_size": 8,
  "ffn_size": 16,
  "num_layers": 1,
  "epochs": 2,
  "batch_size": 8,
  "seeds": [1, 2, 3, 4, 5],
  "grid_points": 5,
  "landscape_eval_size": 8
}"#;

fn criterion_6() -> Outcome {
    let dir = scratch("ablate");
    fs::write(dir.join("c.json"), STUDY_CONFIG).map_err(|e| e.to_string())?;
    lrdrop(&["ablate", "--config", "c.json", "--out", "o"], &dir)?;
    let csv = fs::read_to_string(dir.join("o/results.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    check(names == ABLATION_ROWS, format!("rows {names:?}"))?;
    check(
        rows.iter().all(|r| r[4] == "5"),
        "fewer than 5 seeds per row",
    )?;

    let base = ExperimentConfig::from_json(STUDY_CONFIG).map_err(|e| e.to_string())?;
    for row in 1..4 {
        let switched = ablation_variant(&base, row);
        let mut zeroed = ablation_variant(&base, 0);
        match row {
            1 => zeroed.alpha = 0.0,
            2 => zeroed.beta = 0.0,
            _ => zeroed.gamma = 0.0,
        }
        for &seed in &base.seeds {
            let a = run_seed(&switched, seed).map_err(|e| e.to_string())?;
            let b = run_seed(&zeroed, seed).map_err(|e| e.to_string())?;
            check(
                a.final_params == b.final_params && a.log == b.log,
                format!(
                    "{} differs from zeroed coefficient, seed {seed}",
                    ABLATION_ROWS[row]
                ),
            )?;
        }
    }
    Ok(format!(
        "rows {names:?}, 5 seeds each, removals equal zeroed coefficients"
    ))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn random_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn random_stochastic(rng: &mut RngStream, l: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|_| softmax(&(0..l).map(|_| rng.normal()).collect::<Vec<_>>()))
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn criterion_7() -> Outcome {
    let dir = scratch("kpass");
    fs::write(dir.join("c.json"), STUDY_CONFIG).map_err(|e| e.to_string())?;
    lrdrop(&["kpass", "--config", "c.json", "--out", "o"], &dir)?;
    let csv = fs::read_to_string(dir.join("o/results.csv")).map_err(|e| e.to_string())?;
    let ks: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    check(ks == ["1", "2", "3"], format!("k rows {ks:?}"))?;

    // Three identical traces.
    let mut rng = RngStream::new(5, 7);
    let (layers, heads, l, d, c) = (2, 2, 3, 4, 3);
    let hs: Vec<Tensor> = (0..layers)
        .map(|_| random_tensor(&mut rng, &[l, d]))
        .collect();
    let at: Vec<Vec<Tensor>> = (0..layers)
        .map(|_| (0..heads).map(|_| random_stochastic(&mut rng, l)).collect())
        .collect();
    let logits = random_tensor(&mut rng, &[c]);
    let mut tape = GradientTape::new();
    let same: Vec<ForwardTrace> = (0..3)
        .map(|_| ForwardTrace::from_values(&mut tape, hs.clone(), at.clone(), logits.clone(), l))
        .collect();
    let ex = [ExampleTraces {
        traces: same,
        label: 1,
    }];
    let (_, b) = batch_objective(
        &mut tape,
        &ex,
        &LossWeights::default(),
        &TermSwitches::default(),
        1.0,
    )
    .map_err(|e| e.to_string())?;
    check(
        b.hsr == 0.0 && b.mhar == 0.0 && b.or_ == 0.0,
        format!("identical traces: {b:?}"),
    )?;

    // Three distinct traces against an all-pairs brute force.
    let mut raw = Vec::new();
    let mut tape = GradientTape::new();
    let mut traces = Vec::new();
    for _ in 0..3 {
        let hs: Vec<Tensor> = (0..layers)
            .map(|_| random_tensor(&mut rng, &[l, d]))
            .collect();
        let at: Vec<Vec<Tensor>> = (0..layers)
            .map(|_| (0..heads).map(|_| random_stochastic(&mut rng, l)).collect())
            .collect();
        let logits = random_tensor(&mut rng, &[c]);
        traces.push(ForwardTrace::from_values(
            &mut tape,
            hs.clone(),
            at.clone(),
            logits.clone(),
            l,
        ));
        raw.push((hs, at, logits));
    }
    let (hsr, _) =
        hidden_state_reg(&mut tape, &traces, HsrLayers::All).map_err(|e| e.to_string())?;
    let (mhar, _) = attention_reg(&mut tape, &traces).map_err(|e| e.to_string())?;
    let or = output_reg(&mut tape, &traces).map_err(|e| e.to_string())?;
    let (hsr, mhar, or) = (
        tape.scalar(hsr).unwrap(),
        tape.scalar(mhar).unwrap(),
        tape.scalar(or).unwrap(),
    );

    let (mut o_hsr, mut o_mhar, mut o_or, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            if i >= j {
                continue;
            }
            pairs += 1.0;
            let (a, b) = (&raw[i], &raw[j]);
            o_hsr += (0..layers)
                .map(|x| mse(a.0[x].data(), b.0[x].data()))
                .sum::<f64>()
                / layers as f64;
            o_mhar += (0..layers)
                .map(|x| {
                    (0..heads)
                        .map(|h| mse(a.1[x][h].data(), b.1[x][h].data()))
                        .sum::<f64>()
                        / heads as f64
                })
                .sum::<f64>()
                / layers as f64;
            let (p, q) = (softmax(a.2.data()), softmax(b.2.data()));
            let kl =
                |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
            o_or += 0.5 * (kl(&p, &q) + kl(&q, &p));
        }
    }
    let (o_hsr, o_mhar, o_or) = (o_hsr / pairs, o_mhar / pairs, o_or / pairs);
    for (name, got, want) in [
        ("hsr", hsr, o_hsr),
        ("mhar", mhar, o_mhar),
        ("or", or, o_or),
    ] {
        check(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            format!("{name}: {got} vs oracle {want}"),
        )?;
    }
    Ok(format!("rows k=1,2,3; k=3 pairwise means match brute force (hsr {hsr:.6}, mhar {mhar:.6}, or {or:.6})"))
}

fn criterion_8() -> Outcome {
    // Quadratic oracle around zero.
    let mut rng = RngStream::new(8, 8);
    let mut theta = ModelParams::new();
    for (i, n) in [7usize, 12, 3].into_iter().enumerate() {
        theta.insert(format!("b{i}"), random_tensor(&mut rng, &[n]));
    }
    let dirs = sample_directions(&theta, 11, DirectionNorm::Filter).map_err(|e| e.to_string())?;
    for (name, t) in theta.iter() {
        for d in [&dirs.dx, &dirs.dy] {
            let dn = d.get(name).unwrap().norm();
            check(
                (dn - t.norm()).abs() < 1e-9,
                format!("{name}: {dn} vs {}", t.norm()),
            )?;
        }
    }
    let zero: ModelParams = theta
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
        .collect();
    let sq = |p: &ModelParams| Ok(p.iter().map(|(_, t)| t.dot(t).unwrap()).sum::<f64>());
    let grid = evaluate_surface(&zero, &dirs, 1.0, 21, sq).map_err(|e| e.to_string())?;
    let dot = |a: &ModelParams, b: &ModelParams| -> f64 {
        a.iter()
            .map(|(n, t)| {
                t.data()
                    .iter()
                    .zip(b.get(n).unwrap().data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum()
    };
    let (xx, yy, xy) = (
        dot(&dirs.dx, &dirs.dx),
        dot(&dirs.dy, &dirs.dy),
        dot(&dirs.dx, &dirs.dy),
    );
    let mut worst: f64 = 0.0;
    for (i, a) in grid.alphas.iter().enumerate() {
        for (j, b) in grid.betas.iter().enumerate() {
            let want = a * a * xx + b * b * yy + 2.0 * a * b * xy;
            worst = worst.max((grid.values[i][j] - want).abs());
        }
    }
    check(worst < 1e-9, format!("quadratic grid error {worst:e}"))?;
    flatness_metrics(&grid).map_err(|e| e.to_string())?;

    // Center of a model surface.
    let m = ModelConfig {
        vocab_size: 4,
        max_len: 5,
        hidden_size: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_size: 8,
        num_classes: 4,
        dropout_rate: 0.1,
        attention_capture: Default::default(),
    };
    let params = init_params(&m, 3).map_err(|e| e.to_string())?;
    let ds = generate_task(Task::FirstToken, 16, 5, 2).map_err(|e| e.to_string())?;
    let loss = |p: &ModelParams| lrdrop::trainer::eval_loss(p, &m, &ds.examples);
    let d = sample_directions(&params, 4, DirectionNorm::Filter).map_err(|e| e.to_string())?;
    let g = evaluate_surface(&params, &d, 1.0, 3, loss).map_err(|e| e.to_string())?;
    let center = loss(&params).map_err(|e| e.to_string())?;
    check(
        g.values[1][1].to_bits() == center.to_bits(),
        "center differs from unperturbed loss",
    )?;

    // Repeated CLI runs.
    let dir = scratch("landscape");
    fs::write(dir.join("c.json"), STUDY_CONFIG).map_err(|e| e.to_string())?;
    for o in ["a", "b"] {
        lrdrop(
            &["landscape", "--config", "c.json", "--seed", "3", "--out", o],
            &dir,
        )?;
    }
    let a = fs::read(dir.join("a/surface.csv")).map_err(|e| e.to_string())?;
    let b = fs::read(dir.join("b/surface.csv")).map_err(|e| e.to_string())?;
    check(a == b, "surface.csv differs between runs")?;
    Ok(format!(
        "quadratic error {worst:.1e}, center bitwise, surface.csv identical ({} bytes)",
        a.len()
    ))
}

fn criterion_9() -> Outcome {
    let dir = scratch("determinism");
    let cfg = STUDY_CONFIG.replace("\"epochs\": 2", "\"epochs\": 3");
    fs::write(dir.join("c.json"), cfg).map_err(|e| e.to_string())?;
    for o in ["a", "b"] {
        lrdrop(
            &["train", "--config", "c.json", "--seed", "42", "--out", o],
            &dir,
        )?;
    }
    for f in ["train_log.jsonl", "checkpoint_seed42.lrdc", "results.csv"] {
        let a = fs::read(dir.join("a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(dir.join("b").join(f)).map_err(|e| e.to_string())?;
        check(!a.is_empty() && a == b, format!("{f} differs"))?;
    }
    Ok("train_log.jsonl, checkpoint and results.csv byte-identical".into())
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "degeneracy", criterion_1()),
        (2, "gradient check", criterion_2()),
        (3, "golden values", criterion_3()),
        (4, "R-Drop reduction", criterion_4()),
    ];
    let (c5, c10) = criteria_5_and_10();
    results.push((5, "regularization effect", c5));
    results.push((6, "ablation structure", criterion_6()));
    results.push((7, "k-pass study", criterion_7()));
    results.push((8, "landscape", criterion_8()));
    results.push((9, "determinism", criterion_9()));
    results.push((10, "flatness comparison (report only)", c10));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
