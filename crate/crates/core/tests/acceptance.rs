//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

mod common;

use std::time::Instant;

use common::{all_paths, oracles, G2};
use gazeworld::gazedata::{
    assign_patches, dedup_first_visit, synth_world, FixationSequence, GridSpec, OrderRule, SynthParams,
};
use gazeworld::metrics::{multimatch, scanmatch, sed, stde, STDE_K_MAX};
use gazeworld::model::{read_checkpoint, write_checkpoint, Model, ModelError};
use gazeworld::numcore::{grad_check, Bind, NumError, OptimizerState, Tape, Tensor};
use gazeworld::probes::{
    run_ordering_ablation, scanpath_loss, AblationConfig, AblationReport, DecoderHeads, LossWeights, ScanpathTarget,
};
use gazeworld::train::{prepare_samples, pretrain_step, run_pretrain, RunOptions, StepOutcome};
use gazeworld::{ModelConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_model(d: usize, grid: GridSpec, max_len: usize) -> ModelConfig {
    ModelConfig {
        grid,
        patch_px: 2,
        embed_dim: d,
        encoder_layers: 1,
        encoder_heads: 2,
        predictor_layers: 1,
        predictor_heads: 2,
        completion_layers: 1,
        completion_heads: 2,
        mlp_ratio: 2,
        max_seq_len: max_len,
        init_seed: 21,
        ..ModelConfig::default()
    }
}

fn random_patches(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let p2 = cfg.patch_px * cfg.patch_px;
    let n = cfg.num_patches();
    Tensor::new(vec![n, p2], (0..n * p2).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = small_model(8, GridSpec { rows: 2, cols: 2 }, 4);
    let mut model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let patches = random_patches(&cfg, &mut rng);
    let seq = FixationSequence::new(vec![2, 0, 3], vec![0.3, 0.7, 0.2], cfg.grid).unwrap();
    let zbar = model.target_encode_patches(&patches).unwrap();
    let frozen = model.clone();
    let report = grad_check(&mut model.online, 1e-5, |store, want| {
        let mut tape = Tape::new();
        let bind = if want {
            Bind::Trainable(store)
        } else {
            Bind::Frozen(store)
        };
        let l = frozen
            .sample_loss(&mut tape, bind, &patches, &seq, &zbar)
            .map_err(|e| match e {
                ModelError::Num(n) => n,
                other => NumError::InvalidArgument(other.to_string()),
            })?;
        let v = tape.value(l.total).data()[0];
        Ok((v, if want { Some(tape.backward(l.total)?) } else { None }))
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        report.max_rel_err <= 1e-4 && secs < 30.0,
        format!(
            "max rel err {:.2e} over {} coords (worst {}), {secs:.1}s",
            report.max_rel_err, report.coords, report.worst
        ),
    )
}

fn causality() -> Outcome {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone()).unwrap();
    let n = cfg.num_patches();
    let d = cfg.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    let predictions = |patches: &Tensor, visited: &[usize], dwell: &[f64]| {
        let mut tape = Tape::new();
        let bind = Bind::Frozen(&model.online);
        let p = tape.constant(patches.clone());
        let z = model.encoder_forward(&mut tape, bind, p).unwrap();
        let tokens = model.embed_tokens(&mut tape, bind, z, visited, dwell).unwrap();
        let next = model.predict(&mut tape, bind, tokens).unwrap().next.unwrap();
        tape.value(next).data().to_vec()
    };
    for _ in 0..100 {
        let patches = random_patches(&cfg, &mut rng);
        let len = rng.random_range(2..=n);
        let mut cells: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            cells.swap(i, rng.random_range(0..=i));
        }
        let visited = cells[..len].to_vec();
        let dwell: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
        let base = predictions(&patches, &visited, &dwell);
        // token j (0-based) feeds predictions for fixations j + 2 onward
        let j = rng.random_range(1..len);
        let mut v2 = visited.clone();
        let mut d2 = dwell.clone();
        if len < n {
            v2[j] = cells[len];
        }
        d2[j] += 1.5;
        let out = predictions(&patches, &v2, &d2);
        for r in 0..j {
            if base[r * d..(r + 1) * d] != out[r * d..(r + 1) * d] {
                return Err(format!("prediction row {r} changed after perturbing token {j}"));
            }
            checked += 1;
        }
    }
    Ok(format!("100 sequences, {checked} earlier predictions bit-identical"))
}

fn target_isolation() -> Outcome {
    let cfg = small_model(8, GridSpec { rows: 4, cols: 4 }, 16);
    let cfg = ModelConfig { patch_px: 4, ..cfg };
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        max_steps: None,
        log_every: 0,
        ..TrainConfig::default()
    };
    let data = synth_world(4, 12, cfg.grid, OrderRule::IntensityOrder).unwrap();
    let mut model = Model::new(cfg).unwrap();
    let mut opt = OptimizerState::new(&model.online, tc.learning_rate, tc.weight_decay);
    let samples = prepare_samples(&model, &data).unwrap();
    let taus = [0.998, 0.9, 0.5, 1.0];
    for (k, &tau) in taus.iter().enumerate() {
        let before: Vec<Vec<f64>> = model.target.params().iter().map(|p| p.value.data().to_vec()).collect();
        let batch: Vec<_> = samples.iter().skip(k * 3).take(3).collect();
        if !matches!(
            pretrain_step(&mut model, &mut opt, &batch, tau).unwrap(),
            StepOutcome::Updated { .. }
        ) {
            return Err("training step skipped".into());
        }
        if !model.target.grads_absent_or_zero() {
            return Err(format!("target gradient buffers non-zero after step {k}"));
        }
        for ((t, o), b) in model.target.params().iter().zip(model.online.params()).zip(&before) {
            for ((tv, ov), bv) in t.value.data().iter().zip(o.value.data()).zip(b) {
                if *tv != tau * bv + (1.0 - tau) * ov {
                    return Err(format!("{} moved off the EMA update at tau {tau}", t.name));
                }
            }
        }
    }
    let mc = small_model(8, GridSpec { rows: 4, cols: 4 }, 16);
    let mc = ModelConfig { patch_px: 4, ..mc };
    let (_, report) = run_pretrain(&mc, &tc, &data, RunOptions::default()).unwrap();
    let trace = report.tau_trace();
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    check(
        first == 0.998 && last == 1.0,
        format!(
            "grads absent, EMA exact over {} steps; tau trace {first} .. {last}",
            taus.len()
        ),
    )
}

fn coverage() -> Outcome {
    let mut count = 0;
    for (rows, cols) in [(4, 4), (3, 5), (1, 1)] {
        let grid = GridSpec { rows, cols };
        for rule in OrderRule::ALL {
            let ds = synth_world(8, 60, grid, rule).unwrap();
            for rec in &ds.records {
                let seq = dedup_first_visit(&assign_patches(rec, grid), grid).unwrap();
                let mut seen = vec![0u8; grid.len()];
                seen[seq.visited()[0]] += 1;
                for &p in seq.visited()[1..].iter().chain(&seq.unvisited()) {
                    seen[p] += 1;
                }
                if seen.iter().any(|&c| c != 1) {
                    return Err(format!("{}: cells covered {seen:?}", rec.image_id));
                }
                count += 1;
            }
        }
    }
    Ok(format!("{count} samples partition their grids"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let mc = ModelConfig::default();
    let tc = TrainConfig {
        log_every: 0,
        ..TrainConfig::default()
    };
    let data = synth_world(0, 200, mc.grid, OrderRule::IntensityOrder).unwrap();
    let (_, report) = run_pretrain(&mc, &tc, &data, RunOptions::default()).unwrap();
    let losses = report.total_losses();
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    let secs = start.elapsed().as_secs_f64();
    check(
        report.steps.len() == 200 && last <= 0.5 * first && secs < 300.0,
        format!(
            "{} steps, l_total {first:.4} -> {last:.4} ({:.1}%), {secs:.1}s",
            report.steps.len(),
            100.0 * last / first
        ),
    )
}

fn ablation() -> AblationReport {
    let mc = ModelConfig::default();
    let tc = TrainConfig {
        log_every: 0,
        ..TrainConfig::default()
    };
    run_ordering_ablation(&mc, &tc, &SynthParams::default(), &AblationConfig::default()).unwrap()
}

fn ordering(report: &AblationReport) -> Outcome {
    let get = |r: OrderRule| report.mean_auroc[r.as_str()];
    let (gaze, raster, random) = (
        get(OrderRule::IntensityOrder),
        get(OrderRule::Raster),
        get(OrderRule::Random),
    );
    check(
        gaze - random >= 0.05 && raster < gaze,
        format!(
            "mean AUROC gaze {gaze:.3}, raster {raster:.3}, random {random:.3}; margin {:.3} (need >= 0.05)",
            gaze - random
        ),
    )
}

fn probe_sanity(report: &AblationReport) -> Outcome {
    let gaze: Vec<f64> = report
        .runs
        .iter()
        .filter(|r| r.rule == OrderRule::IntensityOrder)
        .map(|r| r.probe.auroc)
        .collect();
    let trained = gaze.iter().sum::<f64>() / gaze.len() as f64;
    let untrained = report.untrained_mean_auroc;
    check(
        trained >= 0.90 && untrained <= 0.70,
        format!("trained AUROC {trained:.3} (need >= 0.90), untrained {untrained:.3} (need <= 0.70)"),
    )
}

fn metric_oracles() -> Outcome {
    let paths = all_paths(G2, 4);
    let mut pairs = 0usize;
    for a in &paths {
        for b in &paths {
            if sed(a, b).unwrap() != oracles::sed(a.cells(), b.cells()) {
                return Err(format!("sed differs on {:?} {:?}", a.cells(), b.cells()));
            }
            if scanmatch(a, b).unwrap() != oracles::scanmatch(a, b) {
                return Err(format!("scanmatch differs on {:?} {:?}", a.cells(), b.cells()));
            }
            if a.len() >= 2 && b.len() >= 2 && multimatch(a, b).unwrap() != oracles::multimatch(a, b) {
                return Err(format!("multimatch differs on {:?} {:?}", a.cells(), b.cells()));
            }
            pairs += 1;
        }
        if sed(a, a).unwrap() != 0 || scanmatch(a, a).unwrap() != 1.0 || stde(a, a, STDE_K_MAX).unwrap() != 1.0 {
            return Err(format!("identity scores off for {:?}", a.cells()));
        }
        if a.len() >= 2 {
            let mm = multimatch(a, a).unwrap();
            if (mm.vector, mm.direction, mm.position) != (1.0, 1.0, 1.0) {
                return Err(format!("multimatch identity off for {:?}", a.cells()));
            }
        }
    }
    Ok(format!("{pairs} path pairs equal their oracles; identities exact"))
}

fn decoder_loss_weights() -> Outcome {
    let n = 16;
    let target = ScanpathTarget {
        cells: vec![3, 9],
        log_dur: vec![0.2, 0.5],
        termination: vec![0.0, 1.0],
    };
    let eval = |spatial: Tensor, dur: Vec<f64>, term: Vec<f64>| {
        let mut tape = Tape::new();
        let heads = DecoderHeads {
            spatial: tape.constant(spatial),
            duration: tape.constant(Tensor::new(vec![2, 1], dur).unwrap()),
            termination: tape.constant(Tensor::new(vec![2, 1], term).unwrap()),
        };
        let l = scanpath_loss(&mut tape, &heads, &target, LossWeights::default()).unwrap();
        tape.value(l).data()[0]
    };
    let logits = Tensor::from_rows(&[vec![0.4; n], vec![-0.3; n]]).unwrap();
    let delta = 0.37;
    let base = eval(logits.clone(), vec![0.2 + 0.1, 0.5 - 0.1], vec![0.3, 0.8]);
    let shifted = eval(logits, vec![0.2 + 0.1 + delta, 0.5 - 0.1 - delta], vec![0.3, 0.8]);
    let dw = shifted - base - 0.1 * delta;
    let uniform = eval(Tensor::zeros(&[2, n]), vec![0.2, 0.5], vec![-40.0, 40.0]);
    let ce = uniform - (n as f64).ln();
    check(
        dw.abs() < 1e-12 && ce.abs() < 1e-9,
        format!("duration shift error {dw:.1e}; uniform CE - ln {n} = {ce:.1e}"),
    )
}

fn persistence() -> Outcome {
    let mc = small_model(8, GridSpec { rows: 4, cols: 4 }, 16);
    let mc = ModelConfig { patch_px: 4, ..mc };
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 4,
        max_steps: None,
        log_every: 0,
        ..TrainConfig::default()
    };
    let data = synth_world(10, 14, mc.grid, OrderRule::IntensityOrder).unwrap();
    let (full, full_report) = run_pretrain(&mc, &tc, &data, RunOptions::default()).unwrap();
    let (half, first) = run_pretrain(
        &mc,
        &tc,
        &data,
        RunOptions {
            stop_at: Some(4),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let bytes = write_checkpoint(&half);
    let loaded = read_checkpoint(&bytes).map_err(|e| e.to_string())?;
    if write_checkpoint(&loaded) != bytes {
        return Err("save -> load -> save changed the bytes".into());
    }
    let (rest, second) = run_pretrain(
        &mc,
        &tc,
        &data,
        RunOptions {
            resume: Some(loaded),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let joined: Vec<_> = first.steps.iter().chain(&second.steps).cloned().collect();
    check(
        joined == full_report.steps && write_checkpoint(&rest) == write_checkpoint(&full),
        format!(
            "{} bytes round-trip; resumed {} + {} steps match the uninterrupted run",
            bytes.len(),
            first.steps.len(),
            second.steps.len()
        ),
    )
}

fn main() {
    let ablation_report = ablation();
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradients()),
        ("causality", causality()),
        ("target-encoder isolation", target_isolation()),
        ("coverage partition", coverage()),
        ("end-to-end learning", end_to_end()),
        ("ordering ablation", ordering(&ablation_report)),
        ("probe AUROC sanity", probe_sanity(&ablation_report)),
        ("metric oracles", metric_oracles()),
        ("decoder loss weighting", decoder_loss_weights()),
        ("persistence", persistence()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
