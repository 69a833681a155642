//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dpsim::config::ExperimentConfig;
use dpsim::costmodel::{
    decode_step_seconds, decode_step_time, predict_tpot, predict_ttft, prefill_time, transfer_seconds, BatchMember,
    Calibration, CalibrationTarget, CostParams,
};
use dpsim::domain::{ClusterConfig, DecodePoolMode, GpuSpec, ModelProfile, Outcome, Phase, Request};
use dpsim::engine::{run, EventKind, SimOptions};
use dpsim::harness::{self, ratio_grid, run_cells, run_trace, Cell, SummaryRow, SweepSpec};
use dpsim::routing::DecodeRule;
use dpsim::workload::{generate_trace, zipf_split, ArrivalProcess, WorkloadSpec};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let result = result.and_then(|d| {
        if elapsed <= budget {
            Ok(d)
        } else {
            Err(format!("{d}; exceeded runtime budget"))
        }
    });
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!(
        "{tag} {n:>2} {name} [{:.2}s of {}s] {detail}",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    result.is_ok()
}

// 1

fn zipf_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for alpha in [0.0, 0.5, 1.5, 3.0] {
        for n in [1usize, 4, 16] {
            for total in [1.0, 7.3] {
                let got = zipf_split(n, alpha, total);
                let norm: f64 = (1..=n).rev().map(|j| 1.0 / (j as f64).powf(alpha)).sum();
                for (i, g) in got.iter().enumerate() {
                    let want = total / ((i + 1) as f64).powf(alpha) / norm;
                    worst = worst.max(rel(*g, want));
                }
                ensure(rel(got.iter().sum::<f64>(), total) < 1e-12, || {
                    format!("alpha {alpha} n {n}: sum drifts")
                })?;
            }
        }
    }
    ensure(worst < 1e-12, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

// 2

fn conservation() -> Check {
    let mut rng = common::rng(2);
    let opts = SimOptions {
        record_trace: true,
        record_steps: true,
        ..SimOptions::default()
    };
    let (mut requests, mut rejected) = (0usize, 0usize);
    for case in 0..1000 {
        let (cluster, trace) = common::random_case(&mut rng);
        let out = run(&cluster, &trace, &common::cost(), &opts).map_err(|e| format!("case {case}: {e}"))?;
        let r = &out.resources;
        let generated: u64 = out
            .completed()
            .map(|q| u64::from(q.realized_osl.saturating_sub(1)))
            .sum();
        ensure(r.decode_token_steps == generated, || {
            format!(
                "case {case}: {} decode tokens charged, {generated} owed",
                r.decode_token_steps
            )
        })?;
        ensure(out.requests.iter().all(|q| q.outcome != Outcome::Pending), || {
            format!("case {case}: requests left pending")
        })?;
        ensure(r.kv_created == trace.len() as u64 && r.kv_freed == r.kv_created, || {
            format!("case {case}: created {} freed {}", r.kv_created, r.kv_freed)
        })?;
        let mut freed = BTreeMap::new();
        for rec in out.trace.records.iter() {
            if matches!(rec.kind, EventKind::RequestComplete | EventKind::OverCapacity) {
                *freed.entry(rec.request_id).or_insert(0) += 1;
            }
        }
        ensure(freed.len() == trace.len() && freed.values().all(|&c| c == 1), || {
            format!("case {case}: a KV handle was not freed exactly once")
        })?;
        ensure(r.memory_violations == 0, || format!("case {case}: memory violated"))?;
        let cap = cluster.gpu.hbm_capacity;
        for s in &r.steps {
            let weights = cluster.decode_weight_bytes(s.worker);
            ensure(weights + s.resident_kv_bytes <= cap, || {
                format!("case {case}: step over capacity")
            })?;
        }
        requests += trace.len();
        rejected += out
            .requests
            .iter()
            .filter(|q| q.outcome == Outcome::OverCapacity)
            .count();
    }
    Ok(format!("1000 runs, {requests} requests, {rejected} over capacity"))
}

// 3

fn random_cells(seed: u64, count: usize) -> Vec<Cell> {
    let text = std::fs::read_to_string(common::repo_root().join("configs/fig3_base.toml")).unwrap();
    let base = ExperimentConfig::from_toml(&text, "fig3_base.toml").unwrap();
    let mut rng = common::rng(seed);
    (0..count)
        .map(|index| {
            let mut c = base.clone();
            c.cluster.mode = if common::below(&mut rng, 3) == 0 {
                DecodePoolMode::Isolated
            } else {
                DecodePoolMode::Shared
            };
            match c.cluster.mode {
                DecodePoolMode::Isolated => {
                    c.cluster.decode_pool_size = None;
                    c.routing.decode_rule = Some(DecodeRule::Pinned);
                }
                DecodePoolMode::Shared => {
                    c.cluster.decode_pool_size = Some(1 + common::below(&mut rng, 4) as usize);
                    c.routing.decode_rule = Some(
                        [
                            DecodeRule::LeastOutstandingTokens,
                            DecodeRule::RoundRobin,
                            DecodeRule::WeightedRandom,
                        ][common::below(&mut rng, 3) as usize],
                    );
                }
            }
            let w = &mut c.workload;
            w.alpha = 3.0 * common::uniform(&mut rng);
            w.total_rps = 1.0 + 15.0 * common::uniform(&mut rng);
            w.isl = 64 + common::below(&mut rng, 2048) as u32;
            w.osl = 2 + common::below(&mut rng, 256) as u32;
            w.grace_period = 5.0;
            w.measurement_window = 20.0;
            w.drain_margin = Some(10.0);
            w.seed = common::below(&mut rng, 1 << 32);
            w.arrival_process = ArrivalProcess::Poisson;
            Cell {
                index,
                replicate: 0,
                config: c,
            }
        })
        .collect()
}

fn csv_bytes(rows: &[SummaryRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    harness::write_csv(&mut buf, rows).unwrap();
    buf
}

fn determinism() -> Check {
    let cells = random_cells(3, 20);
    let runs = [
        csv_bytes(&run_cells(&cells, 1)),
        csv_bytes(&run_cells(&cells, 1)),
        csv_bytes(&run_cells(&cells, 8)),
        csv_bytes(&run_cells(&cells, 8)),
    ];
    ensure(runs.iter().all(|r| r == &runs[0]), || {
        "CSV bytes differ between runs".into()
    })?;
    let failed = run_cells(&cells, 1).iter().filter(|r| r.error.is_some()).count();
    Ok(format!(
        "20 configs x 2 repeats x parallel {{1, 8}}: identical {} byte CSVs ({failed} cells reported errors)",
        runs[0].len()
    ))
}

// 4

fn closed_form_chain() -> Check {
    let gpu = GpuSpec::a100_80gb();
    let c = common::cost();
    let mut worst: f64 = 0.0;
    let mut rng = common::rng(4);
    for _ in 0..200 {
        let model = ModelProfile {
            decode_weight_bits: if common::below(&mut rng, 2) == 0 { 16 } else { 4 },
            prefill_weight_bits: if common::below(&mut rng, 2) == 0 { 16 } else { 4 },
            ..ModelProfile::llama31_8b()
        };
        let isl = 1 + common::below(&mut rng, 8192) as u32;
        let osl = 1 + common::below(&mut rng, 512) as u32;
        let arrival = 100.0 * common::uniform(&mut rng);
        let cluster = ClusterConfig::isolated(vec![model.clone()], gpu);
        let out = run(
            &cluster,
            &[Request::new(0, 0, arrival, isl, osl)],
            &c,
            &SimOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let r = &out.requests[0];

        let ttft =
            prefill_time(&model, isl, &c, &gpu) + transfer_seconds(u64::from(isl), model.kv_bytes_per_token, &gpu);
        let w = model.weight_bytes(Phase::Decode);
        let decode: f64 = (0..u64::from(osl - 1))
            .map(|j| decode_step_seconds(w, (u64::from(isl) + j) as f64 * model.kv_bytes_per_token, &c, &gpu))
            .sum();
        let got_ttft = r.timestamps.first_token_time.unwrap() - r.arrival_time;
        worst = worst.max((got_ttft - ttft).abs());
        if osl >= 2 {
            let got_tpot = (r.completion_time().unwrap() - r.timestamps.first_token_time.unwrap()) / f64::from(osl - 1);
            worst = worst.max((got_tpot - decode / f64::from(osl - 1)).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max abs error {worst:e} s"))?;
    Ok(format!("200 single-request runs, max abs error {worst:.1e} s"))
}

// 5

fn cost_orderings() -> Check {
    let mut rng = common::rng(5);
    for draw in 0..10_000 {
        let u = |r: &mut _| common::uniform(r);
        let params = CostParams {
            prefill_flops_per_token: 2.0 * (1e9 + 7e10 * u(&mut rng)),
            prefill_fixed_overhead: 0.05 * u(&mut rng),
            decode_fixed_overhead: 0.02 * u(&mut rng),
            dequant_compute_penalty: 1.0 + u(&mut rng),
            mfu: 0.05 + 0.95 * u(&mut rng),
            mbu: 0.05 + 0.95 * u(&mut rng),
        };
        let gpu = GpuSpec {
            flops: 1e14 * (1.0 + 9.0 * u(&mut rng)),
            hbm_bandwidth: 1e12 * (1.0 + 4.0 * u(&mut rng)),
            hbm_capacity: 80e9,
            interconnect_bandwidth: 1e10 * (1.0 + 99.0 * u(&mut rng)),
            interconnect_latency: 1e-4 * u(&mut rng),
        };
        let base = ModelProfile {
            param_count: 1e9 + 7e10 * u(&mut rng),
            kv_bytes_per_token: 1e4 + 5e5 * u(&mut rng),
            ..ModelProfile::llama31_8b()
        };
        let with_bits = |p: u8, d: u8| ModelProfile {
            prefill_weight_bits: p,
            decode_weight_bits: d,
            ..base.clone()
        };
        let isl = 1 + common::below(&mut rng, 16_384) as u32;
        let tokens = common::below(&mut rng, 1 << 20);
        let fail = |what: &str| format!("draw {draw}: {what}");

        // quantization ordering
        let (p16, p4) = (
            prefill_time(&with_bits(16, 16), isl, &params, &gpu),
            prefill_time(&with_bits(4, 16), isl, &params, &gpu),
        );
        ensure(p4 >= p16, || fail("4-bit prefill faster than 16-bit"))?;
        let w16 = with_bits(16, 16).weight_bytes(Phase::Decode);
        let w4 = with_bits(16, 4).weight_bytes(Phase::Decode);
        let kv = tokens as f64 * base.kv_bytes_per_token;
        ensure(
            decode_step_seconds(w4, kv, &params, &gpu) < decode_step_seconds(w16, kv, &params, &gpu),
            || fail("4-bit decode step not faster"),
        )?;

        // phase independence
        ensure(prefill_time(&with_bits(16, 4), isl, &params, &gpu) == p16, || {
            fail("decode bits change prefill")
        })?;
        let one = |m: &ModelProfile| {
            decode_step_time(
                &[BatchMember::new(m, 0, tokens)],
                m.weight_bytes(Phase::Decode),
                &params,
                &gpu,
            )
        };
        ensure(
            one(&with_bits(4, 16)).unwrap() == one(&with_bits(16, 16)).unwrap(),
            || fail("prefill bits change decode"),
        )?;

        // amortization: one batch of n beats n solo steps
        let n = 2 + common::below(&mut rng, 63) as usize;
        let m = with_bits(16, 16);
        let batch: Vec<_> = (0..n).map(|_| BatchMember::new(&m, 0, tokens)).collect();
        let batched = decode_step_time(&batch, w16, &params, &gpu).unwrap();
        let solo = one(&m).unwrap();
        ensure(batched < n as f64 * solo, || fail("batching does not amortize"))?;
        ensure(batched / n as f64 <= solo, || {
            fail("per-request step cost grows with batch")
        })?;

        // monotonicity
        ensure(prefill_time(&m, isl + 1, &params, &gpu) > p16, || {
            fail("prefill not increasing in isl")
        })?;
        ensure(
            decode_step_seconds(w16, kv + base.kv_bytes_per_token, &params, &gpu)
                > decode_step_seconds(w16, kv, &params, &gpu),
            || fail("step not increasing in kv"),
        )?;
        ensure(
            transfer_seconds(tokens + 1, base.kv_bytes_per_token, &gpu)
                > transfer_seconds(tokens, base.kv_bytes_per_token, &gpu),
            || fail("transfer not increasing in tokens"),
        )?;
    }
    Ok("10000 draws".into())
}

// 6, 7

fn row(method: &str, isl: u32) -> CalibrationTarget {
    let (p, d) = match method {
        "full_ft" => (16, 16),
        "awq" => (4, 4),
        _ => (16, 4),
    };
    CalibrationTarget {
        model: method.into(),
        prefill_bits: p,
        decode_bits: d,
        isl,
        osl: 1024,
        concurrency: 1,
        ttft_ms: None,
        tpot_ms: None,
    }
}

fn predicted(fit: &Calibration, method: &str, isl: u32) -> (f64, f64) {
    let (m, g) = (ModelProfile::llama31_8b(), GpuSpec::a100_80gb());
    let t = row(method, isl);
    (
        1e3 * predict_ttft(&t, &m, fit.kv_bytes_per_token, &fit.params, &g),
        1e3 * predict_tpot(&t, &m, fit.kv_bytes_per_token, &fit.params, &g),
    )
}

fn quantization_reproduction() -> Check {
    let mut details = Vec::new();
    for file in ["llama31_8b_conc1.csv", "llama31_8b.csv"] {
        let fit = common::fit(file);
        let (full_ttft, full_tpot) = predicted(&fit, "full_ft", 1024);
        let (q_ttft, q_tpot) = predicted(&fit, "w4_decode", 1024);
        let (awq_ttft, _) = predicted(&fit, "awq", 1024);
        let checks = [
            ("Full-FT TTFT", rel(full_ttft, 99.1), 0.03),
            ("Full-FT TPOT", rel(full_tpot, 13.8), 0.03),
            ("4-bit-decode TTFT vs Full-FT", rel(q_ttft, full_ttft), 0.02),
            ("4-bit-decode TPOT", rel(q_tpot, 7.6), 0.03),
            ("AWQ/Full-FT TTFT ratio", rel(awq_ttft / full_ttft, 118.7 / 99.1), 0.03),
        ];
        for (name, err, tol) in checks {
            ensure(err <= tol, || format!("{file}: {name} off by {:.2}%", 100.0 * err))?;
        }
        details.push(format!(
            "{file}: TTFT {full_ttft:.1}/{q_ttft:.1}/{awq_ttft:.1} ms, TPOT {full_tpot:.2}->{q_tpot:.2} ms (-{:.1}%)",
            100.0 * (1.0 - q_tpot / full_tpot)
        ));
    }
    Ok(details.join("; "))
}

fn isl_scaling() -> Check {
    let fit = common::fit("llama31_8b.csv");
    let mut parts = Vec::new();
    for (isl, want) in [(1024, 99.1), (2048, 176.5), (4096, 317.3)] {
        let (got, _) = predicted(&fit, "full_ft", isl);
        ensure(rel(got, want) <= 0.10, || {
            format!("ISL {isl}: {got:.1} ms vs {want} ms")
        })?;
        parts.push(format!("{isl}:{got:.1}ms({:+.1}%)", 100.0 * (got - want) / want));
    }
    // the concurrency-1, single-ISL fit cannot identify the prefill overhead
    let narrow = common::fit("llama31_8b_conc1.csv");
    let (extrapolated, _) = predicted(&narrow, "full_ft", 4096);
    Ok(format!(
        "{}; ISL-1024-only fit would give {extrapolated:.0} ms at 4096",
        parts.join(" ")
    ))
}

// 8, 9, 10

fn sweep(name: &str) -> Result<(SweepSpec, Vec<SummaryRow>), String> {
    let spec = SweepSpec::load(&common::repo_root().join("configs").join(name)).map_err(|e| e.to_string())?;
    let fit = common::fit("llama31_8b.csv");
    ensure(spec.base.cost == fit.params, || {
        format!("{name}: cost section differs from the calibration")
    })?;
    ensure(
        spec.base
            .cluster
            .models
            .iter()
            .all(|m| m.kv_bytes_per_token == Some(fit.kv_bytes_per_token)),
        || format!("{name}: kv_bytes_per_token differs from the calibration"),
    )?;
    let rows = harness::run_sweep(&spec, 1).map_err(|e| e.to_string())?;
    if let Some(r) = rows.iter().find(|r| r.error.is_some()) {
        return Err(format!("cell {} failed: {}", r.cell, r.error.as_deref().unwrap()));
    }
    Ok((spec, rows))
}

fn consolidation() -> Check {
    let (_, rows) = sweep("fig3_sweep.toml")?;
    ensure(rows.len() == 24, || format!("{} rows", rows.len()))?;
    let pick: Vec<&SummaryRow> = [4, 3, 2, 1]
        .iter()
        .map(|&k| {
            rows.iter()
                .find(|r| r.k == k && r.alpha == 0.0 && r.osl == 256)
                .unwrap()
        })
        .collect();
    let per_gpu: Vec<f64> = pick.iter().map(|r| r.throughput_per_decode_gpu.unwrap()).collect();
    ensure(per_gpu.windows(2).all(|w| w[1] > w[0]), || {
        format!("per-GPU throughput {per_gpu:?} not increasing")
    })?;
    let total = |r: &SummaryRow| r.output_throughput_tok_s.unwrap();
    let total_drift = rel(total(pick[1]), total(pick[0]));
    ensure(total_drift <= 0.05, || {
        format!("K=3 total throughput off by {:.1}%", 100.0 * total_drift)
    })?;
    let gain = per_gpu[1] / per_gpu[0] - 1.0;
    ensure((0.20..=0.45).contains(&gain), || {
        format!("per-GPU gain at K=3 is {:.1}%", 100.0 * gain)
    })?;
    let tpot = |r: &SummaryRow| r.tpot_mean_s.unwrap();
    let degradation = tpot(pick[1]) / tpot(pick[0]) - 1.0;
    ensure(degradation <= 0.15, || {
        format!("TPOT degradation {:.1}%", 100.0 * degradation)
    })?;
    Ok(format!(
        "per-GPU tok/s K4..K1 {:.0}/{:.0}/{:.0}/{:.0}; K=3 gain {:+.1}%, TPOT {:+.1}%, total {:+.2}%",
        per_gpu[0],
        per_gpu[1],
        per_gpu[2],
        per_gpu[3],
        100.0 * gain,
        100.0 * degradation,
        100.0 * (total(pick[1]) / total(pick[0]) - 1.0)
    ))
}

fn skew_robustness() -> Check {
    let (_, rows) = sweep("fig4_sweep.toml")?;
    let get = |mode: DecodePoolMode, alpha: f64| {
        rows.iter()
            .find(|r| r.decode_pool_mode == mode && r.alpha == alpha)
            .ok_or_else(|| format!("missing {mode} alpha {alpha}"))
    };
    let thr = |r: &SummaryRow| r.output_throughput_tok_s.unwrap();
    let (b0, b3) = (get(DecodePoolMode::Isolated, 0.0)?, get(DecodePoolMode::Isolated, 3.0)?);
    let (s0, s3) = (get(DecodePoolMode::Shared, 0.0)?, get(DecodePoolMode::Shared, 3.0)?);
    let base_drop = 1.0 - thr(b3) / thr(b0);
    ensure(base_drop >= 0.10, || {
        format!("baseline throughput drop {:.1}%", 100.0 * base_drop)
    })?;
    let shared_drift = rel(thr(s3), thr(s0));
    ensure(shared_drift <= 0.05, || {
        format!("shared throughput drift {:.1}%", 100.0 * shared_drift)
    })?;
    let inter = s3.interactivity_tok_s.unwrap() / b3.interactivity_tok_s.unwrap() - 1.0;
    ensure(inter >= 0.25, || format!("interactivity gain {:.1}%", 100.0 * inter))?;
    Ok(format!(
        "baseline throughput {:.0}->{:.0} tok/s ({:+.1}%), shared {:.0}->{:.0} ({:+.1}%), interactivity at alpha 3 {:+.1}%",
        thr(b0),
        thr(b3),
        -100.0 * base_drop,
        thr(s0),
        thr(s3),
        100.0 * (thr(s3) / thr(s0) - 1.0),
        100.0 * inter
    ))
}

fn ratio_shape() -> Check {
    let (_, rows) = sweep("fig5_sweep.toml")?;
    let grid = ratio_grid(&rows);
    let max = grid.iter().filter_map(|g| g.ratio).fold(0.0, f64::max);
    ensure(grid.iter().all(|g| g.ratio.is_some()), || {
        "a grid cell has no ratio".into()
    })?;
    ensure(max <= 1.02, || format!("ratio {max:.4} above 1.02"))?;

    let at = |mode: DecodePoolMode| {
        let mut v: Vec<(f64, f64)> = grid
            .iter()
            .filter(|g| g.mode == mode && g.offered_rps == 2.0)
            .map(|g| (g.alpha, g.ratio.unwrap()))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let (base, shared) = (at(DecodePoolMode::Isolated), at(DecodePoolMode::Shared));
    ensure(base.windows(2).all(|w| w[1].1 <= w[0].1), || {
        format!("baseline ratio not nonincreasing: {base:?}")
    })?;
    for ((alpha, b), (_, s)) in base.iter().zip(&shared) {
        if *alpha >= 1.5 {
            ensure(b < s, || {
                format!("alpha {alpha}: baseline {b:.4} not below shared {s:.4}")
            })?;
        }
    }
    let fmt = |v: &[(f64, f64)]| v.iter().map(|(_, r)| format!("{r:.3}")).collect::<Vec<_>>().join("/");
    Ok(format!(
        "{} cells, max ratio {max:.4}; at 2 rps baseline {} vs shared {}",
        grid.len(),
        fmt(&base),
        fmt(&shared)
    ))
}

// 11

fn model_agnosticism() -> Check {
    let spec = WorkloadSpec {
        n_models: 4,
        total_rps: 9.0,
        alpha: 2.0,
        isl: 1024,
        osl: 256,
        grace_period: 10.0,
        measurement_window: 60.0,
        drain_margin: Some(30.0),
        seed: 11,
        arrival_process: ArrivalProcess::Poisson,
    };
    let trace = generate_trace(&spec);
    let perms: [[usize; 4]; 3] = [[3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]];
    let text = std::fs::read_to_string(common::repo_root().join("configs/fig3_base.toml")).unwrap();
    let mut base = ExperimentConfig::from_toml(&text, "fig3_base.toml").unwrap();
    base.cluster.decode_pool_size = Some(2);
    base.workload.total_rps = spec.total_rps;
    base.workload.alpha = spec.alpha;
    base.workload.grace_period = spec.grace_period;
    base.workload.measurement_window = spec.measurement_window;
    base.workload.drain_margin = spec.drain_margin;
    let mut checked = 0;
    for rule in [
        DecodeRule::LeastOutstandingTokens,
        DecodeRule::RoundRobin,
        DecodeRule::WeightedRandom,
    ] {
        base.routing.decode_rule = Some(rule);
        let exp = base.resolve().map_err(|e| e.to_string())?;
        let opts = exp.sim_options();
        let reference = run_trace(&exp, &trace, &opts).map_err(|e| e.to_string())?;
        for p in perms {
            let relabeled: Vec<Request> = trace
                .iter()
                .map(|r| Request::new(r.id, p[r.model_id], r.arrival_time, r.isl, r.target_osl))
                .collect();
            let other = run_trace(&exp, &relabeled, &opts).map_err(|e| e.to_string())?;
            ensure(
                other.output.resources.dispatches == reference.output.resources.dispatches,
                || format!("{}: dispatch sequence changed under {p:?}", rule.as_str()),
            )?;
            ensure(other.summary == reference.summary, || {
                format!("{}: summary changed under {p:?}", rule.as_str())
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} relabelings of a {}-request skewed trace",
        trace.len()
    ))
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let results = [
        criterion(1, "zipf split matches direct summation", s(1), zipf_oracle),
        criterion(2, "token, KV and memory conservation", s(30), conservation),
        criterion(
            3,
            "byte-identical CSV across runs and thread counts",
            s(60),
            determinism,
        ),
        criterion(4, "single-request closed-form chain", s(1), closed_form_chain),
        criterion(5, "cost-model orderings", s(10), cost_orderings),
        criterion(
            6,
            "calibration reproduces the quantization table",
            s(10),
            quantization_reproduction,
        ),
        criterion(7, "TTFT scaling with input length", s(10), isl_scaling),
        criterion(8, "decode-pool consolidation trade-off", s(120), consolidation),
        criterion(9, "skew robustness", s(300), skew_robustness),
        criterion(10, "achieved/offered ratio shape", s(300), ratio_shape),
        criterion(
            11,
            "shared-pool dispatch ignores model labels",
            s(30),
            model_agnosticism,
        ),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
