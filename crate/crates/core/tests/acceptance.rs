// SPDX-License-Identifier: Apache-2.0

//! Acceptance gate. Each test prints one `PASS`/`FAIL` line; the last one is
//! informational and never fails.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use bspb::coeff::input_working_set_bytes;
use bspb::driver::run_with_table;
use bspb::kernels::vgh_output_bytes;
use bspb::metrics::{tune_tile_size, ThroughputRecord, TuneBudget};
use bspb::verify::{
    accounting_suite, derivative_suite, exact_field_suite, identity_suite, oracle_suite,
};
use bspb::{
    memory_footprint, run_population, tile_table, CoeffTableSoA, FillSpec, GridSpec, KernelKind,
    Layout, PreparedTable, RunConfig, SplineKernels, WalkerOutputsSoA,
};

const SEED: u64 = 20_170_512;

// Runtime budgets are wall-clock; run one criterion at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Bypasses output capture so the verdict shows under plain `cargo test`.
fn report(criterion: u32, passed: bool, elapsed: Duration, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let line = format!(
        "[acceptance] {verdict} criterion {criterion} ({:.2}s): {detail}\n",
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn grid16() -> GridSpec {
    GridSpec::cubic(16).unwrap()
}

#[test]
fn criterion_1_identities() {
    let _g = serial();
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for spacing in [1.0, 0.5, 0.125] {
        let (pass, detail) = identity_suite(10_000, spacing, SEED).unwrap();
        ok &= pass;
        details.push(format!("spacing {spacing}: {detail}"));
    }
    let elapsed = start.elapsed();
    let ok = ok && elapsed < Duration::from_secs(1);
    report(1, ok, elapsed, &details.join("; "));
    assert!(ok, "{details:?} in {elapsed:?}");
}

#[test]
fn criterion_2_exact_fields() {
    let _g = serial();
    let start = Instant::now();
    let (pass, detail) = exact_field_suite(grid16(), 16, 1000, SEED).unwrap();
    let elapsed = start.elapsed();
    let ok = pass && elapsed < Duration::from_secs(1);
    report(2, ok, elapsed, &detail);
    assert!(ok, "{detail} in {elapsed:?}");
}

#[test]
fn criterion_3_oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for n in [16, 48] {
        let (pass, detail) = oracle_suite(grid16(), n, 1000, SEED + n as u64).unwrap();
        ok &= pass;
        details.push(format!("N={n}: {detail}"));
    }
    let elapsed = start.elapsed();
    let ok = ok && elapsed < Duration::from_secs(10);
    report(3, ok, elapsed, &details.join("; "));
    assert!(ok, "{details:?} in {elapsed:?}");
}

#[test]
fn criterion_4_derivatives() {
    let _g = serial();
    let start = Instant::now();
    let soa = CoeffTableSoA::build(grid16(), 48, FillSpec::Random(SEED)).unwrap();
    let aos = soa.to_aos();
    let tiled = tile_table(&soa, 16).unwrap();
    let runs = [
        ("soa", derivative_suite(&soa, 1000, SEED).unwrap()),
        ("aos", derivative_suite(&aos, 300, SEED + 1).unwrap()),
        ("aosoa", derivative_suite(&tiled, 300, SEED + 2).unwrap()),
    ];
    let elapsed = start.elapsed();
    let ok = runs.iter().all(|(_, (p, _))| *p) && elapsed < Duration::from_secs(10);
    let detail = runs
        .iter()
        .map(|(name, (_, d))| format!("{name}: {d}"))
        .collect::<Vec<_>>()
        .join("; ");
    report(4, ok, elapsed, &detail);
    assert!(ok, "{detail} in {elapsed:?}");
}

#[test]
fn criterion_5_determinism() {
    let _g = serial();
    let start = Instant::now();
    let base = RunConfig {
        n_splines: 256,
        grid: grid16(),
        tile_size: 64,
        layout: Layout::AoSoA,
        n_walkers: 8,
        samples_per_kernel: 8,
        iterations: 2,
        threads_total: 1,
        threads_per_walker: 1,
        seed: SEED,
        kernels: KernelKind::ALL.to_vec(),
        warmup: true,
        verify: false,
    };
    let table = PreparedTable::for_config(&base).unwrap();
    let reference = run_with_table(&base, &table).unwrap().retained;
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for threads in [1, 2, 8] {
        for team in [1, 2, 4] {
            if team > threads {
                continue;
            }
            let cfg = RunConfig {
                threads_total: threads,
                threads_per_walker: team,
                ..base.clone()
            };
            let got = run_with_table(&cfg, &table).unwrap().retained;
            if got != reference {
                mismatches.push(format!("threads={threads} n_th={team}"));
            }
            checked += 1;
        }
    }
    // a fresh table and the untiled SoA layout as well
    let fresh = run_population(&base).unwrap().retained;
    let soa = run_population(&RunConfig {
        layout: Layout::SoA,
        tile_size: 0,
        ..base.clone()
    })
    .unwrap()
    .retained;
    if fresh != reference {
        mismatches.push("rebuilt table".into());
    }
    if soa != reference {
        mismatches.push("untiled soa".into());
    }
    let elapsed = start.elapsed();
    let ok = mismatches.is_empty() && elapsed < Duration::from_secs(30);
    let detail = format!(
        "{checked} thread layouts plus rebuilt and untiled runs, {} retained outputs each, mismatches {mismatches:?}",
        reference.len()
    );
    report(5, ok, elapsed, &detail);
    assert!(ok, "{detail} in {elapsed:?}");
}

#[test]
fn criterion_6_accounting() {
    let _g = serial();
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for n in [16, 48, 128] {
        let (pass, detail) = accounting_suite(grid16(), n, SEED).unwrap();
        ok &= pass;
        details.push(format!("N={n}: {detail}"));
    }
    let soa = CoeffTableSoA::build(grid16(), 64, FillSpec::Random(SEED)).unwrap();
    let tiled = tile_table(&soa, 16).unwrap();
    for kind in KernelKind::ALL {
        let mut out = tiled.new_outputs();
        let c = tiled
            .eval_instrumented(kind, [3.3, 7.1, 12.9], &mut out)
            .unwrap();
        let pass = c.coeff_reads == 64 * 64 && c.output_writes == kind.soa_streams() as u64 * 64;
        ok &= pass;
        if !pass {
            details.push(format!("tiled {kind}: {c:?}"));
        }
    }
    let elapsed = start.elapsed();
    let ok = ok && elapsed < Duration::from_secs(5);
    report(6, ok, elapsed, &details.join("; "));
    assert!(ok, "{details:?} in {elapsed:?}");
}

#[test]
fn criterion_7_footprints() {
    let _g = serial();
    let start = Instant::now();
    let grid = GridSpec::cubic(48).unwrap();
    let table = CoeffTableSoA::build(grid, 128, FillSpec::Constant(0.0)).unwrap();
    let table_bytes = memory_footprint(&table);
    let formula = input_working_set_bytes(&grid, 128);
    let mut ok = table_bytes == 56_623_104 && formula == 56_623_104;
    let mut details = vec![format!(
        "48^3 x 128 table {table_bytes} bytes, formula {formula}"
    )];
    for (nw, nb) in [(1, 16), (4, 64), (256, 128), (16, 512)] {
        let per_walker = WalkerOutputsSoA::new(nb).vgh_working_set_bytes();
        let total = vgh_output_bytes(nw, nb);
        let pass = per_walker == 40 * nb && total == 40 * nw * nb;
        ok &= pass;
        if !pass {
            details.push(format!(
                "Nw={nw} Nb={nb}: {per_walker} per walker, {total} total"
            ));
        }
    }
    details.push("40 Nw Nb output sets exact".into());
    let elapsed = start.elapsed();
    report(7, ok, elapsed, &details.join("; "));
    assert!(ok, "{details:?}");
}

#[test]
fn criterion_8_tuner() {
    let _g = serial();
    let start = Instant::now();
    let cfg = RunConfig {
        n_splines: 512,
        grid: GridSpec::cubic(32).unwrap(),
        n_walkers: 1,
        samples_per_kernel: 64,
        threads_total: 1,
        seed: SEED,
        ..RunConfig::default()
    };
    let t = tune_tile_size(&cfg, KernelKind::Vgh, TuneBudget::default())
        .unwrap()
        .expect("N = 512 is tunable");
    let elapsed = start.elapsed();
    let max = t
        .throughputs
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let argmax = t
        .throughputs
        .iter()
        .rposition(|&x| x == max)
        .map(|i| t.scanned[i]);
    let ok = t.scanned == [16, 32, 64, 128, 256, 512]
        && Some(t.best_nb) == argmax
        && t.throughputs.iter().all(|&x| t.best_throughput >= x)
        && elapsed < Duration::from_secs(120);
    let table: Vec<String> = t
        .scanned
        .iter()
        .zip(&t.throughputs)
        .map(|(nb, tp)| format!("{nb}:{tp:.3e}"))
        .collect();
    let detail = format!(
        "scanned [{}], best Nb={} T={:.3e}",
        table.join(", "),
        t.best_nb,
        t.best_throughput
    );
    report(8, ok, elapsed, &detail);
    assert!(ok, "{detail} in {elapsed:?}");
}

/// Median VGH throughput of `cfg` on `table`, one walker, about `seconds` per run.
fn vgh_throughput(cfg: &RunConfig, table: &PreparedTable, seconds: f64) -> f64 {
    let mut cfg = RunConfig {
        kernels: vec![KernelKind::Vgh],
        iterations: 1,
        ..cfg.clone()
    };
    loop {
        let r = run_with_table(&cfg, table).unwrap();
        let t = r.timing(KernelKind::Vgh).unwrap().seconds;
        if t >= seconds {
            break;
        }
        cfg.iterations = (cfg.iterations * 2)
            .max((cfg.iterations as f64 * seconds * 1.2 / t.max(1e-9)).ceil() as usize);
    }
    cfg.warmup = false;
    let mut reps: Vec<f64> = (0..3)
        .map(|_| {
            let r = run_with_table(&cfg, table).unwrap();
            ThroughputRecord::from_bench(&r, "local").unwrap()[0].throughput
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    reps[1]
}

#[test]
fn criterion_9_relative_performance_informational() {
    let _g = serial();
    let start = Instant::now();
    let grid = GridSpec::cubic(32).unwrap();
    let base = RunConfig {
        grid,
        n_walkers: 1,
        samples_per_kernel: 16,
        threads_total: 1,
        seed: SEED,
        ..RunConfig::default()
    };
    let mut details = Vec::new();
    let mut ok = true;
    for n in [512, 2048] {
        let soa_cfg = RunConfig {
            n_splines: n,
            layout: Layout::SoA,
            ..base.clone()
        };
        let soa_table = PreparedTable::for_config(&soa_cfg).unwrap();
        let t_soa = vgh_throughput(&soa_cfg, &soa_table, 0.3);
        let aos_cfg = RunConfig {
            layout: Layout::AoS,
            ..soa_cfg.clone()
        };
        let t_aos = match &soa_table {
            PreparedTable::SoA(s) => {
                let aos_table = PreparedTable::AoS(s.to_aos());
                drop(soa_table);
                vgh_throughput(&aos_cfg, &aos_table, 0.3)
            }
            _ => unreachable!(),
        };
        let ratio = t_soa / t_aos;
        ok &= ratio >= 1.0;
        details.push(format!("N={n} SoA/AoS VGH = {ratio:.2}x"));
    }
    {
        let n = 4096;
        let soa_cfg = RunConfig {
            n_splines: n,
            layout: Layout::SoA,
            ..base.clone()
        };
        let tuned = tune_tile_size(
            &soa_cfg,
            KernelKind::Vgh,
            TuneBudget {
                min_seconds: 0.2,
                min_samples: 20,
                repetitions: 3,
            },
        )
        .unwrap()
        .expect("N = 4096 is tunable");
        let table = PreparedTable::for_config(&soa_cfg).unwrap();
        let t_untiled = vgh_throughput(&soa_cfg, &table, 0.3);
        let tiled_cfg = RunConfig {
            layout: Layout::AoSoA,
            tile_size: tuned.best_nb,
            ..soa_cfg.clone()
        };
        let tiled = match table {
            PreparedTable::SoA(s) => PreparedTable::Tiled(tile_table(&s, tuned.best_nb).unwrap()),
            _ => unreachable!(),
        };
        let t_tiled = vgh_throughput(&tiled_cfg, &tiled, 0.3);
        let ratio = t_tiled / t_untiled;
        ok &= ratio >= 0.9;
        details.push(format!(
            "N={n} tiled(Nb={})/untiled VGH = {ratio:.2}x",
            tuned.best_nb
        ));
    }
    details.push(format!("grid 32^3, {}", bspb::metrics::machine_label()));
    report(
        9,
        ok,
        start.elapsed(),
        &format!("[informational] {}", details.join("; ")),
    );
}
