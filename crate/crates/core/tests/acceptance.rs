use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::BufReader;
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensemap::bridge::protocol::{decode_request, encode_behavior, encode_error, encode_request, parse_response, Response};
use tensemap::bridge::{serve_lines, Backend, ExternalBackend, SurrogateBackend, Transport};
use tensemap::descriptor::{to_local_behavior, PoseSample};
use tensemap::experiment::{read_grid, run_experiment, ExperimentConfig, ExperimentOutcome};
use tensemap::repertoire::{sample_random, OfferOutcome, Phase};
use tensemap::sim::{SimConfig, Simulator, StructureSpec};
use tensemap::{Archive, Behavior, BinGeometry, BinIndex, ParameterSet};

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

struct Runs {
    _tmp: tempfile::TempDir,
    outcomes: Vec<ExperimentOutcome>,
}

fn quick_config(seed: u64, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed, output_dir: dir.to_path_buf(), ..Default::default() };
    cfg.evaluator.trial_duration_s = 2.0;
    cfg
}

fn ten_seed_runs() -> Runs {
    let tmp = tempfile::tempdir().unwrap();
    let outcomes = (1..=10)
        .map(|seed| {
            let cfg = quick_config(seed, &tmp.path().join(format!("seed{seed}")));
            let mut backend = SurrogateBackend::new(cfg.simulator().unwrap());
            run_experiment(&cfg, &mut backend).unwrap()
        })
        .collect();
    Runs { _tmp: tmp, outcomes }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mutation_beats_control(runs: &Runs) -> Check {
    let mut wins = 0;
    let mut ratios = Vec::new();
    let mut per_seed = Vec::new();
    for o in &runs.outcomes {
        let (m, r) = (o.metrics.mutation.unique, o.metrics.random.unique);
        wins += usize::from(m > r);
        ratios.push(if r == 0 { f64::INFINITY } else { m as f64 / r as f64 });
        per_seed.push(format!("{m}/{r}"));
    }
    let med = median(ratios);
    check(
        wins >= 9 && med >= 1.3,
        format!("mutation beat control in {wins}/10 seeds, median ratio {med:.2} (new bins {})", per_seed.join(" ")),
    )
}

fn elite_quality(runs: &Runs) -> Check {
    let m = median(runs.outcomes.iter().map(|o| o.metrics.mutation.avg_elite_fitness.unwrap_or(0.0)).collect());
    let c = median(runs.outcomes.iter().map(|o| o.metrics.random.avg_elite_fitness.unwrap_or(0.0)).collect());
    check(m >= c, format!("median elite fitness mutation {m:.3} vs control {c:.3}"))
}

fn bins(a: &Archive) -> BTreeSet<BinIndex> {
    a.iter().map(|(b, _)| *b).collect()
}

fn additive_totals(runs: &Runs) -> Check {
    let mut bad = Vec::new();
    for o in &runs.outcomes {
        let t = &o.metrics;
        let shared = bins(&o.shared_archive);
        let treated = bins(&o.mutation_archive);
        let fresh = treated.difference(&shared).count();
        let ok = t.mutation_total.unique == t.shared.unique + t.mutation.unique
            && t.shared.unique == shared.len()
            && t.mutation.unique == fresh
            && t.mutation_total.unique == treated.len()
            && shared.is_subset(&treated);
        if !ok {
            bad.push(o.seeds.master);
        }
    }
    let first = &runs.outcomes[0].metrics;
    check(
        bad.is_empty(),
        format!(
            "total = shared + new holds in {}/10 runs (seed 1: {} + {} = {})",
            10 - bad.len(),
            first.shared.unique,
            first.mutation.unique,
            first.mutation_total.unique
        ),
    )
}

/// Reference discretization and fitness written from the geometry alone.
fn oracle_bin(b: &Behavior) -> (usize, usize, usize) {
    let axis = |v: f64, lo: f64, w: f64, n: usize| (((v - lo) / w).floor().max(0.0) as usize).min(n - 1);
    let psi = (b.dpsi + 180.0).rem_euclid(360.0) - 180.0;
    (axis(b.dx, -360.0, 60.0, 12), axis(b.dy, -360.0, 60.0, 12), axis(psi, -180.0, 60.0, 6))
}

fn oracle_fitness(b: &Behavior) -> f64 {
    (b.dx.abs() / 360.0).min(1.0) + (b.dy.abs() / 360.0).min(1.0) + (b.dpsi.abs() / 180.0).min(1.0)
}

fn archive_replay_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut archive = Archive::new(BinGeometry::default());
    let mut best: HashMap<(usize, usize, usize), (f64, u64)> = HashMap::new();
    let mut violations = 0usize;
    let mut ties = 0usize;
    let n = 10_000u64;
    for id in 0..n {
        // a coarse lattice that also reaches past the bounds, so ties and
        // clamped offers are common
        let b = Behavior::new(
            rng.random_range(-28..=28) as f64 * 15.0,
            rng.random_range(-28..=28) as f64 * 15.0,
            rng.random_range(-12..12) as f64 * 15.0,
        );
        let p = ParameterSet::new(rng.random(), rng.random(), rng.random());
        let key = oracle_bin(&b);
        let f = oracle_fitness(&b);
        let offer = archive.offer(p, b, id, Phase::SharedRandom);
        let expected = match best.get(&key) {
            None => OfferOutcome::NewBin,
            Some(&(incumbent, _)) if f > incumbent => OfferOutcome::Replaced,
            Some(&(incumbent, _)) => {
                if f == incumbent {
                    ties += 1;
                }
                OfferOutcome::Rejected
            }
        };
        if expected != OfferOutcome::Rejected {
            best.insert(key, (f, id));
        }
        if offer.outcome != expected || (offer.bin.ix, offer.bin.iy, offer.bin.ipsi) != key {
            violations += 1;
        }
    }
    if archive.len() != best.len() {
        violations += 1;
    }
    for (bin, elite) in archive.iter() {
        match best.get(&(bin.ix, bin.iy, bin.ipsi)) {
            Some(&(f, id)) if f == elite.fitness && id == elite.trial_id => {}
            _ => violations += 1,
        }
    }
    check(
        violations == 0 && ties > 0,
        format!("{n} offers, {} bins, {ties} tie offers rejected, {violations} violations", archive.len()),
    )
}

fn discretization_sweep() -> Check {
    let g = BinGeometry::default();
    let mut hit = vec![false; g.bin_count()];
    let mut bad = 0u64;
    let mut count = 0u64;
    for dx in -360..=360 {
        for dy in -360..=360 {
            for dpsi in -180..180 {
                let b = Behavior::new(dx as f64, dy as f64, dpsi as f64);
                count += 1;
                let (bin, _) = g.bin_index(&b);
                if bin.ix >= g.nx || bin.iy >= g.ny || bin.ipsi >= g.npsi {
                    bad += 1;
                    continue;
                }
                let iv = g.bin_intervals(bin);
                // the closed upper bound of the range lands in the last bin
                let inside = |v: f64, (lo, hi): (f64, f64), last: bool| lo <= v && (v < hi || (last && v == hi));
                if !(inside(b.dx, iv[0], bin.ix == g.nx - 1)
                    && inside(b.dy, iv[1], bin.iy == g.ny - 1)
                    && inside(b.dpsi, iv[2], false))
                {
                    bad += 1;
                }
                hit[(bin.ipsi * g.ny + bin.iy) * g.nx + bin.ix] = true;
            }
        }
    }
    let covered = hit.iter().filter(|h| **h).count();
    check(
        bad == 0 && g.bin_count() == 864 && covered == 864,
        format!("{count} behaviors swept, {bad} misplaced, {covered}/{} bins reached", g.bin_count()),
    )
}

fn frame_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    let angle_close = |a: f64, b: f64| {
        let d = (a - b + 540.0).rem_euclid(360.0) - 180.0;
        d.abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
    };
    let mut failures = 0;
    for _ in 0..1000 {
        let p0 = PoseSample::new(0.0, rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-180.0..180.0));
        let p1 = PoseSample::new(
            rng.random_range(0.1..20.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(-180.0..180.0),
        );
        let theta: f64 = rng.random_range(-360.0..360.0);
        let (tx, ty) = (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
        let (s, c) = theta.to_radians().sin_cos();
        let move_pose = |p: &PoseSample| PoseSample::new(p.t, c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.yaw + theta);
        let a = to_local_behavior(&p0, &p1).unwrap();
        let b = to_local_behavior(&move_pose(&p0), &move_pose(&p1)).unwrap();
        if !(close(a.dx, b.dx) && close(a.dy, b.dy) && angle_close(a.dpsi, b.dpsi)) {
            failures += 1;
        }
    }
    let origin = PoseSample::new(0.0, 0.0, 0.0, 0.0);
    let ex1 = to_local_behavior(&origin, &PoseSample::new(1.0, 50.0, 25.0, 0.0)).unwrap();
    let ex2 = to_local_behavior(&PoseSample::new(0.0, 0.0, 0.0, 90.0), &PoseSample::new(1.0, 0.0, 100.0, 90.0)).unwrap();
    let examples = ex1 == Behavior::new(50.0, 25.0, 0.0)
        && ex2.quantized() == Behavior::new(100.0, 0.0, 0.0)
        && ex2.dy.abs() < 1e-12
        && ex2.dpsi == 0.0;
    check(
        failures == 0 && examples,
        format!("{failures}/1000 transform failures; examples give {ex1:?} and {:?}", ex2.quantized()),
    )
}

fn rotated(b: &Behavior, degrees: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    (c * b.dx - s * b.dy, s * b.dx + c * b.dy)
}

fn surrogate_invariants() -> Check {
    let sim = Simulator::new(StructureSpec::default(), SimConfig::default()).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;

    let still = sim.trial(&ParameterSet::new(0, 0, 0), 10.0, 0).unwrap();
    let still_ok = still.dx.hypot(still.dy) < 1.0 && still.dpsi.abs() < 0.5;
    pass &= still_ok;
    notes.push(format!("stillness {:.1e} mm {:.1e} deg", still.dx.hypot(still.dy), still.dpsi.abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = sample_random(&mut rng);
        let b0 = sim.trial(&p, 2.0, 0).unwrap();
        for (k, q) in [(1, p.rotated()), (2, p.rotated().rotated())] {
            let b = sim.trial(&q, 2.0, 0).unwrap();
            let (x, y) = rotated(&b0, 120.0 * k as f64);
            let pos = (x - b.dx).hypot(y - b.dy) / b0.dx.hypot(b0.dy).max(1.0);
            let yaw = ((b0.dpsi - b.dpsi + 540.0).rem_euclid(360.0) - 180.0).abs() / b0.dpsi.abs().max(1.0);
            worst = worst.max(pos).max(yaw);
        }
    }
    pass &= worst <= 0.01;
    notes.push(format!("equivariance worst {:.2e}", worst));

    let p = ParameterSet::new(189, 30, 251);
    let a = sim.trial(&p, 2.0, 5).unwrap();
    let b = Simulator::new(StructureSpec::default(), SimConfig::default()).unwrap().trial(&p, 2.0, 5).unwrap();
    let bits = |x: &Behavior| [x.dx.to_bits(), x.dy.to_bits(), x.dpsi.to_bits()];
    let deterministic = bits(&a) == bits(&b);
    pass &= deterministic;
    notes.push(format!("deterministic {deterministic}"));

    let run = sim.simulate(&p, Some(0.5)).unwrap();
    let drift = run.iter().map(|(s, _)| sim.max_strut_drift(s)).fold(0.0, f64::max);
    let span = run.last().unwrap().0.time;
    pass &= drift < 1e-5 && span >= 10.0 - 1e-9;
    notes.push(format!("drift {drift:.1e} over {span:.1} s"));

    let g = BinGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let reached: BTreeSet<BinIndex> =
        (0..500).map(|_| g.bin_index(&sim.trial(&sample_random(&mut rng), 2.0, 0).unwrap()).0).collect();
    pass &= reached.len() >= 30;
    notes.push(format!("{} bins from 500 random trials", reached.len()));

    check(pass, notes.join(", "))
}

fn random_message(rng: &mut ChaCha8Rng) -> String {
    let id: u64 = rng.random();
    match rng.random_range(0..3) {
        0 => encode_request(id, ParameterSet::new(rng.random(), rng.random(), rng.random()), rng.random()),
        1 => {
            let b = Behavior::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4), rng.random_range(-180.0..180.0));
            encode_behavior(id, &b)
        }
        _ => {
            let words: Vec<String> = (0..rng.random_range(0..6))
                .map(|_| (0..rng.random_range(1..8)).map(|_| rng.random_range(b'!'..=b'~') as char).collect())
                .collect();
            encode_error(id, rng.random(), &words.join(" "))
        }
    }
}

fn strip_timestamps(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
        .collect()
}

fn wire_protocol() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let line = random_message(&mut rng);
        let again = if line.starts_with("EVAL") {
            let r = decode_request(&line).unwrap();
            encode_request(r.trial_id, r.params, r.duration_ms)
        } else {
            match parse_response(&line).unwrap() {
                Response::Behavior { trial_id, behavior } => {
                    let back = encode_behavior(trial_id, &behavior);
                    let q = behavior.quantized();
                    if [q.dx, q.dy, q.dpsi].map(f64::to_bits) != [behavior.dx, behavior.dy, behavior.dpsi].map(f64::to_bits) {
                        mismatches += 1;
                    }
                    back
                }
                Response::Error { trial_id, code, message } => encode_error(trial_id, code, &message),
            }
        };
        if again != line {
            mismatches += 1;
        }
    }

    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(3, &tmp.path().join("direct"));
    cfg.n_shared = 4;
    cfg.n_branch = 8;
    let mut direct = SurrogateBackend::new(cfg.simulator().unwrap());
    let a = run_experiment(&cfg, &mut direct).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let mut served = SurrogateBackend::new(cfg.simulator().unwrap());
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        serve_lines(reader, stream, |id, p, ms| served.run_trial(id, p, ms as f64 / 1000.0).map_err(|e| (2, e.to_string())))
            .unwrap();
    });
    let mut remote = ExternalBackend::new(Transport::tcp(&addr).unwrap()).without_cooldown();
    let looped = ExperimentConfig { output_dir: tmp.path().join("loopback"), ..cfg.clone() };
    let b = run_experiment(&looped, &mut remote).unwrap();
    drop(remote);
    server.join().unwrap();

    let trials = a.shared_log.len() + a.mutation_log.len() + a.control_log.len();
    let mut identical = trials == 20;
    for name in ["shared_trials.csv", "mutation_trials.csv", "control_trials.csv", "metrics.csv"] {
        identical &= strip_timestamps(&a.dir.join(name)) == strip_timestamps(&b.dir.join(name));
    }
    check(
        mismatches == 0 && identical,
        format!("1000 messages, {mismatches} round-trip mismatches; loopback {trials}-trial logs identical: {identical}"),
    )
}

fn artifacts(runs: &Runs) -> Check {
    let o = &runs.outcomes[0];
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, archive) in [("mutation", &o.mutation_archive), ("control", &o.control_archive)] {
        let dir = o.dir.join("plots").join(name);
        let grids: Vec<PathBuf> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("grid_psi_"))
            .collect();
        let mut cells = 0;
        let mut shape_ok = grids.len() == 6;
        for p in &grids {
            let grid = read_grid(fs::File::open(p).unwrap()).unwrap();
            shape_ok &= grid.len() == 12 && grid.iter().all(|row| row.len() == 12);
            cells += grid.iter().flatten().filter(|c| c.is_some()).count();
        }
        let svg = fs::read_to_string(dir.join("topdown.svg")).unwrap();
        let (parsed, arrows) = match roxmltree::Document::parse(&svg) {
            Ok(doc) => (true, doc.descendants().filter(|n| n.attribute("class") == Some("arrow")).count()),
            Err(_) => (false, 0),
        };
        let rows = fs::read_to_string(dir.join("topdown.csv")).unwrap().lines().count() - 1;
        let n = archive.len();
        pass &= shape_ok && parsed && cells == n && arrows == n && rows == n;
        notes.push(format!("{name}: {} grids, {cells} cells, {arrows} arrows, {n} bins, svg ok {parsed}", grids.len()));
    }
    check(pass, notes.join("; "))
}

fn repeatability_protocol() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let params = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/repeatability_params.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_tensemap"))
        .arg("repeatability")
        .arg("--params")
        .arg(&params)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    if !status.status.success() {
        return check(false, format!("command failed: {}", String::from_utf8_lossy(&status.stderr)));
    }

    let mut groups: BTreeMap<(String, String), Vec<[f64; 3]>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(tmp.path().join("repeatability_trials.csv")).unwrap();
    let mut durations = BTreeMap::<String, usize>::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let key = (format!("{},{},{}", &rec[0], &rec[1], &rec[2]), rec[3].to_string());
        *durations.entry(rec[3].to_string()).or_default() += 1;
        groups.entry(key).or_default().push([rec[4].parse().unwrap(), rec[5].parse().unwrap(), rec[6].parse().unwrap()]);
    }
    let trials: usize = groups.values().map(Vec::len).sum();
    let param_sets: BTreeSet<&String> = groups.keys().map(|(p, _)| p).collect();
    let schedule_ok = trials == 450
        && param_sets.len() == 15
        && groups.values().all(|g| g.len() == 10)
        && durations.len() == 3
        && durations.values().all(|&n| n == 150);

    let report: toml::Value = toml::from_str(&fs::read_to_string(tmp.path().join("repeatability_report.toml")).unwrap()).unwrap();
    let widths: Vec<f64> = report["suggested_widths"].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect();

    // sample std per axis; yaw is first unwrapped about its circular mean
    let mut need = [0.0f64; 3];
    for reps in groups.values() {
        let n = reps.len() as f64;
        for a in 0..3 {
            let resid: Vec<f64> = if a == 2 {
                let (s, c) = reps.iter().fold((0.0, 0.0), |(s, c), r| (s + r[2].to_radians().sin(), c + r[2].to_radians().cos()));
                let center = s.atan2(c).to_degrees();
                let unwrapped: Vec<f64> = reps.iter().map(|r| (r[2] - center + 540.0).rem_euclid(360.0) - 180.0).collect();
                let mean = unwrapped.iter().sum::<f64>() / n;
                unwrapped.iter().map(|u| u - mean).collect()
            } else {
                let mean = reps.iter().map(|r| r[a]).sum::<f64>() / n;
                reps.iter().map(|r| r[a] - mean).collect()
            };
            let std = (resid.iter().map(|r| r * r).sum::<f64>() / (n - 1.0)).sqrt();
            need[a] = need[a].max(2.0 * std);
        }
    }
    let widths_ok = widths.len() == 3 && (0..3).all(|a| widths[a] >= need[a] * (1.0 - 1e-9) - 1e-9);
    let suggested = report["suggested_duration_s"].as_float().unwrap();
    check(
        schedule_ok && widths_ok,
        format!(
            "{trials} trials over {} parameter sets; widths {:.1} mm, {:.1} mm, {:.1} deg vs 2 sigma {:.1}, {:.1}, {:.1}; suggested {suggested} s",
            param_sets.len(),
            widths[0],
            widths[1],
            widths[2],
            need[0],
            need[1],
            need[2]
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Check| {
        let c = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            check(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("{} {name}: {}", if c.pass { "PASS" } else { "FAIL" }, c.detail);
        results.push((name, c));
    };
    let runs = ten_seed_runs();
    run("mutation finds more new behaviors than random control", &|| mutation_beats_control(&runs));
    run("mutation elites are at least as fit as control elites", &|| elite_quality(&runs));
    run("combined unique count is shared plus newly occupied", &|| additive_totals(&runs));
    run("archive matches replay oracle", &archive_replay_oracle);
    run("discretization covers the behavior space", &discretization_sweep);
    run("behaviors are frame invariant", &frame_invariance);
    run("surrogate invariants", &surrogate_invariants);
    run("wire protocol and loopback run", &wire_protocol);
    run("plot artifacts", &|| artifacts(&runs));
    run("repeatability protocol", &repeatability_protocol);

    let failed = results.iter().filter(|(_, c)| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
