//! Acceptance criteria 1 to 9, one pass/fail line each.
//!
//! Criteria 3 to 7 and 9 use the committed desk preset, run twice from
//! scratch with the `trajverb` binary. Set `TRAJVERB_ACCEPTANCE_DIR` to keep
//! those runs; later invocations then reuse the cached stages.

mod common;

use rand::Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;
use trajverb::config::ExperimentConfig;
use trajverb::eval::{average_precision, bootstrap, bootstrap_ap, chance_scores, ScoredEntry, ScoredSet};
use trajverb::math::Vec3;
use trajverb::pipeline::{fall_stress_clips, Condition, Pipeline};
use trajverb::features::Modality;
use trajverb::rng::{derived_rng, rng_from};
use trajverb::sim::{step, Contact, Frame, ObjectShape, SceneConfig, DT};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn preset_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn preset(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&preset_path()).expect("preset parses");
    cfg.experiment.out = out.to_path_buf();
    cfg
}

/// Run `all` on the preset into `out`.
fn run_all(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_trajverb"))
        .arg("--config")
        .arg(preset_path())
        .arg("--out")
        .arg(out)
        .arg("all")
        .env("RUST_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "warn".into()))
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("`trajverb all` exited with {status}"))
    }
}

fn report_dir(out: &Path) -> PathBuf {
    out.join("report").join("desk")
}

/// Rows of `per_seed.csv` keyed by column name.
fn per_seed(out: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(report_dir(out).join("per_seed.csv")).expect("per_seed.csv");
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().expect("header").split(',').map(String::from).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

fn column(rows: &[BTreeMap<String, String>], condition: &str, key: &str) -> Vec<f64> {
    rows.iter().filter(|r| r["condition"] == condition).map(|r| r[key].parse().expect("number")).collect()
}

fn c1_gradients() -> Outcome {
    let mut worst = [0.0f64; 3];
    let n = 24;
    for seed in 0..n {
        let e = common::gradient_errors(1000 + seed);
        for k in 0..3 {
            worst[k] = worst[k].max(e[k]);
        }
    }
    let pass = worst.iter().all(|&e| e < 1e-4);
    outcome(pass, format!("{n} nets, max rel err rollout {:.1e} classify {:.1e} probe {:.1e}", worst[0], worst[1], worst[2]))
}

fn c2_ap_oracle() -> Outcome {
    let mut rng = rng_from(2);
    let mut mismatches = 0;
    let mut cases = 0;
    while cases < 500 {
        let n = rng.gen_range(1..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        if !labels.iter().any(|&l| l) {
            continue;
        }
        cases += 1;
        if average_precision(&scores, &labels).expect("has a positive") != common::exhaustive_ap(&scores, &labels) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{cases} instances, {mismatches} mismatches"))
}

/// Chance AP per verb (mean over the preset's model seeds) inside the
/// bootstrap interval of that verb's prevalence, on the preset's full
/// annotation set.
fn c3_chance(out: &Path) -> Outcome {
    let p = Pipeline::new(preset(out), false);
    let set = p.load_annotations().expect("annotations");
    let base = ScoredSet {
        entries: set
            .entries
            .iter()
            .map(|a| ScoredEntry { verb: a.verb, clip: a.clip, score: 0.0, label: a.label })
            .collect(),
    };
    let seeds = &p.cfg.experiment.seeds;
    let mut outside = Vec::new();
    let mut detail = String::new();
    for &verb in &p.cfg.experiment.verbs {
        let labels: Vec<bool> = base.entries.iter().filter(|e| e.verb == verb).map(|e| e.label).collect();
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        let ci = bootstrap(&labels, 1000, 0.95, &mut rng_from(3), |s| {
            Some(s.iter().filter(|&&l| l).count() as f64 / s.len() as f64)
        })
        .expect("bootstrap");
        let mut ap = 0.0;
        for &seed in seeds {
            let scored = chance_scores(&base, &mut derived_rng(seed, "acceptance/chance"));
            let (s, l): (Vec<f64>, Vec<bool>) =
                scored.entries.iter().filter(|e| e.verb == verb).map(|e| (e.score, e.label)).unzip();
            ap += average_precision(&s, &l).expect("has a positive") / seeds.len() as f64;
        }
        if !(0.3..=0.6).contains(&prevalence) || !ci.contains(ap) {
            outside.push(verb);
        }
        let _ = write!(detail, "{verb} {:.2}/[{:.2},{:.2}] ", ap, ci.lo, ci.hi);
    }
    outcome(outside.is_empty(), format!("chance AP in prevalence CI for {}/{} verbs; {}", p.cfg.experiment.verbs.len() - outside.len(), p.cfg.experiment.verbs.len(), detail.trim_end()))
}

fn c4_above_random(rows: &[BTreeMap<String, String>], trained: &[Modality]) -> Outcome {
    let random = common::t_interval(&column(rows, "Random", "macro_map"));
    let mut pass = true;
    let mut detail = format!("Random {:.1} [{:.1},{:.1}]", 100.0 * random.0, 100.0 * random.1, 100.0 * random.2);
    for m in trained {
        let t = common::t_interval(&column(rows, m.name(), "macro_map"));
        let gap = t.0 - random.0;
        let ok = gap >= 0.15 && t.1 > random.2;
        pass &= ok;
        let _ = write!(detail, "; {} {:.1} [{:.1},{:.1}] gap {:+.1}{}", m, 100.0 * t.0, 100.0 * t.1, 100.0 * t.2, 100.0 * gap, if ok { "" } else { " (short)" });
    }
    outcome(pass, detail)
}

/// The gate is that the report's significance flags match CI disjointness
/// recomputed here; the overlap count itself is reported as a finding.
fn c5_no_clear_winner(out: &Path, rows: &[BTreeMap<String, String>]) -> Outcome {
    let core = ["Traj3D", "Traj2D", "Image2D"];
    let text = std::fs::read_to_string(report_dir(out).join("significance.csv")).expect("significance.csv");
    let flags: BTreeMap<(String, String, String), bool> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ((f[0].to_string(), f[1].to_string(), f[2].to_string()), f[3] == "true")
        })
        .collect();
    let mut wrong = 0;
    let mut checked = 0;
    for ((metric, a, b), flag) in &flags {
        let key = match metric.as_str() {
            "micro" => "micro_map",
            "macro" => "macro_map",
            _ => continue,
        };
        let (x, y) = (common::t_interval(&column(rows, a, key)), common::t_interval(&column(rows, b, key)));
        // table intervals are clipped to [0, 1]
        let (xl, xh, yl, yh) = (x.1.max(0.0), x.2.min(1.0), y.1.max(0.0), y.2.min(1.0));
        let disjoint = xh < yl || yh < xl;
        checked += 1;
        if disjoint != *flag {
            wrong += 1;
        }
    }
    let mut overlapping = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            let flag = |a: &str, b: &str| flags.get(&("micro".to_string(), a.to_string(), b.to_string())).copied();
            if flag(core[i], core[j]).or(flag(core[j], core[i])) == Some(false) {
                overlapping += 1;
            }
        }
    }
    let finding = if overlapping >= 2 { "no clear winner reproduced" } else { "finding not reproduced, flagged in report" };
    outcome(
        wrong == 0 && checked > 0,
        format!("{checked} flags checked, {wrong} wrong; micro CIs overlap in {overlapping}/3 core pairs ({finding})"),
    )
}

fn c6_probe(rows: &[BTreeMap<String, String>]) -> Outcome {
    let get = |c: &str| column(rows, c, "probe_mse");
    let (t3, t2, r, i2) = (get("Traj3D"), get("Traj2D"), get("Random"), get("ImagePlusTraj2D"));
    let n = t3.len();
    let chain = (0..n).filter(|&s| t3[s] < t2[s] && t2[s] < r[s]).count();
    let combo = (0..n).filter(|&s| i2[s] < t2[s]).count();
    let need = n - 1;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    outcome(
        chain >= need && combo >= need,
        format!(
            "Traj3D<Traj2D<Random in {chain}/{n} seeds, ImagePlusTraj2D<Traj2D in {combo}/{n}; mean MSE Traj3D {:.3} Traj2D {:.3} ImagePlusTraj2D {:.3} Random {:.3}",
            mean(&t3), mean(&t2), mean(&i2), mean(&r)
        ),
    )
}

const STRESS_EPISODES: usize = 300;
const STRESS_MIN_SHARE: f64 = 0.3;

fn c7_fall_stress(out: &Path) -> Outcome {
    let p = Pipeline::new(preset(out), false);
    let (episodes, clips) = fall_stress_clips(&p, STRESS_EPISODES, STRESS_MIN_SHARE).expect("stress split");
    let labels: Vec<bool> = clips.iter().map(|c| c.label).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return outcome(false, format!("stress split has {positives} falls among {} clips", labels.len()));
    }
    let share = clips.iter().map(|c| c.occluded_share).sum::<f64>() / clips.len() as f64;
    let mut ci = Vec::new();
    for m in [Modality::Traj3D, Modality::Image2D] {
        let scores = p.stress_scores(Condition::Trained(m), &episodes, &clips).expect("stress scores");
        let mut rng = derived_rng(p.cfg.experiment.seed_root, &format!("acceptance/stress/{m}"));
        ci.push(bootstrap_ap(&scores, &labels, 1000, &mut rng).expect("bootstrap"));
    }
    let (a, b) = (&ci[0], &ci[1]);
    let pass = a.mean > b.mean && a.lo > b.hi;
    outcome(
        pass,
        format!(
            "{} clips ({positives} falls, {:.0}% occluded frames): Traj3D AP {:.1} [{:.1},{:.1}] vs Image2D {:.1} [{:.1},{:.1}]",
            clips.len(),
            100.0 * share,
            100.0 * a.mean,
            100.0 * a.lo,
            100.0 * a.hi,
            100.0 * b.mean,
            100.0 * b.lo,
            100.0 * b.hi
        ),
    )
}

fn c8_physics() -> Outcome {
    let far = Vec3::new(3.0, 3.0, 2.0);
    let mut rng = rng_from(8);
    let s = SceneConfig::default();
    let mut fall_err = 0.0f64;
    for _ in 0..50 {
        let (z0, vz, vx) = (rng.gen_range(2.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
        let mut f = Frame::at_rest(far, Vec3::new(1.5, 0.0, z0), Contact::None);
        f.obj_vel = Vec3::new(vx, 0.0, vz);
        for n in 1..=30 {
            f = step(&f, &s, far, false).expect("step");
            let t = n as f64 * DT;
            fall_err = fall_err.max((f.obj_pos.z - (z0 + vz * t - 0.5 * s.gravity * t * t)).abs());
            fall_err = fall_err.max((f.obj_pos.x - (1.5 + vx * t)).abs());
        }
    }
    let mut energy_violations = 0;
    let mut quat_err = 0.0f64;
    for _ in 0..100 {
        let shape = if rng.gen() { ObjectShape::Cube } else { ObjectShape::Sphere };
        let sc = SceneConfig { object_shape: shape, friction_mu: rng.gen_range(0.05..1.5), restitution: 0.0, ..SceneConfig::default() };
        let z = sc.counter_height + sc.object_radius + rng.gen_range(0.0..0.6);
        let mut f = Frame::at_rest(far, Vec3::new(rng.gen_range(-0.5..0.5), 0.0, z), Contact::None);
        f.obj_vel = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
        f.obj_angvel = Vec3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
        for _ in 0..300 {
            let next = step(&f, &sc, far, false).expect("step");
            if next.energy(&sc) > f.energy(&sc) + 1e-6 {
                energy_violations += 1;
            }
            quat_err = quat_err.max((next.obj_rot.norm() - 1.0).abs());
            f = next;
        }
    }
    outcome(
        fall_err < 2e-3 && energy_violations == 0 && quat_err < 1e-6,
        format!("free fall max err {fall_err:.1e} m, {energy_violations} energy increases in 100 episodes, max |q|-1 {quat_err:.1e}"),
    )
}

fn report_csvs(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(report_dir(out))
        .expect("report dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().expect("name").to_string_lossy().into_owned(), std::fs::read(&p).expect("read")))
        .collect();
    files.sort();
    files
}

fn c9_determinism(a: &Path, b: &Path) -> Outcome {
    let (x, y) = (report_csvs(a), report_csvs(b));
    let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p != q).map(|(p, _)| p.0.as_str()).collect();
    let same_names = x.iter().map(|f| &f.0).eq(y.iter().map(|f| &f.0));
    outcome(
        same_names && differing.is_empty() && !x.is_empty(),
        format!("{} report CSVs compared, {} differ {:?}", x.len(), differing.len(), differing),
    )
}

fn main() {
    let keep = std::env::var_os("TRAJVERB_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let (run_a, run_b) = (root.join("a"), root.join("b"));

    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("criterion {n} {name}: {} ({}; {secs:.0} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o, secs));
    };

    timed(1, "gradient correctness", &mut c1_gradients);
    timed(2, "AP oracle equivalence", &mut c2_ap_oracle);
    timed(8, "physics closed form", &mut c8_physics);

    let t = Instant::now();
    let first = run_all(&run_a);
    println!("preset run A: {:.0} s", t.elapsed().as_secs_f64());
    let second = first.clone().and_then(|_| {
        let t = Instant::now();
        let r = run_all(&run_b);
        println!("preset run B: {:.0} s", t.elapsed().as_secs_f64());
        r
    });
    match &first {
        Ok(()) => {
            let rows = per_seed(&run_a);
            let trained = preset(&run_a).experiment.modalities;
            timed(3, "random-baseline calibration", &mut || c3_chance(&run_a));
            timed(4, "above-random learning", &mut || c4_above_random(&rows, &trained));
            timed(5, "no-clear-winner flags", &mut || c5_no_clear_winner(&run_a, &rows));
            timed(6, "probe ordering", &mut || c6_probe(&rows));
            timed(7, "fall occlusion asymmetry", &mut || c7_fall_stress(&run_a));
        }
        Err(e) => {
            for (n, name) in [(3, "random-baseline calibration"), (4, "above-random learning"), (5, "no-clear-winner flags"), (6, "probe ordering"), (7, "fall occlusion asymmetry")] {
                timed(n, name, &mut || outcome(false, format!("preset run failed: {e}")));
            }
        }
    }
    match &second {
        Ok(()) => timed(9, "end-to-end determinism", &mut || c9_determinism(&run_a, &run_b)),
        Err(e) => timed(9, "end-to-end determinism", &mut || outcome(false, e.clone())),
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
