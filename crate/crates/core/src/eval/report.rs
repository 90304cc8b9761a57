//! Tables (CSV and markdown), the per-verb SVG figure and report.json.
//!
//! CSV schemas:
//! - `per_seed.csv`: `condition,seed,micro_map,macro_map,ap_<verb>...,probe_mse`
//!   (fractions, full precision).
//! - `table1.csv`: `condition,micro_map,micro_lo,micro_hi,macro_map,macro_lo,macro_hi`
//!   (percent, 2 decimals, Student-t 95% CI over seeds clipped to [0, 100]).
//! - `chance.csv`: `verb,prevalence,chance_ap` plus `micro` and `macro` rows (percent).
//! - `table2.csv`: `verb,condition,ap,t_lo,t_hi,boot_lo,boot_hi` (percent;
//!   bootstrap over test clips of the seed-averaged scores).
//! - `table3.csv`: `condition,probe_mse,mse_lo,mse_hi,best_seed_mse` (z-scored units).
//! - `significance.csv`: `metric,condition_a,condition_b,significant`; a pair
//!   is significant when its 95% CIs do not overlap.
//!
//! Rankings break tied scores by input order; the convention is recorded in
//! report.json.

use super::metrics::{bootstrap_ap, confidence_interval, map_scores, Interval, ScoredEntry, ScoredSet};
use super::EvalError;
use crate::oracle::{ClipRef, Verb};
use crate::rng::derived_rng;
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

pub const RANDOM_LABEL: &str = "Random";
pub const CHANCE_LABEL: &str = "chance";
const BOOTSTRAP_DRAWS: usize = 1000;
/// Conditions whose pairwise overlap is checked for the no-clear-winner finding.
const CORE_CONDITIONS: [&str; 3] = ["Traj3D", "Traj2D", "Image2D"];

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub scores: ScoredSet,
    pub probe_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionRuns {
    /// Stable identifier, e.g. `Traj3D` or `Random`.
    pub name: String,
    /// Row label for the markdown tables.
    pub label: String,
    pub runs: Vec<SeedRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportInput {
    pub conditions: Vec<ConditionRuns>,
    /// Coin-flip scorer runs, reported for context only.
    pub chance: Vec<SeedRun>,
    pub metadata: BTreeMap<String, String>,
    pub bootstrap_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub micro: Interval,
    pub macro_: Interval,
    pub per_verb: BTreeMap<Verb, Interval>,
    pub per_verb_bootstrap: BTreeMap<Verb, Interval>,
    pub probe_mse: Option<Interval>,
    pub per_seed_macro: Vec<f64>,
    pub per_seed_micro: Vec<f64>,
    pub per_seed_probe: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportSummary {
    pub conditions: BTreeMap<String, ConditionSummary>,
    pub order: Vec<String>,
    /// `(metric, a, b) -> significant`, for each unordered pair.
    pub significance: Vec<(String, String, String, bool)>,
    /// Overlapping micro-mAP CI pairs among the three single modalities.
    pub core_overlapping_pairs: Option<usize>,
    pub no_clear_winner: Option<bool>,
}

impl ReportSummary {
    pub fn significant(&self, metric: &str, a: &str, b: &str) -> Option<bool> {
        self.significance
            .iter()
            .find(|(m, x, y, _)| m == metric && ((x == a && y == b) || (x == b && y == a)))
            .map(|s| s.3)
    }
}

/// Significance flag: two CIs that do not overlap.
pub fn significant(a: &Interval, b: &Interval) -> bool {
    !a.overlaps(b)
}

/// Uniform random scores for every entry of `set`.
pub fn chance_scores<R: Rng>(set: &ScoredSet, rng: &mut R) -> ScoredSet {
    ScoredSet { entries: set.entries.iter().map(|e| ScoredEntry { score: rng.gen::<f64>(), ..e.clone() }).collect() }
}

pub fn write_scores_csv<W: Write>(set: &ScoredSet, mut w: W) -> std::io::Result<()> {
    writeln!(w, "verb,episode_seed,start_frame,score,label")?;
    for e in &set.entries {
        writeln!(w, "{},{},{},{},{}", e.verb, e.clip.episode_seed, e.clip.start_frame, e.score, e.label as u8)?;
    }
    Ok(())
}

pub fn read_scores_csv<R: BufRead>(r: R) -> Result<ScoredSet, EvalError> {
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| EvalError::Parse(format!("line {}: {m}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        entries.push(ScoredEntry {
            verb: f[0].parse().map_err(|_| bad("verb"))?,
            clip: ClipRef {
                episode_seed: f[1].parse().map_err(|_| bad("episode_seed"))?,
                start_frame: f[2].parse().map_err(|_| bad("start_frame"))?,
            },
            score: f[3].parse().map_err(|_| bad("score"))?,
            label: match f[4] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label")),
            },
        });
    }
    Ok(ScoredSet { entries })
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn pct_ci(i: &Interval) -> [String; 3] {
    let c = i.clipped(0.0, 1.0);
    [pct(c.mean), pct(c.lo), pct(c.hi)]
}

/// Average the scores of each (verb, clip) across seeds, in first-seed order.
fn seed_mean_scores(runs: &[SeedRun]) -> ScoredSet {
    let mut sums: BTreeMap<(Verb, ClipRef), f64> = BTreeMap::new();
    for r in runs {
        for e in &r.scores.entries {
            *sums.entry((e.verb, e.clip)).or_default() += e.score;
        }
    }
    let n = runs.len().max(1) as f64;
    ScoredSet {
        entries: runs[0]
            .scores
            .entries
            .iter()
            .map(|e| ScoredEntry { score: sums[&(e.verb, e.clip)] / n, ..e.clone() })
            .collect(),
    }
}

fn summarize(c: &ConditionRuns, bootstrap_seed: u64) -> Result<ConditionSummary, EvalError> {
    if c.runs.len() < 2 {
        return Err(EvalError::TooFewSeeds(c.name.clone()));
    }
    let maps = c.runs.iter().map(|r| map_scores(&r.scores)).collect::<Result<Vec<_>, _>>()?;
    let per_seed_micro: Vec<f64> = maps.iter().map(|m| m.micro).collect();
    let per_seed_macro: Vec<f64> = maps.iter().map(|m| m.macro_).collect();
    let mut per_verb = BTreeMap::new();
    let mut per_verb_bootstrap = BTreeMap::new();
    let pooled = seed_mean_scores(&c.runs);
    for v in maps[0].per_verb.keys() {
        let aps: Vec<f64> = maps.iter().map(|m| m.per_verb.get(v).copied().unwrap_or(f64::NAN)).collect();
        per_verb.insert(*v, confidence_interval(&aps, 0.95)?);
        let (s, l) = pooled.for_verb(*v);
        let mut rng = derived_rng(bootstrap_seed, &format!("bootstrap/{}/{v}", c.name));
        per_verb_bootstrap.insert(*v, bootstrap_ap(&s, &l, BOOTSTRAP_DRAWS, &mut rng)?);
    }
    let per_seed_probe: Vec<f64> = c.runs.iter().filter_map(|r| r.probe_mse).collect();
    let probe_mse =
        if per_seed_probe.len() >= 2 { Some(confidence_interval(&per_seed_probe, 0.95)?) } else { None };
    Ok(ConditionSummary {
        micro: confidence_interval(&per_seed_micro, 0.95)?,
        macro_: confidence_interval(&per_seed_macro, 0.95)?,
        per_verb,
        per_verb_bootstrap,
        probe_mse,
        per_seed_macro,
        per_seed_micro,
        per_seed_probe,
    })
}

/// Compute all summaries and write the report files into `out`.
pub fn make_report(input: &ReportInput, out: &Path) -> Result<ReportSummary, EvalError> {
    let mut conditions = BTreeMap::new();
    let order: Vec<String> = input.conditions.iter().map(|c| c.name.clone()).collect();
    for c in &input.conditions {
        conditions.insert(c.name.clone(), summarize(c, input.bootstrap_seed)?);
    }
    let verbs: Vec<Verb> = conditions.values().next().map(|s| s.per_verb.keys().copied().collect()).unwrap_or_default();

    let mut significance = Vec::new();
    for (i, a) in order.iter().enumerate() {
        for b in &order[i + 1..] {
            let (sa, sb) = (&conditions[a], &conditions[b]);
            significance.push(("micro".into(), a.clone(), b.clone(), significant(&sa.micro, &sb.micro)));
            significance.push(("macro".into(), a.clone(), b.clone(), significant(&sa.macro_, &sb.macro_)));
            for v in &verbs {
                if let (Some(x), Some(y)) = (sa.per_verb.get(v), sb.per_verb.get(v)) {
                    significance.push((v.to_string(), a.clone(), b.clone(), significant(x, y)));
                }
            }
            if let (Some(x), Some(y)) = (&sa.probe_mse, &sb.probe_mse) {
                significance.push(("probe_mse".into(), a.clone(), b.clone(), significant(x, y)));
            }
        }
    }
    let core: Vec<&str> = CORE_CONDITIONS.iter().copied().filter(|c| conditions.contains_key(*c)).collect();
    let core_overlapping_pairs = (core.len() == 3).then(|| {
        let mut n = 0;
        for i in 0..3 {
            for j in i + 1..3 {
                if conditions[core[i]].micro.overlaps(&conditions[core[j]].micro) {
                    n += 1;
                }
            }
        }
        n
    });
    let summary = ReportSummary {
        conditions,
        order,
        significance,
        core_overlapping_pairs,
        no_clear_winner: core_overlapping_pairs.map(|n| n >= 2),
    };

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("per_seed.csv"), per_seed_csv(input, &verbs)?)?;
    std::fs::write(out.join("table1.csv"), table1_csv(&summary))?;
    std::fs::write(out.join("table1.md"), table1_md(input, &summary))?;
    std::fs::write(out.join("chance.csv"), chance_csv(&input.chance, &verbs)?)?;
    std::fs::write(out.join("table2.csv"), table2_csv(&summary, &verbs))?;
    std::fs::write(out.join("table2.md"), table2_md(input, &summary, &verbs))?;
    std::fs::write(out.join("table3.csv"), table3_csv(&summary))?;
    std::fs::write(out.join("table3.md"), table3_md(input, &summary))?;
    std::fs::write(out.join("significance.csv"), significance_csv(&summary))?;
    std::fs::write(out.join("per_verb.svg"), per_verb_svg(input, &summary, &verbs))?;
    let json = serde_json::json!({
        "metadata": input.metadata,
        "tie_breaking": "tied scores keep input order (stable sort)",
        "ci": "Student-t 95% over seeds; per-verb bootstrap 1000 draws over test clips",
        "summary": summary,
    });
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&json).expect("serializable") + "\n")?;
    Ok(summary)
}

fn per_seed_csv(input: &ReportInput, verbs: &[Verb]) -> Result<String, EvalError> {
    let mut s = String::from("condition,seed,micro_map,macro_map");
    for v in verbs {
        let _ = write!(s, ",ap_{v}");
    }
    s.push_str(",probe_mse\n");
    for c in &input.conditions {
        for r in &c.runs {
            let m = map_scores(&r.scores)?;
            let _ = write!(s, "{},{},{},{}", c.name, r.seed, m.micro, m.macro_);
            for v in verbs {
                let _ = write!(s, ",{}", m.per_verb.get(v).map_or(String::new(), |x| x.to_string()));
            }
            let _ = writeln!(s, ",{}", r.probe_mse.map_or(String::new(), |x| x.to_string()));
        }
    }
    Ok(s)
}

fn table1_csv(sum: &ReportSummary) -> String {
    let mut s = String::from("condition,micro_map,micro_lo,micro_hi,macro_map,macro_lo,macro_hi\n");
    for name in &sum.order {
        let c = &sum.conditions[name];
        let [a, b, d] = pct_ci(&c.micro);
        let [e, f, g] = pct_ci(&c.macro_);
        let _ = writeln!(s, "{name},{a},{b},{d},{e},{f},{g}");
    }
    s
}

fn pm(i: &Interval) -> String {
    format!("{} ± {}", pct(i.mean), pct(i.half_width()))
}

fn label_of<'a>(input: &'a ReportInput, name: &'a str) -> &'a str {
    input.conditions.iter().find(|c| c.name == name).map_or(name, |c| c.label.as_str())
}

fn table1_md(input: &ReportInput, sum: &ReportSummary) -> String {
    let mut s = String::from("| Condition | mAP (% micro) | mAP (% macro) |\n|---|---|---|\n");
    for name in &sum.order {
        let c = &sum.conditions[name];
        let _ = writeln!(s, "| {} | {} | {} |", label_of(input, name), pm(&c.micro), pm(&c.macro_));
    }
    match (sum.no_clear_winner, sum.core_overlapping_pairs) {
        (Some(true), Some(n)) => {
            let _ = writeln!(s, "\nSingle-modality micro-mAP CIs overlap in {n} of 3 pairs: no clear winner.");
        }
        (Some(false), Some(n)) => {
            let _ = writeln!(s, "\nSingle-modality micro-mAP CIs overlap in only {n} of 3 pairs: a significant difference exists.");
        }
        _ => {}
    }
    s
}

fn chance_csv(chance: &[SeedRun], verbs: &[Verb]) -> Result<String, EvalError> {
    let mut s = String::from("verb,prevalence,chance_ap\n");
    if chance.is_empty() {
        return Ok(s);
    }
    let maps = chance.iter().map(|r| map_scores(&r.scores)).collect::<Result<Vec<_>, _>>()?;
    let n = maps.len() as f64;
    for v in verbs {
        let (_, l) = chance[0].scores.for_verb(*v);
        let prev = l.iter().filter(|&&x| x).count() as f64 / l.len().max(1) as f64;
        let ap = maps.iter().map(|m| m.per_verb.get(v).copied().unwrap_or(0.0)).sum::<f64>() / n;
        let _ = writeln!(s, "{v},{},{}", pct(prev), pct(ap));
    }
    let l: Vec<bool> = chance[0].scores.entries.iter().map(|e| e.label).collect();
    let prev = l.iter().filter(|&&x| x).count() as f64 / l.len().max(1) as f64;
    let _ = writeln!(s, "micro,{},{}", pct(prev), pct(maps.iter().map(|m| m.micro).sum::<f64>() / n));
    let _ = writeln!(s, "macro,,{}", pct(maps.iter().map(|m| m.macro_).sum::<f64>() / n));
    Ok(s)
}

fn table2_csv(sum: &ReportSummary, verbs: &[Verb]) -> String {
    let mut s = String::from("verb,condition,ap,t_lo,t_hi,boot_lo,boot_hi\n");
    for v in verbs {
        for name in &sum.order {
            let c = &sum.conditions[name];
            let [a, lo, hi] = pct_ci(&c.per_verb[v]);
            let b = c.per_verb_bootstrap[v];
            let _ = writeln!(s, "{v},{name},{a},{lo},{hi},{},{}", pct(b.lo), pct(b.hi));
        }
    }
    s
}

fn table2_md(input: &ReportInput, sum: &ReportSummary, verbs: &[Verb]) -> String {
    let mut s = String::from("| Verb |");
    for name in &sum.order {
        let _ = write!(s, " {} |", label_of(input, name));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(sum.order.len()));
    s.push('\n');
    for v in verbs {
        let _ = write!(s, "| {v} |");
        for name in &sum.order {
            let _ = write!(s, " {} |", pm(&sum.conditions[name].per_verb[v]));
        }
        s.push('\n');
    }
    s
}

fn table3_csv(sum: &ReportSummary) -> String {
    let mut s = String::from("condition,probe_mse,mse_lo,mse_hi,best_seed_mse\n");
    for name in &sum.order {
        let c = &sum.conditions[name];
        if let Some(i) = &c.probe_mse {
            let best = c.per_seed_probe.iter().copied().fold(f64::INFINITY, f64::min);
            let _ = writeln!(s, "{name},{:.4},{:.4},{:.4},{:.4}", i.mean, i.lo.max(0.0), i.hi, best);
        }
    }
    s
}

fn table3_md(input: &ReportInput, sum: &ReportSummary) -> String {
    let mut s = String::from(
        "| Condition | Probe MSE (mean over seeds, best epoch per run) | Best run |\n|---|---|---|\n",
    );
    for name in &sum.order {
        let c = &sum.conditions[name];
        if let Some(i) = &c.probe_mse {
            let best = c.per_seed_probe.iter().copied().fold(f64::INFINITY, f64::min);
            let _ = writeln!(s, "| {} | {:.4} ± {:.4} | {:.4} |", label_of(input, name), i.mean, i.half_width(), best);
        }
    }
    s
}

fn significance_csv(sum: &ReportSummary) -> String {
    let mut s = String::from("metric,condition_a,condition_b,significant\n");
    for (m, a, b, f) in &sum.significance {
        let _ = writeln!(s, "{m},{a},{b},{f}");
    }
    s
}

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];

fn per_verb_svg(input: &ReportInput, sum: &ReportSummary, verbs: &[Verb]) -> String {
    let (cols, pw, ph) = (4usize, 220.0, 160.0);
    let rows = verbs.len().div_ceil(cols).max(1);
    let legend = 24.0 + 16.0 * sum.order.len() as f64;
    let (w, h) = (cols as f64 * pw, rows as f64 * ph + legend);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let n = sum.order.len().max(1) as f64;
    for (k, v) in verbs.iter().enumerate() {
        let (x0, y0) = ((k % cols) as f64 * pw, (k / cols) as f64 * ph);
        let (left, top, plot_w, plot_h) = (x0 + 30.0, y0 + 20.0, pw - 40.0, ph - 40.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, x0 + pw / 2.0, y0 + 14.0);
        let _ = writeln!(
            s,
            r##"<rect x="{left:.1}" y="{top:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#999"/>"##
        );
        for t in [0.0, 0.5, 1.0] {
            let y = top + plot_h * (1.0 - t);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#, left - 3.0, y + 4.0);
        }
        let bw = plot_w / n;
        for (j, name) in sum.order.iter().enumerate() {
            let ci = sum.conditions[name].per_verb[v].clipped(0.0, 1.0);
            let bx = left + j as f64 * bw + bw * 0.15;
            let bh = plot_h * ci.mean.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{bx:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{}"/>"#,
                top + plot_h - bh,
                bw * 0.7,
                PALETTE[j % PALETTE.len()]
            );
            let cx = bx + bw * 0.35;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                top + plot_h * (1.0 - ci.lo),
                top + plot_h * (1.0 - ci.hi)
            );
        }
    }
    let ly = rows as f64 * ph + 16.0;
    for (j, name) in sum.order.iter().enumerate() {
        let y = ly + 16.0 * j as f64;
        let _ = writeln!(s, r#"<rect x="10" y="{:.1}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[j % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="26" y="{y:.1}">{}</text>"#, xml_escape(label_of(input, name)));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
