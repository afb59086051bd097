//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits non-zero when a criterion fails, except for criteria
//! listed in `KNOWN_FAILURES`, whose FAIL line is still printed. Set
//! `HISTOFUSE_ACCEPTANCE_STRICT=1` to make those fail the run as well.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use histofuse::framecls::{classify_frame, ClassifierParams, FrameType};
use histofuse::fusion::{fuse_tissue, FusionRuleSet};
use histofuse::imgio::{InstanceMap, LabelMap, ProbabilityMap};
use histofuse::panmetrics::{
    macro_mean, match_detections, mean_track_score, micro_dice, micro_pq, pq_matches, MetricReport,
};
use histofuse::pipeline::{run_pipeline, synth_fixtures, PipelineConfig, RunReport, SynthSpec};
use histofuse::schemes::{get_scheme, ClassScheme, Group, NUCLEI_TRACK2, PUMA_EXT11, PUMA_TISSUE6};

/// Criteria that cannot pass as stated, with the reason shown in the summary.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "aggregation-arithmetic",
    "two published tissue/nuclei means disagree with their own per-class values",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol + 1e-9
}

// ---------------------------------------------------------------------------
// Aggregation arithmetic

fn aggregation_arithmetic() -> Outcome {
    let checks: [(&str, f64, f64); 6] = [
        ("tissue dice mean", macro_mean([92.07, 81.28, 46.79, 87.32, 54.37]).unwrap(), 72.36),
        ("track1 f1 mean", macro_mean([82.87, 79.24, 61.17]).unwrap(), 74.43),
        (
            "track2 f1 mean",
            macro_mean([38.00, 43.93, 75.35, 45.66, 75.34, 38.00, 29.39, 21.14, 40.56, 82.29]).unwrap(),
            48.96,
        ),
        ("micro pq mean", macro_mean([70.52, 70.04, 68.02, 37.52]).unwrap(), 61.52),
        ("track1 score", 100.0 * mean_track_score(0.7237, 0.7443).unwrap(), 73.40),
        ("track2 score", 100.0 * mean_track_score(0.7798, 0.4897).unwrap(), 63.48),
    ];
    let mut failed = Vec::new();
    let mut parts = Vec::new();
    for (name, got, want) in checks {
        let ok = close(got, want, 0.005);
        parts.push(format!("{name} {got:.4}/{want}"));
        if !ok {
            failed.push(format!("{name}: {got:.4} vs {want}"));
        }
    }
    if failed.is_empty() {
        Outcome::new(true, parts.join(", "))
    } else {
        Outcome::new(false, format!("{} of 6 off by more than 0.005: {}", failed.len(), failed.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// Fusion rules

fn fusion_rules() -> Outcome {
    let scheme = get_scheme(PUMA_TISSUE6).unwrap();
    let n = 1000;
    let k = scheme.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF05E);
    let a: Vec<f32> = (0..n * k).map(|_| rng.random::<f32>()).collect();
    let b: Vec<f32> = (0..n * k).map(|_| rng.random::<f32>()).collect();
    let seg = ProbabilityMap::new(scheme.clone(), 1, n, a.clone()).unwrap();
    let unet = ProbabilityMap::new(scheme.clone(), 1, n, b.clone()).unwrap();
    let fused = fuse_tissue(&seg, &unet, &FusionRuleSet::ensemble()).unwrap();
    let out = fused.data();
    let idx = |name: &str| scheme.index_of(name).unwrap() as usize;
    let mut bad = Vec::new();
    for p in 0..n {
        for (name, expect) in [
            ("epidermis", None),
            ("necrosis", None),
            ("blood_vessel", Some(&b)),
            ("tumor", Some(&a)),
            ("stroma", Some(&a)),
        ] {
            let i = p * k + idx(name);
            let want = match expect {
                Some(src) => src[i],
                None => ((a[i] as f64 + b[i] as f64) * 0.5) as f32,
            };
            if out[i].to_bits() != want.to_bits() {
                bad.push(format!("pixel {p} {name}"));
            }
        }
    }
    Outcome::new(bad.is_empty(), format!("{n} pixel vectors, {} mismatches", bad.len()))
}

// ---------------------------------------------------------------------------
// Metric oracles

struct Fixture {
    pred: InstanceMap,
    gt: InstanceMap,
}

fn paint(ids: &mut [u32], w: usize, r0: usize, c0: usize, r1: usize, c1: usize, id: u32) {
    for r in r0..r1 {
        for c in c0..c1 {
            ids[r * w + c] = id;
        }
    }
}

/// Builds an instance map from painted ids, dropping ids that were painted over entirely.
fn instances(scheme: &Arc<ClassScheme>, h: usize, w: usize, ids: Vec<u32>, classes: &BTreeMap<u32, u16>) -> InstanceMap {
    let present: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != 0).collect();
    let classes = classes
        .iter()
        .filter(|(id, _)| present.contains(id))
        .map(|(&k, &v)| (k, v))
        .collect();
    InstanceMap::new(scheme.clone(), h, w, ids, classes).unwrap()
}

/// Random rectangles (overlap allowed) as ground truth; prediction jitters,
/// drops, adds and reclassifies them.
fn random_fixture(rng: &mut ChaCha8Rng, scheme: &Arc<ClassScheme>, h: usize, w: usize) -> Fixture {
    let k = scheme.len() as u16;
    let n = rng.random_range(0..=12usize);
    let (mut gt_ids, mut pred_ids) = (vec![0u32; h * w], vec![0u32; h * w]);
    let (mut gt_cls, mut pred_cls) = (BTreeMap::new(), BTreeMap::new());
    let mut next_pred = 1u32;
    for id in 1..=n as u32 {
        let (rh, rw) = (rng.random_range(2..=8usize).min(h), rng.random_range(2..=8usize).min(w));
        let r0 = rng.random_range(0..=h - rh);
        let c0 = rng.random_range(0..=w - rw);
        let class = rng.random_range(1..k);
        paint(&mut gt_ids, w, r0, c0, r0 + rh, c0 + rw, id);
        gt_cls.insert(id, class);
        if rng.random_bool(0.15) {
            continue;
        }
        let dr = rng.random_range(-1i64..=1);
        let dc = rng.random_range(-1i64..=1);
        let pr0 = (r0 as i64 + dr).clamp(0, (h - rh) as i64) as usize;
        let pc0 = (c0 as i64 + dc).clamp(0, (w - rw) as i64) as usize;
        let pclass = if rng.random_bool(0.1) { rng.random_range(1..k) } else { class };
        paint(&mut pred_ids, w, pr0, pc0, pr0 + rh, pc0 + rw, next_pred);
        pred_cls.insert(next_pred, pclass);
        next_pred += 1;
    }
    for _ in 0..rng.random_range(0..=2) {
        let (r0, c0) = (rng.random_range(0..h - 2), rng.random_range(0..w - 2));
        paint(&mut pred_ids, w, r0, c0, r0 + 3, c0 + 3, next_pred);
        pred_cls.insert(next_pred, rng.random_range(1..k));
        next_pred += 1;
    }
    Fixture {
        pred: instances(scheme, h, w, pred_ids, &pred_cls),
        gt: instances(scheme, h, w, gt_ids, &gt_cls),
    }
}

fn oracle_centroids(inst: &InstanceMap) -> BTreeMap<u32, (f64, f64)> {
    let mut acc: BTreeMap<u32, (f64, f64, f64)> = BTreeMap::new();
    for (i, &id) in inst.ids().iter().enumerate() {
        if id != 0 {
            let e = acc.entry(id).or_default();
            e.0 += (i / inst.width()) as f64;
            e.1 += (i % inst.width()) as f64;
            e.2 += 1.0;
        }
    }
    acc.into_iter().map(|(id, (r, c, n))| (id, (r / n, c / n))).collect()
}

/// Maximum bipartite matching (augmenting paths) between same-class centroids within `radius`.
fn optimal_tp(pred: &InstanceMap, gt: &InstanceMap, radius: f64, class: u16) -> usize {
    let pc: Vec<(f64, f64)> = oracle_centroids(pred)
        .into_iter()
        .filter(|(id, _)| pred.class_of(*id) == Some(class))
        .map(|(_, c)| c)
        .collect();
    let gc: Vec<(f64, f64)> = oracle_centroids(gt)
        .into_iter()
        .filter(|(id, _)| gt.class_of(*id) == Some(class))
        .map(|(_, c)| c)
        .collect();
    let adj: Vec<Vec<usize>> = pc
        .iter()
        .map(|p| {
            (0..gc.len())
                .filter(|&j| ((p.0 - gc[j].0).powi(2) + (p.1 - gc[j].1).powi(2)).sqrt() <= radius)
                .collect()
        })
        .collect();
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|o| augment(o, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; gc.len()];
    (0..pc.len())
        .filter(|&u| augment(u, &adj, &mut vec![false; gc.len()], &mut owner))
        .count()
}

/// Per-class Dice from pooled pixel sets.
fn oracle_dice(pairs: &[(LabelMap, LabelMap)], scheme: &ClassScheme) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for class in scheme.foreground() {
        let (mut p, mut g) = (HashSet::new(), HashSet::new());
        for (img, (pm, gm)) in pairs.iter().enumerate() {
            p.extend(pm.data().iter().enumerate().filter(|(_, &v)| v == class).map(|(i, _)| (img, i)));
            g.extend(gm.data().iter().enumerate().filter(|(_, &v)| v == class).map(|(i, _)| (img, i)));
        }
        let denom = p.len() + g.len();
        if denom > 0 {
            let inter = p.intersection(&g).count();
            out.insert(scheme.name(class).unwrap().to_string(), 2.0 * inter as f64 / denom as f64);
        }
    }
    out
}

/// A 64x64 canvas whose instances stay inside their 32x32 quadrant, plus its four tiles.
fn tiled_fixture(rng: &mut ChaCha8Rng, scheme: &Arc<ClassScheme>) -> (Fixture, Vec<Fixture>) {
    let (s, t) = (64, 32);
    let tiles: Vec<Fixture> = (0..4).map(|_| random_fixture(rng, scheme, t, t)).collect();
    let mut canvas_pred = vec![0u32; s * s];
    let mut canvas_gt = vec![0u32; s * s];
    let (mut pc, mut gc) = (BTreeMap::new(), BTreeMap::new());
    for (q, tile) in tiles.iter().enumerate() {
        let (or, oc) = ((q / 2) * t, (q % 2) * t);
        let offset = 100 * (q as u32 + 1);
        for (src, dst, cls, out_cls) in [
            (&tile.pred, &mut canvas_pred, tile.pred.classes(), &mut pc),
            (&tile.gt, &mut canvas_gt, tile.gt.classes(), &mut gc),
        ] {
            for (i, &id) in src.ids().iter().enumerate() {
                if id != 0 {
                    dst[(or + i / t) * s + oc + i % t] = id + offset;
                }
            }
            for (&id, &c) in cls {
                out_cls.insert(id + offset, c);
            }
        }
    }
    let canvas = Fixture {
        pred: InstanceMap::new(scheme.clone(), s, s, canvas_pred, pc).unwrap(),
        gt: InstanceMap::new(scheme.clone(), s, s, canvas_gt, gc).unwrap(),
    };
    (canvas, tiles)
}

fn same_report(a: &MetricReport, b: &MetricReport) -> bool {
    a.counts.len() == b.counts.len()
        && a.per_class.keys().eq(b.per_class.keys())
        && a.per_class.values().zip(b.per_class.values()).all(|(x, y)| (x - y).abs() <= 1e-12)
        && a.counts.iter().zip(&b.counts).all(|((ka, ca), (kb, cb))| {
            ka == kb
                && ca.tp == cb.tp
                && ca.fp == cb.fp
                && ca.fn_ == cb.fn_
                && ca.intersection == cb.intersection
                && ca.size_sum == cb.size_sum
        })
}

fn metric_oracles() -> Outcome {
    let scheme = get_scheme(NUCLEI_TRACK2).unwrap();
    let seeds = 250u64;
    let radius = 15.0;
    let (mut dice_bad, mut uniq_bad, mut greedy_over, mut greedy_equal, mut tiling_bad) = (0, 0, 0, 0, 0);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(16..=64usize), rng.random_range(16..=64usize));
        let images: Vec<Fixture> = (0..3).map(|_| random_fixture(&mut rng, &scheme, h, w)).collect();

        let pairs: Vec<(LabelMap, LabelMap)> = images.iter().map(|f| (f.pred.class_map(), f.gt.class_map())).collect();
        let report = micro_dice(&pairs).unwrap();
        if report.per_class != oracle_dice(&pairs, &scheme) {
            dice_bad += 1;
        }

        let mut seed_equal = true;
        for f in &images {
            let matches = pq_matches(&f.pred, &f.gt, 0.5).unwrap();
            let preds: HashSet<u32> = matches.iter().map(|m| m.pred).collect();
            let gts: HashSet<u32> = matches.iter().map(|m| m.gt).collect();
            if preds.len() != matches.len() || gts.len() != matches.len() || matches.iter().any(|m| m.iou <= 0.5) {
                uniq_bad += 1;
            }
            let greedy = match_detections(&f.pred, &f.gt, radius).unwrap();
            for class in scheme.foreground() {
                let g = greedy.per_class.get(&class).map_or(0, |t| t.tp) as usize;
                let o = optimal_tp(&f.pred, &f.gt, radius, class);
                if g > o {
                    greedy_over += 1;
                }
                seed_equal &= g == o;
            }
        }
        if seed_equal {
            greedy_equal += 1;
        }

        let (canvas, tiles) = tiled_fixture(&mut rng, &scheme);
        let whole = [(canvas.pred.class_map(), canvas.gt.class_map())];
        let parts: Vec<(LabelMap, LabelMap)> = tiles.iter().map(|f| (f.pred.class_map(), f.gt.class_map())).collect();
        let dice_same = same_report(&micro_dice(&whole).unwrap(), &micro_dice(&parts).unwrap());
        let (tp, tg): (Vec<InstanceMap>, Vec<InstanceMap>) = tiles.into_iter().map(|f| (f.pred, f.gt)).unzip();
        let pq_same = same_report(
            &micro_pq(&[canvas.pred], &[canvas.gt], 0.5).unwrap(),
            &micro_pq(&tp, &tg, 0.5).unwrap(),
        );
        if !(dice_same && pq_same) {
            tiling_bad += 1;
        }
    }
    let equal_rate = greedy_equal as f64 / seeds as f64;
    let pass = dice_bad == 0 && uniq_bad == 0 && greedy_over == 0 && equal_rate >= 0.95 && tiling_bad == 0;
    Outcome::new(
        pass,
        format!(
            "{seeds} seeds: dice mismatches {dice_bad}, non-unique pq matches {uniq_bad}, \
             greedy>optimal {greedy_over}, greedy=optimal on {:.1}% of seeds, tiling mismatches {tiling_bad}",
            100.0 * equal_rate
        ),
    )
}

// ---------------------------------------------------------------------------
// Pipeline fixpoint

fn synth(dir: &Path, seed: u64, frames: usize, size: usize, track: u8, defects: &str) -> PipelineConfig {
    let spec = SynthSpec {
        frames,
        size,
        nuclei: 12,
        track,
        defects: defects.parse().unwrap(),
    };
    PipelineConfig::load(synth_fixtures(seed, &spec, dir).unwrap()).unwrap()
}

fn run(cfg: &PipelineConfig, out: &Path, jobs: usize) -> RunReport {
    run_pipeline(cfg, out, jobs).unwrap()
}

fn all_metrics(r: &RunReport) -> Vec<f64> {
    let m = &r.metrics;
    let mut v: Vec<f64> = [&m.micro_dice, &m.detection_f1, &m.pq, &m.micro_pq]
        .into_iter()
        .map(|x| x.as_ref().map_or(f64::NAN, |x| x.aggregate))
        .collect();
    v.push(m.mean_track_score.unwrap_or(f64::NAN));
    v
}

fn pipeline_fixpoint() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut notes = Vec::new();
    let mut pass = true;

    for track in [1u8, 2] {
        let dir = root.join(format!("clean{track}"));
        let cfg = synth(&dir, 100 + track as u64, 4, 64, track, "");
        let values = all_metrics(&run(&cfg, &dir.join("out"), 1));
        let ok = values.iter().all(|v| (v - 1.0).abs() <= 1e-9);
        pass &= ok;
        notes.push(format!("clean track {track} min {:.12}", values.iter().cloned().fold(f64::INFINITY, f64::min)));
    }

    let dir = root.join("necrosis");
    let mut cfg = synth(&dir, 7, 4, 64, 2, "necrosis");
    let on = run(&cfg, &dir.join("on"), 1);
    cfg.params.rescue_enabled = false;
    let off = run(&cfg, &dir.join("off"), 1);
    let nec = |r: &RunReport| r.metrics.micro_dice.as_ref().unwrap().per_class["necrosis"];
    let ok = nec(&off) < 1.0 && nec(&on) == 1.0;
    pass &= ok;
    notes.push(format!("necrosis dice off {:.4} on {:.4}", nec(&off), nec(&on)));

    let dir = root.join("border");
    let mut cfg = synth(&dir, 8, 4, 64, 1, "border");
    let on = run(&cfg, &dir.join("on"), 1);
    cfg.toggles.post_processing = false;
    let off = run(&cfg, &dir.join("off"), 1);
    let f1 = |r: &RunReport| r.metrics.detection_f1.as_ref().unwrap().aggregate;
    pass &= f1(&on) > f1(&off);
    notes.push(format!("detection f1 without border correction {:.4}, with {:.4}", f1(&off), f1(&on)));

    Outcome::new(pass, notes.join(", "))
}

// ---------------------------------------------------------------------------
// Classifier rules

fn ext_map(scheme: &Arc<ClassScheme>, h: usize, w: usize, data: Vec<u16>) -> LabelMap {
    LabelMap::new(scheme.clone(), h, w, data).unwrap()
}

fn classifier_rules() -> Outcome {
    let scheme = get_scheme(PUMA_EXT11).unwrap();
    let epi = scheme.index_of("primary_epidermis").unwrap();
    let primary: Vec<u16> = (0..scheme.len() as u16).filter(|&c| scheme.group(c) == Some(Group::Primary)).collect();
    let metastatic: Vec<u16> =
        (0..scheme.len() as u16).filter(|&c| scheme.group(c) == Some(Group::Metastatic)).collect();
    let non_epi_primary: Vec<u16> = primary.iter().copied().filter(|&c| c != epi).collect();
    let params = ClassifierParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1A5);
    let (mut perm_bad, mut mono_bad, mut tie_bad, mut oracle_bad) = (0, 0, 0, 0);
    let maps = 1000;

    for _ in 0..maps {
        let (h, w) = (rng.random_range(1..=24usize), rng.random_range(1..=24usize));
        let n = h * w;
        // Vary sparsity of each group so both rules get exercised.
        let p_bg = rng.random::<f64>();
        let p_primary = rng.random::<f64>();
        let allow_epi = rng.random_bool(0.3);
        let data: Vec<u16> = (0..n)
            .map(|_| {
                if rng.random_bool(p_bg) {
                    0
                } else if rng.random_bool(p_primary) {
                    let pool = if allow_epi { &primary } else { &non_epi_primary };
                    *pool.choose(&mut rng).unwrap()
                } else {
                    *metastatic.choose(&mut rng).unwrap()
                }
            })
            .collect();
        let map = ext_map(&scheme, h, w, data.clone());
        let got = classify_frame(&map, &params).unwrap();

        let count = |set: &[u16]| data.iter().filter(|v| set.contains(v)).count();
        let expect = if data.contains(&epi) || count(&primary) > count(&metastatic) {
            FrameType::Primary
        } else {
            FrameType::Metastatic
        };
        if got != expect {
            oracle_bad += 1;
        }

        let mut shuffled = data.clone();
        shuffled.shuffle(&mut rng);
        let (h2, w2) = if rng.random_bool(0.5) { (w, h) } else { (1, n) };
        if classify_frame(&ext_map(&scheme, h2, w2, shuffled), &params).unwrap() != got {
            perm_bad += 1;
        }

        // Turning any pixel into primary epidermis never yields metastatic.
        let mut grown = data.clone();
        let at = rng.random_range(0..n);
        grown[at] = epi;
        if classify_frame(&ext_map(&scheme, h, w, grown), &params).unwrap() != FrameType::Primary {
            mono_bad += 1;
        }

        // Balanced primary/metastatic counts without epidermis.
        let half = rng.random_range(0..=n / 2);
        let mut tie: Vec<u16> = (0..n)
            .map(|i| {
                if i < half {
                    *non_epi_primary.choose(&mut rng).unwrap()
                } else if i < 2 * half {
                    *metastatic.choose(&mut rng).unwrap()
                } else {
                    0
                }
            })
            .collect();
        tie.shuffle(&mut rng);
        if classify_frame(&ext_map(&scheme, h, w, tie), &params).unwrap() != FrameType::Metastatic {
            tie_bad += 1;
        }
    }
    Outcome::new(
        perm_bad + mono_bad + tie_bad + oracle_bad == 0,
        format!(
            "{maps} maps: permutation {perm_bad}, epidermis monotonicity {mono_bad}, tie {tie_bad}, rule oracle {oracle_bad} failures"
        ),
    )
}

// ---------------------------------------------------------------------------
// Determinism

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let cfg = synth(&input, 2024, 16, 128, 2, "border,necrosis,noise");
    let (a, b) = (tmp.path().join("serial"), tmp.path().join("parallel"));
    let ra = run(&cfg, &a, 1);
    let rb = run(&cfg, &b, 8);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing = sa
        .keys()
        .chain(sb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| sa.get(*k) != sb.get(*k))
        .count();
    Outcome::new(
        ra == rb && differing == 0 && !sa.is_empty(),
        format!("{} files per run, {differing} differ", sa.len()),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    // Ignore libtest flags such as --nocapture passed through by cargo.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let strict = std::env::var("HISTOFUSE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria = [
        Criterion {
            name: "aggregation-arithmetic",
            limit: Duration::from_secs(1),
            run: aggregation_arithmetic,
        },
        Criterion {
            name: "fusion-rules",
            limit: Duration::from_secs(1),
            run: fusion_rules,
        },
        Criterion {
            name: "metric-oracles",
            limit: Duration::from_secs(60),
            run: metric_oracles,
        },
        Criterion {
            name: "pipeline-fixpoint",
            limit: Duration::from_secs(30),
            run: pipeline_fixpoint,
        },
        Criterion {
            name: "classifier-rules",
            limit: Duration::from_secs(10),
            run: classifier_rules,
        },
        Criterion {
            name: "determinism",
            limit: Duration::from_secs(60),
            run: determinism,
        },
    ];

    let mut unexpected = 0;
    let mut known = 0;
    for c in criteria.iter().filter(|c| filter.as_deref().is_none_or(|f| c.name.contains(f))) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = outcome.pass && in_time;
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), c.limit.as_secs());
        println!(
            "{} {:<24} {} [{}{}]",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            outcome.detail,
            timing,
            if in_time { "" } else { ", over time limit" }
        );
        if !pass {
            match KNOWN_FAILURES.iter().find(|(n, _)| *n == c.name) {
                Some((_, why)) if !strict => {
                    known += 1;
                    println!("     known failure: {why}");
                }
                _ => unexpected += 1,
            }
        }
    }
    println!("acceptance: {unexpected} unexpected failures, {known} known failures");
    if unexpected > 0 {
        std::process::exit(1);
    }
}
