//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use catsim::agreement::{agreement, ConfusionCounts};
use catsim::analysis::{
    corr_diff_randomization_test, largest_eigenvalue, pairwise_matrix, summarized_coefficient,
    CorrTestInput, PairwiseMatrix, PowerIteration, Similarity,
};
use catsim::distort::{
    activate_noise, dilate, disagreement_rate, erode, salt_pepper, salt_pepper_matched,
    shift_central, Region,
};
use catsim::engine::WindowChoice;
use catsim::io::{format_catgrid, load_png_labels, parse_catgrid, save_png_labels};
use catsim::{catsim, catsim_naive_oracle, AgreementKind, CatsimConfig, LabelGrid, TiePolicy};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [Check; 11] = [
        ("AC1", "identity and range", ac1_identity_and_range),
        (
            "AC2",
            "fast path equals naive oracle",
            ac2_oracle_equivalence,
        ),
        (
            "AC3",
            "agreement indices against brute force",
            ac3_agreement_oracles,
        ),
        (
            "AC4",
            "whole-image reduction to kappa",
            ac4_whole_image_kappa,
        ),
        (
            "AC5",
            "shift scores above matched noise",
            ac5_shift_vs_noise,
        ),
        (
            "AC6",
            "coarser levels smooth out noise",
            ac6_layer_smoothing,
        ),
        ("AC7", "morphology monotonicity", ac7_morphology),
        ("AC8", "summarized coefficient", ac8_summarized_coefficient),
        (
            "AC9",
            "randomization test calibration",
            ac9_randomization_test,
        ),
        ("AC10", "determinism", ac10_determinism),
        ("AC11", "I/O round trips", ac11_io_round_trips),
    ];
    let mut failures = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("{id} FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        checks.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn mixed_grid(rng: &mut ChaCha8Rng, dims: Vec<usize>, k: u32, masked: bool) -> LabelGrid {
    common::random_grid(rng, dims, k, masked.then_some(0.15))
}

/// Copy of `x` with a share of cells replaced by labels of an independent grid.
fn perturbed(rng: &mut ChaCha8Rng, x: &LabelGrid, share: f64) -> LabelGrid {
    let labels = x
        .labels()
        .iter()
        .map(|&l| {
            if rng.gen_bool(share) {
                rng.gen_range(0..x.k())
            } else {
                l
            }
        })
        .collect();
    x.with_labels(labels).unwrap()
}

fn ac1_identity_and_range() -> Outcome {
    let mut rng = common::rng(1);
    let start = Instant::now();
    let cfg = CatsimConfig::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let cases = 200;
    for case in 0..cases {
        let volume = case % 4 == 3;
        let dims = if volume {
            (0..3).map(|_| rng.gen_range(4..=32)).collect()
        } else {
            vec![rng.gen_range(8..=128), rng.gen_range(8..=128)]
        };
        let k = *[2, 3, 4, 6].choose(&mut rng).unwrap();
        let x = mixed_grid(&mut rng, dims.clone(), k, case % 2 == 0);
        let y = if case % 3 == 0 {
            mixed_grid(&mut rng, dims.clone(), k, case % 2 == 0)
        } else {
            perturbed(&mut rng, &x, 0.2)
        };
        let same = catsim(&x, &x, &cfg)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        ensure!(same == 1.0, "case {case} {dims:?}: catsim(x, x) = {same}");
        let v = catsim(&x, &y, &cfg)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        ensure!(
            (0.0..=1.0).contains(&v),
            "case {case}: value {v} out of range"
        );
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{cases} grids, identity exact, values in [{lo:.4}, {hi:.4}], {elapsed:.1?}"
    ))
}

fn ac2_oracle_equivalence() -> Outcome {
    let mut rng = common::rng(2);
    let cases = 100;
    for case in 0..cases {
        let volume = case % 5 == 4;
        let dims: Vec<usize> = if volume {
            (0..3).map(|_| rng.gen_range(4..=20)).collect()
        } else {
            vec![rng.gen_range(8..=72), rng.gen_range(8..=72)]
        };
        let k = rng.gen_range(2..=6);
        let x = mixed_grid(&mut rng, dims.clone(), k, case % 2 == 1);
        let share = rng.gen_range(0.05..0.6);
        let y = perturbed(&mut rng, &x, share);
        let kind = [
            AgreementKind::CohenKappa,
            AgreementKind::AdjustedRand,
            AgreementKind::Accuracy,
            AgreementKind::Dice { foreground: 1 },
        ][case % 4];
        let mut cfg = CatsimConfig::default()
            .with_levels(rng.gen_range(1..=5))
            .with_agreement(kind)
            .with_tie_policy(TiePolicy::LowestLabel);
        if case % 3 == 0 {
            let ext: Vec<usize> = dims.iter().map(|_| rng.gen_range(2..=7)).collect();
            let stride: Vec<usize> = dims.iter().map(|_| rng.gen_range(1..=3)).collect();
            cfg.window = WindowChoice::Spec(catsim::WindowSpec::new(ext, stride).unwrap());
        }
        let fast = catsim(&x, &y, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        let slow = catsim_naive_oracle(&x, &y, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            fast.value.to_bits() == slow.value.to_bits() && fast == slow,
            "case {case}: {} vs {}",
            fast.value,
            slow.value
        );
    }
    Ok(format!(
        "{cases} instances bit-identical (half masked, 20 volumes)"
    ))
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

fn ac3_agreement_oracles() -> Outcome {
    let mut rng = common::rng(3);
    let cases = 500;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.gen_range(2..=50usize);
        let k = rng.gen_range(2..=6u32);
        let a: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        // mix of near copies and independent draws
        let copy = rng.gen_range(0.0..1.0);
        let b: Vec<u32> = a
            .iter()
            .map(|&v| {
                if rng.gen_bool(copy) {
                    v
                } else {
                    rng.gen_range(0..k)
                }
            })
            .collect();
        let c = ConfusionCounts::from_pairs(k, a.iter().copied().zip(b.iter().copied()));
        let get = |kind| agreement(kind, &c).map_err(|e| format!("case {case}: {e}"));

        // pair enumeration
        let (mut same_both, mut diff_both, mut same_a, mut same_b) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                same_both += (sa && sb) as u64;
                diff_both += (!sa && !sb) as u64;
                same_a += sa as u64;
                same_b += sb as u64;
            }
        }
        let pairs = choose2(n as u64);
        let rand = (same_both + diff_both) as f64 / pairs;
        let expected = same_a as f64 * same_b as f64 / pairs;
        let max = (same_a + same_b) as f64 / 2.0;
        let ari = if (max - expected).abs() < 1e-12 {
            if same_partition(&a, &b) {
                1.0
            } else {
                0.0
            }
        } else {
            ((same_both as f64 - expected) / (max - expected)).max(0.0)
        };

        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64;
        let po = agree / n as f64;
        let pe: f64 = (0..k)
            .map(|l| {
                let ra = a.iter().filter(|&&v| v == l).count() as f64;
                let rb = b.iter().filter(|&&v| v == l).count() as f64;
                ra * rb
            })
            .sum::<f64>()
            / (n * n) as f64;
        let kappa = if (1.0 - pe).abs() < 1e-15 {
            1.0
        } else {
            ((po - pe) / (1.0 - pe)).max(0.0)
        };

        let fg = rng.gen_range(0..k);
        let in_a = a.iter().filter(|&&v| v == fg).count() as f64;
        let in_b = b.iter().filter(|&&v| v == fg).count() as f64;
        let both = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| **x == fg && **y == fg)
            .count() as f64;
        let union = in_a + in_b - both;
        let jaccard = if union == 0.0 { 1.0 } else { both / union };
        let dice = if in_a + in_b == 0.0 {
            1.0
        } else {
            2.0 * both / (in_a + in_b)
        };

        let checks = [
            ("rand", get(AgreementKind::Rand)?, rand),
            ("ari", get(AgreementKind::AdjustedRand)?, ari),
            ("kappa", get(AgreementKind::CohenKappa)?, kappa),
            ("accuracy", get(AgreementKind::Accuracy)?, po),
            ("hamming", get(AgreementKind::Hamming)?, po),
            (
                "jaccard",
                get(AgreementKind::Jaccard { foreground: fg })?,
                jaccard,
            ),
            ("dice", get(AgreementKind::Dice { foreground: fg })?, dice),
        ];
        for (name, got, want) in checks {
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure!(
                err < 1e-12,
                "case {case} (n={n}, k={k}): {name} {got} vs {want}"
            );
        }
        let j = get(AgreementKind::Jaccard { foreground: fg })?;
        let d = get(AgreementKind::Dice { foreground: fg })?;
        ensure!(
            (d - 2.0 * j / (1.0 + j)).abs() < 1e-12,
            "case {case}: dice {d} vs 2J/(1+J) from J={j}"
        );
    }
    Ok(format!("{cases} patches, max deviation {worst:.1e}"))
}

/// Whether two labelings induce the same partition of the cells.
fn same_partition(a: &[u32], b: &[u32]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn ac4_whole_image_kappa() -> Outcome {
    let mut rng = common::rng(4);
    let cfg = CatsimConfig::default()
        .with_levels(1)
        .with_window(WindowChoice::Whole)
        .with_agreement(AgreementKind::CohenKappa);
    let cases = 60;
    let mut sample = Vec::new();
    for case in 0..cases {
        let x = if case % 2 == 0 {
            common::structured_scene(case as u64, 96, 120, rng.gen_range(2..=4), 2)
        } else {
            let dims = vec![rng.gen_range(10..80), rng.gen_range(10..80)];
            let k = rng.gen_range(2..=5);
            mixed_grid(&mut rng, dims, k, case % 4 == 1)
        };
        // same proportions: permute a fraction of the valid cells among themselves
        let share = rng.gen_range(0.05..1.0);
        let y = partial_shuffle(&x, &mut rng, share);
        let joint = x.joint_mask(&y);
        let valid = |i: usize| joint.as_ref().is_none_or(|m| m[i]);
        let c = ConfusionCounts::from_pairs(
            x.k(),
            (0..x.len())
                .filter(|&i| valid(i))
                .map(|i| (x.labels()[i], y.labels()[i])),
        );
        let kappa = agreement(AgreementKind::CohenKappa, &c).map_err(|e| e.to_string())?;
        let v = catsim(&x, &y, &cfg)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        ensure!(v == kappa, "case {case}: catsim {v} vs kappa {kappa}");
        if sample.len() < 3 {
            sample.push(format!("{v:.3}/{kappa:.3}"));
        }
    }
    Ok(format!("{cases} pairs exact, e.g. {}", sample.join(", ")))
}

fn partial_shuffle(g: &LabelGrid, rng: &mut ChaCha8Rng, share: f64) -> LabelGrid {
    let idx: Vec<usize> = (0..g.len())
        .filter(|&i| g.is_valid(i) && rng.gen_bool(share))
        .collect();
    let mut vals: Vec<u32> = idx.iter().map(|&i| g.labels()[i]).collect();
    vals.shuffle(rng);
    let mut labels = g.labels().to_vec();
    for (&i, v) in idx.iter().zip(vals) {
        labels[i] = v;
    }
    g.with_labels(labels).unwrap()
}

fn whole_kappa(x: &LabelGrid, y: &LabelGrid) -> f64 {
    let c = ConfusionCounts::from_pairs(
        x.k(),
        x.labels().iter().copied().zip(y.labels().iter().copied()),
    );
    agreement(AgreementKind::CohenKappa, &c).unwrap()
}

fn ac5_shift_vs_noise() -> Outcome {
    let five = CatsimConfig::default();
    let one = CatsimConfig::default().with_levels(1);
    let ks = [2, 2, 2, 3, 4];
    let shifts: [[isize; 2]; 3] = [[0, 6], [6, 0], [3, 3]];
    let mut rows = Vec::new();
    let (mut max_kdiff, mut max_ratio) = (0.0f64, 0.0f64);
    for (scene, &k) in ks.iter().enumerate() {
        let x = common::balanced_scene(500 + scene as u64, 264, 300, k, 12);
        let region = Region::central(x.dims(), 12).map_err(|e| e.to_string())?;
        for (si, off) in shifts.iter().enumerate() {
            let shifted = shift_central(&x, off, &region).map_err(|e| e.to_string())?;
            let noisy = salt_pepper_matched(&x, &shifted, (scene * 10 + si) as u64)
                .map_err(|e| e.to_string())?;
            let (r_shift, r_noise) = (
                disagreement_rate(&x, &shifted).unwrap(),
                disagreement_rate(&x, &noisy).unwrap(),
            );
            let cells = x.len() as f64;
            ensure!(
                (r_shift - r_noise).abs() * cells <= 1.0 + 1e-9,
                "scene {scene}: rates {r_shift} vs {r_noise}"
            );
            let s5 = catsim(&x, &shifted, &five).unwrap().value;
            let n5 = catsim(&x, &noisy, &five).unwrap().value;
            let s1 = catsim(&x, &shifted, &one).unwrap().value;
            let n1 = catsim(&x, &noisy, &one).unwrap().value;
            let kdiff = (whole_kappa(&x, &shifted) - whole_kappa(&x, &noisy)).abs();
            let tag = format!("scene {scene} k={k} shift {off:?} rate {r_shift:.4}");
            ensure!(s5 > n5, "{tag}: 5-level shift {s5:.4} <= noise {n5:.4}");
            ensure!(kdiff < 0.02, "{tag}: kappa difference {kdiff:.4}");
            ensure!(
                n1 < 0.3 * s1,
                "{tag}: 1-level noise {n1:.4} >= 0.3 x shift {s1:.4}"
            );
            max_kdiff = max_kdiff.max(kdiff);
            max_ratio = max_ratio.max(n1 / s1);
            if si == 0 {
                rows.push(format!("k={k}: {s5:.3}>{n5:.3}"));
            }
        }
    }
    Ok(format!(
        "15 cases; 5-level shift>noise ({}); max |dkappa| {max_kdiff:.4}; max 1-level noise/shift {max_ratio:.3}",
        rows.join(", ")
    ))
}

fn ac6_layer_smoothing() -> Outcome {
    let x = common::smooth_two_class(6, 256);
    let y = salt_pepper(&x, 0.01, 66).map_err(|e| e.to_string())?;
    let cfg = CatsimConfig::default().with_agreement(AgreementKind::Jaccard { foreground: 1 });
    let r = catsim(&x, &y, &cfg).map_err(|e| e.to_string())?;
    ensure!(r.per_level.len() == 5, "only {} levels", r.per_level.len());
    let s: Vec<f64> = r.per_level.iter().map(|l| l.mean_s).collect();
    ensure!(
        s[2] >= 0.9 * s[4],
        "level 3 {:.4} < 0.9 x level 5 {:.4}",
        s[2],
        s[4]
    );
    ensure!(s[0] < s[2], "level 1 {:.4} >= level 3 {:.4}", s[0], s[2]);
    let levels: Vec<String> = s.iter().map(|v| format!("{v:.3}")).collect();
    Ok(format!("mean_s by level [{}]", levels.join(", ")))
}

/// Scores of D+1, D+2, E-1, E-2, 1% and 3% activation noise against the phantom.
fn morphology_scores(seed: u64) -> Result<[f64; 6], String> {
    let cfg = CatsimConfig::default().with_agreement(AgreementKind::Jaccard { foreground: 1 });
    let x = common::activation_phantom(seed, 256, 0.04);
    let score = |y: LabelGrid| {
        catsim(&x, &y, &cfg)
            .map(|r| r.value)
            .map_err(|e| e.to_string())
    };
    Ok([
        score(dilate(&x, 1, 1).unwrap())?,
        score(dilate(&x, 1, 2).unwrap())?,
        score(erode(&x, 1, 1).unwrap())?,
        score(erode(&x, 1, 2).unwrap())?,
        score(activate_noise(&x, 1, 0.01, seed).unwrap())?,
        score(activate_noise(&x, 1, 0.03, seed).unwrap())?,
    ])
}

fn ac7_morphology() -> Outcome {
    let [d1, d2, e1, e2, n1, n3] = morphology_scores(7)?;
    let tag = format!("D+1 {d1:.3} D+2 {d2:.3} E-1 {e1:.3} E-2 {e2:.3} 1% {n1:.3} 3% {n3:.3}");
    ensure!(d1 > d2 && e1 > e2 && n1 > n3, "{tag}");
    // robustness over other phantoms, reported only
    let mut held = [0usize; 3];
    let others = 10;
    for seed in 100..100 + others as u64 {
        let [d1, d2, e1, e2, n1, n3] = morphology_scores(seed)?;
        held[0] += (d1 > d2) as usize;
        held[1] += (e1 > e2) as usize;
        held[2] += (n1 > n3) as usize;
    }
    Ok(format!(
        "{tag}; other phantoms: dilation {}/{others}, erosion {}/{others}, noise {}/{others}",
        held[0], held[1], held[2]
    ))
}

fn ac8_summarized_coefficient() -> Outcome {
    let labels = |n: usize| (0..n).map(|i| format!("s{i}")).collect::<Vec<_>>();
    // identical studies through the full pipeline
    let g = common::structured_scene(8, 96, 96, 3, 2);
    let m = pairwise_matrix(
        &vec![g.clone(); 4],
        None,
        &Similarity::Catsim(CatsimConfig::default()),
    )
    .map_err(|e| e.to_string())?;
    let same = summarized_coefficient(&m).map_err(|e| e.to_string())?;
    ensure!((same - 1.0).abs() < 1e-12, "identical studies give {same}");
    // studies with disjoint foregrounds
    let disjoint: Vec<LabelGrid> = (0..4)
        .map(|s| {
            let labels = (0..64 * 64).map(|i| ((i % 64) / 16 == s) as u32).collect();
            LabelGrid::new(vec![64, 64], labels, 2).unwrap()
        })
        .collect();
    let m = pairwise_matrix(
        &disjoint,
        None,
        &Similarity::Agreement(AgreementKind::Jaccard { foreground: 1 }),
    )
    .map_err(|e| e.to_string())?;
    let apart = summarized_coefficient(&m).map_err(|e| e.to_string())?;
    ensure!(apart.abs() < 1e-12, "disjoint studies give {apart}");

    let mut rng = common::rng(8);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(2..=12);
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = if case % 2 == 0 {
                    if i == j {
                        1.0
                    } else {
                        rng.gen_range(0.0..1.0)
                    }
                } else {
                    rng.gen_range(-1.0..1.0)
                };
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let values: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect();
        let dense = a.clone().symmetric_eigen().eigenvalues.max();
        let power = largest_eigenvalue(&values, n, PowerIteration::default());
        let err = (dense - power).abs();
        worst = worst.max(err);
        ensure!(
            err < 1e-8,
            "case {case} (n={n}): power {power} vs dense {dense}"
        );
        if case % 2 == 0 {
            let m = PairwiseMatrix::new(labels(n), values).map_err(|e| e.to_string())?;
            let coef = summarized_coefficient(&m).map_err(|e| e.to_string())?;
            let want = ((dense - 1.0) / (n as f64 - 1.0)).clamp(0.0, 1.0);
            ensure!(
                (coef - want).abs() < 1e-8,
                "case {case}: coefficient {coef} vs {want}"
            );
        }
    }
    Ok(format!(
        "identical {same}, disjoint {apart}, 100 matrices max eigenvalue error {worst:.1e}"
    ))
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

fn ac9_randomization_test() -> Outcome {
    let mut rng = common::rng(9);
    let items = 30;
    let datasets = 200;
    let mut pvals = Vec::with_capacity(datasets);
    for d in 0..datasets {
        // both metrics are equally noisy readings of the rating
        let mos: Vec<f64> = (0..items).map(|_| rng.gen_range(1.0..5.0)).collect();
        let m1 = mos.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let m2 = mos.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let input = CorrTestInput {
            m1,
            m2,
            mos,
            iterations: 2000,
            seed: d as u64,
        };
        pvals.push(
            corr_diff_randomization_test(&input)
                .map_err(|e| e.to_string())?
                .p_value,
        );
    }
    let ks = ks_uniform(pvals.clone());
    let critical = 1.628 / (datasets as f64).sqrt();
    ensure!(ks < critical, "KS distance {ks:.4} >= {critical:.4}");

    let mos: Vec<f64> = (0..items).map(|_| rng.gen_range(1.0..5.0)).collect();
    let input = CorrTestInput {
        m1: mos.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect(),
        m2: mos.iter().map(|v| v + rng.gen_range(-2.5..2.5)).collect(),
        mos,
        iterations: CorrTestInput::DEFAULT_ITERATIONS,
        seed: 99,
    };
    let strong = corr_diff_randomization_test(&input).map_err(|e| e.to_string())?;
    ensure!(
        strong.p_value < 0.05,
        "strong signal p = {}",
        strong.p_value
    );

    // identical metrics: every relabelling ties, giving the mid value
    let flat = CorrTestInput {
        m2: input.m1.clone(),
        iterations: 1000,
        ..input.clone()
    };
    let tie = corr_diff_randomization_test(&flat)
        .map_err(|e| e.to_string())?
        .p_value;
    Ok(format!(
        "null KS D {ks:.4} < {critical:.4} over {datasets} datasets; strong p {:.5}; m1 = m2 gives p {tie}",
        strong.p_value
    ))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_catsim")
}

fn run_cli(dir: &Path, args: &[String]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn argv_of(manifest: &serde_json::Value) -> Vec<String> {
    manifest["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

fn ac10_determinism() -> Outcome {
    // engine and analysis across thread pools
    let x = common::structured_scene(10, 160, 176, 4, 4);
    let mut rng = common::rng(10);
    let y = perturbed(&mut rng, &x, 0.1);
    let z = perturbed(&mut rng, &x, 0.3);
    let cfg = CatsimConfig::default().with_tie_policy(TiePolicy::SeededRandom { seed: 5 });
    let vol_x = common::random_grid(&mut rng, vec![24, 28, 20], 3, Some(0.1));
    let vol_y = perturbed(&mut rng, &vol_x, 0.2);
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                (
                    catsim(&x, &y, &cfg).unwrap(),
                    catsim(&vol_x, &vol_y, &cfg).unwrap(),
                    pairwise_matrix(
                        &[x.clone(), y.clone(), z.clone()],
                        None,
                        &Similarity::Catsim(cfg.clone()),
                    )
                    .unwrap()
                    .values()
                    .to_vec(),
                )
            })
    };
    let base = in_pool(1);
    for threads in [2, 8] {
        let other = in_pool(threads);
        ensure!(
            other.0 == base.0 && other.1 == base.1,
            "engine output differs with {threads} threads"
        );
        ensure!(
            other
                .2
                .iter()
                .zip(&base.2)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "pairwise matrix differs with {threads} threads"
        );
    }

    // stochastic CLI paths replayed from their manifests
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(dir.join("x.catgrid"), format_catgrid(&x, None).unwrap()).unwrap();
    let mut csv = String::from("a,b,mos\n");
    for i in 0..25 {
        let v = i as f64 / 5.0;
        csv.push_str(&format!(
            "{},{},{v}\n",
            v + rng.gen_range(-0.5..0.5),
            v + rng.gen_range(-1.0..1.0)
        ));
    }
    std::fs::write(dir.join("s.csv"), csv).unwrap();
    let s = |v: &[&str]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>();
    let mut replayed = 0;
    for (args, output) in [
        (
            s(&[
                "distort",
                "x.catgrid",
                "-o",
                "d.catgrid",
                "--shift",
                "3,-2",
                "--noise",
                "0.03",
                "--seed",
                "41",
            ]),
            "d.catgrid",
        ),
        (
            s(&[
                "distort",
                "x.catgrid",
                "-o",
                "a.catgrid",
                "--activate",
                "0.05",
                "--class",
                "2",
                "--seed",
                "9",
            ]),
            "a.catgrid",
        ),
        (
            s(&[
                "downsample",
                "x.catgrid",
                "-o",
                "p.catgrid",
                "--steps",
                "3",
                "--seed",
                "12",
            ]),
            "p.catgrid",
        ),
    ] {
        run_cli(dir, &args)?;
        let first = std::fs::read(dir.join(output)).unwrap();
        let manifest_path = dir.join(format!("{output}.manifest.json"));
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&manifest_path).unwrap()).unwrap();
        std::fs::remove_file(dir.join(output)).unwrap();
        for threads in ["1", "8"] {
            let mut replay = vec!["--threads".to_string(), threads.to_string()];
            replay.extend(argv_of(&manifest));
            run_cli(dir, &replay)?;
            ensure!(
                std::fs::read(dir.join(output)).unwrap() == first,
                "{output} differs on replay"
            );
        }
        replayed += 1;
    }
    let args = s(&[
        "corrtest",
        "s.csv",
        "--iterations",
        "5000",
        "--seed",
        "3",
        "--json",
    ]);
    let first: serde_json::Value = serde_json::from_slice(&run_cli(dir, &args)?).unwrap();
    let again: serde_json::Value =
        serde_json::from_slice(&run_cli(dir, &argv_of(&first["manifest"]))?).unwrap();
    ensure!(
        first["result"] == again["result"],
        "corrtest result differs on replay"
    );
    replayed += 1;
    let args = s(&["compare", "x.catgrid", "d.catgrid", "--json", "--seed", "8"]);
    let first: serde_json::Value = serde_json::from_slice(&run_cli(dir, &args)?).unwrap();
    let mut replay = s(&["--threads", "2"]);
    replay.extend(argv_of(&first["manifest"]));
    let again: serde_json::Value = serde_json::from_slice(&run_cli(dir, &replay)?).unwrap();
    ensure!(
        first["report"] == again["report"],
        "compare report differs on replay"
    );
    replayed += 1;
    Ok(format!(
        "1/2/8 threads identical; {replayed} CLI runs replayed byte for byte from manifests"
    ))
}

fn ac11_io_round_trips() -> Outcome {
    let mut rng = common::rng(11);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut text, mut png) = (0, 0);
    for case in 0..100 {
        let volume = case % 4 == 0;
        let dims: Vec<usize> = if volume {
            (0..3).map(|_| rng.gen_range(1..=12)).collect()
        } else {
            vec![rng.gen_range(1..=64), rng.gen_range(1..=64)]
        };
        let k = rng.gen_range(2..=12);
        let g = mixed_grid(&mut rng, dims.clone(), k, case % 2 == 1);

        let alphabet: Option<Vec<i64>> = (case % 3 == 0).then(|| {
            let mut a: Vec<i64> = (0..k as i64).map(|v| v * 7 + 3).collect();
            a.shuffle(&mut rng);
            a
        });
        let s = format_catgrid(&g, alphabet.as_deref()).map_err(|e| e.to_string())?;
        let back = parse_catgrid(&s).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            back.grid == g,
            "case {case}: catgrid round trip changed the grid"
        );
        if let Some(a) = &alphabet {
            ensure!(&back.alphabet == a, "case {case}: alphabet not preserved");
        }
        text += 1;

        if !volume {
            let path = tmp.path().join(format!("g{case}.png"));
            let values: Vec<u8> = {
                let mut v: Vec<u8> = (0..=255).collect();
                v.shuffle(&mut rng);
                v.truncate(k as usize);
                v
            };
            save_png_labels(&g, &path, Some(&values)).map_err(|e| e.to_string())?;
            let back =
                load_png_labels(&path, Some(&values)).map_err(|e| format!("case {case}: {e}"))?;
            ensure!(
                back.grid == g,
                "case {case}: PNG round trip changed the grid"
            );
            let auto = load_png_labels(&path, None).map_err(|e| format!("case {case}: {e}"))?;
            let present: Vec<u8> = {
                let mut p: Vec<u8> = (0..g.len())
                    .filter(|&i| g.is_valid(i))
                    .map(|i| values[g.labels()[i] as usize])
                    .collect();
                p.sort_unstable();
                p.dedup();
                p
            };
            if present.len() == k as usize {
                let decoded: Vec<i64> = (0..g.len())
                    .filter(|&i| g.is_valid(i))
                    .map(|i| auto.alphabet[auto.grid.labels()[i] as usize])
                    .collect();
                let original: Vec<i64> = (0..g.len())
                    .filter(|&i| g.is_valid(i))
                    .map(|i| values[g.labels()[i] as usize] as i64)
                    .collect();
                ensure!(
                    decoded == original,
                    "case {case}: PNG values changed without an alphabet"
                );
                ensure!(
                    auto.grid.mask() == g.mask(),
                    "case {case}: PNG mask changed"
                );
            }
            png += 1;
        }
    }
    Ok(format!(
        "{text} catgrid and {png} PNG round trips identical"
    ))
}
