//! ISO-style PAD metrics: APCER / BPCER / ACER at an operating threshold,
//! EER via an interpolated threshold sweep, and TDR at a fixed FDR.
//!
//! Scores are attack-probabilities (higher = more attack-like); a sample is
//! classified attack iff `score >= threshold`. All rates are percentages.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub subject_id: String,
    pub label: Label,
    pub attack_type: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub tdr_at_fdr: f64,
    pub fdr_percent: f64,
    pub operating_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_attack_type_apcer: Option<BTreeMap<String, f64>>,
}

fn split_scores(scores: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut live = Vec::new();
    let mut attack = Vec::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite score for sample {}",
                s.sample_id
            )));
        }
        match s.label {
            Label::BonaFide => live.push(s.score),
            Label::Attack => attack.push(s.score),
        }
    }
    if live.is_empty() || attack.is_empty() {
        return Err(Error::SingleClass);
    }
    Ok((live, attack))
}

/// APCER: % of attacks classified bona fide (score < threshold).
/// BPCER: % of bona fide classified attack (score >= threshold).
fn rates_at(live: &[f64], attack: &[f64], threshold: f64) -> (f64, f64) {
    let apcer = 100.0 * attack.iter().filter(|s| **s < threshold).count() as f64
        / attack.len() as f64;
    let bpcer =
        100.0 * live.iter().filter(|s| **s >= threshold).count() as f64 / live.len() as f64;
    (apcer, bpcer)
}

/// Threshold-dependent metrics plus EER and TDR@FDR=1% in one report.
pub fn compute_pad_metrics(scores: &[ScoredSample], threshold: f64) -> Result<MetricsReport> {
    let (live, attack) = split_scores(scores)?;
    let (apcer, bpcer) = rates_at(&live, &attack, threshold);
    let correct = attack.iter().filter(|s| **s >= threshold).count()
        + live.iter().filter(|s| **s < threshold).count();
    let accuracy = 100.0 * correct as f64 / (live.len() + attack.len()) as f64;
    let (eer, eer_threshold) = eer(scores)?;
    let fdr_percent = 1.0;
    let tdr = tdr_at_fdr(scores, fdr_percent)?;

    // per-attack-type APCER breakdown when types are present
    let mut by_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in scores {
        if s.label == Label::Attack {
            if let Some(t) = &s.attack_type {
                let e = by_type.entry(t.clone()).or_insert((0, 0));
                e.1 += 1;
                if s.score < threshold {
                    e.0 += 1;
                }
            }
        }
    }
    let per_attack_type_apcer = if by_type.is_empty() {
        None
    } else {
        Some(
            by_type
                .into_iter()
                .map(|(t, (miss, total))| (t, 100.0 * miss as f64 / total as f64))
                .collect(),
        )
    };

    Ok(MetricsReport {
        accuracy,
        apcer,
        bpcer,
        acer: (apcer + bpcer) / 2.0,
        eer,
        eer_threshold,
        tdr_at_fdr: tdr,
        fdr_percent,
        operating_threshold: threshold,
        per_attack_type_apcer,
    })
}

/// Equal error rate. Candidate thresholds are every distinct score plus one
/// above the maximum; the crossing of the piecewise-linear APCER/BPCER
/// curves between the bracketing candidates gives the rate and threshold.
pub fn eer(scores: &[ScoredSample]) -> Result<(f64, f64)> {
    let (live, attack) = split_scores(scores)?;
    let mut thresholds: Vec<f64> = live.iter().chain(attack.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let max = *thresholds.last().unwrap();
    thresholds.push(max + 1.0);

    // APCER - BPCER is non-decreasing in the threshold: find the sign flip
    let mut prev_t = thresholds[0];
    let (mut prev_a, mut prev_b) = rates_at(&live, &attack, prev_t);
    if prev_a - prev_b >= 0.0 {
        return Ok(((prev_a + prev_b) / 2.0, prev_t));
    }
    for &t in &thresholds[1..] {
        let (a, b) = rates_at(&live, &attack, t);
        let d = a - b;
        if d >= 0.0 {
            let d0 = prev_a - prev_b;
            let denom = d - d0;
            let f = if denom.abs() < 1e-12 { 0.5 } else { -d0 / denom };
            let rate = prev_a + f * (a - prev_a);
            let thr = prev_t + f * (t - prev_t);
            return Ok((rate, thr));
        }
        prev_t = t;
        prev_a = a;
        prev_b = b;
    }
    // not reachable: above the max everything is bona fide, APCER = 100
    Ok((50.0, max))
}

/// TDR@FDR: the smallest candidate threshold whose false-detection rate
/// (% bona fide scored >= threshold) is at most `fdr_percent`; returns the
/// % of attacks at or above it.
pub fn tdr_at_fdr(scores: &[ScoredSample], fdr_percent: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&fdr_percent) {
        return Err(Error::InvalidConfig(format!(
            "fdr_percent must be in [0, 100], got {fdr_percent}"
        )));
    }
    let (live, attack) = split_scores(scores)?;
    let mut thresholds: Vec<f64> = live.iter().chain(attack.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let max = *thresholds.last().unwrap();
    thresholds.push(max + 1.0);

    for &t in &thresholds {
        let fdr = 100.0 * live.iter().filter(|s| **s >= t).count() as f64 / live.len() as f64;
        if fdr <= fdr_percent {
            let tdr =
                100.0 * attack.iter().filter(|s| **s >= t).count() as f64 / attack.len() as f64;
            return Ok(tdr);
        }
    }
    Ok(0.0)
}

// ---- score files and reports ----

pub const SCORE_HEADER: [&str; 5] = ["sample_id", "subject_id", "label", "attack_type", "score"];

pub fn save_scores(scores: &[ScoredSample], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SCORE_HEADER)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for s in scores {
        w.write_record([
            s.sample_id.as_str(),
            s.subject_id.as_str(),
            s.label.as_manifest_str(),
            s.attack_type.as_deref().unwrap_or(""),
            &s.score.to_string(),
        ])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != SCORE_HEADER {
            return Err(Error::InvalidInput(format!(
                "expected score header `{}`, got `{}`",
                SCORE_HEADER.join(","),
                got.join(",")
            )));
        }
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
        let label = Label::parse_manifest(&rec[2])
            .ok_or_else(|| Error::InvalidInput(format!("bad label `{}`", &rec[2])))?;
        out.push(ScoredSample {
            sample_id: rec[0].to_string(),
            subject_id: rec[1].to_string(),
            label,
            attack_type: if rec[3].is_empty() {
                None
            } else {
                Some(rec[3].to_string())
            },
            score: rec[4]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad score `{}`", &rec[4])))?,
        });
    }
    Ok(out)
}

/// Mean and population standard deviation per metric over folds, with a
/// `mean ± std` display string per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub mean: MetricsSummary,
    pub std: MetricsSummary,
    pub display: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub eer: f64,
    pub tdr_at_fdr: f64,
}

/// Full evaluation report: one entry per fold plus the aggregate when more
/// than one fold is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub folds: Vec<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<FoldAggregate>,
    pub threshold_policy: String,
}

pub fn aggregate_folds(folds: &[MetricsReport]) -> Option<FoldAggregate> {
    if folds.len() < 2 {
        return None;
    }
    let n = folds.len() as f64;
    let columns: [(&str, fn(&MetricsReport) -> f64); 6] = [
        ("accuracy", |r| r.accuracy),
        ("apcer", |r| r.apcer),
        ("bpcer", |r| r.bpcer),
        ("acer", |r| r.acer),
        ("eer", |r| r.eer),
        ("tdr_at_fdr", |r| r.tdr_at_fdr),
    ];
    let mut means = [0f64; 6];
    let mut stds = [0f64; 6];
    let mut display = BTreeMap::new();
    for (i, (name, get)) in columns.iter().enumerate() {
        let vals: Vec<f64> = folds.iter().map(get).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means[i] = mean;
        stds[i] = var.sqrt();
        display.insert(name.to_string(), format!("{:.2} ± {:.2}", mean, var.sqrt()));
    }
    let mk = |v: &[f64; 6]| MetricsSummary {
        accuracy: v[0],
        apcer: v[1],
        bpcer: v[2],
        acer: v[3],
        eer: v[4],
        tdr_at_fdr: v[5],
    };
    Some(FoldAggregate {
        mean: mk(&means),
        std: mk(&stds),
        display,
    })
}

pub fn build_report(folds: Vec<MetricsReport>, threshold_policy: &str) -> EvaluationReport {
    let aggregate = aggregate_folds(&folds);
    EvaluationReport {
        folds,
        aggregate,
        threshold_policy: threshold_policy.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn sample(id: usize, label: Label, score: f64) -> ScoredSample {
        ScoredSample {
            sample_id: format!("s{id}"),
            subject_id: format!("subj{id}"),
            label,
            attack_type: (label == Label::Attack).then(|| "disguise".to_string()),
            score,
        }
    }

    fn scoreset(live: &[f64], attack: &[f64]) -> Vec<ScoredSample> {
        let mut out = Vec::new();
        for (i, s) in live.iter().enumerate() {
            out.push(sample(i, Label::BonaFide, *s));
        }
        for (i, s) in attack.iter().enumerate() {
            out.push(sample(1000 + i, Label::Attack, *s));
        }
        out
    }

    #[test]
    fn acer_identity_and_paper_mean_row() {
        // rates engineered to APCER = 6.84%, BPCER = 11.10%
        // 10000 attacks with 684 below threshold, 10000 live with 1110 above
        let mut live = vec![0.1; 8890];
        live.extend(vec![0.9; 1110]);
        let mut attack = vec![0.9; 9316];
        attack.extend(vec![0.1; 684]);
        let scores = scoreset(&live, &attack);
        let r = compute_pad_metrics(&scores, 0.5).unwrap();
        assert!((r.apcer - 6.84).abs() < 1e-9);
        assert!((r.bpcer - 11.10).abs() < 1e-9);
        assert!((r.acer - 8.97).abs() < 1e-9);
        assert_eq!(r.acer, (r.apcer + r.bpcer) / 2.0);
    }

    #[test]
    fn perfect_separation() {
        let scores = scoreset(&[0.1, 0.2, 0.3], &[0.7, 0.8, 0.9]);
        let r = compute_pad_metrics(&scores, 0.5).unwrap();
        assert_eq!(r.apcer, 0.0);
        assert_eq!(r.bpcer, 0.0);
        assert_eq!(r.acer, 0.0);
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.tdr_at_fdr, 100.0);
    }

    #[test]
    fn hand_counted_four_samples() {
        // threshold 0.5: attack 0.4 -> miss; live 0.6 -> false alarm
        let scores = scoreset(&[0.2, 0.6], &[0.4, 0.9]);
        let r = compute_pad_metrics(&scores, 0.5).unwrap();
        assert_eq!(r.apcer, 50.0);
        assert_eq!(r.bpcer, 50.0);
        assert_eq!(r.acer, 50.0);
        assert_eq!(r.accuracy, 50.0);
    }

    #[test]
    fn ties_at_threshold_count_as_attack() {
        let scores = scoreset(&[0.5], &[0.5, 0.9]);
        let r = compute_pad_metrics(&scores, 0.5).unwrap();
        // live at exactly 0.5 is classified attack -> BPCER 100
        assert_eq!(r.bpcer, 100.0);
        // attack at exactly 0.5 is classified attack -> APCER 0
        assert_eq!(r.apcer, 0.0);
    }

    #[test]
    fn eer_separable_is_zero() {
        let scores = scoreset(&[0.1, 0.2], &[0.8, 0.9]);
        let (e, t) = eer(&scores).unwrap();
        assert_eq!(e, 0.0);
        assert!(t > 0.2 && t <= 0.8, "threshold {t}");
    }

    #[test]
    fn eer_identical_multisets_is_fifty() {
        let scores = scoreset(&[0.3, 0.5, 0.7], &[0.3, 0.5, 0.7]);
        let (e, _) = eer(&scores).unwrap();
        assert!((e - 50.0).abs() < 1e-9, "eer = {e}");
    }

    #[test]
    fn eer_matches_bruteforce_grid() {
        let mut rng = stream_rng(3, Stream::Split);
        for trial in 0..100 {
            let live: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let attack: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let scores = scoreset(&live, &attack);
            let (e, _) = eer(&scores).unwrap();

            // exhaustive grid oracle, step 1e-4
            let mut best = f64::INFINITY;
            let mut best_rate = 0.0;
            let mut t = -0.001f64;
            while t <= 1.002 {
                let apcer =
                    100.0 * attack.iter().filter(|s| **s < t).count() as f64 / attack.len() as f64;
                let bpcer =
                    100.0 * live.iter().filter(|s| **s >= t).count() as f64 / live.len() as f64;
                if (apcer - bpcer).abs() < best {
                    best = (apcer - bpcer).abs();
                    best_rate = (apcer + bpcer) / 2.0;
                }
                t += 1e-4;
            }
            assert!(
                (e - best_rate).abs() <= 0.5,
                "trial {trial}: interpolated {e} vs grid {best_rate}"
            );
        }
    }

    #[test]
    fn tdr_cases() {
        // all attacks below all bona fide -> TDR 0
        let scores = scoreset(&[0.8, 0.9], &[0.1, 0.2]);
        assert_eq!(tdr_at_fdr(&scores, 1.0).unwrap(), 0.0);

        // random scores match a brute-force scan over the same candidates
        let mut rng = stream_rng(4, Stream::Split);
        let live: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let attack: Vec<f64> = (0..100).map(|_| rng.gen_range(0.2..1.2)).collect();
        let scores = scoreset(&live, &attack);
        let got = tdr_at_fdr(&scores, 1.0).unwrap();

        let mut cands: Vec<f64> = live.iter().chain(attack.iter()).copied().collect();
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cands.dedup();
        cands.push(cands.last().unwrap() + 1.0);
        let mut expected = 0.0;
        for t in cands {
            let fdr = 100.0 * live.iter().filter(|s| **s >= t).count() as f64 / 100.0;
            if fdr <= 1.0 {
                expected = 100.0 * attack.iter().filter(|s| **s >= t).count() as f64 / 100.0;
                break;
            }
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = stream_rng(5, Stream::Split);
        let live: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let attack: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = scoreset(&live, &attack);
        let (e1, _) = eer(&base).unwrap();
        let t1 = tdr_at_fdr(&base, 1.0).unwrap();

        // strictly monotone transform of scores and of the threshold
        let f = |x: f64| (3.0 * x).exp() / (1.0 + (3.0 * x).exp()) * 2.0 - 0.3;
        let mapped: Vec<ScoredSample> = base
            .iter()
            .map(|s| ScoredSample { score: f(s.score), ..s.clone() })
            .collect();
        let (e2, _) = eer(&mapped).unwrap();
        let t2 = tdr_at_fdr(&mapped, 1.0).unwrap();
        assert!((e1 - e2).abs() < 1e-9);
        assert!((t1 - t2).abs() < 1e-9);

        let r1 = compute_pad_metrics(&base, 0.37).unwrap();
        let r2 = compute_pad_metrics(&mapped, f(0.37)).unwrap();
        assert!((r1.apcer - r2.apcer).abs() < 1e-9);
        assert!((r1.bpcer - r2.bpcer).abs() < 1e-9);
        assert!((r1.accuracy - r2.accuracy).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_error() {
        let scores = scoreset(&[0.1, 0.2], &[]);
        assert!(matches!(compute_pad_metrics(&scores, 0.5), Err(Error::SingleClass)));
    }

    #[test]
    fn score_file_roundtrip() {
        let scores = scoreset(&[0.25, 0.5], &[0.75]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        save_scores(&scores, &path).unwrap();
        let back = load_scores(&path).unwrap();
        assert_eq!(scores, back);
    }

    #[test]
    fn fold_aggregation_matches_table_style() {
        // five folds with the published accuracy column
        let accs = [90.06, 92.35, 89.06, 91.48, 92.35];
        let folds: Vec<MetricsReport> = accs
            .iter()
            .map(|a| MetricsReport {
                accuracy: *a,
                apcer: 0.0,
                bpcer: 0.0,
                acer: 0.0,
                eer: 0.0,
                eer_threshold: 0.5,
                tdr_at_fdr: 0.0,
                fdr_percent: 1.0,
                operating_threshold: 0.5,
                per_attack_type_apcer: None,
            })
            .collect();
        let agg = aggregate_folds(&folds).unwrap();
        assert!((agg.mean.accuracy - 91.06).abs() < 1e-9);
        assert!((agg.std.accuracy - 1.3042).abs() < 1e-3);
        assert_eq!(agg.display["accuracy"], "91.06 ± 1.30");
    }
}
