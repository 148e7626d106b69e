//! Identity similarity score (IDS) and failure rate (FR) with its four
//! sub-modes: background mismatch (BM), person count error (PCE), body
//! distortion (BD) and background leakage (BL).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{match_faces, FaceSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureFlags {
    #[serde(default)]
    pub bm: bool,
    #[serde(default)]
    pub pce: bool,
    #[serde(default)]
    pub bd: bool,
    #[serde(default)]
    pub bl: bool,
}

impl FailureFlags {
    pub fn any(&self) -> bool {
        self.bm || self.pce || self.bd || self.bl
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub sample_id: String,
    pub flags: FailureFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub fr: f64,
    pub bm: f64,
    pub pce: f64,
    pub bd: f64,
    pub bl: f64,
    /// Mean IDS over samples where it is defined.
    pub ids_mean: Option<f64>,
    pub n_ids: usize,
    /// Samples left out of `ids_mean` because the source had no faces.
    pub n_ids_excluded: usize,
}

impl MetricsReport {
    pub fn sub_rates(&self) -> [f64; 4] {
        [self.bm, self.pce, self.bd, self.bl]
    }

    pub fn satisfies_union_bound(&self) -> bool {
        union_bound_holds(self.fr, self.sub_rates(), 1.0, 1e-12)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = self.ids_mean.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        write!(
            f,
            "IDS {ids}  BM {:.2}%  PCE {:.2}%  BD {:.2}%  BL {:.2}%  FR {:.2}%  (n={})",
            self.bm * 100.0,
            self.pce * 100.0,
            self.bd * 100.0,
            self.bl * 100.0,
            self.fr * 100.0,
            self.n_samples
        )
    }
}

/// `max(sub) <= fr <= min(cap, sum(sub))`, with slack `tol`. `cap` is 1 for
/// fractions and 100 for percentages.
pub fn union_bound_holds(fr: f64, sub: [f64; 4], cap: f64, tol: f64) -> bool {
    let max = sub.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = sub.iter().sum();
    max <= fr + tol && fr <= cap.min(sum) + tol
}

/// Matched similarity mass divided by the larger face count.
pub fn ids_score(gen_faces: &FaceSet, src_faces: &FaceSet) -> Result<f64> {
    if src_faces.is_empty() {
        return Err(Error::UndefinedMetric("source image has no faces".into()));
    }
    if gen_faces.is_empty() {
        return Ok(0.0);
    }
    let m = match_faces(gen_faces, src_faces)?;
    Ok(m.total / gen_faces.len().max(src_faces.len()) as f64)
}

/// `per_sample_ids` is either empty or aligned with `records`; `None` marks a
/// sample whose IDS is undefined.
pub fn aggregate(records: &[FailureRecord], per_sample_ids: &[Option<f64>]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptyRun);
    }
    if !per_sample_ids.is_empty() && per_sample_ids.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} IDS values for {} records",
            per_sample_ids.len(),
            records.len()
        )));
    }
    let mut ids_seen = HashSet::new();
    for r in records {
        if !ids_seen.insert(r.sample_id.as_str()) {
            return Err(Error::DuplicateSample(r.sample_id.clone()));
        }
    }
    let n = records.len() as f64;
    let rate = |pred: fn(&FailureFlags) -> bool| records.iter().filter(|r| pred(&r.flags)).count() as f64 / n;

    let defined: Vec<f64> = per_sample_ids.iter().flatten().copied().collect();
    let ids_mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MetricsReport {
        n_samples: records.len(),
        fr: rate(FailureFlags::any),
        bm: rate(|f| f.bm),
        pce: rate(|f| f.pce),
        bd: rate(|f| f.bd),
        bl: rate(|f| f.bl),
        ids_mean,
        n_ids: defined.len(),
        n_ids_excluded: per_sample_ids.len() - defined.len(),
    })
}

/// Run file: `{"samples":[{"id":..,"flags":{..},"gen_faces":FILE,"src_faces":FILE}]}`.
///
/// Face file paths are resolved relative to the run file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFile {
    pub samples: Vec<RunSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSample {
    pub id: String,
    #[serde(default)]
    pub flags: FailureFlags,
    pub gen_faces: PathBuf,
    pub src_faces: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleScore {
    pub id: String,
    pub ids: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub samples: Vec<SampleScore>,
}

pub fn evaluate_run(run_path: &Path) -> Result<Evaluation> {
    let text = std::fs::read_to_string(run_path).map_err(|e| Error::io(run_path, e))?;
    let run: RunFile = serde_json::from_str(&text)?;
    let base = run_path.parent().unwrap_or(Path::new("."));

    let mut records = Vec::with_capacity(run.samples.len());
    let mut scores = Vec::with_capacity(run.samples.len());
    for s in &run.samples {
        let gen = FaceSet::read(base.join(&s.gen_faces))?;
        let src = FaceSet::read(base.join(&s.src_faces))?;
        let ids = match ids_score(&gen, &src) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        records.push(FailureRecord {
            sample_id: s.id.clone(),
            flags: s.flags,
        });
        scores.push(SampleScore { id: s.id.clone(), ids });
    }
    let per_sample: Vec<Option<f64>> = scores.iter().map(|s| s.ids).collect();
    Ok(Evaluation {
        report: aggregate(&records, &per_sample)?,
        samples: scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, bm: bool, pce: bool, bd: bool, bl: bool) -> FailureRecord {
        FailureRecord {
            sample_id: id.into(),
            flags: FailureFlags { bm, pce, bd, bl },
        }
    }

    fn faces(v: &[&[f64]]) -> FaceSet {
        FaceSet::from_embeddings(v.iter().map(|e| e.to_vec()).collect()).unwrap()
    }

    #[test]
    fn ids_fixtures() {
        let two = faces(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(ids_score(&two, &two).unwrap(), 1.0);

        // cosines 4/5 and 3/5 against e1, e2; the third face is orthogonal to both
        let src = faces(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
        let gen = faces(&[&[4.0, 0.0, 3.0, 0.0], &[0.0, 3.0, 4.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
        let v = ids_score(&gen, &src).unwrap();
        assert!((v - 1.4 / 3.0).abs() < 1e-15, "{v}");

        assert_eq!(ids_score(&FaceSet::default(), &two).unwrap(), 0.0);
        assert!(matches!(ids_score(&two, &FaceSet::default()), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aggregate_fixtures() {
        let r = aggregate(
            &[rec("a", true, true, false, false), rec("b", false, false, false, false), rec("c", false, false, true, false)],
            &[],
        )
        .unwrap();
        assert_eq!(r.fr, 2.0 / 3.0);
        assert_eq!((r.bm, r.pce, r.bd, r.bl), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0));
        assert_eq!(r.ids_mean, None);

        let clear = aggregate(&[rec("a", false, false, false, false), rec("b", false, false, false, false)], &[]).unwrap();
        assert_eq!(clear.fr, 0.0);
        assert_eq!(clear.sub_rates(), [0.0; 4]);

        let all = aggregate(&[rec("x", true, true, true, true)], &[Some(0.5)]).unwrap();
        assert_eq!(all.fr, 1.0);
        assert_eq!(all.sub_rates(), [1.0; 4]);
        assert!(all.satisfies_union_bound());
        assert_eq!(all.ids_mean, Some(0.5));
    }

    #[test]
    fn aggregate_errors_and_exclusions() {
        assert!(matches!(aggregate(&[], &[]), Err(Error::EmptyRun)));
        assert!(matches!(
            aggregate(&[rec("a", false, false, false, false), rec("a", true, false, false, false)], &[]),
            Err(Error::DuplicateSample(_))
        ));
        assert!(aggregate(&[rec("a", false, false, false, false)], &[Some(1.0), None]).is_err());
        let r = aggregate(
            &[rec("a", false, false, false, false), rec("b", false, false, false, false), rec("c", false, false, false, false)],
            &[Some(0.2), None, Some(0.6)],
        )
        .unwrap();
        assert!((r.ids_mean.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!((r.n_ids, r.n_ids_excluded), (2, 1));
    }

    #[test]
    fn display_renders_percentages() {
        let r = aggregate(&[rec("a", true, false, false, false), rec("b", false, false, false, false), rec("c", false, false, false, false)], &[Some(0.55), None, None]).unwrap();
        assert_eq!(
            r.to_string(),
            "IDS 0.55  BM 33.33%  PCE 0.00%  BD 0.00%  BL 0.00%  FR 33.33%  (n=3)"
        );
    }

    proptest! {
        #[test]
        fn aggregate_is_order_invariant(flags in prop::collection::vec(any::<[bool; 4]>(), 1..30), rot in 0usize..30) {
            let records: Vec<_> = flags
                .iter()
                .enumerate()
                .map(|(i, f)| rec(&i.to_string(), f[0], f[1], f[2], f[3]))
                .collect();
            let mut shuffled = records.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = aggregate(&records, &[]).unwrap();
            let b = aggregate(&shuffled, &[]).unwrap();
            prop_assert_eq!(a.n_samples, b.n_samples);
            for (x, y) in a.sub_rates().iter().chain([&a.fr]).zip(b.sub_rates().iter().chain([&b.fr])) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }

        #[test]
        fn ids_is_bounded(
            gen in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 0..5),
            src in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..5),
        ) {
            prop_assume!(gen.iter().chain(&src).all(|v| crate::numerics::norm(v) > 1e-6));
            let g = FaceSet::from_embeddings(gen).unwrap();
            let s = FaceSet::from_embeddings(src).unwrap();
            let v = ids_score(&g, &s).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
            let self_score = ids_score(&s, &s).unwrap();
            prop_assert!((self_score - 1.0).abs() < 1e-12);
        }
    }
}
