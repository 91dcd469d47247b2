//! L1 evaluation protocol, per-object-count reports and the two ablations.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{ObjectSpec, ScenarioRecord};
use crate::gmm::SamplerConfig;
use crate::laygen::{generate_range, GenConfig};
use crate::net::KnollingModel;
use crate::scalar::Real;

/// Object counts reported in the comparison tables.
pub const REPORT_COUNTS: [usize; 5] = [2, 4, 6, 8, 10];
/// Scenarios per object count in the desk-scale test sets.
pub const TEST_SET_SIZE: usize = 2_000;

/// Mean absolute coordinate error over all `2n` coordinates.
pub fn l1_error(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).abs() + (p[1] - t[1]).abs())
        .sum();
    Ok(sum / (2 * truth.len()) as f64)
}

/// Anything that maps ordered object lists to target centers.
pub trait Predictor: Sync {
    fn id(&self) -> String;
    fn predict(&self, objects: &[&[ObjectSpec<f64>]]) -> Result<Vec<Vec<[f64; 2]>>>;
}

impl<T: Real> Predictor for KnollingModel<T> {
    fn id(&self) -> String {
        self.kind().to_string()
    }

    fn predict(&self, objects: &[&[ObjectSpec<f64>]]) -> Result<Vec<Vec<[f64; 2]>>> {
        self.predict_batch(objects, &SamplerConfig::deterministic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ErrorStats {
    /// Population statistics of `errors`.
    pub fn from_errors(n: usize, errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let count = errors.len();
        let mean = errors.iter().sum::<f64>() / count as f64;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / count as f64;
        Ok(Self {
            n,
            count,
            mean,
            std: var.sqrt(),
            min: errors.iter().copied().fold(f64::INFINITY, f64::min),
            max: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub test_size: usize,
    pub rows: Vec<ErrorStats>,
}

impl EvalReport {
    /// Unweighted mean of the per-count means.
    pub fn overall_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.mean).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn row(&self, n: usize) -> Option<&ErrorStats> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("model,n,count,mean,std,min,max\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
                self.model_id, r.n, r.count, r.mean, r.std, r.min, r.max
            );
        }
        s
    }

    /// One block per model, one column per object count.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:<5}", "model", "stat");
        for r in &self.rows {
            let _ = write!(s, " {:>10}", format!("n={}", r.n));
        }
        s.push('\n');
        let stats: [(&str, fn(&ErrorStats) -> f64); 4] = [
            ("MEAN", |r| r.mean),
            ("STD", |r| r.std),
            ("MIN", |r| r.min),
            ("MAX", |r| r.max),
        ];
        for (i, (name, get)) in stats.iter().enumerate() {
            let label = if i == 0 { self.model_id.as_str() } else { "" };
            let _ = write!(s, "{label:<12} {name:<5}");
            for r in &self.rows {
                let _ = write!(s, " {:>10.2E}", get(r));
            }
            s.push('\n');
        }
        s
    }
}

/// A test set for one object count.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub n: usize,
    pub records: Vec<ScenarioRecord<f64>>,
}

/// `per_n` fresh scenarios for each count in `counts`, seeded independently of
/// any training stream through `seed`.
pub fn make_test_sets(counts: &[usize], per_n: usize, base: &GenConfig, seed: u64) -> Result<Vec<TestSet>> {
    counts
        .iter()
        .map(|&n| {
            let cfg = GenConfig {
                n_range: (n, n),
                seed: seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                ..*base
            };
            Ok(TestSet {
                n,
                records: generate_range(0, per_n, &cfg)?,
            })
        })
        .collect()
}

/// Per-scenario L1 errors, in record order.
pub fn scenario_errors<P: Predictor + ?Sized>(model: &P, records: &[ScenarioRecord<f64>]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = records
        .par_chunks(128)
        .map(|chunk| {
            let objects: Vec<&[ObjectSpec<f64>]> = chunk.iter().map(|r| r.objects.as_slice()).collect();
            let pred = model.predict(&objects)?;
            chunk
                .iter()
                .zip(&pred)
                .map(|(r, p)| l1_error(p, &r.targets))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Per-scenario errors for every test set alongside the aggregate report.
pub fn evaluate_detailed<P: Predictor + ?Sized>(model: &P, tests: &[TestSet]) -> Result<(EvalReport, Vec<(usize, Vec<f64>)>)> {
    if tests.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    let mut dump = Vec::new();
    for t in tests {
        let errs = scenario_errors(model, &t.records)?;
        rows.push(ErrorStats::from_errors(t.n, &errs)?);
        dump.push((t.n, errs));
    }
    Ok((
        EvalReport {
            model_id: model.id(),
            test_size: tests.iter().map(|t| t.records.len()).sum(),
            rows,
        },
        dump,
    ))
}

/// Deterministic (zero-temperature) per-count report.
pub fn evaluate_suite<P: Predictor + ?Sized>(model: &P, tests: &[TestSet]) -> Result<EvalReport> {
    evaluate_detailed(model, tests).map(|(r, _)| r)
}

/// Writes `n,index,l1` lines.
pub fn write_errors<W: Write>(dump: &[(usize, Vec<f64>)], w: &mut W) -> Result<()> {
    writeln!(w, "n,index,l1")?;
    for (n, errs) in dump {
        for (i, e) in errs.iter().enumerate() {
            writeln!(w, "{n},{i},{e:?}")?;
        }
    }
    Ok(())
}

/// Rebuilds a report from a `write_errors` dump.
pub fn report_from_errors<R: BufRead>(model_id: &str, r: R) -> Result<EvalReport> {
    let mut groups: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut f = line.split(',');
        let n: usize = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("bad n"))?;
        let e: f64 = f.nth(1).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("bad l1"))?;
        match groups.iter_mut().find(|g| g.0 == n) {
            Some(g) => g.1.push(e),
            None => groups.push((n, vec![e])),
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(EvalReport {
        model_id: model_id.to_string(),
        test_size: groups.iter().map(|g| g.1.len()).sum(),
        rows: groups
            .iter()
            .map(|(n, e)| ErrorStats::from_errors(*n, e))
            .collect::<Result<_>>()?,
    })
}

/// One trained model per nested prefix of `data`, all scored on `tests`.
/// `train` receives the prefix and returns the fitted model.
pub fn ablation_dataset_size<P, F>(
    data: &[ScenarioRecord<f64>],
    sizes: &[usize],
    tests: &[TestSet],
    mut train: F,
) -> Result<Vec<(usize, EvalReport)>>
where
    P: Predictor,
    F: FnMut(&[ScenarioRecord<f64>]) -> Result<P>,
{
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes
        .into_iter()
        .map(|size| {
            if size == 0 || size > data.len() {
                return Err(Error::Config(format!("subset size {size} outside 1..={}", data.len())));
            }
            let model = train(&data[..size])?;
            Ok((size, evaluate_suite(&model, tests)?))
        })
        .collect()
}

/// Paired direct-vs-curriculum results, one report per seed and arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainAblation {
    pub seeds: Vec<u64>,
    pub direct: Vec<EvalReport>,
    pub finetuned: Vec<EvalReport>,
}

impl PretrainAblation {
    pub fn direct_mean(&self) -> f64 {
        mean(self.direct.iter().map(EvalReport::overall_mean))
    }

    pub fn finetuned_mean(&self) -> f64 {
        mean(self.finetuned.iter().map(EvalReport::overall_mean))
    }

    pub fn table(&self) -> String {
        let mut s = String::from("seed       direct   finetuned\n");
        for (i, seed) in self.seeds.iter().enumerate() {
            let _ = writeln!(
                s,
                "{seed:<6} {:>10.3E} {:>11.3E}",
                self.direct[i].overall_mean(),
                self.finetuned[i].overall_mean()
            );
        }
        let _ = writeln!(s, "{:<6} {:>10.3E} {:>11.3E}", "mean", self.direct_mean(), self.finetuned_mean());
        s
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Trains both arms for every seed. `direct` and `curriculum` get the same
/// data and seed and must produce models of identical size.
pub fn ablation_pretraining<P, D, C>(
    data: &[ScenarioRecord<f64>],
    seeds: &[u64],
    tests: &[TestSet],
    mut direct: D,
    mut curriculum: C,
) -> Result<PretrainAblation>
where
    P: Predictor,
    D: FnMut(&[ScenarioRecord<f64>], u64) -> Result<P>,
    C: FnMut(&[ScenarioRecord<f64>], u64) -> Result<P>,
{
    let mut out = PretrainAblation {
        seeds: seeds.to_vec(),
        direct: Vec::new(),
        finetuned: Vec::new(),
    };
    for &seed in seeds {
        out.direct.push(evaluate_suite(&direct(data, seed)?, tests)?);
        out.finetuned.push(evaluate_suite(&curriculum(data, seed)?, tests)?);
    }
    Ok(out)
}
