//! The pipeline commands behind the CLI. Each one reads an
//! [`ExperimentConfig`], writes CSV/JSON artifacts under `out_dir` and is
//! reproducible byte-for-byte from the config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::SchemeKind;
use crate::data::Dataset;
use crate::distill::{
    label_disagreement_rate, t_stddev, train_student, train_teacher, ComposedStream,
    MetricCollector, NoObserver, RiskReport,
};
use crate::error::{KdError, Result};
use crate::metrics::{eval_test_loss, pearson, score_probs, CorrelationReport};
use crate::nn::{checkpoint, softmax_rows, Model};
use crate::proposition::{
    closed_form_gap_sq, estimate_gap_moments, exact_gap_moments, true_distilled_risk,
    SyntheticWorld, ENUMERATION_LIMIT,
};
use crate::rng::{rng_from, tag};

use super::config::{ExactMethod, ExperimentConfig, SchemeEntry};

/// Receives human-readable progress lines.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| KdError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| KdError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_teacher(cfg: &ExperimentConfig) -> Result<Model> {
    let path = cfg.teacher_checkpoint();
    if !path.exists() {
        return Err(KdError::MissingTeacher(path));
    }
    checkpoint::load(&path)
}

fn init_model(arch: &super::config::ArchSpec, data: &Dataset, seed: u64, role: &str) -> Result<Model> {
    let mut rng = rng_from(seed, &[tag(role)]);
    Model::cnn(&arch.cnn(data), &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub checkpoint: PathBuf,
    pub epoch_losses: Vec<f64>,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Trains the teacher with plain cross-entropy and writes its checkpoint
/// and `teacher_metrics.json`.
pub fn cmd_train_teacher(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<TeacherSummary> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load()?;
    let model = init_model(&cfg.teacher.arch, &train, cfg.teacher.training.seed, "teacher")?;
    progress(&format!(
        "training teacher ({} parameters) on {} samples",
        model.param_count(),
        train.len()
    ));
    let (model, epoch_losses) = train_teacher(model, &train, &cfg.teacher.training)?;
    let probs = softmax_rows(&model.predict_chunked(train.images(), 256)?, 1.0)?;
    let train_score = score_probs(&probs, train.labels())?;
    let test_score = eval_test_loss(&model, &test)?;
    let path = cfg.teacher_checkpoint();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| KdError::io(dir, e))?;
    }
    checkpoint::save(&model, &path)?;
    let summary = TeacherSummary {
        checkpoint: path,
        epoch_losses,
        train_loss: train_score.loss,
        train_accuracy: train_score.accuracy,
        test_loss: test_score.loss,
        test_accuracy: test_score.accuracy,
    };
    write_json(&cfg.out_dir.join("teacher_metrics.json"), &summary)?;
    progress(&format!(
        "teacher: train acc {:.4}, test acc {:.4}",
        summary.train_accuracy, summary.test_accuracy
    ));
    Ok(summary)
}

/// Distils one student with `cfg.distill` and writes `student.dgkd` and
/// `distill_history.json`.
pub fn cmd_distill(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<Vec<RiskReport>> {
    cfg.validate()?;
    let teacher = load_teacher(cfg)?;
    let (train, test) = cfg.dataset.load()?;
    let student = init_model(&cfg.student, &train, cfg.distill.seed, "student")?;
    progress(&format!(
        "distilling for {} epochs with {:?}",
        cfg.distill.total_epochs(),
        cfg.distill.scheme.kind
    ));
    let (student, history) = train_student(&teacher, student, &train, &test, &cfg.distill, &mut NoObserver)?;
    checkpoint::save(&student, &cfg.out_dir.join("student.dgkd"))?;
    write_json(&cfg.out_dir.join("distill_history.json"), &history)?;
    if let Some(last) = history.last() {
        progress(&format!(
            "student: test loss {:.4}, test acc {:.4}",
            last.test_loss, last.test_accuracy
        ));
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scheme: String,
    pub seed: u64,
    pub t_stddev: f64,
    pub vbar: f64,
    pub rbar: f64,
    pub windows: usize,
    /// Teacher disagreement with the mixed label; only for mixing schemes.
    pub label_disagreement: Option<f64>,
}

/// Computes T. stddev, v̄ and r̄ of the frozen teacher for every
/// `(scheme, seed)` cell without training a student; writes `tstddev.csv`.
pub fn cmd_tstddev(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    if cfg.schemes.is_empty() {
        return Err(KdError::invalid("no schemes configured"));
    }
    let teacher = load_teacher(cfg)?;
    let (train, _) = cfg.dataset.load()?;
    let mut rows = Vec::new();
    for entry in &cfg.schemes {
        for &seed in &cfg.seeds {
            let stream = ComposedStream::new(&train, entry.scheme.clone(), cfg.distill.batch_size, seed)?;
            let (ts, cov) = t_stddev(&teacher, &stream, entry.pick.as_ref(), cfg.window_size, cfg.metric_epochs)?;
            let label_disagreement = match entry.scheme.kind {
                SchemeKind::Mixup | SchemeKind::Cutmix => {
                    let batches = stream
                        .epoch_batches(0)?
                        .iter()
                        .enumerate()
                        .map(|(b, idx)| stream.compose(0, b, idx))
                        .collect::<Result<Vec<_>>>()?;
                    Some(label_disagreement_rate(&teacher, &batches)?)
                }
                _ => None,
            };
            progress(&format!("{} seed {seed}: t_stddev {:.6e}", entry.name, ts.m_bar));
            rows.push(MetricRow {
                scheme: entry.name.clone(),
                seed,
                t_stddev: ts.m_bar,
                vbar: cov.vbar()?,
                rbar: cov.rbar()?,
                windows: ts.windows,
                label_disagreement,
            });
        }
    }
    let mut csv = String::from("scheme,seed,t_stddev,vbar,rbar,windows,label_disagreement\n");
    for r in &rows {
        let dis = r.label_disagreement.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{},{},{}", r.scheme, r.seed, r.t_stddev, r.vbar, r.rbar, r.windows, dis)
            .expect("writing to a String");
    }
    write_file(&cfg.out_dir.join("tstddev.csv"), &csv)?;
    Ok(rows)
}

/// One `(scheme, seed)` cell of a ranking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub scheme: String,
    pub t_stddev: f64,
    pub vbar: f64,
    pub rbar: f64,
    pub student_test_loss: f64,
    pub student_test_acc: f64,
    pub seed: u64,
}

pub const RANK_CSV_HEADER: &str = "scheme,t_stddev,vbar,rbar,student_test_loss,student_test_acc,seed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub seeds: usize,
    pub t_stddev: MeanStd,
    pub vbar: MeanStd,
    pub rbar: MeanStd,
    pub student_test_loss: MeanStd,
    pub student_test_acc: MeanStd,
}

/// A correlation that may be undefined (too few schemes, constant column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutcome {
    pub x: String,
    pub y: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<CorrelationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

impl CorrelationOutcome {
    fn compute(x: &str, y: &str, xs: &[f64], ys: &[f64]) -> Result<Self> {
        let (report, undefined) = match pearson(xs, ys) {
            Ok(r) => (Some(r), None),
            Err(e @ (KdError::NotEnoughData(_) | KdError::UndefinedCorrelation(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        Ok(Self {
            x: x.into(),
            y: y.into(),
            report,
            undefined,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub schemes: Vec<SchemeSummary>,
    /// Pearson correlations of each metric's scheme means against the mean
    /// student test loss.
    pub correlations: Vec<CorrelationOutcome>,
}

/// Summarises rank rows per scheme (in first-appearance order) and
/// correlates the scheme means.
pub fn summarize_ranking(rows: &[RankRow]) -> Result<RankSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RankRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.scheme.as_str()) {
            order.push(&r.scheme);
        }
        groups.entry(&r.scheme).or_default().push(r);
    }
    let schemes: Vec<SchemeSummary> = order
        .iter()
        .map(|name| {
            let g = &groups[name];
            let col = |f: fn(&RankRow) -> f64| MeanStd::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            SchemeSummary {
                scheme: name.to_string(),
                seeds: g.len(),
                t_stddev: col(|r| r.t_stddev),
                vbar: col(|r| r.vbar),
                rbar: col(|r| r.rbar),
                student_test_loss: col(|r| r.student_test_loss),
                student_test_acc: col(|r| r.student_test_acc),
            }
        })
        .collect();
    let loss: Vec<f64> = schemes.iter().map(|s| s.student_test_loss.mean).collect();
    let metric = |f: fn(&SchemeSummary) -> f64| schemes.iter().map(f).collect::<Vec<f64>>();
    let correlations = vec![
        CorrelationOutcome::compute("t_stddev", "student_test_loss", &metric(|s| s.t_stddev.mean), &loss)?,
        CorrelationOutcome::compute("vbar", "student_test_loss", &metric(|s| s.vbar.mean), &loss)?,
        CorrelationOutcome::compute("rbar", "student_test_loss", &metric(|s| s.rbar.mean), &loss)?,
    ];
    Ok(RankSummary {
        schemes,
        correlations,
    })
}

/// Distils one student for a ranking cell, collecting the metrics from the
/// teacher outputs on the same composed stream the student trains on.
pub fn rank_cell(
    cfg: &ExperimentConfig,
    teacher: &Model,
    train: &Dataset,
    test: &Dataset,
    entry: &SchemeEntry,
    seed: u64,
) -> Result<RankRow> {
    let mut distill = cfg.distill.clone();
    distill.scheme = entry.scheme.clone();
    distill.pick = entry.pick.clone();
    distill.seed = seed;
    let student = init_model(&cfg.student, train, seed, "student")?;
    let mut collector = MetricCollector::new(cfg.window_size, teacher.num_classes(), cfg.metric_epochs)?;
    let (_, history) = train_student(teacher, student, train, test, &distill, &mut collector)?;
    let last = history
        .last()
        .ok_or_else(|| KdError::invalid("ranking needs at least one distillation epoch"))?;
    Ok(RankRow {
        scheme: entry.name.clone(),
        t_stddev: collector.tstddev()?.m_bar,
        vbar: collector.covariance.vbar()?,
        rbar: collector.covariance.rbar()?,
        student_test_loss: last.test_loss,
        student_test_acc: last.test_accuracy,
        seed,
    })
}

pub fn ranking_csv(rows: &[RankRow]) -> String {
    let mut csv = format!("{RANK_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.scheme, r.t_stddev, r.vbar, r.rbar, r.student_test_loss, r.student_test_acc, r.seed
        )
        .expect("writing to a String");
    }
    csv
}

/// Runs every `(scheme, seed)` cell, then writes `rank_da.csv` and
/// `rank_da_summary.json`.
pub fn cmd_rank_da(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<(Vec<RankRow>, RankSummary)> {
    cfg.validate()?;
    if cfg.schemes.is_empty() {
        return Err(KdError::invalid("ranking needs at least one scheme"));
    }
    let teacher = load_teacher(cfg)?;
    let (train, test) = cfg.dataset.load()?;
    let mut rows = Vec::new();
    for entry in &cfg.schemes {
        for &seed in &cfg.seeds {
            let row = rank_cell(cfg, &teacher, &train, &test, entry, seed)?;
            progress(&format!(
                "{} seed {seed}: t_stddev {:.6e}, test loss {:.4}, test acc {:.4}",
                row.scheme, row.t_stddev, row.student_test_loss, row.student_test_acc
            ));
            rows.push(row);
        }
    }
    let summary = summarize_ranking(&rows)?;
    write_file(&cfg.out_dir.join("rank_da.csv"), &ranking_csv(&rows))?;
    write_json(&cfg.out_dir.join("rank_da_summary.json"), &summary)?;
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropRow {
    pub rho: f64,
    pub n: usize,
    pub mean_delta: f64,
    pub se_delta: f64,
    pub mean_delta_sq: f64,
    pub se_delta_sq: f64,
    pub exact_mean: f64,
    pub exact_sq: f64,
    /// `|Var - (variance term + covariance term)|`; only when enumerated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition_error: Option<f64>,
}

pub const PROP_CSV_HEADER: &str = "rho,N,mean_delta,se_delta,mean_delta_sq,se_delta_sq,exact_mean,exact_sq";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropReport {
    pub true_risk: f64,
    pub q_variance: f64,
    pub rows: Vec<PropRow>,
    pub checks: Vec<PropCheck>,
}

impl PropReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn prop_csv(rows: &[PropRow]) -> String {
    let mut csv = format!("{PROP_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.rho, r.n, r.mean_delta, r.se_delta, r.mean_delta_sq, r.se_delta_sq, r.exact_mean, r.exact_sq
        )
        .expect("writing to a String");
    }
    csv
}

/// Runs the correlated-sampling lab over the configured `rho` grid (sorted
/// ascending) and evaluates its checks. Writes nothing.
pub fn prop_report(cfg: &super::config::PropConfig) -> Result<PropReport> {
    if cfg.rhos.is_empty() {
        return Err(KdError::invalid("rho grid is empty"));
    }
    let world = SyntheticWorld::random(cfg.support, cfg.classes, cfg.world_seed)?;
    let mut rhos = cfg.rhos.clone();
    if rhos.iter().any(|r| !r.is_finite()) {
        return Err(KdError::invalid("rho values must be finite"));
    }
    rhos.sort_by(f64::total_cmp);
    let enumerable = (cfg.support as u128)
        .checked_pow(cfg.n as u32)
        .is_some_and(|s| s <= ENUMERATION_LIMIT);
    let enumerate = match cfg.exact_method {
        ExactMethod::Enumerate => true,
        ExactMethod::ClosedForm => false,
        ExactMethod::Auto => enumerable,
    };
    let mut rows = Vec::with_capacity(rhos.len());
    for (i, &rho) in rhos.iter().enumerate() {
        let est = estimate_gap_moments(&world, cfg.n, rho, cfg.repetitions, crate::rng::derive_seed(cfg.seed, &[i as u64]))?;
        let (exact_mean, exact_sq, decomposition_error) = if enumerate {
            let e = exact_gap_moments(&world, cfg.n, rho)?;
            let err = (e.variance - e.variance_term - e.covariance_term).abs();
            (e.mean_delta, e.mean_delta_sq, Some(err))
        } else {
            (0.0, closed_form_gap_sq(&world, cfg.n, rho)?, None)
        };
        rows.push(PropRow {
            rho,
            n: cfg.n,
            mean_delta: est.mean_delta,
            se_delta: est.se_delta,
            mean_delta_sq: est.mean_delta_sq,
            se_delta_sq: est.se_delta_sq,
            exact_mean,
            exact_sq,
            decomposition_error,
        });
    }

    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        checks.push(PropCheck {
            name: name.into(),
            passed,
            detail,
        })
    };
    if rows.len() > 1 {
        let pairs = || rows.windows(2);
        check(
            "exact_sq_increasing",
            pairs().all(|w| w[1].exact_sq > w[0].exact_sq),
            "exact E[Δ²] strictly increasing in rho".into(),
        );
        check(
            "mc_sq_increasing",
            pairs().all(|w| w[1].mean_delta_sq > w[0].mean_delta_sq),
            "Monte Carlo E[Δ²] strictly increasing in rho".into(),
        );
        let spread = rows
            .iter()
            .map(|r| (r.exact_mean - rows[0].exact_mean).abs())
            .fold(0.0, f64::max);
        check(
            "exact_mean_flat",
            spread <= 1e-12,
            format!("exact E[Δ] spread across rho {spread:e}"),
        );
    }
    let worst = rows
        .iter()
        .map(|r| (r.mean_delta - r.exact_mean).abs() / r.se_delta.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    check(
        "mc_mean_within_3se",
        worst <= 3.0,
        format!("largest |E[Δ] estimate - exact| is {worst:.3} standard errors"),
    );
    if enumerate {
        let err = rows
            .iter()
            .filter_map(|r| r.decomposition_error)
            .fold(0.0, f64::max);
        check(
            "variance_decomposition",
            err <= 1e-12,
            format!("largest decomposition error {err:e}"),
        );
    }
    Ok(PropReport {
        true_risk: true_distilled_risk(&world),
        q_variance: world.q_variance(),
        rows,
        checks,
    })
}

/// [`prop_report`] plus `prop_check.csv` and `prop_check.json`.
pub fn cmd_prop_check(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<PropReport> {
    let report = prop_report(&cfg.prop)?;
    write_file(&cfg.out_dir.join("prop_check.csv"), &prop_csv(&report.rows))?;
    write_json(&cfg.out_dir.join("prop_check.json"), &report)?;
    for c in &report.checks {
        progress(&format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    Ok(report)
}

/// Reads a ranking CSV, averages the `x` and `y` columns per scheme and
/// correlates the scheme means; writes `correlation.json`.
pub fn cmd_correlate(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<CorrelationOutcome> {
    let path = cfg
        .correlate
        .input
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("rank_da.csv"));
    let text = std::fs::read_to_string(&path).map_err(|e| KdError::io(&path, e))?;
    let (xs, ys) = scheme_means(&text, &cfg.correlate.x, &cfg.correlate.y)?;
    let outcome = CorrelationOutcome::compute(&cfg.correlate.x, &cfg.correlate.y, &xs, &ys)?;
    write_json(&cfg.out_dir.join("correlation.json"), &outcome)?;
    match (&outcome.report, &outcome.undefined) {
        (Some(r), _) => progress(&format!("r = {:.4}, p = {:.4e} over {} schemes", r.r, r.p_value, r.n)),
        (_, Some(why)) => progress(&format!("correlation undefined: {why}")),
        _ => {}
    }
    Ok(outcome)
}

/// Per-scheme means of two numeric columns of a CSV with a `scheme` column.
pub fn scheme_means(csv: &str, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| KdError::invalid("empty CSV"))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| KdError::invalid(format!("CSV has no column {name:?}")))
    };
    let (ci, xi, yi) = (col("scheme")?, col(x)?, col(y)?);
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(KdError::invalid(format!("CSV row {} has {} fields", lineno + 2, fields.len())));
        }
        let parse = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| KdError::invalid(format!("CSV row {}: {:?} is not a number", lineno + 2, fields[i])))
        };
        let (vx, vy) = (parse(xi)?, parse(yi)?);
        let name = fields[ci].to_string();
        if !sums.contains_key(&name) {
            order.push(name.clone());
        }
        let e = sums.entry(name).or_insert((0.0, 0.0, 0));
        e.0 += vx;
        e.1 += vy;
        e.2 += 1;
    }
    Ok(order
        .iter()
        .map(|n| {
            let (sx, sy, k) = sums[n];
            (sx / k as f64, sy / k as f64)
        })
        .unzip())
}
