//! End-to-end study runner: generate a preset dataset, run the reference
//! analyses and the full selection pipeline, and write every result table
//! as CSV into one output directory, together with a JSON manifest and
//! stage timings. Everything written is a pure function of (kind, scale,
//! seed, settings).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::baseline::{
    baseline_csv, importance_csv, run_baseline_complete, run_baseline_completecase,
    BaselineReport,
};
use super::presets::{generate_study_data, StudyData, StudyKind, StudyScale, StudyTruth};
use crate::data::{summarize_missingness, write_genotypes};
use crate::error::Result;
use crate::forest::{run_cycles, CycleConfig, ForestParams, LambdaPolicy, SelectionReport};
use crate::inference::{association_csv, association_table, coefficient_table_csv};
use crate::mirem::{EmFit, TuneConfig, TuneMethod};
use crate::seed::{derive_rng, Tag};
use rand::Rng;

/// One study request. `cycle` carries every pipeline knob; `tau`, `lambda`
/// and a seed derived from `seed` are written into it by the runner, so the
/// fields here are authoritative.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub which: StudyKind,
    pub scale: StudyScale,
    pub seed: u64,
    pub tau: usize,
    pub lambda: LambdaPolicy,
    pub out_dir: PathBuf,
    pub cycle: CycleConfig,
}

impl StudyConfig {
    /// Study defaults: ten cycles; no ridge for the sparse study, a tuned
    /// ridge for the polygenic one; desk scale trims the per-equation
    /// forests to 150 trees so a run finishes in CI time.
    pub fn new(
        which: StudyKind,
        scale: StudyScale,
        seed: u64,
        out_dir: impl Into<PathBuf>,
    ) -> StudyConfig {
        let lambda = match which {
            StudyKind::Sim1 => LambdaPolicy::Fixed(0.0),
            StudyKind::Sim2 => LambdaPolicy::Tuned(TuneConfig::default()),
        };
        let forest = ForestParams {
            ntr: match scale {
                StudyScale::Full => 500,
                StudyScale::Desk => 150,
            },
            ..Default::default()
        };
        StudyConfig {
            which,
            scale,
            seed,
            tau: 10,
            lambda,
            out_dir: out_dir.into(),
            cycle: CycleConfig {
                forest,
                ..Default::default()
            },
        }
    }
}

/// In-memory results of a finished study; the same content is on disk under
/// `out_dir`.
#[derive(Debug)]
pub struct StudyBundle {
    pub truth: StudyTruth,
    pub data: StudyData,
    pub baseline_complete: BaselineReport,
    /// Complete-case full-design analysis (sparse study only).
    pub baseline_complete_case: Option<BaselineReport>,
    /// Complete-case analysis on the signal neighborhood (sparse study only).
    pub baseline_window: Option<BaselineReport>,
    pub report: SelectionReport,
    pub fit: EmFit,
    /// Phenotype-equation selection frequencies at tau = 10, 30, 50
    /// (polygenic study at full scale only).
    pub tau_comparison: Option<Vec<(String, [usize; 3])>>,
    pub timings: Vec<(String, f64)>,
    pub out_dir: PathBuf,
}

fn lambda_policy_label(policy: &LambdaPolicy) -> String {
    match policy {
        LambdaPolicy::Fixed(l) => format!("fixed({l})"),
        LambdaPolicy::Tuned(tc) => match tc.method {
            TuneMethod::Ebic => "tuned(ebic)".to_string(),
            TuneMethod::Cv => "tuned(cv)".to_string(),
        },
    }
}

/// The active-column window for the small complete-case analysis: five
/// columns of left context plus the span of the signal columns.
fn signal_window(truth: &StudyTruth) -> Vec<usize> {
    let cols = truth.signal_cols();
    let lo = cols.iter().min().unwrap().saturating_sub(5);
    let hi = *cols.iter().max().unwrap();
    (lo..=hi).collect()
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)?;
    Ok(())
}

fn em_trace_csv(report: &SelectionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "q_penalized",
        "q_unpenalized",
        "observed_loglik",
        "penalized_observed_loglik",
        "param_change",
        "lambda",
        "all_fits_converged",
        "any_firth",
    ])
    .expect("in-memory csv");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &report.em_trace.iterations {
        w.write_record([
            r.iteration.to_string(),
            format!("{}", r.q_penalized),
            format!("{}", r.q_unpenalized),
            opt(r.observed_loglik),
            opt(r.penalized_observed_loglik),
            format!("{}", r.param_change),
            format!("{}", r.lambda),
            r.all_fits_converged.to_string(),
            r.any_firth.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn tuning_csv(report: &SelectionReport) -> Option<String> {
    let diag = report.tuning.as_ref()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "lambda",
        "score",
        "usable",
        "se",
        "folds_used",
        "effective_df",
        "chosen",
        "one_se",
        "note",
    ])
    .expect("in-memory csv");
    for (k, p) in diag.points.iter().enumerate() {
        w.write_record([
            format!("{}", p.lambda),
            format!("{}", p.score),
            p.usable.to_string(),
            p.se.map(|v| format!("{v}")).unwrap_or_default(),
            p.folds_used.to_string(),
            p.effective_df.map(|v| format!("{v}")).unwrap_or_default(),
            (k == diag.chosen).to_string(),
            (diag.one_se == Some(k)).to_string(),
            p.note.clone().unwrap_or_default(),
        ])
        .expect("in-memory csv");
    }
    Some(String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv"))
}

fn missing_by_snp_csv(summary: &crate::data::MissingSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["snp", "missing", "proportion"])
        .expect("in-memory csv");
    for (name, count, prop) in &summary.per_column {
        w.write_record([name.as_str(), &count.to_string(), &format!("{prop}")])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn missing_by_individual_csv(summary: &crate::data::MissingSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["missing_count", "individuals"])
        .expect("in-memory csv");
    for (count, individuals) in &summary.per_individual {
        w.write_record([count.to_string(), individuals.to_string()])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn timings_csv(timings: &[(String, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "seconds"]).expect("in-memory csv");
    for (stage, secs) in timings {
        w.write_record([stage.as_str(), &format!("{secs:.3}")])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

#[derive(Serialize)]
struct BaselineSummary {
    n_used: usize,
    converged: bool,
    degenerate: bool,
    note: Option<String>,
}

impl From<&BaselineReport> for BaselineSummary {
    fn from(r: &BaselineReport) -> Self {
        BaselineSummary {
            n_used: r.n_used,
            converged: r.converged,
            degenerate: r.degenerate,
            note: r.note.clone(),
        }
    }
}

/// Runs one study end to end and writes its bundle under `cfg.out_dir`.
pub fn run_full_study(cfg: &StudyConfig) -> Result<StudyBundle> {
    fs::create_dir_all(&cfg.out_dir)?;
    let dir = cfg.out_dir.as_path();
    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut files: Vec<String> = Vec::new();
    let mut stage = |name: &str, t0: Instant, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), t0.elapsed().as_secs_f64()));
    };

    let t0 = Instant::now();
    let truth = StudyTruth::new(cfg.which, cfg.scale);
    let data = generate_study_data(&truth, cfg.seed)?;
    stage("generate", t0, &mut timings);

    let t0 = Instant::now();
    let sub = |k: u64| derive_rng(cfg.seed, &[Tag::Study as u64, k]).gen::<u64>();
    let baseline_complete = run_baseline_complete(&data.g_complete, &data.y_complete, sub(8))?;
    let (baseline_complete_case, baseline_window) = match cfg.which {
        StudyKind::Sim1 => {
            let cc = run_baseline_completecase(&data.g, &data.y, None, sub(9));
            let window = signal_window(&truth);
            let win = run_baseline_completecase(&data.g, &data.y, Some(&window), sub(10));
            (Some(cc), Some(win))
        }
        StudyKind::Sim2 => (None, None),
    };
    stage("baselines", t0, &mut timings);

    let t0 = Instant::now();
    let mut cycle = cfg.cycle.clone();
    cycle.tau = cfg.tau;
    cycle.lambda = cfg.lambda.clone();
    cycle.seed = sub(4);
    let (report, fit) = run_cycles(&data.g, &data.y, &cycle)?;
    stage("cycles", t0, &mut timings);

    // the selection-count comparison across cycle budgets, at full scale of
    // the polygenic study only: rerun with tau 10, 30, 50 (reusing the main
    // run when its tau matches) and tabulate phenotype-equation frequencies
    let tau_comparison = if cfg.which == StudyKind::Sim2 && cfg.scale == StudyScale::Full {
        let t0 = Instant::now();
        let mut freq_at = |tau: usize| -> Result<Vec<usize>> {
            if tau == cfg.tau {
                return Ok(report.frequencies[0].counts.clone());
            }
            let mut c = cycle.clone();
            c.tau = tau;
            let (r, _) = run_cycles(&data.g, &data.y, &c)?;
            Ok(r.frequencies[0].counts.clone())
        };
        let f10 = freq_at(10)?;
        let f30 = freq_at(30)?;
        let f50 = freq_at(50)?;
        let names = data.g.snp_names();
        let rows: Vec<(String, [usize; 3])> = report.frequencies[0]
            .candidates
            .iter()
            .enumerate()
            .map(|(i, pred)| {
                let name = match pred {
                    crate::mirem::Predictor::Snp(k) => names[*k].clone(),
                    other => format!("{other:?}"),
                };
                (name, [f10[i], f30[i], f50[i]])
            })
            .collect();
        stage("tau_comparison", t0, &mut timings);
        Some(rows)
    } else {
        None
    };

    let t0 = Instant::now();
    write_genotypes(&dir.join("genotypes_complete.csv"), &data.g_complete, &data.y_complete, "NA")?;
    write_genotypes(&dir.join("genotypes.csv"), &data.g, &data.y, "NA")?;
    files.push("genotypes_complete.csv".into());
    files.push("genotypes.csv".into());

    let summary = summarize_missingness(&data.g, &data.y);
    write(&dir.join("missing_by_snp.csv"), &missing_by_snp_csv(&summary))?;
    write(
        &dir.join("missing_by_individual.csv"),
        &missing_by_individual_csv(&summary),
    )?;
    files.push("missing_by_snp.csv".into());
    files.push("missing_by_individual.csv".into());

    let mut write_baseline = |name: &str, r: &BaselineReport, files: &mut Vec<String>| -> Result<()> {
        write(&dir.join(format!("{name}.csv")), &baseline_csv(r))?;
        files.push(format!("{name}.csv"));
        if let Some(imp) = &r.importance {
            write(&dir.join(format!("{name}_importance.csv")), &importance_csv(imp))?;
            files.push(format!("{name}_importance.csv"));
        }
        Ok(())
    };
    write_baseline("baseline_complete", &baseline_complete, &mut files)?;
    if let Some(r) = &baseline_complete_case {
        write_baseline("baseline_complete_case", r, &mut files)?;
    }
    if let Some(r) = &baseline_window {
        write_baseline("baseline_window", r, &mut files)?;
    }

    write(&dir.join("frequencies.csv"), &report.frequencies_csv())?;
    write(&dir.join("per_cycle.csv"), &report.per_cycle_csv())?;
    write(
        &dir.join("coefficients.csv"),
        &coefficient_table_csv(&report.coefficients),
    )?;
    files.extend(["frequencies.csv".into(), "per_cycle.csv".into(), "coefficients.csv".into()]);

    let cov = report.covariance_matrix();
    let assoc = association_table(&fit.system, &cov, data.g.snp_names())?;
    write(&dir.join("association.csv"), &association_csv(&assoc))?;
    files.push("association.csv".into());

    write(&dir.join("mechanism.csv"), &report.mechanism.to_csv())?;
    write(&dir.join("mechanism.txt"), &report.mechanism.to_text())?;
    write(&dir.join("em_trace.csv"), &em_trace_csv(&report))?;
    files.extend(["mechanism.csv".into(), "mechanism.txt".into(), "em_trace.csv".into()]);

    if let Some(t) = tuning_csv(&report) {
        write(&dir.join("tuning.csv"), &t)?;
        files.push("tuning.csv".into());
    }
    if let Some(rows) = &tau_comparison {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["snp", "freq_tau10", "freq_tau30", "freq_tau50"])
            .expect("in-memory csv");
        for (name, f) in rows {
            w.write_record([
                name.as_str(),
                &f[0].to_string(),
                &f[1].to_string(),
                &f[2].to_string(),
            ])
            .expect("in-memory csv");
        }
        let text = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv");
        write(&dir.join("tau_comparison.csv"), &text)?;
        files.push("tau_comparison.csv".into());
    }

    fit.wcd.write_csv(&dir.join("complete_data.csv"))?;
    files.push("complete_data.csv".into());

    if !report.events.is_empty() {
        write(&dir.join("events.txt"), &(report.events.join("\n") + "\n"))?;
        files.push("events.txt".into());
    }
    stage("write", t0, &mut timings);

    write(&dir.join("timings.csv"), &timings_csv(&timings))?;
    files.push("timings.csv".into());

    let manifest = serde_json::json!({
        "which": truth.which,
        "scale": truth.scale,
        "seed": cfg.seed,
        "n": truth.n,
        "m": truth.m,
        "tau": cfg.tau,
        "lambda_policy": lambda_policy_label(&cfg.lambda),
        "resolved_lambda": report.lambda,
        "kappa": cycle.kappa,
        "trees_per_forest": cycle.forest.ntr,
        "em_converged": report.em_trace.converged,
        "truth": truth,
        "baselines": {
            "complete": BaselineSummary::from(&baseline_complete),
            "complete_case": baseline_complete_case.as_ref().map(BaselineSummary::from),
            "window": baseline_window.as_ref().map(BaselineSummary::from),
        },
        "files": files,
    });
    write(
        &dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;

    Ok(StudyBundle {
        truth,
        data,
        baseline_complete,
        baseline_complete_case,
        baseline_window,
        report,
        fit,
        tau_comparison,
        timings,
        out_dir: cfg.out_dir.clone(),
    })
}
