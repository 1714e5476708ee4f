use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use learnprof_core::dataset::ResponseSet;
use learnprof_core::intervention::{
    adjust_batch, compare, evaluate, power_required, Intervention, InterventionReport, PowerSpec,
    SampleSummary, TestKind,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::analyze::DataArgs;
use crate::output::{fmt_opt, fmt_p, print_json, write_json, Failure, Usage};
use crate::Global;

/// Proportion correct and group size, for comparisons from published
/// summaries rather than raw responses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSummary {
    pub mean: f64,
    pub n: usize,
}

/// One entry of an intervention list. Either `questionId` + `deployedAt`
/// (evaluated on response data) or `before` + `after` summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InterventionSpec {
    pub name: String,
    #[serde(default)]
    pub question_id: Option<Uuid>,
    /// ISO-8601 date or date-time, or epoch milliseconds.
    #[serde(default)]
    pub deployed_at: Option<String>,
    #[serde(default)]
    pub before: Option<GroupSummary>,
    #[serde(default)]
    pub after: Option<GroupSummary>,
}

impl InterventionSpec {
    fn needs_responses(&self) -> bool {
        self.before.is_none()
    }
}

#[derive(Debug, Deserialize)]
struct SpecFile {
    interventions: Vec<InterventionSpec>,
}

pub fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Some(ms) = learnprof_telemetry::server::parse_time(s) {
        return Some(ms);
    }
    if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t.and_utc().timestamp_millis());
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp_millis())
}

/// TOML date-times are native values; turn them back into strings so both
/// quoted and bare dates deserialize.
fn stringify_datetimes(v: &mut toml::Value) {
    match v {
        toml::Value::Datetime(d) => *v = toml::Value::String(d.to_string()),
        toml::Value::Array(a) => a.iter_mut().for_each(stringify_datetimes),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| stringify_datetimes(v)),
        _ => {}
    }
}

pub fn read_interventions(path: &Path) -> Result<Vec<InterventionSpec>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let specs = if path.extension().is_some_and(|e| e == "json") {
        let v: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let list = match v {
            Value::Object(mut m) => m.remove("interventions").unwrap_or(Value::Null),
            other => other,
        };
        serde_json::from_value(list).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let mut v: toml::Value =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        stringify_datetimes(&mut v);
        let file: SpecFile = v
            .try_into()
            .with_context(|| format!("parsing {}", path.display()))?;
        file.interventions
    };
    Ok(specs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchError {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionBatch {
    pub test: TestKind,
    pub reports: Vec<InterventionReport>,
    pub errors: Vec<BatchError>,
}

fn evaluate_one(
    rs: Option<&ResponseSet>,
    spec: &InterventionSpec,
    test: TestKind,
) -> Result<InterventionReport> {
    match (spec.before, spec.after) {
        (Some(b), Some(a)) => {
            for g in [b, a] {
                if !(0.0..=1.0).contains(&g.mean) {
                    bail!("mean {} is not a proportion", g.mean);
                }
            }
            let mut r = compare(
                &spec.name,
                &SampleSummary::bernoulli(b.mean, b.n),
                &SampleSummary::bernoulli(a.mean, a.n),
                test,
            )?;
            r.question_id = spec.question_id;
            Ok(r)
        }
        (None, None) => {
            let question_id = spec.question_id.ok_or_else(|| anyhow!("questionId missing"))?;
            let deployed = spec
                .deployed_at
                .as_deref()
                .ok_or_else(|| anyhow!("deployedAt missing"))?;
            let deployed_at_ms = parse_time(deployed)
                .ok_or_else(|| anyhow!("deployedAt {deployed:?} is not an ISO-8601 time"))?;
            let rs = rs.ok_or_else(|| anyhow!("no response data loaded"))?;
            let iv = Intervention {
                name: spec.name.clone(),
                question_id,
                deployed_at_ms,
            };
            Ok(evaluate(rs, &iv, test)?)
        }
        _ => bail!("give both before and after summaries, or neither"),
    }
}

/// Evaluates every entry and applies the BH adjustment over the ones that
/// succeeded.
pub fn evaluate_batch(
    rs: Option<&ResponseSet>,
    specs: &[InterventionSpec],
    test: TestKind,
) -> InterventionBatch {
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for spec in specs {
        match evaluate_one(rs, spec, test) {
            Ok(r) => reports.push(r),
            Err(e) => errors.push(BatchError {
                name: spec.name.clone(),
                error: format!("{e:#}"),
            }),
        }
    }
    adjust_batch(&mut reports);
    InterventionBatch {
        test,
        reports,
        errors,
    }
}

#[derive(Debug, Args)]
pub struct InterventionArgs {
    /// Intervention list (TOML with [[interventions]], or JSON)
    file: PathBuf,
    /// Use the pooled-variance Student t-test instead of Welch's
    #[arg(long)]
    pooled: bool,
    #[command(flatten)]
    data: DataArgs,
}

pub fn interventions(g: &Global, args: &InterventionArgs) -> Result<()> {
    let specs = read_interventions(&args.file)?;
    if specs.is_empty() {
        return Err(Usage(format!("{} lists no interventions", args.file.display())).into());
    }
    let loaded = if specs.iter().any(InterventionSpec::needs_responses) {
        Some(args.data.load(g)?)
    } else {
        None
    };
    let test = if args.pooled {
        TestKind::Pooled
    } else {
        TestKind::Welch
    };
    let batch = evaluate_batch(loaded.as_ref().map(|l| &l.responses), &specs, test);
    write_json(&args.data.out_dir(g).join("interventions.json"), &batch, g.stamp)?;
    if g.json {
        print_json(&batch)?;
    } else {
        println!(
            "{:<24}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}  {:>6}  {:>9}  {:>9}  sig",
            "intervention", "before", "N", "after", "N", "delta", "d", "p", "p (BH)"
        );
        for r in &batch.reports {
            println!(
                "{:<24}  {:>6.3}  {:>6}  {:>6.3}  {:>6}  {:>+7.3}  {:>6}  {:>9}  {:>9}  {}",
                r.name,
                r.before_mean,
                r.n_before,
                r.after_mean,
                r.n_after,
                r.delta,
                fmt_opt(r.effect_size, 2),
                fmt_p(r.p_value),
                fmt_p(r.p_adjusted),
                if r.significant { "*" } else { "" }
            );
        }
        for e in &batch.errors {
            eprintln!("{}: {}", e.name, e.error);
        }
    }
    if !batch.errors.is_empty() {
        return Err(Failure.into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Effect size (Cohen's d); repeatable
    #[arg(long = "d", value_name = "D")]
    d: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Intervention report (interventions.json) whose significant effects to use
    #[arg(long)]
    from_report: Option<PathBuf>,
    /// With --from-report, include non-significant effects too
    #[arg(long, requires = "from_report")]
    all: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerRow {
    pub name: String,
    pub effect_size: f64,
    pub n_per_group: usize,
    pub n_total: usize,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerReport {
    pub alpha: f64,
    pub power: f64,
    pub rows: Vec<PowerRow>,
    pub median_total: Option<f64>,
    pub max_total: Option<usize>,
}

/// Median of totals; the mean of the two middle values for an even count.
pub fn median(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    })
}

fn effects_from_report(path: &Path, all: bool) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let reports = v.get("reports").unwrap_or(&v);
    let Value::Array(reports) = reports else {
        bail!("{}: expected a list of reports", path.display());
    };
    let mut out = Vec::new();
    for r in reports {
        if !all && r.get("significant").and_then(Value::as_bool) != Some(true) {
            continue;
        }
        let Some(d) = r.get("effectSize").and_then(Value::as_f64) else {
            continue;
        };
        let name = r.get("name").and_then(Value::as_str).unwrap_or("").to_string();
        out.push((name, d.abs()));
    }
    Ok(out)
}

pub fn power_report(effects: &[(String, f64)], alpha: f64, power: f64) -> Result<PowerReport> {
    let mut rows = Vec::with_capacity(effects.len());
    for (name, d) in effects {
        let r = power_required(&PowerSpec {
            effect_size: *d,
            alpha,
            power,
        })?;
        rows.push(PowerRow {
            name: name.clone(),
            effect_size: *d,
            n_per_group: r.n_per_group,
            n_total: r.n_total,
        });
    }
    let totals: Vec<usize> = rows.iter().map(|r| r.n_total).collect();
    Ok(PowerReport {
        alpha,
        power,
        median_total: median(&totals),
        max_total: totals.iter().copied().max(),
        rows,
    })
}

pub fn power(g: &Global, args: &PowerArgs) -> Result<()> {
    let mut effects: Vec<(String, f64)> = args.d.iter().map(|&d| (format!("d={d}"), d)).collect();
    if let Some(path) = &args.from_report {
        effects.extend(effects_from_report(path, args.all)?);
    }
    if effects.is_empty() {
        let msg = if args.from_report.is_some() {
            "the report has no significant effects"
        } else {
            "give --d or --from-report"
        };
        return Err(Usage(msg.into()).into());
    }
    let report = power_report(&effects, args.alpha, args.power).map_err(|e| Usage(e.to_string()))?;
    if g.json {
        return print_json(&report);
    }
    println!("{:<24}  {:>6}  {:>10}  {:>8}", "effect", "d", "per group", "total");
    for r in &report.rows {
        println!(
            "{:<24}  {:>6.3}  {:>10}  {:>8}",
            r.name, r.effect_size, r.n_per_group, r.n_total
        );
    }
    if report.rows.len() > 1 {
        println!(
            "median total {}, largest total {}",
            report.median_total.map_or("-".into(), |m| format!("{m}")),
            report.max_total.unwrap_or(0)
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deployment_times() {
        assert_eq!(parse_time("2023-01-01"), Some(1_672_531_200_000));
        assert_eq!(parse_time("2023-01-01T00:00:00Z"), Some(1_672_531_200_000));
        assert_eq!(parse_time("2023-01-01T01:00:00+01:00"), Some(1_672_531_200_000));
        assert_eq!(parse_time("2023-01-01T00:00:01"), Some(1_672_531_201_000));
        assert_eq!(parse_time("1672531200000"), Some(1_672_531_200_000));
        assert_eq!(parse_time("soon"), None);
    }

    #[test]
    fn bare_toml_datetimes_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iv.toml");
        fs::write(
            &path,
            "[[interventions]]\nname = \"a\"\nquestionId = \"6b1a7e6c-3f0e-4a43-9c55-64f5b6f0d001\"\ndeployedAt = 2023-01-01T00:00:00Z\n",
        )
        .unwrap();
        let specs = read_interventions(&path).unwrap();
        assert_eq!(parse_time(specs[0].deployed_at.as_deref().unwrap()), Some(1_672_531_200_000));
    }

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(median(&[4, 1, 3, 2]), Some(2.5));
        assert_eq!(median(&[5]), Some(5.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn half_specified_summaries_are_errors() {
        let spec = InterventionSpec {
            name: "x".into(),
            question_id: None,
            deployed_at: None,
            before: Some(GroupSummary { mean: 0.2, n: 10 }),
            after: None,
        };
        let batch = evaluate_batch(None, &[spec], TestKind::Welch);
        assert!(batch.reports.is_empty());
        assert_eq!(batch.errors.len(), 1);
    }
}
