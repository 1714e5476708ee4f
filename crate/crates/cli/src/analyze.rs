use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use learnprof_core::book::{BookManifest, QuizRegistry};
use learnprof_core::ctt::{self, CorrelationMode, CttReport, ItemStats};
use learnprof_core::dataset::{
    first_attempts, last_chapter_histogram, load, summarize_dataset, write_records, ClassFilter,
    LoadReport, ResponseSet,
};
use learnprof_core::irt::{self, decile_correlation, icc_table, FitConfig, ItemParams};
use learnprof_core::stats::{mean, pearson, spearman};
use learnprof_core::synth::Truth;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::effects;
use crate::output::{fmt_opt, print_json, write_json};
use crate::{AnalysisKind, Global};

/// Where response data comes from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// NDJSON export [default: exportFile from the config]
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Book manifests; the first one defines the chapters, the rest add
    /// question versions from older commits [default: <outputDir>/manifest.json]
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    /// Output directory [default: outputDir from the config]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Loaded {
    pub manifest: BookManifest,
    /// First attempts only.
    pub responses: ResponseSet,
    pub report: LoadReport,
}

impl DataArgs {
    pub fn out_dir(&self, g: &Global) -> PathBuf {
        self.out.clone().unwrap_or_else(|| g.config.output_dir.clone())
    }

    pub fn load(&self, g: &Global) -> Result<Loaded> {
        let paths = if self.manifest.is_empty() {
            vec![g.config.manifest_path()]
        } else {
            self.manifest.clone()
        };
        let manifests = paths
            .iter()
            .map(|p| {
                BookManifest::load(p).with_context(|| {
                    format!("reading manifest {} (run `learnprof build` first)", p.display())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let registry = QuizRegistry::from_manifests(&manifests);
        let export = self.export.clone().unwrap_or_else(|| g.config.export_file.clone());
        let file = File::open(&export).with_context(|| format!("opening {}", export.display()))?;
        let (rs, report) = load(BufReader::new(file), &manifests[0], &registry)
            .with_context(|| format!("loading {}", export.display()))?;
        Ok(Loaded {
            manifest: manifests.into_iter().next().expect("at least one manifest"),
            responses: first_attempts(&rs),
            report,
        })
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    kind: AnalysisKind,
    #[command(flatten)]
    data: DataArgs,
    /// Correlate items with the overall score excluding the item itself
    #[arg(long)]
    item_rest: bool,
    /// Also search for the k questions that best predict overall score
    #[arg(long, value_name = "K")]
    best_subset: Option<usize>,
    /// IRT gradient ascent epochs
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    /// IRT base step size
    #[arg(long, default_value_t = irt::DEFAULT_STEP_SIZE)]
    step_size: f64,
    /// Ground truth for recovery metrics [default: truth.json next to the export when present]
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Include per-question ICC tables in irt.json
    #[arg(long)]
    icc: bool,
    /// Also write the canonical first-attempt records as responses.ndjson
    #[arg(long)]
    write_responses: bool,
    /// Merge statistics into stats.json for the dashboard
    #[arg(long)]
    bundle: bool,
    /// Intervention list to evaluate into the bundle [default: reuse <out>/interventions.json]
    #[arg(long, requires = "bundle")]
    interventions: Option<PathBuf>,
}

impl AnalyzeArgs {
    fn mode(&self) -> CorrelationMode {
        if self.item_rest {
            CorrelationMode::ItemRest
        } else {
            CorrelationMode::ItemTotal
        }
    }
}

pub fn run(g: &Global, args: &AnalyzeArgs) -> Result<()> {
    let data = args.data.load(g)?;
    let out = args.data.out_dir(g);
    let summary = summarize_dataset(&data.responses, Some(data.report.clone()));
    write_json(&out.join("dataset.json"), &summary, g.stamp)?;
    if args.write_responses {
        let path = out.join("responses.ndjson");
        let mut w = BufWriter::new(File::create(&path)?);
        write_records(&data.responses, &mut w)?;
    }
    match args.kind {
        AnalysisKind::Dropoff => dropoff(g, &data, &out)?,
        AnalysisKind::Ctt => run_ctt(g, args, &data, &out)?,
        AnalysisKind::Irt => run_irt(g, args, &data, &out)?,
    }
    if args.bundle {
        bundle(g, args, &data, &out)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct DropoffRow {
    chapter: u32,
    title: String,
    all: f64,
    triers: f64,
    dabblers: f64,
}

fn dropoff(g: &Global, data: &Loaded, out: &Path) -> Result<()> {
    let rs = &data.responses;
    let all = last_chapter_histogram(rs, ClassFilter::All);
    let triers = last_chapter_histogram(rs, ClassFilter::Triers);
    let dabblers = last_chapter_histogram(rs, ClassFilter::Dabblers);
    let titles: HashMap<u32, &str> = data
        .manifest
        .chapters
        .iter()
        .map(|c| (c.number, c.title.as_str()))
        .collect();
    let rows: Vec<DropoffRow> = all
        .iter()
        .map(|(&c, &f)| DropoffRow {
            chapter: c,
            title: titles.get(&c).copied().unwrap_or_default().to_string(),
            all: f,
            triers: triers.get(&c).copied().unwrap_or(0.0),
            dabblers: dabblers.get(&c).copied().unwrap_or(0.0),
        })
        .collect();
    let summary = summarize_dataset(rs, None);
    let report = serde_json::json!({
        "readers": summary.readers,
        "triers": summary.triers,
        "dabblers": summary.dabblers,
        "threshold": summary.threshold,
        "chapters": rows,
    });
    write_json(&out.join("dropoff.json"), &report, g.stamp)?;
    if g.json {
        return print_json(&report);
    }
    println!(
        "{} readers ({} triers, {} dabblers; threshold {} questions)",
        summary.readers, summary.triers, summary.dabblers, summary.threshold
    );
    println!("{:>7}  {:>6}  {:>6}  {:>8}  title", "chapter", "all", "triers", "dabblers");
    for r in &rows {
        println!(
            "{:>7}  {:>6.3}  {:>6.3}  {:>8.3}  {}",
            r.chapter, r.all, r.triers, r.dabblers, r.title
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct CttOutput {
    #[serde(flatten)]
    report: CttReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_subset: Option<BestSubsetOut>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct BestSubsetOut {
    k: usize,
    #[serde(flatten)]
    subset: ctt::BestSubset,
}

fn run_ctt(g: &Global, args: &AnalyzeArgs, data: &Loaded, out: &Path) -> Result<()> {
    let report = ctt::analyze(&data.responses, args.mode())?;
    let best_subset = match args.best_subset {
        Some(k) => Some(BestSubsetOut {
            k,
            subset: ctt::best_subset(&data.responses, k)?,
        }),
        None => None,
    };
    let output = CttOutput {
        report,
        best_subset,
    };
    write_json(&out.join("ctt.json"), &output, g.stamp)?;
    if g.json {
        return print_json(&output);
    }
    let r = &output.report;
    println!(
        "{} readers, {} questions ({:?})",
        r.abilities.len(),
        r.items.len(),
        r.mode
    );
    println!("ability        mean {:.3}  sd {:.3}", r.ability_summary.mean, r.ability_summary.sd);
    println!("difficulty     mean {:.3}  sd {:.3}", r.difficulty_summary.mean, r.difficulty_summary.sd);
    if let Some(d) = &r.discrimination_summary {
        println!("discrimination mean {:.3}  sd {:.3}", d.mean, d.sd);
    }
    println!();
    println!("{:<36}  {:>6}  {:>10}  {:>14}", "question", "n", "difficulty", "discrimination");
    for i in &r.items {
        println!(
            "{:<36}  {:>6}  {:>10.3}  {:>14}",
            i.question_id,
            i.n,
            i.difficulty,
            fmt_opt(i.discrimination, 3)
        );
    }
    if let Some(b) = &output.best_subset {
        println!();
        println!("best {}-question subset (r = {:.4}):", b.k, b.subset.r);
        for id in &b.subset.question_ids {
            println!("  {id}");
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Recovery {
    pub items: usize,
    pub readers: usize,
    pub spearman_beta: Option<f64>,
    pub spearman_alpha: Option<f64>,
    pub spearman_lambda: Option<f64>,
    pub pearson_theta: Option<f64>,
}

pub fn recovery(fit: &irt::FitResult, truth: &Truth) -> Recovery {
    let true_items: HashMap<Uuid, &ItemParams> =
        truth.items.iter().map(|t| (t.params.question_id, &t.params)).collect();
    let pairs: Vec<(&ItemParams, &ItemParams)> = fit
        .items
        .iter()
        .filter_map(|p| true_items.get(&p.question_id).map(|t| (p, *t)))
        .collect();
    let col = |f: fn(&ItemParams) -> f64| -> (Vec<f64>, Vec<f64>) {
        pairs.iter().map(|(p, t)| (f(p), f(t))).unzip()
    };
    let (bh, bt) = col(|p| p.beta);
    let (ah, at) = col(|p| p.alpha);
    let (lh, lt) = col(|p| p.lambda);
    let true_theta: HashMap<Uuid, f64> =
        truth.abilities.iter().map(|a| (a.session_id, a.theta)).collect();
    let (th, tt): (Vec<f64>, Vec<f64>) = fit
        .abilities
        .iter()
        .filter_map(|a| true_theta.get(&a.session_id).map(|&t| (a.theta, t)))
        .unzip();
    Recovery {
        items: pairs.len(),
        readers: th.len(),
        spearman_beta: spearman(&bh, &bt),
        spearman_alpha: spearman(&ah, &at),
        spearman_lambda: spearman(&lh, &lt),
        pearson_theta: pearson(&th, &tt),
    }
}

fn run_irt(g: &Global, args: &AnalyzeArgs, data: &Loaded, out: &Path) -> Result<()> {
    let cfg = FitConfig {
        epochs: args.epochs,
        step_size: args.step_size,
        seed: g.config.seed,
        ..FitConfig::default()
    };
    let fit = irt::fit(&data.responses, &cfg)?;
    let ctt_items = ctt::item_stats(&data.responses.index(), args.mode());
    let deciles = decile_correlation(&ctt_items, &fit.items).ok();
    let truth_path = args
        .truth
        .clone()
        .or_else(|| Some(g.config.truth_path()).filter(|p| p.exists()));
    let recovery = match &truth_path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let truth: Truth =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Some(recovery(&fit, &truth))
        }
        None => None,
    };
    let mut output = serde_json::to_value(&fit)?;
    if let Value::Object(map) = &mut output {
        if let Some(d) = &deciles {
            map.insert("deciles".into(), serde_json::to_value(d)?);
        }
        if let Some(r) = &recovery {
            map.insert("recovery".into(), serde_json::to_value(r)?);
        }
        if args.icc {
            let tables: Vec<_> = fit.items.iter().map(icc_table).collect();
            map.insert("iccTables".into(), serde_json::to_value(tables)?);
        }
    }
    write_json(&out.join("irt.json"), &output, g.stamp)?;
    if g.json {
        return print_json(&output);
    }
    let last = fit.trajectory.last().copied().unwrap_or(f64::NAN);
    println!(
        "fitted {} items and {} readers in {} epochs; log posterior {:.3} -> {:.3}",
        fit.items.len(),
        fit.abilities.len(),
        cfg.epochs,
        fit.trajectory[0],
        last
    );
    println!("{:<36}  {:>7}  {:>7}  {:>7}", "question", "alpha", "beta", "lambda");
    for p in &fit.items {
        println!(
            "{:<36}  {:>7.3}  {:>7.3}  {:>7.3}",
            p.question_id, p.alpha, p.beta, p.lambda
        );
    }
    if let Some(d) = &deciles {
        println!();
        println!("CTT discrimination vs IRT alpha by difficulty decile:");
        for row in d {
            println!(
                "  decile {:>2} ({:.2}-{:.2}, {} questions): r = {}",
                row.decile,
                row.min_difficulty,
                row.max_difficulty,
                row.questions,
                fmt_opt(row.r, 3)
            );
        }
    }
    if let Some(r) = &recovery {
        println!();
        println!("recovery against {} ({} items, {} readers):", truth_path.unwrap().display(), r.items, r.readers);
        println!("  spearman beta   {}", fmt_opt(r.spearman_beta, 4));
        println!("  spearman alpha  {}", fmt_opt(r.spearman_alpha, 4));
        println!("  spearman lambda {}", fmt_opt(r.spearman_lambda, 4));
        println!("  pearson theta   {}", fmt_opt(r.pearson_theta, 4));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct QuizSummary {
    pub name: String,
    pub chapter: u32,
    pub questions: usize,
    pub respondents: usize,
    pub mean_score: Option<f64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct QuestionSummary {
    pub question_id: Uuid,
    pub quiz: String,
    pub chapter: u32,
    pub kind: String,
    pub prompt: String,
    pub options: Vec<String>,
    pub n: usize,
    pub difficulty: Option<f64>,
    pub discrimination: Option<f64>,
    /// Normalized incorrect answer to its share of all answers; sums to
    /// 1 - difficulty.
    pub incorrect_answer_distribution: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub irt: Option<IrtSummary>,
}

#[derive(Debug, Serialize)]
pub struct IrtSummary {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StatsBundle {
    pub commit_hash: String,
    pub quizzes: Vec<QuizSummary>,
    pub questions: Vec<QuestionSummary>,
    pub interventions: Vec<Value>,
}

pub fn stats_bundle(
    manifest: &BookManifest,
    rs: &ResponseSet,
    items: &[ItemStats],
    irt_items: &[ItemParams],
    interventions: Vec<Value>,
) -> StatsBundle {
    let stats: HashMap<Uuid, &ItemStats> = items.iter().map(|s| (s.question_id, s)).collect();
    let irt: HashMap<Uuid, &ItemParams> = irt_items.iter().map(|p| (p.question_id, p)).collect();
    let mut wrong: HashMap<Uuid, BTreeMap<String, usize>> = HashMap::new();
    let mut totals: HashMap<Uuid, usize> = HashMap::new();
    let mut quiz_readers: HashMap<&str, BTreeSet<Uuid>> = HashMap::new();
    let mut quiz_scores: HashMap<&str, Vec<f64>> = HashMap::new();
    for r in rs.records() {
        *totals.entry(r.question_id).or_default() += 1;
        if r.score == 0 {
            *wrong
                .entry(r.question_id)
                .or_default()
                .entry(r.answer.clone())
                .or_default() += 1;
        }
        quiz_readers.entry(&r.quiz_name).or_default().insert(r.session_id);
        quiz_scores.entry(&r.quiz_name).or_default().push(f64::from(r.score));
    }

    let mut quizzes = Vec::new();
    let mut questions = Vec::new();
    for (name, mq) in &manifest.quizzes {
        quizzes.push(QuizSummary {
            name: name.clone(),
            chapter: mq.chapter,
            questions: mq.quiz.questions.len(),
            respondents: quiz_readers.get(name.as_str()).map_or(0, BTreeSet::len),
            mean_score: quiz_scores.get(name.as_str()).and_then(|s| mean(s)),
        });
        for q in &mq.quiz.questions {
            let n = totals.get(&q.id).copied().unwrap_or(0);
            let distribution = wrong
                .get(&q.id)
                .map(|m| {
                    m.iter()
                        .map(|(a, &c)| (a.clone(), c as f64 / n as f64))
                        .collect()
                })
                .unwrap_or_default();
            let s = stats.get(&q.id);
            questions.push(QuestionSummary {
                question_id: q.id,
                quiz: name.clone(),
                chapter: mq.chapter,
                kind: q.kind().to_string(),
                prompt: q.prompt.clone(),
                options: q.options().into_iter().map(str::to_string).collect(),
                n,
                difficulty: s.map(|s| s.difficulty),
                discrimination: s.and_then(|s| s.discrimination),
                incorrect_answer_distribution: distribution,
                irt: irt.get(&q.id).map(|p| IrtSummary {
                    alpha: p.alpha,
                    beta: p.beta,
                    lambda: p.lambda,
                }),
            });
        }
    }
    StatsBundle {
        commit_hash: manifest.commit_hash.clone(),
        quizzes,
        questions,
        interventions,
    }
}

fn bundle(g: &Global, args: &AnalyzeArgs, data: &Loaded, out: &Path) -> Result<()> {
    let items = ctt::item_stats(&data.responses.index(), args.mode());
    let irt_path = out.join("irt.json");
    let irt_items: Vec<ItemParams> = if irt_path.exists() {
        let v: Value = serde_json::from_str(&fs::read_to_string(&irt_path)?)
            .with_context(|| format!("parsing {}", irt_path.display()))?;
        serde_json::from_value(v.get("items").cloned().unwrap_or(Value::Array(vec![])))?
    } else {
        Vec::new()
    };
    let interventions = match &args.interventions {
        Some(file) => {
            let specs = effects::read_interventions(file)?;
            let batch = effects::evaluate_batch(Some(&data.responses), &specs, Default::default());
            write_json(&out.join("interventions.json"), &batch, g.stamp)?;
            serde_json::to_value(&batch.reports)?
        }
        None => {
            let path = out.join("interventions.json");
            if path.exists() {
                let v: Value = serde_json::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                v.get("reports").cloned().unwrap_or(Value::Array(vec![]))
            } else {
                Value::Array(vec![])
            }
        }
    };
    let interventions = match interventions {
        Value::Array(a) => a,
        other => vec![other],
    };
    let bundle = stats_bundle(&data.manifest, &data.responses, &items, &irt_items, interventions);
    let path = out.join("stats.json");
    write_json(&path, &bundle, g.stamp)?;
    if !g.json {
        println!(
            "wrote {} ({} quizzes, {} questions, {} interventions)",
            path.display(),
            bundle.quizzes.len(),
            bundle.questions.len(),
            bundle.interventions.len()
        );
    }
    Ok(())
}
