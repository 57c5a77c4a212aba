use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::config::RunConfig;
use crate::baselines::fit_ols;
use crate::csvout::Writer;
use crate::dataio::{generate_synthetic_panel, load_panel, Panel, SyntheticSpec};
use crate::disagg::{
    annual_anchors, chow_lin, compare_methods, corrupted_input_disagg, nn_elasticity_disagg, read_monthly_csv,
    sparse_td, write_comparison_csv, write_monthly_csv, ChowLinOptions, DisaggMethod, LambdaSelection, MonthlySeries,
    SparseTdOptions,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_configs, growth_rates, lagged_correlation};
use crate::explain::{kmeans_background, shap_summary, ElasticityTable, ShapOptions};
use crate::features::{assemble, assemble_svi_sum, ConfigId, FeatureMatrix, FeatureSymbol};
use crate::neuralnet::{load_model, save_model, train_ensemble, MlpEnsemble, TrainSpec};

pub const PANEL_FILE: &str = "panel.json";
pub const TRUTH_FILE: &str = "truth_monthly.csv";
/// Model name of the yearly-sum network behind the corrupted-input method.
pub const SVI_SUM_MODEL: &str = "svi_sum";

/// Resolved run: settings, output directory and the CSV metadata line.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub meta: String,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        let meta = format!(
            "raggededge v{} seed={} config_hash={}",
            env!("CARGO_PKG_VERSION"),
            cfg.seed,
            cfg.hash()
        );
        Self { cfg, out, meta }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.out.join("models").join(format!("{name}.model"))
    }

    fn require(&self, name: &str, command: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                artifact: p.display().to_string(),
                requires: command.into(),
            })
        }
    }

    fn comment(&self) -> Option<&str> {
        Some(&self.meta)
    }

    fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            seed: self.cfg.seed,
            ..self.cfg.train.clone()
        }
    }

    fn panel(&self) -> Result<Panel> {
        let p = self.require(PANEL_FILE, "ingest")?;
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: p,
            message: e.to_string(),
        })
    }

    fn model(&self, name: &str) -> Result<MlpEnsemble> {
        let p = self.require(&format!("models/{name}.model"), "train")?;
        load_model(&p)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_ingest(ctx: &Context) -> Result<()> {
    create_dir(&ctx.out)?;
    let data = &ctx.cfg.data;
    let (panel, truth) = match &data.synthetic {
        Some(spec_path) => {
            let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
            let spec = SyntheticSpec::from_json(&text)?;
            let (panel, truth) = generate_synthetic_panel(&spec, spec.seed)?;
            (panel, Some(truth))
        }
        None => {
            let (Some(g), Some(s), Some(m)) = (&data.gerd, &data.svi_dir, &data.macros) else {
                return Err(Error::Config("incomplete raw data paths".into()));
            };
            (load_panel(g, s, m)?, None)
        }
    };
    let json = serde_json::to_string(&panel).expect("panel serializes");
    let p = ctx.path(PANEL_FILE);
    fs::write(&p, json).map_err(|e| Error::io(&p, e))?;

    let mut w = Writer::create(&ctx.path("panel_summary.csv"), ctx.comment())?;
    w.record([
        "country",
        "start_year",
        "end_year",
        "n_interpolated",
        "n_topics",
        "mean_target",
    ])?;
    for (c, name) in panel.countries().iter().enumerate() {
        let t = panel.targets(c);
        w.record([
            name.clone(),
            panel.start_year().to_string(),
            panel.end_year().to_string(),
            t.iter().filter(|a| a.is_interpolated).count().to_string(),
            panel.n_topics().to_string(),
            (t.iter().map(|a| a.value).sum::<f64>() / t.len() as f64).to_string(),
        ])?;
    }
    w.finish()?;

    if let Some(truth) = truth {
        let mut w = Writer::create(&ctx.path(TRUTH_FILE), ctx.comment())?;
        w.record(["country", "year", "month", "value"])?;
        for (c, name) in panel.countries().iter().enumerate() {
            for (i, v) in truth.monthly[c].iter().enumerate() {
                w.record([
                    name.clone(),
                    (panel.start_year() + (i / 12) as i32).to_string(),
                    (i % 12 + 1).to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.finish()?;
    }
    println!(
        "ingested {} countries, {}..={}, {} topics",
        panel.n_countries(),
        panel.start_year(),
        panel.end_year(),
        panel.n_topics()
    );
    Ok(())
}

pub fn cmd_train(ctx: &Context) -> Result<()> {
    let panel = ctx.panel()?;
    let spec = ctx.train_spec();
    create_dir(&ctx.out.join("models"))?;
    let mut history = Writer::create(&ctx.path("training_history.csv"), ctx.comment())?;
    history.record(["model", "member", "epoch", "train_loss", "val_loss"])?;

    let mut fit = |name: &str, matrix: &FeatureMatrix| -> Result<()> {
        let ensemble = train_ensemble(matrix, &spec)?;
        save_model(&ensemble, &ctx.model_path(name))?;
        for (i, h) in ensemble.histories.iter().enumerate() {
            for e in &h.epochs {
                history.record([
                    name.to_owned(),
                    i.to_string(),
                    e.epoch.to_string(),
                    e.train_loss.to_string(),
                    e.val_loss.to_string(),
                ])?;
            }
        }
        println!("trained {name}: {} members", ensemble.members.len());
        Ok(())
    };

    for &config in &ctx.cfg.configs {
        let matrix = assemble(&panel, config, ctx.cfg.tau)?;
        fit(config.name(), &matrix)?;
        let ols = fit_ols(&matrix, &ctx.cfg.ols)?;
        ols.write_csv(&ctx.out.join("models").join(format!("{config}_ols.csv")), ctx.comment())?;
    }
    if ctx.cfg.methods.contains(&DisaggMethod::CorruptedInput) {
        let matrix = assemble_svi_sum(&panel, ctx.cfg.tau)?;
        fit(SVI_SUM_MODEL, &matrix)?;
    }
    history.finish()
}

pub fn cmd_evaluate(ctx: &Context) -> Result<()> {
    let panel = ctx.panel()?;
    let eval = evaluate_configs(
        &panel,
        &ctx.cfg.configs,
        ctx.cfg.tau,
        &ctx.cfg.split,
        &ctx.train_spec(),
        &ctx.cfg.ols,
    )?;
    eval.write_csv(&ctx.path("errors_by_config.csv"), ctx.comment())?;
    let mut w = Writer::create(&ctx.path("summary_by_config.csv"), ctx.comment())?;
    w.record(["config", "family", "rmse", "mape", "n"])?;
    for s in &eval.summaries {
        w.record([
            s.config.name().to_owned(),
            s.family.name().to_owned(),
            s.rmse.to_string(),
            s.mape.to_string(),
            s.n.to_string(),
        ])?;
        println!(
            "{:<8} {:<4} RMSE {:>10.4}  MAPE {:>8.3}%",
            s.config.name(),
            s.family.name(),
            s.rmse,
            s.mape
        );
    }
    w.finish()
}

/// Most recent `per_country` rows of each country.
fn recent_rows(matrix: &FeatureMatrix, per_country: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for c in 0..matrix.countries.len() {
        let mut rows = matrix.country_rows(c);
        rows.sort_by_key(|&r| (matrix.rows[r].year, std::cmp::Reverse(matrix.rows[r].month_j)));
        out.extend(rows.iter().rev().take(per_country).rev());
    }
    out
}

fn shap_summary_file(config: ConfigId) -> String {
    format!("shap_{config}_summary.csv")
}

pub fn cmd_explain(ctx: &Context) -> Result<()> {
    let panel = ctx.panel()?;
    let settings = &ctx.cfg.explain;
    let mut models = settings.models.clone();
    if !models.contains(&settings.allocation_model) {
        models.push(settings.allocation_model);
    }
    let opts = ShapOptions {
        n_coalitions: settings.n_coalitions,
        force_sampling: false,
    };
    for config in models {
        let model = ctx.model(config.name())?;
        let matrix = assemble(&panel, config, model.tau)?.targeted();
        let background = kmeans_background(&matrix, settings.background_per_country, ctx.cfg.seed)?;
        let rows = recent_rows(&matrix, settings.rows_per_country);
        let summary = shap_summary(&model, &matrix, &rows, &background, &opts, ctx.cfg.seed)?;
        summary.write_values_csv(
            &ctx.path(&format!("shap_{config}_values.csv")),
            &matrix.countries,
            ctx.comment(),
        )?;
        summary.write_summary_csv(&ctx.path(&shap_summary_file(config)), ctx.comment())?;
        println!(
            "explained {config}: {} rows, top feature {}",
            rows.len(),
            summary.features[summary.ranking[0]]
        );

        if config == settings.allocation_model {
            let table =
                ElasticityTable::compute(&model, &matrix, panel.topics(), &settings.perturbation, ctx.cfg.seed)?;
            table.write_csv(&ctx.path("elasticities.csv"), ctx.comment())?;
        }
    }
    Ok(())
}

/// Topics of the highest-ranked annual SVI features in a SHAP summary file.
fn top_topics(path: &Path, n: usize) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    let mut topics: Vec<String> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let prefix = format!("{}[", FeatureSymbol::SviAnnualLag.tag());
        if let Some(rest) = rec[0].strip_prefix(&prefix) {
            let topic = rest.split([';', ']']).next().unwrap_or_default();
            if !topics.iter().any(|t| t == topic) {
                topics.push(topic.to_owned());
            }
        }
        if topics.len() == n {
            break;
        }
    }
    if topics.is_empty() {
        return Err(Error::Schema {
            path: path.to_owned(),
            message: "no annual SVI features ranked".into(),
        });
    }
    Ok(topics)
}

fn monthly_svi(panel: &Panel, country: usize, topics: &[usize]) -> DMatrix<f64> {
    let n = 12 * panel.n_years();
    DMatrix::from_fn(n, topics.len(), |i, j| panel.monthly_svi(country, topics[j])[i])
}

fn monthly_file(method: DisaggMethod) -> String {
    format!("monthly_{method}.csv")
}

pub fn cmd_disagg(ctx: &Context) -> Result<()> {
    let panel = ctx.panel()?;
    let methods = &ctx.cfg.methods;
    let alloc = ctx.cfg.explain.allocation_model;
    // fail on the earliest missing stage first
    let ensemble = ctx.model(alloc.name())?;
    let corrupted_model = if methods.contains(&DisaggMethod::CorruptedInput) {
        Some(ctx.model(SVI_SUM_MODEL)?)
    } else {
        None
    };
    let needs_explain = methods
        .iter()
        .any(|m| matches!(m, DisaggMethod::ChowLin | DisaggMethod::NnElasticity));
    let (summary_path, table) = if needs_explain {
        (
            Some(ctx.require(&shap_summary_file(alloc), "explain")?),
            Some(ElasticityTable::read_csv(&ctx.require("elasticities.csv", "explain")?)?),
        )
    } else {
        (None, None)
    };

    let chow_lin_topics = match (&summary_path, methods.contains(&DisaggMethod::ChowLin)) {
        (Some(p), true) => top_topics(p, ctx.cfg.disagg.chow_lin_topics)?
            .iter()
            .map(|t| {
                panel
                    .topic_index(t)
                    .ok_or_else(|| Error::MissingData(format!("topic {t} not in panel")))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };

    let mut all: Vec<MonthlySeries> = Vec::new();
    let mut raw_corrupted = Vec::new();
    let mut skipped = 0;
    for &method in methods {
        let mut series = Vec::with_capacity(panel.n_countries());
        for (c, name) in panel.countries().iter().enumerate() {
            let (anchors, _) = annual_anchors(&panel, c, Some(&ensemble))?;
            let s = match method {
                DisaggMethod::ChowLin => {
                    let x = monthly_svi(&panel, c, &chow_lin_topics);
                    let fit = chow_lin(&anchors, &x, &ChowLinOptions::default())?;
                    if fit.at_boundary {
                        println!("chow_lin {name}: rho {} is on the grid boundary", fit.rho);
                    }
                    series_of(name, method, &panel, fit.monthly, anchors)
                }
                DisaggMethod::SpTd => {
                    let all_topics: Vec<usize> = (0..panel.n_topics()).collect();
                    let opts = SparseTdOptions {
                        selection: match ctx.cfg.disagg.sparse_cv_folds {
                            Some(folds) => LambdaSelection::CrossValidation { folds },
                            None => LambdaSelection::Bic,
                        },
                        ..SparseTdOptions::default()
                    };
                    let fit = sparse_td(&anchors, &monthly_svi(&panel, c, &all_topics), &opts)?;
                    series_of(name, method, &panel, fit.monthly, anchors)
                }
                DisaggMethod::NnElasticity => {
                    let (s, report) =
                        nn_elasticity_disagg(&panel, c, &anchors, table.as_ref().expect("explain output"))?;
                    skipped += report.skipped.len();
                    s
                }
                DisaggMethod::CorruptedInput => {
                    let model = corrupted_model.as_ref().expect("loaded above");
                    raw_corrupted.push(corrupted_input_disagg(model, &panel, model.tau, c, None)?);
                    corrupted_input_disagg(model, &panel, model.tau, c, Some(&anchors))?
                }
            };
            series.push(s);
        }
        write_monthly_csv(&ctx.path(&monthly_file(method)), &series, ctx.comment())?;
        let worst = series.iter().map(|s| s.max_sum_violation()).fold(0.0, f64::max);
        println!(
            "{method}: {} series, max annual-sum deviation {worst:.2e}",
            series.len()
        );
        all.extend(series);
    }
    if !raw_corrupted.is_empty() {
        // contributions before rescaling to the anchors
        write_monthly_csv(
            &ctx.path("monthly_corrupted_input_raw.csv"),
            &raw_corrupted,
            ctx.comment(),
        )?;
    }
    if skipped > 0 {
        println!("nn_elasticity: {skipped} topic-years with zero search volume were skipped");
    }
    write_comparison_csv(
        &ctx.path("method_correlations.csv"),
        &compare_methods(&all)?,
        ctx.comment(),
    )
}

fn series_of(name: &str, method: DisaggMethod, panel: &Panel, values: Vec<f64>, anchors: Vec<f64>) -> MonthlySeries {
    MonthlySeries {
        country: name.to_owned(),
        method,
        start_year: panel.start_year(),
        values,
        anchors,
        normalized: true,
    }
}

/// `country,year,month,value` into per-country monthly maps.
fn read_external(path: &Path) -> Result<BTreeMap<String, BTreeMap<(i32, u32), f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    let schema = |m: String| Error::Schema {
        path: path.to_owned(),
        message: m,
    };
    let headers = reader
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
    if headers != ["country", "year", "month", "value"] {
        return Err(schema(format!(
            "expected columns country,year,month,value, found {}",
            headers.join(",")
        )));
    }
    let mut out: BTreeMap<String, BTreeMap<(i32, u32), f64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let year = rec[1].parse().map_err(|_| schema(format!("bad year `{}`", &rec[1])))?;
        let month = rec[2].parse().map_err(|_| schema(format!("bad month `{}`", &rec[2])))?;
        let value = rec[3].parse().map_err(|_| schema(format!("bad value `{}`", &rec[3])))?;
        out.entry(rec[0].to_owned()).or_default().insert((year, month), value);
    }
    Ok(out)
}

pub fn cmd_validate(ctx: &Context, external: Option<&Path>) -> Result<()> {
    let settings = &ctx.cfg.validate;
    let mut files = Vec::new();
    for &m in &ctx.cfg.methods {
        files.push((m, ctx.require(&monthly_file(m), "disagg")?));
    }
    let external = match external.map(Path::to_path_buf).or_else(|| settings.external.clone()) {
        Some(p) => p,
        None => ctx.require(TRUTH_FILE, "ingest").map_err(|_| {
            Error::Config("no external monthly series: set `validate.external` or pass --external".into())
        })?,
    };
    let reference = read_external(&external)?;

    let mut w = Writer::create(&ctx.path("lag_correlations.csv"), ctx.comment())?;
    w.record(["series_a", "series_b", "lag", "r", "p", "n", "significant"])?;
    for (method, path) in files {
        for s in read_monthly_csv(&path)? {
            let Some(ext) = reference.get(&s.country) else {
                continue;
            };
            let pairs: Vec<(f64, f64)> = s.entries().filter_map(|(k, v)| ext.get(&k).map(|e| (v, *e))).collect();
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let rows = lagged_correlation(&growth_rates(&a)?, &growth_rates(&b)?, settings.max_lag)?;
            for r in rows {
                w.record([
                    format!("{method}:{}", s.country),
                    format!("external:{}", s.country),
                    r.lag.to_string(),
                    r.r.to_string(),
                    r.p_value.to_string(),
                    r.n.to_string(),
                    r.is_significant(settings.alpha).to_string(),
                ])?;
            }
        }
    }
    w.finish()?;
    println!("wrote {}", ctx.path("lag_correlations.csv").display());
    Ok(())
}
