//! The end-to-end stages behind the command-line tool. Each stage reads and
//! writes files in a run directory; see [`crate::config::files`].

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{export_embeddings, tsne_project, write_projection, AnalysisError, EmbeddingTable};
use crate::baselines::{
    load_wide_deep, save_wide_deep, BaselineError, JcceRanker, RandomRanker, Ranker, Toppop, ToppopTemporal,
    WideDeep,
};
use crate::config::{files, ConfigError, Method, RunConfig};
use crate::datagen::{generate, GenConfigError};
use crate::eval::{
    evaluate, pairwise_mcnemar, write_curve, write_mcnemar, write_table, EvalError, EvalReport,
};
use crate::features::{
    filter_events, load_events, save_events, temporal_split, Catalog, ContextQuery, FeatureError, FeatureSpace,
    Schema, ViewingEvent,
};
use crate::model::{load_model, save_model, train_with_progress, EncoderConfig, JcceModel, ModelError};
use crate::serve::{Recommendation, ServeError, Snapshot};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: &'static str },
    #[error(transparent)]
    Generator(#[from] GenConfigError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("method {0} has no model to {1}")]
    Unsupported(&'static str, &'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// Stable short code for one-line error reports.
    pub fn code(&self) -> &'static str {
        use PipelineError::*;
        match self {
            Config(_) | Generator(_) | Unsupported(..) => "config",
            MissingInput { .. } => "missing_input",
            Feature(FeatureError::UnknownAttribute(_)) | Serve(ServeError::UnknownAttribute(_)) => {
                "unknown_attribute"
            }
            Model(ModelError::Fingerprint { .. }) => "schema_mismatch",
            Model(ModelError::Version { .. } | ModelError::Corrupt(_))
            | Baseline(BaselineError::Version { .. } | BaselineError::Corrupt(_)) => "bad_model_file",
            Model(ModelError::Divergence { .. }) | Baseline(BaselineError::Divergence { .. }) => "diverged",
            Feature(_) | Serve(ServeError::Unencodable(_) | ServeError::BadRequest(_)) => "invalid_data",
            Model(ModelError::Config(_)) | Baseline(BaselineError::Config(_)) | Eval(EvalError::Config(_)) => {
                "config"
            }
            Analysis(AnalysisError::Config(_)) => "config",
            _ => "failure",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "config" => 3,
            "missing_input" => 4,
            "unknown_attribute" => 5,
            "schema_mismatch" => 6,
            "invalid_data" => 7,
            "diverged" => 8,
            "bad_model_file" => 9,
            _ => 1,
        }
    }
}

/// A resolved configuration bound to its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub schema: Schema,
}

impl Run {
    /// Validates the config, creates the run directory and records the
    /// resolved config in it.
    pub fn open(config: RunConfig, dir_override: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let schema = config.schema()?;
        let dir = dir_override.unwrap_or_else(|| config.run_dir());
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(files::CONFIG), config.to_json())?;
        Ok(Run { config, dir, schema })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&self, path: PathBuf, hint: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::MissingInput { path, hint })
        }
    }

    pub fn model_path(&self, method: Method) -> PathBuf {
        self.path(&files::model(method))
    }

    fn events_input(&self) -> Result<PathBuf> {
        match &self.config.data.events {
            Some(p) => self.input(p.clone(), "configured event log not found"),
            None => self.input(self.path(files::EVENTS), "run `datagen` first"),
        }
    }

    pub fn train_events(&self) -> Result<Vec<ViewingEvent>> {
        let p = self.input(self.path(files::TRAIN), "run `prepare` first")?;
        Ok(load_events(&p, &self.schema)?)
    }

    pub fn test_events(&self) -> Result<Vec<ViewingEvent>> {
        let p = self.input(self.path(files::TEST), "run `prepare` first")?;
        Ok(load_events(&p, &self.schema)?)
    }

    /// Loads a JCCE-family model and checks it against the run schema.
    pub fn load_jcce(&self, path: Option<&Path>, method: Method) -> Result<JcceModel> {
        if !matches!(method, Method::Jcce | Method::LJcce) {
            return Err(PipelineError::Unsupported(method.name(), "embed"));
        }
        let p = match path {
            Some(p) => self.input(p.to_path_buf(), "model file not found")?,
            None => self.input(self.model_path(method), "run `train` first")?,
        };
        let model = load_model(&p)?;
        model.check_schema(&self.schema)?;
        Ok(model)
    }
}

pub fn datagen(run: &Run) -> Result<usize> {
    let events = generate(&run.config.generator_for_run())?;
    save_events(&events, &run.schema, &run.path(files::EVENTS))?;
    Ok(events.len())
}

/// Filters the event log and splits it temporally; returns (train, test)
/// sizes.
pub fn prepare(run: &Run) -> Result<(usize, usize)> {
    let events = load_events(&run.events_input()?, &run.schema)?;
    let d = &run.config.data;
    let kept = filter_events(events, d.min_duration_minutes, d.min_content_count);
    let (train, test) = temporal_split(kept, d.train_fraction)?;
    save_events(&train, &run.schema, &run.path(files::TRAIN))?;
    save_events(&test, &run.schema, &run.path(files::TEST))?;
    Ok((train.len(), test.len()))
}

/// Trains one method and writes its model file and loss log. `progress`
/// receives one human-readable line per epoch.
pub fn train(run: &Run, method: Method, mut progress: impl FnMut(&str)) -> Result<PathBuf> {
    let events = run.train_events()?;
    let space = FeatureSpace::fit(&events, &run.schema)?;
    let cfg = &run.config;
    let out = run.model_path(method);
    match method {
        Method::Jcce | Method::LJcce => {
            let (content, context) = if method == Method::Jcce {
                (cfg.content_encoder.clone(), cfg.context_encoder.clone())
            } else {
                let lin = EncoderConfig::linear(cfg.linear_embed_dim);
                (lin.clone(), lin)
            };
            let (model, log) = train_with_progress(&events, space, content, context, &cfg.train_for(method), |e| {
                progress(&format!(
                    "{} epoch {} train_loss {:.6} val_loss {:.6}{}",
                    method.name(),
                    e.epoch,
                    e.train_loss,
                    e.val_loss,
                    if e.is_best { " *" } else { "" }
                ))
            })?;
            save_model(&model, &out)?;
            log.save_csv(&run.path(&files::train_log(method)))?;
        }
        Method::WideDeep => {
            let (model, log) = WideDeep::train_with_progress(&events, space, cfg.wide_deep_for_run(), |epoch, loss| {
                progress(&format!("wide_deep epoch {epoch} train_loss {loss:.6}"))
            })?;
            save_wide_deep(&model, &out)?;
            let mut w = csv::Writer::from_path(run.path(&files::train_log(method))).map_err(std::io::Error::from)?;
            w.write_record(["epoch", "train_loss"]).map_err(std::io::Error::from)?;
            for (i, l) in log.losses.iter().enumerate() {
                w.write_record([(i + 1).to_string(), l.to_string()]).map_err(std::io::Error::from)?;
            }
            w.flush()?;
        }
        _ => return Err(PipelineError::Unsupported(method.name(), "train")),
    }
    Ok(out)
}

fn ranker(run: &Run, method: Method, catalog: &Catalog, train: &[ViewingEvent]) -> Result<Box<dyn Ranker>> {
    Ok(match method {
        Method::Random => Box::new(RandomRanker::new(catalog.clone(), run.config.stage_seed("eval/random"))),
        Method::Toppop => {
            let mut t = Toppop::new(catalog.clone());
            t.fit(train);
            Box::new(t)
        }
        Method::ToppopTemporal => {
            let mut t = ToppopTemporal::new(catalog.clone());
            t.fit(train);
            Box::new(t)
        }
        Method::WideDeep => {
            let p = run.input(run.model_path(method), "run `train` first")?;
            let m = load_wide_deep(&p)?;
            if m.space().schema().fingerprint() != run.schema.fingerprint() {
                return Err(ModelError::Fingerprint {
                    expected: run.schema.fingerprint(),
                    found: m.space().schema().fingerprint(),
                }
                .into());
            }
            Box::new(m)
        }
        Method::Jcce | Method::LJcce => Box::new(JcceRanker::new(method.name(), run.load_jcce(None, method)?)?),
    })
}

/// Evaluates every configured method on the test split and writes the
/// results table, hit-ratio curves and pairwise McNemar tests.
pub fn evaluate_all(run: &Run) -> Result<Vec<EvalReport>> {
    let train = run.train_events()?;
    let test = run.test_events()?;
    let catalog = Catalog::from_events(&train)?;
    let cfg = &run.config.eval;
    let mut ks = cfg.ks.clone();
    ks.push(cfg.mcnemar_k);
    ks.sort_unstable();
    ks.dedup();
    let mut reports = Vec::new();
    for &m in &cfg.methods {
        let r = ranker(run, m, &catalog, &train)?;
        reports.push(evaluate(r.as_ref(), &test, &ks)?);
    }
    write_table(&reports, std::fs::File::create(run.path(files::TABLE))?)?;
    write_curve(&reports, std::fs::File::create(run.path(files::CURVE))?)?;
    let tests = pairwise_mcnemar(&reports, cfg.mcnemar_k)?;
    write_mcnemar(&tests, std::fs::File::create(run.path(files::MCNEMAR))?)?;
    Ok(reports)
}

/// Top-`k` recommendation for an ad-hoc context given as `name=value`
/// pairs.
pub fn recommend(model: JcceModel, attrs: &[String], k: usize) -> Result<Recommendation> {
    let query = ContextQuery::from_pairs(attrs)?;
    Ok(Snapshot::new(model)?.recommend(&query, k)?)
}

pub fn export(run: &Run, model: &JcceModel) -> Result<EmbeddingTable> {
    let test = run.test_events()?;
    let n = run.config.analysis.sample_size.min(test.len());
    let table = export_embeddings(model, &test, n, run.config.stage_seed("export"))?;
    table.save(&run.path(files::EMBEDDINGS))?;
    Ok(table)
}

pub fn project(run: &Run, input: Option<&Path>, output: Option<&Path>) -> Result<PathBuf> {
    let input = match input {
        Some(p) => run.input(p.to_path_buf(), "embedding table not found")?,
        None => run.input(run.path(files::EMBEDDINGS), "run `export-embeddings` first")?,
    };
    let table = EmbeddingTable::load(&input)?;
    let res = tsne_project(&table.matrix(), &run.config.tsne_for_run())?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| run.path(files::PROJECTION));
    write_projection(&table, &res.coords, std::fs::File::create(&out)?)?;
    Ok(out)
}
