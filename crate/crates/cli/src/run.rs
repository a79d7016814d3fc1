//! Pipeline orchestration: every artifact is written to a staging directory
//! that is moved into place only when its stage sequence succeeds.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Deserialize;
use u5mr_core::hyper::{self, HyperFile};
use u5mr_core::ingest::{self, BirthsTable, SchemaConfig};
use u5mr_core::model::{Model, ModelConfig};
use u5mr_core::output;
use u5mr_core::par::{self, Execution};
use u5mr_core::project::{GlobalChangeDist, TrajectoryPoint};
use u5mr_core::sampler::{self, Posterior, SamplerConfig};
use u5mr_core::validate::{self, Fits, ValidationConfig};
use u5mr_core::{Error as CoreError, Observation};

use crate::args::{Args, Mode};
use crate::plot;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_SAMPLER: u8 = 3;
pub const EXIT_DIAGNOSTICS: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    model: ModelConfig,
    validation: ValidationConfig,
    schema: SchemaConfig,
    births: Option<PathBuf>,
}

fn classify(e: &anyhow::Error, fallback: u8) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return match c {
                CoreError::Config(_) | CoreError::SamplerConfig(_) | CoreError::MissingHyperparameter(_) => EXIT_CONFIG,
                CoreError::NonFiniteInit { .. } | CoreError::Degenerate(_) => EXIT_SAMPLER,
                CoreError::Io { .. }
                | CoreError::Csv { .. }
                | CoreError::Header { .. }
                | CoreError::Data(_)
                | CoreError::MissingBirths { .. }
                | CoreError::Basis(_)
                | CoreError::OutsideSpan { .. }
                | CoreError::OverlappingPeriods { .. }
                | CoreError::Unrouteable(_) => EXIT_DATA,
                _ => fallback,
            };
        }
    }
    fallback
}

fn stage<T, E>(name: &str, fallback: u8, r: Result<T, E>) -> Result<T, Failure>
where
    E: Into<anyhow::Error>,
{
    r.map_err(|e| {
        let e = e.into();
        Failure {
            code: classify(&e, fallback),
            error: e.context(format!("stage `{name}` failed")),
        }
    })
}

/// Output staging area, removed on drop unless committed.
struct Staging {
    dir: PathBuf,
    out: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(out: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("output directory {} is not writable", out.display()))?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            committed: false,
        })
    }

    fn path(&self, rel: &str) -> anyhow::Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).with_context(|| format!("cannot write {}", p.display()))
    }

    fn commit(mut self) -> anyhow::Result<usize> {
        let mut n = 0;
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            } else if target.exists() {
                fs::remove_file(&target)?;
            }
            fs::rename(entry.path(), &target)?;
            n += 1;
        }
        fs::remove_dir_all(&self.dir)?;
        self.committed = true;
        Ok(n)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

struct Plan {
    model: ModelConfig,
    validation: ValidationConfig,
    sampler: SamplerConfig,
    schema: SchemaConfig,
    births: Option<PathBuf>,
}

fn plan(args: &Args) -> anyhow::Result<Plan> {
    let file: FileConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let mut model = file.model;
    if let Some(h) = args.horizon {
        model.projection_end = Some(h);
    }
    model.validate()?;
    let mut validation = file.validation;
    validation.seed = args.seed;
    if let Some(c) = args.cutoff {
        validation.cutoff_year = c;
    }
    if let Some(n) = args.n_sets {
        validation.n_sets = n;
    }
    validation.validate()?;
    let mut sampler = match args.mode {
        Mode::Country => SamplerConfig::country_default(args.seed),
        _ => SamplerConfig::global_default(args.seed),
    };
    if let Some(v) = args.chains {
        sampler.n_chains = v;
    }
    if let Some(v) = args.iters {
        sampler.n_iter = v;
    }
    if let Some(v) = args.burn {
        sampler.burn_in = v;
    }
    if let Some(v) = args.thin {
        sampler.thin = v;
    }
    sampler.execution = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    sampler.validate()?;
    let weights: Vec<f64> = std::iter::once(args.w).chain(args.w_sweep.iter().copied()).collect();
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(CoreError::Config(format!("pooling weight {w} outside [0, 1]")).into());
    }
    if args.mode == Mode::Country && args.hyper.is_none() {
        return Err(CoreError::Config("country mode needs --hyper".into()).into());
    }
    Ok(Plan {
        model,
        validation,
        sampler,
        schema: file.schema,
        births: file.births,
    })
}

fn load(args: &Args, plan: &Plan) -> anyhow::Result<Vec<Observation>> {
    let parsed = ingest::parse_observations(&args.data, &plan.schema)?;
    for r in &parsed.rejections {
        eprintln!("warning: {} line {}: {}", args.data.display(), r.line, r.reason);
    }
    let mut obs = parsed.observations;
    if let Some(b) = &plan.births {
        BirthsTable::read(b)?.attach(&mut obs);
    }
    if args.mode == Mode::Country && !args.countries.is_empty() {
        let keep: BTreeSet<&str> = args.countries.iter().map(String::as_str).collect();
        obs.retain(|o| keep.contains(o.country.as_str()));
    }
    if obs.is_empty() {
        return Err(CoreError::Data("no usable observations".into()).into());
    }
    Ok(obs)
}

fn diagnostics_failure(label: &str, post: &Posterior, args: &Args) -> Option<String> {
    let worst = output::max_rhat(&post.diagnostics)?;
    (args.strict && worst > args.rhat_max).then(|| format!("{label}: max R-hat {worst:.3} exceeds {}", args.rhat_max))
}

/// Estimates, traces, diagnostics and plots of one fitted model.
fn write_fit(
    st: &Staging,
    args: &Args,
    model: &Model,
    observations: &[Observation],
    post: &Posterior,
    dist: GlobalChangeDist,
    exec: Execution,
) -> anyhow::Result<()> {
    let rows = output::estimates(model, post, dist, args.w, args.seed, exec)?;
    let path = st.path("estimates.csv")?;
    let file = fs::File::create(&path)?;
    output::write_estimates(std::io::BufWriter::new(file), &rows, &path)?;
    let traces = st.dir.join("traces");
    fs::create_dir_all(&traces)?;
    output::write_traces(&traces, model, post)?;
    st.write("diagnostics.json", output::diagnostics_json(post, args.rhat_max)?)?;
    if args.no_plots {
        return Ok(());
    }
    let wanted: BTreeSet<&str> = args.countries.iter().map(String::as_str).collect();
    for w in wanted.iter().filter(|c| model.country_index(c).is_none()) {
        eprintln!("warning: requested country {w} not in the data");
    }
    for c in &model.countries {
        if !wanted.is_empty() && !wanted.contains(c.code.as_str()) {
            continue;
        }
        let traj: Vec<TrajectoryPoint> = rows
            .iter()
            .filter(|r| r.country == c.code)
            .map(|r| TrajectoryPoint {
                year: r.year,
                median: r.median,
                lower: r.lower90,
                upper: r.upper90,
            })
            .collect();
        st.write(
            &format!("plots/{}.svg", c.code),
            plot::country_svg(c, observations, &traj),
        )?;
    }
    Ok(())
}

pub fn run(args: &Args) -> Result<String, Failure> {
    let plan = stage("config", EXIT_CONFIG, plan(args))?;
    let st = stage("output", EXIT_CONFIG, Staging::new(&args.out))?;
    let observations = stage("ingest", EXIT_DATA, load(args, &plan))?;
    let exec = plan.sampler.execution;

    let diag_problems = par::with_threads(args.jobs, || -> Result<Vec<String>, Failure> {
        match args.mode {
            Mode::Global | Mode::Country => {
                let model = stage("assemble", EXIT_DATA, Model::assemble(&observations, &plan.model))?;
                for w in &model.warnings {
                    eprintln!("warning: {w}");
                }
                let (post, dist) = if args.mode == Mode::Global {
                    let post = stage("fit", EXIT_SAMPLER, sampler::run_global(&model, &plan.sampler))?;
                    let hf = stage("export", EXIT_SAMPLER, hyper::export(&model, &post))?;
                    let dist = stage(
                        "projection",
                        EXIT_SAMPLER,
                        hf.projection
                            .ok_or_else(|| anyhow!("global change distribution is not estimable from this fit")),
                    )?;
                    stage(
                        "export",
                        EXIT_SAMPLER,
                        hf.to_toml()
                            .map_err(anyhow::Error::from)
                            .and_then(|t| st.write("hyperparameters.toml", t)),
                    )?;
                    (post, dist)
                } else {
                    let path = args.hyper.as_ref().expect("checked in plan");
                    let hf: HyperFile = stage("hyperparameters", EXIT_CONFIG, HyperFile::read(path))?;
                    let dist = stage(
                        "hyperparameters",
                        EXIT_CONFIG,
                        hf.projection
                            .ok_or_else(|| CoreError::Config(format!("{} has no [projection] table", path.display()))),
                    )?;
                    let post = stage(
                        "fit",
                        EXIT_SAMPLER,
                        sampler::run_country(&model, &hf.global, &plan.sampler),
                    )?;
                    (post, dist)
                };
                stage(
                    "write",
                    EXIT_DATA,
                    write_fit(&st, args, &model, &observations, &post, dist, exec),
                )?;
                Ok(diagnostics_failure("fit", &post, args).into_iter().collect())
            }
            Mode::Validate | Mode::WSweep => {
                let (train, test, tm, tp, fm, fp) = stage(
                    "fit",
                    EXIT_SAMPLER,
                    validate::fit_both(&observations, &plan.model, &plan.sampler, plan.validation.cutoff_year),
                )?;
                let weights = if args.mode == Mode::WSweep {
                    args.w_sweep.clone()
                } else {
                    vec![args.w]
                };
                let fits = Fits {
                    training_model: &tm,
                    training: &tp,
                    full_model: &fm,
                    full: &fp,
                    test: &test,
                    training_obs: &train,
                };
                let report = stage(
                    "validate",
                    EXIT_SAMPLER,
                    validate::run_validation(&fits, &weights, &plan.validation, exec),
                )?;
                let written = (|| -> anyhow::Result<()> {
                    let path = st.path("validation_report.csv")?;
                    report.write_csv(fs::File::create(&path)?, &path)?;
                    st.write("validation_summary.txt", report.summary_text())?;
                    st.write(
                        "diagnostics_training.json",
                        output::diagnostics_json(&tp, args.rhat_max)?,
                    )?;
                    st.write("diagnostics_full.json", output::diagnostics_json(&fp, args.rhat_max)?)?;
                    Ok(())
                })();
                stage("write", EXIT_DATA, written)?;
                Ok([("training fit", &tp), ("full fit", &fp)]
                    .into_iter()
                    .filter_map(|(l, p)| diagnostics_failure(l, p, args))
                    .collect())
            }
        }
    })?;

    let n = stage("output", EXIT_DATA, st.commit())?;
    if !diag_problems.is_empty() {
        return Err(Failure {
            code: EXIT_DIAGNOSTICS,
            error: anyhow!("stage `diagnostics` failed: {}", diag_problems.join("; ")),
        });
    }
    Ok(format!("wrote {n} artifacts to {}", args.out.display()))
}
