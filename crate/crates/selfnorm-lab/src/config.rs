//! Run configuration: JSON schema, parsing, and subcommand orchestration.
//!
//! A run is described by one JSON document.  The `experiment` block maps onto
//! [`ExperimentConfig`]; subcommand-specific blocks (`mdp`,
//! `coverage`, `bpre_ci`) carry the extra parameters of those diagnostics,
//! and an optional `assert` block holds the thresholds enforced when the CLI
//! is invoked with `--assert`.  Unknown keys anywhere in the document are
//! rejected so a typo cannot silently disable a check.

use crate::bpre_infer::{self, read_trajectory_csv, LoadedTrajectory};
use crate::error::{LabError, Result};
use crate::mc_lab::{
    coverage_experiment, estimate_tail_curve, fit_envelope_constant, kolmogorov_distance,
    ln_z_tail_probe, log_ratio_curve, mdp_diagnostic, probe_variance_concentration,
    DegeneratePolicy, ExperimentConfig, ModelSpec, StatisticKind, TailSide,
};
use crate::models::{BpreModel, IidModel, MdsModel};
use crate::report;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Default population size above which reproduction switches from exact
/// per-individual sampling to a matched-moment approximation.
const DEFAULT_EXACT_THRESHOLD: u64 = 1_000_000;

fn default_min_expected_hits() -> f64 {
    50.0
}
fn default_rho() -> f64 {
    1.0
}
fn default_envelope_c() -> f64 {
    1.0
}
fn default_exact_threshold() -> u64 {
    DEFAULT_EXACT_THRESHOLD
}
fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentDto {
    weight: f64,
    /// Offspring distribution as a map from count to probability.
    pmf: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelDto {
    /// `law` selects the increment distribution; the remaining fields are
    /// that law's parameters (`half_width` for `uniform`, `up`/`p_up` for
    /// `two_point`, `values`/`probs` for `discrete`).
    Iid {
        law: String,
        half_width: Option<f64>,
        up: Option<f64>,
        p_up: Option<f64>,
        values: Option<Vec<f64>>,
        probs: Option<Vec<f64>>,
    },
    Mds {
        beta: f64,
    },
    Bpre {
        environments: Vec<EnvironmentDto>,
        #[serde(default = "default_exact_threshold")]
        exact_threshold: u64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
enum StatisticDto {
    W,
    T,
    #[serde(rename = "W_block")]
    WBlock {
        m: usize,
    },
    N,
    S,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TailDto {
    Upper,
    Lower,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DegenerateDto {
    Error,
    Skip,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentDto {
    model: ModelDto,
    /// Defaults to `W` for increment models and `N` for population models.
    statistic: Option<StatisticDto>,
    n: usize,
    #[serde(default)]
    n0: usize,
    replications: u64,
    x_grid: Vec<f64>,
    #[serde(default = "default_min_expected_hits")]
    min_expected_hits: f64,
    tail: Option<TailDto>,
    degenerate: Option<DegenerateDto>,
    #[serde(default)]
    enumerate: bool,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default = "default_envelope_c")]
    envelope_c: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDto {
    a_values: Vec<f64>,
    b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoverageDto {
    #[serde(default = "default_level")]
    level: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BpreCiDto {
    /// Path to a `generation,population` CSV file.
    trajectory: String,
    /// Absolute generation at which the ratio window starts; defaults to the
    /// first recorded generation.
    n0: Option<usize>,
    /// Window length in ratios; defaults to the whole trajectory.
    n: Option<usize>,
    #[serde(default = "default_level")]
    level: f64,
}

/// Thresholds enforced under `--assert`.  Each field applies to the
/// subcommands that produce the corresponding quantity; irrelevant fields
/// are ignored by other subcommands.
#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AssertSpec {
    /// `tail`: every retained ratio must lie in this closed interval.
    pub ratio_in: Option<[f64; 2]>,
    /// `tail`: every defined |log ratio| must stay at or below this bound.
    pub max_abs_log_ratio: Option<f64>,
    /// `logratio`: every quotient must lie in this closed interval.
    pub quotient_in: Option<[f64; 2]>,
    /// `mdp`: every estimated rate must lie in this closed interval.
    pub rate_in: Option<[f64; 2]>,
    /// `ks`: the Kolmogorov distance must stay strictly below this bound.
    pub ks_below: Option<f64>,
    /// `probe-variance`: the fitted slope must stay at or below this bound.
    pub slope_at_most: Option<f64>,
    /// `coverage`: the empirical coverage must lie in this closed interval.
    pub coverage_in: Option<[f64; 2]>,
    /// `lnz-tail`: pairs `[x, bound]`; the exceedance estimate at grid point
    /// `x` must stay at or below `bound`.
    pub exceedance_at_most: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigDto {
    experiment: Option<ExperimentDto>,
    seed: Option<u64>,
    workers: Option<usize>,
    /// Also emit an SVG ratio plot for curve-producing subcommands.
    #[serde(default)]
    svg: bool,
    mdp: Option<MdpDto>,
    coverage: Option<CoverageDto>,
    bpre_ci: Option<BpreCiDto>,
    #[serde(rename = "assert")]
    assert_spec: Option<AssertSpec>,
}

/// A parsed and validated run description.
pub struct RunConfig {
    /// Built experiment; present whenever the document has an `experiment`
    /// block (every subcommand except `bpre-ci` requires one).
    pub experiment: Option<ExperimentConfig>,
    /// Seed from the document; the CLI `--seed` flag overrides it.
    pub seed: Option<u64>,
    /// Worker count from the document; `--workers` and the environment
    /// variable override it.
    pub workers: Option<usize>,
    pub svg: bool,
    pub mdp: Option<(Vec<f64>, f64)>,
    pub coverage_level: Option<f64>,
    pub bpre_ci: Option<BpreCiSpec>,
    pub assert_spec: Option<AssertSpec>,
}

/// Parameters of the trajectory-file confidence-interval subcommand.
pub struct BpreCiSpec {
    pub trajectory: PathBuf,
    pub n0: Option<usize>,
    pub n: Option<usize>,
    pub level: f64,
}

struct IidFields {
    half_width: Option<f64>,
    up: Option<f64>,
    p_up: Option<f64>,
    values: Option<Vec<f64>>,
    probs: Option<Vec<f64>>,
}

impl IidFields {
    /// Rejects parameters that belong to a different law than the one named,
    /// so a config cannot silently carry ignored settings.
    fn reject_foreign(&self, law: &str, allowed: &[&str]) -> Result<()> {
        let present: [(&str, bool); 5] = [
            ("half_width", self.half_width.is_some()),
            ("up", self.up.is_some()),
            ("p_up", self.p_up.is_some()),
            ("values", self.values.is_some()),
            ("probs", self.probs.is_some()),
        ];
        for (name, is_set) in present {
            if is_set && !allowed.contains(&name) {
                return Err(LabError::Config(format!(
                    "field `{name}` does not apply to law `{law}`"
                )));
            }
        }
        Ok(())
    }

    fn require_f64(field: Option<f64>, law: &str, name: &str) -> Result<f64> {
        field.ok_or_else(|| LabError::Config(format!("law `{law}` requires field `{name}`")))
    }

    fn require_vec(field: Option<Vec<f64>>, law: &str, name: &str) -> Result<Vec<f64>> {
        field.ok_or_else(|| LabError::Config(format!("law `{law}` requires field `{name}`")))
    }
}

fn build_iid(law: &str, fields: IidFields) -> Result<IidModel> {
    match law {
        "rademacher" => {
            fields.reject_foreign(law, &[])?;
            Ok(IidModel::rademacher())
        }
        "uniform" => {
            fields.reject_foreign(law, &["half_width"])?;
            IidModel::uniform(IidFields::require_f64(fields.half_width, law, "half_width")?)
        }
        "two_point" => {
            fields.reject_foreign(law, &["up", "p_up"])?;
            let up = IidFields::require_f64(fields.up, law, "up")?;
            let p_up = IidFields::require_f64(fields.p_up, law, "p_up")?;
            IidModel::two_point(up, p_up)
        }
        "discrete" => {
            fields.reject_foreign(law, &["values", "probs"])?;
            let values = IidFields::require_vec(fields.values, law, "values")?;
            let probs = IidFields::require_vec(fields.probs, law, "probs")?;
            IidModel::discrete(values, probs)
        }
        other => Err(LabError::Config(format!(
            "unknown law `{other}`; expected one of rademacher, uniform, two_point, discrete"
        ))),
    }
}

fn build_pmf(pmf: BTreeMap<String, f64>) -> Result<Vec<(u64, f64)>> {
    let mut entries = Vec::with_capacity(pmf.len());
    for (key, prob) in pmf {
        let count: u64 = key.parse().map_err(|_| {
            LabError::Config(format!(
                "offspring count `{key}` is not a non-negative integer"
            ))
        })?;
        entries.push((count, prob));
    }
    Ok(entries)
}

fn build_model(dto: ModelDto) -> Result<ModelSpec> {
    match dto {
        ModelDto::Iid {
            law,
            half_width,
            up,
            p_up,
            values,
            probs,
        } => Ok(ModelSpec::Iid(build_iid(
            &law,
            IidFields {
                half_width,
                up,
                p_up,
                values,
                probs,
            },
        )?)),
        ModelDto::Mds { beta } => Ok(ModelSpec::Mds(MdsModel::new(beta)?)),
        ModelDto::Bpre {
            environments,
            exact_threshold,
        } => {
            let mut states = Vec::with_capacity(environments.len());
            for env in environments {
                states.push((env.weight, build_pmf(env.pmf)?));
            }
            Ok(ModelSpec::Bpre {
                model: BpreModel::new(states)?,
                exact_threshold,
            })
        }
    }
}

fn build_experiment(dto: ExperimentDto, seed: u64) -> Result<ExperimentConfig> {
    let model = build_model(dto.model)?;
    let statistic = match dto.statistic {
        Some(StatisticDto::W) => StatisticKind::W,
        Some(StatisticDto::T) => StatisticKind::T,
        Some(StatisticDto::WBlock { m }) => StatisticKind::WBlock { m },
        Some(StatisticDto::N) => StatisticKind::N,
        Some(StatisticDto::S) => StatisticKind::S,
        None => match &model {
            ModelSpec::Bpre { .. } => StatisticKind::N,
            _ => StatisticKind::W,
        },
    };
    Ok(ExperimentConfig {
        model,
        statistic,
        n: dto.n,
        n0: dto.n0,
        replications: dto.replications,
        x_grid: dto.x_grid,
        seed,
        min_expected_hits: dto.min_expected_hits,
        tail: match dto.tail {
            Some(TailDto::Lower) => TailSide::Lower,
            _ => TailSide::Upper,
        },
        degenerate: match dto.degenerate {
            Some(DegenerateDto::Error) => DegeneratePolicy::Error,
            _ => DegeneratePolicy::SkipAndReport,
        },
        enumerate: dto.enumerate,
        rho: dto.rho,
        envelope_c: dto.envelope_c,
    })
}

/// Parses a JSON run configuration.  Model-level mass and weight checks run
/// here, so a malformed offspring law (including any mass on zero offspring)
/// is rejected before any simulation starts.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let dto: RunConfigDto = serde_json::from_str(text)
        .map_err(|e| LabError::Config(format!("invalid run configuration: {e}")))?;
    // The experiment is built with a placeholder seed of 0; `execute`
    // installs the effective seed before validation.
    let experiment = dto
        .experiment
        .map(|block| build_experiment(block, 0))
        .transpose()?;
    Ok(RunConfig {
        experiment,
        seed: dto.seed,
        workers: dto.workers,
        svg: dto.svg,
        mdp: dto.mdp.map(|m| (m.a_values, m.b)),
        coverage_level: dto.coverage.map(|c| c.level),
        bpre_ci: dto.bpre_ci.map(|c| BpreCiSpec {
            trajectory: PathBuf::from(c.trajectory),
            n0: c.n0,
            n: c.n,
            level: c.level,
        }),
        assert_spec: dto.assert_spec,
    })
}

/// The CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Tail,
    Logratio,
    Mdp,
    Ks,
    ProbeVariance,
    LnzTail,
    BpreSim,
    BpreCi,
    Coverage,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Tail => "tail",
            Subcommand::Logratio => "logratio",
            Subcommand::Mdp => "mdp",
            Subcommand::Ks => "ks",
            Subcommand::ProbeVariance => "probe-variance",
            Subcommand::LnzTail => "lnz-tail",
            Subcommand::BpreSim => "bpre-sim",
            Subcommand::BpreCi => "bpre-ci",
            Subcommand::Coverage => "coverage",
        }
    }

    /// Whether the subcommand draws random numbers (and therefore needs a
    /// seed from the document or the command line).
    fn is_stochastic(self) -> bool {
        !matches!(self, Subcommand::BpreCi)
    }
}

/// Everything `execute` needs beyond the parsed document.
pub struct RunContext {
    pub subcommand: Subcommand,
    pub out_dir: PathBuf,
    /// `--seed`; overrides the document seed.
    pub seed_override: Option<u64>,
    /// `--workers` / environment override; the document value is the last
    /// fallback before "all cores".
    pub workers_override: Option<usize>,
    /// Enforce the document's `assert` block.
    pub assert_enabled: bool,
    /// SHA-256 of the raw configuration bytes, for the run log.
    pub config_sha256: String,
}

struct AssertOutcome {
    checked: Vec<String>,
    failures: Vec<String>,
}

impl AssertOutcome {
    fn new() -> Self {
        AssertOutcome {
            checked: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn check(&mut self, label: String, ok: bool) {
        if ok {
            self.checked.push(label);
        } else {
            self.failures.push(label);
        }
    }

    fn into_result(self) -> Result<Vec<String>> {
        if self.failures.is_empty() {
            Ok(self.checked)
        } else {
            Err(LabError::AssertFailed(self.failures.join("; ")))
        }
    }
}

fn require_experiment(config: &RunConfig) -> Result<&ExperimentConfig> {
    config.experiment.as_ref().ok_or_else(|| {
        LabError::Config("this subcommand requires an `experiment` block".into())
    })
}

fn resolve_assert_spec<'a>(
    config: &'a RunConfig,
    ctx: &RunContext,
) -> Result<Option<&'a AssertSpec>> {
    if !ctx.assert_enabled {
        return Ok(None);
    }
    config.assert_spec.as_ref().map(Some).ok_or_else(|| {
        LabError::Config("--assert was passed but the configuration has no `assert` block".into())
    })
}

/// Runs one subcommand end to end: resolves the effective seed and worker
/// count, executes the experiment inside a dedicated thread pool, writes the
/// output files into `out_dir`, evaluates `--assert` thresholds, and appends
/// the run log.  Returns the list of files written (relative to `out_dir`).
pub fn execute(config: &RunConfig, ctx: &RunContext) -> Result<Vec<String>> {
    let seed = match ctx.seed_override.or(config.seed) {
        Some(seed) => seed,
        None => {
            if ctx.subcommand.is_stochastic() {
                return Err(LabError::Config(format!(
                    "subcommand `{}` needs a seed (config `seed` or --seed)",
                    ctx.subcommand.name()
                )));
            }
            0
        }
    };
    let workers = ctx.workers_override.or(config.workers);
    std::fs::create_dir_all(&ctx.out_dir)?;

    let started = std::time::Instant::now();
    let outcome = match workers {
        Some(threads) => {
            if threads == 0 {
                return Err(LabError::Config("worker count must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| LabError::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| run_subcommand(config, ctx, seed))
        }
        None => run_subcommand(config, ctx, seed),
    };
    let (outputs, checked, mut log_extra) = outcome?;
    let wall_ms = started.elapsed().as_millis();

    log_extra.insert("subcommand".into(), ctx.subcommand.name().into());
    log_extra.insert("config_sha256".into(), ctx.config_sha256.clone().into());
    log_extra.insert("seed".into(), seed.into());
    log_extra.insert(
        "workers".into(),
        workers.map_or(serde_json::Value::Null, |w| w.into()),
    );
    log_extra.insert("outputs".into(), outputs.clone().into());
    log_extra.insert("assert_checked".into(), checked.into());
    log_extra.insert("wall_ms".into(), (wall_ms as u64).into());
    report::append_run_log(&ctx.out_dir.join("run.log"), &log_extra)?;

    Ok(outputs)
}

type LogFields = serde_json::Map<String, serde_json::Value>;

/// Dispatches to the subcommand body.  Returns the files written, the
/// assert labels that passed, and extra run-log fields.
fn run_subcommand(
    config: &RunConfig,
    ctx: &RunContext,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, LogFields)> {
    let spec = resolve_assert_spec(config, ctx)?;
    let mut log = LogFields::new();
    let mut outputs = Vec::new();
    let mut asserts = AssertOutcome::new();

    let with_seed = |cfg: &ExperimentConfig| -> ExperimentConfig {
        let mut cfg = cfg.clone();
        cfg.seed = seed;
        cfg
    };

    match ctx.subcommand {
        Subcommand::Tail => {
            let cfg = with_seed(require_experiment(config)?);
            let curve = estimate_tail_curve(&cfg)?;
            report::emit_tail_csv(&ctx.out_dir.join("tail.csv"), &curve)?;
            outputs.push("tail.csv".into());
            match fit_envelope_constant(&curve) {
                Ok(fit) => {
                    report::emit_envelope_fit_csv(&ctx.out_dir.join("envelope_fit.csv"), &fit)?;
                    outputs.push("envelope_fit.csv".into());
                }
                // A sparse curve (fewer than three populated points) simply
                // has no fit to report; anything else is a real failure.
                Err(LabError::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            if config.svg {
                report::emit_svg(&curve, &ctx.out_dir.join("tail.svg"))?;
                outputs.push("tail.svg".into());
            }
            log.insert("n".into(), (curve.n as u64).into());
            log.insert("replications".into(), curve.replications.into());
            log.insert("degenerate".into(), curve.degenerate.into());
            log.insert(
                "excluded_x".into(),
                curve
                    .excluded
                    .iter()
                    .map(|e| e.x)
                    .collect::<Vec<f64>>()
                    .into(),
            );
            if let Some(spec) = spec {
                if let Some([lo, hi]) = spec.ratio_in {
                    for point in &curve.points {
                        asserts.check(
                            format!("ratio {} at x={} in [{lo}, {hi}]", point.ratio, point.x),
                            point.ratio >= lo && point.ratio <= hi,
                        );
                    }
                }
                if let Some(bound) = spec.max_abs_log_ratio {
                    for point in &curve.points {
                        if let Some(lr) = point.log_ratio {
                            asserts.check(
                                format!("|log ratio| {} at x={} <= {bound}", lr.abs(), point.x),
                                lr.abs() <= bound,
                            );
                        }
                    }
                }
            }
        }
        Subcommand::Logratio => {
            let cfg = with_seed(require_experiment(config)?);
            let curve = estimate_tail_curve(&cfg)?;
            let lr = log_ratio_curve(&curve)?;
            report::emit_log_ratio_csv(&ctx.out_dir.join("logratio.csv"), &lr)?;
            outputs.push("logratio.csv".into());
            log.insert("degenerate".into(), curve.degenerate.into());
            log.insert(
                "excluded_zero_count_x".into(),
                lr.excluded_zero_count.clone().into(),
            );
            if let Some(spec) = spec {
                if let Some([lo, hi]) = spec.quotient_in {
                    for point in &lr.points {
                        asserts.check(
                            format!(
                                "log-tail quotient {} at x={} in [{lo}, {hi}]",
                                point.quotient, point.x
                            ),
                            point.quotient >= lo && point.quotient <= hi,
                        );
                    }
                }
            }
        }
        Subcommand::Mdp => {
            let cfg = with_seed(require_experiment(config)?);
            let (a_values, b) = config
                .mdp
                .as_ref()
                .map(|(a, b)| (a.clone(), *b))
                .ok_or_else(|| {
                    LabError::Config("subcommand `mdp` requires an `mdp` block".into())
                })?;
            let diag = mdp_diagnostic(&cfg, &a_values, b)?;
            report::emit_mdp_csv(&ctx.out_dir.join("mdp.csv"), &diag)?;
            outputs.push("mdp.csv".into());
            log.insert("degenerate".into(), diag.degenerate.into());
            log.insert(
                "excluded_speeds".into(),
                diag.excluded
                    .iter()
                    .map(|(a, why)| serde_json::json!({"a": a, "reason": why}))
                    .collect::<Vec<_>>()
                    .into(),
            );
            if let Some(spec) = spec {
                if let Some([lo, hi]) = spec.rate_in {
                    for point in &diag.points {
                        asserts.check(
                            format!("rate {} at a={} in [{lo}, {hi}]", point.rate, point.a),
                            point.rate >= lo && point.rate <= hi,
                        );
                    }
                }
            }
        }
        Subcommand::Ks => {
            let cfg = with_seed(require_experiment(config)?);
            let ks = kolmogorov_distance(&cfg)?;
            report::emit_ks_csv(&ctx.out_dir.join("ks.csv"), &ks)?;
            outputs.push("ks.csv".into());
            log.insert("degenerate".into(), ks.degenerate.into());
            if let Some(spec) = spec {
                if let Some(bound) = spec.ks_below {
                    asserts.check(format!("KS distance {} < {bound}", ks.d), ks.d < bound);
                }
            }
        }
        Subcommand::ProbeVariance => {
            let cfg = with_seed(require_experiment(config)?);
            let probe = probe_variance_concentration(&cfg)?;
            report::emit_probe_csv(&ctx.out_dir.join("probe.csv"), &probe)?;
            outputs.push("probe.csv".into());
            log.insert(
                "slope".into(),
                probe
                    .slope
                    .map_or(serde_json::Value::Null, |s| {
                        serde_json::json!(s)
                    }),
            );
            log.insert(
                "reference_harmonic_mean".into(),
                probe
                    .reference_harmonic_mean
                    .map_or(serde_json::Value::Null, |r| serde_json::json!(r)),
            );
            if let Some(spec) = spec {
                if let Some(bound) = spec.slope_at_most {
                    match probe.slope {
                        Some(slope) => asserts
                            .check(format!("probe slope {slope} <= {bound}"), slope <= bound),
                        None => asserts.check("probe slope is defined".into(), false),
                    }
                }
            }
        }
        Subcommand::LnzTail => {
            let cfg = with_seed(require_experiment(config)?);
            let curve = ln_z_tail_probe(&cfg)?;
            report::emit_exceedance_csv(&ctx.out_dir.join("lnz_tail.csv"), &curve)?;
            outputs.push("lnz_tail.csv".into());
            if let Some(spec) = spec {
                if let Some(pairs) = &spec.exceedance_at_most {
                    for &[x, bound] in pairs {
                        match curve.points.iter().find(|p| p.x == x) {
                            Some(point) => asserts.check(
                                format!("exceedance {} at x={x} <= {bound}", point.phat),
                                point.phat <= bound,
                            ),
                            None => {
                                asserts.check(format!("grid contains x={x}"), false);
                            }
                        }
                    }
                }
            }
        }
        Subcommand::BpreSim => {
            let cfg = with_seed(require_experiment(config)?);
            let (model, exact_threshold) = match &cfg.model {
                ModelSpec::Bpre {
                    model,
                    exact_threshold,
                } => (model, *exact_threshold),
                _ => {
                    return Err(LabError::Config(
                        "subcommand `bpre-sim` requires a branching-process model".into(),
                    ));
                }
            };
            if cfg.n == 0 {
                return Err(LabError::Config(
                    "trajectory horizon n must be at least 1".into(),
                ));
            }
            let traj = crate::models::sample_bpre(
                model,
                cfg.n,
                crate::models::RngStream::new(seed, 0),
                exact_threshold,
            )?;
            report::emit_trajectory_csv(&ctx.out_dir.join("trajectory.csv"), &traj.z)?;
            outputs.push("trajectory.csv".into());
            log.insert(
                "approx_from".into(),
                traj.approx_from
                    .map_or(serde_json::Value::Null, |s| (s as u64).into()),
            );
        }
        Subcommand::BpreCi => {
            let spec_ci = config.bpre_ci.as_ref().ok_or_else(|| {
                LabError::Config("subcommand `bpre-ci` requires a `bpre_ci` block".into())
            })?;
            let text = std::fs::read_to_string(&spec_ci.trajectory).map_err(|e| {
                LabError::Config(format!(
                    "cannot read trajectory file {}: {e}",
                    spec_ci.trajectory.display()
                ))
            })?;
            let loaded: LoadedTrajectory = read_trajectory_csv(&text)?;
            let window = match (spec_ci.n0, spec_ci.n) {
                (None, None) => loaded.full_window()?,
                (n0, n) => {
                    let start = n0.unwrap_or(loaded.first_generation);
                    let len = match n {
                        Some(len) => len,
                        None => {
                            let last = loaded.first_generation + loaded.populations.len() - 1;
                            last.checked_sub(start).filter(|&l| l >= 2).ok_or_else(|| {
                                LabError::Config(
                                    "trajectory too short for the requested window".into(),
                                )
                            })?
                        }
                    };
                    loaded.window(start, len)?
                }
            };
            let mhat = bpre_infer::mhat(&window);
            let sigma = bpre_infer::sigma_hat(&window)?;
            let ci = bpre_infer::confidence_interval(&window, spec_ci.level)?;
            report::emit_ci_csv(&ctx.out_dir.join("ci.csv"), &window, mhat, sigma, &ci)?;
            outputs.push("ci.csv".into());
        }
        Subcommand::Coverage => {
            let cfg = with_seed(require_experiment(config)?);
            let level = config.coverage_level.ok_or_else(|| {
                LabError::Config("subcommand `coverage` requires a `coverage` block".into())
            })?;
            let cov = coverage_experiment(&cfg, level)?;
            report::emit_coverage_csv(&ctx.out_dir.join("coverage.csv"), &cov)?;
            outputs.push("coverage.csv".into());
            log.insert("degenerate".into(), cov.degenerate.into());
            if let Some(spec) = spec {
                if let Some([lo, hi]) = spec.coverage_in {
                    asserts.check(
                        format!("coverage {} in [{lo}, {hi}]", cov.coverage),
                        cov.coverage >= lo && cov.coverage <= hi,
                    );
                }
            }
        }
    }

    let checked = asserts.into_result()?;
    Ok((outputs, checked, log))
}

/// Convenience wrapper used by the binary: read the file, parse it, and run.
pub fn run_from_file(
    config_path: &Path,
    subcommand: Subcommand,
    out_dir: PathBuf,
    seed_override: Option<u64>,
    workers_override: Option<usize>,
    assert_enabled: bool,
) -> Result<Vec<String>> {
    let bytes = std::fs::read(config_path).map_err(|e| {
        LabError::Config(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| LabError::Config("config file is not valid UTF-8".into()))?;
    let config = parse_config(&text)?;
    let ctx = RunContext {
        subcommand,
        out_dir,
        seed_override,
        workers_override,
        assert_enabled,
        config_sha256: report::sha256_hex(&bytes),
    };
    execute(&config, &ctx)
}
