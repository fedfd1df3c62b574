use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use skeval_core::config::{ConfigError, HarnessConfig};
use skeval_core::pipeline::{Clock, SamplingPlan};
use skeval_core::prompt::{PromptForge, PromptVariant};
use skeval_core::provider::{
    Gateway, HttpProvider, RetryPolicy, ScriptedProvider, SubjectProfile, DEFAULT_MAX_IN_FLIGHT,
};
use skeval_core::store::RunStore;
use skeval_core::workflow::{
    self, simulated_model_id, ClassifyOptions, GenerateOptions, SimulateOptions, WorkflowError,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const SCRIPTED: &str = "scripted";

#[derive(Debug, Parser)]
#[command(name = "skeval", version, about = "Self-knowledge evaluation: generate, classify, score")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Directory holding runs.
    #[arg(long, global = true, default_value = "runs")]
    run_dir: PathBuf,
    /// TOML file with [providers.*] and [profiles.*] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampling and run naming.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Prompt variant: vanilla or challenge_qap.
    #[arg(long, global = true, default_value = "vanilla")]
    variant: PromptVariant,
    /// Directory of template overrides.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Provider name from the config, or `scripted`.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Model id sent to the provider (defaults to the provider's model).
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan and generate tasks into a new run.
    Generate {
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value_t = 90)]
        per_category: usize,
        /// Subject profile for the scripted provider.
        #[arg(long, default_value = "echo")]
        profile: String,
    },
    /// Sample valid tasks from a run and classify them.
    Classify {
        #[arg(long)]
        run_id: String,
        #[arg(long, default_value_t = 400)]
        sample_feasible: usize,
        #[arg(long, default_value_t = 400)]
        sample_infeasible: usize,
        /// Subject profile for the scripted provider; defaults to the one
        /// recorded with the run.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Score runs and write report.md, report.json, metrics.csv, patterns.csv.
    Evaluate {
        /// Runs to include; all runs under --run-dir when omitted.
        #[arg(long = "run-id")]
        run_ids: Vec<String>,
        /// Output directory; defaults to <run-dir>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and classify against a scripted subject profile.
    Simulate {
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value = "echo")]
        profile: String,
        #[arg(long, default_value_t = 90)]
        per_category: usize,
        #[arg(long, default_value_t = 400)]
        sample_feasible: usize,
        #[arg(long, default_value_t = 400)]
        sample_infeasible: usize,
    },
    /// Load a run with every integrity check.
    ValidateRun {
        #[arg(long)]
        run_id: String,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Workflow(e) if e.is_configuration() => EXIT_CONFIG,
            CliError::Workflow(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Workflow(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let store = RunStore::new(&g.run_dir);
    match &cli.command {
        Command::Generate {
            run_id,
            per_category,
            profile,
        } => {
            let config = load_config(g)?;
            let forge = load_forge(g)?;
            let provider = g.provider.clone().unwrap_or_else(|| SCRIPTED.to_string());
            let (gateway, model_id, profile) = build_gateway(g, &config, &provider, Some(profile))?;
            let run_id = run_id
                .clone()
                .unwrap_or_else(|| default_run_id(&model_id, g.variant, g.seed));
            let opts = GenerateOptions {
                seed: g.seed,
                clock: Clock::System,
                ..GenerateOptions::new(&run_id, &model_id, g.variant, *per_category)
            };
            let s = workflow::generate(&store, &forge, &gateway, &opts, profile.as_ref())?;
            println!("run {}", s.run_id);
            println!(
                "planned {} feasible + {} infeasible; valid {}, malformed {}, failed {}, queued for review {}",
                s.planned_feasible, s.planned_infeasible, s.valid, s.malformed, s.failed, s.queued_for_review
            );
        }
        Command::Classify {
            run_id,
            sample_feasible,
            sample_infeasible,
            profile,
        } => {
            let config = load_config(g)?;
            if g.templates.is_some() {
                eprintln!("note: classify uses the templates stored with the run; --templates ignored");
            }
            let manifest = store.open(run_id).map_err(WorkflowError::from)?.manifest();
            let provider = g.provider.clone().unwrap_or(manifest.provider_id.clone());
            let (gateway, _, _) = if provider == SCRIPTED && profile.is_none() {
                let recorded = manifest.profile.clone().unwrap_or_else(|| SubjectProfile::echo(0));
                scripted_gateway(recorded)
            } else {
                build_gateway(g, &config, &provider, profile.as_deref())?
            };
            let opts = ClassifyOptions {
                sampling: SamplingPlan {
                    n_feasible: *sample_feasible,
                    n_infeasible: *sample_infeasible,
                    seed: g.seed,
                },
                clock: Clock::System,
            };
            let s = workflow::classify(&store, run_id, &gateway, &opts)?;
            print_classification(&s);
        }
        Command::Evaluate { run_ids, out } => {
            let ids = if run_ids.is_empty() {
                store.list_runs().map_err(WorkflowError::from)?
            } else {
                run_ids.clone()
            };
            if ids.is_empty() {
                return Err(CliError::Usage(format!("no runs under {}", g.run_dir.display())));
            }
            let out = out.clone().unwrap_or_else(|| g.run_dir.join("report"));
            let bundle = workflow::evaluate(&store, &ids, &out)?;
            println!(
                "evaluated {} run(s), {} model(s); reports in {}",
                bundle.runs.len(),
                bundle.models.len(),
                out.display()
            );
        }
        Command::Simulate {
            run_id,
            profile,
            per_category,
            sample_feasible,
            sample_infeasible,
        } => {
            let config = load_config(g)?;
            let forge = load_forge(g)?;
            let profile = config.profile(profile)?;
            let run_id = run_id
                .clone()
                .unwrap_or_else(|| default_run_id(&format!("sim-{}", profile.name), g.variant, g.seed));
            let opts = SimulateOptions {
                variant: g.variant,
                seed: g.seed,
                ..SimulateOptions::new(&run_id, *per_category, *sample_feasible, *sample_infeasible)
            };
            let (gen, cls) = workflow::simulate(&store, &forge, &profile, &opts)?;
            println!("run {run_id}");
            println!(
                "planned {} feasible + {} infeasible; valid {}",
                gen.planned_feasible, gen.planned_infeasible, gen.valid
            );
            print_classification(&cls);
        }
        Command::ValidateRun { run_id } => {
            let c = workflow::validate_run(&store, run_id)?;
            println!(
                "run {} ok: {} tasks, {} outcomes, {} review entries, {} provider errors{}",
                c.run_id,
                c.tasks,
                c.outcomes,
                c.review_entries,
                c.errors,
                if c.sealed { ", sealed" } else { "" }
            );
        }
    }
    Ok(())
}

fn print_classification(s: &workflow::ClassifySummary) {
    println!(
        "classified {}: answered {}, declared infeasible {}, parse failures {} (rate {}), provider failures {}",
        s.sampled,
        s.answered,
        s.declared_infeasible,
        s.parse_failures,
        s.parse_failure_rate()
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "n/a".to_string()),
        s.provider_failures
    );
}

fn load_config(g: &Global) -> Result<HarnessConfig, CliError> {
    match &g.config {
        Some(path) => Ok(HarnessConfig::load(path)?),
        None => Ok(HarnessConfig::default()),
    }
}

fn load_forge(g: &Global) -> Result<PromptForge, CliError> {
    match &g.templates {
        Some(dir) => Ok(PromptForge::from_dir(dir).map_err(WorkflowError::from)?),
        None => Ok(PromptForge::builtin()),
    }
}

fn scripted_gateway(profile: SubjectProfile) -> (Gateway, String, Option<SubjectProfile>) {
    let model_id = simulated_model_id(&profile);
    let gateway = Gateway::new(
        Arc::new(ScriptedProvider::new(profile.clone())),
        RetryPolicy::immediate(1),
        DEFAULT_MAX_IN_FLIGHT,
    );
    (gateway, model_id, Some(profile))
}

/// Gateway, model id and (for the scripted provider) the subject profile.
fn build_gateway(
    g: &Global,
    config: &HarnessConfig,
    provider: &str,
    profile: Option<&str>,
) -> Result<(Gateway, String, Option<SubjectProfile>), CliError> {
    if provider == SCRIPTED {
        let profile = config.profile(profile.unwrap_or("echo"))?;
        let (gateway, model_id, profile) = scripted_gateway(profile);
        return Ok((gateway, g.model.clone().unwrap_or(model_id), profile));
    }
    let mut http = config.provider(provider)?.clone();
    if let Some(model) = &g.model {
        http.model = model.clone();
    }
    let retry = RetryPolicy {
        max_attempts: http.max_attempts,
        base_delay: Duration::from_millis(http.base_delay_ms),
        ..RetryPolicy::default()
    };
    let max_in_flight = http.max_in_flight;
    let model_id = http.model.clone();
    let client = HttpProvider::from_env(http).map_err(WorkflowError::Gateway)?;
    Ok((Gateway::new(Arc::new(client), retry, max_in_flight), model_id, None))
}

/// Run ids allow ASCII alphanumerics, `-`, `_` and `.`.
fn default_run_id(model: &str, variant: PromptVariant, seed: u64) -> String {
    let cleaned: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '-' })
        .collect();
    format!("{}-{}-s{seed}", cleaned.trim_start_matches('.'), variant.slug())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_ids_are_path_safe() {
        assert_eq!(
            default_run_id("scripted:echo", PromptVariant::ChallengeQap, 3),
            "scripted-echo-challenge_qap-s3"
        );
        assert_eq!(default_run_id("gpt-4o", PromptVariant::Vanilla, 0), "gpt-4o-vanilla-s0");
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "skeval", "generate", "--per-category", "2", "--variant", "challenge-qap", "--provider", "scripted",
        ])
        .unwrap();
        assert_eq!(cli.global.variant, PromptVariant::ChallengeQap);
        assert!(matches!(cli.command, Command::Generate { per_category: 2, .. }));
    }
}
