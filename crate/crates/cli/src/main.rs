//! `gsprop`: batch command-line front end for the annotation pipeline.

mod config;
mod stages;
mod synth;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gsprop_core::perception::PerceptionError;

use config::{Mode, PipelineConfig};

/// Bad invocation or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "gsprop", version, about = "Annotate Gaussian Splatting scenes with physical properties")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command; flags override the config file.
#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Pipeline config (TOML).
    #[arg(long, global = true, env = "GSPROP_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    #[arg(long, global = true)]
    cameras: Option<PathBuf>,
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    #[arg(long, global = true)]
    masks: Option<PathBuf>,
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    library: Option<PathBuf>,
    #[arg(long, global = true)]
    gripper: Option<PathBuf>,
    #[arg(long, global = true)]
    ground_truth: Option<PathBuf>,
    #[arg(long, global = true)]
    legend: Option<PathBuf>,
    /// Number of views, spread evenly over the camera list.
    #[arg(long, global = true)]
    views: Option<usize>,
    /// Explicit view ids (comma separated); overrides --views.
    #[arg(long, global = true, value_delimiter = ',')]
    view_ids: Vec<String>,
    /// Worker threads for rendering, voting and live queries.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write depth maps and vote tables under `debug/`.
    #[arg(long, global = true)]
    dump_intermediates: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Obtain masks for each view (fixture copy or segmentation endpoint).
    Segment,
    /// Label every mask with a library material.
    Annotate,
    /// Vote the per-view labels onto the Gaussians and export the scene.
    Lift,
    /// Render family-ordinal segmentation images of the annotated scene.
    RenderMaterials {
        /// Only this view.
        #[arg(long)]
        view: Option<String>,
    },
    /// Mass, hardness and grasp-force reports.
    Physics,
    /// mIoU against ground-truth segmentation images.
    Evaluate {
        #[arg(long)]
        view: Option<String>,
    },
    /// Run several stages.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// Write a synthetic two-box dataset with fixtures and ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Surface sampling step, meters.
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        views: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum PipelineAction {
    /// All stages in order; physics and evaluation run when configured.
    Run,
}

pub struct RunOptions {
    pub dump_intermediates: bool,
}

fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut c = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let p = &mut c.paths;
    for (slot, flag) in [
        (&mut p.output, &g.output),
        (&mut p.scene, &g.scene),
        (&mut p.cameras, &g.cameras),
        (&mut p.images, &g.images),
        (&mut p.masks, &g.masks),
        (&mut p.annotations, &g.annotations),
        (&mut p.library, &g.library),
        (&mut p.gripper, &g.gripper),
        (&mut p.ground_truth, &g.ground_truth),
        (&mut p.legend, &g.legend),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(m) = g.mode {
        c.mode = m;
    }
    if let Some(n) = g.views {
        c.views.count = n;
        c.views.ids.clear();
    }
    if !g.view_ids.is_empty() {
        c.views.ids = g.view_ids.clone();
    }
    if let Some(w) = g.workers {
        if w == 0 {
            anyhow::bail!(UsageError("--workers must be at least 1".into()));
        }
        c.lmm.max_in_flight = w;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.global.workers {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    if let Command::Synth { out, spacing, views } = &cli.command {
        return synth::write_dataset(out, *spacing, *views);
    }
    let config = resolve_config(&cli.global)?;
    let opts = RunOptions {
        dump_intermediates: cli.global.dump_intermediates,
    };
    let ctx = stages::Context::new(config, opts)?;
    match cli.command {
        Command::Segment => ctx.segment(),
        Command::Annotate => ctx.annotate(),
        Command::Lift => ctx.lift(),
        Command::RenderMaterials { view } => ctx.render_materials(view.as_deref()),
        Command::Physics => ctx.physics(),
        Command::Evaluate { view } => ctx.evaluate(view.as_deref()),
        Command::Pipeline {
            action: PipelineAction::Run,
        } => ctx.pipeline(),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

/// 1 usage, 3 endpoint, 2 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<UsageError>().is_some()) {
        return 1;
    }
    let endpoint = err
        .chain()
        .any(|e| e.downcast_ref::<PerceptionError>().is_some_and(PerceptionError::is_endpoint));
    if endpoint {
        3
    } else {
        2
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "{} {:5} {} {}",
                buf.timestamp_millis(),
                record.level(),
                record.target(),
                record.args()
            )
        })
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let usage = anyhow::Error::new(UsageError("x".into())).context("outer");
        assert_eq!(exit_code(&usage), 1);
        let endpoint = anyhow::Error::new(PerceptionError::RateLimited).context("annotate view 3");
        assert_eq!(exit_code(&endpoint), 3);
        let data = anyhow::Error::new(PerceptionError::EmptyMask);
        assert_eq!(exit_code(&data), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["gsprop", "lift", "--views", "3", "--output", "o", "--workers", "2"]).unwrap();
        let c = resolve_config(&cli.global).unwrap();
        assert_eq!(c.views.count, 3);
        assert_eq!(c.output(), PathBuf::from("o"));
        assert_eq!(c.lmm.max_in_flight, 2);
        let cli = Cli::try_parse_from(["gsprop", "lift", "--workers", "0"]).unwrap();
        assert!(resolve_config(&cli.global).is_err());
    }
}
