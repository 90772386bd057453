use std::path::PathBuf;
use std::process::ExitCode;

use bifid_cli::config::{resolve, Overrides};
use bifid_cli::demo::{run_demo, DemoName};
use bifid_cli::exit_code;
use bifid_cli::pipeline;
use bifid_core::Result;
use clap::{Args, Parser, Subcommand};

/// Bi-fidelity data fusion: spectral acquisition planning and
/// influence-function transforms over CSV point clouds.
#[derive(Parser)]
#[command(name = "bifid", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scale the low-fidelity cloud, build the graph, extract the spectrum.
    Graph(Overrides),
    /// Cluster the spectral embedding and emit the acquisition list.
    Select(Overrides),
    /// Fit the transform and write the fused cloud in problem units.
    Fuse(Overrides),
    /// Sweep the regularization weight and report the L-curve elbow.
    Lcurve(Overrides),
    /// Compare low- and bi-fidelity errors against per-point truth.
    Report(Overrides),
    /// Centroid selection versus seeded random baselines.
    Study(Overrides),
    /// Run a shipped synthetic problem end to end.
    Demo(DemoArgs),
}

#[derive(Args)]
struct DemoArgs {
    /// Which shipped problem to run.
    name: DemoName,
    /// Artifact directory (default: demo-<name>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn dispatch(cmd: &Cmd) -> Result<Vec<String>> {
    match cmd {
        Cmd::Graph(o) => pipeline::cmd_graph(&resolve(o)?),
        Cmd::Select(o) => pipeline::cmd_select(&resolve(o)?),
        Cmd::Fuse(o) => pipeline::cmd_fuse(&resolve(o)?),
        Cmd::Lcurve(o) => pipeline::cmd_lcurve(&resolve(o)?),
        Cmd::Report(o) => pipeline::cmd_report(&resolve(o)?),
        Cmd::Study(o) => pipeline::cmd_study(&resolve(o)?),
        Cmd::Demo(a) => run_demo(a.name, a.out_dir.clone()),
    }
}

fn stage(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Graph(_) => "graph",
        Cmd::Select(_) => "select",
        Cmd::Fuse(_) => "fuse",
        Cmd::Lcurve(_) => "lcurve",
        Cmd::Report(_) => "report",
        Cmd::Study(_) => "study",
        Cmd::Demo(_) => "demo",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.cmd) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error[{}]: {err}", stage(&cli.cmd));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
