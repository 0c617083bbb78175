use std::path::PathBuf;

use robust_ode::evaluation::{benchmark, BenchMethod, LossReport};
use robust_ode::io::format_float;
use robust_ode::ode::SimulationConfig;
use robust_ode::{Error, TimeGrid};
use serde::Serialize;

use super::{parse_case, parse_example, parse_level, CmdResult, Context, EstimationOpts, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    #[arg(long, value_parser = ["enzyme", "lv"])]
    pub example: String,
    #[arg(long, value_parser = ["1", "2", "3"], default_value = "1")]
    pub level: String,
    #[arg(long, value_parser = ["stable", "unstable"], default_value = "stable")]
    pub case: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Comma-separated methods: proposed, erm, plugin, ridge
    #[arg(long, default_value = "proposed,erm")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub est: EstimationOpts,
    /// Output table (per-replication rows)
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_methods(s: &str) -> robust_ode::Result<Vec<BenchMethod>> {
    let methods: robust_ode::Result<Vec<BenchMethod>> =
        s.split(',').map(|m| BenchMethod::parse(m.trim())).collect();
    let methods = methods?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods given".into()));
    }
    Ok(methods)
}

pub fn reports_to_csv(reports: &[LossReport]) -> String {
    let mut out = String::from("rep,method,max_loss,avg_loss,gen_loss\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.replication,
            r.method,
            format_float(r.max_loss),
            format_float(r.avg_loss),
            format_float(r.gen_loss)
        ));
    }
    out
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let kind = parse_example(&args.example).stage("evaluate")?;
    let level = parse_level(&args.level).stage("evaluate")?;
    let case = parse_case(&args.case).stage("evaluate")?;
    let methods = parse_methods(&args.methods).stage("evaluate")?;
    let mut template =
        SimulationConfig::benchmark(kind, args.k, level, case, args.seed).stage("evaluate")?;
    if let Some(n) = args.n {
        template.grid = TimeGrid::uniform(n, template.grid.horizon()).stage("evaluate")?;
    }
    let settings = args.est.settings().stage("evaluate")?;
    let reports = benchmark(&template, args.reps, &methods, &settings).stage("evaluate")?;
    let out = ctx.resolve(&args.out);
    let payload = if ctx.format == "json" {
        serde_json::to_string_pretty(&reports).map_err(Error::from).stage("evaluate")? + "\n"
    } else {
        reports_to_csv(&reports)
    };
    std::fs::write(&out, payload)
        .map_err(|e| Error::Io {
            path: out.display().to_string(),
            source: e,
        })
        .stage("evaluate")?;
    super::write_meta(ctx, "evaluate", &out, false, &args).stage("evaluate")?;
    println!(
        "{} replications x {} methods -> {}",
        args.reps,
        methods.len(),
        out.display()
    );
    Ok(())
}
