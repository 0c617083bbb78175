use std::path::PathBuf;

use robust_ode::evaluation::{benchmark, mean_sd};
use robust_ode::io::format_float;
use robust_ode::ode::SimulationConfig;
use robust_ode::{Error, TimeGrid};
use serde::Serialize;

use super::evaluate::parse_methods;
use super::{parse_case, parse_example, parse_level, CmdResult, Context, EstimationOpts, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    #[arg(long, value_parser = ["enzyme", "lv"])]
    pub example: String,
    /// Comma-separated heterogeneity levels
    #[arg(long, default_value = "1,2,3")]
    pub levels: String,
    /// Comma-separated design cases
    #[arg(long, default_value = "stable,unstable")]
    pub cases: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value = "proposed,erm")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub est: EstimationOpts,
    /// Output table: case,level,k,method,metric,mean,sd,reps
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct BenchRow {
    case: String,
    level: String,
    k: usize,
    method: String,
    metric: String,
    mean: f64,
    sd: f64,
    reps: usize,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let kind = parse_example(&args.example).stage("bench")?;
    let methods = parse_methods(&args.methods).stage("bench")?;
    let settings = args.est.settings().stage("bench")?;
    let mut rows: Vec<BenchRow> = Vec::new();
    for case_name in args.cases.split(',') {
        let case = parse_case(case_name.trim()).stage("bench")?;
        for level_name in args.levels.split(',') {
            let level = parse_level(level_name.trim()).stage("bench")?;
            let mut template = SimulationConfig::benchmark(kind, args.k, level, case, args.seed)
                .stage("bench")?;
            if let Some(n) = args.n {
                template.grid =
                    TimeGrid::uniform(n, template.grid.horizon()).stage("bench")?;
            }
            let reports = benchmark(&template, args.reps, &methods, &settings).stage("bench")?;
            for method in &methods {
                let of = |f: fn(&robust_ode::evaluation::LossReport) -> f64| -> (f64, f64) {
                    let values: Vec<f64> = reports
                        .iter()
                        .filter(|r| r.method == method.label())
                        .map(f)
                        .collect();
                    mean_sd(&values)
                };
                for (metric, (mean, sd)) in [
                    ("max", of(|r| r.max_loss)),
                    ("avg", of(|r| r.avg_loss)),
                    ("gen", of(|r| r.gen_loss)),
                ] {
                    rows.push(BenchRow {
                        case: case_name.trim().to_string(),
                        level: level_name.trim().to_string(),
                        k: args.k,
                        method: method.label().to_string(),
                        metric: metric.to_string(),
                        mean,
                        sd,
                        reps: args.reps,
                    });
                }
            }
        }
    }
    let out = ctx.resolve(&args.out);
    let payload = if ctx.format == "json" {
        serde_json::to_string_pretty(&rows).map_err(Error::from).stage("bench")? + "\n"
    } else {
        let mut s = String::from("case,level,k,method,metric,mean,sd,reps\n");
        for r in &rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.case,
                r.level,
                r.k,
                r.method,
                r.metric,
                format_float(r.mean),
                format_float(r.sd),
                r.reps
            ));
        }
        s
    };
    std::fs::write(&out, payload)
        .map_err(|e| Error::Io {
            path: out.display().to_string(),
            source: e,
        })
        .stage("bench")?;
    super::write_meta(ctx, "bench", &out, false, &args).stage("bench")?;
    println!("{} table rows -> {}", rows.len(), out.display());
    Ok(())
}
