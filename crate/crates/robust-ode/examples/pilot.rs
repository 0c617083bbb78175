//! Temporary calibration pilot (not part of the deliverable).

use robust_ode::evaluation::{
    benchmark, coverage_experiment, median, oracle_stabilized_weights, run_estimation,
    BenchMethod, PipelineSettings,
};
use robust_ode::gamma::{gamma_from_derivatives, split_gamma};
use robust_ode::linalg::Mat;
use robust_ode::ode::{
    generate_sources, DesignCase, HeterogeneityLevel, SimulationConfig, SystemKind,
};
use robust_ode::weights::{stability_experiment, stabilized_weights, StabilityRule};
use robust_ode::TimeGrid;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "stability" || which == "all" {
        let t0 = std::time::Instant::now();
        let n_grid = [10usize, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000];
        let seeds: Vec<u64> = (0..50).collect();
        let curves = stability_experiment(&n_grid, &StabilityRule::all(), &seeds).unwrap();
        println!("== stability ({:?}) ==", t0.elapsed());
        for c in &curves {
            print!("{:<14}", c.rule);
            for m in &c.median {
                print!(" {m:.4}");
            }
            println!();
        }
    }

    if which == "coverage" || which == "all" {
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            1000,
        )
        .unwrap();
        let rep = coverage_experiment(&template, 100, 0.05, None, &PipelineSettings::default())
            .unwrap();
        println!(
            "== coverage == ecp {:.4} cil {:.4} ({}/{})",
            rep.ecp, rep.cil, rep.covered, rep.total
        );
    }

    if which == "coverage-sweep" {
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            1000,
        )
        .unwrap();
        for under in [0.6, 0.7, 0.8] {
            for se in [4.0, 5.0, 6.0] {
                let settings = PipelineSettings {
                    undersmooth: under,
                    se_bandwidth_factor: se,
                    ..PipelineSettings::default()
                };
                let rep =
                    coverage_experiment(&template, 100, 0.05, None, &settings).unwrap();
                println!(
                    "under {under:.2} se {se:.1}: ecp {:.4} cil {:.4} total {}",
                    rep.ecp, rep.cil, rep.total
                );
            }
        }
    }

    if which == "coverage-debug" {
        use robust_ode::robust::confidence_band;
        let arg = |i: usize, d: f64| {
            std::env::args()
                .nth(i)
                .and_then(|s| s.parse::<f64>().ok())
                .unwrap_or(d)
        };
        let under = arg(2, 0.7);
        let se = arg(3, 4.0);
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            1000,
        )
        .unwrap();
        let settings = PipelineSettings {
            undersmooth: under,
            se_bandwidth_factor: se,
            ..PipelineSettings::default()
        };
        let n = template.grid.len();
        let reps = 100u64;
        let mut cover = vec![0usize; n];
        let mut count = vec![0usize; n];
        let mut bias = vec![0.0f64; n];
        let mut se_hat = vec![0.0f64; n];
        let mut err_sq = vec![0.0f64; n];
        let mut hs = Vec::new();
        let mut dns = Vec::new();
        let mut wnorms = Vec::new();
        for rep in 0..reps {
            let mut config = template.clone();
            config.seed = template.seed + rep;
            let obs = generate_sources(&config).unwrap();
            let est = run_estimation(&obs, &settings, None).unwrap();
            hs.push(est.h_used);
            dns.push(est.tolerance.d_n);
            wnorms.push(est.weights.omega.iter().map(|x| x * x).sum::<f64>());
            let star = oracle_stabilized_weights(&obs, settings.trim).unwrap();
            let latent = obs.latent.as_ref().unwrap();
            let band = confidence_band(&est.robust, 0.05).unwrap();
            for i in 0..n {
                if est.robust.boundary[i] {
                    continue;
                }
                for j in 0..3 {
                    let target: f64 = latent
                        .iter()
                        .zip(&star.omega)
                        .map(|(l, &w)| w * l.states.get(i, j))
                        .sum();
                    let e = est.robust.x_robust.get(i, j) - target;
                    bias[i] += e;
                    err_sq[i] += e * e;
                    se_hat[i] += (band.upper.get(i, j) - band.lower.get(i, j)) / (2.0 * 1.96);
                    if band.lower.get(i, j) <= target && target <= band.upper.get(i, j) {
                        cover[i] += 1;
                    }
                    count[i] += 1;
                }
            }
        }
        hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "== coverage-debug undersmooth={under} == median h_used {:.4} median d_n {:.5} median |w|^2 {:.3}",
            hs[hs.len() / 2],
            robust_ode::evaluation::median(&dns),
            robust_ode::evaluation::median(&wnorms)
        );
        println!("idx  cov      bias      rmse     se_hat");
        for i in 0..n {
            if count[i] == 0 {
                continue;
            }
            println!(
                "{:>3}  {:.3}  {:+.5}  {:.5}  {:.5}",
                i,
                cover[i] as f64 / count[i] as f64,
                bias[i] / count[i] as f64,
                (err_sq[i] / count[i] as f64).sqrt(),
                se_hat[i] / count[i] as f64
            );
        }
    }

    if which == "coverage-lv" {
        let t0 = std::time::Instant::now();
        let template = SimulationConfig::benchmark(
            SystemKind::LotkaVolterra,
            5,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            1000,
        )
        .unwrap();
        let settings = PipelineSettings::default();
        let rep = coverage_experiment(&template, 20, 0.05, None, &settings).unwrap();
        println!(
            "== coverage-lv ({:?}) == ecp {:.4} cil {:.4}",
            t0.elapsed(),
            rep.ecp,
            rep.cil
        );
    }

    if which == "ordering" || which == "all" {
        let t0 = std::time::Instant::now();
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::III,
            DesignCase::Stable,
            2000,
        )
        .unwrap();
        let settings = PipelineSettings::default();
        let reps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20);
        let reports = benchmark(
            &template,
            reps,
            &[BenchMethod::Proposed, BenchMethod::Erm],
            &settings,
        )
        .unwrap();
        let nreps = reps;
        let mut wins = [0usize; 3];
        let mut p_max = Vec::new();
        let mut e_max = Vec::new();
        let mut p_gen = Vec::new();
        let mut e_gen = Vec::new();
        for pair in reports.chunks(2) {
            let (p, e) = (&pair[0], &pair[1]);
            assert_eq!(p.method, "proposed");
            if p.max_loss < e.max_loss {
                wins[0] += 1;
            }
            if p.avg_loss < e.avg_loss {
                wins[1] += 1;
            }
            if p.gen_loss < e.gen_loss {
                wins[2] += 1;
            }
            p_max.push(p.max_loss);
            e_max.push(e.max_loss);
            p_gen.push(p.gen_loss);
            e_gen.push(e.gen_loss);
        }
        println!(
            "== ordering ({:?}) == wins(max,avg,gen) {:?}/{nreps}  med prop max {:.4} erm max {:.4} prop gen {:.4} erm gen {:.4}",
            t0.elapsed(),
            wins,
            median(&p_max),
            median(&e_max),
            median(&p_gen),
            median(&e_gen)
        );
    }

    if which == "fitprobe" {
        use robust_ode::dynamics_fit::{fit_gradient_matching, FitOptions};
        use robust_ode::evaluation::trajectory_loss;
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            1,
            HeterogeneityLevel::III,
            DesignCase::Stable,
            0,
        )
        .unwrap();
        let obs = generate_sources(&template).unwrap();
        let latent = &obs.latent.as_ref().unwrap()[0];
        let times = template.grid.times().to_vec();
        let energy =
            robust_ode::evaluation::derivative_energy(&latent.derivs, &template.grid).unwrap();
        println!("derivative energy {energy:.3}");
        // dense latent reference for held-out-in-time evaluation
        let mut dense_cfg = template.clone();
        dense_cfg.grid = TimeGrid::uniform(201, 2.0).unwrap();
        let dense_obs = generate_sources(&dense_cfg).unwrap();
        let dense = &dense_obs.latent.as_ref().unwrap()[0];
        // a different schedule source (k=5) for cross-source evaluation
        let mut other_cfg = dense_cfg.clone();
        other_cfg.sources = 5;
        let other_obs = generate_sources(&other_cfg).unwrap();
        let other = &other_obs.latent.as_ref().unwrap()[4];
        let probe = fit_gradient_matching(
            &latent.states,
            &latent.derivs,
            &times,
            &FitOptions::default(),
        )
        .unwrap();
        println!("default bw {:.4}", probe.kernel_bandwidth);
        for bw_mult in [2.0, 1.0, 0.5, 0.25, 0.1, 0.05] {
            for ridge_rate in [1e-4, 1e-6, 1e-8] {
                let opts = FitOptions {
                    bandwidth: Some(probe.kernel_bandwidth * bw_mult),
                    ridge: Some(ridge_rate * 40.0),
                    ..Default::default()
                };
                let fit =
                    fit_gradient_matching(&latent.states, &latent.derivs, &times, &opts).unwrap();
                let dense_loss =
                    trajectory_loss(&fit, &dense.states, &dense.derivs, &dense_cfg.grid).unwrap();
                let cross_loss =
                    trajectory_loss(&fit, &other.states, &other.derivs, &dense_cfg.grid).unwrap();
                println!(
                    "bw x{bw_mult:<5} ridge {ridge_rate:.0e}: dense-loss {dense_loss:.4} cross-loss {cross_loss:.4}"
                );
            }
        }
    }

    if which == "dprobe" {
        use robust_ode::smoothing::{smooth_source, SmoothingConfig};
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            1,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            0,
        )
        .unwrap();
        for h in [0.086, 0.123, 0.15, 0.2, 0.25, 0.3] {
            let mut err_sum = 0.0;
            let mut err_trim = 0.0;
            for seed in 0..20u64 {
                let mut cfg = template.clone();
                cfg.seed = seed;
                let obs = generate_sources(&cfg).unwrap();
                let latent = &obs.latent.as_ref().unwrap()[0];
                let sm = smooth_source(
                    &obs.sources[0].y,
                    &cfg.grid,
                    &cfg.grid,
                    &SmoothingConfig::with_bandwidth(h),
                )
                .unwrap();
                let times = cfg.grid.times();
                for (i, &t) in times.iter().enumerate() {
                    let w = if i == 0 || i + 1 == times.len() { 0.5 } else { 1.0 }
                        * (times[1] - times[0]);
                    for j in 0..3 {
                        let e = (sm.d_hat.get(i, j) - latent.derivs.get(i, j)).powi(2);
                        err_sum += w * e;
                        if t >= 0.1 && t <= 1.9 {
                            err_trim += w * e;
                        }
                    }
                }
            }
            println!(
                "h {h:.3}: mean ISE(dhat) {:.4}  trimmed {:.4}",
                err_sum / 20.0,
                err_trim / 20.0
            );
        }
    }

    if which == "oracle-matchup" {
        use robust_ode::dynamics_fit::{fit_gradient_matching, FitOptions};
        use robust_ode::evaluation::trajectory_loss;
        let mut template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::III,
            DesignCase::Stable,
            0,
        )
        .unwrap();
        template.grid = TimeGrid::uniform(200, 2.0).unwrap();
        template.noise_sd = 0.0;
        let obs = generate_sources(&template).unwrap();
        let latent = obs.latent.as_ref().unwrap();
        let (_, held) = robust_ode::ode::generate_schedule_source(&template, 6).unwrap();
        let star = oracle_stabilized_weights(&obs, 0.05).unwrap();
        println!("oracle omega {:?}", star.omega.iter().map(|x| (x*1000.0).round()/1000.0).collect::<Vec<_>>());
        let times = template.grid.times().to_vec();
        let n = times.len();
        let p = 3;
        let mix = |w: &[f64]| {
            let mut xs = Mat::zeros(n, p);
            let mut ds = Mat::zeros(n, p);
            for i in 0..n {
                for j in 0..p {
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for (l, &wk) in latent.iter().zip(w) {
                        a += wk * l.states.get(i, j);
                        b += wk * l.derivs.get(i, j);
                    }
                    xs.set(i, j, a);
                    ds.set(i, j, b);
                }
            }
            (xs, ds)
        };
        let eval = |fit: &robust_ode::dynamics_fit::FittedDynamics, label: &str| {
            let per: Vec<f64> = latent
                .iter()
                .map(|l| trajectory_loss(fit, &l.states, &l.derivs, &template.grid).unwrap())
                .collect();
            let max = per.iter().fold(0.0_f64, |m, &v| m.max(v));
            let avg = per.iter().sum::<f64>() / 5.0;
            let gen = trajectory_loss(fit, &held.states, &held.derivs, &template.grid).unwrap();
            println!("{label:<22} max {max:.4} avg {avg:.4} gen {gen:.4}");
        };
        for (label, w) in [
            ("uniform-mix", vec![0.2; 5]),
            ("oracle-stable-mix", star.omega.clone()),
        ] {
            let (xs, ds) = mix(&w);
            let fit = fit_gradient_matching(&xs, &ds, &times, &FitOptions::default()).unwrap();
            eval(&fit, label);
        }
        // pooled ERM on latents
        let mut rows_x = Vec::new();
        let mut rows_d = Vec::new();
        let mut tt = Vec::new();
        for l in latent {
            for i in 0..n {
                rows_x.push(l.states.row(i).to_vec());
                rows_d.push(l.derivs.row(i).to_vec());
                tt.push(times[i]);
            }
        }
        let fit = fit_gradient_matching(
            &Mat::from_rows(rows_x).unwrap(),
            &Mat::from_rows(rows_d).unwrap(),
            &tt,
            &FitOptions::default(),
        )
        .unwrap();
        eval(&fit, "erm-pooled");
        // per-source oracle fit of the truth, as the attainable floor
        let fit = fit_gradient_matching(
            &latent[0].states,
            &latent[0].derivs,
            &times,
            &FitOptions::default(),
        )
        .unwrap();
        eval(&fit, "single-source-1");
    }

    if which == "ordering-debug" {
        use robust_ode::dynamics_fit::{fit_gradient_matching, FitOptions};
        use robust_ode::evaluation::{fit_method, loss_report, BenchMethod};
        use robust_ode::robust::aggregate;
        use robust_ode::weights::{SimplexWeights, SolveDiagnostics, WeightMethod};
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::III,
            DesignCase::Stable,
            2000,
        )
        .unwrap();
        let settings = PipelineSettings::default();
        let mut wins = [[0usize; 3]; 2]; // [stable, uniform] vs erm
        for rep in 0..20u64 {
            let mut config = template.clone();
            config.seed = template.seed + rep;
            let obs = generate_sources(&config).unwrap();
            let (_, held) = robust_ode::ode::generate_schedule_source(&config, 6).unwrap();
            let est = run_estimation(&obs, &settings, None).unwrap();
            let latent = obs.latent.as_ref().unwrap();
            if rep < 3 {
                println!(
                    "rep {rep}: ratio {:.3} d_abs {:.4} |G| {:.2} U {:.4} omega {:?}",
                    est.tolerance.ratio,
                    est.tolerance.absolute(),
                    est.tolerance.gamma_norm,
                    est.weights.diagnostics.u_min.unwrap_or(f64::NAN),
                    est.weights
                        .omega
                        .iter()
                        .map(|x| (x * 100.0).round() / 100.0)
                        .collect::<Vec<_>>()
                );
            }
            let f_stable = fit_method(BenchMethod::Proposed, &est, &settings).unwrap();
            let f_erm = fit_method(BenchMethod::Erm, &est, &settings).unwrap();
            // uniform-weights arm
            let uni = SimplexWeights {
                omega: vec![0.2; 5],
                objective: 0.0,
                method: WeightMethod::Oracle,
                d_n: None,
                lambda: None,
                diagnostics: SolveDiagnostics::default(),
            };
            let traj = aggregate(&est.smoothed, &uni).unwrap();
            let mut xs = Vec::new();
            let mut ds = Vec::new();
            let mut ts = Vec::new();
            for (i, &t) in traj.eval_grid.times().iter().enumerate() {
                xs.push(traj.x_robust.row(i).to_vec());
                ds.push(traj.d_robust.row(i).to_vec());
                ts.push(t);
            }
            let f_uni = fit_gradient_matching(
                &Mat::from_rows(xs).unwrap(),
                &Mat::from_rows(ds).unwrap(),
                &ts,
                &FitOptions::default(),
            )
            .unwrap();
            let grid = &config.grid;
            let r_st = loss_report(&f_stable, latent, &held, grid, rep, "stable").unwrap();
            let r_un = loss_report(&f_uni, latent, &held, grid, rep, "uniform").unwrap();
            let r_erm = loss_report(&f_erm, latent, &held, grid, rep, "erm").unwrap();
            if rep < 3 {
                println!(
                    "   stable max {:.3} avg {:.3} gen {:.3} | uniform {:.3} {:.3} {:.3} | erm {:.3} {:.3} {:.3}",
                    r_st.max_loss, r_st.avg_loss, r_st.gen_loss,
                    r_un.max_loss, r_un.avg_loss, r_un.gen_loss,
                    r_erm.max_loss, r_erm.avg_loss, r_erm.gen_loss
                );
            }
            for (slot, r) in [(0, &r_st), (1, &r_un)] {
                if r.max_loss < r_erm.max_loss {
                    wins[slot][0] += 1;
                }
                if r.avg_loss < r_erm.avg_loss {
                    wins[slot][1] += 1;
                }
                if r.gen_loss < r_erm.gen_loss {
                    wins[slot][2] += 1;
                }
            }
        }
        println!("stable-vs-erm wins {:?}/20, uniform-vs-erm wins {:?}/20", wins[0], wins[1]);
    }

    if which == "parity" || which == "all" {
        let t0 = std::time::Instant::now();
        let settings = PipelineSettings::default();
        let mut meds = Vec::new();
        for case in [DesignCase::Stable, DesignCase::Unstable] {
            let template = SimulationConfig::benchmark(
                SystemKind::EnzymeNetwork,
                5,
                HeterogeneityLevel::II,
                case,
                3000,
            )
            .unwrap();
            let reports = benchmark(&template, 20, &[BenchMethod::Proposed], &settings).unwrap();
            let gens: Vec<f64> = reports.iter().map(|r| r.gen_loss).collect();
            meds.push(median(&gens));
        }
        println!(
            "== parity ({:?}) == stable med {:.4} unstable med {:.4} rel diff {:.3}",
            t0.elapsed(),
            meds[0],
            meds[1],
            (meds[0] - meds[1]).abs() / meds[0].max(meds[1])
        );
    }

    if which == "consistency" || which == "all" {
        let t0 = std::time::Instant::now();
        for n in [200usize, 2000] {
            // fixed bandwidth rule: weight consistency is the object under
            // test, not bandwidth selection
            let settings = PipelineSettings {
                bandwidth: Some(0.175 * 2.0 * (n as f64).powf(-0.2)),
                ..PipelineSettings::default()
            };
            let mut losses = Vec::new();
            for seed in 0..10u64 {
                let mut template = SimulationConfig::benchmark(
                    SystemKind::EnzymeNetwork,
                    5,
                    HeterogeneityLevel::II,
                    DesignCase::Unstable,
                    4000 + seed,
                )
                .unwrap();
                template.grid = TimeGrid::uniform(n, 2.0).unwrap();
                let obs = generate_sources(&template).unwrap();
                // oracle on a fixed dense grid, independent of n
                let dense = TimeGrid::uniform(2001, 2.0).unwrap();
                let mut dense_cfg = template.clone();
                dense_cfg.grid = dense.clone();
                let dense_obs = generate_sources(&dense_cfg).unwrap();
                let star = oracle_stabilized_weights(&dense_obs, settings.trim).unwrap();
                let eval = TimeGrid::uniform(401.min(n), 2.0).unwrap();
                let est = run_estimation(&obs, &settings, Some(&eval)).unwrap();
                let loss: f64 = est
                    .weights
                    .omega
                    .iter()
                    .zip(&star.omega)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                losses.push(loss);
            }
            println!(
                "== consistency n={n} ({:?}) == median {:.4} all {:?}",
                t0.elapsed(),
                median(&losses),
                losses.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }

    if which == "gammaconv" || which == "all" {
        let t0 = std::time::Instant::now();
        let settings = PipelineSettings::default();
        for n in [40usize, 160] {
            let mut errs = Vec::new();
            for seed in 0..50u64 {
                let mut template = SimulationConfig::benchmark(
                    SystemKind::EnzymeNetwork,
                    3,
                    HeterogeneityLevel::I,
                    DesignCase::Stable,
                    5000 + seed,
                )
                .unwrap();
                template.grid = TimeGrid::uniform(n, 2.0).unwrap();
                let obs = generate_sources(&template).unwrap();
                let est = run_estimation(&obs, &settings, None).unwrap();
                let latent = obs.latent.as_ref().unwrap();
                let derivs: Vec<&Mat> = latent.iter().map(|l| &l.derivs).collect();
                let oracle =
                    gamma_from_derivatives(&derivs, &template.grid, settings.trim).unwrap();
                let err: f64 = est
                    .gamma
                    .entries
                    .iter()
                    .zip(&oracle.entries)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                errs.push(err);
            }
            println!(
                "== gammaconv n={n} ({:?}) == median frob err {:.4}",
                t0.elapsed(),
                median(&errs)
            );
        }
    }

    if which == "splitnoise" || which == "all" {
        let mut template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            7,
        )
        .unwrap();
        template.noise_sd = 0.0;
        let obs = generate_sources(&template).unwrap();
        let settings = PipelineSettings::default();
        let est = run_estimation(&obs, &settings, None).unwrap();
        let cfg = settings.smoothing_config(est.h_used);
        let (g1, g2) = split_gamma(&obs, &cfg, settings.trim, None).unwrap();
        println!(
            "== splitnoise == zero-noise half diff opnorm {:.6} |G| {:.3} d_n {:.6} omega {:?}",
            g1.operator_norm_diff(&g2).unwrap(),
            est.gamma.operator_norm(),
            est.tolerance.d_n,
            est.weights
                .omega
                .iter()
                .map(|x| (x * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }

    if which == "oracle-check" || which == "all" {
        // oracle weights should be uniform at Level I (identical sources)
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            5,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            9,
        )
        .unwrap();
        let obs = generate_sources(&template).unwrap();
        let star = oracle_stabilized_weights(&obs, 0.05).unwrap();
        println!("== oracle-check == level I oracle {:?}", star.omega);
        let latent = obs.latent.as_ref().unwrap();
        let derivs: Vec<&Mat> = latent.iter().map(|l| &l.derivs).collect();
        let g = gamma_from_derivatives(&derivs, &template.grid, 0.05).unwrap();
        let w = stabilized_weights(&g, 0.0).unwrap();
        println!("   gamma[0][0] {:.4} min_eig {:.2e} omega {:?}", g.get(0, 0), g.min_eig_raw, w.omega);
    }
}
