use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gridswitch::case::{
    fixtures, generate_dataset, split_dataset, Dataset, GridCase, LoadScenario, SamplingConfig, SplitFractions,
    SplitTag,
};
use gridswitch::dcopf::{solve_dcopf_with, solve_ed, Dispatch, LimitScaling, OpfOptions, SwitchVector};
use gridswitch::nn::{init_network_with, load_model, save_model, LastLayerInit, MlpParams};
use gridswitch::ots::{branch_and_bound_ots, enumerate_ots, BnbOptions, OtsOptimality, OtsResult};
use gridswitch::pipeline::{
    evaluate_records, gradient_check, infer, init_histogram, summarize, sweep_line_limits, train, EvalConfig,
    Method, OtsSolver, TrainConfig, DEFAULT_THRESHOLD,
};
use gridswitch::qp::QpStatus;

#[derive(Parser)]
#[command(name = "gridswitch", version, about = "Line-switching prediction through a differentiable DC-OPF")]
struct Cli {
    /// How relaxed line states scale the flow limits.
    #[arg(long, global = true, value_enum, default_value = "scaled")]
    limit_scaling: Scaling,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Scaled,
    Unscaled,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SolveMethod {
    Ed,
    Opf,
    OtsEnum,
    OtsBnb,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BenchMethod {
    Ed,
    Opf,
    OtsEnum,
    OtsBnb,
    Dadnn,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MATPOWER case (or a built-in fixture name) to canonical JSON.
    CompileCase {
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample OPF-feasible load scenarios.
    GenData {
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 3000)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        scale_min: f64,
        #[arg(long, default_value_t = 1.1)]
        scale_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag scenarios train/val/test.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        train: f64,
        #[arg(long, default_value_t = 0.167)]
        val: f64,
        #[arg(long, default_value_t = 0.333)]
        test: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to rewriting the input file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve every scenario with one baseline.
    Solve {
        #[arg(long)]
        case: String,
        #[arg(long)]
        loads: PathBuf,
        #[arg(long, value_enum)]
        method: SolveMethod,
        #[arg(long, default_value_t = 1e-5)]
        mip_gap: f64,
        /// Branch-and-bound limit per scenario, seconds.
        #[arg(long, default_value_t = 60.0)]
        time_limit: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the switching predictor.
    Train {
        #[arg(long)]
        case: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 50)]
        batch: usize,
        #[arg(long, default_value_t = 5e-5)]
        lr: f64,
        #[arg(long, default_value_t = 1e-2)]
        wd: f64,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Predict topologies and dispatch them.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        loads: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods on the test split.
    Bench {
        #[arg(long)]
        case: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "ed,opf,ots-enum,dadnn")]
        methods: Vec<BenchMethod>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Per-scenario results.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Re-evaluate under scaled line ratings without retraining.
    Sweep {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        case: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.95,1.0,1.1,1.2,1.3")]
        scales: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "ed,opf,ots-enum,dadnn")]
        methods: Vec<BenchMethod>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Implicit versus finite-difference gradients at random relaxed topologies.
    Gradcheck {
        #[arg(long)]
        case: String,
        #[arg(long)]
        loads: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of eval-mode predictions.
    InitHist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Replace the model by a same-shaped network with a randomly
        /// initialized output layer, seeded with this value.
        #[arg(long)]
        control_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let opf = OpfOptions {
        limit_scaling: match cli.limit_scaling {
            Scaling::Scaled => LimitScaling::Scaled,
            Scaling::Unscaled => LimitScaling::Unscaled,
        },
        ..OpfOptions::default()
    };
    match cli.command {
        Command::CompileCase { case, out } => {
            let case = load_case(&case)?;
            std::fs::write(&out, case.to_json()).with_context(|| format!("writing {}", out.display()))?;
            log::info!(
                "{}: {} buses, {} generators, {} lines",
                case.name,
                case.n_bus(),
                case.n_gen(),
                case.n_line()
            );
        }
        Command::GenData {
            case,
            count,
            scale_min,
            scale_max,
            seed,
            out,
        } => {
            let case = load_case(&case)?;
            let closed = SwitchVector::all_closed(case.n_line());
            let cfg = SamplingConfig {
                count,
                scale_min,
                scale_max,
            };
            let data = generate_dataset(&case, cfg, seed, |pd| {
                solve_dcopf_with(&case, pd, &closed, &opf).is_ok_and(|d| d.is_optimal())
            })?;
            data.save(&out).with_context(|| format!("writing {}", out.display()))?;
            log::info!("wrote {} scenarios to {}", data.len(), out.display());
        }
        Command::Split {
            data,
            train,
            val,
            test,
            seed,
            out,
        } => {
            let dataset = load_data(&data)?;
            let split = split_dataset(dataset, SplitFractions { train, val, test }, seed)?;
            let out = out.unwrap_or(data);
            split.save(&out).with_context(|| format!("writing {}", out.display()))?;
            log::info!(
                "train {} / val {} / test {}",
                split.with_tag(SplitTag::Train).count(),
                split.with_tag(SplitTag::Val).count(),
                split.with_tag(SplitTag::Test).count()
            );
        }
        Command::Solve {
            case,
            loads,
            method,
            mip_gap,
            time_limit,
            out,
        } => {
            let case = load_case(&case)?;
            let data = load_data(&loads)?;
            data.check_against(&case)?;
            let bnb = BnbOptions {
                mip_gap,
                time_limit: seconds(time_limit)?,
                opf,
            };
            let mut rows = Vec::with_capacity(data.len());
            for s in &data.scenarios {
                rows.push(solve_one(&case, s, method, &bnb)?);
            }
            write_csv(&out, &rows)?;
        }
        Command::Train {
            case,
            data,
            epochs,
            batch,
            lr,
            wd,
            hidden,
            dropout,
            seed,
            out,
            curve,
        } => {
            let case = load_case(&case)?;
            let dataset = load_data(&data)?;
            if dataset.with_tag(SplitTag::Train).next().is_none() {
                bail!("{} has no training scenarios; run `split` first", data.display());
            }
            let config = TrainConfig {
                epochs,
                batch_size: batch,
                lr,
                weight_decay: wd,
                hidden_dim: hidden,
                dropout,
                seed,
                opf,
                ..TrainConfig::default()
            };
            let outcome = train(&case, &dataset, &config)?;
            save_model(&outcome.params, &out)?;
            if let Some(curve) = curve {
                write_csv(&curve, &outcome.curve)?;
            }
            let best = &outcome.curve[outcome.best_epoch];
            log::info!(
                "best epoch {}: val cost {:.4}, inference cost {:.4}, {} infeasible",
                best.epoch,
                best.val_cost,
                best.val_infer_cost,
                best.val_infeasible
            );
        }
        Command::Infer {
            model,
            case,
            loads,
            threshold,
            out,
        } => {
            let case = load_case(&case)?;
            let model = load_model(&model)?;
            let data = load_data(&loads)?;
            let mut rows = Vec::with_capacity(data.len());
            for s in &data.scenarios {
                let r = infer(&model, &case, &s.pd, threshold, &opf)?;
                rows.push(InferRow {
                    scenario: s.id,
                    cost: r.cost(),
                    infeasible: r.flagged_infeasible,
                    violated: r.violated(),
                    max_eq_violation: r.report.as_ref().map(|v| v.max_eq_violation),
                    max_ineq_violation: r.report.as_ref().map(|v| v.max_ineq_violation),
                    open_lines: join(&r.z_bar.open_lines()),
                    time_s: r.time_s,
                });
            }
            write_csv(&out, &rows)?;
        }
        Command::Bench {
            case,
            data,
            model,
            methods,
            threshold,
            out,
            records,
        } => {
            let case = load_case(&case)?;
            let dataset = load_data(&data)?;
            let model = model.map(load_model).transpose()?;
            let test: Vec<LoadScenario> = dataset.tagged_or_all(SplitTag::Test).into_iter().cloned().collect();
            let config = eval_config(&methods, threshold, opf)?;
            let recs = evaluate_records(model.as_ref(), &case, &test, &config)?;
            if let Some(path) = records {
                write_csv(&path, &recs)?;
            }
            let rows = summarize(&recs);
            for r in &rows {
                log::info!(
                    "{:<10} cost {:>10.4} k$/h  ineq {:>5.1}%  eq {:>5.1}%  time {:.2e} s",
                    r.method.name(),
                    r.avg_cost_k,
                    r.ineq_viol_pct,
                    r.eq_viol_pct,
                    r.avg_time_s
                );
            }
            write_csv(&out, &rows)?;
        }
        Command::Sweep {
            model,
            case,
            data,
            scales,
            methods,
            out,
        } => {
            let case = load_case(&case)?;
            let dataset = load_data(&data)?;
            let model = model.map(load_model).transpose()?;
            let test: Vec<LoadScenario> = dataset.tagged_or_all(SplitTag::Test).into_iter().cloned().collect();
            let config = eval_config(&methods, DEFAULT_THRESHOLD, opf)?;
            let rows = sweep_line_limits(model.as_ref(), &case, &test, &scales, &config)?;
            write_csv(&out, &rows)?;
        }
        Command::Gradcheck {
            case,
            loads,
            samples,
            step,
            seed,
            out,
        } => {
            let case = load_case(&case)?;
            let data = load_data(&loads)?;
            data.check_against(&case)?;
            let recs = gradient_check(&case, &data.scenarios, samples, step, seed, &opf)?;
            let kept: Vec<_> = recs.iter().filter(|r| !r.excluded).collect();
            let worst = kept.iter().map(|r| r.rel_err).fold(0.0f64, f64::max);
            log::info!("{} pairs, {} kept, worst relative error {worst:.3e}", recs.len(), kept.len());
            let mut rows = Vec::new();
            for r in &recs {
                for (l, (&imp, &fd)) in r.implicit.iter().zip(&r.finite_diff).enumerate() {
                    rows.push(GradRow {
                        sample: r.sample,
                        scenario: r.scenario,
                        coordinate: l,
                        z: r.z[l],
                        implicit: imp,
                        finite_diff: fd,
                        rel_err: r.rel_err,
                        excluded: r.excluded,
                        regularized: r.regularized,
                    });
                }
            }
            write_csv(&out, &rows)?;
        }
        Command::InitHist {
            model,
            data,
            bins,
            control_seed,
            out,
        } => {
            let mut model = load_model(&model)?;
            if let Some(seed) = control_seed {
                model = control_network(&model, seed);
            }
            let dataset = load_data(&data)?;
            let pds: Vec<&[f64]> = dataset.scenarios.iter().map(|s| s.pd.as_slice()).collect();
            let h = init_histogram(&model, &pds, bins)?;
            log::info!("{} values in {} occupied bins", h.total(), h.occupied());
            let rows: Vec<HistRow> = h
                .counts
                .iter()
                .enumerate()
                .map(|(k, &count)| HistRow {
                    bin_lo: h.edges[k],
                    bin_hi: h.edges[k + 1],
                    count,
                })
                .collect();
            write_csv(&out, &rows)?;
        }
    }
    Ok(())
}

/// A path to a `.m` or `.json` case, or the name of a bundled fixture.
fn load_case(spec: &str) -> Result<GridCase> {
    let path = Path::new(spec);
    if !path.exists() {
        match spec {
            "triangle3" => return Ok(fixtures::triangle3()),
            "pent5" => return Ok(fixtures::pent5()),
            "mesh8" => return Ok(fixtures::mesh8()),
            _ => {}
        }
    }
    GridCase::load(path, fixtures::ANGLE_LIMIT).with_context(|| format!("loading case {spec}"))
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading {}", path.display()))
}

fn seconds(s: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(s).with_context(|| format!("invalid time limit {s}"))
}

fn join(lines: &[usize]) -> String {
    lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";")
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn eval_config(methods: &[BenchMethod], threshold: f64, opf: OpfOptions) -> Result<EvalConfig> {
    let enumerate = methods.contains(&BenchMethod::OtsEnum);
    let bnb = methods.contains(&BenchMethod::OtsBnb);
    if enumerate && bnb {
        bail!("choose one of ots-enum and ots-bnb");
    }
    let mut list: Vec<Method> = methods
        .iter()
        .map(|m| match m {
            BenchMethod::Ed => Method::Ed,
            BenchMethod::Opf => Method::Dcopf,
            BenchMethod::OtsEnum | BenchMethod::OtsBnb => Method::OtsExact,
            BenchMethod::Dadnn => Method::Dadnn,
        })
        .collect();
    list.sort();
    list.dedup();
    Ok(EvalConfig {
        methods: list,
        ots: if bnb {
            OtsSolver::BranchAndBound(BnbOptions {
                opf,
                ..BnbOptions::default()
            })
        } else {
            OtsSolver::Enumerate
        },
        threshold,
        opf,
        ..EvalConfig::default()
    })
}

fn control_network(model: &MlpParams, seed: u64) -> MlpParams {
    let mut control = init_network_with(
        model.input_dim(),
        model.hidden_dim(),
        model.output_dim(),
        model.layers.len() - 1,
        LastLayerInit::Random,
        model.dropout,
        seed,
    );
    control.input_mean = model.input_mean.clone();
    control.input_std = model.input_std.clone();
    control
}

#[derive(Serialize)]
struct SolveRow {
    scenario: usize,
    method: &'static str,
    status: QpStatus,
    cost: Option<f64>,
    open_lines: String,
    time_s: f64,
    optimality: Option<OtsOptimality>,
    bound: Option<f64>,
    work: Option<usize>,
    pg: String,
}

fn solve_one(case: &GridCase, s: &LoadScenario, method: SolveMethod, bnb: &BnbOptions) -> Result<SolveRow> {
    let start = Instant::now();
    let (name, dispatch, z, ots): (_, Dispatch, Option<SwitchVector>, Option<OtsResult>) = match method {
        SolveMethod::Ed => ("ED", solve_ed(case, &s.pd, &bnb.opf.qp)?, None, None),
        SolveMethod::Opf => {
            let z = SwitchVector::all_closed(case.n_line());
            ("DCOPF", solve_dcopf_with(case, &s.pd, &z, &bnb.opf)?, Some(z), None)
        }
        SolveMethod::OtsEnum | SolveMethod::OtsBnb => {
            let r = if method == SolveMethod::OtsEnum {
                enumerate_ots(case, &s.pd, None, &bnb.opf)?
            } else {
                branch_and_bound_ots(case, &s.pd, bnb)?
            };
            ("OTS_exact", r.dispatch.clone(), Some(r.z_star.clone()), Some(r))
        }
    };
    let time_s = start.elapsed().as_secs_f64();
    let optimal = dispatch.is_optimal();
    Ok(SolveRow {
        scenario: s.id,
        method: name,
        status: dispatch.status,
        cost: optimal.then_some(dispatch.cost),
        open_lines: z.map(|z| join(&z.open_lines())).unwrap_or_default(),
        time_s,
        optimality: ots.as_ref().map(|r| r.optimality),
        bound: ots.as_ref().map(|r| r.bound),
        work: ots.as_ref().map(|r| r.work),
        pg: if optimal {
            dispatch.pg.iter().map(|p| format!("{p:.9}")).collect::<Vec<_>>().join(";")
        } else {
            String::new()
        },
    })
}

#[derive(Serialize)]
struct InferRow {
    scenario: usize,
    cost: Option<f64>,
    infeasible: bool,
    violated: bool,
    max_eq_violation: Option<f64>,
    max_ineq_violation: Option<f64>,
    open_lines: String,
    time_s: f64,
}

#[derive(Serialize)]
struct GradRow {
    sample: usize,
    scenario: usize,
    coordinate: usize,
    z: f64,
    implicit: f64,
    finite_diff: f64,
    rel_err: f64,
    excluded: bool,
    regularized: bool,
}

#[derive(Serialize)]
struct HistRow {
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}
