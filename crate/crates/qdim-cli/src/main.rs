//! Command-line driver for the qdim library.
//!
//! Every subcommand resolves a measure or density target from `--spec FILE`
//! or `--inline JSON`, runs one analysis, prints a summary to stdout, and
//! writes deterministic artifacts into `--out`. A run is a pure function of
//! the run configuration: same flags, same bytes.
//!
//! Exit codes: 0 success, 1 configuration or spec errors, 2 divergence
//! (the requested order sits at or below the target's threshold), 3 depth
//! exhaustion (the stored tree ran out of levels before the target
//! resolution was reached).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use qdim::{
    beta_n, build_measure, cascade_beta, critical_q, d_zero, error_curve, example_density,
    greedy_partition, partition_entropy, phi_zero_reference, registry_names, run_suite, tau_n_from,
    uniform_midpoint_error, CriterionReport, ExecMode, MeasureKind, MeasureSpec, MomentTable, Norm,
    OptimizeOpts, Partition, QdimError, RunConfig, Strategy, Target, ARTIFACT_VERSION, TAIL_RULE,
};

/// Quadrature tolerance used when resolving density specs to dyadic trees.
const QUAD_TOL: f64 = 1e-12;

#[derive(Parser)]
#[command(
    name = "qdim",
    version,
    about = "Quantization dimensions, scaling spectra, and dyadic partitions of measures"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Measure spec as a JSON file.
    #[arg(long, global = true, conflicts_with = "inline")]
    spec: Option<PathBuf>,

    /// Measure spec as inline JSON.
    #[arg(long, global = true)]
    inline: Option<String>,

    /// Dyadic resolution depth for measure trees.
    #[arg(long, global = true, default_value_t = 10)]
    depth: u32,

    /// Directory the artifacts are written into.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Seed for every randomized component of a run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Distance norm: euclid or max.
    #[arg(long, global = true, default_value = "euclid")]
    norm: String,

    /// Force the sequential execution path.
    #[arg(long, global = true)]
    sequential: bool,

    /// Grid exponent G for dyadic candidate points 2^-G in the 1d dynamic
    /// program.
    #[arg(long, global = true, default_value_t = 14)]
    grid: u32,
}

#[derive(Subcommand)]
enum Cmd {
    /// Moment scaling curve over a q grid with critical-exponent markers.
    Spectrum {
        /// Order r of the quantization problem.
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        order: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        q_min: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        q_max: f64,
        #[arg(long, default_value_t = 0.05)]
        q_step: f64,
    },
    /// Critical exponent of one order and the dimension it induces.
    Qr {
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        order: f64,
    },
    /// Optimized codebooks and the quantization error curve across sizes.
    Quantize {
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        order: f64,
        /// Comma-separated codebook sizes.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
        n_list: Vec<usize>,
        /// dp1d, lloyd, or exhaustive.
        #[arg(long, default_value = "lloyd")]
        strategy: String,
        /// Fix the scaling exponent so the prefactor n^(1/kappa) * e_n is
        /// reported against a known rate instead of the fitted one.
        #[arg(long, allow_hyphen_values = true)]
        kappa: Option<f64>,
        /// Random restarts per codebook size.
        #[arg(long, default_value_t = 2)]
        starts: usize,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Resolve a registry density through its dyadic tree instead of
        /// quadrature.
        #[arg(long)]
        measure_mode: bool,
    },
    /// Greedy dyadic partition, or the stopping partition of a threshold.
    Partition {
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        order: f64,
        /// Cardinality budget for the greedy refinement.
        #[arg(long, default_value_t = 64)]
        budget: usize,
        /// Split until the envelope drops below 1/x and report the count
        /// M(x) instead of refining to a budget.
        #[arg(long)]
        entropy_x: Option<f64>,
    },
    /// Closed-form reference values for the bundled example densities.
    Oracles {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Run the bundled verification checks and report PASS/FAIL.
    Verify {
        /// Print the known check ids and exit.
        #[arg(long)]
        list: bool,
        /// all, cascade, or bounds.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Registered densities with their scaling data.
    List,
    /// Evaluate one reference quantity.
    Eval {
        /// Registry density name (required by the density-specific ops).
        #[arg(long)]
        name: Option<String>,
        /// phi-zero, phi-r, snorm, midpoint-error, or cascade-beta.
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        order: f64,
        /// Integrability exponent for the snorm op.
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        s: f64,
        /// Codebook size for the midpoint-error op.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Comma-separated branch probabilities for the cascade-beta op.
        #[arg(long, value_delimiter = ',')]
        probs: Vec<f64>,
        /// Moment exponent for the cascade-beta op.
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        q: f64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), QdimError> {
    let run = RunConfig {
        depth: cli.depth,
        seed: cli.seed,
        norm: parse_norm(&cli.norm)?,
        parallel: !cli.sequential,
        grid: cli.grid,
    };
    fs::create_dir_all(&cli.out)
        .map_err(|e| QdimError::Unsupported(format!("cannot create {}: {e}", cli.out.display())))?;
    match &cli.cmd {
        Cmd::Spectrum {
            order,
            q_min,
            q_max,
            q_step,
        } => cmd_spectrum(&cli, &run, *order, *q_min, *q_max, *q_step),
        Cmd::Qr { order } => cmd_qr(&cli, &run, *order),
        Cmd::Quantize {
            order,
            n_list,
            strategy,
            kappa,
            starts,
            max_iters,
            measure_mode,
        } => cmd_quantize(
            &cli,
            &run,
            *order,
            n_list,
            strategy,
            *kappa,
            *starts,
            *max_iters,
            *measure_mode,
        ),
        Cmd::Partition {
            order,
            budget,
            entropy_x,
        } => cmd_partition(&cli, &run, *order, *budget, *entropy_x),
        Cmd::Oracles { cmd } => cmd_oracles(cmd),
        Cmd::Verify { list, suite } => cmd_verify(&cli, &run, *list, suite),
    }
}

fn parse_norm(name: &str) -> Result<Norm, QdimError> {
    match name.to_ascii_lowercase().as_str() {
        "euclid" => Ok(Norm::Euclid),
        "max" => Ok(Norm::Max),
        other => Err(QdimError::InvalidSpec(format!(
            "unknown norm {other:?} (expected euclid or max)"
        ))),
    }
}

fn norm_name(norm: Norm) -> &'static str {
    match norm {
        Norm::Euclid => "euclid",
        Norm::Max => "max",
    }
}

fn parse_strategy(name: &str) -> Result<Strategy, QdimError> {
    match name.to_ascii_lowercase().as_str() {
        "dp1d" => Ok(Strategy::Dp1d),
        "lloyd" => Ok(Strategy::Lloyd),
        "exhaustive" => Ok(Strategy::Exhaustive),
        other => Err(QdimError::InvalidSpec(format!(
            "unknown strategy {other:?} (expected dp1d, lloyd, or exhaustive)"
        ))),
    }
}

fn load_spec(cli: &Cli) -> Result<MeasureSpec, QdimError> {
    let text = if let Some(path) = &cli.spec {
        fs::read_to_string(path)
            .map_err(|e| QdimError::InvalidSpec(format!("cannot read {}: {e}", path.display())))?
    } else if let Some(inline) = &cli.inline {
        inline.clone()
    } else {
        return Err(QdimError::InvalidSpec(
            "no measure given: pass --spec FILE or --inline JSON".into(),
        ));
    };
    serde_json::from_str(&text).map_err(|e| QdimError::InvalidSpec(format!("measure spec: {e}")))
}

/// Run parameters that determine artifact bytes. The execution mode is
/// deliberately absent: parallel and sequential runs are bit-identical, so
/// recording the mode would break byte comparison for no information.
fn run_json(run: &RunConfig) -> Value {
    json!({
        "depth": run.depth,
        "seed": run.seed,
        "norm": norm_name(run.norm),
        "grid": run.grid,
    })
}

/// First line of every CSV artifact: version, extrapolation protocol, and
/// the run parameters that determine the bytes.
fn csv_header(run: &RunConfig) -> String {
    format!(
        "# artifact {ARTIFACT_VERSION}; depth-protocol {TAIL_RULE}; depth {}; seed {}; norm {}\n",
        run.depth,
        run.seed,
        norm_name(run.norm)
    )
}

fn write_text(path: &Path, text: &str) -> Result<(), QdimError> {
    fs::write(path, text)
        .map_err(|e| QdimError::Unsupported(format!("cannot write {}: {e}", path.display())))
}

fn write_pretty_json(path: &Path, value: &Value) -> Result<(), QdimError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| QdimError::Unsupported(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn cmd_spectrum(
    cli: &Cli,
    run: &RunConfig,
    order: f64,
    q_min: f64,
    q_max: f64,
    q_step: f64,
) -> Result<(), QdimError> {
    if !(q_step > 0.0) || q_max < q_min {
        return Err(QdimError::InvalidSpec(
            "spectrum grid needs q_step > 0 and q_max >= q_min".into(),
        ));
    }
    let spec = load_spec(cli)?;
    let m = build_measure(&spec, run.depth, QUAD_TOL)?;
    let table = MomentTable::envelopes(&m, order);

    let mut csv = csv_header(run);
    csv.push_str("# columns: q,beta,tau\n");
    let steps = ((q_max - q_min) / q_step + 1e-9).floor() as usize;
    for i in 0..=steps {
        let q = q_min + i as f64 * q_step;
        let beta = beta_n(&m, q, run.depth);
        let tau = tau_n_from(&m, &table, order, q, run.depth).value;
        csv.push_str(&format!("{q:.9},{beta:.9},{tau:.9}\n"));
    }
    write_text(&cli.out.join("spectrum.csv"), &csv)?;

    let crit = critical_q(&m, order, "")?;
    let entropy = d_zero(&m);
    let mut markers = json!({
        "artifact": ARTIFACT_VERSION,
        "run": run_json(run),
        "order": order,
        "q_r": crit.q_r,
        "d_r": crit.d_r,
        "bracket": [crit.bracket.0, crit.bracket.1],
        "tau_at_root": crit.tau_at_root,
        "dim_m": crit.dim_m,
        "dim_infty": crit.dim_infty,
        "d_zero": entropy.value,
        "protocol": crit.protocol,
    });
    if m.atoms.is_some() {
        markers["note"] = json!(
            "atomic target: the scaling curve degenerates and the markers \
             reflect finite-depth resolution only"
        );
    }
    write_pretty_json(&cli.out.join("spectrum-markers.json"), &markers)?;

    let gp = format!(
        "# gnuplot script for spectrum.csv (data only, no styling baked in)\n\
         set datafile separator \",\"\n\
         set datafile commentschars \"#\"\n\
         set xlabel \"q\"\n\
         set ylabel \"scaling exponent\"\n\
         set arrow from {q_r}, graph 0 to {q_r}, graph 1 nohead dashtype 2\n\
         plot \"spectrum.csv\" using 1:2 with lines title \"beta\", \\\n\
              \"spectrum.csv\" using 1:3 with lines title \"tau\"\n",
        q_r = crit.q_r
    );
    write_text(&cli.out.join("spectrum.gp"), &gp)?;

    println!(
        "spectrum: {} q values; q_r = {:.6}, D_r = {:.6}, D_0 = {:.6} -> {}",
        steps + 1,
        crit.q_r,
        crit.d_r,
        entropy.value,
        cli.out.display()
    );
    Ok(())
}

fn cmd_qr(cli: &Cli, run: &RunConfig, order: f64) -> Result<(), QdimError> {
    let spec = load_spec(cli)?;
    let m = build_measure(&spec, run.depth, QUAD_TOL)?;
    let crit = critical_q(&m, order, "")?;
    let report = json!({
        "artifact": ARTIFACT_VERSION,
        "run": run_json(run),
        "order": order,
        "q_r": crit.q_r,
        "d_r": crit.d_r,
        "bracket": [crit.bracket.0, crit.bracket.1],
        "tau_at_root": crit.tau_at_root,
        "dim_m": crit.dim_m,
        "dim_infty": crit.dim_infty,
        "protocol": crit.protocol,
    });
    write_pretty_json(&cli.out.join("qr.json"), &report)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).unwrap_or_default()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_quantize(
    cli: &Cli,
    run: &RunConfig,
    order: f64,
    n_list: &[usize],
    strategy: &str,
    kappa: Option<f64>,
    starts: usize,
    max_iters: usize,
    measure_mode: bool,
) -> Result<(), QdimError> {
    let strategy = parse_strategy(strategy)?;
    let spec = load_spec(cli)?;

    let reg_store;
    let m_store;
    let target;
    let declared_threshold;
    match (&spec.kind, measure_mode) {
        (MeasureKind::Density { name }, false) => {
            reg_store = example_density(name)?;
            declared_threshold = -reg_store.dim_infty;
            target = Target::density(&reg_store);
        }
        _ => {
            m_store = build_measure(&spec, run.depth, QUAD_TOL)?;
            declared_threshold = if m_store.atoms.is_some() { 0.0 } else { f64::NEG_INFINITY };
            target = Target::measure(&m_store, run.norm);
        }
    }

    let opts = OptimizeOpts {
        strategy,
        seed: run.seed,
        grid_g: run.grid,
        starts,
        max_iters,
        mode: ExecMode::from_flag(run.parallel),
        warm: None,
        candidates: None,
    };
    let curve = error_curve(&target, order, n_list, kappa, &opts)?;

    let mut csv = csv_header(run);
    csv.push_str("# columns: n,v,error\n");
    for p in &curve.points {
        csv.push_str(&format!("{},{},{}\n", p.n, p.v, p.error));
    }
    write_text(&cli.out.join("quantize-curve.csv"), &csv)?;

    let report = json!({
        "artifact": ARTIFACT_VERSION,
        "run": run_json(run),
        "order": order,
        "strategy": format!("{strategy:?}").to_ascii_lowercase(),
        "curve": curve,
    });
    write_pretty_json(&cli.out.join("quantize.json"), &report)?;

    if curve.diverged {
        // Artifacts above stay on disk so the divergence report is
        // inspectable; the exit code still signals the condition.
        return Err(QdimError::Divergent {
            r: order,
            threshold: declared_threshold,
            what: "quantization error is infinite for every codebook".into(),
        });
    }
    println!(
        "quantize: {} sizes; d_hat = {:.6}, c_hat = {:.6} -> {}",
        curve.points.len(),
        curve.d_hat,
        curve.c_hat,
        cli.out.display()
    );
    Ok(())
}

fn partition_csv(run: &RunConfig, part: &Partition) -> String {
    let mut csv = csv_header(run);
    csv.push_str("# columns: level,coords...,j,mass\n");
    for c in &part.cubes {
        let coords = c
            .cube
            .coords
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",");
        csv.push_str(&format!("{},{},{},{}\n", c.cube.level, coords, c.j, c.mass));
    }
    csv
}

fn cmd_partition(
    cli: &Cli,
    run: &RunConfig,
    order: f64,
    budget: usize,
    entropy_x: Option<f64>,
) -> Result<(), QdimError> {
    let spec = load_spec(cli)?;
    let m = build_measure(&spec, run.depth, QUAD_TOL)?;

    let (part, m_of_x) = match entropy_x {
        Some(x) => {
            let pe = partition_entropy(&m, order, x)?;
            (pe.partition, Some(pe.m_of_x))
        }
        None => (greedy_partition(&m, order, budget)?, None),
    };

    write_text(&cli.out.join("partition.csv"), &partition_csv(run, &part))?;

    let cubes: Vec<Value> = part
        .cubes
        .iter()
        .map(|c| {
            json!({
                "level": c.cube.level,
                "coords": c.cube.coords,
                "j": c.j,
                "mass": c.mass,
            })
        })
        .collect();
    let mut report = json!({
        "artifact": ARTIFACT_VERSION,
        "run": run_json(run),
        "order": order,
        "cardinality": part.cardinality,
        "max_j": part.max_j,
        "depth_limited": part.depth_limited,
        "volume": part.volume(),
        "cubes": cubes,
    });
    match m_of_x {
        Some(count) => {
            report["entropy_x"] = json!(entropy_x);
            report["m_of_x"] = json!(count);
        }
        None => report["budget"] = json!(budget),
    }
    write_pretty_json(&cli.out.join("partition.json"), &report)?;

    match m_of_x {
        Some(count) => println!(
            "partition: M(x) = {count}, max_j = {:.6e} -> {}",
            part.max_j,
            cli.out.display()
        ),
        None => println!(
            "partition: {} cubes, max_j = {:.6e} -> {}",
            part.cardinality,
            part.max_j,
            cli.out.display()
        ),
    }
    Ok(())
}

fn cmd_oracles(cmd: &OracleCmd) -> Result<(), QdimError> {
    match cmd {
        OracleCmd::List => {
            let rows: Result<Vec<Value>, QdimError> = registry_names()
                .iter()
                .map(|name| {
                    let reg = example_density(name)?;
                    Ok(json!({
                        "name": reg.name,
                        "s_h": reg.s_h,
                        "dim_infty": reg.dim_infty,
                        "truncation_note": reg.truncation_note,
                    }))
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&rows?).unwrap_or_default()
            );
            Ok(())
        }
        OracleCmd::Eval {
            name,
            op,
            order,
            s,
            n,
            probs,
            q,
        } => {
            let need_name = || {
                name.clone().ok_or_else(|| {
                    QdimError::InvalidSpec(format!("op {op:?} needs --name"))
                })
            };
            let report = match op.as_str() {
                "phi-zero" => {
                    let name = need_name()?;
                    let value = phi_zero_reference(&name)?;
                    json!({"op": op, "name": name, "value": value})
                }
                "phi-r" => {
                    let name = need_name()?;
                    let reg = example_density(&name)?;
                    json!({"op": op, "name": name, "order": order, "value": reg.phi_r(*order)})
                }
                "snorm" => {
                    let name = need_name()?;
                    let reg = example_density(&name)?;
                    let outcome = reg.snorm(*s);
                    json!({
                        "op": op,
                        "name": name,
                        "s": s,
                        "finite": outcome.is_finite(),
                        "value": outcome.value(),
                    })
                }
                "midpoint-error" => {
                    let value = uniform_midpoint_error(*n, *order)?;
                    json!({"op": op, "n": n, "order": order, "value": value})
                }
                "cascade-beta" => {
                    let value = cascade_beta(probs, *q)?;
                    json!({"op": op, "probs": probs, "q": q, "value": value})
                }
                other => {
                    return Err(QdimError::InvalidSpec(format!(
                        "unknown op {other:?} (expected phi-zero, phi-r, snorm, \
                         midpoint-error, or cascade-beta)"
                    )))
                }
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&report).unwrap_or_default()
            );
            Ok(())
        }
    }
}

fn cmd_verify(cli: &Cli, run: &RunConfig, list: bool, suite: &str) -> Result<(), QdimError> {
    if list {
        for id in qdim::criterion_ids() {
            println!("{id}");
        }
        return Ok(());
    }
    let mode = ExecMode::from_flag(run.parallel);
    let reports: Vec<CriterionReport> = run_suite(suite, mode)?;
    for rep in &reports {
        println!(
            "criterion {}: {} ({:.1}s)",
            rep.id,
            if rep.passed { "PASS" } else { "FAIL" },
            rep.seconds
        );
        if !rep.passed {
            for line in &rep.lines {
                println!("    {line}");
            }
        }
    }
    let report = json!({
        "artifact": ARTIFACT_VERSION,
        "suite": suite,
        "run": run_json(run),
        "reports": reports,
    });
    write_pretty_json(&cli.out.join("verify.json"), &report)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "verify: {}/{} passed -> {}",
        reports.len() - failed,
        reports.len(),
        cli.out.join("verify.json").display()
    );
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
