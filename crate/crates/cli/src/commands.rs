use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nonholo::constraints::MANIFOLD_TOLERANCE;
use nonholo::control::{synthesize, CONDITION_LIMIT};
use nonholo::dynamics::integrate::StepPlan;
use nonholo::dynamics::{
    closed_loop_order_check, compare_trajectories, energies, proposition4_check,
    simulate_closed_loop, simulate_nonholonomic, SimulationOptions,
};
use nonholo::scenarios::{builtin, builtins, BUILTIN_NAMES};
use nonholo::{Error, Scenario, TrajectoryRecord};
use serde::Serialize;

use crate::report::*;
use crate::{Overrides, RunArgs};

pub const SETUP_ERROR: u8 = 1;
pub const HALTED: u8 = 2;
pub const CHECK_FAILED: u8 = 3;

/// Agreement required between stored and recomputed row quantities,
/// relative to `max(1, |value|)`.
const VALIDATE_TOLERANCE: f64 = 1e-12;

/// Resolves a builtin name or a TOML path, applies overrides, and leaves the
/// initial state unchecked.
fn resolve_unsettled(reference: &str, overrides: &Overrides) -> Result<Scenario> {
    let mut sc = if BUILTIN_NAMES.contains(&reference) {
        builtin(reference)?
    } else {
        let path = Path::new(reference);
        if !path.exists() {
            bail!(
                "`{reference}` is neither a built-in scenario ({}) nor an existing file",
                BUILTIN_NAMES.join(", ")
            );
        }
        Scenario::load_unsettled(path).with_context(|| format!("loading {}", path.display()))?
    };
    for (name, value) in &overrides.params {
        sc.set_param(name, *value)?;
    }
    sc.project_initial |= overrides.project_initial;
    Ok(sc)
}

fn resolve(reference: &str, overrides: &Overrides) -> Result<Scenario> {
    let mut sc = resolve_unsettled(reference, overrides)?;
    sc.settle_initial()
        .with_context(|| format!("initial state of `{}`", sc.name))?;
    Ok(sc)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_record(record: &TrajectoryRecord, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    record
        .write_csv(&mut w)
        .with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

pub fn list(dir: Option<&Path>, json: bool) -> Result<ExitCode> {
    let mut entries: Vec<ListEntry> = builtins()
        .into_iter()
        .map(|s| ListEntry {
            dimension: s.dimension(),
            constraints: s.system.constraint_count(),
            name: s.name,
            description: s.description,
            source: "builtin".into(),
        })
        .collect();
    if let Some(dir) = dir {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            match Scenario::load_unsettled(&path) {
                Ok(s) => entries.push(ListEntry {
                    dimension: s.dimension(),
                    constraints: s.system.constraint_count(),
                    name: s.name,
                    description: s.description,
                    source: path.display().to_string(),
                }),
                Err(e) => eprintln!("skipping {}: {e}", path.display()),
            }
        }
    }
    if json {
        print_json(&entries)?;
    } else {
        let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
        for e in &entries {
            let origin = if e.source == "builtin" {
                String::new()
            } else {
                format!("  [{}]", e.source)
            };
            println!("{:width$}  {}{origin}", e.name, e.description);
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn run(args: &RunArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut sc = resolve(&args.scenario, &args.overrides)?;
    if let Some(h) = args.dt {
        sc.h = h;
    }
    if let Some(t) = args.t_final {
        sc.t_final = t;
    }
    let compare = args.compare_nonholonomic || sc.compare_nonholonomic;
    let plan = StepPlan::covering(sc.t_final, sc.h)?;
    let sys = &sc.system;
    let s0 = &sc.initial;
    let proposition4 = proposition4_check(sys, s0)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let closed = simulate_closed_loop(sys, s0, plan, SimulationOptions::default())
        .context("closed loop cannot start from the initial state")?;
    write_record(&closed, &args.out.join("trajectory.csv"))?;
    let mut halted = closed.halt.is_some();

    let nonholonomic = if compare {
        let nh = simulate_nonholonomic(sys, s0, plan, SimulationOptions::default())
            .context("nonholonomic motion cannot start from the initial state")?;
        write_record(&nh, &args.out.join("nonholonomic.csv"))?;
        halted |= nh.halt.is_some();
        let gap = if closed.completed() && nh.completed() {
            Some(compare_trajectories(&closed, &nh)?.sup)
        } else {
            None
        };
        Some(NonholonomicReport {
            rows: nh.len(),
            completed: nh.completed(),
            halt: nh.halt.as_ref().map(HaltReport::from),
            max_abs_phi: nh.max_abs_phi(),
            trajectory_gap: gap,
        })
    } else {
        None
    };

    let (mut richardson_ratio, mut order_check_error) = (None, None);
    if args.order_check {
        if closed.completed() {
            match closed_loop_order_check(sys, s0, plan) {
                Ok(r) => richardson_ratio = Some(r.ratio),
                Err(e) => {
                    halted = true;
                    order_check_error = Some(e.to_string());
                }
            }
        } else {
            order_check_error = Some("skipped: the closed loop halted".into());
        }
    }

    let summary = Summary {
        scenario: sc.name.clone(),
        description: sc.description.clone(),
        dimension: sc.dimension(),
        constraints: sys.constraint_count(),
        parameters: sc.parameters().clone(),
        assumed: sc.assumed.clone(),
        h: plan.h,
        t_final: plan.h * plan.steps as f64,
        steps: plan.steps,
        rows: closed.len(),
        completed: closed.completed(),
        halt: closed.halt.as_ref().map(HaltReport::from),
        max_abs_phi: closed.max_abs_phi(),
        initial_energy: closed.total_energy[0],
        final_energy: *closed
            .total_energy
            .last()
            .expect("record has the initial row"),
        proposition4,
        richardson_ratio,
        order_check_error,
        nonholonomic,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(args.out.join("summary.json"), format!("{text}\n"))?;

    if args.json {
        println!("{text}");
    } else {
        print_run_summary(&summary, &args.out);
    }
    if let Some(h) = &closed.halt {
        eprintln!("closed loop halted at t = {}: {}", h.time, h.error);
    }
    if let Some(h) = summary.nonholonomic.as_ref().and_then(|n| n.halt.as_ref()) {
        eprintln!(
            "nonholonomic motion halted at t = {}: {}",
            h.time, h.message
        );
    }
    if let Some(e) = &summary.order_check_error {
        eprintln!("order check failed: {e}");
    }
    Ok(if halted {
        ExitCode::from(HALTED)
    } else {
        ExitCode::SUCCESS
    })
}

fn print_run_summary(s: &Summary, out: &Path) {
    println!("scenario       {}", s.scenario);
    println!(
        "steps          {} x h = {:e} ({} rows written)",
        s.steps, s.h, s.rows
    );
    println!("max |phi|      {:e}", s.max_abs_phi);
    println!("energy         {} -> {}", s.initial_energy, s.final_energy);
    println!("proposition4   {}", s.proposition4);
    if let Some(r) = s.richardson_ratio {
        println!("richardson     {r:.3}");
    }
    if let Some(n) = &s.nonholonomic {
        match n.trajectory_gap {
            Some(g) => println!("sup gap        {g:e}"),
            None => println!("sup gap        n/a (a run halted)"),
        }
    }
    if !s.assumed.is_empty() {
        println!("assumed        {}", s.assumed.join("; "));
    }
    println!("output         {}", out.display());
}

pub fn check(reference: &str, overrides: &Overrides, json: bool) -> Result<ExitCode> {
    let mut sc = resolve_unsettled(reference, overrides)?;
    if sc.project_initial {
        sc.settle_initial()?;
    }
    let sys = &sc.system;
    let s = &sc.initial;
    let m = sys.constraint_count();
    let mut items = Vec::new();

    let reg = sys.constraints().regularity(s, sys.params())?;
    items.push(CheckItem {
        name: "regularity rank",
        pass: reg.rank == m,
        detail: format!(
            "rank [dphi/dq | dphi/dv] = {} of {m}, smallest singular value {:e}",
            reg.rank, reg.smallest_singular_value
        ),
    });

    let residual = sys.constraints().relative_residual(s, sys.params())?;
    items.push(CheckItem {
        name: "on-manifold residual",
        pass: residual <= MANIFOLD_TOLERANCE,
        detail: format!("relative |phi| = {residual:e} (tolerance {MANIFOLD_TOLERANCE:e})"),
    });

    let condition = match synthesize(sys, s) {
        Ok(sol) => CheckItem {
            name: "condition estimate",
            pass: true,
            detail: format!(
                "cond(A) = {:e} (limit {CONDITION_LIMIT:e}), tau = {:?}",
                sol.condition,
                sol.tau.as_slice()
            ),
        },
        Err(e @ Error::TransversalityViolation { .. }) => CheckItem {
            name: "condition estimate",
            pass: false,
            detail: format!("overflow: {e}"),
        },
        Err(e) => return Err(e.into()),
    };
    items.push(condition);

    let proposition4 = proposition4_check(sys, s).ok();
    let pass = items.iter().all(|i| i.pass);
    let report = CheckReport {
        scenario: sc.name.clone(),
        pass,
        items,
        proposition4,
    };
    if json {
        print_json(&report)?;
    } else {
        println!("scenario {}", report.scenario);
        for i in &report.items {
            println!(
                "{} {:22} {}",
                if i.pass { "PASS" } else { "FAIL" },
                i.name,
                i.detail
            );
        }
        match report.proposition4 {
            Some(p) => println!("INFO {:22} {p}", "proposition4"),
            None => println!(
                "INFO {:22} undetermined (Chetaev multipliers undefined)",
                "proposition4"
            ),
        }
    }
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    })
}

pub fn validate(
    csv: &Path,
    reference: &str,
    overrides: &Overrides,
    json: bool,
) -> Result<ExitCode> {
    let sc = resolve_unsettled(reference, overrides)?;
    let file = File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let record = TrajectoryRecord::read_csv(BufReader::new(file))
        .with_context(|| format!("{} does not match the column contract", csv.display()))?;
    if record.dimension != sc.dimension() || record.constraint_count != sc.system.constraint_count()
    {
        bail!(
            "{} has n = {}, m = {} but `{}` has n = {}, m = {}",
            csv.display(),
            record.dimension,
            record.constraint_count,
            sc.name,
            sc.dimension(),
            sc.system.constraint_count()
        );
    }
    let sys = &sc.system;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
    let mut report = ValidateReport {
        rows: record.len(),
        pass: true,
        max_energy_error: 0.0,
        max_kinetic_error: 0.0,
        max_phi_error: 0.0,
        first_bad_row: None,
    };
    for (i, s) in record.states.iter().enumerate() {
        let (total, kinetic) = energies(sys, s)?;
        let phi = sys.constraints().evaluate(s, sys.params())?.value;
        let e_err = rel(record.total_energy[i], total);
        let k_err = rel(record.kinetic_energy[i], kinetic);
        let p_err = phi
            .iter()
            .zip(record.constraint_values[i].iter())
            .map(|(want, got)| rel(*got, *want))
            .fold(0.0, f64::max);
        report.max_energy_error = report.max_energy_error.max(e_err);
        report.max_kinetic_error = report.max_kinetic_error.max(k_err);
        report.max_phi_error = report.max_phi_error.max(p_err);
        if e_err.max(k_err).max(p_err) > VALIDATE_TOLERANCE && report.first_bad_row.is_none() {
            report.first_bad_row = Some(i);
            report.pass = false;
        }
    }
    if json {
        print_json(&report)?;
    } else {
        println!(
            "{} {} rows; max relative error energy {:e}, kinetic {:e}, phi {:e}",
            if report.pass { "PASS" } else { "FAIL" },
            report.rows,
            report.max_energy_error,
            report.max_kinetic_error,
            report.max_phi_error
        );
        if let Some(i) = report.first_bad_row {
            println!("first mismatch at row {i} (t = {})", record.times[i]);
        }
    }
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    })
}
