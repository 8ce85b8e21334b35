//! Subcommand implementations. Each writes its report to `out` and its data
//! files under the configured output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use sontag_core::analysis::{
    largest_certified_sublevel, roa_certify, sweep_initial_angles, write_roa_csv, write_sweep_csv, SweepControllers,
    SweepResult,
};
use sontag_core::clf::Clf;
use sontag_core::control::Controller;
use sontag_core::design::{build_controller, synthesize_lqr, DesignKind, Plant};
use sontag_core::linalg::{is_hurwitz, Matrix};
use sontag_core::sim::{cost_report, format_real, lyap_decay_check, simulate, write_trajectory_csv, SimConfig};

use crate::config::{LevelName, LevelPolicy, RunConfig};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const ROA_CSV: &str = "roa.csv";

pub fn trajectory_csv_name(kind: DesignKind) -> String {
    format!("trajectory_{}.csv", kind.label())
}

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    ConfigError,
    GateFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Completed => 0,
            Outcome::ConfigError => 2,
            Outcome::GateFailure => 3,
        }
    }

    pub fn of_error(err: &anyhow::Error) -> Self {
        let gate = err
            .chain()
            .any(|e| matches!(e.downcast_ref::<sontag_core::Error>(), Some(sontag_core::Error::NotStabilizable(_))));
        if gate {
            Outcome::GateFailure
        } else {
            Outcome::ConfigError
        }
    }
}

/// Plant, weights and LQR design shared by every command.
struct Synthesis {
    plant: Plant,
    design: sontag_core::riccati::LqrDesign,
    q: Matrix,
    r: Matrix,
}

fn synthesize(cfg: &RunConfig) -> anyhow::Result<Synthesis> {
    let plant = cfg.plant()?;
    let (n, m) = (plant.sys.state_dim(), plant.sys.input_dim());
    let (q, r) = cfg.weights(n, m)?;
    let design = synthesize_lqr(plant.sys.as_ref(), &q, &r)?;
    Ok(Synthesis { plant, design, q, r })
}

fn prepare_out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_effective(cfg: &RunConfig, s: &Synthesis) -> anyhow::Result<PathBuf> {
    let path = cfg.out.join(EFFECTIVE_CONFIG);
    fs::write(&path, cfg.effective(&s.q, &s.r).to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn fmt_matrix(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cols: Vec<String> = m.row(i).iter().map(|v| format!("{v:.10}")).collect();
            format!("[{}]", cols.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn build(s: &Synthesis, kind: DesignKind) -> anyhow::Result<(Controller, Option<Clf>)> {
    if kind.needs_feedback_linearization() && s.plant.fbl.is_none() {
        bail!("design {kind} needs a feedback-linearizable plant; use the pendulum system");
    }
    let built = build_controller(&s.plant, &s.design, kind)?;
    Ok((built.controller, built.clf))
}

pub fn cmd_synthesize(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let kind = cfg.design_kind()?;
    let s = synthesize(cfg)?;
    build(&s, kind)?;
    let d = &s.design;
    writeln!(out, "design = {kind} ({})", design_name(kind))?;
    writeln!(out, "A = {}", fmt_matrix(&d.a))?;
    writeln!(out, "B = {}", fmt_matrix(&d.b))?;
    writeln!(out, "P = {}", fmt_matrix(&d.p))?;
    writeln!(out, "K = {}", fmt_matrix(&d.k))?;
    writeln!(out, "are_residual = {:.3e}", d.relative_residual())?;
    writeln!(out, "closed_loop_hurwitz = {}", is_hurwitz(&d.closed_loop()))?;
    writeln!(out, "newton_iterations = {}", d.iterations)?;
    prepare_out_dir(&cfg.out)?;
    let path = write_effective(cfg, &s)?;
    writeln!(out, "config = {}", path.display())?;
    Ok(())
}

fn design_name(kind: DesignKind) -> &'static str {
    match kind {
        DesignKind::SontagLocal => "Sontag law, LQR CLF",
        DesignKind::SontagGlobal => "Sontag law, transformed CLF",
        DesignKind::FeedbackLinearizing => "feedback linearization",
        DesignKind::Lqr => "LQR",
    }
}

pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let kind = cfg.design_kind()?;
    cfg.check_sim()?;
    let s = synthesize(cfg)?;
    let (controller, clf) = build(&s, kind)?;
    let x0 = cfg.initial_state(s.plant.sys.state_dim())?;
    let mut sim = SimConfig::new(x0).with_step(cfg.sim.h, cfg.sim.n);
    sim.zero_order_hold = cfg.sim.zoh;
    sim.validate()?;
    let traj = simulate(s.plant.sys.as_ref(), &controller, &sim, clf.as_ref());

    prepare_out_dir(&cfg.out)?;
    write_effective(cfg, &s)?;
    let path = cfg.out.join(trajectory_csv_name(kind));
    let mut file = create(&path)?;
    write_trajectory_csv(&traj, s.plant.sys.input_dim(), &mut file)?;
    file.flush()?;

    let report = cost_report(&traj, &s.q, &s.r)?;
    writeln!(out, "design = {kind} ({})", design_name(kind))?;
    writeln!(out, "trajectory = {}", path.display())?;
    writeln!(out, "J_quadratic = {}", format_real(report.j_quadratic))?;
    writeln!(out, "J_distorted = {}", format_real(report.j_distorted))?;
    writeln!(out, "stabilized = {}", report.stabilized)?;
    writeln!(out, "lambda_fallback_count = {}", report.lambda_fallback_count)?;
    writeln!(out, "clf_violations = {}", traj.clf_violations())?;
    if traj.halted {
        writeln!(out, "halted_at_step = {}", traj.inputs.len())?;
    }
    match &controller {
        Controller::Sontag(ctrl) => {
            let mismatch = lyap_decay_check(&traj, ctrl)?;
            writeln!(out, "max_decay_mismatch = {mismatch:.3e}")?;
        }
        _ => writeln!(out, "max_decay_mismatch = n/a")?,
    }
    Ok(())
}

fn sweep_controllers(s: &Synthesis) -> anyhow::Result<SweepControllers> {
    if s.plant.fbl.is_none() || s.plant.sys.state_dim() != 2 {
        bail!("sweep needs the pendulum system (designs i, iii and iv over initial angles)");
    }
    Ok(SweepControllers {
        sontag: build(s, DesignKind::SontagLocal)?.0,
        lqr: build(s, DesignKind::Lqr)?.0,
        fbl: build(s, DesignKind::FeedbackLinearizing)?.0,
    })
}

pub fn cmd_sweep(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let sweep_cfg = cfg.sweep_config()?;
    let s = synthesize(cfg)?;
    let controllers = sweep_controllers(&s)?;
    let result = sweep_initial_angles(s.plant.sys.as_ref(), &controllers, &s.q, &s.r, &sweep_cfg)?;

    prepare_out_dir(&cfg.out)?;
    write_effective(cfg, &s)?;
    let path = cfg.out.join(SWEEP_CSV);
    let mut file = create(&path)?;
    write_sweep_csv(&result, &mut file)?;
    file.flush()?;

    writeln!(out, "sweep = {}", path.display())?;
    writeln!(out, "rows = {}", result.rows.len())?;
    write_sweep_summary(&result, out)?;
    Ok(())
}

fn write_sweep_summary(result: &SweepResult, out: &mut dyn Write) -> anyhow::Result<()> {
    let rows = &result.rows;
    let summarize = |name: &str, stab: &dyn Fn(&sontag_core::SweepRow) -> bool, out: &mut dyn Write| {
        let count = rows.iter().filter(|r| stab(r)).count();
        let first_fail = rows.iter().find(|r| !stab(r)).map(|r| r.theta0_deg);
        let last_ok = rows.iter().take_while(|r| stab(r)).last().map(|r| r.theta0_deg);
        let range = match last_ok {
            Some(t) => format!("[{:.4}, {:.4}]", rows[0].theta0_deg, t),
            None => "none".into(),
        };
        let fail = first_fail.map_or("none".into(), |t| format!("{t:.4}"));
        writeln!(
            out,
            "{name}: stabilized {count}/{} angles, stable from start over {range} deg, first failure {fail}",
            rows.len()
        )
    };
    summarize("sontag", &|r| r.stab_sontag, out)?;
    summarize("lqr", &|r| r.stab_lqr, out)?;
    summarize("fbl", &|r| r.stab_fbl, out)?;
    let span = |f: &dyn Fn(&sontag_core::SweepRow) -> Option<f64>| {
        let vals: Vec<f64> = rows.iter().filter_map(f).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (vals.len(), min, max)
    };
    for (name, f) in [
        ("ratio_lqr", &(|r: &sontag_core::SweepRow| r.ratio_lqr) as &dyn Fn(&sontag_core::SweepRow) -> Option<f64>),
        ("ratio_fbl", &|r: &sontag_core::SweepRow| r.ratio_fbl),
    ] {
        let (count, min, max) = span(f);
        if count == 0 {
            writeln!(out, "{name}: unavailable")?;
        } else {
            writeln!(out, "{name}: {count} rows, min {min:.6}, max {max:.6}")?;
        }
    }
    Ok(())
}

pub fn cmd_roa(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let s = synthesize(cfg)?;
    let grid = cfg.roa_grid(s.plant.sys.state_dim())?;
    let (sontag, clf) = build(&s, DesignKind::SontagLocal)?;
    let clf = clf.expect("design i carries its CLF");
    let (lqr, _) = build(&s, DesignKind::Lqr)?;
    let sys = s.plant.sys.as_ref();

    let c_lqr = largest_certified_sublevel(sys, &clf, &lqr, &grid);
    let c_sontag = largest_certified_sublevel(sys, &clf, &sontag, &grid);
    let level = match cfg.roa.level {
        LevelPolicy::Named(LevelName::Largest) => c_lqr,
        LevelPolicy::Fixed(c) => {
            if !(c.is_finite() && c >= 0.0) {
                bail!("roa.level must be a finite non-negative number or \"largest\"");
            }
            c
        }
    };
    let cert = roa_certify(sys, &clf, &lqr, &sontag, &grid, level);

    prepare_out_dir(&cfg.out)?;
    write_effective(cfg, &s)?;
    let path = cfg.out.join(ROA_CSV);
    let mut file = create(&path)?;
    write_roa_csv(&cert, &mut file)?;
    file.flush()?;

    writeln!(out, "roa = {}", path.display())?;
    writeln!(out, "C_lqr = {}", format_real(c_lqr))?;
    writeln!(out, "C_sontag = {}", format_real(c_sontag))?;
    writeln!(out, "level = {}", format_real(level))?;
    writeln!(out, "members_lqr = {}", cert.count_lqr())?;
    writeln!(out, "members_sontag = {}", cert.count_sontag())?;
    writeln!(out, "subset_holds = {}", cert.subset_holds)?;
    Ok(())
}
