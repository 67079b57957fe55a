use crate::circuit::CircuitParams;
use crate::config::ConfigError;
use crate::design::{
    evaluate_design, min_detuning_for_current_cap, misalignment_envelope, DesignError,
};
use crate::fha::{
    input_impedance, loss_budget, solve_operating_point, sweep_coupling, OperatingPoint,
    SolverRegistry,
};
use crate::magnetics::{
    analyze_coupler, calibrate, coupling_coefficient, geometry_sweep, Anchor, CouplerGeometry,
    SweepVariable,
};
use crate::table::{Cell, PlotSpec, SweepTable};
use crate::transient::{simulate_with, waveform_export, zvs_check, TransientError};

use super::{Artifacts, CliError, Command, Context, Outcome, Report, Status};

fn ok(report: &mut Report) -> Outcome {
    Outcome {
        report: report.finish(),
        artifacts: Vec::new(),
        status: Status::Ok,
    }
}

fn require_geometry(ctx: &Context) -> Result<&CouplerGeometry, CliError> {
    ctx.config.geometry.as_ref().ok_or_else(|| {
        CliError::Config(ConfigError {
            line: None,
            key: None,
            message: "this command needs a [geometry] section".into(),
        })
    })
}

fn operating_point_lines(r: &mut Report, p: &CircuitParams, op: &OperatingPoint) {
    r.line("k", p.k)
        .line("i1_Arms", format!("{:.4}", op.i1.norm()))
        .line("i2_Arms", format!("{:.4}", op.i2.norm()))
        .line("pout_W", format!("{:.3}", op.pout))
        .line("pin_W", format!("{:.3}", op.pin))
        .line("eta", format!("{:.4}", op.eta))
        .line("rectifier_conducting", op.conducting)
        .line("zvs", op.zvs);
    match input_impedance(p, op) {
        Ok((z, _)) => r.line("zin_ohm", format!("{:.4} {:+.4}j", z.re, z.im)),
        Err(_) => r.line("zin_ohm", "undefined"),
    };
}

fn operating_point_row(case: &str, p: &CircuitParams, op: &OperatingPoint) -> Vec<Cell> {
    let z = input_impedance(p, op).ok().map(|(z, _)| z);
    vec![
        case.into(),
        p.k.into(),
        op.i1.norm().into(),
        op.i2.norm().into(),
        op.pout.into(),
        op.pin.into(),
        op.eta.into(),
        op.zvs.into(),
        z.map_or(f64::NAN, |z| z.re).into(),
        z.map_or(f64::NAN, |z| z.im).into(),
    ]
}

pub struct Analyze;

impl Command for Analyze {
    fn name(&self) -> &'static str {
        "analyze"
    }

    fn about(&self) -> &'static str {
        "first-harmonic operating point, with and without losses"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let p = ctx.config.circuit;
        let d = p.derived()?;
        let mut r = Report::default();
        r.heading("circuit")
            .line("f1_kHz", format!("{:.3}", d.f1 / 1e3))
            .line("f2_kHz", format!("{:.3}", d.f2 / 1e3))
            .line("x1_ohm", format!("{:.4}", d.x1))
            .line("x2_ohm", format!("{:.4}", d.x2))
            .line("m_uH", format!("{:.4}", d.m * 1e6))
            .line("v1_Vrms", format!("{:.4}", d.v1_rms));

        let mut table = SweepTable::new([
            "case",
            "k",
            "i1_Arms",
            "i2_Arms",
            "pout_W",
            "pin_W",
            "eta",
            "zvs",
            "zin_re_ohm",
            "zin_im_ohm",
        ]);
        for (case, params) in [("configured", p), ("lossless", p.lossless())] {
            let op = solve_operating_point(&params)?;
            r.heading(&format!("operating point, {case}"));
            operating_point_lines(&mut r, &params, &op);
            if case == "configured" {
                let loss = loss_budget(&params, &op);
                r.line("loss_primary_W", format!("{:.3}", loss.copper_primary))
                    .line("loss_secondary_W", format!("{:.3}", loss.copper_secondary))
                    .line("loss_rectifier_W", format!("{:.3}", loss.rectifier));
            }
            table.push(operating_point_row(case, &params, &op))?;
        }
        out.csv("analyze", &table)?;
        Ok(ok(&mut r))
    }
}

pub struct Simulate;

impl Command for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }

    fn about(&self) -> &'static str {
        "switched time-domain run to steady state, metrics and waveforms"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let p = ctx.config.circuit;
        let sim = &ctx.config.sim;
        let res = simulate_with(&p, &sim.options())?;
        let m = res.metrics;
        let mut r = Report::default();
        r.heading("transient")
            .line("steady", res.steady)
            .line("cycles_run", res.cycles_run)
            .line("steps_per_cycle", res.steps_per_cycle)
            .line("i1_Arms", format!("{:.4}", m.i1_rms))
            .line("i2_Arms", format!("{:.4}", m.i2_rms))
            .line("pout_W", format!("{:.3}", m.pout))
            .line("pin_W", format!("{:.3}", m.pin))
            .line("ploss_W", format!("{:.3}", m.ploss))
            .line("eta", format!("{:.4}", m.eta))
            .line("thd_i1", format!("{:.4}", m.thd_i1))
            .line("energy_residual", format!("{:.2e}", m.energy_residual));
        match zvs_check(&res) {
            Ok(zvs) => {
                r.line("zvs", zvs);
                if let Some(margin) = m.zvs_margin {
                    r.line("zvs_margin_A", format!("{margin:.4}"));
                }
            }
            Err(TransientError::NotSteady) => {
                r.line("zvs", "undetermined (not steady)");
            }
            Err(e) => return Err(e.into()),
        }
        if let Ok(op) = solve_operating_point(&p) {
            r.heading("first-harmonic reference")
                .line("i1_Arms", format!("{:.4}", op.i1.norm()))
                .line("pout_W", format!("{:.3}", op.pout));
        }

        let n = sim.export_cycles.min(res.retained_cycles);
        let wave = waveform_export(&res, n)?;
        out.csv("waveform", &wave)?;
        out.svg(
            "waveform",
            &wave,
            &PlotSpec::new(["iL1_A", "iL2_A"]).titled("coil currents"),
        )?;
        Ok(ok(&mut r))
    }
}

pub struct SweepCoupling;

impl Command for SweepCoupling {
    fn name(&self) -> &'static str {
        "sweep-k"
    }

    fn about(&self) -> &'static str {
        "operating point across a coupling grid"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let sweep = &ctx.config.sweep;
        let solvers = SolverRegistry::with_builtins();
        let solver = solvers.get(&sweep.solver).map_err(|_| {
            CliError::Config(ConfigError {
                line: None,
                key: Some("solver".into()),
                message: format!(
                    "unknown solver `{}` (available: {})",
                    sweep.solver,
                    solvers.names().join(", ")
                ),
            })
        })?;
        let table = sweep_coupling(&ctx.config.circuit, &sweep.k.grid(), solver)?;
        let k = table.column("k")?;
        let pout = table.column("pout_W")?;
        let mut r = Report::default();
        r.heading("coupling sweep")
            .line("solver", solver.name())
            .line("points", table.len());
        if let Some((i, pmax)) = pout
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            r.line("peak_pout_W", format!("{pmax:.3}"))
                .line("peak_at_k", k[i]);
        }
        out.csv("sweep_k", &table)?;
        out.svg(
            "sweep_k",
            &table,
            &PlotSpec::new(["pout_W"]).titled("output power vs coupling"),
        )?;
        Ok(ok(&mut r))
    }
}

pub struct SweepMisalignment;

impl Command for SweepMisalignment {
    fn name(&self) -> &'static str {
        "sweep-misalign"
    }

    fn about(&self) -> &'static str {
        "coupling and output over a dx/dy misalignment grid"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let g = require_geometry(ctx)?;
        let cfg = &ctx.config;
        let spec = cfg.design.unwrap_or_default();
        let dx = cfg.sweep.dx.grid();
        let dy = cfg.sweep.dy.grid();

        let envelope = misalignment_envelope(&cfg.circuit, g, &dx, &dy, &spec)?;
        let along_dx = geometry_sweep(g, SweepVariable::Dx, &dx)?;
        let along_dy = geometry_sweep(g, SweepVariable::Dy, &dy)?;

        let k = envelope.column("k")?;
        let feasible = envelope.column("feasible")?;
        let finite_k: Vec<f64> = k.iter().copied().filter(|v| v.is_finite()).collect();
        let mut r = Report::default();
        r.heading("misalignment envelope")
            .line("points", envelope.len())
            .line(
                "k_max",
                format!("{:.4}", finite_k.iter().copied().fold(f64::NAN, f64::max)),
            )
            .line(
                "k_min",
                format!("{:.4}", finite_k.iter().copied().fold(f64::NAN, f64::min)),
            )
            .line(
                "feasible_points",
                feasible.iter().filter(|&&f| f == 1.0).count(),
            );

        out.csv("misalign", &envelope)?;
        out.csv("coupling_vs_dx", &along_dx)?;
        out.svg(
            "coupling_vs_dx",
            &along_dx,
            &PlotSpec::new(["k"]).titled("coupling vs lateral offset dx"),
        )?;
        out.csv("coupling_vs_dy", &along_dy)?;
        out.svg(
            "coupling_vs_dy",
            &along_dy,
            &PlotSpec::new(["k"]).titled("coupling vs lateral offset dy"),
        )?;
        Ok(ok(&mut r))
    }
}

/// Points in the receiver-core size sweeps, spanning half to one and a half
/// times the configured value.
const SIZE_SWEEP_POINTS: usize = 11;

fn scaled_grid(nominal: f64) -> Vec<f64> {
    (0..SIZE_SWEEP_POINTS)
        .map(|i| nominal * (0.5 + i as f64 / (SIZE_SWEEP_POINTS - 1) as f64))
        .collect()
}

pub struct Coupler;

impl Command for Coupler {
    fn name(&self) -> &'static str {
        "coupler"
    }

    fn about(&self) -> &'static str {
        "coupling and inductances from the coupler geometry"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let g = require_geometry(ctx)?;
        let rep = analyze_coupler(g)?;
        let mut r = Report::default();
        r.heading("coupler")
            .line("dx_mm", g.dx * 1e3)
            .line("dy_mm", g.dy * 1e3)
            .line("k", format!("{:.4}", rep.k))
            .line("l1_uH", format!("{:.4}", rep.l1 * 1e6))
            .line("l2_uH", format!("{:.4}", rep.l2 * 1e6))
            .line("m_uH", format!("{:.4}", rep.m * 1e6))
            .line("k_air", format!("{:.5}", rep.air.k()))
            .line(
                "mu_rx_apparent",
                format!("{:.4}", g.rx_apparent_permeability()),
            )
            .line("circuit_k", ctx.config.circuit.k);

        let mut table = SweepTable::new(["dx_m", "dy_m", "k", "l1_uH", "l2_uH", "m_uH"]);
        table.push(vec![
            g.dx.into(),
            g.dy.into(),
            rep.k.into(),
            (rep.l1 * 1e6).into(),
            (rep.l2 * 1e6).into(),
            (rep.m * 1e6).into(),
        ])?;
        out.csv("coupler", &table)?;

        for (stem, var, nominal) in [
            (
                "coupling_vs_diameter",
                SweepVariable::RxFerriteDiameter,
                g.rx_ferrite_diameter,
            ),
            (
                "coupling_vs_length",
                SweepVariable::RxFerriteLength,
                g.rx_ferrite_length,
            ),
        ] {
            let t = geometry_sweep(g, var, &scaled_grid(nominal))?;
            out.csv(stem, &t)?;
            out.svg(
                stem,
                &t,
                &PlotSpec::new(["k"]).titled(stem.replace('_', " ")),
            )?;
        }
        Ok(ok(&mut r))
    }
}

pub struct Design;

impl Command for Design {
    fn name(&self) -> &'static str {
        "design"
    }

    fn about(&self) -> &'static str {
        "detune the primary for a zero-coupling current cap and check the spec"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let p = ctx.config.circuit;
        let spec = ctx.config.design.unwrap_or_default();
        let mut r = Report::default();
        r.heading("design")
            .line("i1_max_zero_k_A", spec.i1_max_zero_k)
            .line("target_pout_W", spec.target_pout);

        let det = match min_detuning_for_current_cap(&p, spec.i1_max_zero_k) {
            Ok(det) => det,
            Err(e @ DesignError::Infeasible { .. }) => {
                r.line("feasible", false).note(&format!("reason: {e}"));
                return Ok(Outcome {
                    report: r.finish(),
                    artifacts: Vec::new(),
                    status: Status::Infeasible,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let res = evaluate_design(&p.with_c1(det.c1), &spec)?;
        r.line("c1_nF", format!("{:.4}", det.c1 * 1e9))
            .line("f1_kHz", format!("{:.3}", det.f1 / 1e3))
            .line("x1_ohm", format!("{:.4}", det.x1))
            .line("i1_zero_k_A", format!("{:.4}", res.i1_zero_k))
            .line("pout_nominal_W", format!("{:.3}", res.pout_nominal))
            .line("zvs_all", res.zvs_all)
            .line("feasible", res.feasible);
        for reason in &res.reasons {
            r.note(&format!("reason: {reason}"));
        }

        let mut table = SweepTable::new(["k", "pout_W", "zvs"]);
        for g in &res.grid {
            table.push(vec![g.k.into(), g.pout.into(), g.zvs.into()])?;
        }
        out.csv("design", &table)?;
        out.svg(
            "design",
            &table,
            &PlotSpec::new(["pout_W"]).titled("designed output power vs coupling"),
        )?;
        Ok(Outcome {
            report: r.finish(),
            artifacts: Vec::new(),
            status: if res.feasible {
                Status::Ok
            } else {
                Status::Infeasible
            },
        })
    }
}

pub struct Calibrate;

impl Command for Calibrate {
    fn name(&self) -> &'static str {
        "calibrate"
    }

    fn about(&self) -> &'static str {
        "fit core permeability factors to measured coupling anchors"
    }

    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError> {
        let g = require_geometry(ctx)?;
        let c = &ctx.config.calibration;
        let aligned = g.with_offset(0.0, 0.0);
        let misaligned = g.with_offset(c.misaligned_dx, c.misaligned_dy);
        let mut anchors = vec![Anchor::new(aligned.clone(), c.k_aligned)];
        if let Some(k) = c.k_misaligned {
            anchors.push(Anchor::new(misaligned.clone(), k));
        }
        let fit = calibrate(&anchors)?;
        let fitted = |g: &CouplerGeometry| g.with_permeability(fit.mu_eff_tx, fit.mu_eff_rx);

        let mut r = Report::default();
        r.heading("calibration")
            .line("anchors", anchors.len())
            .line("iterations", fit.iterations)
            .line("residual", format!("{:.3e}", fit.residual))
            .line("mu_eff_tx", fit.mu_eff_tx)
            .line("mu_eff_rx", fit.mu_eff_rx);
        let k_mis = coupling_coefficient(&fitted(&misaligned))?;
        r.line(
            "k_at_misaligned",
            format!(
                "{k_mis:.4} (dx {} mm, dy {} mm)",
                c.misaligned_dx * 1e3,
                c.misaligned_dy * 1e3
            ),
        );
        let rep = analyze_coupler(&fitted(&aligned))?;
        r.line("l1_uH", format!("{:.4}", rep.l1 * 1e6))
            .line("l2_uH", format!("{:.4}", rep.l2 * 1e6));
        r.heading("geometry snippet")
            .note("[geometry]")
            .note(&format!("mu_eff_tx = {}", fit.mu_eff_tx))
            .note(&format!("mu_eff_rx = {}", fit.mu_eff_rx));

        let mut table = SweepTable::new(["dx_m", "dy_m", "k_target", "k_model"]);
        for (a, k) in anchors.iter().zip(&fit.k_model) {
            table.push(vec![
                a.geometry.dx.into(),
                a.geometry.dy.into(),
                a.k_target.into(),
                (*k).into(),
            ])?;
        }
        out.csv("calibration", &table)?;
        Ok(ok(&mut r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::CommandRegistry;
    use crate::config::WorkbenchConfig;

    fn ctx(dir: &std::path::Path) -> Context {
        let mut cfg = WorkbenchConfig::new(CircuitParams::reference());
        cfg.geometry = Some(CouplerGeometry::default().with_permeability(29.2535, 16.0));
        Context::new(cfg, dir.to_path_buf())
    }

    #[test]
    fn registry_lists_every_command() {
        let reg = CommandRegistry::with_builtins();
        assert_eq!(
            reg.names(),
            [
                "analyze",
                "simulate",
                "sweep-k",
                "sweep-misalign",
                "coupler",
                "design",
                "calibrate"
            ]
        );
        let usage = reg.usage();
        assert!(reg.names().iter().all(|n| usage.contains(n)));
    }

    #[test]
    fn unknown_command_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = CommandRegistry::with_builtins()
            .dispatch("frobnicate", &ctx(dir.path()))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sweep-misalign"));
    }

    #[test]
    fn analyze_writes_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let o = CommandRegistry::with_builtins()
            .dispatch("analyze", &ctx(dir.path()))
            .unwrap();
        assert_eq!(o.exit_code(), 0);
        assert_eq!(o.artifacts, [dir.path().join("analyze.csv")]);
        let csv = std::fs::read_to_string(&o.artifacts[0]).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(o.report.contains("operating point, lossless"));
    }

    #[test]
    fn geometry_commands_need_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ctx(dir.path());
        c.config.geometry = None;
        for name in ["coupler", "calibrate", "sweep-misalign"] {
            let err = CommandRegistry::with_builtins()
                .dispatch(name, &c)
                .unwrap_err();
            assert_eq!(err.exit_code(), 2, "{name}");
        }
    }

    #[test]
    fn disabled_outputs_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ctx(dir.path());
        c.config.output.csv = false;
        c.config.output.svg = false;
        let o = CommandRegistry::with_builtins()
            .dispatch("coupler", &c)
            .unwrap();
        assert!(o.artifacts.is_empty());
        assert!(o.report.contains("l1_uH"));
    }

    #[test]
    fn unknown_solver_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ctx(dir.path());
        c.config.sweep.solver = "newton".into();
        let err = CommandRegistry::with_builtins()
            .dispatch("sweep-k", &c)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("closed-form"));
    }

    #[test]
    fn scaled_grid_spans_half_to_three_halves() {
        let g = scaled_grid(2.0);
        assert_eq!(g.len(), SIZE_SWEEP_POINTS);
        assert_eq!(g[0], 1.0);
        assert!((g[SIZE_SWEEP_POINTS - 1] - 3.0).abs() < 1e-12);
    }
}
