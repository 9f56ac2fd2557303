use std::path::{Path, PathBuf};
use std::sync::Arc;

use cohesim_core::macro_driver::{
    peak_deviation, run_simulation, speedup_report, traction_field_error, DriverError, ModelPolicy,
    SimulationRun, SimulationSetup, SpeedupRow,
};
use cohesim_core::msnet::{validate_trace, CostBasis, TransportMode};
use cohesim_core::ruc_micro::{Model, RucTemplate};
use cohesim_core::sampling_db::{BankOptions, DbError, OfflineDatabase, SampleBank};
use log::{info, warn};

use crate::config::RunConfig;
use crate::output::{io_err, write_rows, write_run};
use crate::plot::{line_chart, Series};
use crate::CliError;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub servers: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.servers {
            cfg.msnet.servers = n;
        }
        if let Some(t) = self.threads {
            cfg.msnet.threads = t;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = std::env::current_dir()
                .map_err(|e| CliError::Io(e.to_string()))?
                .join(o);
        }
        cfg.validate()
    }
}

fn driver_err(e: DriverError) -> CliError {
    match e {
        DriverError::Program(m) => CliError::Config(m),
        DriverError::Database(e @ DbError::FingerprintMismatch { .. }) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Numerical(other.to_string()),
    }
}

fn db_err(e: DbError) -> CliError {
    match e {
        DbError::InvalidSpec(_) | DbError::FingerprintMismatch { .. } => {
            CliError::Config(e.to_string())
        }
        DbError::Io(_) => CliError::Io(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn bank_options(cfg: &RunConfig) -> BankOptions {
    BankOptions {
        solver: cfg.solver,
        rate_cap: cfg.program.rate_cap,
        threads: Some(cfg.msnet.threads),
    }
}

fn mkdir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

pub struct BuildReport {
    pub databases: Vec<(f64, OfflineDatabase)>,
    pub bank: SampleBank,
    /// Per-γ held-out error per segment when `n_test > 0`.
    pub test_errors: Vec<(f64, Vec<f64>)>,
}

/// Builds and writes one database per configured γ from a shared sample bank.
pub fn build_db(cfg: &RunConfig, tolerate_failures: bool) -> Result<BuildReport, CliError> {
    let template = cfg.template()?;
    let out = cfg.output();
    mkdir(&out)?;
    let spec = cfg.database_spec(cfg.database.gammas[0]);
    info!(
        "sampling {} directions over {} segments",
        spec.n_t, spec.n_s
    );
    let bank = SampleBank::compute(
        &template,
        spec.lambda,
        spec.n_s,
        spec.training_directions(),
        &bank_options(cfg),
    )
    .map_err(db_err)?;
    let fp = template.fingerprint();
    let mut databases = Vec::new();
    for &g in &cfg.database.gammas {
        let db = OfflineDatabase::train(&bank, &cfg.database_spec(g), &fp).map_err(db_err)?;
        db.write(&cfg.database_file(g)).map_err(db_err)?;
        let audit = out.join(format!("audit_g{g}.csv"));
        let f = std::fs::File::create(&audit).map_err(|e| io_err(&audit, e))?;
        bank.write_audit_csv(g, f).map_err(db_err)?;
        databases.push((g, db));
    }
    let mut test_errors = Vec::new();
    if cfg.database.n_test > 0 {
        let tests = SampleBank::compute(
            &template,
            spec.lambda,
            spec.n_s,
            spec.test_directions(cfg.database.n_test),
            &bank_options(cfg),
        )
        .map_err(db_err)?;
        let mut rows = Vec::new();
        for (g, db) in &databases {
            let errs = db.segment_errors(&tests).map_err(db_err)?;
            for (seg, e) in db.segments.iter().zip(&errs) {
                let (fm, tm) = db.metadata.label_counts[seg.k - 1];
                rows.push(vec![
                    g.to_string(),
                    seg.k.to_string(),
                    seg.r_hi.to_string(),
                    e.to_string(),
                    fm.to_string(),
                    tm.to_string(),
                ]);
            }
            test_errors.push((*g, errs));
        }
        write_rows(
            &out.join("classification_error.csv"),
            &["gamma", "segment", "r_hi", "error", "train_fm", "train_tm"],
            rows,
        )?;
    }
    let unknown = bank.unknown_count();
    if unknown > 0 {
        let msg = format!("{unknown} training samples failed to solve (labeled FM)");
        if tolerate_failures {
            warn!("{msg}");
        } else {
            return Err(CliError::Numerical(msg));
        }
    }
    Ok(BuildReport {
        databases,
        bank,
        test_errors,
    })
}

fn stored_database(
    cfg: &RunConfig,
    gamma: f64,
    template: &RucTemplate,
) -> Result<Option<OfflineDatabase>, CliError> {
    let path = cfg.database_file(gamma);
    if !path.exists() {
        return Ok(None);
    }
    let db = OfflineDatabase::read(&path).map_err(db_err)?;
    let m = &db.metadata;
    let spec = cfg.database_spec(gamma);
    let same_layout = m.lambda == spec.lambda
        && m.n_s == spec.n_s
        && m.n_t == spec.n_t
        && m.gamma == gamma
        && m.seed == spec.seed
        && m.phi_range == spec.phi_range;
    if !same_layout {
        info!(
            "{} was built with other settings; rebuilding",
            path.display()
        );
        return Ok(None);
    }
    if m.fingerprint != template.fingerprint() {
        return Err(CliError::Config(format!(
            "{} was built for a different unit cell (fingerprint {}, expected {}); rerun build-db",
            path.display(),
            m.fingerprint,
            template.fingerprint()
        )));
    }
    Ok(Some(db))
}

/// Loads the databases for all γ, building them when absent or stale.
pub fn databases(
    cfg: &RunConfig,
    tolerate_failures: bool,
) -> Result<Vec<(f64, Arc<OfflineDatabase>)>, CliError> {
    let template = cfg.template()?;
    let mut found = Vec::new();
    for &g in &cfg.database.gammas {
        match stored_database(cfg, g, &template)? {
            Some(db) => found.push((g, Arc::new(db))),
            None => {
                let built = build_db(cfg, tolerate_failures)?;
                return Ok(built
                    .databases
                    .into_iter()
                    .map(|(g, d)| (g, Arc::new(d)))
                    .collect());
            }
        }
    }
    Ok(found)
}

pub struct NamedRun {
    pub name: String,
    pub gamma: Option<f64>,
    pub run: SimulationRun,
}

pub struct RunReport {
    pub fm: SimulationRun,
    pub tm: SimulationRun,
    pub adaptive: Vec<NamedRun>,
    pub speedup: Vec<SpeedupRow>,
}

/// Which simulations `run` performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RunSelection {
    #[default]
    All,
    AdaptiveOnly,
}

fn simulate(
    cfg: &RunConfig,
    template: &Arc<RucTemplate>,
    policy: ModelPolicy,
) -> Result<SimulationRun, CliError> {
    let mesh = cfg.mesh()?;
    let setup = SimulationSetup {
        mesh: &mesh,
        template: template.clone(),
        policy,
        program: cfg.program,
        profile: cfg.profile,
        msnet: cfg.msnet_config(),
        solver: cfg.solver,
    };
    run_simulation(&setup).map_err(driver_err)
}

fn check_trace(cfg: &RunConfig, name: &str, run: &SimulationRun) -> Result<(), CliError> {
    let moved: Vec<(usize, usize)> = run
        .schedules
        .iter()
        .flat_map(|s| s.migrations.iter().map(move |m| (s.step, m.element)))
        .collect();
    let report = validate_trace(&run.trace, cfg.msnet.workers_per_server, Some(&moved));
    if !report.ok() {
        return Err(CliError::Numerical(format!(
            "{name}: message discipline violated: {:?}",
            report.violations
        )));
    }
    Ok(())
}

/// Forced baselines plus one adaptive run per γ.
pub fn run(
    cfg: &RunConfig,
    selection: RunSelection,
    tolerate_failures: bool,
) -> Result<RunReport, CliError> {
    let template = cfg.template()?;
    let dbs = databases(cfg, tolerate_failures)?;
    let out = cfg.output();
    mkdir(&out)?;
    let forced = |m: Model| -> Result<SimulationRun, CliError> {
        if selection == RunSelection::AdaptiveOnly {
            return Ok(SimulationRun {
                records: vec![],
                schedules: vec![],
                trace: vec![],
                wall_time_s: 0.0,
                failure: None,
            });
        }
        info!("forced {m} run");
        let r = simulate(cfg, &template, ModelPolicy::Forced(m))?;
        check_trace(cfg, m.as_str(), &r)?;
        write_run(&r, &out.join(format!("run_{}", m.as_str().to_lowercase())))?;
        Ok(r)
    };
    let fm = forced(Model::Full)?;
    let tm = forced(Model::Taylor)?;
    let mut adaptive = Vec::new();
    for (g, db) in dbs {
        info!("adaptive run at gamma {g}");
        let r = simulate(cfg, &template, ModelPolicy::Adaptive(db))?;
        let name = format!("adaptive_g{g}");
        check_trace(cfg, &name, &r)?;
        write_run(&r, &out.join(format!("run_{name}")))?;
        adaptive.push(NamedRun {
            name,
            gamma: Some(g),
            run: r,
        });
    }
    let failures: Vec<String> = std::iter::once(("fm", &fm))
        .chain(std::iter::once(("tm", &tm)))
        .chain(adaptive.iter().map(|a| (a.name.as_str(), &a.run)))
        .filter_map(|(n, r)| r.failure.as_ref().map(|f| format!("{n}: {f}")))
        .collect();
    let speedup = if selection == RunSelection::All {
        let pairs: Vec<(f64, &SimulationRun)> = adaptive
            .iter()
            .map(|a| (a.gamma.unwrap_or(0.0), &a.run))
            .collect();
        let rows = speedup_report(&fm, &pairs);
        write_rows(
            &out.join("speedup.csv"),
            &["gamma", "tm_fraction", "t_fm_s", "t_am_s", "ratio"],
            rows.iter().zip(&adaptive).map(|(row, a)| {
                vec![
                    row.gamma.to_string(),
                    row.tm_fraction.to_string(),
                    fm.wall_time_s.to_string(),
                    a.run.wall_time_s.to_string(),
                    row.ratio.to_string(),
                ]
            }),
        )?;
        write_summary(&out, &fm, &tm, &adaptive)?;
        write_plots(&out, cfg, &fm, &tm, &adaptive)?;
        rows
    } else {
        Vec::new()
    };
    if !failures.is_empty() {
        let msg = failures.join("; ");
        if tolerate_failures {
            warn!("runs ended early: {msg}");
        } else {
            return Err(CliError::Numerical(msg));
        }
    }
    Ok(RunReport {
        fm,
        tm,
        adaptive,
        speedup,
    })
}

fn write_summary(
    out: &Path,
    fm: &SimulationRun,
    tm: &SimulationRun,
    adaptive: &[NamedRun],
) -> Result<(), CliError> {
    let all = [("fm", fm), ("tm", tm)]
        .into_iter()
        .map(|(n, r)| (n.to_string(), r))
        .chain(adaptive.iter().map(|a| (a.name.clone(), &a.run)));
    write_rows(
        &out.join("summary.csv"),
        &[
            "run",
            "peak_reaction",
            "peak_deviation",
            "final_tm_fraction",
            "failure",
        ],
        all.map(|(n, r)| {
            vec![
                n,
                r.peak_reaction().to_string(),
                peak_deviation(r, fm).to_string(),
                r.final_tm_fraction().to_string(),
                r.failure.clone().unwrap_or_default(),
            ]
        }),
    )
}

fn write_plots(
    out: &Path,
    cfg: &RunConfig,
    fm: &SimulationRun,
    tm: &SimulationRun,
    adaptive: &[NamedRun],
) -> Result<(), CliError> {
    let curve = |name: &str, r: &SimulationRun, f: fn(&cohesim_core::StepRecord) -> f64| Series {
        name: name.to_string(),
        points: r.records.iter().map(|s| (s.delta, f(s))).collect(),
    };
    let mut fd = vec![
        curve("FM", fm, |s| s.reaction),
        curve("TM", tm, |s| s.reaction),
    ];
    fd.extend(
        adaptive
            .iter()
            .map(|a| curve(&a.name, &a.run, |s| s.reaction)),
    );
    let tmf: Vec<Series> = adaptive
        .iter()
        .map(|a| curve(&a.name, &a.run, |s| s.tm_fraction))
        .collect();
    let mesh = cfg.mesh()?;
    let err: Vec<Series> = adaptive
        .iter()
        .map(|a| {
            let field = traction_field_error(&a.run, fm);
            let last = field.last().cloned().unwrap_or_default();
            Series {
                name: a.name.clone(),
                points: last
                    .iter()
                    .zip(&mesh.elements)
                    .filter_map(|(e, el)| e.map(|v| (el.arc_position, v)))
                    .collect(),
            }
        })
        .collect();
    for (file, svg) in [
        (
            "force_displacement.svg",
            line_chart("Reaction vs opening", "opening (mm)", "reaction", &fd),
        ),
        (
            "tm_fraction.svg",
            line_chart("TM fraction", "opening (mm)", "N_T / N_COH", &tmf),
        ),
        (
            "traction_error.svg",
            line_chart(
                "Traction error at final step",
                "arc position",
                "error (%)",
                &err,
            ),
        ),
    ] {
        let p = out.join(file);
        std::fs::write(&p, svg).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

pub struct ScalingRow {
    pub servers: usize,
    pub wall_time_s: f64,
    pub predicted_makespan_s: f64,
    pub messages: usize,
    pub inter_server: usize,
}

/// Forced-FM wall time against server count with the threaded transport.
pub fn bench_scaling(cfg: &RunConfig, servers: &[usize]) -> Result<Vec<ScalingRow>, CliError> {
    let template = cfg.template()?;
    let out = cfg.output();
    mkdir(&out)?;
    let mut rows = Vec::new();
    for &n in servers {
        let mut c = cfg.clone();
        c.msnet.servers = n;
        c.msnet.mode = TransportMode::Threaded;
        c.msnet.cost_basis = CostBasis::Measured;
        let r = simulate(&c, &template, ModelPolicy::Forced(Model::Full))?;
        let report = validate_trace(&r.trace, c.msnet.workers_per_server, None);
        info!("{n} servers: {:.2} s", r.wall_time_s);
        rows.push(ScalingRow {
            servers: n,
            wall_time_s: r.wall_time_s,
            predicted_makespan_s: r.schedules.iter().map(|s| s.predicted_makespan).sum(),
            messages: report.messages,
            inter_server: report.inter_server,
        });
    }
    write_rows(
        &out.join("scaling.csv"),
        &[
            "servers",
            "threads",
            "wall_time_s",
            "predicted_makespan_s",
            "messages",
            "inter_server",
        ],
        rows.iter().map(|r| {
            vec![
                r.servers.to_string(),
                cfg.msnet.threads.to_string(),
                r.wall_time_s.to_string(),
                r.predicted_makespan_s.to_string(),
                r.messages.to_string(),
                r.inter_server.to_string(),
            ]
        }),
    )?;
    Ok(rows)
}
