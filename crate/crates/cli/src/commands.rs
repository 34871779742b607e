//! Subcommand implementations and the exit-code contract.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use platoon_codesign::codesign::{
    self, certify_weak_string_stability, persist, weak_coupling_metric, CodesignError,
    CouplingNorm, DecentralizedOptions, PlatoonLedger, SynthesisResult,
};
use platoon_codesign::dissipativity::LocalSynthesisOptions;
use platoon_codesign::platoon::Formulation;
use platoon_codesign::sim::{self, SimDesign};
use platoon_codesign::{blockmat, linalg};

use crate::config::{ConfigError, ModeConfig, ScenarioConfig};

/// Stable process exit codes: 0 success, 2 infeasible (or failed checks),
/// 3 schema/configuration error, 4 numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Success = 0,
    Infeasible = 2,
    Schema = 3,
    Numerical = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Numerical(String),
}

impl AppError {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            AppError::Schema(_) => ExitClass::Schema,
            AppError::Infeasible(_) => ExitClass::Infeasible,
            AppError::Numerical(_) => ExitClass::Numerical,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Schema(e.to_string())
    }
}

impl From<CodesignError> for AppError {
    fn from(e: CodesignError) -> Self {
        match &e {
            CodesignError::LocalInfeasible { .. }
            | CodesignError::CentralizedInfeasible { .. }
            | CodesignError::MergeRejected { .. }
            | CodesignError::CertificateRefused { .. } => AppError::Infeasible(e.to_string()),
            CodesignError::InvalidCosts(_) => AppError::Schema(e.to_string()),
            _ => AppError::Numerical(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, AppError>;

fn read_config(path: &Path) -> Result<(ScenarioConfig, String)> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::Schema(format!("cannot read config {path:?}: {e}")))?;
    let hash: String = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let text = String::from_utf8(bytes)
        .map_err(|e| AppError::Schema(format!("config {path:?} is not UTF-8: {e}")))?;
    let cfg = ScenarioConfig::parse(&text)?;
    Ok((cfg, hash))
}

fn print_result_report(result: &SynthesisResult) {
    println!(
        "mode: {:?}, formulation: {:?}, vehicles: {}",
        result.mode,
        result.formulation,
        result.n()
    );
    println!(
        "achieved gamma = {:.6} (gamma^2 = {:.6}), bound = {:.4}",
        result.gamma(),
        result.gamma_tilde,
        result.gamma_bar
    );
    if let Some(gh) = &result.gamma_hats {
        println!(
            "per-vehicle gamma^2: {}",
            gh.iter()
                .map(|g| format!("{g:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    let edges = result.gains.edges();
    println!(
        "communication edges ({}): {:?} (plus leader links to every vehicle)",
        edges.len(),
        edges
    );
    for (i, c) in result.certificates.iter().enumerate() {
        println!(
            "vehicle {i}: nu = {:.4}, rho = {:.4}, local gamma^2 = {:.4}, p = {:.4}, index box {}",
            c.nu,
            c.rho,
            c.gamma_tilde,
            c.p,
            if codesign::lemma1_check(c) { "ok" } else { "VIOLATED" }
        );
    }
    for s in &result.reports {
        println!(
            "solve {}: {} ({} iters, {:.1} ms, objective {:?})",
            s.label, s.status, s.iterations, s.wall_ms, s.objective
        );
    }
}

pub fn cmd_synthesize(
    config_path: &Path,
    out: Option<PathBuf>,
    mode: Option<String>,
    formulation: Option<String>,
    string_stability: bool,
) -> Result<()> {
    let (mut cfg, hash) = read_config(config_path)?;
    if let Some(m) = mode {
        cfg.mode = match m.as_str() {
            "centralized" => ModeConfig::Centralized,
            "decentralized" => ModeConfig::Decentralized,
            other => return Err(AppError::Schema(format!("unknown mode {other:?}"))),
        };
    }
    if let Some(f) = formulation {
        cfg.formulation = match f.as_str() {
            "I" | "i" | "1" => Formulation::I,
            "II" | "ii" | "2" => Formulation::II,
            other => return Err(AppError::Schema(format!("unknown formulation {other:?}"))),
        };
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| AppError::Schema(format!("cannot create {out_dir:?}: {e}")))?;

    let costs = cfg.cost_spec();
    let p = cfg.multiplier_values();
    let certs = codesign::local_certificates(&p, &LocalSynthesisOptions::default())
        .map_err(AppError::from)?;

    match cfg.mode {
        ModeConfig::Centralized => {
            let result = codesign::centralized_codesign(&certs, cfg.formulation, &costs)
                .map_err(|e| match &e {
                    CodesignError::CentralizedInfeasible { diagnostics } => {
                        for d in diagnostics {
                            eprintln!(
                                "vehicle {}: index box {} (nu = {:.4}, rho_tilde = {:.4}, gamma^2 = {:.4}, p = {:.4})",
                                d.vehicle,
                                if d.ok { "ok" } else { "VIOLATED" },
                                d.nu,
                                d.rho_tilde,
                                d.gamma_tilde,
                                d.p
                            );
                        }
                        AppError::Infeasible(e.to_string())
                    }
                    _ => AppError::from(e),
                })?;
            print_result_report(&result);
            let path = out_dir.join("result.json");
            persist::save_result(&path, &result, None, &hash)?;
            println!("result written to {}", path.display());
        }
        ModeConfig::Decentralized => {
            let outcome = codesign::decentralized_codesign(
                &certs,
                cfg.formulation,
                &costs,
                &DecentralizedOptions { string_stability },
            )
            .map_err(AppError::from)?;
            if outcome.partitions.is_empty() {
                return Err(AppError::Infeasible(
                    "no vehicle admitted a feasible decentralized step".into(),
                ));
            }
            if outcome.partitions.len() > 1 {
                println!(
                    "platoon split into {} partitions during the sequential design:",
                    outcome.partitions.len()
                );
            }
            for (k, partition) in outcome.partitions.iter().enumerate() {
                println!(
                    "--- partition {k}: leader {:?}, members {:?}",
                    partition.leader, partition.members
                );
                print_result_report(&partition.result);
                let name = if k == 0 {
                    "result.json".to_string()
                } else {
                    format!("result-partition-{k}.json")
                };
                let path = out_dir.join(name);
                let ledger = if k == outcome.partitions.len() - 1 {
                    Some(&outcome.ledger)
                } else {
                    None
                };
                persist::save_result(&path, &partition.result, ledger, &hash)?;
                println!("result written to {}", path.display());
            }
        }
    }
    Ok(())
}

pub fn cmd_simulate(
    config_path: &Path,
    result_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let (cfg, hash) = read_config(config_path)?;
    let loaded = persist::load_result(result_path).map_err(|e| AppError::Schema(e.to_string()))?;
    if loaded.config_sha256 != hash && !force {
        return Err(AppError::Schema(format!(
            "result was produced by a different configuration (hash {} vs {}); pass --force to override",
            loaded.config_sha256, hash
        )));
    }
    if loaded.result.formulation != cfg.formulation {
        return Err(AppError::Schema(format!(
            "result formulation {:?} does not match configuration {:?}",
            loaded.result.formulation, cfg.formulation
        )));
    }
    if loaded.result.n() != cfg.n() {
        return Err(AppError::Schema(format!(
            "result covers {} vehicles, configuration has {}",
            loaded.result.n(),
            cfg.n()
        )));
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| AppError::Schema(format!("cannot create {out_dir:?}: {e}")))?;

    let scenario = cfg.scenario(seed)?;
    let costs = cfg.cost_spec();
    let ledger: Option<PlatoonLedger> = loaded.ledger;
    let design = if scenario.events.is_empty() {
        SimDesign::Fixed(&loaded.result)
    } else {
        let Some(ledger) = ledger.as_ref() else {
            return Err(AppError::Schema(
                "scenario events require a decentralized result with a stored design ledger"
                    .into(),
            ));
        };
        SimDesign::Adaptive {
            result: &loaded.result,
            ledger,
            costs: &costs,
        }
    };
    let trace = sim::run(&scenario, &design).map_err(|e| AppError::Numerical(e.to_string()))?;

    let csv_path = out_dir.join("trace.csv");
    sim::write_trace_csv(&trace, &csv_path).map_err(|e| AppError::Numerical(e.to_string()))?;
    let plot_dir = out_dir.join("plots");
    sim::write_trace_svg(&trace, &plot_dir).map_err(|e| AppError::Numerical(e.to_string()))?;

    let m = sim::metrics(&trace);
    let wc = weak_coupling_metric(&loaded.result, CouplingNorm::InducedTwo);
    println!("trace: {} samples -> {}", trace.time.len(), csv_path.display());
    println!("plots: {}", plot_dir.display());
    println!("error L2 = {:.6}", m.error_l2);
    println!("disturbance L2 = {:.6}", m.disturbance_l2);
    match m.empirical_gain {
        Some(g) => println!("empirical gain = {:.6} (bound {:.4})", g, loaded.result.gamma_bar),
        None => println!("empirical gain = undefined (disturbance-free run)"),
    }
    println!("min spacing = {:.4} m", m.min_spacing);
    println!("weak coupling metric = {:.6e} (max over sources)", wc.max);
    println!(
        "peak location errors: {}",
        m.peak_location_errors
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("events: {:?}", trace.events);
    if trace.collisions() > 0 {
        println!("WARNING: {} collision flags", trace.collisions());
    }

    let metrics_json = serde_json::json!({
        "error_l2": m.error_l2,
        "disturbance_l2": m.disturbance_l2,
        "empirical_gain": m.empirical_gain,
        "min_spacing": m.min_spacing,
        "weak_coupling_max": wc.max,
        "weak_coupling": wc.per_source,
        "per_vehicle_error_l2": m.per_vehicle_error_l2,
        "steady_state_offsets": m.steady_state_offsets,
        "peak_location_errors": m.peak_location_errors,
        "collisions": trace.collisions(),
        "aborted": trace.aborted,
    });
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics_json).expect("serializable"),
    )
    .map_err(|e| AppError::Numerical(format!("write metrics: {e}")))?;

    if let Some(msg) = &trace.aborted {
        return Err(AppError::Numerical(format!("simulation aborted: {msg}")));
    }
    Ok(())
}

struct CheckReport {
    failures: usize,
}

impl CheckReport {
    fn new() -> Self {
        Self { failures: 0 }
    }

    fn record(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

pub fn cmd_check(result_path: &Path) -> Result<()> {
    let loaded = persist::load_result(result_path).map_err(|e| AppError::Schema(e.to_string()))?;
    let result = &loaded.result;
    let mut report = CheckReport::new();

    match result.gains.structure_check() {
        Ok(()) => report.record(
            "gain-structure",
            true,
            "masks and diagonal identity hold".into(),
        ),
        Err(e) => report.record("gain-structure", false, e.to_string()),
    }

    let boxes = codesign::lemma1_diagnostics(&result.certificates);
    let all_ok = boxes.iter().all(|d| d.ok);
    report.record(
        "index-boxes",
        all_ok,
        format!(
            "{}/{} vehicles strictly inside their feasibility box",
            boxes.iter().filter(|d| d.ok).count(),
            boxes.len()
        ),
    );

    let gain_ok = result.gamma_tilde < result.gamma_bar;
    report.record(
        "gain-bound",
        gain_ok,
        format!(
            "gamma^2 = {:.6} vs bound {:.4} (margin {:.3e})",
            result.gamma_tilde,
            result.gamma_bar,
            result.gamma_bar - result.gamma_tilde
        ),
    );

    let abscissa = linalg::spectral_abscissa(&result.closed_loop_matrix());
    report.record(
        "closed-loop-hurwitz",
        abscissa < -1e-9,
        format!("spectral abscissa {abscissa:.6e}"),
    );

    match result.reverify() {
        Ok(Some(p)) => report.record(
            "network-analysis",
            true,
            format!(
                "re-certified at gamma = {:.6} (multiplier sum {:.3e})",
                result.gamma(),
                p.iter().sum::<f64>()
            ),
        ),
        Ok(None) => report.record(
            "network-analysis",
            false,
            "no multiplier certificate at the achieved gain".into(),
        ),
        Err(e) => report.record("network-analysis", false, e.to_string()),
    }

    let wc = weak_coupling_metric(result, CouplingNorm::InducedTwo);
    report.record(
        "weak-coupling",
        wc.max < 1.0,
        format!("max source sum {:.6e} < 1", wc.max),
    );

    match certify_weak_string_stability(result, result.gamma_bar) {
        Ok(cert) => report.record(
            "string-stability-certificate",
            true,
            format!("linear bound slope {:.4}", cert.slope),
        ),
        Err(e) => report.record("string-stability-certificate", false, e.to_string()),
    }

    if let Some(ledger) = &loaded.ledger {
        match ledger.full_w() {
            Ok(w) if w.n_row_blocks() > 0 => match blockmat::sylvester_decompose(&w) {
                Ok(v) => report.record(
                    "sequential-certificate",
                    v.is_positive(),
                    format!(
                        "{} pivot blocks, verdict {}",
                        w.n_row_blocks(),
                        if v.is_positive() { "positive" } else { "not positive" }
                    ),
                ),
                Err(e) => report.record("sequential-certificate", false, e.to_string()),
            },
            Ok(_) => {}
            Err(e) => report.record("sequential-certificate", false, e.to_string()),
        }
        if let Some(gh) = &result.gamma_hats {
            let ok = gh.iter().all(|g| *g < result.gamma_bar);
            report.record(
                "per-vehicle-gains",
                ok,
                format!(
                    "max gamma_hat = {:.6} vs bound {:.4}",
                    gh.iter().copied().fold(0.0f64, f64::max),
                    result.gamma_bar
                ),
            );
        }
    }

    if report.failures > 0 {
        Err(AppError::Infeasible(format!(
            "{} check(s) failed",
            report.failures
        )))
    } else {
        println!("all checks passed");
        Ok(())
    }
}

pub fn cmd_demo(out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let out_dir = out.unwrap_or_else(|| PathBuf::from("demo-out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| AppError::Schema(format!("cannot create {out_dir:?}: {e}")))?;

    let mut cfg = ScenarioConfig::default();
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    cfg.output_dir = out_dir.display().to_string();
    let config_path = out_dir.join("scenario.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&cfg).expect("serializable"),
    )
    .map_err(|e| AppError::Schema(format!("write config: {e}")))?;
    println!("demo configuration written to {}", config_path.display());

    println!("\n=== centralized synthesis ===");
    cmd_synthesize(&config_path, Some(out_dir.clone()), None, None, false)?;

    println!("\n=== decentralized synthesis ===");
    let dec_dir = out_dir.join("decentralized");
    cmd_synthesize(
        &config_path,
        Some(dec_dir.clone()),
        Some("decentralized".into()),
        None,
        false,
    )?;

    println!("\n=== simulation of the centralized design ===");
    cmd_simulate(
        &config_path,
        &out_dir.join("result.json"),
        Some(out_dir.clone()),
        seed,
        false,
    )?;

    println!("\n=== verification of the stored results ===");
    cmd_check(&out_dir.join("result.json"))?;
    cmd_check(&dec_dir.join("result.json"))?;
    Ok(())
}
