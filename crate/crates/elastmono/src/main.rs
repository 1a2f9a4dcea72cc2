//! Command-line entry point: binds scenario configs to the library
//! pipelines and writes matrices, CSV tables, PGM images, and a manifest
//! with the input digests.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use elastmono::error::{Error, Result};
use elastmono::experiments::{
    calibrate_tau, run_convergence_study, run_localized_potentials, Scenario,
};
use elastmono::fem::{assemble_system, boundary_pairing, energy_on_region};
use elastmono::monotonicity::{TestKit, TestMode};
use elastmono::ndmap::BackgroundFields;
use elastmono::reconstruct::{
    inner_reconstruction, linearized_outer_reconstruction, outer_reconstruction, IndicatorMap,
};

#[derive(Parser)]
#[command(
    name = "elastmono",
    about = "Monotonicity-based inclusion detection for 2D linear elasticity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scenario phantom for every basis load and report energies.
    Forward(RunArgs),
    /// Generate the measured ND matrix and write it in text form.
    Nd(RunArgs),
    /// Outer reconstruction (extreme test operators).
    ReconstructOuter(RunArgs),
    /// Inner reconstruction (probe pixels inside definite inclusions).
    ReconstructInner(RunArgs),
    /// Linearized outer reconstruction for non-extreme inclusions.
    ReconstructLinearized(RunArgs),
    /// Truncation-convergence study for extreme operators.
    Convergence(RunArgs),
    /// Localized boundary loads via the generalized eigenproblem.
    Localize(RunArgs),
    /// Calibrate the Loewner threshold on background-only data.
    Calibrate(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Forward(_) => "forward",
            Command::Nd(_) => "nd",
            Command::ReconstructOuter(_) => "reconstruct-outer",
            Command::ReconstructInner(_) => "reconstruct-inner",
            Command::ReconstructLinearized(_) => "reconstruct-linearized",
            Command::Convergence(_) => "convergence",
            Command::Localize(_) => "localize",
            Command::Calibrate(_) => "calibrate",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Forward(a)
            | Command::Nd(a)
            | Command::ReconstructOuter(a)
            | Command::ReconstructInner(a)
            | Command::ReconstructLinearized(a)
            | Command::Convergence(a)
            | Command::Localize(a)
            | Command::Calibrate(a) => a,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config (strict JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (falls back to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override as key=value with dotted paths; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Width of the parallel maps.
    #[arg(long)]
    threads: Option<usize>,
    /// Noise seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let args = command.args();
    let overrides = parse_overrides(&args.overrides)?;
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::invalid(
            "cli",
            format!("cannot read config {}: {e}", args.config.display()),
        )
    })?;
    let mut scenario = Scenario::from_json(&text, &overrides)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| scenario.output_dir.clone().map(PathBuf::from))
        .ok_or_else(|| {
            Error::invalid("cli", "no output directory: pass --out or set output_dir")
        })?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::invalid("cli", format!("cannot create {}: {e}", out_dir.display())))?;

    let execute = || -> Result<Vec<(String, Vec<u8>)>> { outputs_for(command, &scenario) };
    let outputs = match args.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid("cli", format!("thread pool: {e}")))?;
            pool.install(execute)?
        }
        None => execute()?,
    };

    let mut written = Vec::new();
    for (name, bytes) in &outputs {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| Error::invalid("cli", format!("cannot write {}: {e}", path.display())))?;
        written.push(serde_json::json!({ "path": name, "sha256": hex_digest(bytes) }));
        println!("wrote {}", path.display());
    }
    let manifest = serde_json::json!({
        "version": 1,
        "command": command.name(),
        "config_path": args.config.display().to_string(),
        "config_sha256": hex_digest(text.as_bytes()),
        "scenario_sha256": hex_digest(scenario.to_json().as_bytes()),
        "seed": scenario.seed,
        "outputs": written,
    });
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap())
        .map_err(|e| Error::invalid("cli", format!("cannot write manifest: {e}")))?;
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    Error::invalid("cli", format!("override '{s}' is not of the form key=value"))
                })
        })
        .collect()
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

fn indicator_files(prefix: &str, map: &IndicatorMap) -> Vec<(String, Vec<u8>)> {
    vec![
        (format!("{prefix}_indicators.csv"), map.to_csv().into_bytes()),
        (format!("{prefix}_indicators.pgm"), map.indicator_pgm()),
        (format!("{prefix}_mask.pgm"), map.mask_pgm()),
    ]
}

fn calibration_file(report: &elastmono::experiments::CalibrationReport) -> (String, Vec<u8>) {
    (
        "calibration.json".to_string(),
        serde_json::to_vec_pretty(report).unwrap(),
    )
}

fn outputs_for(command: &Command, scenario: &Scenario) -> Result<Vec<(String, Vec<u8>)>> {
    match command {
        Command::Forward(_) => {
            let prep = scenario.prepare()?;
            let sys = assemble_system(&prep.mesh, &prep.phantom)?;
            let all: Vec<usize> = (0..prep.mesh.elements.len()).collect();
            let mut csv = String::from("load,edge,axis,pairing,energy,rel_gap\n");
            for (k, load) in prep.basis.loads.iter().enumerate() {
                let u = sys.solve_neumann(&[load.as_edge_load()])?;
                let pairing = boundary_pairing(&prep.mesh, &[load.as_edge_load()], &u);
                let (ed, es) = energy_on_region(&u, &prep.phantom, &all, &prep.mesh)?;
                let energy = ed + es;
                let gap = if energy > 0.0 {
                    (pairing - energy).abs() / energy
                } else {
                    0.0
                };
                csv.push_str(&format!(
                    "{k},{},{},{pairing:.17e},{energy:.17e},{gap:.3e}\n",
                    load.edge, load.axis
                ));
            }
            Ok(vec![
                ("mesh.txt".to_string(), prep.mesh.dump_text().into_bytes()),
                ("forward_energies.csv".to_string(), csv.into_bytes()),
            ])
        }
        Command::Nd(_) => {
            let prep = scenario.prepare()?;
            let measured = prep.measured()?;
            Ok(vec![(
                "nd_measured.txt".to_string(),
                measured.to_text().into_bytes(),
            )])
        }
        Command::Calibrate(_) => {
            let report = calibrate_tau(scenario)?;
            Ok(vec![calibration_file(&report)])
        }
        Command::ReconstructOuter(_) => {
            let prep = scenario.prepare()?;
            let measured = prep.measured()?;
            let (tau, cal) = scenario.resolve_tau()?;
            let grid = prep.grid()?;
            let mut kit = TestKit::new(&prep.mesh, &prep.background, &prep.basis, tau)?;
            kit.selection = scenario.test.sides;
            let map = outer_reconstruction(&measured, &grid, &kit)?;
            let mut files = indicator_files("outer", &map);
            if let Some(report) = cal {
                files.push(calibration_file(&report));
            }
            Ok(files)
        }
        Command::ReconstructInner(_) => {
            let prep = scenario.prepare()?;
            let measured = prep.measured()?;
            let (tau, cal) = scenario.resolve_tau()?;
            let grid = prep.grid()?;
            let fields: Option<BackgroundFields> = match scenario.test.mode {
                TestMode::Linearized => Some(prep.background_fields()?),
                TestMode::Full => None,
            };
            let mut kit = TestKit::new(&prep.mesh, &prep.background, &prep.basis, tau)?;
            kit.background_fields = fields.as_ref();
            let map = inner_reconstruction(
                &measured,
                &grid,
                scenario.test.beta,
                scenario.test.sign,
                scenario.test.mode,
                &kit,
            )?;
            let mut files = indicator_files("inner", &map);
            if let Some(report) = cal {
                files.push(calibration_file(&report));
            }
            Ok(files)
        }
        Command::ReconstructLinearized(_) => {
            let prep = scenario.prepare()?;
            let measured = prep.measured()?;
            let (tau, cal) = scenario.resolve_tau()?;
            let grid = prep.grid()?;
            let fields = prep.background_fields()?;
            let mut kit = TestKit::new(&prep.mesh, &prep.background, &prep.basis, tau)?;
            kit.selection = scenario.test.sides;
            kit.background_fields = Some(&fields);
            kit.phantom = Some(&prep.phantom);
            let map = linearized_outer_reconstruction(
                &measured,
                &grid,
                scenario.test.beta,
                &prep.bounds,
                &kit,
            )?;
            let mut files = indicator_files("linearized", &map);
            if let Some(report) = cal {
                files.push(calibration_file(&report));
            }
            Ok(files)
        }
        Command::Convergence(_) => {
            let report = run_convergence_study(scenario)?;
            Ok(vec![
                ("convergence.csv".to_string(), report.to_csv().into_bytes()),
                ("convergence.txt".to_string(), report.to_text().into_bytes()),
            ])
        }
        Command::Localize(_) => {
            let report = run_localized_potentials(scenario)?;
            let mut loads = String::new();
            for (k, x) in report.loads.iter().enumerate() {
                let row: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
                loads.push_str(&format!("load {k} {}\n", row.join(" ")));
            }
            let summary = format!(
                "localized loads: dim {}, sigma {:.6e}, best ratio {:.6e}\n",
                report.dim, report.sigma, report.ratios[0]
            );
            Ok(vec![
                (
                    "localize_ratios.csv".to_string(),
                    report.to_csv().into_bytes(),
                ),
                ("localize_loads.txt".to_string(), loads.into_bytes()),
                ("localize.txt".to_string(), summary.into_bytes()),
            ])
        }
    }
}
