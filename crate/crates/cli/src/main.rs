//! `corwa`: train, verify, synthesize, simulate and transfer cooperative
//! reach-while-avoid certificates from scenario files.

mod io;
mod report;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use corwa_core::cegis::CegisStatus;
use corwa_core::pipeline::{self, Prepared};
use corwa_core::scenario::{ScenarioConfig, ScenarioKind};
use corwa_core::sim::{metrics_csv, sample_initial, simulate, trajectory_csv, Policy};
use corwa_core::transfer::{find_embedding, template_classes, transfer_certificate, red_ver, SystemSignature};
use corwa_core::verifier::{Budget, Status};
use corwa_core::CoRwaCertificate;
use io::{read_to_string, write_atomic, write_json};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use report::{CERTIFICATE_FILE, CONFIG_FILE, METRICS_FILE};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Exit code when the command ran but the certificate was not proven
/// (verification not Verified, synthesis not converged).
const EXIT_UNPROVEN: u8 = 2;
const EXIT_ERROR: u8 = 1;

#[derive(Parser)]
#[command(name = "corwa", version, about = "Neural cooperative reach-while-avoid certificates")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's output_dir, else runs/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximum boxes per verification query.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Imitation pretraining of a fresh certificate.
    Train { config: PathBuf },
    /// Verify a certificate against the scenario.
    Verify {
        config: PathBuf,
        #[arg(long)]
        certificate: PathBuf,
    },
    /// Pretraining followed by counterexample-guided synthesis.
    Cegis { config: PathBuf },
    /// Closed-loop rollouts with a certificate's controllers, or the nominal
    /// controller when no certificate is given.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Transfer a certificate from a small scenario to a larger one.
    Transfer {
        small_config: PathBuf,
        small_certificate: PathBuf,
        large_config: PathBuf,
    },
    /// Train once at the smallest platoon size and transfer to the others.
    Redver {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,6,30")]
        sizes: Vec<usize>,
    },
    /// Render plots and tables of a run directory.
    Report { dir: PathBuf },
}

struct Run {
    cfg: ScenarioConfig,
    out: PathBuf,
}

impl Cli {
    fn run_for(&self, config: &Path) -> Result<Run> {
        let mut cfg = ScenarioConfig::load(config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(b) = self.budget {
            cfg.verifier.budget.max_boxes = b;
            cfg.cegis.budget.max_boxes = b;
            cfg.redver.budget.max_boxes = b;
        }
        let out = match (&self.out, &cfg.output_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => PathBuf::from(o),
            (None, None) => PathBuf::from("runs").join(&cfg.name),
        };
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write_atomic(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
        Ok(Run { cfg, out })
    }
}

fn load_certificate(path: &Path) -> Result<CoRwaCertificate> {
    Ok(CoRwaCertificate::from_json(&read_to_string(path)?)?)
}

fn save_certificate(path: &Path, cert: &CoRwaCertificate) -> Result<()> {
    write_atomic(path, cert.to_json()?.as_bytes())
}

fn budget_of(cfg: &ScenarioConfig) -> Budget {
    cfg.verifier.budget
}

fn train(cli: &Cli, config: &Path) -> Result<u8> {
    let Run { cfg, out } = cli.run_for(config)?;
    let p = pipeline::prepare(&cfg)?;
    let mut cert = pipeline::initial_certificate(&cfg, &p.sys);
    let (_, report) = pipeline::pretrain(&cfg, &p, &mut cert)?;
    save_certificate(&out.join(CERTIFICATE_FILE), &cert)?;
    write_json(&out.join("train_report.json"), &report)?;
    if let Some(l) = report.final_train() {
        println!("trained {} epochs, final loss {l:.6e}", report.epochs.len());
    }
    Ok(0)
}

fn verify(cli: &Cli, config: &Path, certificate: &Path) -> Result<u8> {
    let Run { cfg, out } = cli.run_for(config)?;
    let cert = load_certificate(certificate)?;
    let p = pipeline::prepare(&cfg)?;
    let report = pipeline::verify(&cfg, &p, &cert, budget_of(&cfg))?;
    write_json(&out.join("verification.json"), &report)?;
    println!(
        "verdict {:?}: {} verified, {} counterexample, {} unknown",
        report.verdict,
        report.count(Status::Verified),
        report.count(Status::Counterexample),
        report.count(Status::Unknown)
    );
    Ok(if report.verdict == Status::Verified { 0 } else { EXIT_UNPROVEN })
}

fn cegis(cli: &Cli, config: &Path) -> Result<u8> {
    let Run { cfg, out } = cli.run_for(config)?;
    let p = pipeline::prepare(&cfg)?;
    let ckpt = out.join("checkpoints");
    let mut failed: Option<anyhow::Error> = None;
    let syn = pipeline::synthesize(&cfg, &p, |it, cert| {
        if failed.is_none() {
            if let Err(e) = save_certificate(&ckpt.join(format!("iteration_{it:03}.json")), cert) {
                failed = Some(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    save_certificate(&out.join(CERTIFICATE_FILE), &syn.certificate)?;
    write_json(&out.join("cegis_report.json"), &syn.report)?;
    let table = syn.report.summary_table();
    write_atomic(&out.join("cegis_summary.txt"), table.as_bytes())?;
    println!("{table}");
    println!("status {:?}", syn.report.status);
    Ok(if syn.report.status == CegisStatus::CertifiedConverged { 0 } else { EXIT_UNPROVEN })
}

fn simulate_cmd(cli: &Cli, config: &Path, certificate: Option<&Path>, rollouts: Option<usize>) -> Result<u8> {
    let Run { cfg, out } = cli.run_for(config)?;
    let sys = cfg.system()?;
    let cert = certificate.map(load_certificate).transpose()?;
    if let Some(c) = &cert {
        c.check_against(&sys)?;
        save_certificate(&out.join(CERTIFICATE_FILE), c)?;
    }
    let nominal = cfg.nominal();
    let policy = match &cert {
        Some(c) => Policy::Certificate(c),
        None => Policy::Nominal(&nominal),
    };
    let sim = &cfg.simulation;
    let mut metrics = Vec::new();
    for k in 0..rollouts.unwrap_or(sim.rollouts).max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        let start = sample_initial(&sys, &mut rng);
        let r = simulate(&sys, policy, start, &sim.leader, cfg.obstacles(), sim.dt, sim.steps)?;
        write_atomic(&out.join(format!("trajectory_{k}.csv")), trajectory_csv(&sys, &r).as_bytes())?;
        let clips: usize = r.clips.iter().map(|c| c.len()).sum();
        tracing::info!(rollout = k, clips, "rollout finished");
        metrics.push(r.metrics);
    }
    write_atomic(&out.join(METRICS_FILE), metrics_csv(&metrics).as_bytes())?;
    write_json(&out.join("metrics.json"), &metrics)?;
    print!("{}", metrics_csv(&metrics));
    Ok(0)
}

fn transfer_cmd(cli: &Cli, small_config: &Path, small_cert: &Path, large_config: &Path) -> Result<u8> {
    let small_cfg = ScenarioConfig::load(small_config)?;
    let Run { cfg: large_cfg, out } = cli.run_for(large_config)?;
    let small = small_cfg.system()?;
    let large = large_cfg.system()?;
    let cert = load_certificate(small_cert)?;
    cert.check_against(&small)?;
    let (ss, ls) = (SystemSignature::of(&small), SystemSignature::of(&large));
    let tau = find_embedding(&ss, &ls).context("no substructure embedding of the small scenario into the large one")?;
    let classes = template_classes(&ss, &ls, &tau)?;
    let lcert = transfer_certificate(&cert, &small, &tau, &large)?;
    save_certificate(&out.join(CERTIFICATE_FILE), &lcert)?;
    let summary = serde_json::json!({
        "small_fingerprint": ss.fingerprint(),
        "large_fingerprint": ls.fingerprint(),
        "embedding": tau.map,
        "template_classes": classes,
        "convention": "agents outside the embedding reuse the certificate of a role-equivalent small agent; the tiled coupling matrix is re-checked",
    });
    write_json(&out.join("transfer.json"), &summary)?;
    println!("embedding {:?}\ntemplate classes {:?}", tau.map, classes);
    Ok(0)
}

fn redver_cmd(cli: &Cli, config: &Path, sizes: &[usize]) -> Result<u8> {
    let Run { cfg, out } = cli.run_for(config)?;
    let ScenarioKind::Platoon(family) = &cfg.scenario else {
        bail!("redver needs a platoon scenario");
    };
    let build = |n: usize| family.with_followers(n).system().expect("platoon family builds for every size");
    let train = |small: &corwa_core::System| -> Result<CoRwaCertificate> {
        let p = Prepared { sys: small.clone(), surrogate: corwa_core::dynamics::fit_surrogate(small, &cfg.surrogate)?, nominal: cfg.nominal() };
        let syn = pipeline::synthesize(&cfg, &p, |_, _| {})?;
        tracing::info!(status = ?syn.report.status, "small system synthesis finished");
        Ok(syn.certificate)
    };
    let (cert, rows) = red_ver(sizes, build, train, &cfg.redver)?;
    save_certificate(&out.join(CERTIFICATE_FILE), &cert)?;
    let mut csv = String::from("size,trained,train_time,transfer_time,spot_check_time,spot_verdict,max_residual_gap,residuals_compared\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:?},{:e},{}\n",
            r.size, r.trained, r.train_time, r.transfer_time, r.spot_check_time, r.spot_verdict, r.max_residual_gap, r.residuals_compared
        ));
    }
    write_atomic(&out.join("redver.csv"), csv.as_bytes())?;
    write_json(&out.join("redver.json"), &rows)?;
    print!("{csv}");
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Train { config } => train(cli, config),
        Command::Verify { config, certificate } => verify(cli, config, certificate),
        Command::Cegis { config } => cegis(cli, config),
        Command::Simulate { config, certificate, rollouts } => simulate_cmd(cli, config, certificate.as_deref(), *rollouts),
        Command::Transfer { small_config, small_certificate, large_config } => transfer_cmd(cli, small_config, small_certificate, large_config),
        Command::Redver { config, sizes } => redver_cmd(cli, config, sizes),
        Command::Report { dir } => {
            for p in report::render(dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
