use std::path::PathBuf;
use std::process::ExitCode;

use bbqram::circuit::RouterInit;
use bbqram::harness::{address_state, cell_seed, run_sweep, write_outputs, ExperimentConfig, SweepResult, TwirlMode};
use bbqram::noise::{estimate_query_fidelity, NoiseModel};
use bbqram::oracle::{density_fidelity, exhaustive_chi_fidelity};
use bbqram::topology::{build_tree, RouterModel};
use bbqram::{Error, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bbqram", version, about = "Noisy bucket-brigade QRAM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// CSV output; a JSON sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run at the smallest tree size of the configuration.
    Query(Common),
    /// Full grid with bound checks.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Exit nonzero when any row violates its bound beyond three standard errors.
        #[arg(long)]
        enforce: bool,
    },
    /// The configured sweep without twirling and with the configured twirl.
    TwirlCompare(Common),
    /// Monte Carlo against the exact oracles at the smallest tree size.
    Verify(Common),
    /// Effective error rates per graining.
    Grain(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(r: &SweepResult) {
    println!("n\ttau\teps\ttwirl\tinit\tF\tstderr\tbound\tvalue\tok");
    for row in &r.rows {
        println!(
            "{}\t{}\t{:.3e}\t{:?}\t{}\t{:.6}\t{:.2e}\t{}\t{:.3e}\t{}",
            row.n,
            row.tau,
            row.eps,
            row.twirl,
            row.init_index,
            row.mean_f,
            row.stderr,
            row.bound.name(),
            row.bound_value,
            row.satisfied
        );
    }
}

fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let r = run_sweep(cfg)?;
    print_rows(&r);
    if let Some(path) = &cfg.out {
        let side = write_outputs(&r, cfg, path)?;
        eprintln!("wrote {} and {}", path.display(), side.display());
    }
    Ok(r)
}

fn verify(cfg: &ExperimentConfig) -> Result<()> {
    let n = cfg.n_min;
    let tree = build_tree(n, cfg.variant)?;
    let memory: Vec<u8> = (0..1usize << n).map(|i| (i % 3 == 1) as u8).collect();
    let q = if cfg.doubling {
        bbqram::circuit::build_doubled_circuit(&tree, &memory, cfg.schedule)?
    } else {
        bbqram::circuit::build_query_circuit(&tree, &memory, cfg.schedule)?
    };
    let model = NoiseModel::from_decls(&tree, q.layout(), &cfg.noise)?;
    let init = match cfg.variant {
        RouterModel::ThreeLevel if !cfg.doubling => RouterInit::AllWait,
        _ => RouterInit::AllZero,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg.seed, 0));
    let data = address_state(&cfg.address, q.layout(), &mut rng)?;
    let mc = estimate_query_fidelity(&q, &model, &data, &init, cfg.trials, cfg.seed)?;
    println!("monte carlo  F = {:.8} +- {:.2e} ({} trials)", mc.mean, mc.stderr, mc.trials);
    match density_fidelity(&q, Some(&model), &data, &init) {
        Ok(f) => println!("density      F = {f:.12} ({:.2} sigma)", (mc.mean - f).abs() / mc.stderr.max(1e-300)),
        Err(e) => println!("density      skipped: {e}"),
    }
    match exhaustive_chi_fidelity(&q, &model, &data, &init) {
        Ok(f) => println!("enumeration  F = {f:.12} ({:.2} sigma)", (mc.mean - f).abs() / mc.stderr.max(1e-300)),
        Err(e) => println!("enumeration  skipped: {e}"),
    }
    Ok(())
}

fn grain(cfg: &ExperimentConfig) -> Result<()> {
    for n in cfg.n_min..=cfg.n_max {
        let tree = build_tree(n, cfg.variant)?;
        let layout = bbqram::sparse_state::RegisterLayout::for_tree(&tree, cfg.doubling);
        let model = NoiseModel::from_decls(&tree, &layout, &cfg.noise)?;
        let report = model.grain_report(&tree)?;
        let eps: Vec<String> = report.eps.iter().map(|(d, e)| format!("eps_{d} = {e:.4e}")).collect();
        println!("n = {n}: {}", eps.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Query(c) => {
            let mut cfg = load(&c)?;
            cfg.n_max = cfg.n_min;
            sweep(&cfg)?;
            Ok(true)
        }
        Command::Sweep { common, enforce } => {
            let r = sweep(&load(&common)?)?;
            Ok(!enforce || r.all_satisfied())
        }
        Command::TwirlCompare(c) => {
            let cfg = load(&c)?;
            if cfg.twirl == TwirlMode::None {
                return Err(Error::Config("twirl-compare needs a twirl mode in the configuration".into()));
            }
            let plain = ExperimentConfig { twirl: TwirlMode::None, out: None, ..cfg.clone() };
            println!("# untwirled");
            let a = sweep(&plain)?;
            println!("# {:?}", cfg.twirl);
            let b = sweep(&ExperimentConfig { out: None, ..cfg })?;
            for (x, y) in a.rows.iter().zip(&b.rows) {
                println!("n = {}: 1 - F untwirled {:.3e}, twirled {:.3e}", x.n, x.infidelity(), y.infidelity());
            }
            Ok(true)
        }
        Command::Verify(c) => {
            verify(&load(&c)?)?;
            Ok(true)
        }
        Command::Grain(c) => {
            grain(&load(&c)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bound violated beyond slack");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
