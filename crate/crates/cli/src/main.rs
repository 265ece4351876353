//! Command-line driver: simulate, average, table1, scenario, design,
//! subspace and validate subcommands over the core library.
//!
//! Exit codes: 0 ok, 1 usage error, 2 computation failure, 3 certification
//! failure, 4 memory budget exceeded.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qreset_core::design;
use qreset_core::experiment::derive_seed;
use qreset_core::io;
use qreset_core::linalg::PureState;
use qreset_core::network::{validate_tester, InteractionUnitary};
use qreset_core::protocols::{self, PrepareMeasureProtocol, ProtocolError};
use qreset_core::subspace::{complement, identify_perp_span, BranchFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_COMPUTE: u8 = 2;
const EXIT_CERTIFICATION: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(
    name = "qreset",
    version,
    about = "Simulate, verify and design probabilistic quantum resetting protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed for all randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Numerical tolerance for subspace identification and soundness checks.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,

    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one protocol on one interaction unitary and initial state.
    Simulate(SimulateArgs),
    /// Monte Carlo average success probability over Haar-random unitaries.
    Average(AverageArgs),
    /// Cumulative success of the concatenated undo-failure chain.
    Table1(Table1Args),
    /// Success-vs-time curves for a Hamiltonian scenario configuration.
    Scenario(ScenarioArgs),
    /// Protocol discovery: SDP, heuristics, injective unitaries.
    #[command(subcommand)]
    Design(DesignCommand),
    /// Identify and cache central subspaces.
    #[command(subcommand)]
    Subspace(SubspaceCommand),
    /// Validate a tester Choi file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Protocol: w4 | w8-pairs | w8-interleaved | path to a protocol JSON.
    #[arg(long, default_value = "w4")]
    protocol: String,
    /// Interaction unitary: haar | product | special-xz | path to JSON.
    #[arg(long, default_value = "haar")]
    unitary: String,
    /// Initial target state: haar | basis0 | path to JSON.
    #[arg(long, default_value = "haar")]
    psi0: String,
}

#[derive(Args)]
struct AverageArgs {
    #[arg(long, default_value = "w4")]
    protocol: String,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

#[derive(Args)]
struct Table1Args {
    /// Deepest undo stage to evaluate.
    #[arg(long, default_value_t = 3)]
    m_max: usize,
    /// Number of Monte Carlo unitaries.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Memory budget in bytes for stage identification.
    #[arg(long, default_value_t = qreset_core::network::DEFAULT_MEMORY_BUDGET)]
    budget_bytes: usize,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Path to the scenario configuration JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum DesignCommand {
    /// Solve the optimal-tester SDP for a Haar prior.
    Sdp(SdpArgs),
    /// Heuristic #1: maximal measurement space for a fixed input state.
    Heuristic1(Heuristic1Args),
    /// Heuristic #2: admissible input states for a fixed projector.
    Heuristic2(Heuristic2Args),
    /// Injective unitary whose block products span the target algebra.
    Injective(InjectiveArgs),
}

#[derive(Args)]
struct SdpArgs {
    /// Number of probes.
    #[arg(long)]
    n: usize,
    /// Monte Carlo samples discretizing the Haar prior.
    #[arg(long, default_value_t = 10_000)]
    prior_samples: usize,
}

#[derive(Args)]
struct Heuristic1Args {
    /// Input state: w8-pairs | w8-interleaved | w4-singlets | path to JSON.
    #[arg(long)]
    input: String,
}

#[derive(Args)]
struct Heuristic2Args {
    /// Projector: q4 (quasi-symmetric space) | path to a protocol JSON whose
    /// projector is used.
    #[arg(long)]
    projector: String,
}

#[derive(Args)]
struct InjectiveArgs {
    /// Target dimension d_S.
    #[arg(long)]
    ds: usize,
}

#[derive(Subcommand)]
enum SubspaceCommand {
    /// Identify H^c and write it to a cache file.
    Dump(SubspaceDumpArgs),
    /// Load a cache file, revalidate orthonormality, print a summary.
    Load(SubspaceLoadArgs),
}

#[derive(Args)]
struct SubspaceDumpArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    ds: usize,
    #[arg(long, default_value_t = 2)]
    dp: usize,
    /// Consecutive in-span samples required for termination.
    #[arg(long, default_value_t = 10)]
    stop_count: usize,
}

#[derive(Args)]
struct SubspaceLoadArgs {
    #[arg(long)]
    file: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Path to a tester Choi JSON file.
    #[arg(long)]
    tester: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap renders help/version through the same error path
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(w) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<ProtocolError>() {
                Some(ProtocolError::MemoryBudget { .. }) => EXIT_BUDGET,
                Some(ProtocolError::Certification(_)) => EXIT_CERTIFICATION,
                _ => EXIT_COMPUTE,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Average(args) => cmd_average(cli, args),
        Command::Table1(args) => cmd_table1(cli, args),
        Command::Scenario(args) => cmd_scenario(cli, args),
        Command::Design(cmd) => cmd_design(cli, cmd),
        Command::Subspace(cmd) => cmd_subspace(cli, cmd),
        Command::Validate(args) => cmd_validate(cli, args),
    }
}

fn write_output(out: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn load_json(path: &Path) -> anyhow::Result<serde_json::Value> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_protocol(spec: &str) -> anyhow::Result<PrepareMeasureProtocol> {
    match spec {
        "w4" => Ok(protocols::w4()),
        "w8-pairs" => Ok(design::derive_w8(
            design::W8Variant::PairsSequential,
            design::W8_DERIVE_SEED,
        )?),
        "w8-interleaved" => Ok(design::derive_w8(
            design::W8Variant::PairsInterleaved,
            design::W8_DERIVE_SEED,
        )?),
        path => {
            let v = load_json(Path::new(path))?;
            io::protocol_from_json(&v, "$").map_err(|e| anyhow!(e))
        }
    }
}

fn load_unitary(spec: &str, seed: u64) -> anyhow::Result<InteractionUnitary> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x1));
    match spec {
        "haar" => Ok(protocols::haar_interaction(2, 2, &mut rng)),
        "product" => Ok(protocols::product_unitary(2, 2, &mut rng)),
        "special-xz" => Ok(protocols::special_xz_unitary()),
        path => {
            let v = load_json(Path::new(path))?;
            let obj = v
                .as_object()
                .ok_or_else(|| anyhow!("$: expected a unitary object"))?;
            let d_s = obj.get("d_s").and_then(|x| x.as_u64()).unwrap_or(2) as usize;
            let d_p = obj.get("d_p").and_then(|x| x.as_u64()).unwrap_or(2) as usize;
            let m = io::matrix_from_json(
                obj.get("matrix").ok_or_else(|| anyhow!("$.matrix: missing"))?,
                "$.matrix",
            )
            .map_err(|e| anyhow!(e))?;
            Ok(InteractionUnitary::new(d_s, d_p, m)?)
        }
    }
}

fn load_state(spec: &str, seed: u64, dim: usize) -> anyhow::Result<PureState> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x2));
    match spec {
        "haar" => Ok(PureState::haar(dim, &mut rng)),
        "basis0" => Ok(PureState::basis_state(dim, 0)),
        path => {
            let v = load_json(Path::new(path))?;
            let amps = io::cvec_from_json(&v, "$").map_err(|e| anyhow!(e))?;
            Ok(PureState::new(amps)?)
        }
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<ExitCode> {
    let protocol = load_protocol(&args.protocol)?;
    let unitary = load_unitary(&args.unitary, cli.seed)?;
    let psi0 = load_state(&args.psi0, cli.seed, unitary.d_s())?;
    let outcome = protocols::evaluate(&protocol, &unitary, &psi0)?;
    let fidelity = outcome.fidelity_to(&psi0);
    let branch_norms: Vec<f64> = outcome
        .failure_branch
        .iter()
        .map(|(f, _)| {
            f.mul_vec(psi0.amplitudes())
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
        })
        .collect();

    let mut text = String::new();
    text.push_str(&format!(
        "protocol: {} (n={}, d_P={}, projector rank {})\n",
        protocol.id,
        protocol.n,
        protocol.d_p,
        protocol.projector.dim()
    ));
    text.push_str(&format!("unitary: {}\n", args.unitary));
    text.push_str(&format!("p_success = {:.6}\n", outcome.p_success));
    if outcome.p_success > 1e-6 {
        text.push_str(&format!("conditioned fidelity = {fidelity:.12}\n"));
    } else {
        text.push_str("conditioned fidelity = n/a (success branch empty)\n");
    }
    text.push_str(&format!(
        "failure branch norms = [{}]\n",
        branch_norms
            .iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    print!("{text}");

    if let Some(out) = &cli.out {
        let doc = serde_json::json!({
            "protocol": protocol.id,
            "unitary": args.unitary,
            "p_success": outcome.p_success,
            "conditioned_fidelity": if outcome.p_success > 1e-6 { Some(fidelity) } else { None },
            "failure_branch_norms": branch_norms,
        });
        write_output(Some(out), &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_average(cli: &Cli, args: &AverageArgs) -> anyhow::Result<ExitCode> {
    let protocol = load_protocol(&args.protocol)?;
    let (mean, stderr) = protocols::haar_average(&protocol, args.samples, cli.seed)?;
    let text = match cli.format {
        Format::Csv => format!(
            "protocol,samples,mean,stderr\n{},{},{:.17e},{:.17e}\n",
            protocol.id, args.samples, mean, stderr
        ),
        Format::Json => format!(
            "{}\n",
            serde_json::json!({
                "protocol": protocol.id,
                "samples": args.samples,
                "mean": mean,
                "stderr": stderr,
            })
        ),
    };
    println!(
        "{}: mean success {:.6} +- {:.6} over {} Haar samples",
        protocol.id, mean, stderr, args.samples
    );
    write_output(cli.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_table1(cli: &Cli, args: &Table1Args) -> anyhow::Result<ExitCode> {
    let opts = protocols::ConcatOptions {
        ident_tol: cli.tol,
        memory_budget: args.budget_bytes,
        ..Default::default()
    };
    let table = protocols::run_concatenated_with(args.m_max, args.samples, cli.seed, opts)?;
    let text = match cli.format {
        Format::Csv => io::table_to_csv(&table.rows),
        Format::Json => format!(
            "{}\n",
            serde_json::Value::Array(
                table
                    .rows
                    .iter()
                    .map(|r| serde_json::json!({"m": r.m, "mean": r.mean, "stderr": r.stderr}))
                    .collect()
            )
        ),
    };
    write_output(cli.out.as_deref(), &text)?;
    if let Some((stage, reason)) = &table.truncated {
        eprintln!("warning: stopped before stage {stage}: {reason}");
        return Ok(ExitCode::from(EXIT_BUDGET));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario(cli: &Cli, args: &ScenarioArgs) -> anyhow::Result<ExitCode> {
    let v = load_json(&args.config)?;
    let cfg = match io::scenario_config_from_json(&v) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid scenario config: {e}");
            return Ok(ExitCode::from(EXIT_USAGE));
        }
    };
    let rows = protocols::scenario_sweep(&cfg)?;
    let text = match cli.format {
        Format::Csv => io::curves_to_csv(&rows),
        Format::Json => format!(
            "{}\n",
            serde_json::Value::Array(
                rows.iter()
                    .map(|r| serde_json::json!({
                        "T": r.t,
                        "protocol_id": r.protocol_id,
                        "mean": r.mean,
                        "stderr": r.stderr,
                        "samples": r.samples,
                    }))
                    .collect()
            )
        ),
    };
    write_output(cli.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_design(cli: &Cli, cmd: &DesignCommand) -> anyhow::Result<ExitCode> {
    match cmd {
        DesignCommand::Sdp(args) => {
            let fam = BranchFamily::link_family(args.n, 2, 2);
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cli.seed, 0x3));
            let hc = complement(&identify_perp_span(&fam, &mut rng, cli.tol, 10));
            let prior = design::PriorSpec::haar(args.prior_samples, 2, 2, derive_seed(cli.seed, 0x4))
                .map_err(|e| anyhow!(e.to_string()))?;
            let (tester, optimum, diag) = design::sdp_optimal_tester(
                args.n,
                2,
                2,
                &prior,
                &hc,
                design::SdpOptions::default(),
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            println!("n={}: dim(H^c) = {}, SDP optimum = {optimum:.8}", args.n, hc.dim());
            if optimum < 1e-6 {
                println!("no sound protocol: optimal average success is numerically zero");
            }
            println!("diagnostics: {}", serde_json::to_string(&diag)?);
            let doc = serde_json::json!({
                "tester": io::tester_to_json(&tester),
                "optimum": optimum,
                "diagnostics": diag,
                "hc_dim": hc.dim(),
            });
            write_output(cli.out.as_deref(), &format!("{}\n", serde_json::to_string(&doc)?))?;
            Ok(ExitCode::SUCCESS)
        }
        DesignCommand::Heuristic1(args) => {
            let (id, phi, n) = match args.input.as_str() {
                "w8-pairs" => {
                    let v = design::W8Variant::PairsSequential;
                    (v.id().to_string(), protocols::singlet_product_state(&v.pairs(), 8), 8)
                }
                "w8-interleaved" => {
                    let v = design::W8Variant::PairsInterleaved;
                    (v.id().to_string(), protocols::singlet_product_state(&v.pairs(), 8), 8)
                }
                "w4-singlets" => (
                    "w4-heuristic".to_string(),
                    protocols::singlet_product_state(&[(0, 1), (2, 3)], 4),
                    4,
                ),
                path => {
                    let v = load_json(Path::new(path))?;
                    let amps = io::cvec_from_json(&v, "$").map_err(|e| anyhow!(e))?;
                    let n = amps.len().trailing_zeros() as usize;
                    ("custom".to_string(), PureState::new(amps)?, n)
                }
            };
            let (protocol, report, certified) =
                design::derive_measurement_protocol(&id, phi, n, 2, design::W8_DERIVE_SEED)?;
            println!(
                "{id}: projector rank {} on {} output registers ({} certification trials, certified: {certified})",
                protocol.projector.dim(),
                n,
                report.trials
            );
            let doc = io::protocol_to_json(&protocol, certified);
            write_output(cli.out.as_deref(), &format!("{}\n", serde_json::to_string(&doc)?))?;
            if !certified {
                eprintln!("error: certification failed; artifact written with certified=false");
                return Ok(ExitCode::from(EXIT_CERTIFICATION));
            }
            Ok(ExitCode::SUCCESS)
        }
        DesignCommand::Heuristic2(args) => {
            let (pi, n) = match args.projector.as_str() {
                "q4" => (protocols::quasi_symmetric_basis(), 4usize),
                path => {
                    let v = load_json(Path::new(path))?;
                    let p = io::protocol_from_json(&v, "$").map_err(|e| anyhow!(e))?;
                    let n = p.n;
                    (p.projector, n)
                }
            };
            let fam = BranchFamily::link_family(n, 2, 2);
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cli.seed, 0x5));
            let hc = complement(&identify_perp_span(&fam, &mut rng, cli.tol, 10));
            let inputs = qreset_core::subspace::identify_input_space(&pi, &hc, n, 2, cli.tol);
            println!(
                "input space for the given projector: dim {} (ambient {})",
                inputs.dim(),
                inputs.ambient_dim()
            );
            if inputs.dim() == 0 {
                println!("no protocol with this projector: the input space is empty");
            }
            let key = io::SubspaceKey {
                n,
                d_s: 2,
                d_p: 2,
                family_id: format!("input-space[{}]", args.projector),
                tol: cli.tol,
            };
            let doc = io::subspace_to_json(&inputs, &key);
            write_output(cli.out.as_deref(), &format!("{}\n", serde_json::to_string(&doc)?))?;
            Ok(ExitCode::SUCCESS)
        }
        DesignCommand::Injective(args) => {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cli.seed, 0x6));
            let (u, length) = match design::injective_unitary(args.ds, &mut rng) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(EXIT_CERTIFICATION));
                }
            };
            let rank = design::block_product_span_rank(&u, length).map_err(|e| anyhow!(e.to_string()))?;
            println!(
                "d_S = {}: block products of length {length} span rank {rank} (target {})",
                args.ds,
                args.ds * args.ds
            );
            let doc = serde_json::json!({
                "d_s": args.ds,
                "d_p": 2,
                "length": length,
                "span_rank": rank,
                "matrix": io::matrix_to_json(u.matrix()),
            });
            write_output(cli.out.as_deref(), &format!("{}\n", serde_json::to_string(&doc)?))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_subspace(cli: &Cli, cmd: &SubspaceCommand) -> anyhow::Result<ExitCode> {
    match cmd {
        SubspaceCommand::Dump(args) => {
            let fam = BranchFamily::link_family(args.n, args.ds, args.dp);
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cli.seed, 0x7));
            let hc = complement(&identify_perp_span(&fam, &mut rng, cli.tol, args.stop_count));
            println!(
                "H^c for n={}, d_S={}, d_P={}: dim {} of {}",
                args.n,
                args.ds,
                args.dp,
                hc.dim(),
                hc.ambient_dim()
            );
            let key = io::SubspaceKey {
                n: args.n,
                d_s: args.ds,
                d_p: args.dp,
                family_id: "central-subspace".into(),
                tol: cli.tol,
            };
            let doc = io::subspace_to_json(&hc, &key);
            write_output(cli.out.as_deref(), &format!("{}\n", serde_json::to_string(&doc)?))?;
            Ok(ExitCode::SUCCESS)
        }
        SubspaceCommand::Load(args) => {
            let v = load_json(&args.file)?;
            let (basis, key) = io::subspace_from_json(&v).map_err(|e| anyhow!(e))?;
            println!(
                "loaded {}: n={}, d_S={}, d_P={}, dim {} of {}, tol {:.1e}",
                args.file.display(),
                key.n,
                key.d_s,
                key.d_p,
                basis.dim(),
                basis.ambient_dim(),
                key.tol
            );
            println!(
                "provenance: {} (seed {}, {} samples)",
                basis.provenance.sampler, basis.provenance.seed, basis.provenance.termination_count
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_validate(cli: &Cli, args: &ValidateArgs) -> anyhow::Result<ExitCode> {
    let v = load_json(&args.tester)?;
    let tester = io::tester_from_json(&v).map_err(|e| anyhow!(e))?;
    let report = validate_tester(&tester);
    println!("{report}");
    if let Some(out) = &cli.out {
        let doc = serde_json::json!({
            "pass": report.pass,
            "checks": report.checks.iter().map(|c| serde_json::json!({
                "name": c.name,
                "residual": c.residual,
            })).collect::<Vec<_>>(),
        });
        write_output(Some(out.as_path()), &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_CERTIFICATION))
    }
}
