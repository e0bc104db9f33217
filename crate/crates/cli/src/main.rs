use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nnveil_core::bench::{self, BenchSettings};
use nnveil_core::extract::{self, ModelFeatures};
use nnveil_core::interpreter::nnt::{decode_tensor, encode_tensor};
use nnveil_core::obfuscate::parse_strategies;
use nnveil_core::similarity::{matrix_csv, similarity_matrix};
use nnveil_core::{
    build_fixture, dump_json, obfuscate, parse_model, serialize_model, FixtureId, KernelBundle, ModelGraph,
    ObfuscationConfig, PKConfig, Session, ShapeStrategy,
};

/// Obfuscates on-device model files and measures the result.
///
/// MODEL arguments are NNM1 file paths or `fixture:<name>[@seed]`.
#[derive(Parser)]
#[command(name = "nnveil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write model.nnm1, bundle.obfb and plan.json into a directory.
    Obfuscate {
        model: String,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shortcuts to inject.
        #[arg(long, default_value_t = 0)]
        n1: u32,
        /// Extra layers to inject.
        #[arg(long, default_value_t = 0)]
        n2: u32,
        #[arg(long, value_enum, default_value_t = ShapeArg::Align)]
        shape: ShapeArg,
        /// `all`, `none`, or a comma list of rename,encapsulate,shape,shortcut,extra.
        #[arg(long, default_value = "all")]
        strategies: String,
    },
    /// Execute a model on NNT1 tensors.
    Run {
        model: String,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// One file per graph input, in order.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// One file per graph output, in order.
        #[arg(short = 'o', long = "output", required = true)]
        outputs: Vec<PathBuf>,
    },
    /// Largest L2 output difference over seeded random inputs; exits 1 if non-zero.
    Compare {
        original: String,
        other: String,
        /// Bundle of the second model.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Bundle of the first model, if it is obfuscated too.
        #[arg(long)]
        original_bundle: Option<PathBuf>,
        #[arg(short, long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the model as JSON.
    Dump { model: String },
    /// Pairwise structure similarity as a CSV matrix.
    Similarity {
        #[arg(required = true)]
        models: Vec<String>,
        #[command(flatten)]
        kernel: KernelArgs,
    },
    /// Replay the parsing, conversion and surrogate attacks.
    Attack {
        /// Model file to attack; omit with --matrix.
        model: Option<String>,
        /// Directory of NNM1 candidates for surrogate matching.
        #[arg(long)]
        zoo: Option<PathBuf>,
        /// Zoo file stem of the true original, to report its rank.
        #[arg(long)]
        truth: Option<String>,
        /// Full resilience matrix over the fixture zoo instead of one model.
        #[arg(long)]
        matrix: bool,
        /// Injection count used by the matrix.
        #[arg(long, default_value_t = 20)]
        n: u32,
        /// Weight seeds of the fixture zoo.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        #[command(flatten)]
        kernel: KernelArgs,
    },
    /// Latency and memory of obfuscated variants as CSV.
    Bench {
        #[arg(required = true)]
        models: Vec<String>,
        /// Semicolon-separated n1,n2 pairs; every pair uses all strategies.
        #[arg(long, default_value = "0,0;10,0;0,10;20,20;0,30")]
        pairs: String,
        /// Also measure the unobfuscated model.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value_t = 1000)]
        inferences: usize,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write CSV here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a built-in fixture model.
    Fixture {
        /// Fixture name; omit with --list.
        name: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        list: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Random,
    Align,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

#[derive(clap::Args)]
struct KernelArgs {
    #[arg(long, default_value_t = 10)]
    t_max: u32,
    #[arg(long, default_value_t = 1e-5)]
    bin_width: f64,
    #[arg(long, default_value_t = 0)]
    kernel_seed: u64,
}

impl KernelArgs {
    fn config(&self) -> PKConfig {
        PKConfig {
            t_max: self.t_max,
            bin_width: self.bin_width,
            seed: self.kernel_seed,
        }
    }
}

fn load_model(spec: &str) -> Result<ModelGraph> {
    if let Some(rest) = spec.strip_prefix("fixture:") {
        let (name, seed) = match rest.split_once('@') {
            Some((n, s)) => (n, s.parse().with_context(|| format!("bad fixture seed in `{spec}`"))?),
            None => (rest, 1),
        };
        let id: FixtureId = name.parse()?;
        return Ok(build_fixture(id, seed));
    }
    let bytes = fs::read(spec).with_context(|| format!("reading {spec}"))?;
    parse_model(&bytes).with_context(|| format!("parsing {spec}"))
}

fn load_bundle(path: Option<&Path>) -> Result<Option<KernelBundle>> {
    path.map(|p| {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        KernelBundle::from_bytes(&bytes).with_context(|| format!("parsing {}", p.display()))
    })
    .transpose()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(u32, u32)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(',')
                .ok_or_else(|| anyhow!("pair `{p}` is not of the form n1,n2"))?;
            Ok((a.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

fn display_name(spec: &str) -> String {
    match spec.strip_prefix("fixture:") {
        Some(rest) => rest.to_string(),
        None => Path::new(spec)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string()),
    }
}

fn load_zoo(dir: &Path) -> Result<Vec<(String, ModelGraph)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "nnm1"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok((display_name(&p.to_string_lossy()), load_model(&p.to_string_lossy())?)))
        .collect()
}

fn attack_one(spec: &str, zoo: Option<&Path>, truth: Option<&str>, cfg: &PKConfig) -> Result<String> {
    let bytes = match spec.strip_prefix("fixture:") {
        Some(_) => serialize_model(&load_model(spec)?)?,
        None => fs::read(spec).with_context(|| format!("reading {spec}"))?,
    };
    let report = extract::parse_in_buffer(&bytes)?;
    let mut out = String::new();
    out.push_str("| attack | result |\n|---|---|\n");
    out.push_str(&format!("| convert | {} |\n", report.conversion));
    out.push_str(&format!(
        "| buffer-parse | {} ({} weight tensors, {} bytes) |\n",
        if report.buffer_parse_succeeded() { "SUCCESS" } else { "FAILED" },
        report.weight_tensors_recovered,
        report.weight_bytes_recovered
    ));
    let mut types = report.op_types_recovered.clone();
    types.sort();
    types.dedup();
    out.push_str(&format!("| operator types | {} |\n", types.join(" ")));

    if let Some(dir) = zoo {
        let graph = parse_model(&bytes)?;
        let zoo = load_zoo(dir)?;
        if zoo.is_empty() {
            bail!("no .nnm1 files in {}", dir.display());
        }
        let feats: Vec<ModelFeatures> = zoo.iter().map(|(_, g)| ModelFeatures::of(g)).collect();
        let ranked = extract::rank_features(&ModelFeatures::of(&graph), &feats, cfg)?;
        let top: Vec<String> = ranked
            .iter()
            .take(5)
            .map(|&(i, s)| format!("{} {s:.3}", zoo[i].0))
            .collect();
        out.push_str(&format!("| surrogate candidates | {} |\n", top.join(", ")));
        if let Some(name) = truth {
            let idx = zoo
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| anyhow!("`{name}` is not in the zoo"))?;
            let rank = extract::pessimistic_rank(&ranked, idx).expect("index from zoo");
            out.push_str(&format!(
                "| surrogate | {} (true original at rank {rank} of {}) |\n",
                if rank == 1 { "SUCCESS" } else { "FAILED" },
                zoo.len()
            ));
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Obfuscate {
            model,
            out,
            seed,
            n1,
            n2,
            shape,
            strategies,
        } => {
            let graph = load_model(&model)?;
            let config = ObfuscationConfig {
                seed,
                n_shortcuts: n1,
                n_extra_layers: n2,
                shape_strategy: match shape {
                    ShapeArg::Random => ShapeStrategy::Random,
                    ShapeArg::Align => ShapeStrategy::AlignToLargest,
                },
                strategies: parse_strategies(&strategies).map_err(|e| anyhow!("--strategies: {e}"))?,
            };
            let ob = obfuscate(&graph, &config)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("model.nnm1"), serialize_model(&ob.model)?)?;
            write(&out.join("bundle.obfb"), ob.bundle.to_bytes())?;
            write(&out.join("plan.json"), ob.plan.to_json())?;
            eprintln!("plan.json inverts the obfuscation; keep it out of any distributed package");
        }
        Command::Run {
            model,
            bundle,
            inputs,
            outputs,
        } => {
            let graph = load_model(&model)?;
            let bundle = load_bundle(bundle.as_deref())?;
            if outputs.len() != graph.graph_outputs.len() {
                bail!("model has {} outputs but {} output paths were given", graph.graph_outputs.len(), outputs.len());
            }
            let values = inputs
                .iter()
                .map(|p| {
                    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    decode_tensor(&bytes).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let session = Session::new(&graph, bundle.as_ref())?;
            for (path, v) in outputs.iter().zip(session.infer(values)?) {
                write(path, encode_tensor(&v)?)?;
            }
        }
        Command::Compare {
            original,
            other,
            bundle,
            original_bundle,
            n,
            seed,
        } => {
            let a = load_model(&original)?;
            let b = load_model(&other)?;
            let ba = load_bundle(original_bundle.as_deref())?;
            let bb = load_bundle(bundle.as_deref())?;
            let err = bench::compare_outputs(&a, ba.as_ref(), &b, bb.as_ref(), n, seed)?;
            emit(&format!("{err}\n"))?;
            if err > 0.0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Dump { model } => emit(&(dump_json(&load_model(&model)?)? + "\n"))?,
        Command::Similarity { models, kernel } => {
            let graphs = models
                .iter()
                .map(|m| load_model(m).map(|g| nnveil_core::to_labeled_graph(&g)))
                .collect::<Result<Vec<_>>>()?;
            let names: Vec<String> = models
                .iter()
                .map(|m| m.strip_prefix("fixture:").unwrap_or(m).to_string())
                .collect();
            emit(&matrix_csv(&names, &similarity_matrix(&graphs, &kernel.config())?))?;
        }
        Command::Attack {
            model,
            zoo,
            truth,
            matrix,
            n,
            seeds,
            format,
            kernel,
        } => {
            if matrix {
                let m = extract::attack_matrix(&seeds, n, &kernel.config())?;
                emit(&if format == Format::Csv { m.to_csv() } else { m.to_markdown() })?;
            } else {
                let model = model.ok_or_else(|| anyhow!("attack needs a MODEL or --matrix"))?;
                emit(&attack_one(&model, zoo.as_deref(), truth.as_deref(), &kernel.config())?)?;
            }
        }
        Command::Bench {
            models,
            pairs,
            baseline,
            inferences,
            repetitions,
            seed,
            out,
        } => {
            let pairs = parse_pairs(&pairs).context("--pairs")?;
            let mut configs = bench::sweep_configs(seed, &pairs);
            if !baseline {
                configs.remove(0);
            }
            let settings = BenchSettings {
                inferences,
                repetitions,
                seed,
            };
            let mut records = Vec::new();
            for m in &models {
                records.extend(bench::bench(&display_name(m), &load_model(m)?, &configs, settings)?);
            }
            let csv = bench::to_csv(&records);
            match out {
                Some(p) => write(&p, csv)?,
                None => emit(&csv)?,
            }
        }
        Command::Fixture { name, seed, out, list } => {
            if list {
                for id in FixtureId::ALL {
                    emit(&format!("{id}\n"))?;
                }
            } else {
                let name = name.ok_or_else(|| anyhow!("fixture needs a NAME or --list"))?;
                let id: FixtureId = name.parse()?;
                let bytes = serialize_model(&build_fixture(id, seed))?;
                match out {
                    Some(p) => write(&p, bytes)?,
                    None => bail!("fixture needs --out"),
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
