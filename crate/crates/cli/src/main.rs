use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vargnet::cost::render_table;
use vargnet::oracle::run_graph_naive;
use vargnet::schedule::UNLIMITED;
use vargnet::{
    build, checksum, plan_schedule, run_graph, summarize, BuildOptions, Error, HwConfig,
    NetworkGraph, Result, Tensor, Version, Weights,
};

#[derive(Debug, Parser)]
#[command(name = "vargnet", about = "Variable group network builder, cost model and scheduler")]
#[command(disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Total MAdds, parameters and max stage channels, or per-layer costs as CSV.
    Summarize {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fused-group plan under an on-chip weight budget.
    Schedule {
        #[command(flatten)]
        net: NetArgs,
        /// Weight budget in bytes, or `inf`.
        #[arg(long, value_parser = parse_budget, default_value = "262144")]
        budget: u64,
        #[arg(long, default_value_t = 4)]
        element_bytes: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the network on a VGT1 tensor and print an output checksum.
    Infer {
        #[command(flatten)]
        net: NetArgs,
        /// VGT1 input tensor.
        #[arg(long)]
        input: PathBuf,
        /// Concatenated VGT1 weight records in layer order; random weights otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Use the reference kernels.
        #[arg(long)]
        oracle: bool,
        /// Where to write the VGT1 output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the network graph as JSON.
    Export {
        #[command(flatten)]
        net: NetArgs,
        /// Also write seeded random weights as VGT1 records.
        #[arg(long)]
        weights_out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One summary row per published width scale.
    Table {
        #[arg(long, value_parser = parse_version, default_value = "v2")]
        version: Version,
        #[arg(long, default_value_t = 8)]
        group: usize,
        #[arg(long, default_value_t = 1000)]
        classes: usize,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Args)]
struct NetArgs {
    #[arg(long, value_parser = parse_version, default_value = "v2")]
    version: Version,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Channels per group.
    #[arg(long, default_value_t = 8)]
    group: usize,
    #[arg(long, default_value_t = 1000)]
    classes: usize,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    input_size: Option<Vec<usize>>,
    /// Load a previously exported graph instead of building one.
    #[arg(long, conflicts_with_all = ["version", "scale", "group", "classes", "input_size"])]
    graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

fn parse_version(s: &str) -> std::result::Result<Version, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_budget(s: &str) -> std::result::Result<u64, String> {
    match s {
        "inf" | "unlimited" => Ok(UNLIMITED),
        _ => s.parse().map_err(|_| format!("'{s}' is not a byte count or 'inf'")),
    }
}

impl NetArgs {
    fn load(&self) -> Result<NetworkGraph> {
        if let Some(path) = &self.graph {
            let text = std::fs::read_to_string(path)?;
            return NetworkGraph::from_json(&text);
        }
        let mut opts = BuildOptions {
            num_classes: self.classes,
            ..Default::default()
        };
        if let Some(hw) = &self.input_size {
            opts.input_h = hw[0];
            opts.input_w = hw[1];
        }
        build(self.version, self.scale, self.group, &opts)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_input(path: &Path, net: &NetworkGraph) -> Result<Tensor> {
    let mut reader = BufReader::new(File::open(path)?);
    let tensor = Tensor::read_vgt1(&mut reader)?
        .ok_or_else(|| Error::Format(format!("{}: no tensor record", path.display())))?;
    if Tensor::read_vgt1(&mut reader)?.is_some() {
        return Err(Error::Format(format!("{}: more than one tensor record", path.display())));
    }
    let (got, want) = (tensor.shape(), net.input);
    if (got.c, got.h, got.w) != (want.c, want.h, want.w) {
        return Err(Error::Argument(format!(
            "input tensor is {got}, network expects Nx{}x{}x{}",
            want.c, want.h, want.w
        )));
    }
    Ok(tensor)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Summarize { net, out } => {
            let net = net.load()?;
            let report = summarize(&net, net.input)?;
            let text = match out.format {
                Format::Json => report.to_json() + "\n",
                Format::Csv => report.to_csv(&net),
                Format::Text => render_table(std::slice::from_ref(&report)),
            };
            emit(out.out.as_deref(), &text)
        }
        Command::Schedule {
            net,
            budget,
            element_bytes,
            out,
        } => {
            let net = net.load()?;
            let hw = HwConfig::new(budget, element_bytes)?;
            let plan = plan_schedule(&net, hw, net.input)?;
            let text = match out.format {
                Format::Json => plan.to_json() + "\n",
                Format::Csv => {
                    let mut s = String::from(
                        "group,first_layer,last_layer,weight_bytes,in_traffic_bytes,out_traffic_bytes,peak_intermediate_feature_bytes,intensity_ratio,spill\n",
                    );
                    for (i, g) in plan.groups.iter().enumerate() {
                        s += &format!(
                            "{i},{},{},{},{},{},{},{:.6},{}\n",
                            g.first_layer,
                            g.last_layer,
                            g.weight_bytes,
                            g.in_traffic_bytes,
                            g.out_traffic_bytes,
                            g.peak_intermediate_feature_bytes,
                            g.intensity_ratio,
                            g.spill
                        );
                    }
                    s
                }
                Format::Text => plan.render_text(&net),
            };
            emit(out.out.as_deref(), &text)
        }
        Command::Infer {
            net,
            input,
            weights,
            seed,
            oracle,
            out,
        } => {
            let net = net.load()?;
            let x = read_input(&input, &net)?;
            let weights = match weights {
                Some(path) => Weights::read_vgt1(&net, BufReader::new(File::open(path)?))?,
                None => Weights::random(&net, seed),
            };
            let y = if oracle {
                run_graph_naive(&net, &x, &weights)?
            } else {
                run_graph(&net, &x, &weights)?
            };
            if let Some(path) = out {
                let mut w = BufWriter::new(File::create(path)?);
                y.write_vgt1(&mut w)?;
                w.flush()?;
            }
            println!("output {}", y.shape());
            println!("checksum fnv1a64 {:016x}", checksum(&y));
            Ok(())
        }
        Command::Export {
            net,
            weights_out,
            seed,
            out,
        } => {
            let net = net.load()?;
            if let Some(path) = weights_out {
                let mut w = BufWriter::new(File::create(path)?);
                Weights::random(&net, seed).write_vgt1(&net, &mut w)?;
                w.flush()?;
            }
            emit(out.as_deref(), &(net.to_json() + "\n"))
        }
        Command::Table {
            version,
            group,
            classes,
            out,
        } => {
            let opts = BuildOptions {
                num_classes: classes,
                ..Default::default()
            };
            let reports = version
                .scales()
                .iter()
                .map(|&s| {
                    let net = build(version, s, group, &opts)?;
                    summarize(&net, net.input)
                })
                .collect::<Result<Vec<_>>>()?;
            let text = match out.format {
                Format::Json => serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n",
                Format::Csv => {
                    let mut s = String::from("network,scale,g,params,madds,max_channels\n");
                    for r in &reports {
                        s += &format!(
                            "{},{},{},{},{},{}\n",
                            r.name, r.scale, r.channels_per_group, r.total_params, r.total_madds, r.max_stage_channels
                        );
                    }
                    s
                }
                Format::Text => render_table(&reports),
            };
            emit(out.out.as_deref(), &text)
        }
    }
}

fn init_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var("VARGNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("VARGNET_THREADS must be a non-negative integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
