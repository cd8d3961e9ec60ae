use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use farmledger::exchange::report_csv;
use farmledger::sim::run_scenario;
use farmledger::SimConfig;
use farmledger_http::{gateway, pinsvc, rpc, serve, serve_on, spawn_clock, Host, HostConfig};
use reqwest::blocking::{Client, Response};
use serde_json::{json, Value};

mod config;
mod svg;

use config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "farmledger",
    version,
    about = "Content-addressed farm data on a simulated peer-to-peer network"
)]
struct Cli {
    /// Config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RPC API base URL; defaults to the config's listen address.
    #[arg(long, global = true)]
    api: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Start the node with its RPC API, gateway and pinning service.
    Daemon(DaemonArgs),
    /// Add a file and print its cid.
    Add { file: PathBuf },
    /// Write the content of a cid to stdout.
    Cat { cid: String },
    #[command(subcommand)]
    Pin(PinCommand),
    /// Print this node's peer id and multiaddress.
    Id,
    #[command(subcommand)]
    Farm(FarmCommand),
    #[command(subcommand)]
    Pinsvc(PinsvcCommand),
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Args, Debug)]
struct DaemonArgs {
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long)]
    gateway_port: Option<u16>,
    #[arg(long)]
    pinsvc_port: Option<u16>,
    #[arg(long)]
    visualizer_base: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum PinCommand {
    /// Pin on the local node, fetching first if needed.
    Add { cid: String },
    /// Release a local pin.
    Rm { cid: String },
    /// Ask a pinning service to pin.
    Remote {
        cid: String,
        #[arg(long)]
        jwt: String,
        /// Pinning service base URL.
        #[arg(long)]
        service: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum FarmCommand {
    /// Upload a CSV dataset and print the receipt.
    Upload {
        csv: PathBuf,
        #[arg(long)]
        visualizer_base: Option<String>,
        /// Also write the QR code PNG here.
        #[arg(long)]
        qr_out: Option<PathBuf>,
    },
    /// Print chart data for a stored dataset.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    cid: String,
    #[arg(long, default_value = "timeseries", value_parser = ["timeseries", "scatter"])]
    chart: String,
    #[arg(long, value_parser = ["day", "month", "year"])]
    bucket: Option<String>,
    #[arg(long, value_parser = ["water_l", "electricity_kwh", "fertilizer_kg"])]
    resource: Option<String>,
    #[arg(long, value_parser = ["farm_type", "product_type", "location"])]
    group_by: Option<String>,
    #[arg(long)]
    product_type: Option<String>,
    #[arg(long)]
    location: Option<String>,
    #[arg(long, value_parser = ["conventional", "vertical"])]
    farm_type: Option<String>,
    #[arg(long)]
    date_from: Option<String>,
    #[arg(long)]
    date_to: Option<String>,
    /// Render the chart to an SVG file.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum PinsvcCommand {
    /// Run a standalone pinning service with its own network.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Issue credentials from a local pinning service.
    Keygen {
        #[arg(long)]
        service: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum SimCommand {
    /// Run the upload-and-retrieve scenario and print a JSON summary.
    Run {
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        nodes: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Simulated hours to run after the retrieval.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long)]
        bandwidth_csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let api = cli.api.clone().unwrap_or_else(|| cfg.api_url());
    let api = api.trim_end_matches('/');
    match cli.command {
        Command::Daemon(args) => daemon(cfg, args),
        Command::Add { file } => {
            let data = read_input(&file)?;
            let v = json_of(
                client()?
                    .post(format!("{api}/api/v0/add"))
                    .body(data)
                    .send(),
            )?;
            println!(
                "{}",
                v["cid"]
                    .as_str()
                    .ok_or_else(|| anyhow!("malformed reply: {v}"))?
            );
            Ok(())
        }
        Command::Cat { cid } => {
            let resp = checked(
                client()?
                    .get(format!("{api}/api/v0/cat"))
                    .query(&[("arg", &cid)])
                    .send(),
            )?;
            std::io::stdout().write_all(&resp.bytes()?)?;
            Ok(())
        }
        Command::Pin(PinCommand::Add { cid }) => print_json(&json_of(
            client()?
                .post(format!("{api}/api/v0/pin/add"))
                .query(&[("arg", &cid)])
                .send(),
        )?),
        Command::Pin(PinCommand::Rm { cid }) => print_json(&json_of(
            client()?
                .post(format!("{api}/api/v0/pin/rm"))
                .query(&[("arg", &cid)])
                .send(),
        )?),
        Command::Pin(PinCommand::Remote { cid, jwt, service }) => {
            let base = service.unwrap_or_else(|| cfg.pinsvc_url());
            let req = client()?
                .post(format!("{}/pinning/pinByHash", base.trim_end_matches('/')))
                .bearer_auth(jwt)
                .json(&json!({ "hashToPin": cid }));
            print_json(&json_of(req.send())?)
        }
        Command::Id => print_json(&json_of(client()?.get(format!("{api}/api/v0/id")).send())?),
        Command::Farm(FarmCommand::Upload {
            csv,
            visualizer_base,
            qr_out,
        }) => {
            let body = read_input(&csv)?;
            let base = visualizer_base.unwrap_or(cfg.visualizer_base);
            let v = json_of(
                client()?
                    .post(format!("{api}/api/v0/farm/upload"))
                    .query(&[("visualizer_base", &base)])
                    .body(body)
                    .send(),
            )?;
            if let Some(path) = qr_out {
                use base64::Engine;
                let png = base64::engine::general_purpose::STANDARD
                    .decode(v["qr_png"].as_str().unwrap_or_default())
                    .context("decoding qr_png")?;
                std::fs::write(&path, png)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&v)
        }
        Command::Farm(FarmCommand::Analyze(a)) => analyze(api, a),
        Command::Pinsvc(PinsvcCommand::Serve { port, nodes, seed }) => {
            let mut cfg = cfg;
            cfg.pinsvc_port = port.unwrap_or(cfg.pinsvc_port);
            cfg.nodes = nodes.unwrap_or(cfg.nodes);
            cfg.seed = seed.unwrap_or(cfg.seed);
            serve_pinsvc(cfg)
        }
        Command::Pinsvc(PinsvcCommand::Keygen { service }) => {
            let base = service.unwrap_or_else(|| cfg.pinsvc_url());
            print_json(&json_of(
                client()?
                    .post(format!("{}/keys", base.trim_end_matches('/')))
                    .send(),
            )?)
        }
        Command::Sim(SimCommand::Run {
            nodes,
            seed,
            duration,
            bandwidth_csv,
        }) => {
            if !(duration.is_finite() && duration >= 0.0) {
                bail!("duration must be a non-negative number of hours");
            }
            let report = run_scenario(
                SimConfig::new(nodes as usize, seed),
                Duration::from_secs_f64(duration * 3600.0),
            )?;
            if let Some(path) = bandwidth_csv {
                std::fs::write(&path, report_csv(&report.bandwidth))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let s = &report.summary;
            println!(
                "{}",
                json!({
                    "trace_hash": s.trace_hash,
                    "events": s.events,
                    "bytes_total": s.bytes_total,
                    "providers_final": s.providers_final,
                })
            );
            Ok(())
        }
    }
}

fn client() -> anyhow::Result<Client> {
    Ok(Client::builder()
        .timeout(Duration::from_secs(120))
        .build()?)
}

/// Reads a file, or stdin for "-".
fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf)?;
        return Ok(buf);
    }
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn checked(resp: reqwest::Result<Response>) -> anyhow::Result<Response> {
    let resp = resp.context("contacting the daemon")?;
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    let detail = serde_json::from_str::<Value>(&body).unwrap_or(Value::String(body));
    Err(anyhow!("{} {}", status.as_u16(), detail))
}

fn json_of(resp: reqwest::Result<Response>) -> anyhow::Result<Value> {
    Ok(checked(resp)?.json()?)
}

fn print_json(v: &Value) -> anyhow::Result<()> {
    println!("{v}");
    Ok(())
}

fn analyze(api: &str, a: AnalyzeArgs) -> anyhow::Result<()> {
    let mut query: Vec<(&str, String)> = vec![("cid", a.cid), ("chart", a.chart)];
    for (k, v) in [
        ("bucket", a.bucket),
        ("resource", a.resource),
        ("group_by", a.group_by),
        ("product_type", a.product_type),
        ("location", a.location),
        ("farm_type", a.farm_type),
        ("date_from", a.date_from),
        ("date_to", a.date_to),
    ] {
        if let Some(v) = v {
            query.push((k, v));
        }
    }
    let v = json_of(
        client()?
            .get(format!("{api}/api/v0/farm/analyze"))
            .query(&query)
            .send(),
    )?;
    if let Some(path) = a.svg {
        std::fs::write(&path, svg::render(&v))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&v)
}

fn host_config(cfg: &Config) -> HostConfig {
    let mut sim = SimConfig::new(cfg.nodes, cfg.seed);
    sim.gc_ttl = Duration::from_secs_f64(cfg.gc_ttl_hours * 3600.0);
    let ip = match cfg.listen.ip() {
        std::net::IpAddr::V4(ip) if !ip.is_unspecified() => ip,
        _ => Ipv4Addr::LOCALHOST,
    };
    let advertise = Some((ip, cfg.listen.port()));
    HostConfig {
        sim,
        advertise,
        visualizer_base: cfg.visualizer_base.clone(),
        ..HostConfig::default()
    }
}

fn daemon(mut cfg: Config, args: DaemonArgs) -> anyhow::Result<()> {
    cfg.listen = args.listen.unwrap_or(cfg.listen);
    cfg.gateway_port = args.gateway_port.unwrap_or(cfg.gateway_port);
    cfg.pinsvc_port = args.pinsvc_port.unwrap_or(cfg.pinsvc_port);
    cfg.visualizer_base = args.visualizer_base.unwrap_or(cfg.visualizer_base);
    cfg.nodes = args.nodes.unwrap_or(cfg.nodes).max(2);
    cfg.seed = args.seed.unwrap_or(cfg.seed);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let ip = cfg.listen.ip();
        let listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        let mut hc = host_config(&cfg);
        if let Some((adv, _)) = hc.advertise {
            hc.advertise = Some((adv, listener.local_addr()?.port()));
        }
        let host = Host::new(hc);
        let (api_addr, _a) = serve_on(rpc::router(host.clone()), listener)?;
        let (gw_addr, _g) = serve(
            gateway::router(host.clone()),
            SocketAddr::new(ip, cfg.gateway_port),
        )
        .await?;
        let (pin_addr, _p) = serve(
            pinsvc::router(host.clone()),
            SocketAddr::new(ip, cfg.pinsvc_port),
        )
        .await?;
        let _clock = spawn_clock(host.clone(), Duration::from_millis(100));
        let addr = host.advertised_addr();
        println!(
            "{}",
            json!({
                "peer_id": addr.peer.to_string(),
                "multiaddr": addr.to_string(),
                "api": format!("http://{api_addr}"),
                "gateway": format!("http://{gw_addr}"),
                "pinsvc": format!("http://{pin_addr}"),
            })
        );
        std::io::stdout().flush()?;
        tokio::signal::ctrl_c().await?;
        Ok(())
    })
}

fn serve_pinsvc(cfg: Config) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let host = Host::new(host_config(&cfg));
        let addr = SocketAddr::new(cfg.listen.ip(), cfg.pinsvc_port);
        let (bound, _s) = serve(pinsvc::router(host.clone()), addr).await?;
        let _clock = spawn_clock(host, Duration::from_millis(100));
        println!("{}", json!({ "pinsvc": format!("http://{bound}") }));
        std::io::stdout().flush()?;
        tokio::signal::ctrl_c().await?;
        Ok(())
    })
}
