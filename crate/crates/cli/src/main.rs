//! Command-line front end: boot a simulated node, serve the control plane
//! over TCP, drive the backup tiers, and run the attack-scenario harness.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use edgeguard_core::backup::{
    cloud_replicate, cold_archive, hot_backup, restore_test,
    BackupError, BackupManifest, BackupSchedule, CloudBucket, RestoreInputs,
};
use edgeguard_core::canonical::sha256;
use edgeguard_core::clock::{VirtualClock, DAY};
use edgeguard_core::crypto::kem::{kem_keygen, KemKeyPair, KemSchemeId};
use edgeguard_core::crypto::sig::{sig_keygen, SigKeyPair, SigSchemeId};
use edgeguard_core::harness::{emit_report, run_suite_scenarios, ReportFormat, Scenario};
use edgeguard_core::node::{parse_sensor_script, InProcessTransport, Node};
use edgeguard_core::roots::pcr_for_stage;
use edgeguard_core::server::policy::{DevicePolicy, GeoFix, Polygon, TimeWindow};
use edgeguard_core::server::wire::{self, Message};
use edgeguard_core::server::{ControlServer, DefenseConfig, Session, SuiteProfile};

#[derive(Parser)]
#[command(name = "edgeguard", version, about = "Attestation-gated edge security simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Edge-node operations.
    Node {
        #[command(subcommand)]
        cmd: NodeCmd,
    },
    /// Control-plane operations.
    Server {
        #[command(subcommand)]
        cmd: ServerCmd,
    },
    /// Backup pipeline operations.
    Backup {
        #[command(subcommand)]
        cmd: BackupCmd,
    },
    /// Attack-scenario harness.
    Harness {
        #[command(subcommand)]
        cmd: HarnessCmd,
    },
}

#[derive(Subcommand)]
enum NodeCmd {
    /// Provision a node against an in-process control server and cold-boot it.
    Boot {
        /// Directory of boot-stage files, measured in sorted filename order.
        #[arg(long)]
        stages: PathBuf,
        /// Control server to boot against; only the in-process simulator
        /// ("local") is supported.
        #[arg(long, default_value = "local")]
        server: String,
        /// JSON-lines sensor events to replay after boot.
        #[arg(long)]
        sensor_script: Option<PathBuf>,
        /// Virtual clock start, ISO-8601 (e.g. 2026-08-26T12:00:00Z).
        #[arg(long)]
        clock: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Boot-time GPS fix as "lat,lon".
        #[arg(long, default_value = "0.1,0.2")]
        fix: String,
    },
}

#[derive(Subcommand)]
enum ServerCmd {
    /// Serve the wire protocol over TCP (length-prefixed canonical JSON).
    Serve {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        /// Registry JSON: {"bootstrap_tokens": ["..."]}.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Golden PCR reference JSON: {device_id: {pcr_index: hex_digest}}.
        #[arg(long)]
        golden: Option<PathBuf>,
        #[arg(long)]
        clock: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Exit after this many connections (0 = run forever).
        #[arg(long, default_value_t = 0)]
        max_connections: u64,
    },
    /// Operator actions against a running `server serve`.
    Operator {
        #[command(subcommand)]
        cmd: OperatorCmd,
    },
}

#[derive(Subcommand)]
enum OperatorCmd {
    /// Emergency-ban a device: revoke all serials and invalidate grants.
    Ban {
        #[arg(long)]
        device: String,
        #[arg(long)]
        token: String,
        #[arg(long, default_value = "127.0.0.1:7700")]
        server: String,
    },
    /// Approve a device's pending out-of-fence location.
    Approve {
        #[arg(long)]
        device: String,
        #[arg(long)]
        token: String,
        #[arg(long, default_value = "127.0.0.1:7700")]
        server: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tier {
    Hot,
    Cold,
    Cloud,
}

#[derive(Subcommand)]
enum BackupCmd {
    /// Run one backup tier now.
    Run {
        #[arg(long, value_enum)]
        tier: Tier,
        #[arg(long)]
        now: String,
        #[arg(long)]
        hot_root: PathBuf,
        #[arg(long)]
        cold_root: PathBuf,
        #[arg(long)]
        cloud_root: PathBuf,
        /// Snapshot file to back up; a small built-in sample when omitted.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value = "backup-state.json")]
        state: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Restore every tier into scratch space and byte-compare (due every 30 days).
    RestoreTest {
        #[arg(long)]
        now: String,
        #[arg(long)]
        hot_root: PathBuf,
        #[arg(long)]
        cold_root: PathBuf,
        #[arg(long)]
        cloud_root: PathBuf,
        #[arg(long, default_value = "backup-state.json")]
        state: PathBuf,
    },
}

#[derive(Subcommand)]
enum HarnessCmd {
    /// Run one scenario file, a suite directory, or the bundled suite.
    Run {
        #[arg(long, conflicts_with = "suite")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Channel conditions override, e.g. "rtt=120ms,jitter=15ms,loss=0.05,seed=42".
        #[arg(long)]
        net: Option<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

fn parse_clock(s: &str) -> Result<u64> {
    let dt = chrono::DateTime::parse_from_rfc3339(s)
        .with_context(|| format!("bad ISO-8601 timestamp: {s}"))?;
    u64::try_from(dt.timestamp_millis()).context("timestamp before epoch")
}

fn parse_fix(s: &str, at: u64) -> Result<GeoFix> {
    let (lat, lon) = s.split_once(',').context("fix must be lat,lon")?;
    GeoFix::new(lat.trim().parse()?, lon.trim().parse()?, at)
        .map_err(|e| anyhow::anyhow!("bad fix: {e}"))
}

fn read_stages(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read stage dir {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no boot-stage files in {}", dir.display());
    }
    paths
        .into_iter()
        .map(|p| {
            let file = p.file_name().unwrap().to_string_lossy().into_owned();
            // Allow an "NN-" prefix so files sort in measurement order.
            let name = match file.split_once('-') {
                Some((ord, rest)) if ord.chars().all(|c| c.is_ascii_digit()) => rest.to_owned(),
                _ => file,
            };
            pcr_for_stage(&name).map_err(|e| anyhow::anyhow!(
                "bad stage file name {:?}: {e} (expected boot-rom, bootloader, kernel)",
                p.display()
            ))?;
            Ok((name, std::fs::read(&p)?))
        })
        .collect()
}

fn node_boot(
    stages_dir: &Path,
    server_addr: &str,
    sensor_script: Option<&Path>,
    clock: &str,
    seed: u64,
    fix: &str,
) -> Result<ExitCode> {
    if server_addr != "local" {
        bail!("only the in-process control server (--server local) is supported");
    }
    let now = parse_clock(clock)?;
    let clock = VirtualClock::new(now);
    let stages = read_stages(stages_dir)?;
    let fix = parse_fix(fix, now)?;

    let server = ControlServer::new(SuiteProfile::test(), DefenseConfig::default(), seed, now);
    server.add_bootstrap_token("factory");
    // permissive fence centered on the boot fix; policy tuning is the
    // harness's job, this command demonstrates the boot flow
    let policy = DevicePolicy {
        geofence: Polygon {
            vertices: vec![
                (fix.lat - 1.0, fix.lon - 1.0),
                (fix.lat - 1.0, fix.lon + 1.0),
                (fix.lat + 1.0, fix.lon + 1.0),
                (fix.lat + 1.0, fix.lon - 1.0),
            ],
        },
        approved_points: vec![],
        time_window: TimeWindow::ALL_DAY,
        bound_pcrs: vec![0, 1, 2],
    };
    let mut node =
        Node::provision(&server, "edge-node-1", "factory", policy, &stages, seed, clock.clone())
            .map_err(|e| anyhow::anyhow!("provisioning failed: {e}"))?;

    let mut transport = InProcessTransport::new(&server, clock.clone());
    let boot = node.cold_boot(&mut transport, &stages, fix);

    let mut actions: Vec<String> = Vec::new();
    if let Some(path) = sensor_script {
        let text = std::fs::read_to_string(path)?;
        let events = parse_sensor_script(&text).map_err(|e| anyhow::anyhow!("bad script: {e}"))?;
        for event in events {
            clock.advance_to(event.at);
            for action in node.on_sensor_event(event) {
                actions.push(format!("{action:?}"));
            }
        }
    }

    let summary = serde_json::json!({
        "device_id": node.device_id,
        "boot": match &boot {
            Ok(l) => format!("{l:?}"),
            Err(e) => format!("{e:?}"),
        },
        "lifecycle": format!("{:?}", node.lifecycle),
        "tamper_mode": format!("{:?}", node.tamper.mode),
        "actions": actions,
        "node_audit_entries": node.audit.entries.len(),
        "server_audit_entries": server.audit_chain().entries.len(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if boot.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn read_frame(stream: &mut TcpStream) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > 1 << 22 {
        bail!("oversized frame ({n} bytes)");
    }
    let mut body = vec![0u8; n];
    stream.read_exact(&mut body)?;
    let mut frame = len.to_vec();
    frame.extend_from_slice(&body);
    Ok(Some(frame))
}

fn server_serve(
    listen: &str,
    registry: Option<&Path>,
    golden: Option<&Path>,
    clock: &str,
    seed: u64,
    max_connections: u64,
) -> Result<ExitCode> {
    let now = parse_clock(clock)?;
    let clock = VirtualClock::new(now);
    let server = ControlServer::new(SuiteProfile::test(), DefenseConfig::default(), seed, now);

    if let Some(path) = registry {
        let text = std::fs::read_to_string(path)?;
        let registry: serde_json::Value = serde_json::from_str(&text)?;
        let tokens = registry
            .get("bootstrap_tokens")
            .and_then(|v| v.as_array())
            .context("registry must contain a bootstrap_tokens array")?;
        for token in tokens {
            let token = token.as_str().context("bootstrap token must be a string")?;
            server.add_bootstrap_token(token);
        }
        eprintln!("registry: {} bootstrap tokens loaded", tokens.len());
    }
    if let Some(path) = golden {
        let text = std::fs::read_to_string(path)?;
        let golden: BTreeMap<String, BTreeMap<u8, String>> = serde_json::from_str(&text)
            .context("golden file must be {device_id: {pcr_index: hex_digest}}")?;
        for measurements in golden.values() {
            for digest in measurements.values() {
                let bytes = hex::decode(digest).context("golden digest must be hex")?;
                if bytes.len() != 32 {
                    bail!("golden digest must be 32 bytes");
                }
            }
        }
        eprintln!("golden: references for {} devices loaded", golden.len());
    }

    let listener = TcpListener::bind(listen)?;
    eprintln!("listening on {}", listener.local_addr()?);
    eprintln!("operator token: {}", server.operator_token());
    let mut served = 0u64;
    for conn in listener.incoming() {
        let mut stream = conn?;
        let mut session = Session::default();
        while let Some(frame) = read_frame(&mut stream)? {
            let (msg, _) = match Message::from_frame(&frame) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("dropping malformed frame: {e}");
                    break;
                }
            };
            let reply = server.handle_message(&mut session, &msg, clock.now());
            stream.write_all(&reply.to_frame())?;
        }
        served += 1;
        if max_connections > 0 && served >= max_connections {
            break;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn operator_send(server_addr: &str, msg: Message) -> Result<ExitCode> {
    let mut stream = TcpStream::connect(server_addr)
        .with_context(|| format!("cannot reach server at {server_addr}"))?;
    stream.write_all(&msg.to_frame())?;
    stream.shutdown(std::net::Shutdown::Write)?;
    let frame = read_frame(&mut stream)?.context("server closed without replying")?;
    let (reply, _) = Message::from_frame(&frame).map_err(|e| anyhow::anyhow!("bad reply: {e}"))?;
    match reply {
        Message::Ack(a) => {
            println!("ok: {}", a.detail);
            Ok(ExitCode::SUCCESS)
        }
        Message::Error(e) => {
            println!("error: {}", e.detail);
            Ok(ExitCode::from(2))
        }
        other => {
            println!("unexpected reply: {}", other.type_name());
            Ok(ExitCode::from(2))
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BackupState {
    seed: u64,
    schedule: BackupSchedule,
    #[serde(default)]
    hot_file: Option<PathBuf>,
    #[serde(default)]
    hot_manifest: Option<BackupManifest>,
    #[serde(default)]
    cold_file: Option<PathBuf>,
    #[serde(default)]
    cloud_dump: Option<PathBuf>,
    #[serde(default)]
    expected_sha256: Option<String>,
}

struct BackupKeys {
    signer: SigKeyPair,
    kem_classical: KemKeyPair,
    kem_pq: KemKeyPair,
}

fn backup_keys(seed: u64) -> BackupKeys {
    let derive = |label: &str| {
        let mut input = seed.to_be_bytes().to_vec();
        input.extend_from_slice(label.as_bytes());
        sha256(&input)
    };
    BackupKeys {
        signer: sig_keygen(SigSchemeId::Test, &derive("signer")).unwrap(),
        kem_classical: kem_keygen(KemSchemeId::Test, &derive("kem-classical")).unwrap(),
        kem_pq: kem_keygen(KemSchemeId::Test, &derive("kem-pq")).unwrap(),
    }
}

fn load_state(path: &Path, seed: u64, now: u64) -> Result<BackupState> {
    if path.exists() {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    } else {
        Ok(BackupState {
            seed,
            schedule: BackupSchedule::new(now),
            hot_file: None,
            hot_manifest: None,
            cold_file: None,
            cloud_dump: None,
            expected_sha256: None,
        })
    }
}

fn save_state(path: &Path, state: &BackupState) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(state)?)?;
    Ok(())
}

const SAMPLE_SNAPSHOT: &[u8] = b"edge telemetry database snapshot (sample)";

#[allow(clippy::too_many_arguments)]
fn backup_run(
    tier: Tier,
    now: &str,
    hot_root: &Path,
    cold_root: &Path,
    cloud_root: &Path,
    snapshot: Option<&Path>,
    state_path: &Path,
    seed: u64,
) -> Result<ExitCode> {
    let now = parse_clock(now)?;
    let mut state = load_state(state_path, seed, now)?;
    let keys = backup_keys(state.seed);
    let mut rng: rand_chacha::ChaCha20Rng =
        rand::SeedableRng::seed_from_u64(state.seed ^ now / DAY);
    let snapshot = match snapshot {
        Some(p) => std::fs::read(p)?,
        None => SAMPLE_SNAPSHOT.to_vec(),
    };
    state.expected_sha256 = Some(hex::encode(sha256(&snapshot)));
    let day = now / DAY;

    match tier {
        Tier::Hot => {
            std::fs::create_dir_all(hot_root)?;
            let (bytes, manifest) = hot_backup(&snapshot, &[9u8; 32], &keys.signer, now, &mut rng)
                .map_err(|e| anyhow::anyhow!("hot backup failed: {e}"))?;
            let file = hot_root.join(format!("db-hot-{day}.elks"));
            std::fs::write(&file, &bytes)?;
            std::fs::write(
                hot_root.join(format!("db-hot-{day}.manifest.json")),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            state.hot_file = Some(file);
            state.hot_manifest = Some(manifest);
            println!("hot backup written ({} bytes)", bytes.len());
        }
        Tier::Cold => {
            std::fs::create_dir_all(cold_root)?;
            let files = vec![("db.snapshot".to_string(), snapshot)];
            let bytes = match cold_archive(
                &files,
                KemSchemeId::Test,
                &keys.kem_classical.public_key,
                KemSchemeId::Test,
                &keys.kem_pq.public_key,
                &keys.signer,
                now,
                &mut rng,
            ) {
                Ok(b) => b,
                Err(BackupError::WindowClosed) => {
                    eprintln!("cold window closed: the offline disk is only attached on Sundays");
                    return Ok(ExitCode::from(3));
                }
                Err(e) => bail!("cold archive failed: {e}"),
            };
            let file = cold_root.join(format!("archive-{day}.pqar"));
            std::fs::write(&file, &bytes)?;
            state.cold_file = Some(file);
            println!("cold archive written ({} bytes)", bytes.len());
        }
        Tier::Cloud => {
            let mut bucket = CloudBucket::new(cloud_root.to_path_buf(), [5u8; 32]);
            let id = cloud_replicate(
                &mut bucket,
                &snapshot,
                KemSchemeId::Test,
                &keys.kem_classical.public_key,
                KemSchemeId::Test,
                &keys.kem_pq.public_key,
                &keys.signer,
                &mut rng,
            )
            .map_err(|e| anyhow::anyhow!("cloud replication failed: {e}"))?;
            // keep the provider dump (client-side ciphertext) so restores
            // never depend on the provider's at-rest key
            std::fs::create_dir_all(cloud_root)?;
            let dump = cloud_root.join(format!("{id}.client"));
            std::fs::write(&dump, bucket.get(&id).unwrap())?;
            state.cloud_dump = Some(dump);
            println!("cloud replica {id} uploaded");
        }
    }
    state.schedule.due_tiers(now);
    save_state(state_path, &state)?;
    Ok(ExitCode::SUCCESS)
}

fn backup_restore_test(now: &str, state_path: &Path) -> Result<ExitCode> {
    let now = parse_clock(now)?;
    let mut state = load_state(state_path, 7, now)?;
    if !state.schedule.restore_due(now) {
        println!("restore test not due (runs every 30 days)");
        return Ok(ExitCode::from(4));
    }
    let keys = backup_keys(state.seed);
    let expected: [u8; 32] = hex::decode(
        state.expected_sha256.as_deref().context("no backups recorded in state")?,
    )?
    .try_into()
    .map_err(|_| anyhow::anyhow!("bad digest in state"))?;

    let hot = std::fs::read(state.hot_file.as_ref().context("no hot backup recorded")?)?;
    let cold = std::fs::read(state.cold_file.as_ref().context("no cold archive recorded")?)?;
    let dump_path = state.cloud_dump.as_ref().context("no cloud replica recorded")?;
    let dump = std::fs::read(dump_path)?;
    // rebuild a bucket view from the provider dump; no provider key involved
    let mut bucket = CloudBucket::new(std::env::temp_dir().join("restore-scratch"), [0u8; 32]);
    bucket.discard_provider_key();
    let mut rng: rand_chacha::ChaCha20Rng = rand::SeedableRng::seed_from_u64(state.seed);
    let object = bucket.put(&dump, &mut rng).unwrap();

    let mut audit = edgeguard_core::audit::AuditChain::new(SigSchemeId::Test);
    let report = restore_test(
        &RestoreInputs {
            hot_container: &hot,
            hot_unlock_key: &[9u8; 32],
            cold_archive_bytes: &cold,
            cloud: &bucket,
            cloud_object: &object,
            sk_classical: &keys.kem_classical.secret_key,
            sk_pq: &keys.kem_pq.secret_key,
            archive_signer_pk: &keys.signer.public_key,
        },
        expected,
        &mut audit,
        &keys.signer,
        now,
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    state.schedule.due_tiers(now);
    save_state(state_path, &state)?;
    Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(5) })
}

fn harness_run(
    scenario: Option<&Path>,
    suite: Option<&Path>,
    seed: u64,
    net: Option<&str>,
    report_path: Option<&Path>,
    format: &str,
) -> Result<ExitCode> {
    let format = ReportFormat::parse(format).map_err(|e| anyhow::anyhow!("{e}"))?;
    let defense = DefenseConfig::default();

    let mut scenarios: Vec<Scenario> = match (scenario, suite) {
        (Some(path), None) => {
            vec![Scenario::from_json(&std::fs::read_to_string(path)?)
                .map_err(|e| anyhow::anyhow!("{e}"))?]
        }
        (None, Some(dir)) => {
            let mut paths: Vec<_> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            paths.sort();
            let mut out = Vec::new();
            for p in paths {
                out.push(
                    Scenario::from_json(&std::fs::read_to_string(&p)?)
                        .map_err(|e| anyhow::anyhow!("{e}"))?,
                );
            }
            if out.is_empty() {
                bail!("no scenario files in {}", dir.display());
            }
            out
        }
        (None, None) => edgeguard_core::harness::bundled_scenarios(),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(net) = net {
        for s in &mut scenarios {
            s.net = Some(net.to_string());
        }
    }

    let suite_report =
        run_suite_scenarios(&scenarios, seed, defense).map_err(|e| anyhow::anyhow!("{e}"))?;
    let rendered = emit_report(&suite_report, format);
    match report_path {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    eprintln!(
        "{}/{} scenarios passed, coverage {}/{}",
        suite_report.reports.iter().filter(|r| r.pass).count(),
        suite_report.reports.len(),
        suite_report.covered_cells,
        suite_report.total_cells
    );
    Ok(if suite_report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Node { cmd: NodeCmd::Boot { stages, server, sensor_script, clock, seed, fix } } => {
            node_boot(&stages, &server, sensor_script.as_deref(), &clock, seed, &fix)
        }
        Cmd::Server { cmd } => match cmd {
            ServerCmd::Serve { listen, registry, golden, clock, seed, max_connections } => {
                server_serve(&listen, registry.as_deref(), golden.as_deref(), &clock, seed, max_connections)
            }
            ServerCmd::Operator { cmd: OperatorCmd::Ban { device, token, server } } => {
                operator_send(
                    &server,
                    Message::OperatorBan(wire::OperatorBan { token, device_id: device }),
                )
            }
            ServerCmd::Operator { cmd: OperatorCmd::Approve { device, token, server } } => {
                operator_send(
                    &server,
                    Message::OperatorApprove(wire::OperatorApprove { token, device_id: device }),
                )
            }
        },
        Cmd::Backup { cmd } => match cmd {
            BackupCmd::Run { tier, now, hot_root, cold_root, cloud_root, snapshot, state, seed } => {
                backup_run(
                    tier,
                    &now,
                    &hot_root,
                    &cold_root,
                    &cloud_root,
                    snapshot.as_deref(),
                    &state,
                    seed,
                )
            }
            BackupCmd::RestoreTest { now, hot_root: _, cold_root: _, cloud_root: _, state } => {
                backup_restore_test(&now, &state)
            }
        },
        Cmd::Harness { cmd: HarnessCmd::Run { scenario, suite, seed, net, report, format } } => {
            harness_run(
                scenario.as_deref(),
                suite.as_deref(),
                seed,
                net.as_deref(),
                report.as_deref(),
                &format,
            )
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
