use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use learnprof_core::book::BookManifest;
use learnprof_core::telemetry::StoredEvent;
use learnprof_telemetry::server::ExportQuery;
use learnprof_telemetry::{AppState, EventStore, KnownContent};

use crate::output::{write_file, Usage};
use crate::Global;

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Append-only event log [default: <outputDir>/events.log]
    #[arg(long)]
    store: Option<PathBuf>,
    /// Manifest used to flag unknown quizzes and questions [default: <outputDir>/manifest.json when present]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn serve(g: &Global, args: &ServeArgs) -> Result<()> {
    let store_path = args
        .store
        .clone()
        .unwrap_or_else(|| g.config.output_dir.join("events.log"));
    if let Some(parent) = store_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let store = EventStore::open(&store_path)
        .with_context(|| format!("opening {}", store_path.display()))?;
    let manifest_path = match &args.manifest {
        Some(p) => Some(p.clone()),
        None => Some(g.config.manifest_path()).filter(|p| p.exists()),
    };
    let known = match manifest_path {
        Some(p) => Some(KnownContent::from_manifest(
            &BookManifest::load(&p).with_context(|| format!("reading {}", p.display()))?,
        )),
        None => None,
    };
    let token = g.config.token();
    if token.is_none() {
        tracing::warn!(var = %g.config.export_token, "no export token set; export is disabled");
    }
    let state = AppState::new(store, token, known);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        println!(
            "listening on http://{} (store {})",
            listener.local_addr()?,
            store_path.display()
        );
        std::io::stdout().flush()?;
        learnprof_telemetry::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Server base URL [default: telemetryUrl from the config]
    #[arg(long, conflicts_with = "store")]
    url: Option<String>,
    /// Read a server's event log directly instead of calling the server
    #[arg(long)]
    store: Option<PathBuf>,
    /// Event kind: answers or bugReport
    #[arg(long)]
    kind: Option<String>,
    /// Inclusive lower bound on receive time (epoch ms or RFC 3339)
    #[arg(long)]
    from: Option<String>,
    /// Exclusive upper bound on receive time (epoch ms or RFC 3339)
    #[arg(long)]
    to: Option<String>,
    /// Output file, or - for stdout [default: exportFile from the config]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn export_from_store(path: &PathBuf, query: &ExportQuery) -> Result<String> {
    let filter = query.to_filter().map_err(Usage)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = String::new();
    let mut lines = text.split_inclusive('\n').peekable();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let event: StoredEvent = match serde_json::from_str(line) {
            Ok(e) => e,
            // A line still being written by a running server.
            Err(_) if lines.peek().is_none() && !line.ends_with('\n') => break,
            Err(e) => bail!("{}: corrupt event log: {e}", path.display()),
        };
        if filter.admits(&event) {
            out.push_str(&event.to_line());
            out.push('\n');
        }
    }
    Ok(out)
}

fn export_from_server(g: &Global, url: &str, query: &ExportQuery) -> Result<String> {
    let token = g.config.token().with_context(|| {
        format!("set {} to the server's export token", g.config.export_token)
    })?;
    let mut params = Vec::new();
    for (k, v) in [("kind", &query.kind), ("from", &query.from), ("to", &query.to)] {
        if let Some(v) = v {
            params.push((k, v.as_str()));
        }
    }
    let endpoint = format!("{}/api/export", url.trim_end_matches('/'));
    let resp = reqwest::blocking::Client::new()
        .get(&endpoint)
        .query(&params)
        .bearer_auth(token)
        .send()
        .with_context(|| format!("requesting {endpoint}"))?;
    let status = resp.status();
    let body = resp.text()?;
    if !status.is_success() {
        bail!("{endpoint}: {status}: {}", body.trim());
    }
    Ok(body)
}

pub fn export(g: &Global, args: &ExportArgs) -> Result<()> {
    let query = ExportQuery {
        kind: args.kind.clone(),
        from: args.from.clone(),
        to: args.to.clone(),
    };
    let body = match &args.store {
        Some(path) => export_from_store(path, &query)?,
        None => {
            let url = args.url.as_deref().unwrap_or(&g.config.telemetry_url);
            export_from_server(g, url, &query)?
        }
    };
    let events = body.lines().filter(|l| !l.trim().is_empty()).count();
    let out = args.out.clone().unwrap_or_else(|| g.config.export_file.clone());
    if out.as_os_str() == "-" {
        print!("{body}");
    } else {
        write_file(&out, &body)?;
        eprintln!("wrote {events} events to {}", out.display());
    }
    Ok(())
}
