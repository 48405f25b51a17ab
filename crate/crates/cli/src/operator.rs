use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use attestrep::bytes::PublicKeyBytes;
use attestrep::portal::{audit_check_file, AuditStatus, Portal, PortalConfig, AUDIT_FILE};
use serde_json::Value;

use crate::author::{clock_for, provider_for};
use crate::output::{print_json, print_pairs};
use crate::{CliError, CliResult, ExecArgs, ProviderArgs};

pub fn serve(
    store: &Path,
    listen: SocketAddr,
    extra_roots: Vec<PublicKeyBytes>,
    duplicate_window: u64,
    exec: &ExecArgs,
    provider: &ProviderArgs,
) -> CliResult {
    let clock = clock_for(exec.now);
    let provider = Arc::new(provider_for(provider, clock.clone())?);
    let mut roots = vec![provider.root_public_key()];
    roots.extend(extra_roots.into_iter().filter(|r| *r != provider.root_public_key()));

    let mut config = PortalConfig::new(store, roots);
    config.duplicate_window = duplicate_window;
    config.limits.max_seconds = exec.max_seconds;
    config.limits.max_output_bytes = exec.max_output_bytes;
    config.nonce_seed = exec.nonce_seed;
    let portal = Arc::new(Portal::open(config, provider.clone(), clock)?);

    eprintln!("provider root {}", provider.root_public_key());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(attestrep::portal::http::serve(portal, listen))?;
    Ok(ExitCode::SUCCESS)
}

pub fn audit_check(store: &Path, json: bool) -> CliResult {
    let status = audit_check_file(&store.join(AUDIT_FILE))?;
    if json {
        print_json(&status);
    } else {
        match status {
            AuditStatus::Ok => println!("ok"),
            AuditStatus::BrokenAt(seq) => println!("broken at {seq}"),
        }
    }
    Ok(match status {
        AuditStatus::Ok => ExitCode::SUCCESS,
        AuditStatus::BrokenAt(_) => ExitCode::from(1),
    })
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn read_json(mut resp: ureq::http::Response<ureq::Body>) -> Result<(u16, Value), CliError> {
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_string()?;
    let value = serde_json::from_str(&body).unwrap_or(Value::String(body));
    Ok((status, value))
}

fn failure(status: u16, body: &Value) -> CliError {
    let detail = body["detail"].as_str().map(str::to_owned).unwrap_or_else(|| body.to_string());
    CliError::Failure(format!("portal answered {status}: {detail}"))
}

pub fn submit(archive: &Path, portal: &str, author: &str, process: bool, json: bool) -> CliResult {
    let bytes = fs::read(archive)?;
    let base = portal.trim_end_matches('/');
    let agent = agent();
    let resp = agent
        .post(format!("{base}/v1/submissions"))
        .header(attestrep::portal::http::AUTHOR_HEADER, author)
        .header("content-type", "application/x-tar")
        .send(&bytes[..])?;
    let (status, body) = read_json(resp)?;
    if status != 201 {
        return Err(failure(status, &body));
    }
    let id = body["submission_id"].as_str().unwrap_or_default().to_string();
    let mut result = body;
    if process {
        let resp = agent
            .post(format!("{base}/v1/submissions/{id}/process"))
            .send_empty()?;
        let (status, body) = read_json(resp)?;
        if status != 200 {
            return Err(failure(status, &body));
        }
        result = body;
    }
    if json {
        print_json(&result);
    } else {
        let state = match &result["state"] {
            Value::Object(s) => match s.get("reason") {
                Some(r) => format!("{}({})", s["kind"].as_str().unwrap_or("?"), r.as_str().unwrap_or("?")),
                None => s["kind"].as_str().unwrap_or("?").to_string(),
            },
            other => other.to_string(),
        };
        let mut rows = vec![("submission_id", id), ("state", state)];
        if let Some(token) = result["token"].as_str() {
            rows.push(("token", token.to_string()));
        }
        print_pairs(&rows);
    }
    let failed = result["state"]["kind"] == "Failed";
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
