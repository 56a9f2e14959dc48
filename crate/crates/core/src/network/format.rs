//! Versioned network file format (`"format": 1`).
//!
//! ```json
//! {
//!   "format": 1,
//!   "notes": "free-form documentation",
//!   "servers": [{"id": 1, "rate_bps": 1e7, "latency_s": 1e-3,
//!                "shaper": {"burst_bits": 0, "rate_bps": 1e7}}],
//!   "flows": [{"name": "foi", "burst_bits": 1000, "rate_bps": 1e6,
//!              "path": [1], "shaper": {"burst_bits": 0, "rate_bps": 1e9}}],
//!   "foi": "foi"
//! }
//! ```
//!
//! `notes` fields (top level and per object) are documentation and ignored.
//! A flow `shaper` declares source shaping for that flow. Unknown fields are
//! dropped with a warning naming them.

use serde_json::Value;
use thiserror::Error;

use crate::curves::{RateLatency, TokenBucket};
use crate::network::{Flow, NetError, Network, Server};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {0} (expected 1)")]
    Version(i64),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn shape(msg: impl Into<String>) -> FormatError {
    FormatError::Shape(msg.into())
}

struct Ctx<'a> {
    warnings: &'a mut Vec<String>,
}

impl Ctx<'_> {
    fn object<'v>(
        &mut self,
        v: &'v Value,
        what: &str,
        known: &[&str],
    ) -> Result<&'v serde_json::Map<String, Value>, FormatError> {
        let obj = v.as_object().ok_or_else(|| shape(format!("{what} must be an object")))?;
        for key in obj.keys() {
            if !known.contains(&key.as_str()) && key != "notes" {
                self.warnings.push(format!("{what}: unknown field `{key}` ignored"));
            }
        }
        Ok(obj)
    }

    fn num(&self, obj: &serde_json::Map<String, Value>, what: &str, key: &str) -> Result<f64, FormatError> {
        obj.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| shape(format!("{what}: missing or non-numeric `{key}`")))
    }

    fn shaper(
        &mut self,
        obj: &serde_json::Map<String, Value>,
        what: &str,
    ) -> Result<Option<TokenBucket>, FormatError> {
        match obj.get("shaper") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => {
                let s = self.object(v, &format!("{what}.shaper"), &["burst_bits", "rate_bps"])?;
                Ok(Some(TokenBucket::new(
                    self.num(s, what, "burst_bits")?,
                    self.num(s, what, "rate_bps")?,
                )))
            }
        }
    }
}

/// Parse a network file; returns the network plus warnings for ignored
/// unknown fields.
pub fn parse(text: &str) -> Result<(Network, Vec<String>), FormatError> {
    let root: Value = serde_json::from_str(text)?;
    let mut warnings = Vec::new();
    let mut ctx = Ctx { warnings: &mut warnings };
    let top = ctx.object(&root, "network", &["format", "servers", "flows", "foi"])?;
    let version = top.get("format").and_then(Value::as_i64).unwrap_or(-1);
    if version != 1 {
        return Err(FormatError::Version(version));
    }
    let servers_v = top
        .get("servers")
        .and_then(Value::as_array)
        .ok_or_else(|| shape("missing `servers` list"))?;
    let mut servers = Vec::new();
    for v in servers_v {
        let obj = ctx.object(v, "server", &["id", "rate_bps", "latency_s", "shaper"])?;
        let id = obj
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| shape("server: missing or invalid `id`"))?;
        let service =
            RateLatency::new(ctx.num(obj, "server", "rate_bps")?, ctx.num(obj, "server", "latency_s")?);
        let shaper = ctx.shaper(obj, "server")?;
        servers.push(Server::new(id as u32, service, shaper));
    }
    let flows_v =
        top.get("flows").and_then(Value::as_array).ok_or_else(|| shape("missing `flows` list"))?;
    let mut flows = Vec::new();
    for v in flows_v {
        let obj = ctx.object(v, "flow", &["name", "burst_bits", "rate_bps", "path", "shaper"])?;
        let name = obj
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| shape("flow: missing `name`"))?;
        let arrival =
            TokenBucket::new(ctx.num(obj, "flow", "burst_bits")?, ctx.num(obj, "flow", "rate_bps")?);
        let path = obj
            .get("path")
            .and_then(Value::as_array)
            .ok_or_else(|| shape(format!("flow {name}: missing `path`")))?
            .iter()
            .map(|x| {
                x.as_u64().map(|v| v as u32).ok_or_else(|| shape(format!("flow {name}: bad path entry")))
            })
            .collect::<Result<Vec<u32>, _>>()?;
        let mut flow = Flow::new(name, arrival, path);
        flow.source_shaper = ctx.shaper(obj, "flow")?;
        flows.push(flow);
    }
    let foi = top.get("foi").and_then(Value::as_str).map(str::to_owned);
    let mut net = Network::new(servers, flows)?;
    if let Some(foi) = foi {
        net.set_foi(&foi)?;
    }
    Ok((net, warnings))
}

/// Serialize a network in the same format (round-trips through `parse`).
pub fn serialize(net: &Network) -> String {
    let servers: Vec<Value> = net
        .servers()
        .iter()
        .map(|s| {
            let mut o = serde_json::Map::new();
            o.insert("id".into(), s.id.into());
            o.insert("rate_bps".into(), s.service.rate.into());
            o.insert("latency_s".into(), s.service.latency.into());
            if let Some(sh) = s.shaper {
                o.insert(
                    "shaper".into(),
                    serde_json::json!({"burst_bits": sh.burst, "rate_bps": sh.rate}),
                );
            }
            Value::Object(o)
        })
        .collect();
    let flows: Vec<Value> = net
        .flows()
        .iter()
        .map(|f| {
            let mut o = serde_json::Map::new();
            o.insert("name".into(), f.name.clone().into());
            o.insert("burst_bits".into(), f.arrival.burst.into());
            o.insert("rate_bps".into(), f.arrival.rate.into());
            o.insert("path".into(), f.path.clone().into());
            if let Some(sh) = f.source_shaper {
                o.insert(
                    "shaper".into(),
                    serde_json::json!({"burst_bits": sh.burst, "rate_bps": sh.rate}),
                );
            }
            Value::Object(o)
        })
        .collect();
    let mut root = serde_json::Map::new();
    root.insert("format".into(), 1.into());
    root.insert("servers".into(), servers.into());
    root.insert("flows".into(), flows.into());
    if let Some(foi) = net.foi() {
        root.insert("foi".into(), foi.into());
    }
    serde_json::to_string_pretty(&Value::Object(root)).unwrap()
}
