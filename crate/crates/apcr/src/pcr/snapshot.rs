//! Plain-text snapshot of a [`PcrState`].
//!
//! ```text
//! # apcr-snapshot v1
//! # scope=per_action
//! # delta=0.05
//! # ... one `# key=value` line per BoundConfig field ...
//! action,outcome,z1,z2,...,zd
//! 0,1.25,0.3,-1.1,...
//! ```
//!
//! Rows appear in round order, so replaying them through `observe`
//! rebuilds the state exactly. Floats use Rust's shortest round-trip
//! formatting.

use std::io::{BufRead, BufReader, Read, Write};

use super::{PcrState, ProjectorScope};
use crate::concentration::BoundConfig;
use crate::error::{Error, Result};

const MAGIC: &str = "# apcr-snapshot v1";

pub fn write_snapshot<W: Write>(state: &PcrState, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "# scope={}", state.scope().name())?;
    for (k, v) in state.config().to_pairs() {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let d = state.dim();
    let mut header = vec!["action".to_string(), "outcome".to_string()];
    header.extend((1..=d).map(|j| format!("z{j}")));
    w.write_record(&header)?;

    let mut seen = vec![0usize; state.num_actions()];
    for &a in state.history() {
        let i = seen[a];
        seen[a] += 1;
        let buf = &state.actions[a];
        let mut rec = vec![a.to_string(), buf.outcomes[i].to_string()];
        rec.extend(buf.rows[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(input: R) -> Result<PcrState> {
    let mut lines = BufReader::new(input).lines();
    match lines.next() {
        Some(Ok(first)) if first.trim_end() == MAGIC => {}
        _ => return Err(Error::Malformed("missing snapshot header line".into())),
    }
    let mut cfg = BoundConfig::default();
    let mut scope = ProjectorScope::PerAction;
    let mut body = String::new();
    for line in lines {
        let line = line?;
        if let Some(meta) = line.strip_prefix("# ") {
            let (k, v) = meta
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("bad metadata line {line:?}")))?;
            if k == "scope" {
                scope = ProjectorScope::parse(v)?;
            } else if !cfg.set(k, v)? {
                return Err(Error::Schema(format!("unknown snapshot key {k:?}")));
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut state = PcrState::with_scope(cfg, scope)?;
    let d = state.dim();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    if rdr.headers()?.len() != d + 2 {
        return Err(Error::Schema(format!("expected {} columns", d + 2)));
    }
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Malformed(format!("cannot parse {s:?}")))
        };
        let action: usize = rec[0]
            .parse()
            .map_err(|_| Error::Malformed(format!("bad action {:?}", &rec[0])))?;
        let y = parse(&rec[1])?;
        let z = (2..d + 2).map(|j| parse(&rec[j])).collect::<Result<Vec<_>>>()?;
        state.observe(&z, action, y)?;
    }
    Ok(state)
}
