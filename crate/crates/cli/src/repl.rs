//! Terminal session: type pinyin, pick a candidate by number, repeat.

use std::io::{BufRead, Write};

use anyhow::Result;
use p2c_core::service::{Conversion, Service, ServiceError};

const HELP: &str = "pinyin      convert with the current context
N           commit candidate N of the last list
:commit T   commit text T
:attn P     gated attention of pinyin P over the context
:dump       show the session
:quit       leave";

pub fn run(svc: &Service, beam: usize, k: usize, input: impl BufRead, mut out: impl Write) -> Result<()> {
    let session = svc.open();
    let mut last: Option<(String, Conversion)> = None;
    writeln!(out, "{HELP}")?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let result: Result<(), ServiceError> = (|| {
            if line == ":quit" {
                return Ok(());
            }
            if let Ok(n) = line.parse::<usize>() {
                let Some((pinyin, conv)) = &last else {
                    writeln!(out, "nothing to choose from").ok();
                    return Ok(());
                };
                let Some(c) = conv.candidates.iter().find(|c| c.rank == n) else {
                    writeln!(out, "no candidate {n}").ok();
                    return Ok(());
                };
                svc.commit(&session.id, &c.text, Some(pinyin))?;
                writeln!(out, "committed {}", c.text).ok();
                last = None;
            } else if let Some(text) = line.strip_prefix(":commit ") {
                let pinyin = last.as_ref().map(|(p, _)| p.as_str());
                svc.commit(&session.id, text.trim(), pinyin)?;
                writeln!(out, "committed {}", text.trim()).ok();
                last = None;
            } else if let Some(p) = line.strip_prefix(":attn ") {
                let t = svc.attention(&session.id, p)?;
                writeln!(out, "\t{}", t.context.join("\t")).ok();
                for (i, row) in t.hops[0].iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|w| format!("{w:.3}")).collect();
                    writeln!(out, "{}\t{}", t.pinyin[i], cells.join("\t")).ok();
                }
            } else if line == ":dump" {
                let s = svc.dump(&session.id)?;
                writeln!(out, "{}", serde_json::to_string_pretty(&s).unwrap()).ok();
            } else if line.starts_with(':') {
                writeln!(out, "{HELP}").ok();
            } else {
                let conv = svc.convert(&session.id, line, beam, k)?;
                for c in &conv.candidates {
                    writeln!(out, "{}\t{:.4}\t{}", c.rank, c.logprob, c.text).ok();
                }
                last = Some((line.to_string(), conv));
            }
            Ok(())
        })();
        if let Err(e) = result {
            writeln!(out, "error ({}): {e}", e.code())?;
        }
        if line == ":quit" {
            break;
        }
        out.flush()?;
    }
    Ok(())
}
