//! Structured event log, one JSON object per line.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Arrival {
        t_ms: f64,
        policy: String,
        patch: u64,
        frame: u64,
        w: u32,
        h: u32,
        deadline_ms: f64,
    },
    Reject {
        t_ms: f64,
        policy: String,
        patch: u64,
        reason: String,
    },
    Repack {
        t_ms: f64,
        policy: String,
        queue_len: usize,
        canvases: usize,
    },
    TimerSet {
        t_ms: f64,
        policy: String,
        fire_ms: f64,
        epoch: u64,
    },
    Invoke {
        t_ms: f64,
        policy: String,
        invocation: u64,
        trigger: String,
        k: u32,
        patches: Vec<u64>,
        estimated_slack_ms: Option<f64>,
        min_deadline_ms: Option<f64>,
        efficiencies: Vec<f64>,
    },
    Complete {
        t_ms: f64,
        policy: String,
        invocation: u64,
        instance: usize,
        dispatch_ms: f64,
        t_f_ms: f64,
    },
}

pub fn write_jsonl<W: Write>(records: &[LogRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<LogRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_lines() {
        let recs = vec![
            LogRecord::TimerSet { t_ms: 1.5, policy: "slo-aware".into(), fire_ms: 370.0, epoch: 1 },
            LogRecord::Repack { t_ms: 1.5, policy: "slo-aware".into(), queue_len: 1, canvases: 1 },
        ];
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"kind":"timer_set","t_ms":1.5,"policy":"slo-aware","fire_ms":370.0,"epoch":1}"#));
        assert_eq!(read_jsonl(&text).unwrap(), recs);
    }
}
