use std::io::Write;

use serde::{Deserialize, Serialize};

/// How much the engine records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    #[default]
    Off,
    /// Scheduling only: spawn, resume, done, lock traffic.
    Engine,
    /// Scheduling plus domain events (tags, messages, measurements).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pid: Option<u64>,
    pub kind: String,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

#[derive(Debug, Default, Clone)]
pub struct Trace {
    pub level: TraceLevel,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push_engine(&mut self, t: f64, pid: Option<u64>, kind: &str, detail: String) {
        if self.level != TraceLevel::Off {
            self.records.push(TraceRecord { t, pid, kind: kind.to_string(), detail });
        }
    }

    pub fn push_domain(&mut self, t: f64, pid: Option<u64>, kind: &str, detail: String) {
        if self.level == TraceLevel::Full {
            self.records.push(TraceRecord { t, pid, kind: kind.to_string(), detail });
        }
    }

    /// One JSON object per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }
}
