//! Append-only metrics stream, written as CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "time,kind,node_a,node_b,uuid,seq,fidelity,latency,detail";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsRecord {
    pub time: f64,
    pub kind: String,
    pub node_a: Option<usize>,
    pub node_b: Option<usize>,
    pub uuid: Option<u64>,
    pub seq: Option<u64>,
    pub fidelity: Option<f64>,
    pub latency: Option<f64>,
    pub detail: String,
}

impl MetricsRecord {
    pub fn new(time: f64, kind: &str) -> Self {
        MetricsRecord { time, kind: kind.to_string(), ..Default::default() }
    }

    pub fn nodes(mut self, a: usize, b: usize) -> Self {
        self.node_a = Some(a);
        self.node_b = Some(b);
        self
    }

    pub fn node(mut self, a: usize) -> Self {
        self.node_a = Some(a);
        self
    }

    pub fn flow(mut self, uuid: u64, seq: u64) -> Self {
        self.uuid = Some(uuid);
        self.seq = Some(seq);
        self
    }

    pub fn fidelity(mut self, f: f64) -> Self {
        self.fidelity = Some(f);
        self
    }

    pub fn latency(mut self, l: f64) -> Self {
        self.latency = Some(l);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(CSV_HEADER.split(','))
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in records {
        wtr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("in-memory csv");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row() {
        let r = MetricsRecord::new(1.5, "swap").nodes(1, 2).fidelity(0.5);
        let s = to_csv(&[r]);
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "1.5,swap,1,2,,,0.5,,");
    }
}
