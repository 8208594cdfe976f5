//! Per-slot records and the CSV trace.

use std::fmt::Write;

pub const CSV_HEADER: &str = "slot,session_id,throughput_pps,node_id,tx_power_mw,link_id,lambda,utility";

/// Fraction of a run, counted from the end, treated as steady state.
pub const STEADY_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    /// Per session: EWMA end-to-end throughput and source rate (packets/s).
    pub throughput: Vec<f64>,
    pub source_rate: Vec<f64>,
    /// Per transmitting node: total radiated power over its links (mW).
    pub node_power_mw: Vec<f64>,
    /// Per link.
    pub gain_db: Vec<f64>,
    pub capacity: Vec<f64>,
    /// Aggregate arrival rate into the link (packets/s).
    pub arrival_rate: Vec<f64>,
    pub lambda: Vec<f64>,
    pub utility: f64,
    pub transport_exec: bool,
    pub physical_exec: bool,
    pub injected: f64,
    pub delivered: f64,
    pub queued: f64,
    pub in_flight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub session_ids: Vec<u32>,
    /// Ids of nodes with a transmitter role, in `node_power_mw` order.
    pub node_ids: Vec<u32>,
    pub link_ids: Vec<u32>,
    pub records: Vec<SlotRecord>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.records.len() * (1 + self.link_ids.len()));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let u = r.utility;
            for (i, id) in self.session_ids.iter().enumerate() {
                let _ = writeln!(out, "{},{id},{:.6},,,,,{u:.6}", r.slot, r.throughput[i]);
            }
            for (i, id) in self.node_ids.iter().enumerate() {
                let _ = writeln!(out, "{},,,{id},{:.6},,,{u:.6}", r.slot, r.node_power_mw[i]);
            }
            for (i, id) in self.link_ids.iter().enumerate() {
                let _ = writeln!(out, "{},,,,,{id},{:.6},{u:.6}", r.slot, r.lambda[i]);
            }
        }
        out
    }

    /// The final `fraction` of the run.
    pub fn tail(&self, fraction: f64) -> &[SlotRecord] {
        let n = self.records.len();
        let k = ((n as f64) * fraction).ceil() as usize;
        &self.records[n - k.min(n)..]
    }

    fn mean(rs: &[SlotRecord], f: impl Fn(&SlotRecord) -> f64) -> f64 {
        if rs.is_empty() {
            return f64::NAN;
        }
        rs.iter().map(f).sum::<f64>() / rs.len() as f64
    }

    pub fn steady_utility(&self, fraction: f64) -> f64 {
        Self::mean(self.tail(fraction), |r| r.utility)
    }

    pub fn steady_throughput(&self, session: usize, fraction: f64) -> f64 {
        Self::mean(self.tail(fraction), |r| r.throughput[session])
    }

    pub fn steady_total_power_mw(&self, fraction: f64) -> f64 {
        Self::mean(self.tail(fraction), |r| r.node_power_mw.iter().sum())
    }

    /// (transport, physical) executions in slots `from..from + len`.
    pub fn executions(&self, from: usize, len: usize) -> (usize, usize) {
        let w = &self.records[from.min(self.records.len())..(from + len).min(self.records.len())];
        (
            w.iter().filter(|r| r.transport_exec).count(),
            w.iter().filter(|r| r.physical_exec).count(),
        )
    }
}
