use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::store::SparseSlot;
use crate::error::{MastError, Result};

/// Nonzero connection counts per input (column) and output (row) dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub step: u64,
    pub slot_id: u32,
    pub slot_name: String,
    pub input_counts: Vec<usize>,
    pub output_counts: Vec<usize>,
}

impl MaskStats {
    pub fn total(&self) -> usize {
        self.output_counts.iter().sum()
    }

    pub fn input_sorted_desc(&self) -> Vec<usize> {
        sorted_desc(&self.input_counts)
    }

    pub fn output_sorted_desc(&self) -> Vec<usize> {
        sorted_desc(&self.output_counts)
    }

    /// Appends rows `step,slot_id,dim_kind,dim_index,nonzero_count`.
    pub fn write_csv_rows(&self, out: &mut String) {
        for (i, c) in self.input_counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},input,{},{}", self.step, self.slot_id, i, c);
        }
        for (i, c) in self.output_counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},output,{},{}", self.step, self.slot_id, i, c);
        }
    }
}

pub const MASK_STATS_HEADER: &str = "step,slot_id,dim_kind,dim_index,nonzero_count";

fn sorted_desc(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable_by(|a, b| b.cmp(a));
    s
}

pub fn mask_stats(slot: &SparseSlot, step: u64) -> MaskStats {
    let (rows, cols) = slot.mask.shape();
    let mut input_counts = vec![0; cols];
    let mut output_counts = vec![0; rows];
    for (r, out) in output_counts.iter_mut().enumerate() {
        for (c, inp) in input_counts.iter_mut().enumerate() {
            if slot.mask.get(r, c) {
                *out += 1;
                *inp += 1;
            }
        }
    }
    MaskStats {
        step,
        slot_id: slot.slot_id.0,
        slot_name: slot.name.clone(),
        input_counts,
        output_counts,
    }
}

pub fn stats_to_csv(stats: &[MaskStats]) -> String {
    let mut s = String::from(MASK_STATS_HEADER);
    s.push('\n');
    for st in stats {
        st.write_csv_rows(&mut s);
    }
    s
}

/// Parses a CSV produced by [`stats_to_csv`]; slot names are not stored in
/// the CSV and come back empty.
pub fn stats_from_csv(text: &str) -> Result<Vec<MaskStats>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MASK_STATS_HEADER => {}
        other => {
            return Err(MastError::Serde(format!(
                "unexpected mask stats header {other:?}"
            )))
        }
    }
    let mut out: Vec<MaskStats> = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || MastError::Serde(format!("mask stats line {}: {line:?}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let step: u64 = f[0].parse().map_err(|_| bad())?;
        let slot_id: u32 = f[1].parse().map_err(|_| bad())?;
        let idx: usize = f[3].parse().map_err(|_| bad())?;
        let count: usize = f[4].parse().map_err(|_| bad())?;
        let needs_new = out
            .last()
            .is_none_or(|s| s.step != step || s.slot_id != slot_id);
        if needs_new {
            out.push(MaskStats {
                step,
                slot_id,
                slot_name: String::new(),
                input_counts: Vec::new(),
                output_counts: Vec::new(),
            });
        }
        let cur = out.last_mut().expect("pushed above");
        let v = match f[2] {
            "input" => &mut cur.input_counts,
            "output" => &mut cur.output_counts,
            _ => return Err(bad()),
        };
        if idx != v.len() {
            return Err(bad());
        }
        v.push(count);
    }
    Ok(out)
}
