//! Vertical partition advisor.
//!
//! Enumerates every set partition of the non-key columns and picks the one
//! with the lowest estimated bytes read over a workload trace. A query pays
//! `frequency × width(group)` for every group it touches, where a group's
//! width is the sum of its column widths plus the primary key every group
//! carries.
//!
//! Ties go to the grouping with fewer groups, then to the lexicographically
//! smallest restricted-growth string over the schema's column order (the
//! labelling where column 0 is in group 0 and each new group takes the next
//! label).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Bell(12) ≈ 4.2M partitions; beyond that exhaustive search stops being cheap.
pub const MAX_ADVISOR_COLUMNS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    /// Average stored width in bytes.
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryProfile {
    pub columns: Vec<String>,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorkloadTrace {
    pub queries: Vec<QueryProfile>,
}

impl WorkloadTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn query<I, S>(mut self, columns: I, frequency: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.queries.push(QueryProfile { columns: columns.into_iter().map(Into::into).collect(), frequency });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    /// Groups in label order; columns inside a group keep schema order.
    pub groups: Vec<Vec<String>>,
    pub cost: u128,
}

struct Problem {
    widths: Vec<u64>,
    key_width: u64,
    /// (column bitmask, frequency) per query.
    queries: Vec<(u32, u64)>,
}

impl Problem {
    fn new(columns: &[Column], key_width: u32, trace: &WorkloadTrace) -> Result<Self> {
        if columns.len() > MAX_ADVISOR_COLUMNS {
            return Err(Error::TooManyColumns { columns: columns.len(), limit: MAX_ADVISOR_COLUMNS });
        }
        let mut queries = Vec::with_capacity(trace.queries.len());
        for q in &trace.queries {
            let mut mask = 0u32;
            for name in &q.columns {
                let i = columns
                    .iter()
                    .position(|c| &c.name == name)
                    .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
                mask |= 1 << i;
            }
            queries.push((mask, q.frequency));
        }
        Ok(Problem {
            widths: columns.iter().map(|c| u64::from(c.width)).collect(),
            key_width: u64::from(key_width),
            queries,
        })
    }

    fn cost(&self, labels: &[usize], ngroups: usize, masks: &mut Vec<u32>, widths: &mut Vec<u64>) -> u128 {
        masks.clear();
        masks.resize(ngroups, 0);
        widths.clear();
        widths.resize(ngroups, self.key_width);
        for (col, &g) in labels.iter().enumerate() {
            masks[g] |= 1 << col;
            widths[g] += self.widths[col];
        }
        let mut total = 0u128;
        for &(qmask, freq) in &self.queries {
            let touched: u64 = masks.iter().zip(widths.iter()).filter(|(m, _)| **m & qmask != 0).map(|(_, w)| *w).sum();
            total += u128::from(freq) * u128::from(touched);
        }
        total
    }
}

/// Estimated bytes read by `trace` under an explicit grouping.
pub fn grouping_cost(columns: &[Column], key_width: u32, trace: &WorkloadTrace, groups: &[Vec<String>]) -> Result<u128> {
    let problem = Problem::new(columns, key_width, trace)?;
    let mut labels = vec![usize::MAX; columns.len()];
    for (g, members) in groups.iter().enumerate() {
        for name in members {
            let i = columns
                .iter()
                .position(|c| &c.name == name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
            labels[i] = g;
        }
    }
    if labels.contains(&usize::MAX) {
        return Err(Error::Malformed("grouping does not cover every column"));
    }
    Ok(problem.cost(&labels, groups.len(), &mut Vec::new(), &mut Vec::new()))
}

pub fn advise_partitioning(columns: &[Column], key_width: u32, trace: &WorkloadTrace) -> Result<Partitioning> {
    let problem = Problem::new(columns, key_width, trace)?;
    let n = columns.len();
    if n == 0 {
        return Ok(Partitioning { groups: Vec::new(), cost: 0 });
    }

    // Restricted growth strings in lexicographic order: labels[0] = 0 and
    // labels[i] <= 1 + max(labels[..i]).
    let mut labels = vec![0usize; n];
    let mut prefix_max = vec![0usize; n];
    let (mut masks, mut widths) = (Vec::new(), Vec::new());
    let mut best_labels = labels.clone();
    let mut best = (problem.cost(&labels, 1, &mut masks, &mut widths), 1usize);

    loop {
        // Advance to the next string: bump the rightmost position that can grow.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(build(columns, &best_labels, best));
            }
            let limit = prefix_max[i - 1] + 1;
            if labels[i] < limit {
                labels[i] += 1;
                prefix_max[i] = prefix_max[i - 1].max(labels[i]);
                break;
            }
            i -= 1;
        }
        for j in i + 1..n {
            labels[j] = 0;
            prefix_max[j] = prefix_max[j - 1];
        }
        let ngroups = prefix_max[n - 1] + 1;
        let cost = problem.cost(&labels, ngroups, &mut masks, &mut widths);
        if (cost, ngroups) < best {
            best = (cost, ngroups);
            best_labels.copy_from_slice(&labels);
        }
    }
}

fn build(columns: &[Column], labels: &[usize], (cost, ngroups): (u128, usize)) -> Partitioning {
    let mut groups = vec![Vec::new(); ngroups];
    for (col, &g) in labels.iter().enumerate() {
        groups[g].push(columns[col].name.clone());
    }
    Partitioning { groups, cost }
}
