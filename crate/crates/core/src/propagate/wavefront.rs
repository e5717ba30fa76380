//! Round-synchronous propagation: each round, every unreached pixel pulls
//! from neighbours that were reached in the previous round. Rounds are
//! barriers; pixels within a round are independent and run in parallel.
//!
//! Arrivals at a pixel are folded in the order a FIFO queue would deliver
//! them, keyed by (queue rank of the source, edge number). Ranks for the
//! new ring follow from each pixel's smallest key, so every averaging mode
//! reproduces the queue engine bit for bit.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{assemble, AveragingMode, EdgeSet, PropagationResult, Slot};
use crate::error::Result;
use crate::extract::PhasorGrid;

pub fn propagate_wavefront(
    grid: &PhasorGrid,
    reference: (usize, usize),
    mode: AveragingMode,
) -> Result<PropagationResult> {
    let edges = EdgeSet::new(grid);
    let start = edges.check_reference(reference)?;
    let n = edges.len();
    let mut hops: Vec<Option<u32>> = vec![None; n];
    let mut values: Vec<Option<Complex64>> = vec![None; n];
    let mut rank: Vec<u64> = vec![u64::MAX; n];
    hops[start] = Some(0);
    values[start] = Some(Complex64::new(1.0, 0.0));
    rank[start] = 0;
    let mut next_rank = 1u64;
    let mut round = 0u32;
    loop {
        let ring: Vec<((u64, usize), usize, Complex64)> = (0..n)
            .into_par_iter()
            .filter(|&d| hops[d].is_none())
            .filter_map(|d| {
                let mut arrivals: Vec<((u64, usize), Complex64)> = (0..edges.edge_count())
                    .filter_map(|e| {
                        let (src, factor) = edges.incoming(d, e)?;
                        (hops[src] == Some(round)).then(|| ((rank[src], e), values[src].unwrap() * factor))
                    })
                    .collect();
                if arrivals.is_empty() {
                    return None;
                }
                arrivals.sort_unstable_by_key(|a| a.0);
                let mut slot = Slot::new(arrivals[0].1);
                for a in &arrivals[1..] {
                    slot.add(a.1, mode);
                }
                Some((arrivals[0].0, d, slot.finish(mode)))
            })
            .collect();
        if ring.is_empty() {
            break;
        }
        round += 1;
        let mut ring = ring;
        ring.sort_unstable_by_key(|r| r.0);
        for (_, d, value) in ring {
            hops[d] = Some(round);
            values[d] = Some(value);
            rank[d] = next_rank;
            next_rank += 1;
        }
    }
    assemble(edges.height, edges.width, values, hops, reference, round)
}
