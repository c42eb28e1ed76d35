//! Edge-based partitioning: each worker receives a contiguous, equally sized
//! run of the canonical edge order plus compact local index maps for the
//! cameras and points its edges touch.

use std::ops::Range;

use thiserror::Error;

use crate::problem::BaProblem;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("{workers} workers requested but the problem only has {edges} edges")]
    TooManyWorkers { workers: usize, edges: usize },
}

const UNMAPPED: usize = usize::MAX;

/// Bidirectional global/local index map in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalIndexMap {
    to_local: Vec<usize>,
    to_global: Vec<usize>,
}

impl LocalIndexMap {
    fn new(global_count: usize) -> Self {
        LocalIndexMap {
            to_local: vec![UNMAPPED; global_count],
            to_global: Vec::new(),
        }
    }

    fn touch(&mut self, global: usize) -> usize {
        let slot = &mut self.to_local[global];
        if *slot == UNMAPPED {
            *slot = self.to_global.len();
            self.to_global.push(global);
        }
        *slot
    }

    pub fn local(&self, global: usize) -> Option<usize> {
        match self.to_local.get(global) {
            Some(&l) if l != UNMAPPED => Some(l),
            _ => None,
        }
    }

    pub fn global(&self, local: usize) -> usize {
        self.to_global[local]
    }

    /// Global ids in local order.
    pub fn globals(&self) -> &[usize] {
        &self.to_global
    }

    pub fn len(&self) -> usize {
        self.to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_global.is_empty()
    }
}

/// The share of edges assigned to one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgePartition {
    pub rank: usize,
    pub edges: Range<usize>,
    pub cameras: LocalIndexMap,
    pub points: LocalIndexMap,
}

impl EdgePartition {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges.clone()
    }
}

/// Contiguous edge ranges for `workers` ranks; the first `N mod K` ranks
/// receive one extra edge.
pub fn edge_ranges(num_edges: usize, workers: usize) -> Result<Vec<Range<usize>>, PartitionError> {
    if workers == 0 {
        return Err(PartitionError::NoWorkers);
    }
    if workers > num_edges {
        return Err(PartitionError::TooManyWorkers {
            workers,
            edges: num_edges,
        });
    }
    let base = num_edges / workers;
    let extra = num_edges % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

pub fn partition_edges<T: Real>(
    problem: &BaProblem<T>,
    workers: usize,
) -> Result<Vec<EdgePartition>, PartitionError> {
    let ranges = edge_ranges(problem.num_observations(), workers)?;
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(rank, edges)| {
            let (cameras, points) = build_local_maps(problem, edges.clone());
            EdgePartition {
                rank,
                edges,
                cameras,
                points,
            }
        })
        .collect())
}

pub fn build_local_maps<T: Real>(
    problem: &BaProblem<T>,
    edge_ids: impl IntoIterator<Item = usize>,
) -> (LocalIndexMap, LocalIndexMap) {
    let mut cameras = LocalIndexMap::new(problem.num_cameras());
    let mut points = LocalIndexMap::new(problem.num_points());
    for e in edge_ids {
        let obs = &problem.observations[e];
        cameras.touch(obs.camera);
        points.touch(obs.point);
    }
    (cameras, points)
}
