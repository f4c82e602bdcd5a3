//! Read accounting for the observation-depth distributor and the resampler.
//!
//! A naive distributor copies each worker's depth box out of memory on its
//! own, reading overlapping pixels once per worker. The shared distributor
//! splits the union of the boxes into sub-rectangles with a constant set of
//! covering workers and reads each of them once. Counts are pixel reads.

use alloc::vec::Vec;

use crate::raster::BoundingBox;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerCounters {
    pub naive_depth_reads: u64,
    pub shared_depth_reads: u64,
    pub cdf_coarse_reads: u64,
    pub cdf_fine_reads: u64,
    pub cdf_naive_reads: u64,
}

impl LedgerCounters {
    /// Element-wise `self - earlier`.
    pub fn since(&self, earlier: &LedgerCounters) -> LedgerCounters {
        LedgerCounters {
            naive_depth_reads: self.naive_depth_reads - earlier.naive_depth_reads,
            shared_depth_reads: self.shared_depth_reads - earlier.shared_depth_reads,
            cdf_coarse_reads: self.cdf_coarse_reads - earlier.cdf_coarse_reads,
            cdf_fine_reads: self.cdf_fine_reads - earlier.cdf_fine_reads,
            cdf_naive_reads: self.cdf_naive_reads - earlier.cdf_naive_reads,
        }
    }

    pub fn merge(&mut self, o: &LedgerCounters) {
        self.naive_depth_reads += o.naive_depth_reads;
        self.shared_depth_reads += o.shared_depth_reads;
        self.cdf_coarse_reads += o.cdf_coarse_reads;
        self.cdf_fine_reads += o.cdf_fine_reads;
        self.cdf_naive_reads += o.cdf_naive_reads;
    }

    /// Shared over naive depth reads; 1 when nothing was read.
    pub fn sharing_ratio(&self) -> f64 {
        if self.naive_depth_reads == 0 {
            1.0
        } else {
            self.shared_depth_reads as f64 / self.naive_depth_reads as f64
        }
    }
}

/// Monotone counters plus snapshots taken at iteration boundaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessLedger {
    counters: LedgerCounters,
    snapshots: Vec<LedgerCounters>,
}

impl AccessLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> LedgerCounters {
        self.counters
    }

    pub fn snapshots(&self) -> &[LedgerCounters] {
        &self.snapshots
    }

    /// Records the current totals and returns them.
    pub fn snapshot(&mut self) -> LedgerCounters {
        self.snapshots.push(self.counters);
        self.counters
    }

    pub fn record_cdf_search(&mut self, coarse: u64, fine: u64, naive: u64) {
        self.counters.cdf_coarse_reads += coarse;
        self.counters.cdf_fine_reads += fine;
        self.counters.cdf_naive_reads += naive;
    }

    pub fn absorb(&mut self, tally: &LedgerCounters) {
        self.counters.merge(tally);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubRegion {
    pub bbox: BoundingBox,
    /// Positions in the input box list served by this read, ascending.
    pub workers: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegionPlan {
    pub regions: Vec<SubRegion>,
    pub total_unique_pixels: u64,
    /// Sum of the requested box areas.
    pub total_requested_pixels: u64,
}

impl RegionPlan {
    /// Sub-regions handed to one worker.
    pub fn regions_for(&self, worker: u32) -> impl Iterator<Item = &SubRegion> {
        self.regions.iter().filter(move |r| r.workers.binary_search(&worker).is_ok())
    }
}

fn sorted_edges(it: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut v: Vec<u32> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Splits the union of `boxes` along the coordinate grid of their edges.
/// Vertically adjacent cells of one column slab with the same covering set are
/// merged.
pub fn plan_distribution(boxes: &[BoundingBox]) -> RegionPlan {
    let mut plan = RegionPlan {
        total_requested_pixels: boxes.iter().map(|b| b.area()).sum(),
        ..RegionPlan::default()
    };
    if boxes.is_empty() {
        return plan;
    }
    let xs = sorted_edges(boxes.iter().flat_map(|b| [b.x_min, b.x_max + 1]));
    let mut covering: Vec<u32> = Vec::new();
    for slab in xs.windows(2) {
        let (x0, x1) = (slab[0], slab[1] - 1);
        let column: Vec<u32> = (0..boxes.len() as u32)
            .filter(|&i| boxes[i as usize].x_min <= x0 && boxes[i as usize].x_max >= x1)
            .collect();
        if column.is_empty() {
            continue;
        }
        let ys = sorted_edges(column.iter().flat_map(|&i| [boxes[i as usize].y_min, boxes[i as usize].y_max + 1]));
        let mut open: Option<SubRegion> = None;
        for cell in ys.windows(2) {
            let (y0, y1) = (cell[0], cell[1] - 1);
            covering.clear();
            covering.extend(
                column.iter().copied().filter(|&i| boxes[i as usize].y_min <= y0 && boxes[i as usize].y_max >= y1),
            );
            match &mut open {
                Some(r) if !covering.is_empty() && r.workers == covering && r.bbox.y_max + 1 == y0 => {
                    r.bbox.y_max = y1;
                }
                _ => {
                    if let Some(r) = open.take() {
                        plan.push(r);
                    }
                    if !covering.is_empty() {
                        open = Some(SubRegion {
                            bbox: BoundingBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 },
                            workers: covering.clone(),
                        });
                    }
                }
            }
        }
        if let Some(r) = open.take() {
            plan.push(r);
        }
    }
    plan
}

impl RegionPlan {
    fn push(&mut self, r: SubRegion) {
        self.total_unique_pixels += r.bbox.area();
        self.regions.push(r);
    }
}

/// Adds one distribution round to the ledger.
pub fn account_iteration(plan: &RegionPlan, ledger: &mut AccessLedger) {
    ledger.counters.naive_depth_reads += plan.total_requested_pixels;
    ledger.counters.shared_depth_reads += plan.total_unique_pixels;
}
