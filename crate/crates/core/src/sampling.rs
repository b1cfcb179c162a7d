//! Dynamic spatial-temporal frame sampling.
//!
//! The frame queue enqueues a frame whenever the preceding vehicle has
//! accumulated `sigma` meters of travel since the last enqueue, trims itself
//! so its spatial span `|Q| * sigma` never exceeds the ego-leader distance,
//! and serves evenly spaced (in leader travel distance) history frames for
//! temporal fusion. A fixed-time sampler backs the velocity branch.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;

/// Sampler knobs (config section `sampler.*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Spatial threshold sigma: leader travel per enqueue, meters.
    pub sigma_m: f64,
    /// History frames N fed to temporal fusion.
    pub n_hist: usize,
    /// Fixed-time sampling interval for the velocity branch, seconds.
    pub fixed_dt_s: f64,
    /// Frame count for the velocity branch (including the current frame).
    pub fixed_count: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sigma_m: 0.4,
            n_hist: 3,
            fixed_dt_s: 0.3,
            fixed_count: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEntry {
    pub frame_ref: u64,
    /// Leader pose in the world frame at enqueue time.
    pub leader_pose: Pose2,
    pub timestamp: f64,
}

/// The dynamic frame queue. Entry 0 is the newest frame, so sampled indices
/// count backward from the leader's current position.
#[derive(Debug, Clone)]
pub struct FrameQueue {
    entries: VecDeque<QueueEntry>,
    sigma: f64,
    n_hist: usize,
    cum_dist: f64,
    last_leader_pose: Option<Pose2>,
    last_timestamp: Option<f64>,
}

impl FrameQueue {
    pub fn new(sigma: f64, n_hist: usize) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        assert!(n_hist > 0, "history count must be positive");
        Self {
            entries: VecDeque::new(),
            sigma,
            n_hist,
            cum_dist: 0.0,
            last_leader_pose: None,
            last_timestamp: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_hist(&self) -> usize {
        self.n_hist
    }

    /// Spatial span of the queue: `|Q| * sigma`.
    pub fn span(&self) -> f64 {
        self.entries.len() as f64 * self.sigma
    }

    /// Accumulated leader travel since the last enqueue.
    pub fn cum_dist(&self) -> f64 {
        self.cum_dist
    }

    /// Feeds one incoming frame. Accumulates the leader's inter-frame travel
    /// distance and enqueues the frame once the accumulation reaches sigma.
    /// Returns whether the frame was enqueued.
    pub fn observe_frame(&mut self, frame_ref: u64, leader_pose: Pose2, t: f64) -> Result<bool> {
        if let Some(last_t) = self.last_timestamp {
            if t <= last_t {
                return Err(Error::Stream(format!(
                    "non-monotonic timestamp {t} after {last_t}"
                )));
            }
        }
        let step = self
            .last_leader_pose
            .map(|p| p.distance(&leader_pose))
            .unwrap_or(0.0);
        self.cum_dist += step;
        self.last_leader_pose = Some(leader_pose);
        self.last_timestamp = Some(t);
        if self.cum_dist >= self.sigma {
            self.entries.push_front(QueueEntry {
                frame_ref,
                leader_pose,
                timestamp: t,
            });
            self.cum_dist = 0.0;
            return Ok(true);
        }
        Ok(false)
    }

    /// Dequeues oldest frames until the queue span fits inside the current
    /// ego-leader distance: post-condition `|Q| * sigma <= d_k`.
    pub fn maintain_queue(&mut self, d_k: f64) {
        let d_k = d_k.max(0.0);
        while self.span() > d_k {
            self.entries.pop_back();
        }
    }

    /// Samples `n_hist` frames spread over the ego-leader gap, ordered
    /// oldest -> newest for fusion. Returns None when not ready.
    ///
    /// Sampling interval tau = d_k / (N + 1); index step eta = floor(tau /
    /// sigma) clamped to >= 1 so the selected frames are distinct; index
    /// i * eta counts back from the newest entry, clamped to queue bounds.
    pub fn sample_frames(&self, d_k: f64) -> Option<Vec<QueueEntry>> {
        let n = self.n_hist;
        if self.entries.len() < n {
            return None;
        }
        // Readiness requires the queue to span the gap. Post-maintenance the
        // span is <= d_k, so accept up to one sigma of slack (the trim loop
        // guarantees d_k < span + sigma whenever it ran).
        if d_k > (self.entries.len() as f64 + 1.0) * self.sigma {
            return None;
        }
        let tau = d_k / (n as f64 + 1.0);
        let eta = ((tau / self.sigma).floor() as usize).max(1);
        let mut picked = Vec::with_capacity(n);
        for i in 0..n {
            let j = (i * eta).min(self.entries.len() - 1);
            picked.push(self.entries[j]);
        }
        picked.reverse();
        Some(picked)
    }
}

/// Selects indices of frames nearest to `t_now - i * interval` for
/// i = 0..count-1, newest first, from ascending `timestamps` (the last entry
/// is the current frame). Ties round toward the older frame. Returns None if
/// the history does not reach back far enough or a target has no frame
/// within half a frame period.
pub fn fixed_time_sample(timestamps: &[f64], interval: f64, count: usize) -> Option<Vec<usize>> {
    if timestamps.is_empty() || count == 0 {
        return None;
    }
    let t_now = *timestamps.last().unwrap();
    let half_period = if timestamps.len() > 1 {
        (t_now - timestamps[0]) / (timestamps.len() - 1) as f64 / 2.0
    } else {
        f64::INFINITY
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let target = t_now - i as f64 * interval;
        if target < timestamps[0] - half_period - 1e-9 {
            return None;
        }
        let split = timestamps.partition_point(|&t| t < target);
        let idx = if split == 0 {
            0
        } else if split >= timestamps.len() {
            timestamps.len() - 1
        } else {
            let d_older = target - timestamps[split - 1];
            let d_newer = timestamps[split] - target;
            // Ties go to the older frame ("round half up" in lag).
            if d_newer + 1e-12 < d_older {
                split
            } else {
                split - 1
            }
        };
        if (timestamps[idx] - target).abs() > half_period + 1e-9 {
            return None;
        }
        out.push(idx);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: f64) -> Pose2 {
        Pose2::new(x, 0.0, 0.0)
    }

    #[test]
    fn cumulative_trigger_hand_trace() {
        // sigma = 0.5, leader steps of 0.2 m: frames 1,2 accumulate 0.4,
        // frame 3 reaches 0.6 >= 0.5 and enqueues.
        let mut q = FrameQueue::new(0.5, 3);
        q.observe_frame(0, pose(0.0), 0.0).unwrap();
        assert!(!q.observe_frame(1, pose(0.2), 0.1).unwrap());
        assert!(!q.observe_frame(2, pose(0.4), 0.2).unwrap());
        assert!((q.cum_dist() - 0.4).abs() < 1e-12);
        assert!(q.observe_frame(3, pose(0.6), 0.3).unwrap());
        assert_eq!(q.cum_dist(), 0.0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn stationary_leader_never_enqueues() {
        let mut q = FrameQueue::new(0.5, 3);
        for i in 0..100 {
            q.observe_frame(i, pose(1.0), i as f64 * 0.1).unwrap();
        }
        assert!(q.is_empty());
    }

    #[test]
    fn single_large_step_enqueues_immediately() {
        let mut q = FrameQueue::new(0.5, 3);
        q.observe_frame(0, pose(0.0), 0.0).unwrap();
        assert!(q.observe_frame(1, pose(0.7), 0.1).unwrap());
    }

    #[test]
    fn non_monotonic_timestamp_is_stream_error() {
        let mut q = FrameQueue::new(0.5, 3);
        q.observe_frame(0, pose(0.0), 1.0).unwrap();
        assert!(matches!(
            q.observe_frame(1, pose(1.0), 1.0),
            Err(Error::Stream(_))
        ));
    }

    fn filled_queue_step(sigma: f64, n_hist: usize, entries: usize, step: f64) -> FrameQueue {
        let mut q = FrameQueue::new(sigma, n_hist);
        q.observe_frame(0, pose(0.0), 0.0).unwrap();
        for i in 0..entries {
            let x = (i + 1) as f64 * step;
            q.observe_frame(i as u64 + 1, pose(x), (i + 1) as f64 * 0.1)
                .unwrap();
        }
        assert_eq!(q.len(), entries);
        q
    }

    fn filled_queue(sigma: f64, n_hist: usize, entries: usize) -> FrameQueue {
        filled_queue_step(sigma, n_hist, entries, sigma)
    }

    #[test]
    fn maintain_hand_trace() {
        // sigma = 0.5, |Q| = 8 (span 4.0), d_k = 3.0 -> dequeue 2 -> span 3.0.
        let mut q = filled_queue(0.5, 3, 8);
        q.maintain_queue(3.0);
        assert_eq!(q.len(), 6);
        assert!((q.span() - 3.0).abs() < 1e-12);
        // d_k >= span -> no change.
        q.maintain_queue(10.0);
        assert_eq!(q.len(), 6);
        // d_k = 0 -> emptied.
        q.maintain_queue(0.0);
        assert!(q.is_empty());
    }

    #[test]
    fn sample_hand_trace() {
        // sigma = 0.5, N = 3, |Q| = 6, d_k = 3.0 -> tau = 0.75, eta = 1,
        // indices {0,1,2} from the newest entry.
        let mut q = filled_queue(0.5, 3, 8);
        q.maintain_queue(3.0);
        let picked = q.sample_frames(3.0).unwrap();
        assert_eq!(picked.len(), 3);
        // Newest three entries are frames 8, 7, 6; returned oldest->newest.
        let ids: Vec<u64> = picked.iter().map(|e| e.frame_ref).collect();
        assert_eq!(ids, vec![6, 7, 8]);
        // Their leader poses span about 1.0 m of travel.
        let span = picked[0].leader_pose.distance(&picked[2].leader_pose);
        assert!(span >= 0.99 && span <= 1.5, "span {span}");
    }

    #[test]
    fn sample_spreads_when_gap_is_wide() {
        // sigma = 0.4, leader steps of 0.5 m (every step enqueues), gap
        // 4.0 m: tau = 1.0, eta = 2 -> indices {0,2,4} from the newest.
        let mut q = filled_queue_step(0.4, 3, 12, 0.5);
        q.maintain_queue(4.0);
        assert_eq!(q.len(), 10);
        let picked = q.sample_frames(4.0).unwrap();
        let ids: Vec<u64> = picked.iter().map(|e| e.frame_ref).collect();
        assert_eq!(ids, vec![8, 10, 12]);
    }

    #[test]
    fn short_queue_is_not_ready() {
        let q = filled_queue(0.5, 3, 2);
        assert!(q.sample_frames(1.0).is_none());
    }

    #[test]
    fn gap_beyond_queue_span_is_not_ready() {
        let q = filled_queue(0.5, 3, 4);
        // Queue spans 2.0 m; a 3.0 m gap cannot be covered even with slack.
        assert!(q.sample_frames(3.0).is_none());
    }

    #[test]
    fn fixed_time_on_10hz_stream() {
        let ts: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let idx = fixed_time_sample(&ts, 0.3, 3).unwrap();
        assert_eq!(idx, vec![10, 7, 4]); // lags {0, 3, 6}
        let idx = fixed_time_sample(&ts, 0.25, 3).unwrap();
        assert_eq!(idx, vec![10, 7, 5]); // lags {0, 2.5 -> 3, 5}
        let idx = fixed_time_sample(&ts, 0.3, 1).unwrap();
        assert_eq!(idx, vec![10]);
    }

    #[test]
    fn fixed_time_insufficient_history() {
        let ts: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
        assert!(fixed_time_sample(&ts, 0.3, 3).is_none());
    }

    proptest! {
        /// Post-maintenance bound and entry spacing over random traffic.
        #[test]
        fn queue_invariants_hold(steps in proptest::collection::vec((0.0f64..0.6, 0.5f64..8.0), 1..200)) {
            let sigma = 0.4;
            let mut q = FrameQueue::new(sigma, 3);
            let mut x = 0.0;
            let mut t = 0.0;
            q.observe_frame(0, pose(x), t).unwrap();
            for (i, (step, d_k)) in steps.iter().enumerate() {
                x += step;
                t += 0.1;
                q.observe_frame(i as u64 + 1, pose(x), t).unwrap();
                q.maintain_queue(*d_k);
                prop_assert!(q.span() <= *d_k + 1e-12);
                prop_assert!(q.cum_dist() < sigma);
                if let Some(picked) = q.sample_frames(*d_k) {
                    prop_assert_eq!(picked.len(), 3);
                    // Ordered oldest -> newest.
                    prop_assert!(picked[0].timestamp <= picked[1].timestamp);
                    prop_assert!(picked[1].timestamp <= picked[2].timestamp);
                }
                // Consecutive entries are at least sigma apart in leader travel.
                for w in 0..q.len().saturating_sub(1) {
                    let a = q.entries[w].leader_pose;
                    let b = q.entries[w + 1].leader_pose;
                    // Straight-line motion here, so arc length = distance.
                    prop_assert!(a.distance(&b) >= sigma - 1e-9);
                }
            }
        }
    }
}
