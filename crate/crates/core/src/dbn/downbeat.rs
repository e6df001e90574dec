/// Online bar-position labelling. For each candidate meter `m` and phase `φ`
/// it keeps the running mean downbeat activation over beats `k ≡ φ (mod m)`;
/// the best `(m, φ)` numbers the newest beat. Earlier labels are never revised.
#[derive(Debug, Clone, PartialEq)]
pub struct DownbeatTracker {
    meters: Vec<usize>,
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<usize>>,
    n_beats: usize,
}

impl DownbeatTracker {
    /// `meters` in tie-break order: earlier (then lower phase) wins ties.
    pub fn new(meters: &[usize]) -> Self {
        assert!(
            !meters.is_empty() && !meters.contains(&0),
            "meters must be positive"
        );
        DownbeatTracker {
            meters: meters.to_vec(),
            sums: meters.iter().map(|&m| vec![0.0; m]).collect(),
            counts: meters.iter().map(|&m| vec![0; m]).collect(),
            n_beats: 0,
        }
    }

    /// Current `(meter, phase)` estimate.
    pub fn estimate(&self) -> (usize, usize) {
        let mut best = (self.meters[0], 0);
        let mut best_mean = f64::NEG_INFINITY;
        for (i, &m) in self.meters.iter().enumerate() {
            for phi in 0..m {
                let c = self.counts[i][phi];
                if c == 0 {
                    continue;
                }
                let mean = self.sums[i][phi] / c as f64;
                if mean > best_mean {
                    best_mean = mean;
                    best = (m, phi);
                }
            }
        }
        best
    }

    /// Registers the next beat's downbeat activation; returns its number in
    /// the bar (1 = downbeat).
    pub fn push(&mut self, downbeat_act: f64) -> usize {
        let k = self.n_beats;
        for (i, &m) in self.meters.iter().enumerate() {
            self.sums[i][k % m] += downbeat_act;
            self.counts[i][k % m] += 1;
        }
        self.n_beats += 1;
        let (m, phi) = self.estimate();
        (k + m - phi % m) % m + 1
    }

    pub fn n_beats(&self) -> usize {
        self.n_beats
    }
}

/// Labels a finished list of beats, using the downbeat activation at each beat frame.
pub fn downbeat_select(beats: &[usize], downbeat_act: &[f32], meters: &[usize]) -> Vec<usize> {
    let mut tr = DownbeatTracker::new(meters);
    beats
        .iter()
        .map(|&f| tr.push(downbeat_act.get(f).copied().unwrap_or(0.0) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_four_pattern_found_quickly() {
        // downbeats at beats 2, 6, 10, ...
        let acts: Vec<f64> = (0..40)
            .map(|k| if k % 4 == 2 { 1.0 } else { 0.0 })
            .collect();
        let mut tr = DownbeatTracker::new(&[3, 4]);
        let labels: Vec<usize> = acts.iter().map(|&a| tr.push(a)).collect();
        for (k, &l) in labels.iter().enumerate().skip(8) {
            assert_eq!(l, (k + 4 - 2) % 4 + 1, "beat {k}");
        }
        assert_eq!(tr.estimate(), (4, 2));
    }

    #[test]
    fn three_four_pattern_beats_four() {
        let mut tr = DownbeatTracker::new(&[3, 4]);
        for k in 0..30 {
            tr.push(if k % 3 == 0 { 0.9 } else { 0.1 });
        }
        assert_eq!(tr.estimate(), (3, 0));
    }

    #[test]
    fn flat_activation_ties_to_lowest_meter_and_phase() {
        let mut tr = DownbeatTracker::new(&[3, 4]);
        for _ in 0..20 {
            tr.push(0.5);
        }
        assert_eq!(tr.estimate(), (3, 0));
    }

    #[test]
    fn batch_helper_matches_tracker() {
        let act = vec![0.0f32, 0.9, 0.1, 0.1, 0.9, 0.1, 0.1, 0.9];
        let labels = downbeat_select(&[1, 2, 3, 4, 5, 6, 7], &act, &[3, 4]);
        assert_eq!(labels[3], 1);
        assert_eq!(labels[6], 1);
    }
}
