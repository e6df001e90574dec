use super::{stft::N_BINS, SAMPLE_RATE, WINDOW};

pub const N_BANDS: usize = 128;
pub const BAND_MIN_HZ: f64 = 30.0;
pub const BAND_MAX_HZ: f64 = 11_000.0;

/// One band's nonzero weights, starting at FFT bin `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub start: usize,
    pub weights: Vec<f32>,
}

/// Triangular log-spaced filterbank over the 2049 bins of a 4096-point FFT.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    edges: Vec<f64>,
    bands: Vec<Band>,
}

impl FilterBank {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn n_bins(&self) -> usize {
        N_BINS
    }

    /// The 130 band edges; band `k` rises from `edges[k]`, peaks at
    /// `edges[k+1]` and falls to `edges[k+2]`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.edges[band + 1]
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    /// Dense `[n_bands][n_bins]` weight matrix.
    pub fn dense(&self) -> Vec<Vec<f32>> {
        self.bands
            .iter()
            .map(|b| {
                let mut row = vec![0.0; N_BINS];
                row[b.start..b.start + b.weights.len()].copy_from_slice(&b.weights);
                row
            })
            .collect()
    }

    /// `Σ_j w[band][j]·spectrum[j]` for one band.
    pub fn apply_band(&self, band: usize, spectrum: &[f32]) -> f32 {
        let b = &self.bands[band];
        b.weights
            .iter()
            .zip(&spectrum[b.start..])
            .map(|(w, s)| w * s)
            .sum()
    }
}

/// Builds the 128-band filterbank spanning 30 Hz to 11 kHz.
///
/// Low bands are narrower than an FFT bin; when a triangle covers no bin
/// center, its weight is split between the two bins bracketing its center by
/// linear interpolation. Every row is normalized to sum to 1.
pub fn build_filterbank() -> FilterBank {
    let n_edges = N_BANDS + 2;
    let ratio = (BAND_MAX_HZ / BAND_MIN_HZ).ln() / (n_edges - 1) as f64;
    let edges: Vec<f64> = (0..n_edges)
        .map(|i| BAND_MIN_HZ * (ratio * i as f64).exp())
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / WINDOW as f64;

    let bands = (0..N_BANDS)
        .map(|k| {
            let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            let mut w: Vec<(usize, f64)> = (0..N_BINS)
                .filter_map(|j| {
                    let f = j as f64 * bin_hz;
                    let v = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (v > 0.0).then_some((j, v))
                })
                .collect();
            if w.is_empty() {
                let pos = mid / bin_hz;
                let j0 = pos.floor() as usize;
                let frac = pos - j0 as f64;
                w.push((j0, 1.0 - frac));
                if frac > 0.0 {
                    w.push((j0 + 1, frac));
                }
            }
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            let start = w[0].0;
            let end = w.last().unwrap().0;
            let mut weights = vec![0.0f32; end - start + 1];
            for (j, v) in w {
                weights[j - start] = (v / total) as f32;
            }
            Band { start, weights }
        })
        .collect();

    FilterBank { edges, bands }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_nonnegative_nonempty_and_sum_to_one() {
        let fb = build_filterbank();
        assert_eq!(fb.n_bands(), 128);
        assert_eq!(fb.edges().len(), 130);
        for b in fb.bands() {
            assert!(b.weights.iter().all(|&w| w >= 0.0));
            assert!(b.weights.iter().any(|&w| w > 0.0));
            let s: f64 = b.weights.iter().map(|&w| w as f64).sum();
            assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn centers_span_range_with_constant_ratio() {
        let fb = build_filterbank();
        let c0 = fb.center_hz(0);
        let c127 = fb.center_hz(127);
        assert!(c0 > 30.0 && c0 < 35.0, "{c0}");
        assert!(c127 > 10_000.0 && c127 < 11_000.0, "{c127}");
        // Independent recomputation of the spacing: 129 equal log steps 30 -> 11000.
        let expected_ratio = (11_000.0f64 / 30.0).powf(1.0 / 129.0);
        for k in 0..127 {
            let r = fb.center_hz(k + 1) / fb.center_hz(k);
            assert!((r / expected_ratio - 1.0).abs() < 1e-3);
        }
    }
}
