//! Streaming windowed-sinc resampler (Kaiser window, 32 taps).

const HALF_TAPS: i64 = 16;
const KAISER_BETA: f64 = 8.0;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Converts a mono stream from `rate_in` to `rate_out`.
///
/// Output sample `n` sits at input position `n·rate_in/rate_out` and is a
/// normalized weighted sum of the 32 nearest input samples. Pushing the input in
/// any chunking produces the same output as pushing it all at once.
#[derive(Debug, Clone)]
pub struct Resampler {
    rate_in: u64,
    rate_out: u64,
    cutoff: f64,
    i0_beta: f64,
    /// Retained input; `buf[0]` is absolute input index `base`.
    buf: Vec<f32>,
    base: u64,
    consumed: u64,
    next_out: u64,
}

impl Resampler {
    pub fn new(rate_in: u32, rate_out: u32) -> Self {
        Resampler {
            rate_in: rate_in as u64,
            rate_out: rate_out as u64,
            cutoff: (rate_out as f64 / rate_in as f64).min(1.0),
            i0_beta: bessel_i0(KAISER_BETA),
            buf: Vec::new(),
            base: 0,
            consumed: 0,
            next_out: 0,
        }
    }

    pub fn is_passthrough(&self) -> bool {
        self.rate_in == self.rate_out
    }

    fn kernel(&self, x: f64) -> f64 {
        let r = x / (HALF_TAPS as f64 + 0.5);
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * x) * w
    }

    fn sample(&self, idx: i64) -> f64 {
        if idx < self.base as i64 {
            return 0.0;
        }
        let off = (idx - self.base as i64) as usize;
        self.buf.get(off).map_or(0.0, |&s| s as f64)
    }

    fn render(&self, n: u64) -> f32 {
        let pos = n * self.rate_in;
        let ipart = (pos / self.rate_out) as i64;
        let frac = (pos % self.rate_out) as f64 / self.rate_out as f64;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in ipart - HALF_TAPS + 1..=ipart + HALF_TAPS {
            let w = self.kernel(frac + (ipart - k) as f64);
            acc += w * self.sample(k);
            norm += w;
        }
        (acc / norm) as f32
    }

    /// Feeds input samples; returns every output sample whose taps are now available.
    pub fn push(&mut self, input: &[f32]) -> Vec<f32> {
        if self.is_passthrough() {
            self.consumed += input.len() as u64;
            return input.to_vec();
        }
        self.buf.extend_from_slice(input);
        self.consumed += input.len() as u64;
        let mut out = Vec::new();
        loop {
            let ipart = (self.next_out * self.rate_in / self.rate_out) as i64;
            if ipart + HALF_TAPS >= self.consumed as i64 {
                break;
            }
            out.push(self.render(self.next_out));
            self.next_out += 1;
        }
        self.trim();
        out
    }

    /// Emits the remaining outputs, treating samples past the end as zero.
    pub fn flush(&mut self) -> Vec<f32> {
        if self.is_passthrough() {
            return Vec::new();
        }
        let total = self.consumed * self.rate_out / self.rate_in;
        let mut out = Vec::new();
        while self.next_out < total {
            out.push(self.render(self.next_out));
            self.next_out += 1;
        }
        out
    }

    fn trim(&mut self) {
        let ipart = (self.next_out * self.rate_in / self.rate_out) as i64;
        let keep_from = (ipart - HALF_TAPS).max(0) as u64;
        if keep_from > self.base + 4096 {
            let drop = (keep_from - self.base) as usize;
            self.buf.drain(..drop);
            self.base = keep_from;
        }
    }
}
