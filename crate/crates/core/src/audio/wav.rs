use std::io::Read;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{downmix, ingest, AudioClip, AudioError, Resampler, SAMPLE_RATE};

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        other => AudioError::Format(other.to_string()),
    }
}

fn check_spec(spec: &WavSpec) -> Result<(), AudioError> {
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16 | 24 | 32) | (SampleFormat::Float, 32) => {}
        (fmt, bits) => {
            return Err(AudioError::Format(format!(
                "{bits}-bit {fmt:?} PCM is not supported"
            )));
        }
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::Channels(spec.channels));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::Rate(0));
    }
    Ok(())
}

/// Chunked WAV decoder yielding mono 44.1 kHz samples. Reads the underlying
/// source only as far as each requested chunk needs.
pub struct WavStream<R: Read> {
    reader: WavReader<R>,
    spec: WavSpec,
    resampler: Resampler,
    done: bool,
}

impl<R: Read> WavStream<R> {
    pub fn new(source: R) -> Result<Self, AudioError> {
        let reader = WavReader::new(source).map_err(map_hound)?;
        let spec = reader.spec();
        check_spec(&spec)?;
        Ok(WavStream {
            reader,
            spec,
            resampler: Resampler::new(spec.sample_rate, SAMPLE_RATE),
            done: false,
        })
    }

    pub fn spec(&self) -> WavSpec {
        self.spec
    }

    /// Decodes up to `frames` input frames. Returns `None` at end of stream.
    pub fn next_chunk(&mut self, frames: usize) -> Result<Option<Vec<f32>>, AudioError> {
        if self.done {
            return Ok(None);
        }
        let want = frames * self.spec.channels as usize;
        let mut interleaved = Vec::with_capacity(want);
        match self.spec.sample_format {
            SampleFormat::Float => {
                for s in self.reader.samples::<f32>().take(want) {
                    interleaved.push(s.map_err(map_hound)?);
                }
            }
            SampleFormat::Int => {
                let scale = 1.0 / (1u64 << (self.spec.bits_per_sample - 1)) as f32;
                for s in self.reader.samples::<i32>().take(want) {
                    interleaved.push(s.map_err(map_hound)? as f32 * scale);
                }
            }
        }
        let mono = downmix(&interleaved, self.spec.channels)?;
        let mut out = self.resampler.push(&mono);
        if interleaved.len() < want {
            self.done = true;
            out.extend(self.resampler.flush());
        }
        Ok(Some(out))
    }
}

pub fn read_wav_from<R: Read>(source: R) -> Result<AudioClip, AudioError> {
    let mut reader = WavReader::new(source).map_err(map_hound)?;
    let spec = reader.spec();
    check_spec(&spec)?;
    let samples: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
    };
    ingest(&samples, spec.sample_rate, spec.channels)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let f = std::fs::File::open(path)?;
    read_wav_from(std::io::BufReader::new(f))
}

/// Writes mono 44.1 kHz 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in clip.samples() {
        w.write_sample(s).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}
