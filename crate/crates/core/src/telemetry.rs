//! Current sampling alongside inference, phase tagging and CSV output.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PERIOD: Duration = Duration::from_millis(100);
pub const CSV_HEADER: [&str; 3] = ["timestamp_ms", "phase", "current_mA"];

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("cannot read current from {source_name}: {reason}")]
    SourceRead { source_name: String, reason: String },
    #[error("no samples tagged inference")]
    NoInferenceSamples,
    #[error("no samples tagged {0}")]
    NoSamples(Phase),
    #[error("sampling period must be at least 1 ms")]
    InvalidPeriod,
    #[error("{path}: {reason}")]
    Csv { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Phase {
    Idle = 0,
    Load = 1,
    Inference = 2,
}

impl Phase {
    fn from_u8(v: u8) -> Self {
        match v {
            1 => Phase::Load,
            2 => Phase::Inference,
            _ => Phase::Idle,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::Load => "load",
            Phase::Inference => "inference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub timestamp_ms: u64,
    pub phase: Phase,
    #[serde(rename = "current_mA")]
    pub current_ma: f64,
}

/// Instantaneous current reading in milliamps.
pub trait CurrentSource: Send {
    fn read(&mut self) -> Result<f64, TelemetryError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSource(pub f64);

impl CurrentSource for ConstantSource {
    fn read(&mut self) -> Result<f64, TelemetryError> {
        Ok(self.0)
    }
}

/// Re-reads a text file holding a single number (mA) on every sample,
/// like a sysfs power-monitor node.
#[derive(Debug, Clone, PartialEq)]
pub struct FileSource {
    path: PathBuf,
}

impl FileSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl CurrentSource for FileSource {
    fn read(&mut self) -> Result<f64, TelemetryError> {
        let err = |reason: String| TelemetryError::SourceRead {
            source_name: self.path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(&self.path).map_err(|e| err(e.to_string()))?;
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| err(format!("not a number: {:?}", text.trim())))?;
        if !v.is_finite() || v < 0.0 {
            return Err(err(format!("invalid current {v}")));
        }
        Ok(v)
    }
}

impl<S: CurrentSource + ?Sized> CurrentSource for Box<S> {
    fn read(&mut self) -> Result<f64, TelemetryError> {
        (**self).read()
    }
}

/// Shared phase flag: one writer (the pipeline), read by the sampler.
#[derive(Debug, Clone, Default)]
pub struct PhaseMarker(Arc<AtomicU8>);

impl PhaseMarker {
    pub fn new(phase: Phase) -> Self {
        Self(Arc::new(AtomicU8::new(phase as u8)))
    }

    pub fn set(&self, phase: Phase) {
        self.0.store(phase as u8, Ordering::Release);
    }

    pub fn get(&self) -> Phase {
        Phase::from_u8(self.0.load(Ordering::Acquire))
    }
}

/// Sample recorder, driven either manually through [`Sampler::sample_at`]
/// or from a thread via [`Sampler::spawn`].
pub struct Sampler<S> {
    source: S,
    marker: PhaseMarker,
    samples: Vec<TelemetrySample>,
    skipped: usize,
}

impl<S: CurrentSource> Sampler<S> {
    pub fn new(source: S, marker: PhaseMarker) -> Self {
        Self {
            source,
            marker,
            samples: Vec::new(),
            skipped: 0,
        }
    }

    /// Take one reading tagged with the current phase. A failed read is
    /// logged and skipped.
    pub fn sample_at(&mut self, timestamp_ms: u64) {
        let phase = self.marker.get();
        match self.source.read() {
            Ok(current_ma) => self.samples.push(TelemetrySample {
                timestamp_ms,
                phase,
                current_ma,
            }),
            Err(e) => {
                self.skipped += 1;
                log::warn!("telemetry sample at {timestamp_ms} ms skipped: {e}");
            }
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn samples(&self) -> &[TelemetrySample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TelemetrySample> {
        self.samples
    }
}

impl<S: CurrentSource + 'static> Sampler<S> {
    /// Sample every `period` on a background thread until
    /// [`SamplerHandle::stop`].
    pub fn spawn(self, period: Duration) -> Result<SamplerHandle, TelemetryError> {
        if period < Duration::from_millis(1) {
            return Err(TelemetryError::InvalidPeriod);
        }
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let mut sampler = self;
        let thread = thread::spawn(move || {
            let start = Instant::now();
            let mut tick: u32 = 0;
            while !flag.load(Ordering::Acquire) {
                sampler.sample_at(start.elapsed().as_millis() as u64);
                tick += 1;
                let next = start + period * tick;
                if let Some(wait) = next.checked_duration_since(Instant::now()) {
                    thread::park_timeout(wait);
                }
            }
            (sampler.samples, sampler.skipped)
        });
        Ok(SamplerHandle { stop, thread })
    }
}

pub struct SamplerHandle {
    stop: Arc<AtomicBool>,
    thread: JoinHandle<(Vec<TelemetrySample>, usize)>,
}

impl SamplerHandle {
    /// Stop sampling and return the samples plus the number of skipped
    /// reads.
    pub fn stop(self) -> (Vec<TelemetrySample>, usize) {
        self.stop.store(true, Ordering::Release);
        self.thread.thread().unpark();
        self.thread.join().expect("sampler thread panicked")
    }
}

/// Arithmetic mean of `current_ma` over samples tagged `phase`.
pub fn mean_current(samples: &[TelemetrySample], phase: Phase) -> Result<f64, TelemetryError> {
    let (sum, n) = samples
        .iter()
        .filter(|s| s.phase == phase)
        .fold((0.0, 0usize), |(sum, n), s| (sum + s.current_ma, n + 1));
    if n == 0 {
        return Err(TelemetryError::NoSamples(phase));
    }
    Ok(sum / n as f64)
}

pub fn mean_inference_current(samples: &[TelemetrySample]) -> Result<f64, TelemetryError> {
    mean_current(samples, Phase::Inference).map_err(|_| TelemetryError::NoInferenceSamples)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> TelemetryError + '_ {
    move |e| TelemetryError::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Header `timestamp_ms,phase,current_mA`, one row per sample.
pub fn write_telemetry_csv(samples: &[TelemetrySample], path: &Path) -> Result<(), TelemetryError> {
    let err = csv_err(path);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(&err)?;
    w.write_record(CSV_HEADER).map_err(&err)?;
    for s in samples {
        w.serialize(s).map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn read_telemetry_csv(path: &Path) -> Result<Vec<TelemetrySample>, TelemetryError> {
    let err = csv_err(path);
    let mut r = csv::Reader::from_path(path).map_err(&err)?;
    let header = r.headers().map_err(&err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(TelemetryError::Csv {
            path: path.to_path_buf(),
            reason: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().collect::<Result<_, _>>().map_err(&err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Flaky {
        calls: usize,
    }

    impl CurrentSource for Flaky {
        fn read(&mut self) -> Result<f64, TelemetryError> {
            self.calls += 1;
            if self.calls.is_multiple_of(2) {
                Err(TelemetryError::SourceRead {
                    source_name: "flaky".into(),
                    reason: "even call".into(),
                })
            } else {
                Ok(1000.0)
            }
        }
    }

    fn sample(t: u64, phase: Phase, c: f64) -> TelemetrySample {
        TelemetrySample {
            timestamp_ms: t,
            phase,
            current_ma: c,
        }
    }

    #[test]
    fn constant_source_and_tagging() {
        let marker = PhaseMarker::new(Phase::Idle);
        let mut s = Sampler::new(ConstantSource(2548.0), marker.clone());
        for i in 0..10 {
            if i == 5 {
                marker.set(Phase::Inference);
            }
            s.sample_at(i * 100);
        }
        let v = s.into_samples();
        assert_eq!(v.len(), 10);
        assert!(v.iter().all(|x| x.current_ma == 2548.0));
        assert!(v[..5].iter().all(|x| x.phase == Phase::Idle));
        assert!(v[5..].iter().all(|x| x.phase == Phase::Inference));
    }

    #[test]
    fn failed_reads_are_skipped() {
        let mut s = Sampler::new(Flaky { calls: 0 }, PhaseMarker::default());
        for i in 0..10 {
            s.sample_at(i);
        }
        assert_eq!(s.samples().len(), 5);
        assert_eq!(s.skipped(), 5);
    }

    #[test]
    fn threaded_sampling() {
        let marker = PhaseMarker::new(Phase::Load);
        let h = Sampler::new(ConstantSource(5.0), marker.clone())
            .spawn(Duration::from_millis(2))
            .unwrap();
        thread::sleep(Duration::from_millis(30));
        marker.set(Phase::Inference);
        thread::sleep(Duration::from_millis(30));
        let (v, skipped) = h.stop();
        assert_eq!(skipped, 0);
        assert!(v.len() >= 2);
        assert!(v.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
        assert_eq!(v[0].phase, Phase::Load);
        assert!(v.iter().any(|s| s.phase == Phase::Inference));
        assert!(matches!(
            Sampler::new(ConstantSource(1.0), marker).spawn(Duration::ZERO),
            Err(TelemetryError::InvalidPeriod)
        ));
    }

    #[test]
    fn file_source() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("current");
        std::fs::write(&p, "2548\n").unwrap();
        let mut src = FileSource::new(&p);
        assert_eq!(src.read().unwrap(), 2548.0);
        std::fs::write(&p, "3000").unwrap();
        assert_eq!(src.read().unwrap(), 3000.0);
        std::fs::write(&p, "abc").unwrap();
        assert!(src.read().is_err());
        std::fs::remove_file(&p).unwrap();
        assert!(src.read().is_err());
    }

    #[test]
    fn means() {
        let v = [
            sample(0, Phase::Inference, 3000.0),
            sample(1, Phase::Inference, 3200.0),
            sample(2, Phase::Inference, 3400.0),
        ];
        assert_eq!(mean_inference_current(&v).unwrap(), 3200.0);
        let idle = [sample(0, Phase::Idle, 1.0)];
        assert!(matches!(
            mean_inference_current(&idle),
            Err(TelemetryError::NoInferenceSamples)
        ));
        let mixed = [
            sample(0, Phase::Idle, 9999.0),
            sample(1, Phase::Inference, 2548.0),
            sample(2, Phase::Inference, 2548.0),
        ];
        assert_eq!(mean_inference_current(&mixed).unwrap(), 2548.0);
        assert_eq!(mean_current(&mixed, Phase::Idle).unwrap(), 9999.0);
    }

    #[test]
    fn csv_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_telemetry_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "timestamp_ms,phase,current_mA\n");
        let v = vec![
            sample(0, Phase::Idle, 100.0),
            sample(100, Phase::Load, 1500.0),
            sample(200, Phase::Inference, 2548.0),
        ];
        write_telemetry_csv(&v, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(3), Some("200,inference,2548.0"));
        assert_eq!(read_telemetry_csv(&p).unwrap(), v);
    }

    fn arb_samples() -> impl Strategy<Value = Vec<TelemetrySample>> {
        prop::collection::vec((0u64..1000, 0u8..3, 0u32..10_000), 0..40).prop_map(|v| {
            let mut t = 0;
            v.into_iter()
                .map(|(dt, p, c)| {
                    t += dt;
                    sample(t, Phase::from_u8(p), c as f64)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn constant_mean_is_exact(c in 0u32..100_000, n in 1usize..500) {
            let v: Vec<_> = (0..n as u64).map(|t| sample(t, Phase::Inference, c as f64)).collect();
            prop_assert_eq!(mean_inference_current(&v).unwrap(), c as f64);
        }

        #[test]
        fn idle_samples_do_not_move_the_mean(v in arb_samples(), extra in prop::collection::vec(0u32..10_000, 1..10)) {
            let before = mean_inference_current(&v).ok();
            let mut w = v.clone();
            w.extend(extra.iter().map(|&c| sample(u64::MAX, Phase::Idle, c as f64)));
            prop_assert_eq!(mean_inference_current(&w).ok(), before);
        }

        #[test]
        fn csv_roundtrip(v in arb_samples()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.csv");
            write_telemetry_csv(&v, &p).unwrap();
            prop_assert_eq!(read_telemetry_csv(&p).unwrap(), v);
        }
    }
}
