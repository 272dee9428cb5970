//! Test backends: scripted outputs, permanent failure, and a wrapper that
//! adds latency and counts concurrent calls.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

use super::{BackendError, BackendTask, VerifierBackend};

/// Returns queued outputs in order, then fails with a transport error.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    outputs: Mutex<VecDeque<String>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(outputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            outputs: Mutex::new(outputs.into_iter().map(Into::into).collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().len()
    }

    /// Rendered prompts seen so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }
}

impl VerifierBackend for ScriptedBackend {
    fn call(&self, _task: BackendTask<'_>, prompt: Option<&str>) -> Result<String, BackendError> {
        self.prompts.lock().push(prompt.unwrap_or_default().to_string());
        self.outputs
            .lock()
            .pop_front()
            .ok_or_else(|| BackendError::Transport("script exhausted".into()))
    }

    fn fingerprint(&self) -> String {
        "scripted".into()
    }
}

/// Every call fails at the transport level.
#[derive(Debug, Default, Clone, Copy)]
pub struct FailingBackend;

impl VerifierBackend for FailingBackend {
    fn call(&self, _task: BackendTask<'_>, _prompt: Option<&str>) -> Result<String, BackendError> {
        Err(BackendError::Transport("connection refused".into()))
    }

    fn fingerprint(&self) -> String {
        "failing".into()
    }

    fn is_ready(&self) -> bool {
        false
    }
}

/// Wraps a backend, sleeps a fixed time per call and records call counts
/// and the peak number of calls in flight.
#[derive(Debug)]
pub struct InstrumentedBackend<B> {
    inner: B,
    latency: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl<B: VerifierBackend> InstrumentedBackend<B> {
    pub fn new(inner: B, latency: Duration) -> Self {
        Self {
            inner,
            latency,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.peak.store(0, Ordering::SeqCst);
    }
}

impl<B: VerifierBackend> VerifierBackend for InstrumentedBackend<B> {
    fn call(&self, task: BackendTask<'_>, prompt: Option<&str>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let out = self.inner.call(task, prompt);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn needs_rendered_prompt(&self) -> bool {
        self.inner.needs_rendered_prompt()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn is_ready(&self) -> bool {
        self.inner.is_ready()
    }
}
