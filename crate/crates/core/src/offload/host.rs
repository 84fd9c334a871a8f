//! Host worker: owns the appearance tier and runs forwarding and lazy
//! updates in submission order.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::timeline::Timeline;
use crate::optim::{AccessReport, GradBuffer, ParamBlock};
use crate::real::Real;

/// One of the two gradient staging buffers.
#[derive(Debug)]
pub struct GradSlot<T> {
    pub id: u8,
    /// Iteration whose gradients the buffer holds.
    pub iteration: u64,
    pub grads: GradBuffer<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotEvent {
    /// The device started writing the buffer.
    Write,
    /// A host job started or finished reading it.
    ReadStart,
    ReadEnd,
    /// The lazy update finished and handed the buffer back.
    Release,
}

/// Ordered record of buffer ownership, for checking the double-buffer
/// protocol.
pub type SlotLog = Arc<Mutex<Vec<(u8, u64, SlotEvent)>>>;

/// Random sleeps before each stage, to shake out ordering bugs in tests.
#[derive(Debug)]
pub struct Jitter {
    rng: ChaCha8Rng,
    max_us: u64,
}

impl Jitter {
    pub fn new(seed: u64, max_us: u64) -> Option<Self> {
        (max_us > 0).then(|| Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_us,
        })
    }

    pub fn pause(this: &mut Option<Self>) {
        if let Some(j) = this {
            let us = j.rng.random_range(0..=j.max_us);
            std::thread::sleep(Duration::from_micros(us));
        }
    }
}

/// Forwarded rows captured for the coherence check.
#[derive(Debug)]
pub struct Forwarded<T> {
    pub ids: Vec<u32>,
    pub rows: Vec<T>,
}

pub struct HostSide<T> {
    pub block: ParamBlock<T>,
    pub pending: Option<GradSlot<T>>,
    /// Steps applied to the block so far.
    pub applied: u64,
    pub access: AccessReport,
    pub forwarded: Option<Forwarded<T>>,
    /// First invariant violation found in verify mode.
    pub error: Option<String>,
    pub free: Sender<GradSlot<T>>,
    pub timeline: Timeline,
    pub slot_log: SlotLog,
    pub jitter: Option<Jitter>,
}

impl<T: Real> HostSide<T> {
    pub fn log(&self, slot: &GradSlot<T>, ev: SlotEvent) {
        self.slot_log.lock().unwrap().push((slot.id, slot.iteration, ev));
    }
}

type Job<T> = Box<dyn FnOnce(&mut HostSide<T>) + Send>;

/// Runs host jobs either inline, as they are submitted, or in FIFO order on a
/// dedicated thread.
pub enum Executor<T> {
    Inline(Option<Box<HostSide<T>>>),
    Worker {
        tx: Option<Sender<Job<T>>>,
        handle: Option<JoinHandle<HostSide<T>>>,
    },
}

impl<T: Real> Executor<T> {
    pub fn inline(host: HostSide<T>) -> Self {
        Executor::Inline(Some(Box::new(host)))
    }

    pub fn spawn(host: HostSide<T>) -> Self {
        let (tx, rx): (Sender<Job<T>>, Receiver<Job<T>>) = mpsc::channel();
        let handle = std::thread::Builder::new()
            .name("host-worker".into())
            .spawn(move || {
                let mut host = host;
                for job in rx {
                    Jitter::pause(&mut host.jitter);
                    job(&mut host);
                }
                host
            })
            .expect("spawn host worker");
        Executor::Worker {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn submit(&mut self, job: impl FnOnce(&mut HostSide<T>) + Send + 'static) {
        match self {
            Executor::Inline(h) => job(h.as_mut().expect("executor is running")),
            Executor::Worker { tx, .. } => tx
                .as_ref()
                .expect("executor is running")
                .send(Box::new(job))
                .expect("host worker stopped"),
        }
    }

    /// Runs `f` after every job submitted so far and waits for its result.
    pub fn call<R: Send + 'static>(&mut self, f: impl FnOnce(&mut HostSide<T>) -> R + Send + 'static) -> R {
        match self {
            Executor::Inline(h) => f(h.as_mut().expect("executor is running")),
            Executor::Worker { .. } => {
                let (rtx, rrx) = mpsc::channel();
                self.submit(move |h| {
                    let _ = rtx.send(f(h));
                });
                rrx.recv().expect("host worker stopped")
            }
        }
    }

    /// Stops the worker and returns the host state.
    pub fn into_host(mut self) -> HostSide<T> {
        match &mut self {
            Executor::Inline(h) => *h.take().expect("executor is running"),
            Executor::Worker { tx, handle } => {
                tx.take();
                handle.take().unwrap().join().expect("host worker panicked")
            }
        }
    }
}

impl<T> Drop for Executor<T> {
    fn drop(&mut self) {
        if let Executor::Worker { tx, handle } = self {
            tx.take();
            if let Some(h) = handle.take() {
                let _ = h.join();
            }
        }
    }
}
