//! Read / update / write pipeline shared by the SGD and SGLD solvers.
//!
//! One reader streams blocks into a queue holding at most one block per
//! worker, every worker takes whole blocks off the queue, and an optional
//! writer snapshots the model every `every_blocks` finished blocks.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crossbeam_channel::unbounded;

use crate::dataset::{BlockedDataset, UserBlock};
use crate::error::{Error, Result};

pub(crate) trait BlockWorker: Send {
    /// Processes one block, returning the number of ratings visited.
    fn process(&mut self, block: &UserBlock) -> Result<u64>;
}

pub(crate) struct SnapshotHook<'a> {
    pub every_blocks: usize,
    pub write: &'a (dyn Fn() -> Result<()> + Sync),
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EpochOutcome {
    pub ratings: u64,
    pub seconds: f64,
}

pub(crate) fn run_epoch<W: BlockWorker>(
    data: &BlockedDataset,
    workers: &mut [W],
    snapshot: Option<&SnapshotHook>,
) -> Result<EpochOutcome> {
    assert!(!workers.is_empty());
    let start = Instant::now();
    let stream = data.stream(workers.len())?;
    let rx = stream.receiver();

    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let ratings = AtomicU64::new(0);
    let blocks = AtomicU64::new(0);
    let fail = |e: Error| {
        abort.store(true, Ordering::Relaxed);
        failure.lock().unwrap().get_or_insert(e);
    };

    std::thread::scope(|s| {
        let (snap_tx, snap_rx) = unbounded::<u64>();
        let writer = snapshot.map(|hook| {
            let fail = &fail;
            s.spawn(move || {
                for _ in snap_rx {
                    if let Err(e) = (hook.write)() {
                        fail(e);
                        break;
                    }
                }
            })
        });

        let handles: Vec<_> = workers
            .iter_mut()
            .map(|worker| {
                let rx = rx.clone();
                let snap_tx = snap_tx.clone();
                let (abort, fail, ratings, blocks) = (&abort, &fail, &ratings, &blocks);
                s.spawn(move || {
                    for block in rx.iter() {
                        if abort.load(Ordering::Relaxed) {
                            break;
                        }
                        let result = block.and_then(|b| worker.process(&b));
                        match result {
                            Ok(n) => {
                                ratings.fetch_add(n, Ordering::Relaxed);
                                let done = blocks.fetch_add(1, Ordering::Relaxed) + 1;
                                if let Some(hook) = snapshot {
                                    if hook.every_blocks > 0 && done % hook.every_blocks as u64 == 0 {
                                        let _ = snap_tx.send(done);
                                    }
                                }
                            }
                            Err(e) => {
                                fail(e);
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        drop(snap_tx);
        for h in handles {
            if h.join().is_err() {
                fail(Error::WorkerPanic);
            }
        }
        if let Some(w) = writer {
            if w.join().is_err() {
                fail(Error::WorkerPanic);
            }
        }
    });
    drop(rx);
    drop(stream);

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(EpochOutcome {
        ratings: ratings.into_inner(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
