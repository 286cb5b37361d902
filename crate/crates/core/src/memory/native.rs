//! Real-thread backend. Each cell is individually locked; atomic sections
//! take a global gate exclusively while plain accesses share it. Sequence
//! numbers are drawn while the touched cell is held, so sorting the
//! per-thread logs by sequence number yields a linearization of the run.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::task::Poll;

use super::{
    AtomicOps, BaseEvent, BaseKind, BaseObjectId, BaseWord, ExecutionTrace, Fault, LockEvent,
    LockKind, Port, Program, RunResult, RunStatus, Schedule, StepCx, TmDraft, TraceEvent,
    ATOMIC_BOUND,
};
use crate::model::{ProcessId, TObjectId, TmEvent, TxId};

struct Shared {
    cells: Vec<Mutex<BaseWord>>,
    gate: RwLock<()>,
    seq: AtomicU64,
}

impl Shared {
    fn next(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::SeqCst) + 1
    }

    fn cell(&self, o: BaseObjectId) -> Result<&Mutex<BaseWord>, Fault> {
        self.cells
            .get(o.index as usize)
            .ok_or(Fault::OutOfRange(o.index))
    }
}

struct NativePort<'a> {
    shared: &'a Shared,
    p: ProcessId,
    tx: TxId,
    op_open: bool,
    scope: bool,
    log: Vec<TraceEvent>,
}

impl NativePort<'_> {
    fn in_scope(&self) -> Result<(), Fault> {
        if self.op_open || self.scope {
            Ok(())
        } else {
            Err(Fault::OutsideOperation(self.p))
        }
    }

    fn base(
        &mut self,
        seq: u64,
        kind: BaseKind,
        object: Option<BaseObjectId>,
        value: Option<BaseWord>,
        nontrivial: bool,
        depth: u8,
    ) {
        self.log.push(TraceEvent::Base(BaseEvent {
            seq,
            process: self.p,
            tx: self.tx,
            kind,
            object,
            value,
            nontrivial,
            atomic_depth: depth,
        }));
    }

    fn access(
        &mut self,
        o: BaseObjectId,
        write: Option<BaseWord>,
        depth: u8,
    ) -> Result<BaseWord, Fault> {
        let mut cell = self.shared.cell(o)?.lock().expect("cell lock poisoned");
        let seq = self.shared.next();
        let w = match write {
            Some(w) => {
                *cell = w;
                w
            }
            None => *cell,
        };
        drop(cell);
        let kind = if write.is_some() {
            BaseKind::Write
        } else {
            BaseKind::Read
        };
        self.base(seq, kind, Some(o), Some(w), write.is_some(), depth);
        Ok(w)
    }
}

struct NativeAtomic<'a, 'b> {
    port: &'a mut NativePort<'b>,
    ops: usize,
}

impl AtomicOps for NativeAtomic<'_, '_> {
    fn read(&mut self, o: BaseObjectId) -> Result<BaseWord, Fault> {
        self.ops += 1;
        if self.ops > ATOMIC_BOUND {
            return Err(Fault::UnboundedAtomic);
        }
        self.port.access(o, None, 1)
    }

    fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Result<(), Fault> {
        self.ops += 1;
        if self.ops > ATOMIC_BOUND {
            return Err(Fault::UnboundedAtomic);
        }
        self.port.access(o, Some(w), 1).map(|_| ())
    }
}

impl Port for NativePort<'_> {
    fn process(&self) -> ProcessId {
        self.p
    }

    fn read(&mut self, o: BaseObjectId) -> Result<BaseWord, Fault> {
        self.in_scope()?;
        let _g = self.shared.gate.read().expect("gate poisoned");
        self.access(o, None, 0)
    }

    fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Result<(), Fault> {
        self.in_scope()?;
        let _g = self.shared.gate.read().expect("gate poisoned");
        self.access(o, Some(w), 0).map(|_| ())
    }

    fn atomic(
        &mut self,
        may_write: bool,
        body: &mut dyn FnMut(&mut dyn AtomicOps),
    ) -> Result<(), Fault> {
        self.in_scope()?;
        let shared = self.shared;
        let _g = shared.gate.write().expect("gate poisoned");
        let seq = shared.next();
        self.base(seq, BaseKind::AtomicBegin, None, None, may_write, 1);
        body(&mut NativeAtomic { port: self, ops: 0 });
        let seq = shared.next();
        self.base(seq, BaseKind::AtomicEnd, None, None, may_write, 1);
        Ok(())
    }

    fn emit_tm(&mut self, d: TmDraft) {
        let _g = self.shared.gate.read().expect("gate poisoned");
        let seq = self.shared.next();
        self.tx = d.tx;
        self.op_open = d.kind.is_invocation();
        self.log.push(TraceEvent::Tm(TmEvent {
            seq,
            kind: d.kind,
            tx: d.tx,
            process: self.p,
            object: d.object,
            value: d.value,
            outcome: d.outcome,
            writer: d.writer,
        }));
    }

    fn emit_lock(&mut self, kind: LockKind, objects: &[TObjectId]) {
        let _g = self.shared.gate.read().expect("gate poisoned");
        let seq = self.shared.next();
        self.log.push(TraceEvent::Lock(LockEvent {
            seq,
            process: self.p,
            tx: self.tx,
            kind,
            objects: objects.to_vec(),
        }));
    }

    fn set_scope(&mut self, open: bool) {
        self.scope = open;
    }

    fn set_tx(&mut self, tx: TxId) {
        self.tx = tx;
    }

    fn spin(&mut self) {
        std::thread::yield_now();
    }
}

/// Runs every program on its own thread over `size` fresh base objects.
pub fn run_native<P: Program + Send>(size: usize, procs: Vec<P>) -> RunResult {
    let shared = Shared {
        cells: (0..size).map(|_| Mutex::new(BaseWord::ZERO)).collect(),
        gate: RwLock::new(()),
        seq: AtomicU64::new(0),
    };
    let results: Vec<(Vec<TraceEvent>, Option<Fault>)> = std::thread::scope(|s| {
        let handles: Vec<_> = procs
            .into_iter()
            .enumerate()
            .map(|(i, mut prog)| {
                let shared = &shared;
                s.spawn(move || {
                    let mut port = NativePort {
                        shared,
                        p: ProcessId(i as u32),
                        tx: TxId::INIT,
                        op_open: false,
                        scope: false,
                        log: Vec::new(),
                    };
                    let fault = loop {
                        let mut cx = StepCx::new(&mut port);
                        match prog.step(&mut cx) {
                            Poll::Ready(Ok(())) => break None,
                            Poll::Ready(Err(f)) => break Some(f),
                            Poll::Pending if !cx.used() => {
                                break Some(Fault::Stalled(ProcessId(i as u32)))
                            }
                            Poll::Pending => {}
                        }
                    };
                    (port.log, fault)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut status = RunStatus::Complete;
    let mut events = Vec::new();
    for (i, (log, fault)) in results.into_iter().enumerate() {
        if let (Some(f), RunStatus::Complete) = (fault, &status) {
            status = RunStatus::Faulted {
                process: ProcessId(i as u32),
                fault: f.to_string(),
            };
        }
        events.extend(log);
    }
    events.sort_by_key(|e| e.seq());
    RunResult {
        trace: ExecutionTrace { events },
        status,
        schedule: Schedule::default(),
    }
}
