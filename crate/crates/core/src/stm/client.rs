use std::task::{ready, Poll};

use serde::{Deserialize, Serialize};

use super::{Begin, OpResult, StmLayout, TmOp, TxEngine, TxScript};
use crate::memory::{hash_state, Fault, Program, StepCx};
use crate::model::{TxId, TxStatus};

/// What happened to one transaction of a client.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxLog {
    pub tx: TxId,
    pub results: Vec<OpResult>,
    pub status: TxStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum ClientSt {
    NextTx,
    Begin(Begin),
    NextOp,
    Op(TmOp),
}

/// Runs a list of transaction scripts on one process. The `i`-th script of
/// process `p` runs as transaction `1 + p + n * i`. A script that leaves its
/// transaction live ends the process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxClient {
    engine: TxEngine,
    scripts: Vec<TxScript>,
    at: usize,
    op_at: usize,
    st: ClientSt,
    pub log: Vec<TxLog>,
}

impl TxClient {
    pub fn new(layout: StmLayout, scripts: Vec<TxScript>) -> Self {
        TxClient {
            engine: TxEngine::new(layout),
            scripts,
            at: 0,
            op_at: 0,
            st: ClientSt::NextTx,
            log: Vec::new(),
        }
    }

    pub fn tx_id(layout: &StmLayout, p: u32, i: usize) -> TxId {
        TxId(1 + p as u64 + layout.n as u64 * i as u64)
    }
}

impl Program for TxClient {
    fn state_hash(&self) -> Option<u64> {
        Some(hash_state(self))
    }

    fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        let p = cx.process();
        loop {
            match &mut self.st {
                ClientSt::NextTx => {
                    if self.at == self.scripts.len() {
                        return Poll::Ready(Ok(()));
                    }
                    let k = Self::tx_id(&self.engine.layout, p.0, self.at);
                    self.st = ClientSt::Begin(self.engine.begin(p, k)?);
                }
                ClientSt::Begin(b) => {
                    ready!(b.poll(&mut self.engine, cx))?;
                    let k = Self::tx_id(&self.engine.layout, p.0, self.at);
                    self.log.push(TxLog {
                        tx: k,
                        results: Vec::new(),
                        status: TxStatus::Live,
                    });
                    self.op_at = 0;
                    self.st = ClientSt::NextOp;
                }
                ClientSt::NextOp => {
                    let script = &self.scripts[self.at];
                    if self.op_at == script.ops.len() {
                        return Poll::Ready(Ok(()));
                    }
                    let k = Self::tx_id(&self.engine.layout, p.0, self.at);
                    self.st = ClientSt::Op(self.engine.op(k, script.ops[self.op_at])?);
                }
                ClientSt::Op(o) => {
                    let r = ready!(o.poll(&mut self.engine, cx))?;
                    let entry = self.log.last_mut().expect("begun transaction");
                    entry.results.push(r);
                    self.op_at += 1;
                    if r.ends_tx() {
                        entry.status = if r == OpResult::Commit {
                            TxStatus::Committed
                        } else {
                            TxStatus::Aborted
                        };
                        self.at += 1;
                        self.st = ClientSt::NextTx;
                    } else {
                        self.st = ClientSt::NextOp;
                    }
                }
            }
        }
    }
}
