//! Valence probing: what a solo reader sees after each prefix of an
//! uncontended writer's run, and where the writer protects its write set.

use serde::{Deserialize, Serialize};

use super::{Verdict, Witness};
use crate::memory::{Sim, StepError};
use crate::model::{ProcessId, TObjectId, Value};
use crate::stm::{OpResult, StmLayout, StmVariant, TxClient, TxScript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    /// The reader returns an old value.
    Zero,
    /// The reader returns the writer's value.
    One,
    /// The reader aborts or does not finish within its step bound.
    Bottom,
}

/// The probed writer `T0` on process 0 reads `rset` objects and then writes
/// `wset` objects. Write-set objects are `X0..`, read-set objects follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub variant: StmVariant,
    pub wset: u32,
    #[serde(default)]
    pub rset: u32,
}

const WRITER: ProcessId = ProcessId(0);
const READER: ProcessId = ProcessId(1);
const BOUND_FACTOR: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ValenceError {
    #[error("prefix {t} is past the end of the writer's {len}-step run")]
    NotAPrefix { t: usize, len: usize },
    #[error("object {0} is not probed")]
    UnknownObject(TObjectId),
    #[error("probe run failed: {0}")]
    Run(String),
}

impl Probe {
    pub fn new(variant: StmVariant, wset: u32) -> Self {
        Probe {
            variant,
            wset,
            rset: 0,
        }
    }

    pub fn with_rset(mut self, rset: u32) -> Self {
        self.rset = rset;
        self
    }

    fn layout(&self) -> StmLayout {
        StmLayout::new(self.variant, 2, (self.wset + self.rset).max(1))
    }

    /// The value the writer stores in `X_j`.
    pub fn new_value(&self, j: u32) -> Value {
        100 + j as Value
    }

    pub fn objects(&self) -> impl Iterator<Item = TObjectId> {
        (0..self.wset + self.rset).map(TObjectId)
    }

    fn writer(&self) -> TxClient {
        let reads: Vec<TObjectId> = (self.wset..self.wset + self.rset).map(TObjectId).collect();
        let writes: Vec<(TObjectId, Value)> = (0..self.wset)
            .map(|j| (TObjectId(j), self.new_value(j)))
            .collect();
        TxClient::new(self.layout(), vec![TxScript::canonic(&reads, &writes)])
    }

    fn sim(&self, j: TObjectId) -> Sim<TxClient> {
        let reader = TxClient::new(self.layout(), vec![TxScript::canonic(&[j], &[])]);
        Sim::new(self.layout().size(), vec![self.writer(), reader])
    }

    /// Steps in the writer's complete solo run.
    pub fn writer_steps(&self) -> Result<usize, ValenceError> {
        let mut sim = Sim::new(self.layout().size(), vec![self.writer()]);
        let mut n = 0;
        while !sim.is_done(WRITER) {
            sim.step(WRITER)
                .map_err(|e| ValenceError::Run(e.to_string()))?;
            n += 1;
        }
        Ok(n)
    }

    fn reader_bound(&self, j: TObjectId) -> Result<usize, ValenceError> {
        let reader = TxClient::new(self.layout(), vec![TxScript::canonic(&[j], &[])]);
        let mut sim = Sim::new(self.layout().size(), vec![reader]);
        let mut n = 0;
        while !sim.is_done(ProcessId(0)) {
            sim.step(ProcessId(0))
                .map_err(|e| ValenceError::Run(e.to_string()))?;
            n += 1;
        }
        Ok(BOUND_FACTOR * n.max(1))
    }
}

/// Runs `t` writer steps, then the reader of `j` solo.
pub fn classify_valence(probe: &Probe, t: usize, j: TObjectId) -> Result<Valence, ValenceError> {
    if j.0 >= probe.wset + probe.rset {
        return Err(ValenceError::UnknownObject(j));
    }
    let len = probe.writer_steps()?;
    if t > len {
        return Err(ValenceError::NotAPrefix { t, len });
    }
    let bound = probe.reader_bound(j)?;
    let mut sim = probe.sim(j);
    for _ in 0..t {
        sim.step(WRITER)
            .map_err(|e| ValenceError::Run(e.to_string()))?;
    }
    for _ in 0..bound {
        if sim.is_done(READER) {
            break;
        }
        if !sim.enabled().contains(&READER) {
            return Ok(Valence::Bottom);
        }
        match sim.step(READER) {
            Ok(()) => {}
            Err(StepError::Fault(_, f)) => return Err(ValenceError::Run(f.to_string())),
            Err(e) => return Err(ValenceError::Run(e.to_string())),
        }
    }
    let log = &sim.program(READER).log;
    Ok(match log.first().and_then(|l| l.results.first()) {
        Some(OpResult::Value { value, .. })
            if j.0 < probe.wset && *value == probe.new_value(j.0) =>
        {
            Valence::One
        }
        Some(OpResult::Value { .. }) => Valence::Zero,
        _ => Valence::Bottom,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValenceRow {
    pub t: usize,
    pub wset: Vec<Valence>,
    pub rset: Vec<Valence>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectReport {
    pub probe: Probe,
    /// Length of the writer's solo run.
    pub steps: usize,
    pub table: Vec<ValenceRow>,
    /// First prefix protecting the whole write set.
    pub protecting: Option<usize>,
    /// No prefix is 0-valent for one written object and 1-valent for another.
    pub no_mixed_prefix: bool,
    /// Along the run, no written object goes from 1-valent back to 0-valent.
    pub monotone: bool,
    /// Readers of read-set objects never abort or block.
    pub rset_free: bool,
    pub verdict: Verdict,
}

fn protects(table: &[ValenceRow], t: usize, j: usize) -> bool {
    let (a, b) = (table[t].wset[j], table[t + 1].wset[j]);
    (a == Valence::Zero && b == Valence::One) || a == Valence::Bottom || b == Valence::Bottom
}

/// Classifies every prefix for every probed object and looks for a prefix
/// `t > 0` that protects the whole write set.
pub fn find_protecting_prefix(probe: &Probe) -> Result<ProtectReport, ValenceError> {
    let steps = probe.writer_steps()?;
    let mut table = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let mut row = ValenceRow {
            t,
            wset: Vec::new(),
            rset: Vec::new(),
        };
        for x in probe.objects() {
            let v = classify_valence(probe, t, x)?;
            if x.0 < probe.wset {
                row.wset.push(v);
            } else {
                row.rset.push(v);
            }
        }
        table.push(row);
    }
    let w = probe.wset as usize;
    let protecting = if w == 0 {
        None
    } else {
        (1..steps).find(|&t| (0..w).all(|j| protects(&table, t, j)))
    };
    let no_mixed_prefix = table
        .iter()
        .all(|r| !(r.wset.contains(&Valence::Zero) && r.wset.contains(&Valence::One)));
    let monotone = (0..w).all(|j| {
        let mut seen_one = false;
        table.iter().all(|r| {
            seen_one |= r.wset[j] == Valence::One;
            !(seen_one && r.wset[j] == Valence::Zero)
        })
    });
    let rset_free = table.iter().all(|r| !r.rset.contains(&Valence::Bottom));
    let verdict = match (w, protecting) {
        (0, _) => Verdict::pass(Witness::None).with_note("empty write set"),
        (_, Some(t)) => Verdict::pass(Witness::events(vec![t])),
        (_, None) => {
            Verdict::fail(Witness::None).with_note("no prefix protects the whole write set")
        }
    };
    Ok(ProtectReport {
        probe: *probe,
        steps,
        table,
        protecting,
        no_mixed_prefix,
        monotone,
        rset_free,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const X0: TObjectId = TObjectId(0);

    #[test]
    fn ends_of_the_run_are_zero_and_one() {
        for v in StmVariant::ALL {
            let p = Probe::new(v, 2);
            let len = p.writer_steps().unwrap();
            for j in 0..2 {
                assert_eq!(
                    classify_valence(&p, 0, TObjectId(j)).unwrap(),
                    Valence::Zero,
                    "{v}"
                );
                assert_eq!(
                    classify_valence(&p, len, TObjectId(j)).unwrap(),
                    Valence::One,
                    "{v}"
                );
            }
        }
    }

    #[test]
    fn past_the_end_is_an_error() {
        let p = Probe::new(StmVariant::ProgRaw, 1);
        let len = p.writer_steps().unwrap();
        assert_eq!(
            classify_valence(&p, len + 1, X0),
            Err(ValenceError::NotAPrefix { t: len + 1, len })
        );
    }

    #[test]
    fn prog_raw_reader_aborts_while_the_lock_is_held() {
        let p = Probe::new(StmVariant::ProgRaw, 1);
        let len = p.writer_steps().unwrap();
        // The last write before the release leaves X0 written and locked.
        let mid: Vec<Valence> = (1..len)
            .map(|t| classify_valence(&p, t, X0).unwrap())
            .collect();
        assert!(mid.contains(&Valence::Bottom), "{mid:?}");
    }

    #[test]
    fn mcas_flips_at_one_step() {
        let r = find_protecting_prefix(&Probe::new(StmVariant::ProgMcas, 3)).unwrap();
        assert!(r.verdict.pass);
        let t = r.protecting.unwrap();
        assert!(r.table[t].wset.iter().all(|v| *v == Valence::Zero));
        assert!(r.table[t + 1].wset.iter().all(|v| *v == Valence::One));
        assert_eq!(t + 1, r.steps);
    }

    #[test]
    fn empty_write_set_is_vacuous() {
        let r = find_protecting_prefix(&Probe::new(StmVariant::ProgRaw, 0)).unwrap();
        assert!(r.verdict.pass);
        assert_eq!(r.protecting, None);
    }
}
