use std::fmt;
use std::io::Write;

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Biased,
    Debiased,
    Erm,
    Reweighted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Biased => "biased",
            Phase::Debiased => "debiased",
            Phase::Erm => "erm",
            Phase::Reweighted => "reweighted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub phase: Phase,
    /// Mean (weighted) minibatch loss.
    pub loss: f64,
    pub lr: f64,
}

/// Training-set group losses recorded once per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct GapEntry {
    pub step: usize,
    pub phase: Phase,
    pub aligned_loss: Option<f64>,
    pub conflicting_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub gaps: Vec<GapEntry>,
}

impl TrainingLog {
    pub fn extend(&mut self, other: TrainingLog) {
        self.entries.extend(other.entries);
        self.gaps.extend(other.gaps);
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }

    /// `step,phase,loss,lr` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,phase,loss,lr")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{}", e.step, e.phase, e.loss, e.lr)?;
        }
        Ok(())
    }
}
