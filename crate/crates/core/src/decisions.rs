//! Discrete choices made during a forward pass (cluster labels, window
//! ranks, distance masks).
//!
//! None of these are differentiable. Recording them at one input and
//! replaying them at nearby inputs lets finite differences probe the smooth
//! part of the computation.

use crate::error::{Result, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Labels(Vec<usize>),
    Ranks(Vec<usize>),
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, Default)]
enum Mode {
    #[default]
    Free,
    Record,
    Replay,
}

#[derive(Debug, Clone, Default)]
pub struct Decisions {
    mode: Mode,
    log: Vec<Decision>,
    cursor: usize,
}

impl Decisions {
    /// Compute every decision, keep nothing.
    pub fn free() -> Self {
        Self::default()
    }

    /// Compute every decision and keep a log of them.
    pub fn record() -> Self {
        Self {
            mode: Mode::Record,
            ..Self::default()
        }
    }

    /// Reuse a previously recorded log, in order.
    pub fn replay(log: Vec<Decision>) -> Self {
        Self {
            mode: Mode::Replay,
            log,
            cursor: 0,
        }
    }

    pub fn into_log(self) -> Vec<Decision> {
        self.log
    }

    fn next(&mut self, compute: impl FnOnce() -> Result<Decision>) -> Result<Decision> {
        match self.mode {
            Mode::Free => compute(),
            Mode::Record => {
                let d = compute()?;
                self.log.push(d.clone());
                Ok(d)
            }
            Mode::Replay => {
                let d = self.log.get(self.cursor).cloned().ok_or_else(|| {
                    TensorError::contract("replayed decision log is exhausted")
                })?;
                self.cursor += 1;
                Ok(d)
            }
        }
    }

    pub fn labels(&mut self, compute: impl FnOnce() -> Result<Vec<usize>>) -> Result<Vec<usize>> {
        match self.next(|| compute().map(Decision::Labels))? {
            Decision::Labels(l) => Ok(l),
            d => Err(TensorError::contract(format!("expected labels, replayed {}", kind(&d)))),
        }
    }

    pub fn ranks(&mut self, compute: impl FnOnce() -> Result<Vec<usize>>) -> Result<Vec<usize>> {
        match self.next(|| compute().map(Decision::Ranks))? {
            Decision::Ranks(r) => Ok(r),
            d => Err(TensorError::contract(format!("expected ranks, replayed {}", kind(&d)))),
        }
    }

    pub fn mask(&mut self, compute: impl FnOnce() -> Result<Vec<bool>>) -> Result<Vec<bool>> {
        match self.next(|| compute().map(Decision::Mask))? {
            Decision::Mask(m) => Ok(m),
            d => Err(TensorError::contract(format!("expected mask, replayed {}", kind(&d)))),
        }
    }
}

fn kind(d: &Decision) -> &'static str {
    match d {
        Decision::Labels(_) => "labels",
        Decision::Ranks(_) => "ranks",
        Decision::Mask(_) => "mask",
    }
}
