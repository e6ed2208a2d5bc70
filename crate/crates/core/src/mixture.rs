//! Multi-task sampling rates and the sampler that draws from them.

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::{Error, Result};

/// Size limit used by temperature mixing unless configured otherwise.
pub const DEFAULT_TEMPERATURE_LIMIT: u64 = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingStrategy {
    /// Rates proportional to `min(e_n, k)`.
    ExamplesProportional { k: u64 },
    /// Examples-proportional rates raised to `1/t` and renormalized.
    Temperature { t: f64, k: u64 },
    Equal,
}

impl MixingStrategy {
    pub fn temperature(t: f64) -> Self {
        MixingStrategy::Temperature {
            t,
            k: DEFAULT_TEMPERATURE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTask {
    pub name: String,
    /// Number of examples, or the artificial size of an unlabeled stream.
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub tasks: Vec<MixtureTask>,
    pub strategy: MixingStrategy,
}

impl MixtureSpec {
    pub fn new(tasks: Vec<MixtureTask>, strategy: MixingStrategy) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Parameter("mixture needs at least one task".into()));
        }
        if let Some(t) = tasks.iter().find(|t| t.size == 0) {
            return Err(Error::Parameter(format!("task '{}' has no examples", t.name)));
        }
        match strategy {
            MixingStrategy::ExamplesProportional { k } | MixingStrategy::Temperature { k, .. }
                if k == 0 =>
            {
                return Err(Error::Parameter("size limit K must be at least 1".into()));
            }
            MixingStrategy::Temperature { t, .. } if !(t >= 1.0 && t.is_finite()) => {
                return Err(Error::Parameter(format!("temperature {t} must be >= 1")));
            }
            _ => {}
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|u| u.name == t.name) {
                return Err(Error::Parameter(format!("task '{}' listed twice", t.name)));
            }
        }
        Ok(MixtureSpec { tasks, strategy })
    }

    /// Convenience constructor from `(name, size)` pairs.
    pub fn from_sizes(sizes: &[(&str, u64)], strategy: MixingStrategy) -> Result<Self> {
        let tasks = sizes
            .iter()
            .map(|(n, s)| MixtureTask {
                name: n.to_string(),
                size: *s,
            })
            .collect();
        MixtureSpec::new(tasks, strategy)
    }

    pub fn rates(&self) -> Vec<f64> {
        mixing_rates(self)
    }

    /// Sizes after applying the limit K (unchanged for equal mixing).
    pub fn capped_sizes(&self) -> Vec<u64> {
        let k = match self.strategy {
            MixingStrategy::ExamplesProportional { k } | MixingStrategy::Temperature { k, .. } => k,
            MixingStrategy::Equal => u64::MAX,
        };
        self.tasks.iter().map(|t| t.size.min(k)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }
}

fn normalize(w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Probability of drawing each task.
pub fn mixing_rates(spec: &MixtureSpec) -> Vec<f64> {
    let capped = || spec.capped_sizes().into_iter().map(|s| s as f64).collect();
    match spec.strategy {
        MixingStrategy::ExamplesProportional { .. } => normalize(capped()),
        MixingStrategy::Temperature { t, .. } => {
            normalize(normalize(capped()).into_iter().map(|r| r.powf(1.0 / t)).collect())
        }
        MixingStrategy::Equal => vec![1.0 / spec.tasks.len() as f64; spec.tasks.len()],
    }
}

/// Draws a task index according to `rates`.
pub fn sample_task(rates: &[f64], rng: &mut Rng) -> usize {
    rng.categorical(rates)
}

/// The same mixture without `excluded`.
pub fn leave_one_out(spec: &MixtureSpec, excluded: &str) -> Result<MixtureSpec> {
    let i = spec
        .index_of(excluded)
        .ok_or_else(|| Error::Parameter(format!("unknown task '{excluded}'")))?;
    let mut tasks = spec.tasks.clone();
    tasks.remove(i);
    MixtureSpec::new(tasks, spec.strategy)
}

/// Walks `0..len` in a random order, reshuffling at every epoch.
#[derive(Debug, Clone)]
pub struct EpochOrder {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    rng: Rng,
}

impl EpochOrder {
    pub fn new(len: usize, rng: Rng) -> Self {
        let mut e = EpochOrder {
            order: (0..len).collect(),
            pos: 0,
            epoch: 0,
            rng,
        };
        e.rng.shuffle(&mut e.order);
        e
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_index(&mut self) -> Option<usize> {
        if self.order.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}

/// Draws (task, example) pairs: the task from the mixing rates, the example
/// from that task's own epoch order.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    rates: Vec<f64>,
    orders: Vec<EpochOrder>,
    rng: Rng,
}

impl MixtureSampler {
    /// `lengths[i]` is the number of stored examples of task `i`, which may
    /// differ from the size used for the rates.
    pub fn new(spec: &MixtureSpec, lengths: &[usize], seed: u64) -> Result<Self> {
        if lengths.len() != spec.tasks.len() {
            return Err(Error::Parameter(format!(
                "{} task lengths for {} tasks",
                lengths.len(),
                spec.tasks.len()
            )));
        }
        if let Some(i) = lengths.iter().position(|l| *l == 0) {
            return Err(Error::Data(format!("task '{}' has no stored examples", spec.tasks[i].name)));
        }
        let orders = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| EpochOrder::new(n, Rng::new(seed, 1 + i as u64)))
            .collect();
        Ok(MixtureSampler {
            rates: mixing_rates(spec),
            orders,
            rng: Rng::new(seed, 0),
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn next_pair(&mut self) -> (usize, usize) {
        let task = sample_task(&self.rates, &mut self.rng);
        let example = self.orders[task]
            .next_index()
            .expect("lengths checked nonzero");
        (task, example)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_visits_everything_once_per_epoch() {
        let mut e = EpochOrder::new(7, Rng::new(1, 0));
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|_| e.next_index().unwrap()).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
            assert_eq!(e.epoch(), epoch);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(MixtureSpec::from_sizes(&[], MixingStrategy::Equal).is_err());
        assert!(MixtureSpec::from_sizes(&[("a", 0)], MixingStrategy::Equal).is_err());
        assert!(MixtureSpec::from_sizes(&[("a", 1)], MixingStrategy::ExamplesProportional { k: 0 }).is_err());
        assert!(MixtureSpec::from_sizes(&[("a", 1)], MixingStrategy::temperature(0.5)).is_err());
        assert!(MixtureSpec::from_sizes(&[("a", 1), ("a", 2)], MixingStrategy::Equal).is_err());
    }
}
