use super::{TcnError, INPUT_LEN};

/// Ring buffer of vital samples, one per channel, sampled every 30 s.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalSeries {
    capacity: usize,
    channels: Vec<Vec<f64>>,
    /// Slot the next sample goes to.
    head: usize,
    filled: usize,
}

impl VitalSeries {
    pub const PERIOD_S: f64 = 30.0;

    pub fn new(n_channels: usize, capacity: usize) -> Self {
        assert!(n_channels > 0 && capacity > 0, "empty vital series");
        Self { capacity, channels: vec![vec![0.0; capacity]; n_channels], head: 0, filled: 0 }
    }

    /// Four channels of four hours.
    pub fn standard() -> Self {
        Self::new(4, INPUT_LEN)
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.capacity
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.filled = 0;
    }

    /// Appends one sample per channel, evicting the oldest when full.
    pub fn push(&mut self, sample: &[f64]) -> Result<(), TcnError> {
        if sample.len() != self.channels.len() {
            return Err(TcnError::Shape(format!("{} values for {} channels", sample.len(), self.channels.len())));
        }
        if let Some(c) = sample.iter().position(|v| !v.is_finite()) {
            return Err(TcnError::Value(format!("channel {c} is {}", sample[c])));
        }
        for (ch, &v) in self.channels.iter_mut().zip(sample) {
            ch[self.head] = v;
        }
        self.head = (self.head + 1) % self.capacity;
        self.filled = (self.filled + 1).min(self.capacity);
        Ok(())
    }

    /// Most recent sample of every channel.
    pub fn latest(&self) -> Option<Vec<f64>> {
        (self.filled > 0).then(|| {
            let i = (self.head + self.capacity - 1) % self.capacity;
            self.channels.iter().map(|c| c[i]).collect()
        })
    }

    /// Oldest-first copy of every channel; only available once full.
    pub fn window(&self) -> Result<Vec<Vec<f32>>, TcnError> {
        if !self.is_full() {
            return Err(TcnError::NotReady { filled: self.filled, needed: self.capacity });
        }
        Ok(self
            .channels
            .iter()
            .map(|c| c[self.head..].iter().chain(&c[..self.head]).map(|&v| v as f32).collect())
            .collect())
    }
}
