//! Duty-cycle power budget and battery lifetime.
//!
//! Average power is the idle floor plus each periodic task's energy spread
//! over its period; lifetime is stored energy over average power.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("profile: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("profile: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub period_s: f64,
    pub energy_uj: f64,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, period_s: f64, energy_uj: f64) -> Result<Self, PowerError> {
        let t = Self { name: name.into(), period_s, energy_uj };
        t.validate()?;
        Ok(t)
    }

    /// Task drawing `power_mw` for `duration_ms` per run.
    pub fn from_power(
        name: impl Into<String>,
        period_s: f64,
        power_mw: f64,
        duration_ms: f64,
    ) -> Result<Self, PowerError> {
        Self::new(name, period_s, power_mw * duration_ms)
    }

    fn validate(&self) -> Result<(), PowerError> {
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return Err(PowerError::Parameter(format!("task {}: period must be positive", self.name)));
        }
        if !(self.energy_uj >= 0.0 && self.energy_uj.is_finite()) {
            return Err(PowerError::Parameter(format!("task {}: energy must be >= 0", self.name)));
        }
        Ok(())
    }

    /// Mean power in mW.
    pub fn mean_power_mw(&self) -> f64 {
        self.energy_uj / 1000.0 / self.period_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub idle_power_mw: f64,
    pub battery_capacity_mah: f64,
    pub battery_voltage_v: f64,
    /// Name of the task whose period follows the inference stride.
    #[serde(default)]
    pub nn_task: Option<String>,
    #[serde(rename = "task", default)]
    pub tasks: Vec<TaskSpec>,
}

pub const NOMINAL_VOLTAGE_V: f64 = 3.7;
pub const DEFAULT_CAPACITY_MAH: f64 = 100.0;

impl PowerProfile {
    pub fn validate(&self) -> Result<(), PowerError> {
        if !(self.idle_power_mw >= 0.0 && self.idle_power_mw.is_finite()) {
            return Err(PowerError::Parameter("idle power must be >= 0".into()));
        }
        if !(self.battery_capacity_mah > 0.0 && self.battery_capacity_mah.is_finite()) {
            return Err(PowerError::Parameter("battery capacity must be positive".into()));
        }
        if !(self.battery_voltage_v > 0.0 && self.battery_voltage_v.is_finite()) {
            return Err(PowerError::Parameter("battery voltage must be positive".into()));
        }
        for t in &self.tasks {
            t.validate()?;
        }
        if let Some(n) = &self.nn_task {
            if !self.tasks.iter().any(|t| &t.name == n) {
                return Err(PowerError::Parameter(format!("inference task {n:?} not in task list")));
            }
        }
        Ok(())
    }

    /// Periodic task profile of the wearable, with inference every
    /// `stride_min` minutes.
    pub fn reference(stride_min: f64) -> Result<Self, PowerError> {
        let p = Self {
            idle_power_mw: 0.77,
            battery_capacity_mah: DEFAULT_CAPACITY_MAH,
            battery_voltage_v: NOMINAL_VOLTAGE_V,
            nn_task: Some("NN".into()),
            tasks: vec![
                TaskSpec::new("FIFO", 2.0, 144.6)?,
                TaskSpec::new("B. Temp", 120.0, 108.0)?,
                TaskSpec::new("DSP HR", 2.0, 18.8)?,
                TaskSpec::new("DSP RR", 30.0, 18.8)?,
                TaskSpec::new("NN", stride_min * 60.0, 1290.0)?,
                TaskSpec::new("Adv.", 1.0, 14.0)?,
                TaskSpec::new("TX 1B", 120.0, 20.9)?,
            ],
        };
        p.validate()?;
        Ok(p)
    }

    /// The same profile with the inference task every `stride_min` minutes.
    pub fn with_stride(&self, stride_min: f64) -> Result<Self, PowerError> {
        if !(stride_min > 0.0) {
            return Err(PowerError::Parameter(format!("stride must be positive, got {stride_min}")));
        }
        let name =
            self.nn_task.as_ref().ok_or_else(|| PowerError::Parameter("profile has no inference task".into()))?;
        let mut p = self.clone();
        for t in &mut p.tasks {
            if &t.name == name {
                t.period_s = stride_min * 60.0;
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// The profile with the inference task removed.
    pub fn without_inference(&self) -> Self {
        let mut p = self.clone();
        if let Some(n) = p.nn_task.take() {
            p.tasks.retain(|t| t.name != n);
        }
        p
    }

    pub fn from_toml(s: &str) -> Result<Self, PowerError> {
        let p: Self = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> Result<String, PowerError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, PowerError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Average power in mW.
pub fn average_power(p: &PowerProfile) -> Result<f64, PowerError> {
    p.validate()?;
    Ok(p.idle_power_mw + p.tasks.iter().map(TaskSpec::mean_power_mw).sum::<f64>())
}

/// Battery lifetime in hours.
pub fn battery_lifetime(p: &PowerProfile) -> Result<f64, PowerError> {
    let w = average_power(p)?;
    if w <= 0.0 {
        return Err(PowerError::Parameter("average power is zero".into()));
    }
    Ok(p.battery_capacity_mah * p.battery_voltage_v / w)
}

/// Lifetime (hours) for each inference stride (minutes).
pub fn lifetime_curve(p: &PowerProfile, strides_min: &[f64]) -> Result<Vec<(f64, f64)>, PowerError> {
    strides_min.iter().map(|&s| Ok((s, battery_lifetime(&p.with_stride(s)?)?))).collect()
}

/// Sleep-power components in µW.
pub const SLEEP_COMPONENTS_UW: [(&str, f64); 3] =
    [("nRF5340 sleep", 88.0), ("MAX77654 quiescent", 58.0), ("LSM6DSV16BX sleep", 6.0)];
pub const ACCEL_ACTIVE_UW: f64 = 370.0;

/// Sum of the sleep components in mW.
pub fn sleep_power_mw() -> f64 {
    SLEEP_COMPONENTS_UW.iter().map(|c| c.1).sum::<f64>() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bare(idle: f64, tasks: Vec<TaskSpec>) -> PowerProfile {
        PowerProfile { idle_power_mw: idle, battery_capacity_mah: 100.0, battery_voltage_v: 3.7, nn_task: None, tasks }
    }

    #[test]
    fn idle_only() {
        assert_eq!(average_power(&bare(0.77, vec![])).unwrap(), 0.77);
    }

    #[test]
    fn single_task() {
        let p = bare(0.0, vec![TaskSpec::new("t", 1.0, 100.0).unwrap()]);
        assert!((average_power(&p).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn one_milliwatt_lasts_370_hours() {
        let p = bare(1.0, vec![]);
        assert!((battery_lifetime(&p).unwrap() - 370.0).abs() < 1e-12);
        assert!(battery_lifetime(&bare(0.0, vec![])).is_err());
    }

    #[test]
    fn reference_profile_at_half_hour() {
        let p = PowerProfile::reference(30.0).unwrap();
        let terms = [
            0.77,
            144.6 / 2000.0,
            108.0 / 120_000.0,
            18.8 / 2000.0,
            18.8 / 30_000.0,
            1290.0 / 1.8e6,
            14.0 / 1000.0,
            20.9 / 120_000.0,
        ];
        let want: f64 = terms.iter().sum();
        assert!((average_power(&p).unwrap() - want).abs() < 1e-12);
        assert!((average_power(&p).unwrap() - 0.868).abs() < 0.005);
        let h = battery_lifetime(&p).unwrap();
        assert!((h - 426.2).abs() < 0.1, "{h}");
        assert!((h - 432.0).abs() / 432.0 < 0.02);
    }

    #[test]
    fn curve_points() {
        let p = PowerProfile::reference(30.0).unwrap();
        let c = lifetime_curve(&p, &[2.0, 30.0, 60.0]).unwrap();
        assert!((c[0].1 - 421.34).abs() < 0.01, "{:?}", c);
        assert!((c[1].1 - battery_lifetime(&p).unwrap()).abs() < 1e-12);
        assert!((c[2].1 - 426.39).abs() < 0.01, "{:?}", c);
        let limit = battery_lifetime(&p.without_inference()).unwrap();
        let far = lifetime_curve(&p, &[1e9]).unwrap()[0].1;
        assert!((far - limit).abs() < 1e-6);
        assert!(lifetime_curve(&p, &[0.0]).is_err());
    }

    #[test]
    fn doubling_capacity_doubles_lifetime() {
        let mut p = PowerProfile::reference(30.0).unwrap();
        let a = battery_lifetime(&p).unwrap();
        p.battery_capacity_mah *= 2.0;
        assert_eq!(battery_lifetime(&p).unwrap(), 2.0 * a);
    }

    #[test]
    fn sleep_components_sum() {
        assert!((sleep_power_mw() - 0.152).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let p = PowerProfile::reference(30.0).unwrap();
        let s = p.to_toml().unwrap();
        assert!(s.contains("[[task]]"));
        assert_eq!(PowerProfile::from_toml(&s).unwrap(), p);
        assert!(
            PowerProfile::from_toml("idle_power_mw = -1\nbattery_capacity_mah = 1\nbattery_voltage_v = 1\n").is_err()
        );
        let minimal =
            PowerProfile::from_toml("idle_power_mw = 0.5\nbattery_capacity_mah = 50\nbattery_voltage_v = 3.0\n")
                .unwrap();
        assert_eq!(battery_lifetime(&minimal).unwrap(), 300.0);
    }

    #[test]
    fn from_power_converts_units() {
        let t = TaskSpec::from_power("x", 2.0, 5.22, 3.6).unwrap();
        assert!((t.energy_uj - 18.792).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn lifetime_times_power_is_stored_energy(idle in 0.01f64..5.0, e in 0.0f64..5000.0, per in 0.1f64..1e4, cap in 1.0f64..1000.0) {
            let mut p = bare(idle, vec![TaskSpec::new("a", per, e).unwrap()]);
            p.battery_capacity_mah = cap;
            let w = average_power(&p).unwrap();
            let h = battery_lifetime(&p).unwrap();
            prop_assert!((h * w - cap * 3.7).abs() <= 1e-9 * cap * 3.7);
        }

        #[test]
        fn curve_is_non_decreasing(mut s in prop::collection::vec(0.5f64..600.0, 2..10)) {
            s.sort_by(f64::total_cmp);
            let c = lifetime_curve(&PowerProfile::reference(30.0).unwrap(), &s).unwrap();
            for w in c.windows(2) { prop_assert!(w[1].1 >= w[0].1); }
        }

        #[test]
        fn power_additive_and_decreasing_in_period(e1 in 0.0f64..1e3, p1 in 0.1f64..100.0, e2 in 0.0f64..1e3, p2 in 0.1f64..100.0) {
            let a = TaskSpec::new("a", p1, e1).unwrap();
            let b = TaskSpec::new("b", p2, e2).unwrap();
            let both = average_power(&bare(0.0, vec![a.clone(), b.clone()])).unwrap();
            let sum = average_power(&bare(0.0, vec![a.clone()])).unwrap() + average_power(&bare(0.0, vec![b])).unwrap();
            prop_assert!((both - sum).abs() < 1e-12);
            let slower = TaskSpec::new("a", p1 * 2.0, e1).unwrap();
            prop_assert!(average_power(&bare(0.0, vec![slower])).unwrap() <= average_power(&bare(0.0, vec![a])).unwrap());
        }
    }
}
