use serde::{Deserialize, Serialize};

pub const N_CHANNELS: usize = 26;
pub const MINUTES_PER_DAY: usize = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorGroup {
    Ppg,
    Acc,
    Eda,
    Temp,
    Alt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub index: usize,
    pub name: &'static str,
    pub unit: &'static str,
    pub group: SensorGroup,
    pub definition: &'static str,
}

macro_rules! feature {
    ($i:expr, $name:expr, $unit:expr, $group:ident, $def:expr) => {
        FeatureSpec { index: $i, name: $name, unit: $unit, group: SensorGroup::$group, definition: $def }
    };
}

static REGISTRY: [FeatureSpec; N_CHANNELS] = [
    feature!(0, "Heart Rate", "Beats/Min", Ppg, "Mean of instantaneous heart rate."),
    feature!(1, "Shannon Ent. RR", "Nats", Ppg, "Shannon entropy of the RR intervals."),
    feature!(2, "Shannon Ent. RR Diffs", "Nats", Ppg, "Shannon entropy of the RR interval differences."),
    feature!(3, "RMSSD", "Msec", Ppg, "Root mean squared st. dev. of RR intervals."),
    feature!(4, "SDNN", "Msec", Ppg, "Standard deviation of RR intervals."),
    feature!(5, "RR Percent Valid", "%", Ppg, "% of 5-minute window with valid RR intervals."),
    feature!(6, "RR 80th Percentile", "Msec", Ppg, "80th percentile of 5-minute window of RR intervals."),
    feature!(7, "RR 20th Percentile", "Msec", Ppg, "20th percentile of RR intervals."),
    feature!(8, "RR Median", "Msec", Ppg, "Median RR interval."),
    feature!(9, "Heart Rate at Rest", "Beats/Min", Ppg, "Mean of heart rate at rest."),
    feature!(10, "Step Count", "Steps", Acc, "Number of steps."),
    feature!(11, "Jerk Autocorrelation Ratio", "a.u.", Acc, "Ratio of lag=1 autocorrelation to energy in 1st 3-axis principal component."),
    feature!(12, "Log Energy", "a.u.", Acc, "Log of sum of 3-axis root mean squared magnitude."),
    feature!(13, "Covariance Condition", "a.u.", Acc, "Estimate of condition number for 3-axis covariance matrix."),
    feature!(14, "Log Energy Ratio", "a.u.", Acc, "Log of ratio of sum of energy in 1st 3-axis principal component over energy of 3-axis root mean squared magnitude."),
    feature!(15, "Zero Crossing St.Dev.", "Seconds", Acc, "Standard deviation of time between zero crossing of 1st 3-axis principal component."),
    feature!(16, "Zero Crossing Average", "Seconds", Acc, "Mean of time between zero crossing of 1st 3-axis principal component."),
    feature!(17, "Axis Mean", "a.u.", Acc, "Mean of 3-axis."),
    feature!(18, "Kurtosis", "a.u.", Acc, "Kurtosis of 3-axis root mean squared magnitude."),
    feature!(19, "Sleep Coefficient", "a.u.", Acc, "Sum of 3-axis max-min range, binned into 16 log-scaled bins."),
    feature!(20, "Skin Conductance Value", "μSiemens", Eda, "Center of linear tonic SCL value fit."),
    feature!(21, "Skin Conductance Slope", "μS/Min", Eda, "Intraminute slope of SCL values."),
    feature!(22, "Lead Contact Counts", "Counts", Eda, "Number of times leads of the sensor contacting wrist in a minute."),
    feature!(23, "Skin Temperature Value", "°C", Temp, "Value of skin temperature."),
    feature!(24, "Skin Temperature Slope", "°C/Min", Temp, "Slope of skin temperature."),
    feature!(25, "Altitude St.Dev. Norm", "Hectopascals", Alt, "Standard deviation of altimeter readings."),
];

/// The 26 minutely features in model-input order.
pub fn feature_registry() -> &'static [FeatureSpec; N_CHANNELS] {
    &REGISTRY
}

/// Channel index lookup by exact feature name.
pub fn channel_index(name: &str) -> Option<usize> {
    REGISTRY.iter().position(|f| f.name == name)
}

pub const HEART_RATE: usize = 0;
pub const STEP_COUNT: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_order_and_groups() {
        let reg = feature_registry();
        assert_eq!(reg.len(), 26);
        assert_eq!((reg[0].name, reg[0].unit, reg[0].group), ("Heart Rate", "Beats/Min", SensorGroup::Ppg));
        assert_eq!(reg[25].name, "Altitude St.Dev. Norm");
        let mut seen = [false; N_CHANNELS];
        for (i, f) in reg.iter().enumerate() {
            assert_eq!(f.index, i);
            seen[f.index] = true;
        }
        assert!(seen.iter().all(|&s| s));
        let count = |g| reg.iter().filter(|f| f.group == g).count();
        assert_eq!(count(SensorGroup::Ppg), 10);
        assert_eq!(count(SensorGroup::Acc), 10);
        assert_eq!(count(SensorGroup::Eda), 3);
        assert_eq!(count(SensorGroup::Temp), 2);
        assert_eq!(count(SensorGroup::Alt), 1);
        assert_eq!(channel_index("Step Count"), Some(STEP_COUNT));
    }
}
