use crate::domain::StateTuple;
use crate::scalar::Scalar;

/// Flight state plus nine telemetry features.
pub const INPUT_DIM: usize = 10;

/// Divisors that bring each tuple feature to roughly unit range.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScale {
    pub divisors: [f64; 9],
}

impl Default for FeatureScale {
    fn default() -> Self {
        // altitude, airspeed, groundspeed, roll, pitch, yaw, heading, battery, distance
        FeatureScale {
            divisors: [300.0, 100.0, 100.0, 180.0, 180.0, 180.0, 360.0, 100.0, 5000.0],
        }
    }
}

/// Writes the network input for one tuple into `out` (length [`INPUT_DIM`]).
pub fn encode_tuple<T: Scalar>(
    tuple: &StateTuple,
    state_index: usize,
    state_count: usize,
    scale: &FeatureScale,
    out: &mut [T],
) {
    out[0] = T::lit(state_index as f64 / state_count.max(1) as f64);
    for k in 0..9 {
        out[k + 1] = T::lit(tuple.values[k] / scale.divisors[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_state_and_features() {
        let t = StateTuple {
            flight_state: "Armed".into(),
            values: [30.0, 10.0, 0.0, 18.0, 0.0, -90.0, 180.0, 50.0, 500.0],
        };
        let mut out = [0.0f64; INPUT_DIM];
        encode_tuple(&t, 1, 4, &FeatureScale::default(), &mut out);
        assert_eq!(out, [0.25, 0.1, 0.1, 0.0, 0.1, 0.0, -0.5, 0.5, 0.5, 0.1]);
    }
}
