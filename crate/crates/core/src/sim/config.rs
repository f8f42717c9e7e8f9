use std::collections::BTreeMap;

use super::quad::Quantity;
use super::SimError;
use crate::behavior::FlightStateMachine;
use crate::config::KeyValues;
use crate::domain::DomainSchema;

/// A planted deviation: while the vehicle is in `state` (and above `above`
/// metres, if set) the telemetry at `path` is emitted as `true * gain + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub name: String,
    pub path: String,
    pub state: String,
    pub bias: f64,
    pub gain: f64,
    pub above: Option<f64>,
}

impl FaultSpec {
    /// `path=<p> state=<S> [bias=<b>] [gain=<g>] [above=<m>]`
    pub fn parse(name: &str, text: &str) -> Result<FaultSpec, String> {
        let mut f = FaultSpec {
            name: name.to_string(),
            path: String::new(),
            state: String::new(),
            bias: 0.0,
            gain: 1.0,
            above: None,
        };
        for tok in text.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("fault {name}: expected key=value, got `{tok}`"))?;
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| format!("fault {name}: bad number `{v}` for {k}"))
            };
            match k {
                "path" => f.path = v.to_string(),
                "state" => f.state = v.to_string(),
                "bias" => f.bias = num()?,
                "gain" => f.gain = num()?,
                "above" => f.above = Some(num()?),
                _ => return Err(format!("fault {name}: unknown attribute `{k}`")),
            }
        }
        if f.path.is_empty() || f.state.is_empty() {
            return Err(format!("fault {name}: needs both path= and state="));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub tick_ms: u64,
    /// m/s in Takeoff and Climb.
    pub climb_rate: f64,
    /// Sink rate added per consecutive tick in Descent, m/s.
    pub descent_rate: f64,
    pub max_sink_rate: f64,
    pub landing_rate: f64,
    pub takeoff_altitude: f64,
    /// knots
    pub cruise_airspeed: f64,
    /// % per tick
    pub battery_drain: f64,
    /// Touchdown faster than this (m/s) is a crash.
    pub crash_vz: f64,
    /// Gaussian std-dev per quantity name.
    pub noise: BTreeMap<String, f64>,
    pub faults: Vec<FaultSpec>,
    pub max_steps: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick_ms: 500,
            climb_rate: 2.0,
            descent_rate: 2.0,
            max_sink_rate: 8.0,
            landing_rate: 1.0,
            takeoff_altitude: 20.0,
            cruise_airspeed: 15.0,
            battery_drain: 0.05,
            crash_vz: 5.0,
            noise: BTreeMap::new(),
            faults: Vec::new(),
            max_steps: 50,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<SimConfig, SimError> {
        let d = SimConfig::default();
        let mut cfg = SimConfig {
            tick_ms: kv.get_or("tick_ms", d.tick_ms)?,
            climb_rate: kv.get_or("climb_rate", d.climb_rate)?,
            descent_rate: kv.get_or("descent_rate", d.descent_rate)?,
            max_sink_rate: kv.get_or("max_sink_rate", d.max_sink_rate)?,
            landing_rate: kv.get_or("landing_rate", d.landing_rate)?,
            takeoff_altitude: kv.get_or("takeoff_altitude", d.takeoff_altitude)?,
            cruise_airspeed: kv.get_or("cruise_airspeed", d.cruise_airspeed)?,
            battery_drain: kv.get_or("battery_drain", d.battery_drain)?,
            crash_vz: kv.get_or("crash_vz", d.crash_vz)?,
            noise: BTreeMap::new(),
            faults: Vec::new(),
            max_steps: kv.get_or("max_steps", d.max_steps)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        for (q, line, v) in kv.with_prefix("noise") {
            let std: f64 = v
                .parse()
                .map_err(|_| SimError::Config(format!("line {line}: bad noise std `{v}`")))?;
            if q.parse::<Quantity>().is_err() {
                return Err(SimError::Config(format!("line {line}: unknown quantity `{q}`")));
            }
            cfg.noise.insert(q.to_string(), std);
        }
        for (name, line, v) in kv.with_prefix("fault") {
            cfg.faults
                .push(FaultSpec::parse(name, v).map_err(|e| SimError::Config(format!("line {line}: {e}")))?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.tick_ms == 0 {
            return bad("tick_ms must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        let rates = [
            self.climb_rate,
            self.descent_rate,
            self.max_sink_rate,
            self.landing_rate,
            self.takeoff_altitude,
            self.crash_vz,
        ];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("rates must be positive");
        }
        if !(self.battery_drain >= 0.0) {
            return bad("battery_drain must be non-negative");
        }
        if self.noise.values().any(|s| !(*s >= 0.0)) {
            return bad("noise std-dev must be non-negative");
        }
        Ok(())
    }

    /// Fault targets must be schema paths and fault states must name machine states.
    pub fn validate_against(&self, sm: &FlightStateMachine, schema: &DomainSchema) -> Result<(), SimError> {
        for f in &self.faults {
            if schema.field(&f.path).is_none() {
                return Err(SimError::Config(format!("fault {}: unknown path `{}`", f.name, f.path)));
            }
            if !sm.states.iter().any(|s| sm.state_in_scope(&s.name, &f.state)) {
                return Err(SimError::Config(format!("fault {}: unknown state `{}`", f.name, f.state)));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.tick_ms as f64 / 1000.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let kv = KeyValues::parse("tick_ms = 250\nmax_steps=7\nnoise.roll = 0.5\nfault.hi = path=location.altitude_AGL state=Takeoff bias=30").unwrap();
        let c = SimConfig::from_kv(&kv).unwrap();
        assert_eq!(c.tick_ms, 250);
        assert_eq!(c.max_steps, 7);
        assert_eq!(c.climb_rate, 2.0);
        assert_eq!(c.noise["roll"], 0.5);
        assert_eq!(c.faults[0].bias, 30.0);
        assert_eq!(c.faults[0].gain, 1.0);
    }

    #[test]
    fn zero_max_steps_rejected() {
        let kv = KeyValues::parse("max_steps = 0").unwrap();
        assert!(SimConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("noise.wobble = 1").unwrap();
        assert!(SimConfig::from_kv(&kv).is_err());
        assert!(FaultSpec::parse("x", "path=a").is_err());
    }
}
