use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Backend, SimConfig, SimError, StepOutcome, Terminal};
use crate::behavior::{flatten, FlightStateMachine, Phase, TransitionTable};
use crate::domain::{make_snapshot, DomainSchema, Snapshot, Stereotype, TupleSlot};

/// Physical quantities the simulator can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    Altitude,
    Airspeed,
    Groundspeed,
    Roll,
    Pitch,
    Yaw,
    Heading,
    Battery,
    Distance,
    Thrust,
    Vx,
    Vy,
    Vz,
    RollSpeed,
    PitchSpeed,
    YawSpeed,
    YawRate,
    Latitude,
    Longitude,
    BatteryVoltage,
    BatteryCurrent,
    SensorVoltage,
    VehicleType,
}

impl Quantity {
    const NAMES: [(&'static str, Quantity); 23] = [
        ("altitude", Quantity::Altitude),
        ("airspeed", Quantity::Airspeed),
        ("groundspeed", Quantity::Groundspeed),
        ("roll", Quantity::Roll),
        ("pitch", Quantity::Pitch),
        ("yaw", Quantity::Yaw),
        ("heading", Quantity::Heading),
        ("battery", Quantity::Battery),
        ("distance", Quantity::Distance),
        ("thrust", Quantity::Thrust),
        ("vx", Quantity::Vx),
        ("vy", Quantity::Vy),
        ("vz", Quantity::Vz),
        ("roll_speed", Quantity::RollSpeed),
        ("pitch_speed", Quantity::PitchSpeed),
        ("yaw_speed", Quantity::YawSpeed),
        ("yaw_rate", Quantity::YawRate),
        ("latitude", Quantity::Latitude),
        ("longitude", Quantity::Longitude),
        ("battery_voltage", Quantity::BatteryVoltage),
        ("current", Quantity::BatteryCurrent),
        ("sensor_voltage", Quantity::SensorVoltage),
        ("vehicle_type", Quantity::VehicleType),
    ];

    pub fn as_str(self) -> &'static str {
        Self::NAMES.iter().find(|(_, q)| *q == self).unwrap().0
    }

    fn from_slot(slot: TupleSlot) -> Quantity {
        [
            Quantity::Altitude,
            Quantity::Airspeed,
            Quantity::Groundspeed,
            Quantity::Roll,
            Quantity::Pitch,
            Quantity::Yaw,
            Quantity::Heading,
            Quantity::Battery,
            Quantity::Distance,
        ][slot.index() - 1]
    }

    /// Which quantity a schema field carries, judged by tuple slot, then name.
    fn bind(stereotype: Stereotype, field: &str, slot: Option<TupleSlot>) -> Option<Quantity> {
        if let Some(s) = slot {
            return Some(Self::from_slot(s));
        }
        Some(match (stereotype, field) {
            (Stereotype::Battery, "voltage") => Quantity::BatteryVoltage,
            (Stereotype::Battery, "level") => Quantity::Battery,
            (_, "voltage") => Quantity::SensorVoltage,
            (_, "altitude" | "altitude_AGL" | "alt") => Quantity::Altitude,
            (_, name) => return name.parse().ok(),
        })
    }
}

impl FromStr for Quantity {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::NAMES.iter().find(|(n, _)| *n == s).map(|(_, q)| *q).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Base {
    Ground { armed: bool },
    Takeoff,
    Climb,
    Cruise,
    Descent,
    Loiter,
    PositionHold,
    AltitudeHold,
    Landing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    base: Base,
    /// -1 left, +1 right
    turn: f64,
}

impl Motion {
    fn of(phases: &[Phase]) -> Motion {
        let base = match phases.first() {
            Some(Phase::Disarmed) => Base::Ground { armed: false },
            Some(Phase::Armed | Phase::Taxiing) => Base::Ground { armed: true },
            Some(Phase::Takeoff) => Base::Takeoff,
            Some(Phase::Climb) => Base::Climb,
            Some(Phase::Descent | Phase::Approach) => Base::Descent,
            Some(Phase::Loiter | Phase::Circle) => Base::Loiter,
            Some(Phase::PositionHold) => Base::PositionHold,
            Some(Phase::AltitudeHold) => Base::AltitudeHold,
            Some(Phase::Landing) => Base::Landing,
            _ => Base::Cruise,
        };
        let turn = if phases.contains(&Phase::TurningLeft) {
            -1.0
        } else if phases.contains(&Phase::TurningRight) {
            1.0
        } else {
            0.0
        };
        Motion { base, turn }
    }
}

const TURN_RATE: f64 = 15.0;
const LOITER_RATE: f64 = 20.0;
const BANK: f64 = 25.0;
const KNOT: f64 = 0.514_444;

/// True vehicle state; telemetry is derived from it.
#[derive(Debug, Clone, Default, PartialEq)]
struct Body {
    alt: f64,
    /// positive downward
    vz: f64,
    airspeed: f64,
    groundspeed: f64,
    roll: f64,
    pitch: f64,
    heading: f64,
    heading0: f64,
    yaw_rate: f64,
    roll_speed: f64,
    pitch_speed: f64,
    battery: f64,
    thrust: f64,
    lat: f64,
    lon: f64,
    /// left the ground at least once this episode
    flown: bool,
    sink_streak: u32,
}

impl Body {
    fn value(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Altitude | Quantity::Distance => self.alt,
            Quantity::Airspeed => self.airspeed,
            Quantity::Groundspeed => self.groundspeed,
            Quantity::Roll => self.roll,
            Quantity::Pitch => self.pitch,
            Quantity::Yaw => {
                // attitude yaw relative to the heading at arming
                let d = (self.heading - self.heading0).rem_euclid(360.0);
                if d > 180.0 {
                    d - 360.0
                } else {
                    d
                }
            }
            Quantity::Heading => self.heading,
            Quantity::Battery => self.battery,
            Quantity::Thrust => self.thrust,
            Quantity::Vx => self.groundspeed * KNOT * self.heading.to_radians().cos(),
            Quantity::Vy => self.groundspeed * KNOT * self.heading.to_radians().sin(),
            Quantity::Vz => self.vz,
            Quantity::RollSpeed => self.roll_speed,
            Quantity::PitchSpeed => self.pitch_speed,
            Quantity::YawSpeed | Quantity::YawRate => self.yaw_rate,
            Quantity::Latitude => self.lat,
            Quantity::Longitude => self.lon,
            Quantity::BatteryVoltage => 10.5 + 2.1 * self.battery / 100.0,
            Quantity::BatteryCurrent => 40.0 * self.thrust,
            Quantity::SensorVoltage => 5.0,
            Quantity::VehicleType => 0.0,
        }
    }
}

struct Binding {
    path: String,
    quantity: Quantity,
    noise: f64,
    /// indices into `faults`
    faults: Vec<usize>,
}

struct Fault {
    gain: f64,
    bias: f64,
    above: Option<f64>,
    /// per flattened state index
    active: Vec<bool>,
}

/// Internal quadcopter simulator.
pub struct QuadSim {
    cfg: SimConfig,
    machine: FlightStateMachine,
    table: TransitionTable,
    events: HashMap<String, usize>,
    motions: Vec<Motion>,
    bindings: Vec<Binding>,
    faults: Vec<Fault>,
    blank: Snapshot,
    snapshot: Snapshot,
    body: Body,
    state: usize,
    steps: u64,
    terminal: Terminal,
    rng: ChaCha8Rng,
}

impl QuadSim {
    /// Flattens `machine` if needed and binds telemetry quantities to schema paths.
    pub fn new(cfg: SimConfig, machine: &FlightStateMachine, schema: &DomainSchema) -> Result<QuadSim, SimError> {
        cfg.validate()?;
        let machine = if machine.is_flat() { machine.clone() } else { flatten(machine)? };
        cfg.validate_against(&machine, schema)?;
        let table = machine.table()?;
        let events = table
            .event_names
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let motions = machine
            .states
            .iter()
            .map(|s| {
                let mut phases: Vec<Phase> = s.phases().collect();
                if phases.is_empty() {
                    phases.extend(s.name.split('.').next().and_then(|n| n.parse::<Phase>().ok()));
                }
                Motion::of(&phases)
            })
            .collect();
        let faults: Vec<Fault> = cfg
            .faults
            .iter()
            .map(|f| Fault {
                gain: f.gain,
                bias: f.bias,
                above: f.above,
                active: machine
                    .states
                    .iter()
                    .map(|s| machine.state_in_scope(&s.name, &f.state))
                    .collect(),
            })
            .collect();
        let mut bindings = Vec::new();
        for class in &schema.classes {
            for field in &class.fields {
                let Some(q) = Quantity::bind(class.stereotype, &field.name, field.tuple) else {
                    continue;
                };
                let path = class.path_of(&field.name);
                bindings.push(Binding {
                    faults: cfg
                        .faults
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| f.path == path)
                        .map(|(i, _)| i)
                        .collect(),
                    noise: cfg.noise.get(q.as_str()).copied().unwrap_or(0.0),
                    path,
                    quantity: q,
                });
            }
        }
        let blank = make_snapshot(schema, &table.state_names[table.initial]);
        let seed = cfg.seed;
        let mut sim = QuadSim {
            cfg,
            machine,
            state: table.initial,
            table,
            events,
            motions,
            bindings,
            faults,
            snapshot: blank.clone(),
            blank,
            body: Body::default(),
            steps: 0,
            terminal: Terminal::Running,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sim.reset(seed)?;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn machine(&self) -> &FlightStateMachine {
        &self.machine
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn state_index(&self) -> usize {
        self.state
    }

    pub fn flight_state(&self) -> &str {
        &self.table.state_names[self.state]
    }

    /// Altitude before noise and faults.
    pub fn true_altitude(&self) -> f64 {
        self.body.alt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step_index(&mut self, event: usize) -> Result<StepOutcome, SimError> {
        if self.terminal.is_done() {
            return Err(SimError::Terminated(self.terminal));
        }
        if event >= self.table.event_count() {
            return Err(SimError::UnknownEvent(event.to_string()));
        }
        self.steps += 1;
        self.body.battery = (self.body.battery - self.cfg.battery_drain).max(0.0);
        let tick = self.steps;
        let outcome = match self.table.next(self.state, event) {
            None => {
                let battery: Vec<(usize, f64)> = self
                    .bindings
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.quantity == Quantity::Battery)
                    .map(|(i, _)| (i, self.emit_clean(i)))
                    .collect();
                let state = self.table.state_names[self.state].clone();
                let updates: Vec<(&str, f64)> =
                    battery.iter().map(|(i, v)| (self.bindings[*i].path.as_str(), *v)).collect();
                self.snapshot.populate_in_place(updates, &state, tick)?;
                if self.steps >= self.cfg.max_steps {
                    self.terminal = Terminal::StepLimit;
                }
                false
            }
            Some(next) => {
                let crashed = self.integrate(next);
                self.state = next;
                self.emit(tick)?;
                self.terminal = if crashed {
                    Terminal::Crashed
                } else if next == self.table.goal && self.body.alt == 0.0 && self.body.flown {
                    Terminal::Goal
                } else if self.steps >= self.cfg.max_steps {
                    Terminal::StepLimit
                } else {
                    Terminal::Running
                };
                true
            }
        };
        Ok(self.outcome(outcome))
    }

    fn outcome(&self, action_correct: bool) -> StepOutcome {
        StepOutcome {
            snapshot: self.snapshot.clone(),
            flight_state: self.table.state_names[self.state].clone(),
            action_correct,
            crashed: self.terminal == Terminal::Crashed,
            goal_reached: self.terminal == Terminal::Goal,
        }
    }

    /// Advances the body one tick in state `next`; returns whether it crashed.
    fn integrate(&mut self, next: usize) -> bool {
        let dt = self.cfg.dt();
        let m = self.motions[next];
        let b = &mut self.body;
        let was_airborne = b.alt > 0.0;
        let (old_roll, old_pitch) = (b.roll, b.pitch);
        let mut heading_rate = 0.0;
        if m.base != Base::Descent {
            b.sink_streak = 0;
        }
        let (airspeed, groundspeed, roll, pitch, thrust);
        match m.base {
            Base::Ground { armed } => {
                b.vz = 0.0;
                (airspeed, groundspeed, roll, pitch) = (0.0, 0.0, 0.0, 0.0);
                thrust = if armed { 0.1 } else { 0.0 };
            }
            Base::Takeoff => {
                let climb = (self.cfg.climb_rate * dt).min((self.cfg.takeoff_altitude - b.alt).max(0.0));
                b.alt += climb;
                b.vz = -climb / dt;
                (airspeed, groundspeed, roll, pitch, thrust) = (0.5, 0.2, 0.0, 2.0, 0.6);
            }
            Base::Climb => {
                b.alt += self.cfg.climb_rate * dt;
                b.vz = -self.cfg.climb_rate;
                (airspeed, groundspeed, pitch, thrust) = (12.0, 8.0, 5.0, 0.7);
                roll = BANK * m.turn;
                heading_rate = TURN_RATE * m.turn;
            }
            Base::Cruise => {
                b.vz = 0.0;
                (airspeed, groundspeed, pitch, thrust) = (self.cfg.cruise_airspeed, 12.0, 3.0, 0.55);
                roll = BANK * m.turn;
                heading_rate = TURN_RATE * m.turn;
            }
            Base::Descent => {
                b.sink_streak += 1;
                let sink = (self.cfg.descent_rate * b.sink_streak as f64).min(self.cfg.max_sink_rate);
                b.alt = (b.alt - sink * dt).max(0.0);
                b.vz = sink;
                (airspeed, groundspeed, roll, pitch, thrust) = (8.0, 6.0, 0.0, -4.0, 0.3);
            }
            Base::Loiter => {
                b.vz = 0.0;
                (airspeed, groundspeed, roll, pitch, thrust) = (10.0, 6.0, BANK, 0.0, 0.5);
                heading_rate = LOITER_RATE;
            }
            Base::PositionHold => {
                b.vz = 0.0;
                (airspeed, groundspeed, roll, pitch, thrust) = (0.0, 0.0, 0.0, 0.0, 0.5);
            }
            Base::AltitudeHold => {
                b.vz = 0.0;
                (airspeed, groundspeed, roll, pitch, thrust) = (self.cfg.cruise_airspeed, 12.0, 0.0, 2.0, 0.5);
            }
            Base::Landing => {
                if b.alt > 0.0 {
                    b.alt = (b.alt - self.cfg.landing_rate * dt).max(0.0);
                    b.vz = self.cfg.landing_rate;
                    (airspeed, groundspeed, roll, pitch, thrust) = (2.0, 1.0, 0.0, 0.0, 0.35);
                } else {
                    b.vz = 0.0;
                    (airspeed, groundspeed, roll, pitch, thrust) = (0.0, 0.0, 0.0, 0.0, 0.1);
                }
            }
        }
        b.airspeed = airspeed;
        b.groundspeed = groundspeed;
        b.roll = roll;
        b.pitch = pitch;
        b.thrust = thrust;
        b.yaw_rate = heading_rate;
        b.roll_speed = (roll - old_roll) / dt;
        b.pitch_speed = (pitch - old_pitch) / dt;
        b.heading = (b.heading + heading_rate * dt).rem_euclid(360.0);
        let metres = groundspeed * KNOT * dt;
        b.lat += metres * b.heading.to_radians().cos() / 111_320.0;
        b.lon += metres * b.heading.to_radians().sin() / 111_320.0;

        b.flown |= b.alt > 0.0;
        let touchdown = was_airborne && b.alt == 0.0;
        let hard_landing = touchdown && b.vz > self.cfg.crash_vz;
        let rolled_over = b.roll.abs() > 90.0 && b.alt < 2.0;
        let motors_cut = matches!(m.base, Base::Ground { .. }) && b.alt > 0.0;
        if touchdown && !hard_landing {
            b.vz = 0.0;
        }
        hard_landing || rolled_over || motors_cut
    }

    fn emit_clean(&self, i: usize) -> f64 {
        let b = &self.bindings[i];
        let v = self.body.value(b.quantity);
        self.apply_faults(b, v)
    }

    fn apply_faults(&self, b: &Binding, mut v: f64) -> f64 {
        for &f in &b.faults {
            let fault = &self.faults[f];
            if fault.active[self.state] && fault.above.is_none_or(|h| self.body.alt > h) {
                v = v * fault.gain + fault.bias;
            }
        }
        clamp(b.quantity, v)
    }

    fn emit(&mut self, tick: u64) -> Result<(), SimError> {
        let mut values = Vec::with_capacity(self.bindings.len());
        for i in 0..self.bindings.len() {
            let b = &self.bindings[i];
            let mut v = self.body.value(b.quantity);
            if b.noise > 0.0 {
                let z: f64 = self.rng.sample(StandardNormal);
                v = clamp(b.quantity, v + b.noise * z);
            }
            values.push(self.apply_faults(&self.bindings[i], v));
        }
        let state = self.table.state_names[self.state].clone();
        let updates = self.bindings.iter().map(|b| b.path.as_str()).zip(values);
        self.snapshot.populate_in_place(updates, &state, tick)?;
        Ok(())
    }
}

fn clamp(q: Quantity, v: f64) -> f64 {
    match q {
        Quantity::Altitude | Quantity::Distance => v.max(0.0),
        Quantity::Battery => v.clamp(0.0, 100.0),
        Quantity::Heading => v.rem_euclid(360.0),
        _ => v,
    }
}

impl Backend for QuadSim {
    fn reset(&mut self, seed: u64) -> Result<StepOutcome, SimError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let heading = self.rng.random_range(0.0..360.0);
        self.body = Body {
            battery: 100.0,
            heading,
            heading0: heading,
            ..Body::default()
        };
        self.state = self.table.initial;
        self.steps = 0;
        self.terminal = Terminal::Running;
        self.snapshot = self.blank.clone();
        let values: Vec<f64> = (0..self.bindings.len()).map(|i| self.emit_clean(i)).collect();
        let state = self.table.state_names[self.state].clone();
        let updates = self.bindings.iter().map(|b| b.path.as_str()).zip(values);
        self.snapshot.populate_in_place(updates, &state, 0)?;
        Ok(self.outcome(true))
    }

    fn step(&mut self, event: &str) -> Result<StepOutcome, SimError> {
        let e = *self
            .events
            .get(event)
            .ok_or_else(|| SimError::UnknownEvent(event.to_string()))?;
        self.step_index(e)
    }

    fn observe(&self) -> &Snapshot {
        &self.snapshot
    }

    fn is_terminal(&self) -> Terminal {
        self.terminal
    }
}
