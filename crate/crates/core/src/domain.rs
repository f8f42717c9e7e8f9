//! SUT domain schema (the observation space) and the snapshots populated from
//! live telemetry that constraints are evaluated against.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::behavior::parse::{is_identifier, strip_comment, words};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("no classes declared")]
    NoClasses,
    #[error("line {line}: duplicate class `{name}`")]
    DuplicateClass { line: usize, name: String },
    #[error("line {line}: duplicate field `{name}`")]
    DuplicateField { line: usize, name: String },
    #[error("line {line}: unknown stereotype `{name}`")]
    UnknownStereotype { line: usize, name: String },
    #[error("line {line}: tuple slot {slot} already bound")]
    DuplicateTupleSlot { line: usize, slot: TupleSlot },
    #[error("unknown field path `{0}`")]
    UnknownPath(String),
    #[error("no field is annotated with tuple slot {0}")]
    MissingTupleSlot(TupleSlot),
    #[error("tick {tick} does not advance past {current}")]
    NonMonotonicTick { current: u64, tick: u64 },
}

/// Structural profile vocabulary for domain classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stereotype {
    Uav,
    Attitude,
    LocationGlobal,
    LocationGlobalRelative,
    LocationLocal,
    RangeFinder,
    Velocity,
    Battery,
    Engine,
    Accelerometer,
    Gyroscope,
    Barometer,
    Magnetometer,
}

impl Stereotype {
    const NAMES: [(&'static str, Stereotype); 13] = [
        ("UAV", Stereotype::Uav),
        ("Attitude", Stereotype::Attitude),
        ("LocationGlobal", Stereotype::LocationGlobal),
        ("LocationGlobalRelative", Stereotype::LocationGlobalRelative),
        ("LocationLocal", Stereotype::LocationLocal),
        ("RangeFinder", Stereotype::RangeFinder),
        ("Velocity", Stereotype::Velocity),
        ("Battery", Stereotype::Battery),
        ("Engine", Stereotype::Engine),
        ("Accelerometer", Stereotype::Accelerometer),
        ("Gyroscope", Stereotype::Gyroscope),
        ("Barometer", Stereotype::Barometer),
        ("Magnetometer", Stereotype::Magnetometer),
    ];

    pub fn as_str(self) -> &'static str {
        Self::NAMES.iter().find(|(_, s)| *s == self).unwrap().0
    }

    /// Path segment used to reach a class of this stereotype from the root.
    fn default_role(self) -> Option<&'static str> {
        Some(match self {
            Stereotype::Uav => return None,
            Stereotype::Attitude => "attitude",
            Stereotype::LocationGlobal
            | Stereotype::LocationGlobalRelative
            | Stereotype::LocationLocal => "location",
            Stereotype::RangeFinder => "rangefinder",
            Stereotype::Velocity => "velocity",
            Stereotype::Battery => "battery",
            Stereotype::Engine => "engine",
            Stereotype::Accelerometer => "accelerometer",
            Stereotype::Gyroscope => "gyroscope",
            Stereotype::Barometer => "barometer",
            Stereotype::Magnetometer => "magnetometer",
        })
    }
}

impl FromStr for Stereotype {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, st)| *st)
            .ok_or(())
    }
}

impl fmt::Display for Stereotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position `s1`..`s9` in the agent's state tuple (`s0` is the flight state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TupleSlot(u8);

impl TupleSlot {
    pub const ALTITUDE: TupleSlot = TupleSlot(1);
    pub const AIRSPEED: TupleSlot = TupleSlot(2);
    pub const GROUNDSPEED: TupleSlot = TupleSlot(3);
    pub const ROLL: TupleSlot = TupleSlot(4);
    pub const PITCH: TupleSlot = TupleSlot(5);
    pub const YAW: TupleSlot = TupleSlot(6);
    pub const HEADING: TupleSlot = TupleSlot(7);
    pub const BATTERY: TupleSlot = TupleSlot(8);
    pub const DISTANCE: TupleSlot = TupleSlot(9);

    pub fn new(index: u8) -> Option<Self> {
        (1..=9).contains(&index).then_some(TupleSlot(index))
    }

    pub fn all() -> impl Iterator<Item = TupleSlot> {
        (1..=9).map(TupleSlot)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TupleSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Numeric,
    /// Values are stored as the integer code (position in this list).
    Enum(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    pub units: String,
    pub tuple: Option<TupleSlot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub name: String,
    pub stereotype: Stereotype,
    /// Path prefix from the root vehicle; `None` for the root class itself.
    pub role: Option<String>,
    pub fields: Vec<FieldDef>,
}

impl ClassDef {
    pub fn path_of(&self, field: &str) -> String {
        match &self.role {
            Some(role) => format!("{role}.{field}"),
            None => field.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSchema {
    pub classes: Vec<ClassDef>,
}

impl DomainSchema {
    pub fn field_count(&self) -> usize {
        self.classes.iter().map(|c| c.fields.len()).sum()
    }

    /// Every field path with its definition, in declaration order.
    pub fn paths(&self) -> impl Iterator<Item = (String, &FieldDef)> + '_ {
        self.classes
            .iter()
            .flat_map(|c| c.fields.iter().map(move |f| (c.path_of(&f.name), f)))
    }

    pub fn field(&self, path: &str) -> Option<&FieldDef> {
        self.paths().find(|(p, _)| p == path).map(|(_, f)| f)
    }

    pub fn has_class(&self, name: &str) -> bool {
        self.classes
            .iter()
            .any(|c| c.name == name || c.stereotype.as_str() == name)
    }

    pub fn tuple_path(&self, slot: TupleSlot) -> Option<String> {
        self.paths()
            .find(|(_, f)| f.tuple == Some(slot))
            .map(|(p, _)| p)
    }

    fn battery_path(&self) -> Option<String> {
        self.tuple_path(TupleSlot::BATTERY).or_else(|| {
            self.classes
                .iter()
                .find(|c| c.stereotype == Stereotype::Battery)
                .and_then(|c| c.fields.iter().find(|f| f.name == "level"))
                .map(|f| format!("battery.{}", f.name))
        })
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> DomainError {
    DomainError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Parses the schema file: `class <Name> stereotype=<S> [role=<prefix>]`
/// followed by `field <name> kind=<num|enum> units=<u> [tuple=s1..s9] [values=A,B]`.
pub fn parse_domain_schema(text: &str) -> Result<DomainSchema, DomainError> {
    let mut classes: Vec<ClassDef> = Vec::new();
    let mut roles = HashSet::new();
    let mut slots = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = words(strip_comment(raw));
        let Some(&(col, keyword)) = toks.first() else {
            continue;
        };
        match keyword {
            "class" => {
                let (ncol, name) = *toks
                    .get(1)
                    .ok_or_else(|| syntax(line, col, "expected a class name"))?;
                if !is_identifier(name) || name.contains('.') {
                    return Err(syntax(line, ncol, format!("invalid class name `{name}`")));
                }
                if classes.iter().any(|c| c.name == name) {
                    return Err(DomainError::DuplicateClass {
                        line,
                        name: name.to_string(),
                    });
                }
                let mut stereotype = None;
                let mut role = None;
                for &(c, tok) in &toks[2..] {
                    if let Some(v) = tok.strip_prefix("stereotype=") {
                        stereotype = Some(v.parse::<Stereotype>().map_err(|_| {
                            DomainError::UnknownStereotype {
                                line,
                                name: v.to_string(),
                            }
                        })?);
                    } else if let Some(v) = tok.strip_prefix("role=") {
                        if !is_identifier(v) {
                            return Err(syntax(line, c, format!("invalid role `{v}`")));
                        }
                        role = Some(v.to_string());
                    } else {
                        return Err(syntax(line, c, format!("unexpected `{tok}`")));
                    }
                }
                let stereotype =
                    stereotype.ok_or_else(|| syntax(line, col, "class needs a stereotype="))?;
                let role = role.or_else(|| stereotype.default_role().map(String::from));
                if !roles.insert(role.clone()) {
                    return Err(syntax(
                        line,
                        col,
                        format!(
                            "path prefix `{}` already used by another class",
                            role.as_deref().unwrap_or("<root>")
                        ),
                    ));
                }
                classes.push(ClassDef {
                    name: name.to_string(),
                    stereotype,
                    role,
                    fields: Vec::new(),
                });
            }
            "field" => {
                let class = classes
                    .last_mut()
                    .ok_or_else(|| syntax(line, col, "field declared before any class"))?;
                let (ncol, name) = *toks
                    .get(1)
                    .ok_or_else(|| syntax(line, col, "expected a field name"))?;
                if !is_identifier(name) || name.contains('.') {
                    return Err(syntax(line, ncol, format!("invalid field name `{name}`")));
                }
                if class.fields.iter().any(|f| f.name == name) {
                    return Err(DomainError::DuplicateField {
                        line,
                        name: name.to_string(),
                    });
                }
                let mut kind = None;
                let mut units = None;
                let mut tuple = None;
                let mut values = None;
                for &(c, tok) in &toks[2..] {
                    if let Some(v) = tok.strip_prefix("kind=") {
                        kind = Some(match v {
                            "num" => false,
                            "enum" => true,
                            _ => return Err(syntax(line, c, format!("unknown kind `{v}`"))),
                        });
                    } else if let Some(v) = tok.strip_prefix("units=") {
                        units = Some(v.to_string());
                    } else if let Some(v) = tok
                        .strip_prefix("tuple=")
                        .or_else(|| tok.strip_prefix("tuple:"))
                    {
                        let slot = v
                            .strip_prefix('s')
                            .and_then(|n| n.parse::<u8>().ok())
                            .and_then(TupleSlot::new)
                            .ok_or_else(|| syntax(line, c, format!("bad tuple slot `{v}`")))?;
                        if !slots.insert(slot) {
                            return Err(DomainError::DuplicateTupleSlot { line, slot });
                        }
                        tuple = Some(slot);
                    } else if let Some(v) = tok.strip_prefix("values=") {
                        let names: Vec<String> = v.split(',').map(String::from).collect();
                        if names.iter().any(|n| !is_identifier(n) || n.contains('.')) {
                            return Err(syntax(line, c, format!("bad enum values `{v}`")));
                        }
                        values = Some(names);
                    } else {
                        return Err(syntax(line, c, format!("unexpected `{tok}`")));
                    }
                }
                let is_enum = kind.ok_or_else(|| syntax(line, col, "field needs kind="))?;
                let units = units.ok_or_else(|| syntax(line, col, "field needs units="))?;
                let kind = match (is_enum, values) {
                    (false, None) => FieldKind::Numeric,
                    (true, Some(v)) => FieldKind::Enum(v),
                    (true, None) => {
                        return Err(syntax(line, col, "enum field needs values="));
                    }
                    (false, Some(_)) => {
                        return Err(syntax(line, col, "values= only applies to enum fields"));
                    }
                };
                class.fields.push(FieldDef {
                    name: name.to_string(),
                    kind,
                    units,
                    tuple,
                });
            }
            other => return Err(syntax(line, col, format!("unknown declaration `{other}`"))),
        }
    }
    if classes.is_empty() {
        return Err(DomainError::NoClasses);
    }
    Ok(DomainSchema { classes })
}

/// A populated instance of the domain schema at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub slots: BTreeMap<String, f64>,
    pub tick: u64,
    pub flight_state: String,
}

/// Fresh instance: every slot zero except the battery level at 100.
pub fn make_snapshot(schema: &DomainSchema, initial_state: &str) -> Snapshot {
    let mut slots: BTreeMap<String, f64> = schema.paths().map(|(p, _)| (p, 0.0)).collect();
    if let Some(path) = schema.battery_path() {
        slots.insert(path, 100.0);
    }
    Snapshot {
        slots,
        tick: 0,
        flight_state: initial_state.to_string(),
    }
}

impl Snapshot {
    pub fn get(&self, path: &str) -> Option<f64> {
        self.slots.get(path).copied()
    }

    /// Overwrites the given slots and moves the snapshot to `tick`.
    pub fn populate<'a, I>(
        &self,
        telemetry: I,
        flight_state: &str,
        tick: u64,
    ) -> Result<Snapshot, DomainError>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut next = self.clone();
        next.populate_in_place(telemetry, flight_state, tick)?;
        Ok(next)
    }

    pub fn populate_in_place<'a, I>(
        &mut self,
        telemetry: I,
        flight_state: &str,
        tick: u64,
    ) -> Result<(), DomainError>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        if tick <= self.tick && !(tick == 0 && self.tick == 0) {
            return Err(DomainError::NonMonotonicTick {
                current: self.tick,
                tick,
            });
        }
        for (path, value) in telemetry {
            match self.slots.get_mut(path) {
                Some(slot) => *slot = value,
                None => return Err(DomainError::UnknownPath(path.to_string())),
            }
        }
        self.tick = tick;
        if self.flight_state != flight_state {
            self.flight_state = flight_state.to_string();
        }
        Ok(())
    }

    pub fn to_state_tuple(&self, schema: &DomainSchema) -> Result<StateTuple, DomainError> {
        let mut values = [0.0; 9];
        for slot in TupleSlot::all() {
            let path = schema
                .tuple_path(slot)
                .ok_or(DomainError::MissingTupleSlot(slot))?;
            values[slot.index() - 1] = self
                .get(&path)
                .ok_or_else(|| DomainError::UnknownPath(path.clone()))?;
        }
        Ok(StateTuple {
            flight_state: self.flight_state.clone(),
            values,
        })
    }
}

/// ⟨flight state, altitude, airspeed, groundspeed, roll, pitch, yaw,
/// heading, battery, distance⟩
#[derive(Debug, Clone, PartialEq)]
pub struct StateTuple {
    pub flight_state: String,
    /// `s1`..`s9` in order.
    pub values: [f64; 9],
}

impl StateTuple {
    pub fn get(&self, slot: TupleSlot) -> f64 {
        self.values[slot.index() - 1]
    }

    pub fn altitude(&self) -> f64 {
        self.get(TupleSlot::ALTITUDE)
    }

    pub fn battery(&self) -> f64 {
        self.get(TupleSlot::BATTERY)
    }

    pub fn heading(&self) -> f64 {
        self.get(TupleSlot::HEADING)
    }

    pub fn in_declared_ranges(&self) -> bool {
        (0.0..=100.0).contains(&self.battery()) && (0.0..360.0).contains(&self.heading())
    }
}

impl fmt::Display for StateTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}", self.flight_state)?;
        for v in &self.values {
            write!(f, ", {v}")?;
        }
        f.write_str(">")
    }
}
