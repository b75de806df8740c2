use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Electrode names and their 2-D head-projection coordinates (unit disc,
/// nose towards +y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    pub names: Vec<String>,
    pub positions: Vec<[f64; 2]>,
}

/// 22-electrode motor-imagery layout centred on C3/Cz/C4. Grid step 0.25 on
/// both axes, Cz at the origin.
const STANDARD_22: [(&str, f64, f64); 22] = [
    ("Fz", 0.0, 0.5),
    ("FC3", -0.5, 0.25),
    ("FC1", -0.25, 0.25),
    ("FCz", 0.0, 0.25),
    ("FC2", 0.25, 0.25),
    ("FC4", 0.5, 0.25),
    ("C5", -0.75, 0.0),
    ("C3", -0.5, 0.0),
    ("C1", -0.25, 0.0),
    ("Cz", 0.0, 0.0),
    ("C2", 0.25, 0.0),
    ("C4", 0.5, 0.0),
    ("C6", 0.75, 0.0),
    ("CP3", -0.5, -0.25),
    ("CP1", -0.25, -0.25),
    ("CPz", 0.0, -0.25),
    ("CP2", 0.25, -0.25),
    ("CP4", 0.5, -0.25),
    ("P1", -0.25, -0.5),
    ("Pz", 0.0, -0.5),
    ("P2", 0.25, -0.5),
    ("POz", 0.0, -0.75),
];

impl Montage {
    pub fn new(names: Vec<String>, positions: Vec<[f64; 2]>) -> Result<Self> {
        let m = Self { names, positions };
        m.validate()?;
        Ok(m)
    }

    pub fn standard_22() -> Self {
        Self {
            names: STANDARD_22.iter().map(|e| e.0.to_string()).collect(),
            positions: STANDARD_22.iter().map(|e| [e.1, e.2]).collect(),
        }
    }

    /// The standard layout for 22 channels; otherwise channels `Ch1..ChN`
    /// spread over concentric rings inside radius 0.9.
    pub fn default_for(channels: usize) -> Self {
        if channels == 22 {
            return Self::standard_22();
        }
        let mut positions = Vec::with_capacity(channels);
        if channels > 0 {
            positions.push([0.0, 0.0]);
        }
        let mut ring = 1;
        while positions.len() < channels {
            let radius = 0.9 * ring as f64 / ((channels as f64 / 6.0).sqrt().ceil().max(1.0));
            let slots = (6 * ring).min(channels - positions.len());
            for k in 0..slots {
                let angle = PI / 2.0 + 2.0 * PI * k as f64 / slots as f64;
                positions.push([radius.min(0.9) * angle.cos(), radius.min(0.9) * angle.sin()]);
            }
            ring += 1;
        }
        Self {
            names: (1..=channels).map(|i| format!("Ch{i}")).collect(),
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.positions.len() {
            return Err(Error::Format(format!(
                "montage has {} names but {} positions",
                self.names.len(),
                self.positions.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.names {
            if !seen.insert(name) {
                return Err(Error::Format(format!("duplicate channel name `{name}`")));
            }
        }
        for (name, [x, y]) in self.names.iter().zip(&self.positions) {
            if !(x.is_finite() && y.is_finite()) || x.hypot(*y) > 1.2 {
                return Err(Error::Format(format!("channel `{name}` lies outside radius 1.2")));
            }
        }
        Ok(())
    }
}
