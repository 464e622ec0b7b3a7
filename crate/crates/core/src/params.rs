//! Physical configuration of the levitated particle and the scalars derived
//! from it. Everything is strict SI; unit conversion happens at the CLI edge.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.806_65;
/// Unified atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub mass: f64,
    pub radius: f64,
    pub density: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub nbar: f64,
    pub gas_temperature: f64,
    pub pressure: f64,
    pub gravity: f64,
    pub theta0: f64,
    pub chi: f64,
    pub heating_rate: f64,
    pub hbar: f64,
    pub boltzmann: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self::paper_default()
    }
}

impl PhysicalParams {
    /// The reference silica-nanoparticle configuration: 145 nm radius,
    /// 250 kHz → 5.97 kHz quench, n̄ = 1.25, 3 µPa background gas at 354 K,
    /// θ₀ = −3.24°, 37 pm trap shift and 16 mK/s heating.
    pub fn paper_default() -> Self {
        Self {
            mass: 2.9e-17,
            radius: 145e-9,
            density: 2260.0,
            omega0: 2.0 * PI * 250e3,
            omega1: 2.0 * PI * 5.97e3,
            nbar: 1.25,
            gas_temperature: 354.0,
            pressure: 3.0e-6,
            gravity: STANDARD_GRAVITY,
            theta0: (-3.24f64).to_radians(),
            chi: 37e-12,
            heating_rate: 16e-3,
            hbar: HBAR,
            boltzmann: BOLTZMANN,
        }
    }

    pub fn with_heating_rate(mut self, rate: f64) -> Self {
        self.heating_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("mass", self.mass),
            ("radius", self.radius),
            ("density", self.density),
            ("omega0", self.omega0),
            ("omega1", self.omega1),
            ("nbar", self.nbar),
            ("gas_temperature", self.gas_temperature),
            ("pressure", self.pressure),
            ("gravity", self.gravity),
            ("theta0", self.theta0),
            ("chi", self.chi),
            ("heating_rate", self.heating_rate),
            ("hbar", self.hbar),
            ("boltzmann", self.boltzmann),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(invalid(field, format!("must be finite, got {v}")));
            }
        }
        if self.mass <= 0.0 {
            return Err(invalid("mass", "must be > 0"));
        }
        if self.radius <= 0.0 {
            return Err(invalid("radius", "must be > 0"));
        }
        if self.density <= 0.0 {
            return Err(invalid("density", "must be > 0"));
        }
        if self.pressure < 0.0 {
            return Err(invalid("pressure", "must be >= 0"));
        }
        if self.omega1 <= 0.0 {
            return Err(invalid("omega1", "must be > 0"));
        }
        if self.omega0 <= self.omega1 {
            return Err(invalid("omega0", "must exceed omega1 (the quench lowers the frequency)"));
        }
        if self.nbar < 0.0 {
            return Err(invalid("nbar", "must be >= 0"));
        }
        if self.gas_temperature <= 0.0 {
            return Err(invalid("gas_temperature", "must be > 0"));
        }
        if self.heating_rate < 0.0 {
            return Err(invalid("heating_rate", "must be >= 0"));
        }
        if self.hbar <= 0.0 || self.boltzmann <= 0.0 {
            return Err(invalid("hbar", "physical constants must be > 0"));
        }
        Ok(())
    }

    /// Damping rate γ such that the fluctuation term 2m k_B T₀ γ heats the
    /// free oscillator at exactly `heating_rate` kelvin per second.
    pub fn gamma_damping(&self) -> f64 {
        self.heating_rate / self.gas_temperature
    }

    /// Projection of gravity on the lattice axis for table tilt `tilt`.
    pub fn acceleration_from_tilt(&self, tilt: f64) -> f64 {
        self.gravity * (tilt + self.theta0).sin()
    }

    /// Intensity ratio q that takes ω₀ to ω₁.
    pub fn quench_ratio(&self) -> f64 {
        (self.omega1 / self.omega0).powi(2)
    }

    /// (4/3)πR³ρ, the mass implied by radius and density.
    pub fn sphere_mass(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3) * self.density
    }

    pub fn period1(&self) -> f64 {
        2.0 * PI / self.omega1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedScalars {
    pub kappa: f64,
    pub freq_ratio_sq: f64,
    pub zero_point_z: f64,
    pub zero_point_p: f64,
    pub gamma_damping: f64,
}

pub fn derive(params: &PhysicalParams) -> Result<DerivedScalars> {
    params.validate()?;
    let PhysicalParams {
        mass: m,
        omega0: w0,
        omega1: w1,
        hbar,
        ..
    } = *params;
    Ok(DerivedScalars {
        kappa: 2.0 * params.nbar + 1.0,
        freq_ratio_sq: (w0 * w0) / (w1 * w1),
        zero_point_z: (hbar / (2.0 * m * w0)).sqrt(),
        zero_point_p: (hbar * m * w0 / 2.0).sqrt(),
        gamma_damping: params.gamma_damping(),
    })
}

/// Shift of a harmonic minimum under a static acceleration, δ = a ω⁻².
pub fn static_displacement(a: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveOmega(omega));
    }
    Ok(a / (omega * omega))
}

/// Displacement of the potential minimum produced by quenching ω₀ → ω₁.
pub fn quench_displacement(a: f64, omega0: f64, omega1: f64) -> Result<f64> {
    Ok(static_displacement(a, omega1)? - static_displacement(a, omega0)?)
}

const UNITS: [(&str, &str); 14] = [
    ("mass", "kg"),
    ("radius", "m"),
    ("density", "kg/m^3"),
    ("omega0", "rad/s"),
    ("omega1", "rad/s"),
    ("nbar", "1"),
    ("gas_temperature", "K"),
    ("pressure", "Pa"),
    ("gravity", "m/s^2"),
    ("theta0", "rad"),
    ("chi", "m"),
    ("heating_rate", "K/s"),
    ("hbar", "J*s"),
    ("boltzmann", "J/K"),
];

/// JSON form of [`PhysicalParams`]: the fields at top level plus a `units`
/// object declaring the unit of each. Missing fields fall back to the
/// reference configuration; declared units must be the SI ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsDocument {
    #[serde(flatten)]
    pub params: PhysicalParams,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
}

impl ParamsDocument {
    pub fn new(params: PhysicalParams) -> Self {
        let units = UNITS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { params, units }
    }

    pub fn check_units(&self) -> Result<()> {
        for (field, unit) in &self.units {
            match UNITS.iter().find(|(k, _)| k == field) {
                None => return Err(Error::Format(format!("units: unknown field `{field}`"))),
                Some((k, expected)) if unit != expected => {
                    return Err(Error::Format(format!(
                        "units: `{k}` must be given in {expected}, found {unit}"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl PhysicalParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ParamsDocument::new(*self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: ParamsDocument = serde_json::from_value(value)?;
        doc.check_units()?;
        doc.params.validate()?;
        Ok(doc.params)
    }
}
