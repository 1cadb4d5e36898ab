//! Deterministic injection-molding machine simulator.
//!
//! The dynamics are intentionally simple first-order models; every
//! coefficient lives in one constants table ([`SimConstants`]) so tests can
//! derive expected trajectories analytically:
//!
//! - barrel temperature relaxes toward a setpoint proportional to the
//!   heating level: `barrel' = barrel + heat_rate * (setpoint - barrel)`
//!   with `setpoint = heat_base + heat_per_level * level`
//! - nozzle temperature adds flow friction:
//!   `nozzle = barrel + friction_per_flow * injectionFlow`
//! - dosed volume is `dosing_rate * dosingTime`; the injected volume is
//!   capped by the switch-over volume, the rest stays as melt cushion
//! - injection pressure is `pressure_per_back_pressure * backPressure +
//!   pressure_per_flow * injectionFlow`
//! - cycle time sums dosing, injection (volume/flow), holding, and cooling
//!
//! Optional bounded noise is seeded and applied per cycle as a pure
//! function of `(seed, cycleId)`; with `noise_amp = 0` runs are exactly
//! reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::domain::AttributePath;
use crate::situation::Situation;
use crate::value::Value;

use super::{ConfigWrite, MachinePort, PortCapabilities, PortError, WriteAck};

/// The authoritative coefficient table for the invented process dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct SimConstants {
    /// Barrel setpoint at heating level 0, degC.
    pub heat_base: f64,
    /// Barrel setpoint gain per heating level, degC/level.
    pub heat_per_level: f64,
    /// First-order relaxation rate of the barrel temperature per cycle.
    pub heat_rate: f64,
    /// Nozzle temperature rise per unit of injection flow, degC/(cm3/s).
    pub friction_per_flow: f64,
    /// Plastication rate, cm3/s of dosing time.
    pub dosing_rate: f64,
    /// Mold cavity volume, cm3.
    pub mold_volume: f64,
    /// Injection pressure per bar of back pressure.
    pub pressure_per_back_pressure: f64,
    /// Injection pressure per unit of injection flow, bar/(cm3/s).
    pub pressure_per_flow: f64,
    /// Holding phase duration, s.
    pub hold_time: f64,
    /// Cooling phase duration, s.
    pub cool_time: f64,
    /// Half-width of the uniform output noise; 0 disables noise.
    pub noise_amp: f64,
}

impl Default for SimConstants {
    fn default() -> Self {
        Self {
            heat_base: 100.0,
            heat_per_level: 90.0,
            heat_rate: 0.25,
            friction_per_flow: 0.2,
            dosing_rate: 2.0,
            mold_volume: 40.0,
            pressure_per_back_pressure: 1.0,
            pressure_per_flow: 10.0,
            hold_time: 10.0,
            cool_time: 20.0,
            noise_amp: 0.0,
        }
    }
}

impl SimConstants {
    /// Barrel temperature setpoint for a heating level.
    pub fn setpoint(&self, level: i64) -> f64 {
        self.heat_base + self.heat_per_level * level as f64
    }
}

/// Machine configuration: the writable process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Dosing duration, s. Clamped to [0, 60].
    pub dosing_time: f64,
    /// Heating level 1-5.
    pub cylinder_heating: i64,
    /// Injection flow, cm3/s. Clamped to [0, 200].
    pub injection_flow: f64,
    /// Switch-over volume, cm3. Clamped to [0, 100].
    pub switch_over_volume: f64,
    /// Back pressure, bar. Clamped to [0, 300].
    pub back_pressure: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dosing_time: 15.0,
            cylinder_heating: 2,
            injection_flow: 50.0,
            switch_over_volume: 25.0,
            back_pressure: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutputs {
    pub nozzle_temperature: f64,
    pub pressure: f64,
    pub melt_cushion: f64,
    pub fill_fraction: f64,
    pub cycle_time: f64,
}

/// The deterministic plant model behind the simulator port.
#[derive(Debug, Clone)]
pub struct Simulator {
    constants: SimConstants,
    config: SimConfig,
    pending: Option<(SimConfig, Vec<String>)>,
    barrel_temp: f64,
    wear: f64,
    seed: u64,
    cycle: u64,
    last_outputs: Option<CycleOutputs>,
}

impl Simulator {
    /// Starts at thermal equilibrium for the initial configuration.
    pub fn new(constants: SimConstants, config: SimConfig, seed: u64) -> Self {
        let config = clamp_config(config).0;
        Self {
            constants,
            barrel_temp: constants.setpoint(config.cylinder_heating),
            config,
            pending: None,
            wear: 1.0,
            seed,
            cycle: 0,
            last_outputs: None,
        }
    }

    pub fn constants(&self) -> &SimConstants {
        &self.constants
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn barrel_temp(&self) -> f64 {
        self.barrel_temp
    }

    pub fn last_outputs(&self) -> Option<&CycleOutputs> {
        self.last_outputs.as_ref()
    }

    /// Advances one production cycle and snapshots it as a situation.
    pub fn step(&mut self) -> (u64, Situation) {
        if let Some((config, _)) = self.pending.take() {
            self.config = config;
        }
        self.cycle += 1;
        let c = &self.constants;
        let cfg = &self.config;

        // first-order relaxation toward the heating setpoint
        let setpoint = c.setpoint(cfg.cylinder_heating);
        self.barrel_temp += c.heat_rate * (setpoint - self.barrel_temp);

        let mut rng = noise_rng(self.seed, self.cycle);
        let mut noise = |amp: f64| -> f64 {
            if c.noise_amp == 0.0 {
                0.0
            } else {
                rng.gen_range(-1.0..=1.0) * amp * self.wear
            }
        };

        let nozzle_temperature =
            self.barrel_temp + c.friction_per_flow * cfg.injection_flow + noise(c.noise_amp);
        let dosed = c.dosing_rate * cfg.dosing_time;
        let injected = cfg.switch_over_volume.min(dosed);
        let fill_fraction = (injected / c.mold_volume).clamp(0.0, 1.0);
        let melt_cushion = (dosed - injected).max(0.0) + noise(c.noise_amp * 0.1);
        let melt_cushion = melt_cushion.max(0.0);
        let pressure = c.pressure_per_back_pressure * cfg.back_pressure
            + c.pressure_per_flow * cfg.injection_flow
            + noise(c.noise_amp);
        let injection_time = if cfg.injection_flow > 0.0 {
            injected / cfg.injection_flow
        } else {
            0.0
        };
        let cycle_time = cfg.dosing_time + injection_time + c.hold_time + c.cool_time;

        let outputs = CycleOutputs {
            nozzle_temperature,
            pressure,
            melt_cushion,
            fill_fraction,
            cycle_time,
        };
        self.last_outputs = Some(outputs);

        let mut s = Situation::new(self.cycle);
        let p = |class: &str, attr: &str| AttributePath::new(class, attr);
        s.set(p("ProcessData", "cycleId"), Value::Int(self.cycle as i64));
        s.set(p("ProcessData", "cycleTime"), Value::Float(cycle_time));
        s.set(
            p("ProcessData", "nozzleTemperature"),
            Value::Float(nozzle_temperature),
        );
        s.set(p("ProcessData", "pressure"), Value::Float(pressure));
        s.set(p("ProcessData", "heating"), Value::Int(cfg.cylinder_heating));
        s.set(p("PhaseData", "dosingTime"), Value::Float(cfg.dosing_time));
        s.set(
            p("PhaseData", "cylinderHeating"),
            Value::Int(cfg.cylinder_heating),
        );
        s.set(
            p("PhaseData", "injectionFlow"),
            Value::Float(cfg.injection_flow),
        );
        s.set(
            p("PhaseData", "switchOverVolume"),
            Value::Float(cfg.switch_over_volume),
        );
        s.set(
            p("PhaseData", "backPressure"),
            Value::Float(cfg.back_pressure),
        );
        s.set(p("PhaseData", "meltCushion"), Value::Float(melt_cushion));
        (self.cycle, s)
    }
}

fn noise_rng(seed: u64, cycle: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ cycle.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn clamp_config(mut cfg: SimConfig) -> (SimConfig, Vec<String>) {
    let mut warnings = Vec::new();
    let mut clamp_f = |name: &str, v: &mut f64, lo: f64, hi: f64| {
        if *v < lo || *v > hi {
            let clamped = v.clamp(lo, hi);
            warnings.push(format!("{name} = {v} outside [{lo}, {hi}], clamped to {clamped}"));
            *v = clamped;
        }
    };
    clamp_f("dosingTime", &mut cfg.dosing_time, 0.0, 60.0);
    clamp_f("injectionFlow", &mut cfg.injection_flow, 0.0, 200.0);
    clamp_f("switchOverVolume", &mut cfg.switch_over_volume, 0.0, 100.0);
    clamp_f("backPressure", &mut cfg.back_pressure, 0.0, 300.0);
    if cfg.cylinder_heating < 1 || cfg.cylinder_heating > 5 {
        let clamped = cfg.cylinder_heating.clamp(1, 5);
        warnings.push(format!(
            "cylinderHeating = {} outside [1, 5], clamped to {clamped}",
            cfg.cylinder_heating
        ));
        cfg.cylinder_heating = clamped;
    }
    (cfg, warnings)
}

impl MachinePort for Simulator {
    fn read_cycle(&mut self) -> Result<Option<(u64, Situation)>, PortError> {
        Ok(Some(self.step()))
    }

    /// Accepted writes land in a pending configuration that takes effect at
    /// the start of the next cycle.
    fn write_config(&mut self, writes: &[ConfigWrite]) -> Result<WriteAck, PortError> {
        let mut next = self.pending.as_ref().map(|(c, _)| *c).unwrap_or(self.config);
        for w in writes {
            let key = (w.path.class.as_str(), w.path.attribute.as_str());
            let as_float = w.value.as_f64();
            let as_level = match &w.value {
                Value::Int(n) => Some(*n),
                Value::Float(x) if x.fract() == 0.0 => Some(*x as i64),
                _ => None,
            };
            match key {
                ("ProcessData", "heating") | ("PhaseData", "cylinderHeating") => {
                    let Some(level) = as_level else {
                        return Ok(WriteAck::Rejected {
                            reason: format!("{} expects an integer heating level", w.path),
                        });
                    };
                    next.cylinder_heating = level;
                }
                ("PhaseData", "dosingTime") => match as_float {
                    Some(x) => next.dosing_time = x,
                    None => {
                        return Ok(WriteAck::Rejected {
                            reason: format!("{} expects a numeric value", w.path),
                        })
                    }
                },
                ("PhaseData", "injectionFlow") => match as_float {
                    Some(x) => next.injection_flow = x,
                    None => {
                        return Ok(WriteAck::Rejected {
                            reason: format!("{} expects a numeric value", w.path),
                        })
                    }
                },
                ("PhaseData", "switchOverVolume") => match as_float {
                    Some(x) => next.switch_over_volume = x,
                    None => {
                        return Ok(WriteAck::Rejected {
                            reason: format!("{} expects a numeric value", w.path),
                        })
                    }
                },
                ("PhaseData", "backPressure") => match as_float {
                    Some(x) => next.back_pressure = x,
                    None => {
                        return Ok(WriteAck::Rejected {
                            reason: format!("{} expects a numeric value", w.path),
                        })
                    }
                },
                _ => {
                    return Ok(WriteAck::Rejected {
                        reason: format!("{} is not a writable machine parameter", w.path),
                    })
                }
            }
        }
        let (clamped, warnings) = clamp_config(next);
        self.pending = Some((clamped, warnings.clone()));
        Ok(WriteAck::Accepted { warnings })
    }

    fn capabilities(&self) -> PortCapabilities {
        PortCapabilities { writable: true }
    }
}
