use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the momentum equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    /// Ice density (kg/m^3).
    pub rho_ice: f64,
    /// Air density (kg/m^3).
    pub rho_atm: f64,
    /// Water density (kg/m^3).
    pub rho_ocean: f64,
    /// Air drag coefficient.
    pub c_atm: f64,
    /// Water drag coefficient.
    pub c_ocean: f64,
    /// Coriolis parameter (1/s).
    pub f_c: f64,
    /// Ice strength parameter (N/m^2).
    pub p_star: f64,
    /// Ice concentration parameter.
    pub c_conc: f64,
    /// Strain-rate regularization (1/s).
    pub delta_min: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            rho_ice: 900.0,
            rho_atm: 1.3,
            rho_ocean: 1026.0,
            c_atm: 1.2e-3,
            c_ocean: 5.5e-3,
            f_c: 1.46e-4,
            p_star: 27.5e3,
            c_conc: 20.0,
            delta_min: 2e-9,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rho_ice", self.rho_ice),
            ("rho_atm", self.rho_atm),
            ("rho_ocean", self.rho_ocean),
            ("C_atm", self.c_atm),
            ("C_ocean", self.c_ocean),
            ("f_c", self.f_c),
            ("P_star", self.p_star),
            ("C_conc", self.c_conc),
            ("Delta_min", self.delta_min),
        ];
        match all.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, v)) => Err(Error::InvalidArgument(format!("{name} must be positive, got {v}"))),
            None => Ok(()),
        }
    }

    /// Sets a parameter by its conventional symbol (`rho_ice`, `P_star`, ...).
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "rho_ice" => &mut self.rho_ice,
            "rho_atm" => &mut self.rho_atm,
            "rho_ocean" => &mut self.rho_ocean,
            "C_atm" => &mut self.c_atm,
            "C_ocean" => &mut self.c_ocean,
            "f_c" => &mut self.f_c,
            "P_star" => &mut self.p_star,
            "C_conc" => &mut self.c_conc,
            "Delta_min" => &mut self.delta_min,
            _ => return Err(Error::InvalidArgument(format!("unknown parameter '{key}'"))),
        };
        *slot = value;
        Ok(())
    }

    pub const KEYS: [&'static str; 9] = [
        "rho_ice", "rho_atm", "rho_ocean", "C_atm", "C_ocean", "f_c", "P_star", "C_conc", "Delta_min",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = PhysParams::default();
        p.validate().unwrap();
        assert_eq!(p.p_star, 27.5e3);
        assert_eq!(p.delta_min, 2e-9);
    }

    #[test]
    fn set_by_symbol() {
        let mut p = PhysParams::default();
        p.set("P_star", 1.0).unwrap();
        assert_eq!(p.p_star, 1.0);
        assert!(p.set("bogus", 1.0).is_err());
        p.set("rho_ice", -1.0).unwrap();
        assert!(p.validate().is_err());
    }
}
