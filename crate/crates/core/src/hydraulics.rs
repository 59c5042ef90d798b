//! Stateless hydraulic kernel: turbine power, pump flow and stored potential
//! energy for a single head.

/// Joules per gigawatt-hour.
pub const JOULES_PER_GWH: f64 = 3.6e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HydraulicsError {
    #[error("head must be > 0 m (got {0})")]
    NonPositiveHead(f64),
    #[error("efficiency must lie in (0, 1] (got {0})")]
    Efficiency(f64),
    #[error("{name} must be finite and >= 0 (got {value})")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be finite and > 0 (got {value})")]
    Constant { name: &'static str, value: f64 },
}

fn check_common(eta: f64, rho: f64, g: f64, head_m: f64) -> Result<(), HydraulicsError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(HydraulicsError::Efficiency(eta));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(HydraulicsError::Constant { name: "rho", value: rho });
    }
    if !(g > 0.0 && g.is_finite()) {
        return Err(HydraulicsError::Constant { name: "g", value: g });
    }
    if !(head_m > 0.0 && head_m.is_finite()) {
        return Err(HydraulicsError::NonPositiveHead(head_m));
    }
    Ok(())
}

fn check_non_negative(name: &'static str, value: f64) -> Result<(), HydraulicsError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(HydraulicsError::Negative { name, value })
    }
}

/// Electrical output of a turbine passing `q_turbine_m3s` through `head_m`:
/// η_t·ρ·g·h·q, in watts.
pub fn generation_power(
    eta_turbine: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    q_turbine_m3s: f64,
) -> Result<f64, HydraulicsError> {
    check_common(eta_turbine, rho, g, head_m)?;
    check_non_negative("q_turbine_m3s", q_turbine_m3s)?;
    Ok(eta_turbine * rho * g * head_m * q_turbine_m3s)
}

/// Flow lifted through `head_m` by a pump drawing `p_charge_w`:
/// η_p·P / (ρ·g·h), in m³/s.
pub fn pumping_flow(
    eta_pump: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    p_charge_w: f64,
) -> Result<f64, HydraulicsError> {
    check_common(eta_pump, rho, g, head_m)?;
    check_non_negative("p_charge_w", p_charge_w)?;
    Ok(eta_pump * p_charge_w / (rho * g * head_m))
}

/// Electrical power a pump must draw to lift `q_pump_m3s` through `head_m`.
/// Inverse of [`pumping_flow`].
pub fn pumping_power(
    eta_pump: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    q_pump_m3s: f64,
) -> Result<f64, HydraulicsError> {
    check_common(eta_pump, rho, g, head_m)?;
    check_non_negative("q_pump_m3s", q_pump_m3s)?;
    Ok(q_pump_m3s * rho * g * head_m / eta_pump)
}

/// Turbine flow that produces `target_power_w`. Inverse of [`generation_power`].
pub fn flow_for_power(
    eta_turbine: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    target_power_w: f64,
) -> Result<f64, HydraulicsError> {
    check_common(eta_turbine, rho, g, head_m)?;
    check_non_negative("target_power_w", target_power_w)?;
    Ok(target_power_w / (eta_turbine * rho * g * head_m))
}

/// Potential energy of a stored volume released through one head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub joules: f64,
    pub gwh: f64,
}

impl EnergyEstimate {
    pub fn from_joules(joules: f64) -> Self {
        Self {
            joules,
            gwh: joules / JOULES_PER_GWH,
        }
    }
}

/// η·ρ·g·h·V.
pub fn potential_energy(
    eta: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    volume_m3: f64,
) -> Result<EnergyEstimate, HydraulicsError> {
    check_common(eta, rho, g, head_m)?;
    check_non_negative("volume_m3", volume_m3)?;
    Ok(EnergyEstimate::from_joules(eta * rho * g * head_m * volume_m3))
}
