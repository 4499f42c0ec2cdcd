//! Physical and dimensionless descriptions of the climatic chamber problem.
//!
//! Temperatures are expressed in °C everywhere, so the dimensionless
//! temperature is `u = T / T0` with `T0` in °C. The lateral coefficient
//! `R_l` is historically called a resistance but carries conductance units
//! (W·m⁻²·K⁻¹); it is treated as a surface conductance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default operating range used to validate the affine property laws (°C).
pub const OPERATING_RANGE_C: (f64, f64) = (20.0, 30.0);

/// Affine temperature-dependent material: `k(T) = k0 + k1·T/T0`,
/// `c(T) = c0 + c1·T/T0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialLayer {
    /// Conductivity intercept (W·m⁻¹·K⁻¹).
    pub k0: f64,
    /// Conductivity slope (W·m⁻¹·K⁻¹).
    pub k1: f64,
    /// Volumetric capacity intercept (J·m⁻³·K⁻¹). May be negative.
    pub c0: f64,
    /// Volumetric capacity slope (J·m⁻³·K⁻¹).
    pub c1: f64,
    /// Layer thickness (m).
    pub thickness: f64,
}

impl MaterialLayer {
    pub fn new(k0: f64, k1: f64, c0: f64, c1: f64, thickness: f64) -> Result<Self> {
        let layer = MaterialLayer {
            k0,
            k1,
            c0,
            c1,
            thickness,
        };
        layer.check_finite()?;
        if !(thickness > 0.0) {
            return Err(Error::Config(format!(
                "layer thickness must be positive, got {thickness}"
            )));
        }
        Ok(layer)
    }

    pub fn wood_fiber() -> Self {
        MaterialLayer {
            k0: 8.5e-3,
            k1: 3.17e-2,
            c0: -2.77e5,
            c1: 4.7e5,
            thickness: 0.08,
        }
    }

    pub fn insulator() -> Self {
        MaterialLayer {
            k0: 4e-3,
            k1: 0.0,
            c0: 7e4,
            c1: 0.0,
            thickness: 0.08,
        }
    }

    pub fn aluminum() -> Self {
        MaterialLayer {
            k0: 240.0,
            k1: 0.0,
            c0: 2.37e6,
            c1: 0.0,
            thickness: 1e-4,
        }
    }

    pub fn conductivity(&self, t_c: f64, t_ref: f64) -> f64 {
        self.k0 + self.k1 * t_c / t_ref
    }

    pub fn capacity(&self, t_c: f64, t_ref: f64) -> f64 {
        self.c0 + self.c1 * t_c / t_ref
    }

    fn check_finite(&self) -> Result<()> {
        let all = [self.k0, self.k1, self.c0, self.c1, self.thickness];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite material coefficient in {self:?}"
            )));
        }
        Ok(())
    }

    /// Checks that effective conductivity and capacity stay positive over
    /// `range` (°C). Both laws are affine so the endpoints suffice.
    pub fn validate(&self, t_ref: f64, range: (f64, f64)) -> Result<()> {
        self.check_finite()?;
        if !(self.thickness > 0.0) {
            return Err(Error::Config(format!(
                "layer thickness must be positive, got {}",
                self.thickness
            )));
        }
        for t in [range.0, range.1] {
            let k = self.conductivity(t, t_ref);
            let c = self.capacity(t, t_ref);
            if !(k > 0.0) {
                return Err(Error::Config(format!(
                    "effective conductivity {k} is not positive at {t} °C"
                )));
            }
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "effective capacity {c} is not positive at {t} °C"
                )));
            }
        }
        Ok(())
    }
}

/// Sample dimensions and layer positions along the height `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Height L0x (m).
    pub l0x: f64,
    /// Width L0y (m).
    pub l0y: f64,
    /// Depth L0z (m).
    pub l0z: f64,
    /// Layer boundaries along x, starting at 0 and ending at `l0x`.
    pub layer_boundaries: Vec<f64>,
    /// Thickness of the aluminum tape on the lateral faces (m). Zero removes it.
    pub aluminum_thickness: f64,
}

impl Geometry {
    pub fn chamber() -> Self {
        Geometry {
            l0x: 0.16,
            l0y: 0.08,
            l0z: 0.08,
            layer_boundaries: vec![0.0, 0.08, 0.16],
            aluminum_thickness: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l0x", self.l0x), ("l0y", self.l0y), ("l0z", self.l0z)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "geometry.{name} must be positive, got {v}"
                )));
            }
        }
        let b = &self.layer_boundaries;
        if b.len() != 3 {
            return Err(Error::Config(format!(
                "expected two layers (3 boundaries) along x, got {} boundaries",
                b.len()
            )));
        }
        if b[0] != 0.0 || (b[b.len() - 1] - self.l0x).abs() > 1e-12 * self.l0x {
            return Err(Error::Config(
                "layer boundaries must start at 0 and end at l0x".into(),
            ));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "layer boundaries must be strictly increasing".into(),
            ));
        }
        if !(self.aluminum_thickness >= 0.0) || 2.0 * self.aluminum_thickness >= self.l0y {
            return Err(Error::Config(format!(
                "aluminum thickness {} is incompatible with width {}",
                self.aluminum_thickness, self.l0y
            )));
        }
        Ok(())
    }

    /// Position of the wood-fiber/insulator interface (m).
    pub fn interface_position(&self) -> f64 {
        self.layer_boundaries[1]
    }
}

/// Piecewise-linear function with constant extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config(
                "schedule needs at least one breakpoint".into(),
            ));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::Config("schedule breakpoints must be finite".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Config(
                "schedule times must be strictly increasing".into(),
            ));
        }
        Ok(PiecewiseLinear { points })
    }

    pub fn constant(value: f64) -> Self {
        PiecewiseLinear {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let last = p[p.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let k = p.partition_point(|(tb, _)| *tb <= t);
        let (t0, v0) = p[k - 1];
        let (t1, v1) = p[k];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Right derivative at `t`.
    pub fn slope(&self, t: f64) -> f64 {
        let p = &self.points;
        if p.len() < 2 || t < p[0].0 || t >= p[p.len() - 1].0 {
            return 0.0;
        }
        let k = p.partition_point(|(tb, _)| *tb <= t);
        let (t0, v0) = p[k - 1];
        let (t1, v1) = p[k];
        (v1 - v0) / (t1 - t0)
    }

    pub fn min_value(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same shape with abscissa and ordinate rescaled.
    pub fn scaled(&self, time_factor: f64, value_factor: f64) -> Self {
        PiecewiseLinear {
            points: self
                .points
                .iter()
                .map(|(t, v)| (t * time_factor, v * value_factor))
                .collect(),
        }
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }
}

/// Ambient temperature program of the chamber, in (s, °C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySchedule {
    curve: PiecewiseLinear,
}

impl BoundarySchedule {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        Ok(BoundarySchedule {
            curve: PiecewiseLinear::new(breakpoints)?,
        })
    }

    /// 20 °C → 30 °C at 2 °C/h, plateau until 15 h, back to 20 °C at 20 h.
    pub fn chamber() -> Self {
        BoundarySchedule {
            curve: PiecewiseLinear {
                points: vec![
                    (0.0, 20.0),
                    (5.0 * 3600.0, 30.0),
                    (15.0 * 3600.0, 30.0),
                    (20.0 * 3600.0, 20.0),
                ],
            },
        }
    }

    pub fn constant(t_c: f64) -> Self {
        BoundarySchedule {
            curve: PiecewiseLinear::constant(t_c),
        }
    }

    pub fn temperature(&self, t_s: f64) -> f64 {
        self.curve.eval(t_s)
    }

    /// Heating/cooling rate on the segment starting at `t_s` (°C/s).
    pub fn rate(&self, t_s: f64) -> f64 {
        self.curve.slope(t_s)
    }

    pub fn curve(&self) -> &PiecewiseLinear {
        &self.curve
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        self.curve.points()
    }
}

/// Evaluates the chamber temperature at `t_s`.
pub fn boundary_temperature(schedule: &BoundarySchedule, t_s: f64) -> f64 {
    schedule.temperature(t_s)
}

/// Reference scales of the nondimensionalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScales {
    /// Reference temperature T0 (°C).
    pub temperature: f64,
    /// Time horizon t0 (s).
    pub time: f64,
    /// Reference length L0x (m).
    pub length: f64,
}

impl ReferenceScales {
    pub fn new(temperature: f64, time: f64, length: f64) -> Result<Self> {
        let s = ReferenceScales {
            temperature,
            time,
            length,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn chamber() -> Self {
        ReferenceScales {
            temperature: 20.0,
            time: 20.0 * 3600.0,
            length: 0.16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("temperature", self.temperature),
            ("time", self.time),
            ("length", self.length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "reference {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Dimensionless lumped problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessConfig {
    /// Fourier number of the wood fiber.
    pub fo1: f64,
    /// Fourier number of the insulator.
    pub fo2: f64,
    /// Top Biot number used when the config was built.
    pub bi_t: f64,
    /// Lateral Biot number used when the config was built.
    pub bi_l: f64,
    /// Length ratio L0x / L0y.
    pub r: f64,
    /// Conductivity ratio k20 / k10.
    pub kappa21: f64,
    /// Wood conductivity slope k11 / k10.
    pub kappa11: f64,
    /// Insulator conductivity slope k21 / k20.
    pub kappa21_slope: f64,
    /// Wood capacity slope c11 / c10.
    pub zeta11: f64,
    /// Insulator capacity slope c21 / c20.
    pub zeta21: f64,
    pub u_ini: f64,
    /// Ambient temperature as a function of τ.
    pub u_inf: PiecewiseLinear,
    pub chi_interface: f64,
    pub scales: ReferenceScales,
    pub scaling: ParameterScaling,
}

impl DimensionlessConfig {
    pub fn u_inf_at(&self, tau: f64) -> f64 {
        self.u_inf.eval(tau)
    }

    /// Dimensionless parameters for the Biot numbers stored in the config.
    pub fn parameters(&self) -> ParameterPoint {
        ParameterPoint {
            bi_t: self.bi_t,
            bi_l: self.bi_l,
        }
    }
}

/// Dimensionless unknowns (Bi_t, Bi_l). An infinite `bi_t` selects the
/// Dirichlet top/bottom configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub bi_t: f64,
    pub bi_l: f64,
}

impl ParameterPoint {
    pub fn new(bi_t: f64, bi_l: f64) -> Result<Self> {
        let p = ParameterPoint { bi_t, bi_l };
        p.validate()?;
        Ok(p)
    }

    pub fn is_dirichlet(&self) -> bool {
        self.bi_t == f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bi_t >= 0.0) || self.bi_t.is_nan() {
            return Err(Error::Domain(format!(
                "Bi_t must be >= 0, got {}",
                self.bi_t
            )));
        }
        if !(self.bi_l >= 0.0 && self.bi_l.is_finite()) {
            return Err(Error::Domain(format!(
                "Bi_l must be finite and >= 0, got {}",
                self.bi_l
            )));
        }
        Ok(())
    }
}

/// Physical unknowns (h_t, R_l) in W·m⁻²·K⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParameters {
    pub h_t: f64,
    pub r_l: f64,
}

impl PhysicalParameters {
    /// Values used before any estimation (prior means).
    pub fn a_priori() -> Self {
        PhysicalParameters { h_t: 8.0, r_l: 0.5 }
    }

    /// Order of magnitude of the chamber estimates, used for the
    /// reliability checks of the lumped model.
    pub fn estimated_scale() -> Self {
        PhysicalParameters {
            h_t: 16.0,
            r_l: 0.4,
        }
    }
}

/// Context for converting between (h_t, R_l) and (Bi_t, Bi_l).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterScaling {
    /// Wood conductivity intercept k10 (W·m⁻¹·K⁻¹).
    pub k10: f64,
    /// Reference length L0x (m).
    pub l0x: f64,
}

impl ParameterScaling {
    pub fn new(k10: f64, l0x: f64) -> Result<Self> {
        if !(k10 != 0.0 && k10.is_finite()) || !(l0x > 0.0 && l0x.is_finite()) {
            return Err(Error::Config(format!(
                "degenerate parameter scaling k10 = {k10}, L0x = {l0x}"
            )));
        }
        Ok(ParameterScaling { k10, l0x })
    }

    /// Bi_t = h_t·L0x/k10, Bi_l = 4·R_l·L0x/k10.
    pub fn to_dimensionless(&self, p: PhysicalParameters) -> ParameterPoint {
        ParameterPoint {
            bi_t: p.h_t * self.l0x / self.k10,
            bi_l: 4.0 * p.r_l * self.l0x / self.k10,
        }
    }

    pub fn to_physical(&self, p: ParameterPoint) -> PhysicalParameters {
        PhysicalParameters {
            h_t: p.bi_t * self.k10 / self.l0x,
            r_l: p.bi_l * self.k10 / (4.0 * self.l0x),
        }
    }
}

pub fn parameters_to_dimensionless(
    p: PhysicalParameters,
    scaling: &ParameterScaling,
) -> ParameterPoint {
    scaling.to_dimensionless(p)
}

pub fn parameters_to_physical(p: ParameterPoint, scaling: &ParameterScaling) -> PhysicalParameters {
    scaling.to_physical(p)
}

/// `1 + slope·u`, the dimensionless affine property law.
#[inline]
pub fn affine_property(slope: f64, u: f64) -> f64 {
    1.0 + slope * u
}

/// Builds the dimensionless lumped problem from physical inputs.
///
/// `layers[0]` is the wood fiber and `layers[1]` the insulator; a third
/// (aluminum) layer is accepted and ignored here.
pub fn nondimensionalize(
    layers: &[MaterialLayer],
    geometry: &Geometry,
    scales: &ReferenceScales,
    h_t: f64,
    r_l: f64,
    schedule: &BoundarySchedule,
    t_ini: f64,
) -> Result<DimensionlessConfig> {
    if layers.len() < 2 {
        return Err(Error::Config(format!(
            "need wood fiber and insulator layers, got {}",
            layers.len()
        )));
    }
    geometry.validate()?;
    scales.validate()?;
    if !(h_t >= 0.0) || !(r_l >= 0.0) || !r_l.is_finite() {
        return Err(Error::Config(format!(
            "surface coefficients must be >= 0, got h_t = {h_t}, R_l = {r_l}"
        )));
    }
    if !t_ini.is_finite() {
        return Err(Error::Config("initial temperature must be finite".into()));
    }
    let wood = &layers[0];
    let ins = &layers[1];
    for (name, v) in [
        ("k10", wood.k0),
        ("c10", wood.c0),
        ("k20", ins.k0),
        ("c20", ins.c0),
    ] {
        if v == 0.0 || !v.is_finite() {
            return Err(Error::Config(format!("{name} must be non-zero, got {v}")));
        }
    }
    let l = scales.length;
    let t0 = scales.time;
    let scaling = ParameterScaling::new(wood.k0, l)?;
    let bi = scaling.to_dimensionless(PhysicalParameters { h_t, r_l });
    Ok(DimensionlessConfig {
        fo1: wood.k0 * t0 / (wood.c0 * l * l),
        fo2: ins.k0 * t0 / (ins.c0 * l * l),
        bi_t: bi.bi_t,
        bi_l: bi.bi_l,
        r: geometry.l0x / geometry.l0y,
        kappa21: ins.k0 / wood.k0,
        kappa11: wood.k1 / wood.k0,
        kappa21_slope: ins.k1 / ins.k0,
        zeta11: wood.c1 / wood.c0,
        zeta21: ins.c1 / ins.c0,
        u_ini: t_ini / scales.temperature,
        u_inf: schedule.curve().scaled(1.0 / t0, 1.0 / scales.temperature),
        chi_interface: geometry.interface_position() / geometry.l0x,
        scales: *scales,
        scaling,
    })
}

/// Chamber setup bundled together: materials, geometry, scales and program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSetup {
    pub wood: MaterialLayer,
    pub insulator: MaterialLayer,
    pub aluminum: MaterialLayer,
    pub geometry: Geometry,
    pub scales: ReferenceScales,
    pub schedule: BoundarySchedule,
    /// Initial temperature (°C).
    pub t_ini: f64,
}

impl PhysicalSetup {
    pub fn chamber() -> Self {
        PhysicalSetup {
            wood: MaterialLayer::wood_fiber(),
            insulator: MaterialLayer::insulator(),
            aluminum: MaterialLayer::aluminum(),
            geometry: Geometry::chamber(),
            scales: ReferenceScales::chamber(),
            schedule: BoundarySchedule::chamber(),
            t_ini: 20.0,
        }
    }

    pub fn layers(&self) -> [MaterialLayer; 3] {
        [self.wood, self.insulator, self.aluminum]
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.scales.validate()?;
        let range = (
            OPERATING_RANGE_C
                .0
                .min(self.schedule.curve().min_value())
                .min(self.t_ini),
            OPERATING_RANGE_C
                .1
                .max(self.schedule.curve().max_value())
                .max(self.t_ini),
        );
        for layer in self.layers() {
            layer.validate(self.scales.temperature, range)?;
        }
        Ok(())
    }

    pub fn dimensionless(&self, h_t: f64, r_l: f64) -> Result<DimensionlessConfig> {
        nondimensionalize(
            &self.layers(),
            &self.geometry,
            &self.scales,
            h_t,
            r_l,
            &self.schedule,
            self.t_ini,
        )
    }

    pub fn scaling(&self) -> ParameterScaling {
        ParameterScaling {
            k10: self.wood.k0,
            l0x: self.scales.length,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chamber_config(h_t: f64, r_l: f64) -> DimensionlessConfig {
        PhysicalSetup::chamber().dimensionless(h_t, r_l).unwrap()
    }

    #[test]
    fn affine_property_examples() {
        assert_eq!(affine_property(0.0, 0.9), 1.0);
        assert_eq!(affine_property(3.729, 0.0), 1.0);
        let slope = 3.17e-2 / 8.5e-3;
        assert!((affine_property(slope, 1.0) - 4.729_411_764_705_882).abs() < 1e-12);
    }

    #[test]
    fn chamber_dimensionless_numbers() {
        let cfg = chamber_config(8.0, 0.5);
        assert!((cfg.bi_t - 150.588_235_294_117_65).abs() < 1e-9);
        assert!((cfg.bi_l - 37.647_058_823_529_41).abs() < 1e-9);
        assert_eq!(cfg.r, 2.0);
        assert!((cfg.kappa21 - 0.470_588_235_294_117_6).abs() < 1e-12);
        assert!((cfg.chi_interface - 0.5).abs() < 1e-15);
        assert_eq!(cfg.u_ini, 1.0);
        let fo1 = 8.5e-3 * 72000.0 / (-2.77e5 * 0.16 * 0.16);
        assert!((cfg.fo1 - fo1).abs() < 1e-15);
    }

    #[test]
    fn chamber_schedule_values() {
        let s = BoundarySchedule::chamber();
        assert_eq!(boundary_temperature(&s, 0.0), 20.0);
        assert_eq!(boundary_temperature(&s, 10.0 * 3600.0), 30.0);
        assert!((boundary_temperature(&s, 2.5 * 3600.0) - 25.0).abs() < 1e-12);
        assert_eq!(boundary_temperature(&s, -5.0), 20.0);
        assert_eq!(boundary_temperature(&s, 1e9), 20.0);
        assert!((s.rate(1.0) * 3600.0 - 2.0).abs() < 1e-12);
        assert!((s.rate(16.0 * 3600.0) * 3600.0 + 2.0).abs() < 1e-12);
    }

    #[test]
    fn u_inf_range_matches_program() {
        let cfg = chamber_config(8.0, 0.5);
        assert_eq!(cfg.u_inf.min_value(), 1.0);
        assert_eq!(cfg.u_inf.max_value(), 1.5);
    }

    #[test]
    fn empty_schedule_rejected() {
        assert!(matches!(
            BoundarySchedule::new(vec![]),
            Err(Error::Config(_))
        ));
        assert!(BoundarySchedule::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn parameter_conversion_examples() {
        let scaling = PhysicalSetup::chamber().scaling();
        let back = scaling.to_physical(ParameterPoint {
            bi_t: 150.588_235_294_117_65,
            bi_l: 0.0,
        });
        assert!((back.h_t - 8.0).abs() < 1e-12);
        assert_eq!(back.r_l, 0.0);
        let p = scaling.to_dimensionless(PhysicalParameters { h_t: 0.0, r_l: 0.3 });
        assert_eq!(p.bi_t, 0.0);
    }

    #[test]
    fn degenerate_denominators_rejected() {
        let mut setup = PhysicalSetup::chamber();
        setup.wood.k0 = 0.0;
        assert!(matches!(
            setup.dimensionless(8.0, 0.5),
            Err(Error::Config(_))
        ));
        let mut setup = PhysicalSetup::chamber();
        setup.insulator.c0 = 0.0;
        assert!(setup.dimensionless(8.0, 0.5).is_err());
        assert!(PhysicalSetup::chamber().dimensionless(-1.0, 0.5).is_err());
    }

    #[test]
    fn chamber_layers_valid_over_operating_range() {
        PhysicalSetup::chamber().validate().unwrap();
        // c0 < 0 alone is fine, what matters is the effective capacity.
        let mut bad = MaterialLayer::wood_fiber();
        bad.c1 = 1.0e5;
        assert!(bad.validate(20.0, OPERATING_RANGE_C).is_err());
    }

    #[test]
    fn geometry_invariants() {
        Geometry::chamber().validate().unwrap();
        let mut g = Geometry::chamber();
        g.layer_boundaries = vec![0.0, 0.1, 0.08];
        assert!(g.validate().is_err());
        let mut g = Geometry::chamber();
        g.layer_boundaries = vec![0.01, 0.08, 0.16];
        assert!(g.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conversion_round_trip(h_t in 1e-6f64..1e4, r_l in 1e-6f64..1e3) {
                let scaling = PhysicalSetup::chamber().scaling();
                let p = PhysicalParameters { h_t, r_l };
                let back = scaling.to_physical(scaling.to_dimensionless(p));
                prop_assert!(((back.h_t - h_t) / h_t).abs() < 1e-12);
                prop_assert!(((back.r_l - r_l) / r_l).abs() < 1e-12);
            }

            #[test]
            fn schedule_continuous_at_breakpoints(idx in 0usize..4) {
                let s = BoundarySchedule::chamber();
                let tb = s.breakpoints()[idx].0;
                let eps = 1e-9;
                let left = s.temperature(tb - eps);
                let right = s.temperature(tb + eps);
                prop_assert!((left - s.temperature(tb)).abs() < 1e-12);
                prop_assert!((right - s.temperature(tb)).abs() < 1e-12);
            }

            #[test]
            fn biot_numbers_homogeneous(h_t in 0.1f64..100.0, r_l in 0.01f64..5.0) {
                let a = chamber_config(h_t, r_l);
                let b = chamber_config(2.0 * h_t, r_l);
                let c = chamber_config(h_t, 2.0 * r_l);
                prop_assert_eq!(b.bi_t, 2.0 * a.bi_t);
                prop_assert_eq!(c.bi_l, 2.0 * a.bi_l);
            }
        }
    }
}
