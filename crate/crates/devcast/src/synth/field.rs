//! Planted deviation fields. Each field is a sum of smooth deformation
//! modes whose amplitudes are linear in selected process parameters, plus a
//! per-part random low-frequency component and a machining texture. The
//! field returns the signed deviation along the outward surface normal at
//! any chart sample, so the same field drives scan synthesis and
//! ground-truth feature evaluation. Sign convention: positive = material
//! surplus outside the nominal surface.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::cloud::Vec3;
use crate::synth::geometry::{PartSpec, PartType, RegionKind, SurfaceSample};
use crate::synth::params::ProcessParameters;

/// Linear couplings from process parameters to mode amplitudes. One
/// parameter drives one mode; the remaining parameters are inert.
pub mod coupling {
    /// Uniform scale per °C of ambient above the 22 °C reference.
    pub const THERMAL_PER_DEGC: f64 = 2.5e-4;
    /// Clamping bow amplitude per newton-equivalent of clamping force, mm.
    pub const BOW_PER_FORCE: f64 = 8.0e-3;
    /// Bore/wall ovalization per unit of coolant-concentration deficit
    /// below 11, mm.
    pub const OVAL_PER_CONC: f64 = 3.0e-3;
    /// Texture amplitude per m/min of cutting speed below 260, mm.
    pub const TEXTURE_PER_SPEED: f64 = 4.5e-5;
    /// Rim / edge erosion depth per unit tool-wear index, mm.
    pub const EROSION_PER_WEAR: f64 = 3.0e-2;
    /// Thin trailing edges erode faster than flat rims under the same wear.
    pub const TE_EROSION_FACTOR: f64 = 1.5;
    /// Blade leading-edge recess per unit of coolant-concentration deficit
    /// below 11, mm. Sized so the recess clearly outweighs the thermal
    /// lever arm at the nose while staying inside the deviation budget.
    pub const LE_RECESS_PER_CONC: f64 = 8.0e-3;
    /// Fixed amplitude of the per-part random low-frequency component, mm.
    pub const RANDOM_AMP: f64 = 3.0e-3;
}

/// Hard cap the generator guarantees: no surface point deviates more than
/// this from nominal, mm.
pub const DEVIATION_BUDGET: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct Wave {
    /// Cycles per mm along `dir`.
    pub freq: f64,
    pub dir: Vec3,
    pub phase: f64,
}

impl Wave {
    fn eval(&self, p: &Vec3) -> f64 {
        (TAU * self.freq * p.dot(&self.dir) + self.phase).sin()
    }
}

#[derive(Debug, Clone)]
pub struct DeviationField {
    pub spec: PartSpec,
    /// Uniform thermal scale factor (signed, about the part center).
    pub thermal_scale: f64,
    /// Clamping bow amplitude, mm.
    pub bow_amp: f64,
    /// cos(2θ) ovalization amplitude on cylindrical walls, mm.
    pub oval_amp: f64,
    /// Machining texture amplitude, mm.
    pub texture_amp: f64,
    pub texture_waves: Vec<Wave>,
    /// Rim/edge erosion depth, mm (material removal, so recess).
    pub erosion_amp: f64,
    /// Blade leading-edge recess depth, mm.
    pub le_recess_amp: f64,
    /// Per-part random low-frequency component amplitude, mm.
    pub random_amp: f64,
    pub random_waves: Vec<Wave>,
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

impl DeviationField {
    /// Field with every mode amplitude zero; evaluates to 0 everywhere.
    pub fn zero(spec: PartSpec) -> Self {
        DeviationField {
            spec,
            thermal_scale: 0.0,
            bow_amp: 0.0,
            oval_amp: 0.0,
            texture_amp: 0.0,
            texture_waves: Vec::new(),
            erosion_amp: 0.0,
            le_recess_amp: 0.0,
            random_amp: 0.0,
            random_waves: Vec::new(),
        }
    }

    /// Builds the field for one part: mode amplitudes from the process
    /// parameters, wave shapes from the per-part RNG stream.
    pub fn from_parameters<R: Rng>(
        spec: PartSpec,
        params: &ProcessParameters,
        rng: &mut R,
    ) -> Self {
        let texture_waves = (0..6)
            .map(|_| Wave {
                freq: rng.gen_range(0.5..1.5),
                dir: random_unit(rng),
                phase: rng.gen_range(0.0..TAU),
            })
            .collect();
        let random_waves = (0..3)
            .map(|_| Wave {
                freq: rng.gen_range(0.05..0.15),
                dir: random_unit(rng),
                phase: rng.gen_range(0.0..TAU),
            })
            .collect();
        let blade = spec.part_type() == PartType::FreeformBlade;
        DeviationField {
            spec,
            thermal_scale: coupling::THERMAL_PER_DEGC * (params.ambient_temperature - 22.0),
            bow_amp: coupling::BOW_PER_FORCE * params.clamping_force,
            oval_amp: if blade {
                0.0
            } else {
                coupling::OVAL_PER_CONC * (11.0 - params.coolant_concentration)
            },
            texture_amp: coupling::TEXTURE_PER_SPEED * (260.0 - params.cutting_speed),
            texture_waves,
            erosion_amp: coupling::EROSION_PER_WEAR
                * params.tool_wear_index
                * if blade { coupling::TE_EROSION_FACTOR } else { 1.0 },
            le_recess_amp: if blade {
                coupling::LE_RECESS_PER_CONC * (11.0 - params.coolant_concentration)
            } else {
                0.0
            },
            random_amp: coupling::RANDOM_AMP,
            random_waves,
        }
    }

    /// Signed deviation along the outward normal at a chart sample, mm.
    pub fn eval(&self, s: &SurfaceSample) -> f64 {
        let p = s.point;
        let n = s.normal;
        let mut d = 0.0;

        // Uniform thermal scale about the part center: the normal component
        // of the displacement field s·(p - c).
        d += self.thermal_scale * (p - self.spec.center()).dot(&n);

        d += self.bow_amp * self.bow_profile(&p) .dot(&n);
        d += self.oval_term(s);
        if self.texture_amp != 0.0 && !self.texture_waves.is_empty() {
            let sum: f64 = self.texture_waves.iter().map(|w| w.eval(&p)).sum();
            d += self.texture_amp * sum / self.texture_waves.len() as f64;
        }
        d -= self.erosion_amp * self.erosion_profile(s);
        d -= self.le_recess_amp * le_bump(s);
        if self.random_amp != 0.0 && !self.random_waves.is_empty() {
            let sum: f64 = self.random_waves.iter().map(|w| w.eval(&p)).sum();
            d += self.random_amp * sum / self.random_waves.len() as f64;
        }
        d
    }

    /// Clamping bow displacement direction·magnitude (unit amplitude).
    fn bow_profile(&self, p: &Vec3) -> Vec3 {
        match self.spec {
            PartSpec::Plate { length, width, .. } => {
                let rx = (p.x - length / 2.0) / (length / 2.0);
                let ry = (p.y - width / 2.0) / (width / 2.0);
                let w = (1.0 - (rx * rx + ry * ry)).max(0.0);
                Vec3::new(0.0, 0.0, w)
            }
            PartSpec::Housing { outer_radius, .. } => {
                let rho2 = (p.x * p.x + p.y * p.y) / (outer_radius * outer_radius);
                Vec3::new(0.0, 0.0, (1.0 - rho2).max(0.0))
            }
            PartSpec::Blade { span, .. } => {
                // Cantilever flap bend, clamped at the root.
                let t = (p.z / span).clamp(0.0, 1.0);
                Vec3::new(0.0, t * t, 0.0)
            }
        }
    }

    /// cos(2θ) radial ovalization on cylindrical walls, projected on the
    /// sample normal (so holes and outer walls get opposite raw signs).
    fn oval_term(&self, s: &SurfaceSample) -> f64 {
        if self.oval_amp == 0.0 {
            return 0.0;
        }
        let (cx, cy) = match (self.spec, s.region) {
            (PartSpec::Plate { bore1, .. }, RegionKind::PlateBore1) => (bore1.0, bore1.1),
            (PartSpec::Plate { bore2, .. }, RegionKind::PlateBore2) => (bore2.0, bore2.1),
            (PartSpec::Housing { .. }, RegionKind::HousingBore | RegionKind::HousingOuter) => {
                (0.0, 0.0)
            }
            _ => return 0.0,
        };
        let theta = (s.point.y - cy).atan2(s.point.x - cx);
        let radial = Vec3::new(theta.cos(), theta.sin(), 0.0);
        self.oval_amp * (2.0 * theta).cos() * radial.dot(&s.normal)
    }

    /// Tool-wear erosion profile (0..1) on the worn band of each archetype:
    /// plate bore1 top rim, housing outer-wall top rim, blade trailing edge.
    fn erosion_profile(&self, s: &SurfaceSample) -> f64 {
        match (self.spec, s.region) {
            (PartSpec::Plate { thickness, .. }, RegionKind::PlateBore1) => {
                let band = 0.8;
                let z0 = thickness - band;
                if s.point.z > z0 { ((s.point.z - z0) / band).powi(2) } else { 0.0 }
            }
            (PartSpec::Housing { height, .. }, RegionKind::HousingOuter) => {
                let band = 1.0;
                let z0 = height - band;
                if s.point.z > z0 { ((s.point.z - z0) / band).powi(2) } else { 0.0 }
            }
            (PartSpec::Blade { .. }, RegionKind::BladeTrailing) => {
                let td = s.local[0].min(1.0 - s.local[0]);
                if td < 0.03 { (1.0 - td / 0.03).powi(2) } else { 0.0 }
            }
            _ => 0.0,
        }
    }
}

/// Smooth bump over the blade leading-edge band, 1 at the nose.
fn le_bump(s: &SurfaceSample) -> f64 {
    if s.region != RegionKind::BladeLeading {
        return 0.0;
    }
    let u = (s.local[0] - 0.5) / 0.06;
    if u.abs() > 0.5 {
        0.0
    } else {
        (PI * u).cos().powi(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::geometry::{sample_surface, PartSpec, PartType};
    use crate::synth::params::ProcessParameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params_with(f: impl FnOnce(&mut ProcessParameters)) -> ProcessParameters {
        let mut p = ProcessParameters::nominal();
        f(&mut p);
        p
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let spec = PartSpec::default_for(PartType::PlateBracket);
        let field = DeviationField::zero(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sample_surface(&spec, 200, &mut rng) {
            assert_eq!(field.eval(&s), 0.0);
        }
    }

    #[test]
    fn warm_part_has_grown_bores_and_grown_outline() {
        let spec = PartSpec::default_for(PartType::PlateBracket);
        let mut field = DeviationField::zero(spec);
        field.thermal_scale = coupling::THERMAL_PER_DEGC * 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = sample_surface(&spec, 120_000, &mut rng);
        // An off-center hole both grows and translates under uniform scale;
        // only the angular mean isolates growth, and the mean recedes below
        // nominal by scale·radius (material deficit). The translation term
        // has a per-sample spread of scale·|Δ|, so the mean needs many
        // samples to settle.
        for (kind, r) in [(RegionKind::PlateBore1, 4.0), (RegionKind::PlateBore2, 3.0)] {
            let vals: Vec<f64> = samples
                .iter()
                .filter(|s| s.region == kind)
                .map(|s| field.eval(s))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let expect = -field.thermal_scale * r;
            assert!((mean - expect).abs() < 7e-4, "bore mean {mean} vs {expect}");
        }
        // The outline expands: material surplus everywhere on the sides.
        for s in samples.iter().filter(|s| {
            matches!(
                s.region,
                RegionKind::PlateSideX0
                    | RegionKind::PlateSideX1
                    | RegionKind::PlateSideY0
                    | RegionKind::PlateSideY1
            )
        }) {
            assert!(field.eval(s) > 0.0, "side deviation {}", field.eval(s));
        }
    }

    #[test]
    fn mode_amplitudes_linear_in_their_driver() {
        let spec = PartSpec::default_for(PartType::CylinderHousing);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = |force: f64| {
            let p = params_with(|p| p.clamping_force = force);
            // Same RNG seed so wave shapes cancel in the comparison.
            DeviationField::from_parameters(spec, &p, &mut ChaCha8Rng::seed_from_u64(9))
        };
        let (f1, f2, f4) = (f(1.0), f(2.0), f(4.0));
        let samples = sample_surface(&spec, 500, &mut rng);
        for s in &samples {
            let (d1, d2, d4) = (f1.eval(s), f2.eval(s), f4.eval(s));
            // eval(force) is affine in force, so second differences vanish.
            let lin = (d4 - d2) - 2.0 * (d2 - d1);
            assert!(lin.abs() < 1e-12, "nonlinear response {lin}");
        }
    }

    #[test]
    fn worst_case_parameters_respect_the_deviation_budget() {
        for pt in PartType::all() {
            let spec = PartSpec::default_for(pt);
            let p = params_with(|p| {
                p.ambient_temperature = 26.0;
                p.clamping_force = 8.0;
                p.coolant_concentration = 4.0;
                p.cutting_speed = 80.0;
                p.tool_wear_index = 1.0;
            });
            for seed in 0..5 {
                let field =
                    DeviationField::from_parameters(spec, &p, &mut ChaCha8Rng::seed_from_u64(seed));
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let mut worst = 0.0f64;
                for s in sample_surface(&spec, 4000, &mut rng) {
                    worst = worst.max(field.eval(&s).abs());
                }
                assert!(worst < DEVIATION_BUDGET, "{}: |d| reaches {worst}", pt.name());
            }
        }
    }

    #[test]
    fn erosion_band_isolated_from_axisymmetric_modes() {
        // Mean deviation difference between the worn rim band and the wall
        // body recovers the erosion depth even under strong ovalization,
        // because every other wall mode is independent of z.
        let spec = PartSpec::default_for(PartType::CylinderHousing);
        let PartSpec::Housing { height, .. } = spec else { unreachable!() };
        let mut field = DeviationField::zero(spec);
        field.erosion_amp = 0.03;
        field.oval_amp = 0.02;
        field.thermal_scale = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = sample_surface(&spec, 40_000, &mut rng);
        let (mut band, mut body) = ((0.0, 0usize), (0.0, 0usize));
        for s in samples.iter().filter(|s| s.region == RegionKind::HousingOuter) {
            let d = field.eval(s);
            if s.point.z > height - 1.0 {
                band = (band.0 + d, band.1 + 1);
            } else {
                body = (body.0 + d, body.1 + 1);
            }
        }
        let recess = body.0 / body.1 as f64 - band.0 / band.1 as f64;
        // Quadratic ramp over the band has mean depth erosion/3.
        assert!((recess - 0.01).abs() < 0.001, "recess {recess}");
    }

    #[test]
    fn blade_leading_edge_recess_tracks_coolant_deficit() {
        let spec = PartSpec::default_for(PartType::FreeformBlade);
        let lean = params_with(|p| p.coolant_concentration = 4.0);
        let rich = params_with(|p| p.coolant_concentration = 10.0);
        let mean_le = |params: &ProcessParameters| {
            let field =
                DeviationField::from_parameters(spec, params, &mut ChaCha8Rng::seed_from_u64(5));
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let samples = sample_surface(&spec, 30_000, &mut rng);
            let vals: Vec<f64> = samples
                .iter()
                .filter(|s| s.region == RegionKind::BladeLeading)
                .map(|s| field.eval(s))
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(mean_le(&lean) < mean_le(&rich) - 5e-3);
    }
}
