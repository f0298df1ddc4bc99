//! Nominal part geometry: three parametric archetypes (flat plate with
//! bores, annular housing, lofted blade), each produced both as a labeled
//! triangle mesh and as an analytic surface sampler. Mesh tessellation
//! densities are chosen so chordal error stays near 2e-4 mm on the curved
//! walls, an order under the scan noise.

use std::f64::consts::{PI, TAU};
use std::ops::Range;

use rand::Rng;

use crate::cloud::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartType {
    PlateBracket,
    CylinderHousing,
    FreeformBlade,
}

impl PartType {
    pub fn name(&self) -> &'static str {
        match self {
            PartType::PlateBracket => "plate-bracket",
            PartType::CylinderHousing => "cylinder-housing",
            PartType::FreeformBlade => "freeform-blade",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "plate-bracket" => Ok(PartType::PlateBracket),
            "cylinder-housing" => Ok(PartType::CylinderHousing),
            "freeform-blade" => Ok(PartType::FreeformBlade),
            other => Err(Error::InvalidArgument(format!("unknown part type '{other}'"))),
        }
    }

    pub fn all() -> [PartType; 3] {
        [PartType::PlateBracket, PartType::CylinderHousing, PartType::FreeformBlade]
    }

    /// The region whose deviation statistics the predictor targets.
    pub fn critical_region(&self) -> RegionKind {
        match self {
            PartType::PlateBracket => RegionKind::PlateTop,
            PartType::CylinderHousing => RegionKind::HousingBore,
            PartType::FreeformBlade => RegionKind::BladeSuction,
        }
    }
}

impl std::fmt::Display for PartType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Labeled surface patches. `local` coordinates of a sample are chart
/// coordinates of its region: (x, y) on plate faces, (θ, z) on cylindrical
/// walls, (t, z) on the blade (t the closed section parameter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionKind {
    PlateTop,
    PlateBottom,
    PlateSideX0,
    PlateSideX1,
    PlateSideY0,
    PlateSideY1,
    PlateBore1,
    PlateBore2,
    HousingTop,
    HousingBottom,
    HousingOuter,
    HousingBore,
    BladeSuction,
    BladePressure,
    BladeLeading,
    BladeTrailing,
}

impl RegionKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegionKind::PlateTop => "face_top",
            RegionKind::PlateBottom => "face_bottom",
            RegionKind::PlateSideX0 => "side_x0",
            RegionKind::PlateSideX1 => "side_x1",
            RegionKind::PlateSideY0 => "side_y0",
            RegionKind::PlateSideY1 => "side_y1",
            RegionKind::PlateBore1 => "bore1",
            RegionKind::PlateBore2 => "bore2",
            RegionKind::HousingTop => "face_top",
            RegionKind::HousingBottom => "face_bottom",
            RegionKind::HousingOuter => "outer_wall",
            RegionKind::HousingBore => "bore_inner",
            RegionKind::BladeSuction => "face_suction",
            RegionKind::BladePressure => "face_pressure",
            RegionKind::BladeLeading => "edge_leading",
            RegionKind::BladeTrailing => "edge_trailing",
        }
    }
}

/// Part dimensions. Bores are (center_x, center_y, radius) through the
/// plate thickness.
#[derive(Debug, Clone, Copy)]
pub enum PartSpec {
    Plate {
        length: f64,
        width: f64,
        thickness: f64,
        bore1: (f64, f64, f64),
        bore2: (f64, f64, f64),
    },
    Housing {
        outer_radius: f64,
        bore_radius: f64,
        height: f64,
    },
    Blade {
        chord: f64,
        span: f64,
        twist_deg: f64,
        taper: f64,
    },
}

impl PartSpec {
    pub fn default_for(part_type: PartType) -> Self {
        match part_type {
            PartType::PlateBracket => PartSpec::Plate {
                length: 50.0,
                width: 30.0,
                thickness: 5.0,
                bore1: (15.0, 14.0, 4.0),
                bore2: (35.0, 12.0, 3.0),
            },
            PartType::CylinderHousing => PartSpec::Housing {
                outer_radius: 15.0,
                bore_radius: 10.0,
                height: 25.0,
            },
            PartType::FreeformBlade => PartSpec::Blade {
                chord: 30.0,
                span: 40.0,
                twist_deg: 15.0,
                taper: 0.3,
            },
        }
    }

    pub fn part_type(&self) -> PartType {
        match self {
            PartSpec::Plate { .. } => PartType::PlateBracket,
            PartSpec::Housing { .. } => PartType::CylinderHousing,
            PartSpec::Blade { .. } => PartType::FreeformBlade,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Degenerate(msg));
        match *self {
            PartSpec::Plate { length, width, thickness, bore1, bore2 } => {
                if length <= 0.0 || width <= 0.0 || thickness <= 0.0 {
                    return bad(format!("plate dims {length}×{width}×{thickness}"));
                }
                for (cx, cy, r) in [bore1, bore2] {
                    if r <= 0.0 {
                        return bad(format!("bore radius {r}"));
                    }
                    let s = bore_frame_half(r);
                    if cx - s < 0.0 || cx + s > length || cy - s < 0.0 || cy + s > width {
                        return bad(format!("bore at ({cx},{cy}) r={r} too close to the plate edge"));
                    }
                }
                let d = ((bore1.0 - bore2.0).powi(2) + (bore1.1 - bore2.1).powi(2)).sqrt();
                if d < bore_frame_half(bore1.2) + bore_frame_half(bore2.2) {
                    return bad(format!("bores {d} mm apart overlap"));
                }
                Ok(())
            }
            PartSpec::Housing { outer_radius, bore_radius, height } => {
                if height <= 0.0 || bore_radius <= 0.0 || outer_radius <= bore_radius {
                    return bad(format!(
                        "housing R={outer_radius} r={bore_radius} H={height}"
                    ));
                }
                Ok(())
            }
            PartSpec::Blade { chord, span, twist_deg, taper } => {
                if chord <= 0.0 || span <= 0.0 || !(0.0..0.9).contains(&taper) {
                    return bad(format!("blade chord={chord} span={span} taper={taper}"));
                }
                if twist_deg.abs() > 60.0 {
                    return bad(format!("blade twist {twist_deg}°"));
                }
                Ok(())
            }
        }
    }

    /// Interior reference point the thermal-scale mode expands about.
    pub fn center(&self) -> Vec3 {
        match *self {
            PartSpec::Plate { length, width, thickness, .. } => {
                Vec3::new(length / 2.0, width / 2.0, thickness / 2.0)
            }
            PartSpec::Housing { height, .. } => Vec3::new(0.0, 0.0, height / 2.0),
            PartSpec::Blade { chord, span, .. } => Vec3::new(chord / 4.0, 0.0, span / 2.0),
        }
    }
}

/// Square frame half-size around a bore separating the polar ring patch
/// from the rectangular grid.
fn bore_frame_half(r: f64) -> f64 {
    r + 2.5
}

/// One point of the analytic surface chart.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: Vec3,
    /// Outward unit normal.
    pub normal: Vec3,
    pub region: RegionKind,
    pub local: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct NominalPart {
    pub part_type: PartType,
    pub spec: PartSpec,
    pub mesh: TriangleMesh,
    /// Contiguous triangle-id ranges; a region may own several ranges.
    pub regions: Vec<(RegionKind, Range<usize>)>,
}

impl NominalPart {
    pub fn region_triangle_ids(&self, kind: RegionKind) -> Vec<usize> {
        self.regions
            .iter()
            .filter(|(k, _)| *k == kind)
            .flat_map(|(_, r)| r.clone())
            .collect()
    }

    pub fn region_of_triangle(&self, id: usize) -> Option<RegionKind> {
        self.regions.iter().find(|(_, r)| r.contains(&id)).map(|(k, _)| *k)
    }

    pub fn region_kinds(&self) -> Vec<RegionKind> {
        let mut kinds: Vec<RegionKind> = self.regions.iter().map(|(k, _)| *k).collect();
        kinds.dedup();
        kinds
    }

    /// `region,start,end` CSV of triangle-id ranges (end exclusive).
    pub fn region_csv(&self) -> String {
        let mut out = String::from("region,start,end\n");
        for (kind, range) in &self.regions {
            out.push_str(&format!("{},{},{}\n", kind.name(), range.start, range.end));
        }
        out
    }
}

struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<(RegionKind, Range<usize>)>,
    region_start: usize,
    current: Option<RegionKind>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder {
            vertices: Vec::new(),
            triangles: Vec::new(),
            regions: Vec::new(),
            region_start: 0,
            current: None,
        }
    }

    fn begin_region(&mut self, kind: RegionKind) {
        self.end_region();
        self.current = Some(kind);
        self.region_start = self.triangles.len();
    }

    fn end_region(&mut self) {
        if let Some(kind) = self.current.take() {
            if self.triangles.len() > self.region_start {
                self.regions.push((kind, self.region_start..self.triangles.len()));
            }
        }
    }

    /// Pushes a triangle wound so its normal has positive dot with `out`.
    /// Slivers below the mesh validity floor are dropped.
    fn tri(&mut self, a: Vec3, b: Vec3, c: Vec3, out: Vec3) {
        let n = (b - a).cross(&(c - a));
        if n.norm() / 2.0 <= 2.0 * TriangleMesh::MIN_AREA {
            return;
        }
        let base = self.vertices.len();
        if n.dot(&out) >= 0.0 {
            self.vertices.extend_from_slice(&[a, b, c]);
        } else {
            self.vertices.extend_from_slice(&[a, c, b]);
        }
        self.triangles.push([base, base + 1, base + 2]);
    }

    fn quad(&mut self, a: Vec3, b: Vec3, c: Vec3, d: Vec3, out: Vec3) {
        self.tri(a, b, c, out);
        self.tri(a, c, d, out);
    }

    fn build(mut self, part_type: PartType, spec: PartSpec) -> Result<NominalPart> {
        self.end_region();
        let mesh = TriangleMesh::new(self.vertices, self.triangles)?;
        Ok(NominalPart { part_type, spec, mesh, regions: self.regions })
    }
}

/// Angular tessellation for a given radius, targeting ~2e-4 mm sagitta.
fn arc_segments(radius: f64) -> usize {
    let n = (PI * (radius / 4e-4).sqrt()).ceil() as usize;
    n.clamp(64, 1024).next_multiple_of(4)
}

pub fn generate_nominal(spec: &PartSpec) -> Result<NominalPart> {
    spec.validate()?;
    match *spec {
        PartSpec::Plate { .. } => build_plate(*spec),
        PartSpec::Housing { .. } => build_housing(*spec),
        PartSpec::Blade { .. } => build_blade(*spec),
    }
}

fn build_plate(spec: PartSpec) -> Result<NominalPart> {
    let PartSpec::Plate { length: l, width: w, thickness: th, bore1, bore2 } = spec else {
        unreachable!()
    };
    let bores = [bore1, bore2];
    let frames: Vec<(f64, f64, f64)> =
        bores.iter().map(|&(cx, cy, r)| (cx, cy, bore_frame_half(r))).collect();

    // Grid lines: ~5 mm pitch plus exact frame boundaries.
    let cuts = |extent: f64, centers: &[(f64, f64)]| -> Vec<f64> {
        let mut v: Vec<f64> = (0..).map(|i| i as f64 * 5.0).take_while(|x| *x < extent).collect();
        v.push(extent);
        for &(c, s) in centers {
            v.push(c - s);
            v.push(c + s);
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        v
    };
    let xs = cuts(l, &frames.iter().map(|&(cx, _, s)| (cx, s)).collect::<Vec<_>>());
    let ys = cuts(w, &frames.iter().map(|&(_, cy, s)| (cy, s)).collect::<Vec<_>>());

    let mut b = MeshBuilder::new();
    for (kind, z, out) in [
        (RegionKind::PlateTop, th, Vec3::z()),
        (RegionKind::PlateBottom, 0.0, -Vec3::z()),
    ] {
        b.begin_region(kind);
        for i in 0..xs.len() - 1 {
            for j in 0..ys.len() - 1 {
                let (x0, x1) = (xs[i], xs[i + 1]);
                let (y0, y1) = (ys[j], ys[j + 1]);
                let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                let inside_frame = frames
                    .iter()
                    .any(|&(cx, cy, s)| (mx - cx).abs() < s && (my - cy).abs() < s);
                if inside_frame {
                    continue;
                }
                b.quad(
                    Vec3::new(x0, y0, z),
                    Vec3::new(x1, y0, z),
                    Vec3::new(x1, y1, z),
                    Vec3::new(x0, y1, z),
                    out,
                );
            }
        }
        // Square-frame-to-circle rings around each bore.
        for &(cx, cy, r) in &bores {
            let s = bore_frame_half(r);
            let n = arc_segments(r);
            for k in 0..n {
                let (a0, a1) = (TAU * k as f64 / n as f64, TAU * (k + 1) as f64 / n as f64);
                let ray = |a: f64| {
                    let (ca, sa) = (a.cos(), a.sin());
                    let t = s / ca.abs().max(sa.abs());
                    Vec3::new(cx + t * ca, cy + t * sa, z)
                };
                let circ = |a: f64| Vec3::new(cx + r * a.cos(), cy + r * a.sin(), z);
                b.quad(circ(a0), circ(a1), ray(a1), ray(a0), out);
            }
        }
    }

    b.begin_region(RegionKind::PlateSideX0);
    b.quad(
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(0.0, w, 0.0),
        Vec3::new(0.0, w, th),
        Vec3::new(0.0, 0.0, th),
        -Vec3::x(),
    );
    b.begin_region(RegionKind::PlateSideX1);
    b.quad(
        Vec3::new(l, 0.0, 0.0),
        Vec3::new(l, w, 0.0),
        Vec3::new(l, w, th),
        Vec3::new(l, 0.0, th),
        Vec3::x(),
    );
    b.begin_region(RegionKind::PlateSideY0);
    b.quad(
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(l, 0.0, 0.0),
        Vec3::new(l, 0.0, th),
        Vec3::new(0.0, 0.0, th),
        -Vec3::y(),
    );
    b.begin_region(RegionKind::PlateSideY1);
    b.quad(
        Vec3::new(0.0, w, 0.0),
        Vec3::new(l, w, 0.0),
        Vec3::new(l, w, th),
        Vec3::new(0.0, w, th),
        Vec3::y(),
    );

    for (idx, kind) in [(0usize, RegionKind::PlateBore1), (1, RegionKind::PlateBore2)] {
        let (cx, cy, r) = bores[idx];
        b.begin_region(kind);
        let n = arc_segments(r);
        let z_rows = 2;
        for k in 0..n {
            let (a0, a1) = (TAU * k as f64 / n as f64, TAU * (k + 1) as f64 / n as f64);
            for zi in 0..z_rows {
                let (z0, z1) =
                    (th * zi as f64 / z_rows as f64, th * (zi + 1) as f64 / z_rows as f64);
                let p = |a: f64, z: f64| Vec3::new(cx + r * a.cos(), cy + r * a.sin(), z);
                // Outward surface normal points into the hole (toward axis).
                let inward = -Vec3::new(((a0 + a1) / 2.0).cos(), ((a0 + a1) / 2.0).sin(), 0.0);
                b.quad(p(a0, z0), p(a1, z0), p(a1, z1), p(a0, z1), inward);
            }
        }
    }
    b.build(PartType::PlateBracket, spec)
}

fn build_housing(spec: PartSpec) -> Result<NominalPart> {
    let PartSpec::Housing { outer_radius: ro, bore_radius: ri, height: h } = spec else {
        unreachable!()
    };
    let n = arc_segments(ro);
    let mut b = MeshBuilder::new();

    for (kind, z, out) in [
        (RegionKind::HousingTop, h, Vec3::z()),
        (RegionKind::HousingBottom, 0.0, -Vec3::z()),
    ] {
        b.begin_region(kind);
        let radii = [ri, (ri + ro) / 2.0, ro];
        for k in 0..n {
            let (a0, a1) = (TAU * k as f64 / n as f64, TAU * (k + 1) as f64 / n as f64);
            for w in radii.windows(2) {
                let p = |r: f64, a: f64| Vec3::new(r * a.cos(), r * a.sin(), z);
                b.quad(p(w[0], a0), p(w[1], a0), p(w[1], a1), p(w[0], a1), out);
            }
        }
    }

    let z_rows = 4;
    for (kind, r, sign) in [
        (RegionKind::HousingOuter, ro, 1.0),
        (RegionKind::HousingBore, ri, -1.0),
    ] {
        b.begin_region(kind);
        for k in 0..n {
            let (a0, a1) = (TAU * k as f64 / n as f64, TAU * (k + 1) as f64 / n as f64);
            let radial =
                Vec3::new(((a0 + a1) / 2.0).cos(), ((a0 + a1) / 2.0).sin(), 0.0) * sign;
            for zi in 0..z_rows {
                let (z0, z1) = (h * zi as f64 / z_rows as f64, h * (zi + 1) as f64 / z_rows as f64);
                let p = |a: f64, z: f64| Vec3::new(r * a.cos(), r * a.sin(), z);
                b.quad(p(a0, z0), p(a1, z0), p(a1, z1), p(a0, z1), radial);
            }
        }
    }
    b.build(PartType::CylinderHousing, spec)
}

/// Closed blade section in its own plane before loft placement. t ∈ [0, 1):
/// t=0 trailing edge, t grows along the suction (upper) side to the leading
/// edge at t=0.5, then back along the pressure side.
fn blade_section_point(chord: f64, t: f64) -> (f64, f64) {
    let xb = (1.0 + (TAU * t).cos()) / 2.0;
    let (m, p, tau) = (0.04, 0.4, 0.12);
    let yc = if xb <= p {
        m / (p * p) * (2.0 * p * xb - xb * xb)
    } else {
        m / ((1.0 - p) * (1.0 - p)) * ((1.0 - 2.0 * p) + 2.0 * p * xb - xb * xb)
    };
    let dyc = if xb <= p {
        m / (p * p) * (2.0 * p - 2.0 * xb)
    } else {
        m / ((1.0 - p) * (1.0 - p)) * (2.0 * p - 2.0 * xb)
    };
    let xs = xb.max(0.0).sqrt();
    // Closed-trailing-edge thickness polynomial.
    let yt = 5.0
        * tau
        * (0.2969 * xs - 0.1260 * xb - 0.3516 * xb * xb + 0.2843 * xb.powi(3)
            - 0.1036 * xb.powi(4));
    let th = dyc.atan();
    if t < 0.5 {
        (chord * (xb - yt * th.sin()), chord * (yc + yt * th.cos()))
    } else {
        (chord * (xb + yt * th.sin()), chord * (yc - yt * th.cos()))
    }
}

/// Loft placement of an in-section 2D point at height z: taper scale and
/// twist about the quarter-chord point.
fn blade_place(spec: &PartSpec, xy: (f64, f64), z: f64) -> Vec3 {
    let PartSpec::Blade { chord, span, twist_deg, taper } = *spec else { unreachable!() };
    let s = 1.0 - taper * z / span;
    let phi = twist_deg.to_radians() * z / span;
    let (px, py) = (chord / 4.0, 0.0);
    let (dx, dy) = ((xy.0 - px) * s, (xy.1 - py) * s);
    let (c, sn) = (phi.cos(), phi.sin());
    Vec3::new(px + c * dx - sn * dy, py + sn * dx + c * dy, z)
}

pub(crate) fn blade_surface_point(spec: &PartSpec, t: f64, z: f64) -> Vec3 {
    let PartSpec::Blade { chord, .. } = *spec else { unreachable!() };
    blade_place(spec, blade_section_point(chord, t), z)
}

// Trailing band is wider than the leading one: the sharp edge compresses
// arc length, and edge-wear depth needs an uneroded shoulder inside the
// same band to reference against.
fn blade_region_of_t(t: f64) -> RegionKind {
    if !(0.06..=0.94).contains(&t) {
        RegionKind::BladeTrailing
    } else if t < 0.47 {
        RegionKind::BladeSuction
    } else if t <= 0.53 {
        RegionKind::BladeLeading
    } else {
        RegionKind::BladePressure
    }
}

const BLADE_SECTION_SAMPLES: usize = 256;
const BLADE_LOFT_SECTIONS: usize = 40;

fn build_blade(spec: PartSpec) -> Result<NominalPart> {
    let PartSpec::Blade { span, .. } = spec else { unreachable!() };
    let m = BLADE_SECTION_SAMPLES;
    let k = BLADE_LOFT_SECTIONS;
    let ring: Vec<Vec<Vec3>> = (0..k)
        .map(|i| {
            let z = span * i as f64 / (k - 1) as f64;
            (0..m).map(|j| blade_surface_point(&spec, j as f64 / m as f64, z)).collect()
        })
        .collect();

    // Group strips by region so triangle ranges stay contiguous.
    let mut b = MeshBuilder::new();
    let bands: [(RegionKind, Vec<usize>); 4] = {
        let mut trailing = Vec::new();
        let mut suction = Vec::new();
        let mut leading = Vec::new();
        let mut pressure = Vec::new();
        for j in 0..m {
            let t_mid = (j as f64 + 0.5) / m as f64;
            match blade_region_of_t(t_mid) {
                RegionKind::BladeTrailing => trailing.push(j),
                RegionKind::BladeSuction => suction.push(j),
                RegionKind::BladeLeading => leading.push(j),
                _ => pressure.push(j),
            }
        }
        [
            (RegionKind::BladeSuction, suction),
            (RegionKind::BladePressure, pressure),
            (RegionKind::BladeLeading, leading),
            (RegionKind::BladeTrailing, trailing),
        ]
    };
    for (kind, cols) in bands {
        b.begin_region(kind);
        for i in 0..k - 1 {
            for &j in &cols {
                let jn = (j + 1) % m;
                // The section curve runs counterclockwise, so its outward
                // in-plane direction is the travel tangent rotated -90°.
                let out = (ring[i][jn] - ring[i][j]).cross(&Vec3::z());
                b.quad(ring[i][j], ring[i][jn], ring[i + 1][jn], ring[i + 1][j], out);
            }
        }
    }
    b.build(PartType::FreeformBlade, spec)
}

/// Region surface areas from the analytic charts (used to allocate samples
/// area-uniformly).
pub fn region_areas(spec: &PartSpec) -> Vec<(RegionKind, f64)> {
    match *spec {
        PartSpec::Plate { length: l, width: w, thickness: th, bore1, bore2 } => {
            let holes = PI * (bore1.2 * bore1.2 + bore2.2 * bore2.2);
            vec![
                (RegionKind::PlateTop, l * w - holes),
                (RegionKind::PlateBottom, l * w - holes),
                (RegionKind::PlateSideX0, w * th),
                (RegionKind::PlateSideX1, w * th),
                (RegionKind::PlateSideY0, l * th),
                (RegionKind::PlateSideY1, l * th),
                (RegionKind::PlateBore1, TAU * bore1.2 * th),
                (RegionKind::PlateBore2, TAU * bore2.2 * th),
            ]
        }
        PartSpec::Housing { outer_radius: ro, bore_radius: ri, height: h } => vec![
            (RegionKind::HousingTop, PI * (ro * ro - ri * ri)),
            (RegionKind::HousingBottom, PI * (ro * ro - ri * ri)),
            (RegionKind::HousingOuter, TAU * ro * h),
            (RegionKind::HousingBore, TAU * ri * h),
        ],
        PartSpec::Blade { chord, span, taper, .. } => {
            // Arc-length shares of a finely sampled base section, scaled by
            // the span and mean taper factor.
            let table = blade_arc_table(chord);
            let mean_scale = 1.0 - taper / 2.0;
            let mut shares = std::collections::BTreeMap::new();
            for w in table.windows(2) {
                let t_mid = (w[0].0 + w[1].0) / 2.0;
                let seg = w[1].1 - w[0].1;
                *shares.entry(blade_region_of_t(t_mid)).or_insert(0.0) += seg;
            }
            shares.into_iter().map(|(k, s)| (k, s * span * mean_scale)).collect()
        }
    }
}

/// (t, cumulative arc length) over the closed base section.
fn blade_arc_table(chord: f64) -> Vec<(f64, f64)> {
    let n = 2048;
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    let mut prev = blade_section_point(chord, 0.0);
    out.push((0.0, 0.0));
    for j in 1..=n {
        let t = j as f64 / n as f64;
        let p = blade_section_point(chord, t % 1.0);
        acc += ((p.0 - prev.0).powi(2) + (p.1 - prev.1).powi(2)).sqrt();
        out.push((t, acc));
        prev = p;
    }
    out
}

/// Area-uniform random samples over the whole surface with analytic
/// normals. Deterministic given the RNG state.
pub fn sample_surface<R: Rng>(spec: &PartSpec, count: usize, rng: &mut R) -> Vec<SurfaceSample> {
    let areas = region_areas(spec);
    let total: f64 = areas.iter().map(|(_, a)| a).sum();
    let mut out = Vec::with_capacity(count + areas.len());
    match *spec {
        PartSpec::Plate { .. } => {
            for (kind, area) in &areas {
                let n = ((count as f64) * area / total).round() as usize;
                sample_plate_region(spec, *kind, n, rng, &mut out);
            }
        }
        PartSpec::Housing { .. } => {
            for (kind, area) in &areas {
                let n = ((count as f64) * area / total).round() as usize;
                sample_housing_region(spec, *kind, n, rng, &mut out);
            }
        }
        PartSpec::Blade { .. } => sample_blade(spec, count, rng, &mut out),
    }
    out
}

fn sample_plate_region<R: Rng>(
    spec: &PartSpec,
    kind: RegionKind,
    n: usize,
    rng: &mut R,
    out: &mut Vec<SurfaceSample>,
) {
    let PartSpec::Plate { length: l, width: w, thickness: th, bore1, bore2 } = *spec else {
        unreachable!()
    };
    match kind {
        RegionKind::PlateTop | RegionKind::PlateBottom => {
            let (z, normal) = if kind == RegionKind::PlateTop {
                (th, Vec3::z())
            } else {
                (0.0, -Vec3::z())
            };
            let mut made = 0;
            while made < n {
                let x = rng.gen_range(0.0..l);
                let y = rng.gen_range(0.0..w);
                let in_bore = [bore1, bore2]
                    .iter()
                    .any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) < r * r);
                if in_bore {
                    continue;
                }
                out.push(SurfaceSample { point: Vec3::new(x, y, z), normal, region: kind, local: [x, y] });
                made += 1;
            }
        }
        RegionKind::PlateSideX0 | RegionKind::PlateSideX1 => {
            let (x, normal) =
                if kind == RegionKind::PlateSideX0 { (0.0, -Vec3::x()) } else { (l, Vec3::x()) };
            for _ in 0..n {
                let y = rng.gen_range(0.0..w);
                let z = rng.gen_range(0.0..th);
                out.push(SurfaceSample { point: Vec3::new(x, y, z), normal, region: kind, local: [y, z] });
            }
        }
        RegionKind::PlateSideY0 | RegionKind::PlateSideY1 => {
            let (y, normal) =
                if kind == RegionKind::PlateSideY0 { (0.0, -Vec3::y()) } else { (w, Vec3::y()) };
            for _ in 0..n {
                let x = rng.gen_range(0.0..l);
                let z = rng.gen_range(0.0..th);
                out.push(SurfaceSample { point: Vec3::new(x, y, z), normal, region: kind, local: [x, z] });
            }
        }
        RegionKind::PlateBore1 | RegionKind::PlateBore2 => {
            let (cx, cy, r) = if kind == RegionKind::PlateBore1 { bore1 } else { bore2 };
            for _ in 0..n {
                let a = rng.gen_range(0.0..TAU);
                let z = rng.gen_range(0.0..th);
                out.push(SurfaceSample {
                    point: Vec3::new(cx + r * a.cos(), cy + r * a.sin(), z),
                    normal: -Vec3::new(a.cos(), a.sin(), 0.0),
                    region: kind,
                    local: [a, z],
                });
            }
        }
        _ => unreachable!("not a plate region"),
    }
}

fn sample_housing_region<R: Rng>(
    spec: &PartSpec,
    kind: RegionKind,
    n: usize,
    rng: &mut R,
    out: &mut Vec<SurfaceSample>,
) {
    let PartSpec::Housing { outer_radius: ro, bore_radius: ri, height: h } = *spec else {
        unreachable!()
    };
    match kind {
        RegionKind::HousingTop | RegionKind::HousingBottom => {
            let (z, normal) =
                if kind == RegionKind::HousingTop { (h, Vec3::z()) } else { (0.0, -Vec3::z()) };
            for _ in 0..n {
                // Area-uniform annulus radius.
                let u: f64 = rng.gen_range(0.0..1.0);
                let r = (ri * ri + u * (ro * ro - ri * ri)).sqrt();
                let a = rng.gen_range(0.0..TAU);
                out.push(SurfaceSample {
                    point: Vec3::new(r * a.cos(), r * a.sin(), z),
                    normal,
                    region: kind,
                    local: [a, r],
                });
            }
        }
        RegionKind::HousingOuter | RegionKind::HousingBore => {
            let (r, sign) = if kind == RegionKind::HousingOuter { (ro, 1.0) } else { (ri, -1.0) };
            for _ in 0..n {
                let a = rng.gen_range(0.0..TAU);
                let z = rng.gen_range(0.0..h);
                out.push(SurfaceSample {
                    point: Vec3::new(r * a.cos(), r * a.sin(), z),
                    normal: Vec3::new(a.cos(), a.sin(), 0.0) * sign,
                    region: kind,
                    local: [a, z],
                });
            }
        }
        _ => unreachable!("not a housing region"),
    }
}

fn sample_blade<R: Rng>(spec: &PartSpec, count: usize, rng: &mut R, out: &mut Vec<SurfaceSample>) {
    let PartSpec::Blade { chord, span, taper, .. } = *spec else { unreachable!() };
    let table = blade_arc_table(chord);
    let total = table.last().unwrap().1;
    for _ in 0..count {
        // Arc-length-uniform t via the cumulative table.
        let target = rng.gen_range(0.0..total);
        let idx = table.partition_point(|(_, s)| *s < target).min(table.len() - 1);
        let (t1, s1) = table[idx];
        let (t0, s0) = if idx == 0 { (0.0, 0.0) } else { table[idx - 1] };
        let t = if s1 > s0 { t0 + (t1 - t0) * (target - s0) / (s1 - s0) } else { t0 };
        // z density proportional to the taper scale; invert the CDF
        // numerically.
        let u: f64 = rng.gen_range(0.0..1.0);
        let cdf = |z: f64| (z - taper * z * z / (2.0 * span)) / (span * (1.0 - taper / 2.0));
        let (mut lo, mut hi) = (0.0, span);
        for _ in 0..40 {
            let mid = (lo + hi) / 2.0;
            if cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let z = (lo + hi) / 2.0;

        let point = blade_surface_point(spec, t, z);
        let h = 1e-5;
        let dt = (blade_surface_point(spec, (t + h).rem_euclid(1.0), z)
            - blade_surface_point(spec, (t - h).rem_euclid(1.0), z))
            / (2.0 * h);
        let zh = h * span;
        let dz = (blade_surface_point(spec, t, (z + zh).min(span))
            - blade_surface_point(spec, t, (z - zh).max(0.0)))
            / (zh * 2.0).min(span);
        let mut normal = dt.cross(&dz);
        if normal.norm() < 1e-12 {
            continue;
        }
        normal = normal.normalize();
        if normal.dot(&dt.cross(&Vec3::z())) < 0.0 {
            normal = -normal;
        }
        out.push(SurfaceSample { point, normal, region: blade_region_of_t(t), local: [t, z] });
    }
}
