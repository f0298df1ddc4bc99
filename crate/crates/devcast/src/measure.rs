//! Engineered feature measurement. One code path turns labeled surface
//! points with signed deviations into the per-archetype feature map, so
//! ground-truth features (dense noise-free field samples) and measured
//! features (registered scan deviation maps) stay comparable by
//! construction. Fit-based size and form features work on reconstructed
//! actual points; roughness separates texture from form with per-cell
//! linear detrending; rim-recess features difference a worn band against
//! the wall body so axisymmetric modes cancel.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::cloud::Vec3;
use crate::deviation::{percentile_linear, stats_of, STAT_NAMES};
use crate::error::{Error, Result};
use crate::features::{
    fit_circle_2d, fit_cylinder, fit_plane, relational_features, FeatureGroup, FeatureSchema,
    FitFrame,
};
use crate::synth::geometry::{PartSpec, PartType, RegionKind, SurfaceSample};

/// One measured surface point: where it should be, where it is, the signed
/// deviation along the outward nominal normal, and that normal.
#[derive(Debug, Clone, Copy)]
pub struct RegionPoint {
    pub nominal: Vec3,
    pub normal: Vec3,
    pub actual: Vec3,
    pub deviation: f64,
    pub region: RegionKind,
}

/// Builds region points from chart samples and their deviations (ground
/// truth path: deviations come straight from the field).
pub fn region_points_from_chart(samples: &[SurfaceSample], deviations: &[f64]) -> Vec<RegionPoint> {
    samples
        .iter()
        .zip(deviations)
        .map(|(s, d)| RegionPoint {
            nominal: s.point,
            normal: s.normal,
            actual: s.point + s.normal * *d,
            deviation: *d,
            region: s.region,
        })
        .collect()
}

/// Canonical feature schema of an archetype, version 1. Order is the
/// assembly order of feature vectors everywhere downstream.
pub fn feature_schema(part_type: PartType) -> FeatureSchema {
    let mut s = FeatureSchema::new(part_type.name(), 1);
    let devstats = |s: &mut FeatureSchema, region: &str| {
        for stat in STAT_NAMES {
            s.push(format!("dev_{region}_{stat}"), FeatureGroup::DeviationStat);
        }
    };
    use FeatureGroup::*;
    match part_type {
        PartType::PlateBracket => {
            for id in ["bore1_center_x", "bore1_center_y", "bore2_center_x", "bore2_center_y"] {
                s.push(id, Positioning);
            }
            for id in ["bore1_diameter", "bore2_diameter", "thickness_corners"] {
                s.push(id, Dimensional);
            }
            for id in [
                "flatness_bottom",
                "roundness_bore1",
                "roundness_bore2",
                "cylindricity_bore1",
                "cylindricity_bore2",
            ] {
                s.push(id, Form);
            }
            s.push("ra_bottom", Surface);
            s.push("rz_bottom", Surface);
            for id in
                ["rel_bore1_bore2_distance", "rel_bore1_bore2_angle_deg", "rel_bore1_bore2_offset"]
            {
                s.push(id, Relational);
            }
            devstats(&mut s, "face_bottom");
            devstats(&mut s, "bore1");
            s.push("rim_recess_bore1", DeviationStat);
        }
        PartType::CylinderHousing => {
            s.push("bore_center_x", Positioning);
            s.push("bore_center_y", Positioning);
            for id in ["bore_diameter", "outer_diameter", "height_mean"] {
                s.push(id, Dimensional);
            }
            for id in [
                "flatness_top",
                "flatness_bottom",
                "cylindricity_bore",
                "cylindricity_outer",
                "roundness_bore",
            ] {
                s.push(id, Form);
            }
            s.push("ra_top", Surface);
            s.push("rz_top", Surface);
            for id in ["rel_bore_outer_distance", "rel_bore_outer_angle_deg", "rel_bore_outer_offset"]
            {
                s.push(id, Relational);
            }
            devstats(&mut s, "face_top");
            devstats(&mut s, "outer_wall");
            s.push("rim_recess_outer", DeviationStat);
        }
        PartType::FreeformBlade => {
            s.push("section_centroid_x", Positioning);
            s.push("section_centroid_y", Positioning);
            s.push("extent_chord", Dimensional);
            s.push("extent_thickness", Dimensional);
            s.push("profile_scale_mid", Dimensional);
            s.push("flatness_pressure", Form);
            s.push("ra_pressure", Surface);
            s.push("rz_pressure", Surface);
            for id in [
                "rel_pressure_suction_distance",
                "rel_pressure_suction_angle_deg",
                "rel_pressure_suction_offset",
            ] {
                s.push(id, Relational);
            }
            devstats(&mut s, "face_pressure");
            devstats(&mut s, "edge_leading");
            s.push("te_recess", DeviationStat);
        }
    }
    s
}

fn region_pts<'a>(pts: &'a [RegionPoint], kind: RegionKind) -> Vec<&'a RegionPoint> {
    pts.iter().filter(|p| p.region == kind).collect()
}

fn need(pts: &[&RegionPoint], min: usize, what: &str) -> Result<()> {
    if pts.len() < min {
        return Err(Error::MissingFeature(format!(
            "{what}: {} points, need {min}",
            pts.len()
        )));
    }
    Ok(())
}

fn mean_of(vals: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in vals {
        sum += v;
        n += 1;
    }
    sum / n.max(1) as f64
}

/// Mean |residual| and mean per-cell peak-to-valley of the deviations after
/// per-cell linear detrending over `cell_mm` cubes of the nominal surface.
/// The detrend removes every mode smooth at the cell scale, leaving the
/// machining texture.
pub fn tiled_roughness(pts: &[&RegionPoint], cell_mm: f64) -> Result<(f64, f64)> {
    if cell_mm <= 0.0 {
        return Err(Error::InvalidArgument(format!("cell size {cell_mm}")));
    }
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in pts.iter().enumerate() {
        let key = (
            (p.nominal.x / cell_mm).floor() as i64,
            (p.nominal.y / cell_mm).floor() as i64,
            (p.nominal.z / cell_mm).floor() as i64,
        );
        cells.entry(key).or_default().push(i);
    }
    let mut abs_sum = 0.0;
    let mut abs_n = 0usize;
    let mut pv_sum = 0.0;
    let mut pv_n = 0usize;
    for ids in cells.values() {
        if ids.len() < 8 {
            continue;
        }
        // Least-squares d ≈ a + b·x + c·y + e·z about the cell centroid.
        let c = ids.iter().fold(Vec3::zeros(), |acc, &i| acc + pts[i].nominal)
            / ids.len() as f64;
        let mut ata = nalgebra::Matrix4::<f64>::zeros();
        let mut atb = nalgebra::Vector4::<f64>::zeros();
        for &i in ids {
            let q = pts[i].nominal - c;
            let row = nalgebra::Vector4::new(1.0, q.x, q.y, q.z);
            ata += row * row.transpose();
            atb += row * pts[i].deviation;
        }
        // Thin or degenerate cells (e.g. a flat face gives no z spread)
        // still solve via a tiny ridge.
        for k in 0..4 {
            ata[(k, k)] += 1e-9;
        }
        let Some(chol) = nalgebra::Cholesky::new(ata) else { continue };
        let coef = chol.solve(&atb);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in ids {
            let q = pts[i].nominal - c;
            let fitted = coef[0] + coef[1] * q.x + coef[2] * q.y + coef[3] * q.z;
            let r = pts[i].deviation - fitted;
            abs_sum += r.abs();
            abs_n += 1;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        pv_sum += hi - lo;
        pv_n += 1;
    }
    if pv_n == 0 {
        return Err(Error::MissingFeature("roughness: no populated cells".into()));
    }
    Ok((abs_sum / abs_n as f64, pv_sum / pv_n as f64))
}

fn robust_extent(vals: &mut Vec<f64>) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile_linear(vals, 99.5) - percentile_linear(vals, 0.5)
}

fn insert_devstats(
    out: &mut BTreeMap<String, f64>,
    region_name: &str,
    pts: &[&RegionPoint],
) -> Result<()> {
    let values: Vec<f64> = pts.iter().map(|p| p.deviation).collect();
    let stats = stats_of(&values, region_name)?;
    for (name, v) in STAT_NAMES.iter().zip(stats.values()) {
        out.insert(format!("dev_{region_name}_{name}"), v);
    }
    Ok(())
}

/// Measures every feature of the archetype's schema from labeled surface
/// points. Errors name the first feature whose input is missing or
/// degenerate.
pub fn measure_features(
    spec: &PartSpec,
    pts: &[RegionPoint],
) -> Result<BTreeMap<String, f64>> {
    match spec {
        PartSpec::Plate { .. } => measure_plate(spec, pts),
        PartSpec::Housing { .. } => measure_housing(spec, pts),
        PartSpec::Blade { .. } => measure_blade(spec, pts),
    }
}

fn measure_plate(spec: &PartSpec, pts: &[RegionPoint]) -> Result<BTreeMap<String, f64>> {
    let PartSpec::Plate { length: l, width: w, thickness: th, .. } = *spec else {
        unreachable!()
    };
    let mut out = BTreeMap::new();

    let mut frames = Vec::new();
    for (kind, tag) in [(RegionKind::PlateBore1, "bore1"), (RegionKind::PlateBore2, "bore2")] {
        let wall = region_pts(pts, kind);
        // Size and axis exclude the rim band where tool wear bites.
        let body: Vec<&RegionPoint> = wall
            .iter()
            .filter(|p| p.nominal.z >= 0.5 && p.nominal.z <= th - 1.0)
            .copied()
            .collect();
        need(&body, 30, &format!("{tag} wall body"))?;
        let cyl = fit_cylinder(&body.iter().map(|p| p.actual).collect::<Vec<_>>())?;
        out.insert(format!("{tag}_center_x"), cyl.axis_point.x);
        out.insert(format!("{tag}_center_y"), cyl.axis_point.y);
        out.insert(format!("{tag}_diameter"), 2.0 * cyl.radius);
        out.insert(format!("cylindricity_{tag}"), cyl.cylindricity);
        frames.push(FitFrame::new(tag, cyl.axis_point, cyl.axis_dir));

        let band: Vec<Vector2<f64>> = wall
            .iter()
            .filter(|p| p.nominal.z >= 0.3 * th && p.nominal.z <= 0.7 * th)
            .map(|p| Vector2::new(p.actual.x, p.actual.y))
            .collect();
        if band.len() < 20 {
            return Err(Error::MissingFeature(format!("roundness_{tag}: {} points", band.len())));
        }
        let circle = fit_circle_2d(&band)?;
        out.insert(format!("roundness_{tag}"), circle.roundness);
    }

    let bottom = region_pts(pts, RegionKind::PlateBottom);
    need(&bottom, 50, "bottom face")?;
    let plane = fit_plane(&bottom.iter().map(|p| p.actual).collect::<Vec<_>>())?;
    out.insert("flatness_bottom".into(), plane.flatness);
    let (ra, rz) = tiled_roughness(&bottom, 2.0)?;
    out.insert("ra_bottom".into(), ra);
    out.insert("rz_bottom".into(), rz);
    insert_devstats(&mut out, "face_bottom", &bottom)?;

    // Thickness probed at the four corner patches, away from clamping bow.
    let corner = |p: &RegionPoint| {
        let m = 6.0;
        (p.nominal.x < m || p.nominal.x > l - m) && (p.nominal.y < m || p.nominal.y > w - m)
    };
    let top = region_pts(pts, RegionKind::PlateTop);
    let top_c: Vec<&RegionPoint> = top.iter().filter(|p| corner(p)).copied().collect();
    let bot_c: Vec<&RegionPoint> = bottom.iter().filter(|p| corner(p)).copied().collect();
    need(&top_c, 10, "top corner patches")?;
    need(&bot_c, 10, "bottom corner patches")?;
    let thickness = mean_of(top_c.iter().map(|p| p.actual.z))
        - mean_of(bot_c.iter().map(|p| p.actual.z));
    out.insert("thickness_corners".into(), thickness);

    let bore1 = region_pts(pts, RegionKind::PlateBore1);
    insert_devstats(&mut out, "bore1", &bore1)?;
    let rim: Vec<f64> = bore1
        .iter()
        .filter(|p| p.nominal.z > th - 0.8)
        .map(|p| p.deviation)
        .collect();
    let body: Vec<f64> = bore1
        .iter()
        .filter(|p| p.nominal.z <= th - 1.0)
        .map(|p| p.deviation)
        .collect();
    if rim.len() < 10 || body.len() < 10 {
        return Err(Error::MissingFeature(format!(
            "rim_recess_bore1: rim {} body {}",
            rim.len(),
            body.len()
        )));
    }
    out.insert(
        "rim_recess_bore1".into(),
        mean_of(body.iter().copied()) - mean_of(rim.iter().copied()),
    );

    for (id, v) in relational_features(&frames, &[("bore1".into(), "bore2".into())])? {
        out.insert(id, v);
    }
    Ok(out)
}

fn measure_housing(spec: &PartSpec, pts: &[RegionPoint]) -> Result<BTreeMap<String, f64>> {
    let PartSpec::Housing { height: h, .. } = *spec else { unreachable!() };
    let mut out = BTreeMap::new();

    let bore = region_pts(pts, RegionKind::HousingBore);
    let bore_body: Vec<&RegionPoint> =
        bore.iter().filter(|p| p.nominal.z >= 0.5 && p.nominal.z <= h - 0.5).copied().collect();
    need(&bore_body, 30, "bore wall")?;
    let bore_cyl = fit_cylinder(&bore_body.iter().map(|p| p.actual).collect::<Vec<_>>())?;
    out.insert("bore_center_x".into(), bore_cyl.axis_point.x);
    out.insert("bore_center_y".into(), bore_cyl.axis_point.y);
    out.insert("bore_diameter".into(), 2.0 * bore_cyl.radius);
    out.insert("cylindricity_bore".into(), bore_cyl.cylindricity);

    let band: Vec<Vector2<f64>> = bore
        .iter()
        .filter(|p| p.nominal.z >= 0.4 * h && p.nominal.z <= 0.75 * h)
        .map(|p| Vector2::new(p.actual.x, p.actual.y))
        .collect();
    if band.len() < 20 {
        return Err(Error::MissingFeature(format!("roundness_bore: {} points", band.len())));
    }
    out.insert("roundness_bore".into(), fit_circle_2d(&band)?.roundness);

    let outer = region_pts(pts, RegionKind::HousingOuter);
    let outer_body: Vec<&RegionPoint> =
        outer.iter().filter(|p| p.nominal.z >= 0.5 && p.nominal.z <= h - 1.2).copied().collect();
    need(&outer_body, 30, "outer wall body")?;
    let outer_cyl = fit_cylinder(&outer_body.iter().map(|p| p.actual).collect::<Vec<_>>())?;
    out.insert("outer_diameter".into(), 2.0 * outer_cyl.radius);
    out.insert("cylindricity_outer".into(), outer_cyl.cylindricity);

    let top = region_pts(pts, RegionKind::HousingTop);
    let bottom = region_pts(pts, RegionKind::HousingBottom);
    need(&top, 50, "top face")?;
    need(&bottom, 50, "bottom face")?;
    out.insert(
        "flatness_top".into(),
        fit_plane(&top.iter().map(|p| p.actual).collect::<Vec<_>>())?.flatness,
    );
    out.insert(
        "flatness_bottom".into(),
        fit_plane(&bottom.iter().map(|p| p.actual).collect::<Vec<_>>())?.flatness,
    );
    out.insert(
        "height_mean".into(),
        mean_of(top.iter().map(|p| p.actual.z)) - mean_of(bottom.iter().map(|p| p.actual.z)),
    );
    let (ra, rz) = tiled_roughness(&top, 2.0)?;
    out.insert("ra_top".into(), ra);
    out.insert("rz_top".into(), rz);
    insert_devstats(&mut out, "face_top", &top)?;
    insert_devstats(&mut out, "outer_wall", &outer)?;

    let rim: Vec<f64> =
        outer.iter().filter(|p| p.nominal.z > h - 1.0).map(|p| p.deviation).collect();
    let body: Vec<f64> =
        outer.iter().filter(|p| p.nominal.z <= h - 1.2).map(|p| p.deviation).collect();
    if rim.len() < 10 || body.len() < 10 {
        return Err(Error::MissingFeature(format!(
            "rim_recess_outer: rim {} body {}",
            rim.len(),
            body.len()
        )));
    }
    out.insert(
        "rim_recess_outer".into(),
        mean_of(body.iter().copied()) - mean_of(rim.iter().copied()),
    );

    let frames = vec![
        FitFrame::new("bore", bore_cyl.axis_point, bore_cyl.axis_dir),
        FitFrame::new("outer", outer_cyl.axis_point, outer_cyl.axis_dir),
    ];
    for (id, v) in relational_features(&frames, &[("bore".into(), "outer".into())])? {
        out.insert(id, v);
    }
    Ok(out)
}

fn measure_blade(spec: &PartSpec, pts: &[RegionPoint]) -> Result<BTreeMap<String, f64>> {
    let PartSpec::Blade { span, .. } = *spec else { unreachable!() };
    let mut out = BTreeMap::new();

    let mut xs: Vec<f64> = pts.iter().map(|p| p.actual.x).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.actual.y).collect();
    if xs.len() < 100 {
        return Err(Error::MissingFeature(format!("blade extents: {} points", xs.len())));
    }
    out.insert("extent_chord".into(), robust_extent(&mut xs));
    out.insert("extent_thickness".into(), robust_extent(&mut ys));

    let mid: Vec<&RegionPoint> = pts
        .iter()
        .filter(|p| (p.nominal.z - span / 2.0).abs() <= 2.0)
        .collect();
    need(&mid, 30, "mid-span section band")?;
    out.insert("section_centroid_x".into(), mean_of(mid.iter().map(|p| p.actual.x)));
    out.insert("section_centroid_y".into(), mean_of(mid.iter().map(|p| p.actual.y)));

    // Best-fit size factor of the mid-span band: least squares
    // d ~ s*((p-c)*n) + t*n, so the reported scale is what survives after
    // the best-fit translation. A narrow band of a bowed part moves almost
    // rigidly, so clamp distortion lands in t; edge bands are excluded
    // because localized edge defects bias the fit. The airfoil analogue of
    // a diameter. Adding rotation nuisances would make the system nearly
    // rank deficient on a thin section and was measurably worse.
    let band: Vec<&RegionPoint> = pts
        .iter()
        .filter(|p| {
            (p.nominal.z - span / 2.0).abs() <= 5.0
                && (p.region == RegionKind::BladePressure
                    || p.region == RegionKind::BladeSuction)
        })
        .collect();
    need(&band, 100, "mid-span scale band")?;
    let c = spec.center();
    let mut ata = nalgebra::SMatrix::<f64, 4, 4>::zeros();
    let mut atb = nalgebra::SVector::<f64, 4>::zeros();
    for p in &band {
        let n = p.normal;
        let row = [(p.nominal - c).dot(&n), n.x, n.y, n.z];
        for i in 0..4 {
            for j in 0..4 {
                ata[(i, j)] += row[i] * row[j];
            }
            atb[i] += row[i] * p.deviation;
        }
    }
    let scale = ata
        .cholesky()
        .map(|ch| ch.solve(&atb)[0])
        .ok_or_else(|| Error::Degenerate("mid-span scale band is rank deficient".into()))?;
    out.insert("profile_scale_mid".into(), scale);

    let pressure = region_pts(pts, RegionKind::BladePressure);
    let suction = region_pts(pts, RegionKind::BladeSuction);
    need(&pressure, 50, "pressure face")?;
    need(&suction, 50, "suction face")?;
    let p_plane = fit_plane(&pressure.iter().map(|p| p.actual).collect::<Vec<_>>())?;
    let s_plane = fit_plane(&suction.iter().map(|p| p.actual).collect::<Vec<_>>())?;
    out.insert("flatness_pressure".into(), p_plane.flatness);
    let (ra, rz) = tiled_roughness(&pressure, 2.0)?;
    out.insert("ra_pressure".into(), ra);
    out.insert("rz_pressure".into(), rz);
    insert_devstats(&mut out, "face_pressure", &pressure)?;

    let leading = region_pts(pts, RegionKind::BladeLeading);
    need(&leading, 30, "leading edge")?;
    insert_devstats(&mut out, "edge_leading", &leading)?;

    // Wear depth below the local edge level, stationwise. Percentile
    // differencing inside one side-and-span cell cancels every mode that is
    // locally uniform there (thermal, bow, long waves); only the erosion
    // pit survives. Cells are keyed by surface side so the two faces of the
    // thin edge never mix.
    let trailing = region_pts(pts, RegionKind::BladeTrailing);
    need(&trailing, 30, "trailing edge")?;
    let mut cells: BTreeMap<(i64, bool), Vec<f64>> = BTreeMap::new();
    for p in &trailing {
        let key = ((p.nominal.z / 10.0).floor() as i64, p.normal.y > 0.0);
        cells.entry(key).or_default().push(p.deviation);
    }
    let mut depths: Vec<f64> = Vec::new();
    for devs in cells.values_mut() {
        if devs.len() < 20 {
            continue;
        }
        devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        depths.push(percentile_linear(devs, 50.0) - percentile_linear(devs, 5.0));
    }
    if depths.is_empty() {
        return Err(Error::MissingFeature("te_recess: no trailing-edge cell dense enough".into()));
    }
    out.insert("te_recess".into(), mean_of(depths.iter().copied()));

    let frames = vec![
        FitFrame::new("pressure", p_plane.point, p_plane.normal),
        FitFrame::new("suction", s_plane.point, s_plane.normal),
    ];
    for (id, v) in relational_features(&frames, &[("pressure".into(), "suction".into())])? {
        out.insert(id, v);
    }
    Ok(out)
}
