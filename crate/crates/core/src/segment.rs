//! Classical lesion segmentation inside an operator-provided region of interest:
//! fixed fraction of the regional maximum, and an iterative contrast-oriented
//! threshold with background correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{self, BinaryMask, BoundingBox, Connectivity};
use crate::numeric;
use crate::volume::Volume3D;

/// How the region of interest is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoiSpec {
    /// Explicit inclusive voxel box.
    Box { min: [usize; 3], max: [usize; 3] },
    /// Box grown from a seed voxel (default: the global maximum) until no
    /// face voxel reaches `grow_fraction` of the seed value, then padded by `margin`.
    Seed {
        #[serde(default)]
        seed: Option<[usize; 3]>,
        #[serde(default = "default_grow_fraction")]
        grow_fraction: f64,
        #[serde(default = "default_margin")]
        margin: usize,
    },
}

fn default_grow_fraction() -> f64 {
    0.3
}

fn default_margin() -> usize {
    2
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec::Seed {
            seed: None,
            grow_fraction: default_grow_fraction(),
            margin: default_margin(),
        }
    }
}

impl RoiSpec {
    pub fn resolve(&self, vol: &Volume3D) -> Result<BinaryMask> {
        let g = *vol.geometry();
        let bb = match self {
            RoiSpec::Box { min, max } => {
                for a in 0..3 {
                    if min[a] > max[a] || max[a] >= g.dims[a] {
                        return Err(Error::param(
                            "roi",
                            format!("box {min:?}..{max:?} outside {:?}", g.dims),
                        ));
                    }
                }
                BoundingBox {
                    min: *min,
                    max: *max,
                }
            }
            RoiSpec::Seed {
                seed,
                grow_fraction,
                margin,
            } => {
                let seed = match seed {
                    Some(s) => {
                        if (0..3).any(|a| s[a] >= g.dims[a]) {
                            return Err(Error::param(
                                "roi.seed",
                                format!("{s:?} outside {:?}", g.dims),
                            ));
                        }
                        *s
                    }
                    None => g.coords(
                        argmax(vol.values(), 0..vol.values().len()).expect("volume non-empty"),
                    ),
                };
                grow_box(vol, seed, *grow_fraction).expanded(*margin, g.dims)
            }
        };
        Ok(BinaryMask::from_box(g, bb))
    }
}

fn grow_box(vol: &Volume3D, seed: [usize; 3], fraction: f64) -> BoundingBox {
    let dims = vol.dims();
    let level = fraction * vol.get(seed[0], seed[1], seed[2]);
    let mut bb = BoundingBox {
        min: seed,
        max: seed,
    };
    let face_hot = |bb: &BoundingBox, axis: usize, at: usize| -> bool {
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for i in bb.min[u]..=bb.max[u] {
            for j in bb.min[v]..=bb.max[v] {
                let mut p = [0usize; 3];
                p[axis] = at;
                p[u] = i;
                p[v] = j;
                if vol.get(p[0], p[1], p[2]) >= level {
                    return true;
                }
            }
        }
        false
    };
    loop {
        let mut grew = false;
        for axis in 0..3 {
            if bb.min[axis] > 0 && face_hot(&bb, axis, bb.min[axis]) {
                bb.min[axis] -= 1;
                grew = true;
            }
            if bb.max[axis] + 1 < dims[axis] && face_hot(&bb, axis, bb.max[axis]) {
                bb.max[axis] += 1;
                grew = true;
            }
        }
        if !grew {
            return bb;
        }
    }
}

/// Index of the largest value among `indices`; ties go to the first.
fn argmax(values: &[f64], indices: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in indices {
        let v = values[i];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn check_roi(vol: &Volume3D, roi: &BinaryMask) -> Result<()> {
    vol.geometry()
        .ensure_same(roi.geometry(), "volume vs roi")?;
    if roi.is_empty() {
        return Err(Error::EmptyRegion("region of interest is empty".into()));
    }
    Ok(())
}

/// Voxels of `roi` at or above `pct` times the regional maximum.
pub fn threshold_pct_suvmax(vol: &Volume3D, roi: &BinaryMask, pct: f64) -> Result<BinaryMask> {
    check_roi(vol, roi)?;
    if !(pct > 0.0 && pct < 1.0) {
        return Err(Error::param(
            "pct",
            format!("must lie in (0, 1), got {pct}"),
        ));
    }
    let values = vol.values();
    let max = roi
        .indices()
        .map(|i| values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let level = pct * max;
    // a non-positive maximum scales the level above it; keep the maximum itself
    let level = level.min(max);
    BinaryMask::from_indices(
        *vol.geometry(),
        roi.indices().filter(|&i| values[i] >= level),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastParams {
    /// Weight on the mean of the high-uptake region.
    pub a: f64,
    /// Weight on the background estimate.
    pub b: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the regional maximum defining the high-uptake region.
    pub region_fraction: f64,
    /// Distance (voxels) of the one-voxel background shell beyond the roi.
    pub background_distance: usize,
    /// Starting threshold as a fraction of the regional maximum.
    pub initial_fraction: f64,
}

impl Default for ContrastParams {
    fn default() -> Self {
        ContrastParams {
            a: 0.39,
            b: 1.0,
            tol: 1e-6,
            max_iter: 100,
            region_fraction: 0.7,
            background_distance: 3,
            initial_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastOutcome {
    pub mask: BinaryMask,
    pub threshold: f64,
    pub background: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean of the one-voxel shell at Chebyshev distance `distance` outside the roi.
pub fn background_shell_mean(vol: &Volume3D, roi: &BinaryMask, distance: usize) -> Result<f64> {
    if distance == 0 {
        return Err(Error::param("background_distance", "must be >= 1"));
    }
    let outer = mask::dilate_cube(roi, distance);
    let inner = mask::dilate_cube(roi, distance - 1);
    let values = vol.values();
    let shell: Vec<f64> = outer
        .bits()
        .iter()
        .zip(inner.bits())
        .enumerate()
        .filter(|(_, (&o, &i))| o && !i)
        .map(|(k, _)| values[k])
        .collect();
    if shell.is_empty() {
        return Err(Error::EmptyRegion(
            "background shell lies entirely outside the volume".into(),
        ));
    }
    Ok(numeric::mean(&shell))
}

/// Iterates `T <- a * mean(high-uptake region) + b * background` to a fixed point.
///
/// The working mask at each step is the 26-connected component of roi voxels
/// `>= T` that contains the regional maximum. `T` is capped at that maximum so
/// the component is never empty.
pub fn threshold_contrast_iterative(
    vol: &Volume3D,
    roi: &BinaryMask,
    params: &ContrastParams,
) -> Result<ContrastOutcome> {
    check_roi(vol, roi)?;
    if !(params.a > 0.0 && params.a < 1.0) {
        return Err(Error::param(
            "a",
            format!("must lie in (0, 1), got {}", params.a),
        ));
    }
    if !(params.b >= 0.0 && params.b.is_finite()) {
        return Err(Error::param("b", format!("must be >= 0, got {}", params.b)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    if params.max_iter == 0 {
        return Err(Error::param("max_iter", "must be >= 1"));
    }
    let values = vol.values();
    let peak_index = argmax(values, roi.indices()).expect("roi non-empty");
    let local_max = values[peak_index];
    let high_level = params.region_fraction * local_max;
    let background = background_shell_mean(vol, roi, params.background_distance)?;

    let working_mask = |t: f64| -> BinaryMask {
        let above =
            BinaryMask::from_indices(*vol.geometry(), roi.indices().filter(|&i| values[i] >= t))
                .expect("indices in range");
        mask::component_containing(&above, peak_index, Connectivity::TwentySix)
    };
    let update = |m: &BinaryMask| -> f64 {
        let high: Vec<f64> = m
            .indices()
            .map(|i| values[i])
            .filter(|&v| v >= high_level)
            .collect();
        let region_mean = if high.is_empty() {
            local_max
        } else {
            numeric::mean(&high)
        };
        (params.a * region_mean + params.b * background).min(local_max)
    };

    let mut t = params.initial_fraction * local_max;
    let mut current = working_mask(t);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let next = update(&current);
        iterations += 1;
        let step = (next - t).abs();
        t = next;
        current = working_mask(t);
        if step < params.tol {
            converged = true;
            break;
        }
    }
    Ok(ContrastOutcome {
        mask: current,
        threshold: t,
        background,
        iterations,
        converged,
    })
}

/// Largest 26-connected component with interior holes filled.
pub fn postprocess(mask: &BinaryMask) -> BinaryMask {
    let mut components = mask::label_components(mask, Connectivity::TwentySix);
    if components.is_empty() {
        return mask.clone();
    }
    let largest = components.swap_remove(0);
    let m = BinaryMask::from_indices(*mask.geometry(), largest).expect("indices in range");
    mask::fill_holes(&m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pct,
    Contrast,
}

/// Segmentation config as read from JSON. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub method: Method,
    pub pct: f64,
    pub contrast: ContrastParams,
    pub roi: RoiSpec,
    pub postprocess: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            method: Method::Contrast,
            pct: 0.41,
            contrast: ContrastParams::default(),
            roi: RoiSpec::default(),
            postprocess: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub mask: BinaryMask,
    pub roi: BoundingBox,
    pub threshold: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full classical pipeline: resolve roi, threshold, optionally post-process.
pub fn segment(vol: &Volume3D, config: &SegmentConfig) -> Result<SegmentOutcome> {
    let roi = config.roi.resolve(vol)?;
    let roi_box = roi.bounding_box().expect("roi non-empty");
    let (mask, threshold, iterations, converged) = match config.method {
        Method::Pct => {
            let m = threshold_pct_suvmax(vol, &roi, config.pct)?;
            let max = roi
                .indices()
                .map(|i| vol.values()[i])
                .fold(f64::NEG_INFINITY, f64::max);
            (m, config.pct * max, 0, true)
        }
        Method::Contrast => {
            let o = threshold_contrast_iterative(vol, &roi, &config.contrast)?;
            (o.mask, o.threshold, o.iterations, o.converged)
        }
    };
    let mask = if config.postprocess {
        postprocess(&mask)
    } else {
        mask
    };
    Ok(SegmentOutcome {
        mask,
        roi: roi_box,
        threshold,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, IntensityUnit};
    use proptest::prelude::*;

    fn geom(d: [usize; 3]) -> Geometry {
        Geometry::new(d, [4.0; 3]).unwrap()
    }

    /// Background `bg`, cube of `plateau` spanning [lo, hi] on every axis.
    fn plateau_volume(n: usize, lo: usize, hi: usize, bg: f64, plateau: f64) -> Volume3D {
        let g = geom([n, n, n]);
        let mut v = vec![bg; g.len()];
        for z in lo..=hi {
            for y in lo..=hi {
                for x in lo..=hi {
                    v[g.index(x, y, z)] = plateau;
                }
            }
        }
        Volume3D::new(g, v, IntensityUnit::Suv).unwrap()
    }

    #[test]
    fn pct_threshold_example() {
        let g = geom([5, 1, 1]);
        let v = Volume3D::new(g, vec![1.0, 2.0, 3.0, 4.0, 10.0], IntensityUnit::Suv).unwrap();
        let roi = BinaryMask::full(g);
        let m = threshold_pct_suvmax(&v, &roi, 0.4).unwrap();
        assert_eq!(m.bits(), &[false, false, false, true, true]);
        let top = threshold_pct_suvmax(&v, &roi, 1.0 - 1e-12).unwrap();
        assert_eq!(top.indices().collect::<Vec<_>>(), vec![4]);
        let c = Volume3D::filled(g, 3.0, IntensityUnit::Suv).unwrap();
        assert_eq!(threshold_pct_suvmax(&c, &roi, 0.9).unwrap(), roi);
        assert!(matches!(
            threshold_pct_suvmax(&v, &BinaryMask::empty(g), 0.4),
            Err(Error::EmptyRegion(_))
        ));
        assert!(threshold_pct_suvmax(&v, &roi, 1.5).is_err());
    }

    #[test]
    fn contrast_fixed_point_on_plateau() {
        let v = plateau_volume(20, 8, 11, 1.0, 10.0);
        let roi = BinaryMask::from_box(
            *v.geometry(),
            BoundingBox {
                min: [6; 3],
                max: [13; 3],
            },
        );
        let out = threshold_contrast_iterative(&v, &roi, &ContrastParams::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.background, 1.0);
        assert!((out.threshold - 4.9).abs() < 1e-12, "{}", out.threshold);
        assert_eq!(out.mask.voxel_count(), 64);
        // substitution: the returned threshold reproduces itself
        let high: Vec<f64> = out
            .mask
            .indices()
            .map(|i| v.values()[i])
            .filter(|&x| x >= 7.0)
            .collect();
        let again = 0.39 * high.iter().sum::<f64>() / high.len() as f64 + 1.0 * out.background;
        assert!((again - out.threshold).abs() < 1e-6);
    }

    #[test]
    fn contrast_zero_background() {
        let v = plateau_volume(16, 6, 9, 0.0, 8.0);
        let roi = BinaryMask::from_box(
            *v.geometry(),
            BoundingBox {
                min: [4; 3],
                max: [11; 3],
            },
        );
        let p = ContrastParams {
            a: 0.5,
            ..ContrastParams::default()
        };
        let out = threshold_contrast_iterative(&v, &roi, &p).unwrap();
        assert!((out.threshold - 4.0).abs() < 1e-12);
    }

    #[test]
    fn contrast_large_tolerance_stops_after_one_step() {
        let v = plateau_volume(16, 6, 9, 1.0, 8.0);
        let roi = BinaryMask::from_box(
            *v.geometry(),
            BoundingBox {
                min: [4; 3],
                max: [11; 3],
            },
        );
        let p = ContrastParams {
            tol: 1e9,
            ..ContrastParams::default()
        };
        let out = threshold_contrast_iterative(&v, &roi, &p).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        let p = ContrastParams {
            tol: 1e-300,
            max_iter: 1,
            initial_fraction: 0.1,
            ..ContrastParams::default()
        };
        let out = threshold_contrast_iterative(&v, &roi, &p).unwrap();
        assert!(!out.converged);
    }

    #[test]
    fn contrast_parameter_errors() {
        let v = plateau_volume(8, 3, 4, 1.0, 8.0);
        let roi = BinaryMask::from_box(
            *v.geometry(),
            BoundingBox {
                min: [2; 3],
                max: [5; 3],
            },
        );
        for p in [
            ContrastParams {
                a: 0.0,
                ..Default::default()
            },
            ContrastParams {
                a: 1.0,
                ..Default::default()
            },
            ContrastParams {
                b: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                threshold_contrast_iterative(&v, &roi, &p),
                Err(Error::Parameter { .. })
            ));
        }
        let full = BinaryMask::full(*v.geometry());
        assert!(matches!(
            threshold_contrast_iterative(&v, &full, &ContrastParams::default()),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn postprocess_keeps_largest_filled() {
        let g = geom([12, 12, 12]);
        let mut m = BinaryMask::empty(g);
        // 5x5x2 slab = 50 voxels, with one interior hole after a third layer is added
        for z in 1..3 {
            for y in 1..6 {
                for x in 1..6 {
                    m.set(x, y, z, true);
                }
            }
        }
        for p in [[10, 10, 10], [10, 10, 9], [10, 9, 10]] {
            m.set(p[0], p[1], p[2], true);
        }
        let cc = mask::connected_components(&m, Connectivity::TwentySix);
        assert_eq!(
            cc.iter().map(|c| c.voxel_count()).collect::<Vec<_>>(),
            vec![50, 3]
        );
        let out = postprocess(&m);
        assert_eq!(out, cc[0]);
        assert_eq!(postprocess(&out), out);
        let e = BinaryMask::empty(g);
        assert_eq!(postprocess(&e), e);

        let mut hollow = BinaryMask::from_box(
            g,
            BoundingBox {
                min: [2; 3],
                max: [6; 3],
            },
        );
        hollow.set(4, 4, 4, false);
        assert_eq!(postprocess(&hollow).voxel_count(), 125);
    }

    #[test]
    fn seed_roi_grows_around_lesion() {
        let v = plateau_volume(30, 10, 15, 1.0, 10.0);
        let roi = RoiSpec::default().resolve(&v).unwrap();
        let bb = roi.bounding_box().unwrap();
        assert_eq!(bb.min, [7; 3]);
        assert_eq!(bb.max, [18; 3]);
        let out = segment(&v, &SegmentConfig::default()).unwrap();
        assert_eq!(out.mask.voxel_count(), 216);
        let pct = SegmentConfig {
            method: Method::Pct,
            ..SegmentConfig::default()
        };
        assert_eq!(segment(&v, &pct).unwrap().mask, out.mask);
    }

    #[test]
    fn config_json_defaults() {
        let c: SegmentConfig = serde_json::from_str(r#"{"method":"pct","pct":0.5}"#).unwrap();
        assert_eq!(c.method, Method::Pct);
        assert_eq!(c.contrast.a, 0.39);
        let c: SegmentConfig =
            serde_json::from_str(r#"{"roi":{"kind":"box","min":[0,0,0],"max":[3,3,3]}}"#).unwrap();
        assert!(matches!(c.roi, RoiSpec::Box { .. }));
    }

    proptest! {
        #[test]
        fn pct_monotone_and_scale_invariant(vals in proptest::collection::vec(0.0f64..20.0, 27),
                                            p1 in 0.05f64..0.95, p2 in 0.05f64..0.95, c in 0.1f64..10.0) {
            let g = geom([3, 3, 3]);
            let v = Volume3D::new(g, vals, IntensityUnit::Suv).unwrap();
            let roi = BinaryMask::full(g);
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = threshold_pct_suvmax(&v, &roi, lo).unwrap();
            let b = threshold_pct_suvmax(&v, &roi, hi).unwrap();
            prop_assert!(b.is_subset_of(&a));
            prop_assert!(!b.is_empty());
            // powers of two scale exactly
            let s = c.log2().round().exp2();
            prop_assert_eq!(threshold_pct_suvmax(&v.scaled(s).unwrap(), &roi, lo).unwrap(), a);
        }

        #[test]
        fn postprocess_single_component(bits in proptest::collection::vec(any::<bool>(), 216)) {
            let m = BinaryMask::new(geom([6, 6, 6]), bits).unwrap();
            let out = postprocess(&m);
            prop_assert!(mask::connected_components(&out, Connectivity::TwentySix).len() <= 1);
            prop_assert_eq!(mask::fill_holes(&out), out);
        }
    }
}
