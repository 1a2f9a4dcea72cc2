//! Pixelwise reconstruction drivers.
//!
//! The outer approach realizes the intersection formula over a family of
//! test sets `C = clipped \ slab`, where the slabs are anchored at the four
//! domain sides and grow pixel row by pixel row. Slab complements stay
//! connected and meet the Neumann boundary, which the converse direction of
//! the shape tests requires; a lone interior pixel's complement-test is
//! blind to the data (encased in the rigid test body or isolated inside the
//! cavity one, the pixel never affects boundary measurements). A pixel is
//! masked when all four of its covering-slab tests fail, so the mask is the
//! pixel bounding box of the inclusions and its complement is the union of
//! the passing test-set complements.
//!
//! The inner approach tests each pixel itself as a probe set and masks the
//! pixels whose test holds. The linearized outer driver reuses one set of
//! stored background solutions, so its pixel family costs no PDE solves
//! beyond those.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::materials::{BetaBounds, LameState};
use crate::mesh::{cell_size, Mesh};
use crate::monotonicity::{
    inner_test_neg, inner_test_pos, loewner_min_eig, InequalitySelection, InnerSign, TestKit,
    TestMode,
};
use crate::ndmap::NdMatrix;

/// Axis-aligned pixel partition of the margin-clipped domain.
#[derive(Debug, Clone)]
pub struct PixelGrid {
    pub p: usize,
    /// One element layer kept clear of the domain boundary.
    pub margin: f64,
    /// Elements per pixel, indexed `iy * p + ix` (row 0 at the bottom).
    pub pixel_elements: Vec<Vec<usize>>,
    /// All elements of the clipped domain, ascending.
    pub clipped: Vec<usize>,
    pub centers: Vec<[f64; 2]>,
}

impl PixelGrid {
    pub fn new(mesh: &Mesh, p: usize) -> Result<Self> {
        if p < 1 {
            return Err(Error::invalid("reconstruct", "grid resolution must be >= 1"));
        }
        let margin = cell_size(mesh);
        let width = (1.0 - 2.0 * margin) / p as f64;
        if width <= 0.0 {
            return Err(Error::invalid("reconstruct", "margin swallows the domain"));
        }
        let mut pixel_elements = vec![Vec::new(); p * p];
        let mut clipped = Vec::new();
        for e in 0..mesh.elements.len() {
            let b = mesh.barycenter(mesh.elements[e]);
            if b[0] < margin || b[0] > 1.0 - margin || b[1] < margin || b[1] > 1.0 - margin {
                continue;
            }
            let ix = (((b[0] - margin) / width).floor() as usize).min(p - 1);
            let iy = (((b[1] - margin) / width).floor() as usize).min(p - 1);
            pixel_elements[iy * p + ix].push(e);
            clipped.push(e);
        }
        for (k, elems) in pixel_elements.iter().enumerate() {
            if elems.is_empty() {
                return Err(Error::invalid(
                    "reconstruct",
                    format!(
                        "pixel {k} maps to no element; the {p}x{p} grid is too fine for this mesh"
                    ),
                ));
            }
        }
        let centers = (0..p * p)
            .map(|k| {
                let (ix, iy) = (k % p, k / p);
                [
                    margin + (ix as f64 + 0.5) * width,
                    margin + (iy as f64 + 0.5) * width,
                ]
            })
            .collect();
        Ok(PixelGrid {
            p,
            margin,
            pixel_elements,
            clipped,
            centers,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.p * self.p
    }

    /// Pixel rectangle (lo, hi corners).
    pub fn pixel_rect(&self, pixel: usize) -> ([f64; 2], [f64; 2]) {
        let width = (1.0 - 2.0 * self.margin) / self.p as f64;
        let (ix, iy) = (pixel % self.p, pixel / self.p);
        (
            [
                self.margin + ix as f64 * width,
                self.margin + iy as f64 * width,
            ],
            [
                self.margin + (ix + 1) as f64 * width,
                self.margin + (iy + 1) as f64 * width,
            ],
        )
    }

    /// Pixel indices of the slab of the given depth anchored at a side.
    pub fn slab_pixels(&self, side: SlabSide, depth: usize) -> Vec<usize> {
        (0..self.n_pixels())
            .filter(|&k| {
                let (ix, iy) = (k % self.p, k / self.p);
                match side {
                    SlabSide::Left => ix < depth,
                    SlabSide::Right => ix >= self.p - depth,
                    SlabSide::Bottom => iy < depth,
                    SlabSide::Top => iy >= self.p - depth,
                }
            })
            .collect()
    }

    /// Elements of the test set `clipped \ slab(side, depth)`.
    pub fn slab_complement_elements(&self, side: SlabSide, depth: usize) -> Vec<usize> {
        let keep: Vec<bool> = (0..self.n_pixels())
            .map(|k| {
                let (ix, iy) = (k % self.p, k / self.p);
                match side {
                    SlabSide::Left => ix >= depth,
                    SlabSide::Right => ix < self.p - depth,
                    SlabSide::Bottom => iy >= depth,
                    SlabSide::Top => iy < self.p - depth,
                }
            })
            .collect();
        let mut out = Vec::new();
        for k in 0..self.n_pixels() {
            if keep[k] {
                out.extend(&self.pixel_elements[k]);
            }
        }
        out.sort_unstable();
        out
    }

    /// Depth of the slab from `side` that just covers the pixel.
    pub fn covering_depth(&self, pixel: usize, side: SlabSide) -> usize {
        let (ix, iy) = (pixel % self.p, pixel / self.p);
        match side {
            SlabSide::Left => ix + 1,
            SlabSide::Right => self.p - ix,
            SlabSide::Bottom => iy + 1,
            SlabSide::Top => self.p - iy,
        }
    }
}

/// Anchoring side of an outer-family slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlabSide {
    Left,
    Right,
    Bottom,
    Top,
}

impl SlabSide {
    pub const ALL: [SlabSide; 4] = [
        SlabSide::Left,
        SlabSide::Right,
        SlabSide::Bottom,
        SlabSide::Top,
    ];
}

/// One evaluated outer-family test.
#[derive(Debug, Clone, Copy)]
pub struct SlabTest {
    pub side: SlabSide,
    pub depth: usize,
    /// Cavity-type comparison min-eig, when consulted.
    pub first: Option<f64>,
    /// Rigid-type comparison min-eig, when consulted.
    pub second: Option<f64>,
}

impl SlabTest {
    /// Most violated consulted indicator.
    pub fn worst(&self) -> f64 {
        [self.first, self.second]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min)
    }
}

fn test_index(grid: &PixelGrid, side_idx: usize, depth: usize) -> usize {
    side_idx * grid.p + (depth - 1)
}

/// Evaluate the whole outer slab family with constrained extreme operators.
pub fn outer_family(
    measured: &NdMatrix,
    grid: &PixelGrid,
    kit: &TestKit,
) -> Result<Vec<SlabTest>> {
    // Depth p empties the test set; both operators degenerate to the
    // background map.
    let lambda0 = crate::ndmap::assemble_nd_matrix(
        kit.mesh,
        kit.background,
        kit.basis,
        kit.extreme_mode,
    )?;
    (0..4 * grid.p)
        .into_par_iter()
        .map(|t| -> Result<SlabTest> {
            let side = SlabSide::ALL[t / grid.p];
            let depth = t % grid.p + 1;
            let c = grid.slab_complement_elements(side, depth);
            let (first, second) = if c.is_empty() {
                let first = match kit.selection {
                    InequalitySelection::Positive => None,
                    _ => Some(loewner_min_eig(&lambda0, measured)?),
                };
                let second = match kit.selection {
                    InequalitySelection::Negative => None,
                    _ => Some(loewner_min_eig(measured, &lambda0)?),
                };
                (first, second)
            } else {
                let first = match kit.selection {
                    InequalitySelection::Positive => None,
                    _ => {
                        let op = kit.region_operator(&c, LameState::Cavity)?;
                        Some(loewner_min_eig(&op, measured)?)
                    }
                };
                let second = match kit.selection {
                    InequalitySelection::Negative => None,
                    _ => {
                        let op = kit.region_operator(&c, LameState::Rigid)?;
                        Some(loewner_min_eig(measured, &op)?)
                    }
                };
                (first, second)
            };
            Ok(SlabTest {
                side,
                depth,
                first,
                second,
            })
        })
        .collect()
}

/// Evaluate the outer slab family with linearized test operators; does no
/// PDE solves (everything comes from the stored background fields).
pub fn linearized_outer_family(
    measured: &NdMatrix,
    grid: &PixelGrid,
    beta: f64,
    bounds: &BetaBounds,
    kit: &TestKit,
) -> Result<Vec<SlabTest>> {
    if let Some(phantom) = kit.phantom {
        crate::materials::validate_linearized_bounds(phantom, beta, bounds)?;
    } else if !(beta > 0.0) {
        return Err(Error::invalid(
            "reconstruct",
            format!("contrast bound beta = {beta} must be positive"),
        ));
    }
    let fields = kit.background_fields.ok_or_else(|| {
        Error::invalid(
            "reconstruct",
            "linearized reconstruction requires precomputed background fields",
        )
    })?;
    let gram_clipped = fields.region_gram(&grid.clipped, 1.0, 2.0);
    // Column- and row-strip Grams; slab Grams are their partial sums.
    let strip_gram = |side: SlabSide, k: usize| {
        let mut elems = Vec::new();
        for pix in 0..grid.n_pixels() {
            let (ix, iy) = (pix % grid.p, pix / grid.p);
            let hit = match side {
                SlabSide::Left | SlabSide::Right => ix == k,
                SlabSide::Bottom | SlabSide::Top => iy == k,
            };
            if hit {
                elems.extend(&grid.pixel_elements[pix]);
            }
        }
        fields.region_gram(&elems, 1.0, 2.0)
    };
    let col_grams: Vec<_> = (0..grid.p).map(|k| strip_gram(SlabSide::Left, k)).collect();
    let row_grams: Vec<_> = (0..grid.p)
        .map(|k| strip_gram(SlabSide::Bottom, k))
        .collect();

    let lambda0 = &fields.background_nd;
    (0..4 * grid.p)
        .into_par_iter()
        .map(|t| -> Result<SlabTest> {
            let side = SlabSide::ALL[t / grid.p];
            let depth = t % grid.p + 1;
            let mut slab_gram = nalgebra::DMatrix::zeros(fields.dim(), fields.dim());
            for k in 0..depth {
                slab_gram += match side {
                    SlabSide::Left => &col_grams[k],
                    SlabSide::Right => &col_grams[grid.p - 1 - k],
                    SlabSide::Bottom => &row_grams[k],
                    SlabSide::Top => &row_grams[grid.p - 1 - k],
                };
            }
            let region_gram = &gram_clipped - &slab_gram;
            let n_elems = grid.clipped.len();
            let first = match kit.selection {
                InequalitySelection::Positive => None,
                _ => {
                    let op = lambda0.add(&fields.frechet_from_gram(
                        &region_gram,
                        -bounds.beta_u * beta,
                        n_elems,
                    ))?;
                    Some(loewner_min_eig(&op, measured)?)
                }
            };
            let second = match kit.selection {
                InequalitySelection::Negative => None,
                _ => {
                    let op =
                        lambda0.add(&fields.frechet_from_gram(&region_gram, beta, n_elems))?;
                    Some(loewner_min_eig(measured, &op)?)
                }
            };
            Ok(SlabTest {
                side,
                depth,
                first,
                second,
            })
        })
        .collect()
}

/// Consulted indicators for one pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelOutcome {
    /// Combined indicator (outer: best covering-slab worst; inner: min-eig).
    pub first: Option<f64>,
    /// Second consulted indicator, when the test has one per pixel.
    pub second: Option<f64>,
}

impl PixelOutcome {
    fn holds(&self, tau: f64) -> bool {
        self.first.map(|v| v >= -tau).unwrap_or(true)
            && self.second.map(|v| v >= -tau).unwrap_or(true)
    }

    /// Most violated consulted indicator.
    pub fn worst(&self) -> f64 {
        [self.first, self.second]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MaskRule {
    /// Outer approaches: masked pixels are those whose test fails.
    FailingPixels,
    /// Inner approaches: masked pixels are those whose test holds.
    HoldingPixels,
}

/// Per-pixel indicators, verdicts, and the thresholded inclusion mask.
#[derive(Debug, Clone)]
pub struct IndicatorMap {
    pub p: usize,
    pub centers: Vec<[f64; 2]>,
    pub outcomes: Vec<PixelOutcome>,
    pub verdicts: Vec<bool>,
    pub mask: Vec<bool>,
    pub tau: f64,
    pub provenance: String,
    rule: MaskRule,
}

impl IndicatorMap {
    fn build(
        grid: &PixelGrid,
        outcomes: Vec<PixelOutcome>,
        tau: f64,
        rule: MaskRule,
        provenance: String,
    ) -> Self {
        let verdicts: Vec<bool> = outcomes.iter().map(|o| o.holds(tau)).collect();
        let mask = verdicts
            .iter()
            .map(|&h| match rule {
                MaskRule::FailingPixels => !h,
                MaskRule::HoldingPixels => h,
            })
            .collect();
        IndicatorMap {
            p: grid.p,
            centers: grid.centers.clone(),
            outcomes,
            verdicts,
            mask,
            tau,
            provenance,
            rule,
        }
    }

    /// Re-apply the verdicts with a different threshold, reusing the stored
    /// indicators.
    pub fn rethreshold(&self, tau: f64) -> IndicatorMap {
        let verdicts: Vec<bool> = self.outcomes.iter().map(|o| o.holds(tau)).collect();
        let mask = verdicts
            .iter()
            .map(|&h| match self.rule {
                MaskRule::FailingPixels => !h,
                MaskRule::HoldingPixels => h,
            })
            .collect();
        IndicatorMap {
            verdicts,
            mask,
            tau,
            ..self.clone()
        }
    }

    pub fn masked_pixels(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&k| self.mask[k]).collect()
    }

    /// CSV listing: pixel index, center, consulted indicators, verdicts.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("pixel,center_x,center_y,min_eig_first,min_eig_second,holds,in_mask\n");
        for k in 0..self.outcomes.len() {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
            s.push_str(&format!(
                "{k},{:.17e},{:.17e},{},{},{},{}\n",
                self.centers[k][0],
                self.centers[k][1],
                fmt(self.outcomes[k].first),
                fmt(self.outcomes[k].second),
                self.verdicts[k],
                self.mask[k]
            ));
        }
        s
    }

    /// 8-bit binary PGM of the min-max normalized indicators (top row of
    /// the image is the top of the domain).
    pub fn indicator_pgm(&self) -> Vec<u8> {
        let values: Vec<f64> = self.outcomes.iter().map(|o| o.worst()).collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        self.pgm_bytes(|k| {
            if span > 0.0 {
                ((values[k] - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
    }

    /// Binary PGM of the mask (255 inside the mask).
    pub fn mask_pgm(&self) -> Vec<u8> {
        self.pgm_bytes(|k| if self.mask[k] { 255 } else { 0 })
    }

    fn pgm_bytes(&self, value: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.p, self.p).into_bytes();
        for row in 0..self.p {
            let iy = self.p - 1 - row;
            for ix in 0..self.p {
                out.push(value(iy * self.p + ix));
            }
        }
        out
    }
}

fn reduce_slab_tests_to_pixels(
    grid: &PixelGrid,
    tests: &[SlabTest],
    tau: f64,
    provenance: String,
) -> IndicatorMap {
    let outcomes: Vec<PixelOutcome> = (0..grid.n_pixels())
        .map(|k| {
            // A pixel is clean as soon as one covering slab test passes, so
            // its indicator is the best worst-value over the four.
            let indicator = SlabSide::ALL
                .iter()
                .enumerate()
                .map(|(si, &side)| {
                    let depth = grid.covering_depth(k, side);
                    tests[test_index(grid, si, depth)].worst()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            PixelOutcome {
                first: Some(indicator),
                second: None,
            }
        })
        .collect();
    IndicatorMap::build(grid, outcomes, tau, MaskRule::FailingPixels, provenance)
}

/// Outer reconstruction: evaluates the slab family and masks every pixel
/// whose covering tests all fail; the mask over-estimates the inclusions.
pub fn outer_reconstruction(
    measured: &NdMatrix,
    grid: &PixelGrid,
    kit: &TestKit,
) -> Result<IndicatorMap> {
    let tests = outer_family(measured, grid, kit)?;
    Ok(reduce_slab_tests_to_pixels(
        grid,
        &tests,
        kit.tau,
        format!("outer[{}]", measured.provenance),
    ))
}

/// Inner reconstruction: each pixel is a probe set; the mask collects the
/// holding pixels, whose union under-estimates the inclusion interior.
pub fn inner_reconstruction(
    measured: &NdMatrix,
    grid: &PixelGrid,
    beta: f64,
    sign: InnerSign,
    mode: TestMode,
    kit: &TestKit,
) -> Result<IndicatorMap> {
    let outcomes: Vec<PixelOutcome> = (0..grid.n_pixels())
        .into_par_iter()
        .map(|k| -> Result<PixelOutcome> {
            let b = &grid.pixel_elements[k];
            let r = match sign {
                InnerSign::Positive => inner_test_pos(measured, b, beta, mode, kit)?,
                InnerSign::Negative => inner_test_neg(measured, b, beta, mode, kit)?,
            };
            Ok(PixelOutcome {
                first: Some(r.min_eig),
                second: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(IndicatorMap::build(
        grid,
        outcomes,
        kit.tau,
        MaskRule::HoldingPixels,
        format!(
            "inner[{sign:?},{mode:?},beta={beta},{}]",
            measured.provenance
        ),
    ))
}

/// Linearized outer reconstruction for non-extreme inclusions.
///
/// Performs no PDE solves beyond the stored background fields: every slab
/// operator is a partial sum of precomputed strip Grams.
pub fn linearized_outer_reconstruction(
    measured: &NdMatrix,
    grid: &PixelGrid,
    beta: f64,
    bounds: &BetaBounds,
    kit: &TestKit,
) -> Result<IndicatorMap> {
    let tests = linearized_outer_family(measured, grid, beta, bounds, kit)?;
    Ok(reduce_slab_tests_to_pixels(
        grid,
        &tests,
        kit.tau,
        format!("linearized-outer[beta={beta},{}]", measured.provenance),
    ))
}

/// Overlap fraction of a pixel with a shape, by deterministic subsampling.
pub fn pixel_overlap(grid: &PixelGrid, pixel: usize, shape: &crate::mesh::Shape) -> f64 {
    let (lo, hi) = grid.pixel_rect(pixel);
    let samples = 24;
    let mut hits = 0usize;
    for i in 0..samples {
        for j in 0..samples {
            let x = lo[0] + (i as f64 + 0.5) / samples as f64 * (hi[0] - lo[0]);
            let y = lo[1] + (j as f64 + 0.5) / samples as f64 * (hi[1] - lo[1]);
            if shape.contains([x, y]) {
                hits += 1;
            }
        }
    }
    hits as f64 / (samples * samples) as f64
}
