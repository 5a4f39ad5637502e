//! Coverage and precision metrics plus SVG figure export.
//!
//! Both metrics judge generated samples against the circular masks the toy
//! data was drawn from. Precision asks how many samples land inside any mask;
//! coverage bins the plane into a grid and asks how many of the bins whose
//! centers lie inside a mask contain at least one sample. High precision with
//! low coverage is the signature of mode collapse.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::ToySpec;
use crate::error::{Error, Result};
use crate::partition::Tessellation;

/// Grid cells per axis used for coverage unless configured otherwise.
pub const DEFAULT_GRID_BINS: usize = 50;
/// Pixels per axis when rasterizing the partition for figures.
const RASTER_BINS: usize = 160;
/// Fill colors cycled over cells in figures.
const PALETTE: [&str; 10] = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#17becf",
    "#bcbd22", "#8c564b",
];

/// The union of equal-radius disks the real data lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    centers: Vec<[f64; 2]>,
    radius: f64,
}

impl MaskSet {
    pub fn new(centers: Vec<[f64; 2]>, radius: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("mask set must have at least one center".into()));
        }
        if centers.iter().flatten().any(|c| !c.is_finite() || c.abs() > 1.0) {
            return Err(Error::InvalidArgument("mask centers must lie within [-1, 1]^2".into()));
        }
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mask radius must be positive, got {radius}"
            )));
        }
        Ok(Self { centers, radius })
    }

    /// The masks a toy dataset was sampled from.
    pub fn from_spec(spec: &ToySpec) -> Self {
        Self { centers: spec.centers.clone(), radius: spec.radius }
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Whether a point lies inside (or on) any disk.
    pub fn contains(&self, point: &[f64]) -> bool {
        self.centers.iter().any(|c| {
            let dx = point[0] - c[0];
            let dy = point[1] - c[1];
            (dx * dx + dy * dy).sqrt() <= self.radius
        })
    }
}

/// A square grid over `[lo, hi]^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    bins: usize,
    lo: f64,
    hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { bins: DEFAULT_GRID_BINS, lo: -1.0, hi: 1.0 }
    }
}

impl GridSpec {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("grid needs at least one bin per axis".into()));
        }
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!("invalid grid bounds [{lo}, {hi}]")));
        }
        Ok(Self { bins, lo, hi })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Bin indices of a point, or `None` outside the bounds. A coordinate
    /// exactly on the upper bound belongs to the last bin.
    pub fn bin_of(&self, point: &[f64]) -> Option<(usize, usize)> {
        let mut idx = [0usize; 2];
        for (d, v) in point.iter().take(2).enumerate() {
            if !(self.lo..=self.hi).contains(v) {
                return None;
            }
            let i = ((v - self.lo) / self.width()) as usize;
            idx[d] = i.min(self.bins - 1);
        }
        Some((idx[0], idx[1]))
    }

    /// Center of bin `(i, j)`.
    pub fn bin_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.lo + (i as f64 + 0.5) * self.width(),
            self.lo + (j as f64 + 0.5) * self.width(),
        ]
    }
}

fn require_2d(samples: &[Vec<f64>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    if samples.iter().any(|s| s.len() != 2) {
        return Err(Error::ShapeMismatch("metrics are defined on 2-dimensional samples".into()));
    }
    Ok(())
}

/// Fraction of in-mask grid bins that contain at least one sample. A bin is
/// in-mask when its center lies inside a mask; samples outside the grid
/// bounds are ignored.
pub fn coverage(samples: &[Vec<f64>], masks: &MaskSet, grid: &GridSpec) -> Result<f64> {
    require_2d(samples)?;
    let mut occupied = vec![false; grid.bins * grid.bins];
    for s in samples {
        if let Some((i, j)) = grid.bin_of(s) {
            occupied[j * grid.bins + i] = true;
        }
    }
    let mut in_mask = 0usize;
    let mut hit = 0usize;
    for j in 0..grid.bins {
        for i in 0..grid.bins {
            if masks.contains(&grid.bin_center(i, j)) {
                in_mask += 1;
                if occupied[j * grid.bins + i] {
                    hit += 1;
                }
            }
        }
    }
    if in_mask == 0 {
        return Err(Error::InvalidArgument(
            "no grid bin center lies inside the masks; refine the grid".into(),
        ));
    }
    Ok(hit as f64 / in_mask as f64)
}

/// Fraction of samples lying inside some mask.
pub fn precision(samples: &[Vec<f64>], masks: &MaskSet) -> Result<f64> {
    require_2d(samples)?;
    let inside = samples.iter().filter(|s| masks.contains(s)).count();
    Ok(inside as f64 / samples.len() as f64)
}

fn cell_color(j: usize) -> &'static str {
    PALETTE[j % PALETTE.len()]
}

/// Render real data, generated samples, and the partition into an SVG file.
///
/// The partition is rasterized: each pixel is tinted by the cell owning its
/// center, and every edge where the owner changes gets a thin boundary tick,
/// so the cell borders appear exactly where the assignment flips. Generated
/// samples are colored by their source cell (as produced by
/// [`Ensemble::sample_with_cells`](crate::ensemble::Ensemble::sample_with_cells)),
/// real data is gray, prototypes are black crosses, and masks are outlined
/// circles. All geometry is written in data coordinates; output is
/// deterministic for fixed inputs.
pub fn export_figure(
    real: &[Vec<f64>],
    generated: &[(usize, Vec<f64>)],
    tessellation: &Tessellation,
    masks: Option<&MaskSet>,
    path: &Path,
) -> Result<()> {
    let svg = render_figure(real, generated, tessellation, masks)?;
    std::fs::write(path, svg).map_err(Error::from)
}

/// [`export_figure`] without the file write; returns the SVG text.
pub fn render_figure(
    real: &[Vec<f64>],
    generated: &[(usize, Vec<f64>)],
    tessellation: &Tessellation,
    masks: Option<&MaskSet>,
) -> Result<String> {
    if tessellation.dim() != 2 {
        return Err(Error::ShapeMismatch("figures are defined on 2-dimensional data".into()));
    }
    if real.iter().any(|p| p.len() != 2) || generated.iter().any(|(_, p)| p.len() != 2) {
        return Err(Error::ShapeMismatch("figures are defined on 2-dimensional points".into()));
    }
    if generated.iter().any(|(j, _)| *j >= tessellation.k()) {
        return Err(Error::InvalidArgument("sample cell index out of range".into()));
    }

    // Pixel ownership over [-1, 1]^2; the raster drives both tints and
    // boundaries.
    let n = RASTER_BINS;
    let w = 2.0 / n as f64;
    let mut owner = vec![0usize; n * n];
    for row in 0..n {
        for col in 0..n {
            let x = -1.0 + (col as f64 + 0.5) * w;
            let y = -1.0 + (row as f64 + 0.5) * w;
            owner[row * n + col] = tessellation.voronoi_assign(&[x, y])?;
        }
    }

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"840\" height=\"840\" \
         viewBox=\"0 0 840 840\">\n",
    );
    svg.push_str("<rect width=\"840\" height=\"840\" fill=\"white\"/>\n");
    // Data coordinates throughout: x right, y up, one unit = 400 px.
    svg.push_str("<g transform=\"translate(420,420) scale(400,-400)\">\n");

    // Cell tints, one rect per run of equal ownership within a pixel row.
    for row in 0..n {
        let y = -1.0 + row as f64 * w;
        let mut col = 0;
        while col < n {
            let cell = owner[row * n + col];
            let start = col;
            while col < n && owner[row * n + col] == cell {
                col += 1;
            }
            let _ = writeln!(
                svg,
                "<rect class=\"cell cell-{cell}\" x=\"{:.4}\" y=\"{y:.4}\" \
                 width=\"{:.4}\" height=\"{w:.4}\" fill=\"{}\" fill-opacity=\"0.13\"/>",
                -1.0 + start as f64 * w,
                (col - start) as f64 * w,
                cell_color(cell),
            );
        }
    }

    // Boundary ticks on every pixel edge where ownership changes.
    let tick = 0.2 * w;
    for row in 0..n {
        for col in 0..n {
            let cell = owner[row * n + col];
            if col + 1 < n && owner[row * n + col + 1] != cell {
                let _ = writeln!(
                    svg,
                    "<rect class=\"boundary\" x=\"{:.4}\" y=\"{:.4}\" \
                     width=\"{tick:.4}\" height=\"{w:.4}\" fill=\"#444444\"/>",
                    -1.0 + (col + 1) as f64 * w - tick / 2.0,
                    -1.0 + row as f64 * w,
                );
            }
            if row + 1 < n && owner[(row + 1) * n + col] != cell {
                let _ = writeln!(
                    svg,
                    "<rect class=\"boundary\" x=\"{:.4}\" y=\"{:.4}\" \
                     width=\"{w:.4}\" height=\"{tick:.4}\" fill=\"#444444\"/>",
                    -1.0 + col as f64 * w,
                    -1.0 + (row + 1) as f64 * w - tick / 2.0,
                );
            }
        }
    }

    if let Some(masks) = masks {
        for c in masks.centers() {
            let _ = writeln!(
                svg,
                "<circle class=\"mask\" cx=\"{:.4}\" cy=\"{:.4}\" r=\"{:.4}\" \
                 fill=\"none\" stroke=\"#666666\" stroke-width=\"0.006\"/>",
                c[0],
                c[1],
                masks.radius(),
            );
        }
    }

    for p in real {
        let _ = writeln!(
            svg,
            "<circle class=\"real\" cx=\"{:.4}\" cy=\"{:.4}\" r=\"0.008\" \
             fill=\"#999999\" fill-opacity=\"0.65\"/>",
            p[0], p[1],
        );
    }
    for (j, p) in generated {
        let _ = writeln!(
            svg,
            "<circle class=\"generated generated-{j}\" cx=\"{:.4}\" cy=\"{:.4}\" r=\"0.008\" \
             fill=\"{}\"/>",
            p[0],
            p[1],
            cell_color(*j),
        );
    }
    for (j, y) in tessellation.prototypes().iter().enumerate() {
        let _ = writeln!(
            svg,
            "<path class=\"prototype prototype-{j}\" d=\"M {:.4} {:.4} L {:.4} {:.4} \
             M {:.4} {:.4} L {:.4} {:.4}\" stroke=\"black\" stroke-width=\"0.012\" fill=\"none\"/>",
            y[0] - 0.035,
            y[1],
            y[0] + 0.035,
            y[1],
            y[0],
            y[1] - 0.035,
            y[0],
            y[1] + 0.035,
        );
    }

    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::transport::CostFunction;
    use rand::RngExt;

    fn td1_masks() -> MaskSet {
        MaskSet::new(vec![[-0.5, 0.0], [0.5, 0.0]], 0.25).unwrap()
    }

    fn in_mask_bin_centers(masks: &MaskSet, grid: &GridSpec) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for j in 0..grid.bins() {
            for i in 0..grid.bins() {
                let c = grid.bin_center(i, j);
                if masks.contains(&c) {
                    out.push(vec![c[0], c[1]]);
                }
            }
        }
        out
    }

    #[test]
    fn hitting_every_in_mask_bin_center_is_full_coverage() {
        let masks = td1_masks();
        let grid = GridSpec::default();
        let samples = in_mask_bin_centers(&masks, &grid);
        assert!(!samples.is_empty());
        assert_eq!(coverage(&samples, &masks, &grid).unwrap(), 1.0);
    }

    #[test]
    fn a_single_point_covers_exactly_one_bin() {
        let masks = td1_masks();
        let grid = GridSpec::default();
        let total = in_mask_bin_centers(&masks, &grid).len();
        let samples = vec![vec![-0.5, 0.0]; 40];
        assert_eq!(
            coverage(&samples, &masks, &grid).unwrap(),
            1.0 / total as f64
        );
    }

    #[test]
    fn covering_one_of_two_equal_disks_scores_its_bin_share() {
        let masks = td1_masks();
        let grid = GridSpec::default();
        let left_disk = MaskSet::new(vec![[-0.5, 0.0]], 0.25).unwrap();
        let samples = in_mask_bin_centers(&left_disk, &grid);
        let share =
            samples.len() as f64 / in_mask_bin_centers(&masks, &grid).len() as f64;
        let got = coverage(&samples, &masks, &grid).unwrap();
        assert_eq!(got, share);
        assert!((got - 0.5).abs() < 0.05, "one disk of two should be near half, got {got}");
    }

    #[test]
    fn origin_misses_both_toy_disks() {
        let samples = vec![vec![0.0, 0.0]; 10];
        assert_eq!(precision(&samples, &td1_masks()).unwrap(), 0.0);
    }

    #[test]
    fn precision_counts_the_inside_fraction() {
        let samples = vec![
            vec![-0.5, 0.0],
            vec![0.5, 0.1],
            vec![0.0, 0.0],
            vec![0.9, 0.9],
        ];
        assert_eq!(precision(&samples, &td1_masks()).unwrap(), 0.5);
    }

    #[test]
    fn metrics_ignore_sample_order() {
        let mut rng = rng_from(5, &[0xE7A1]);
        let samples: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let masks = td1_masks();
        let grid = GridSpec::default();
        assert_eq!(
            coverage(&samples, &masks, &grid).unwrap(),
            coverage(&reversed, &masks, &grid).unwrap()
        );
        assert_eq!(precision(&samples, &masks).unwrap(), precision(&reversed, &masks).unwrap());
    }

    #[test]
    fn adding_an_inside_point_cannot_dilute_precision_too_far() {
        let mut rng = rng_from(9, &[0xE7A2]);
        let masks = td1_masks();
        let samples: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let p = precision(&samples, &masks).unwrap();
        let mut grown = samples.clone();
        grown.push(vec![-0.5, 0.0]);
        let q = precision(&grown, &masks).unwrap();
        assert!(q >= p * 100.0 / 101.0 - 1e-12, "{q} < scaled {p}");
        assert!(q >= p, "an inside point can only help: {p} -> {q}");
    }

    #[test]
    fn coverage_grows_monotonically_with_samples() {
        let mut rng = rng_from(3, &[0xE7A3]);
        let masks = td1_masks();
        let grid = GridSpec::default();
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let c = if rng.random_range(0..2) == 0 { -0.5 } else { 0.5 };
                vec![c + rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)]
            })
            .collect();
        let mut last = 0.0;
        for take in [1, 10, 50, 120, 200] {
            let cov = coverage(&samples[..take], &masks, &grid).unwrap();
            assert!(cov >= last, "coverage dropped from {last} to {cov} at {take} samples");
            last = cov;
        }
    }

    #[test]
    fn out_of_bounds_samples_are_ignored() {
        let masks = td1_masks();
        let grid = GridSpec::default();
        let inside = vec![vec![-0.5, 0.0]];
        let mut with_strays = inside.clone();
        with_strays.push(vec![5.0, 5.0]);
        with_strays.push(vec![-3.0, 0.0]);
        assert_eq!(
            coverage(&inside, &masks, &grid).unwrap(),
            coverage(&with_strays, &masks, &grid).unwrap()
        );
    }

    #[test]
    fn upper_bound_sample_lands_in_the_last_bin() {
        let grid = GridSpec::new(2, -1.0, 1.0).unwrap();
        // Only bin (1, 1), centered at (0.5, 0.5), is in-mask.
        let masks = MaskSet::new(vec![[0.5, 0.5]], 0.3).unwrap();
        let samples = vec![vec![1.0, 1.0]];
        assert_eq!(coverage(&samples, &masks, &grid).unwrap(), 1.0);
    }

    #[test]
    fn masks_that_dodge_every_bin_center_are_an_error() {
        // Bin centers of the 2x2 grid sit at (±0.5, ±0.5); a tiny disk at the
        // origin contains none of them.
        let grid = GridSpec::new(2, -1.0, 1.0).unwrap();
        let masks = MaskSet::new(vec![[0.0, 0.0]], 0.05).unwrap();
        assert!(coverage(&[vec![0.0, 0.0]], &masks, &grid).is_err());
    }

    #[test]
    fn empty_samples_are_rejected() {
        let masks = td1_masks();
        assert!(precision(&[], &masks).is_err());
        assert!(coverage(&[], &masks, &GridSpec::default()).is_err());
    }

    fn boundary_rects(svg: &str) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::new();
        for line in svg.lines() {
            if !line.contains("class=\"boundary\"") {
                continue;
            }
            let attr = |name: &str| -> f64 {
                let pat = format!("{name}=\"");
                let start = line.find(&pat).unwrap() + pat.len();
                let rest = &line[start..];
                rest[..rest.find('"').unwrap()].parse().unwrap()
            };
            out.push((attr("x"), attr("y"), attr("width"), attr("height")));
        }
        out
    }

    #[test]
    fn figure_parses_as_well_formed_xml() {
        let tess = Tessellation::voronoi(
            vec![vec![-0.5, 0.0], vec![0.5, 0.0]],
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        let real = vec![vec![-0.5, 0.1], vec![0.4, -0.1]];
        let generated = vec![(0usize, vec![-0.45, 0.0]), (1usize, vec![0.55, 0.05])];
        let svg =
            render_figure(&real, &generated, &tess, Some(&td1_masks())).unwrap();
        let mut reader = quick_xml::Reader::from_str(&svg);
        let mut depth = 0i64;
        loop {
            match reader.read_event().expect("well-formed XML") {
                quick_xml::events::Event::Start(_) => depth += 1,
                quick_xml::events::Event::End(_) => depth -= 1,
                quick_xml::events::Event::Eof => break,
                _ => {}
            }
        }
        assert_eq!(depth, 0);
        assert!(svg.contains("class=\"mask\""));
        assert!(svg.contains("class=\"real\""));
        assert!(svg.contains("class=\"generated generated-1\""));
        assert!(svg.contains("class=\"prototype prototype-0\""));
    }

    #[test]
    fn single_cell_figure_has_no_boundaries() {
        let tess = Tessellation::voronoi(
            vec![vec![0.0, 0.0]],
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        let svg = render_figure(&[], &[], &tess, None).unwrap();
        assert!(boundary_rects(&svg).is_empty());
    }

    #[test]
    fn mirrored_prototypes_draw_their_bisector() {
        let tess = Tessellation::voronoi(
            vec![vec![-0.5, 0.0], vec![0.5, 0.0]],
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        let svg = render_figure(&[], &[], &tess, None).unwrap();
        let rects = boundary_rects(&svg);
        assert!(!rects.is_empty());
        let pixel = 2.0 / RASTER_BINS as f64;
        for (x, _, w, _) in rects {
            let mid = x + w / 2.0;
            assert!(
                mid.abs() <= pixel,
                "boundary tick centered at x = {mid}, not on the bisector"
            );
        }
    }

    #[test]
    fn figure_output_is_deterministic() {
        let tess = Tessellation::voronoi(
            vec![vec![-0.5, -0.2], vec![0.5, 0.3], vec![0.0, 0.6]],
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        let generated = vec![(2usize, vec![0.0, 0.55])];
        let a = render_figure(&[], &generated, &tess, Some(&td1_masks())).unwrap();
        let b = render_figure(&[], &generated, &tess, Some(&td1_masks())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_2d_inputs_are_rejected() {
        let tess = Tessellation::voronoi(
            vec![vec![0.0, 0.0, 0.0]],
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        assert!(render_figure(&[], &[], &tess, None).is_err());
        let tess2 =
            Tessellation::voronoi(vec![vec![0.0, 0.0]], CostFunction::lp(2.0).unwrap())
                .unwrap();
        assert!(render_figure(&[vec![1.0]], &[], &tess2, None).is_err());
        assert!(render_figure(&[], &[(3, vec![0.0, 0.0])], &tess2, None).is_err());
    }
}
