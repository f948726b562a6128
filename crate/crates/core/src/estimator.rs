//! Coupling estimation by time-domain least squares over a `(J12, J23)` grid.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Ensemble, QuadratureSpec, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::TIME_TOL;
use crate::quantum::Axis;
use crate::spin::{ChainConfig, DensityMatrix};

/// Nearest-neighbour couplings `J/2π` in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingPair {
    pub j12: f64,
    pub j23: f64,
}

impl CouplingPair {
    pub const fn new(j12: f64, j23: f64) -> Self {
        CouplingPair { j12, j23 }
    }

    pub fn max_abs_diff(&self, other: &CouplingPair) -> f64 {
        (self.j12 - other.j12)
            .abs()
            .max((self.j23 - other.j23).abs())
    }
}

impl fmt::Display for CouplingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} Hz, {} Hz)", self.j12, self.j23)
    }
}

/// Inclusive, evenly spaced grid over both couplings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub j12_min: f64,
    pub j12_max: f64,
    pub j12_step: f64,
    pub j23_min: f64,
    pub j23_max: f64,
    pub j23_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            j12_min: 40.0,
            j12_max: 70.0,
            j12_step: 0.5,
            j23_min: 20.0,
            j23_max: 50.0,
            j23_step: 0.5,
        }
    }
}

fn axis_points(name: &str, min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if ![min, max, step].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("{name} grid bounds must be finite")));
    }
    if !(min < max) {
        return Err(Error::invalid(format!(
            "{name} grid needs min < max, got {min}..{max}"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "{name} grid step must be > 0, got {step}"
        )));
    }
    let span = max - min;
    let n = (span / step).round();
    if (n * step - span).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{name} grid step {step} does not divide the span {span}"
        )));
    }
    // Snap to 1e-9 Hz so that e.g. 40 + 138 * 0.1 is exactly 53.8.
    Ok((0..=n as usize)
        .map(|i| ((min + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

impl GridSpec {
    pub fn uniform(j12: (f64, f64), j23: (f64, f64), step: f64) -> Self {
        GridSpec {
            j12_min: j12.0,
            j12_max: j12.1,
            j12_step: step,
            j23_min: j23.0,
            j23_max: j23.1,
            j23_step: step,
        }
    }

    pub fn j12_values(&self) -> Result<Vec<f64>> {
        axis_points("J12", self.j12_min, self.j12_max, self.j12_step)
    }

    pub fn j23_values(&self) -> Result<Vec<f64>> {
        axis_points("J23", self.j23_min, self.j23_max, self.j23_step)
    }

    pub fn validate(&self) -> Result<()> {
        self.j12_values()?;
        self.j23_values()?;
        Ok(())
    }

    pub fn contains(&self, p: &CouplingPair) -> bool {
        (self.j12_min..=self.j12_max).contains(&p.j12)
            && (self.j23_min..=self.j23_max).contains(&p.j23)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// `j12min:j12max:step,j23min:j23max:step`
    fn from_str(s: &str) -> Result<Self> {
        let parse_axis = |part: &str| -> Result<[f64; 3]> {
            let vals: Vec<f64> = part
                .split(':')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad grid number '{v}'")))
                })
                .collect::<Result<_>>()?;
            <[f64; 3]>::try_from(vals)
                .map_err(|_| Error::invalid(format!("grid axis '{part}' must be min:max:step")))
        };
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::invalid(format!(
                "grid '{s}' must be j12min:j12max:step,j23min:j23max:step"
            )));
        }
        let [a, b, c] = parse_axis(parts[0])?;
        let [d, e, f] = parse_axis(parts[1])?;
        let grid = GridSpec {
            j12_min: a,
            j12_max: b,
            j12_step: c,
            j23_min: d,
            j23_max: e,
            j23_step: f,
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// Samples with `0 <= t <= t_w` enter the fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_w: f64,
}

impl FitWindow {
    pub fn new(t_w: f64) -> Result<Self> {
        if !(t_w > 0.0) || !t_w.is_finite() {
            return Err(Error::invalid(format!("fit window must be > 0, got {t_w}")));
        }
        Ok(FitWindow { t_w })
    }

    fn check_against(&self, data: &Trajectory) -> Result<()> {
        match data.times.last() {
            Some(&last) if self.t_w <= last + TIME_TOL => Ok(()),
            Some(&last) => Err(Error::invalid(format!(
                "fit window {} s exceeds the last sample at {last} s",
                self.t_w
            ))),
            None => Err(Error::invalid("trajectory is empty")),
        }
    }
}

/// Parse `"y"` or `"y,z"` into a sorted, duplicate-free component list.
pub fn parse_components(s: &str) -> Result<Vec<Axis>> {
    let mut out: Vec<Axis> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::invalid("no components given"));
    }
    Ok(out)
}

pub fn components_label(components: &[Axis]) -> String {
    components
        .iter()
        .map(|a| a.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

fn window_len(model: &Trajectory, data: &Trajectory, window: FitWindow) -> Result<usize> {
    if model.len() != data.len()
        || model
            .times
            .iter()
            .zip(&data.times)
            .any(|(a, b)| (a - b).abs() > TIME_TOL)
    {
        return Err(Error::invalid("model and data sample times differ"));
    }
    window.check_against(data)?;
    let n = data
        .times
        .iter()
        .take_while(|&&t| t <= window.t_w + TIME_TOL)
        .count();
    if n == 0 {
        return Err(Error::invalid(format!(
            "no samples inside the window t <= {}",
            window.t_w
        )));
    }
    Ok(n)
}

/// `D_k = sqrt(Σ_j (model_k(t_j) - data_k(t_j))²)` over `t_j <= t_w`.
pub fn distance(model: &Trajectory, data: &Trajectory, k: Axis, window: FitWindow) -> Result<f64> {
    let n = window_len(model, data, window)?;
    Ok(sum_sq(&model.component(k)[..n], &data.component(k)[..n], 1.0).sqrt())
}

/// Quadrature sum of `D_k` over several components.
pub fn distance_multi(
    model: &Trajectory,
    data: &Trajectory,
    components: &[Axis],
    window: FitWindow,
) -> Result<f64> {
    let n = window_len(model, data, window)?;
    Ok(components
        .iter()
        .map(|&k| sum_sq(&model.component(k)[..n], &data.component(k)[..n], 1.0))
        .sum::<f64>()
        .sqrt())
}

fn sum_sq(model: &[f64], data: &[f64], scale: f64) -> f64 {
    model
        .iter()
        .zip(data)
        .map(|(m, d)| (scale * m - d).powi(2))
        .sum()
}

/// Least-squares amplitude `a` minimizing `Σ (a m - d)²`.
fn amplitude(model: &Trajectory, data: &Trajectory, components: &[Axis], n: usize) -> f64 {
    let (mut md, mut mm) = (0.0, 0.0);
    for &k in components {
        for (m, d) in model.component(k)[..n].iter().zip(&data.component(k)[..n]) {
            md += m * d;
            mm += m * m;
        }
    }
    if mm > 0.0 {
        md / mm
    } else {
        1.0
    }
}

/// Simulation settings shared by every model evaluation of a fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub quadrature: QuadratureSpec,
    /// Fit an overall amplitude of the model onto the data before measuring
    /// the distance.
    pub amplitude_fit: bool,
    /// Evaluate grid points on the rayon pool.
    pub parallel: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            quadrature: QuadratureSpec::default(),
            amplitude_fit: false,
            parallel: true,
        }
    }
}

/// Everything fixed while the couplings vary: the data (already cut to the
/// window), the chain with the scenario's fields, and the initial state.
pub struct FitProblem {
    data: Trajectory,
    config: ChainConfig,
    rho0: DensityMatrix,
    ensemble: Ensemble,
    components: Vec<Axis>,
    window: FitWindow,
    options: SimOptions,
}

impl FitProblem {
    pub fn new(
        data: &Trajectory,
        config: &ChainConfig,
        rho0: &DensityMatrix,
        components: &[Axis],
        window: FitWindow,
        options: SimOptions,
    ) -> Result<Self> {
        config.validate()?;
        window.check_against(data)?;
        let mut components = components.to_vec();
        components.sort();
        components.dedup();
        if components.is_empty() {
            return Err(Error::invalid("at least one component is required"));
        }
        let data = data.truncated(window.t_w);
        if data.is_empty() {
            return Err(Error::invalid("no samples inside the fit window"));
        }
        Ok(FitProblem {
            ensemble: Ensemble::new(options.quadrature, config.sigma_rel)?,
            data,
            config: config.clone(),
            rho0: rho0.clone(),
            components,
            window,
            options,
        })
    }

    pub fn components(&self) -> &[Axis] {
        &self.components
    }

    pub fn window(&self) -> FitWindow {
        self.window
    }

    pub fn with_window(&self, window: FitWindow, full_data: &Trajectory) -> Result<Self> {
        FitProblem::new(
            full_data,
            &self.config,
            &self.rho0,
            &self.components,
            window,
            self.options,
        )
    }

    /// Model trajectory on the in-window sample times.
    pub fn model(&self, couplings: CouplingPair) -> Result<Trajectory> {
        self.ensemble
            .simulate(&self.config, couplings, &self.rho0, &self.data.times)
    }

    /// Distance between data and the model at `couplings`.
    pub fn objective(&self, couplings: CouplingPair) -> Result<f64> {
        let model = self.model(couplings)?;
        let n = self.data.len();
        let scale = if self.options.amplitude_fit {
            amplitude(&model, &self.data, &self.components, n)
        } else {
            1.0
        };
        let total: f64 = self
            .components
            .iter()
            .map(|&k| sum_sq(model.component(k), self.data.component(k), scale))
            .sum();
        let d = total.sqrt();
        if !d.is_finite() {
            return Err(Error::numerical(format!(
                "distance at {couplings} is not finite"
            )));
        }
        Ok(d)
    }
}

/// `D` over every grid point, stored row-major (J12 outer, J23 inner).
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSurface {
    pub grid: GridSpec,
    pub components: Vec<Axis>,
    pub j12_values: Vec<f64>,
    pub j23_values: Vec<f64>,
    pub values: Vec<f64>,
}

impl DistanceSurface {
    pub fn new(grid: GridSpec, components: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let j12_values = grid.j12_values()?;
        let j23_values = grid.j23_values()?;
        if values.len() != j12_values.len() * j23_values.len() {
            return Err(Error::DimensionMismatch {
                expected: j12_values.len() * j23_values.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::numerical(
                "distance surface holds negative or non-finite values",
            ));
        }
        Ok(DistanceSurface {
            grid,
            components,
            j12_values,
            j23_values,
            values,
        })
    }

    pub fn value(&self, i12: usize, i23: usize) -> f64 {
        self.values[i12 * self.j23_values.len() + i23]
    }

    /// Lowest value; ties go to the lowest J12, then the lowest J23.
    pub fn argmin(&self) -> (CouplingPair, f64) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        let n23 = self.j23_values.len();
        (
            CouplingPair::new(self.j12_values[best / n23], self.j23_values[best % n23]),
            self.values[best],
        )
    }

    /// CSV with header `j12_hz,j23_hz,distance`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["j12_hz", "j23_hz", "distance"])?;
        for (i, &j12) in self.j12_values.iter().enumerate() {
            for (j, &j23) in self.j23_values.iter().enumerate() {
                w.write_record([
                    format!("{j12}"),
                    format!("{j23}"),
                    format!("{:.16e}", self.value(i, j)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::workbench::io::write_atomic(path.as_ref(), &buf)
    }
}

/// Continuous optimum found below grid resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    pub couplings: CouplingPair,
    pub distance: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateResult {
    pub argmin: CouplingPair,
    pub min_distance: f64,
    pub window: FitWindow,
    pub components: Vec<Axis>,
    pub refined: Option<Refinement>,
}

#[derive(Serialize, Deserialize)]
struct EstimateJson {
    argmin_j12_hz: f64,
    argmin_j23_hz: f64,
    min_distance: f64,
    t_w_s: f64,
    components: Vec<Axis>,
    refined: Option<RefinedJson>,
}

#[derive(Serialize, Deserialize)]
struct RefinedJson {
    j12_hz: f64,
    j23_hz: f64,
    distance: f64,
    evaluations: usize,
}

impl EstimateResult {
    fn to_json_repr(&self) -> EstimateJson {
        EstimateJson {
            argmin_j12_hz: self.argmin.j12,
            argmin_j23_hz: self.argmin.j23,
            min_distance: self.min_distance,
            t_w_s: self.window.t_w,
            components: self.components.clone(),
            refined: self.refined.map(|r| RefinedJson {
                j12_hz: r.couplings.j12,
                j23_hz: r.couplings.j23,
                distance: r.distance,
                evaluations: r.evaluations,
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_repr()).expect("result always serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: EstimateJson = serde_json::from_str(s)?;
        Ok(EstimateResult {
            argmin: CouplingPair::new(j.argmin_j12_hz, j.argmin_j23_hz),
            min_distance: j.min_distance,
            window: FitWindow::new(j.t_w_s)?,
            components: j.components,
            refined: j.refined.map(|r| Refinement {
                couplings: CouplingPair::new(r.j12_hz, r.j23_hz),
                distance: r.distance,
                evaluations: r.evaluations,
            }),
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::workbench::io::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }
}

/// Evaluate the distance on every grid point and pick the minimum.
pub fn grid_search(
    problem: &FitProblem,
    grid: &GridSpec,
) -> Result<(DistanceSurface, EstimateResult)> {
    let j12 = grid.j12_values()?;
    let j23 = grid.j23_values()?;
    let points: Vec<CouplingPair> = j12
        .iter()
        .flat_map(|&a| j23.iter().map(move |&b| CouplingPair::new(a, b)))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    // Indexed collection keeps the surface independent of scheduling.
    let values: Vec<f64> = if problem.options.parallel {
        points
            .par_iter()
            .map(|&p| problem.objective(p))
            .collect::<Result<_>>()?
    } else {
        points
            .iter()
            .map(|&p| problem.objective(p))
            .collect::<Result<_>>()?
    };
    let surface = DistanceSurface::new(*grid, problem.components.clone(), values)?;
    let (argmin, min_distance) = surface.argmin();
    Ok((
        surface,
        EstimateResult {
            argmin,
            min_distance,
            window: problem.window,
            components: problem.components.clone(),
            refined: None,
        },
    ))
}

/// Stopping rule for [`refine_local`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    /// Edge of the starting simplex (Hz).
    pub initial_step: f64,
    /// Stop once every vertex is within this distance of every other (Hz).
    pub diameter_tol: f64,
    pub max_evaluations: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            initial_step: 0.5,
            diameter_tol: 0.01,
            max_evaluations: 500,
        }
    }
}

/// Nelder–Mead polish of the distance around `start`. Never returns a point
/// worse than `start`.
pub fn refine_local(
    problem: &FitProblem,
    start: CouplingPair,
    options: RefineOptions,
) -> Result<Refinement> {
    let evaluations = std::cell::Cell::new(0usize);
    let f = |x: [f64; 2]| -> Result<f64> {
        evaluations.set(evaluations.get() + 1);
        problem.objective(CouplingPair::new(x[0], x[1]))
    };
    let x0 = [start.j12, start.j23];
    let f0 = f(x0)?;
    let h = options.initial_step;
    let mut simplex = vec![(x0, f0)];
    for d in 0..2 {
        let mut x = x0;
        x[d] += h;
        simplex.push((x, f(x)?));
    }

    let lerp =
        |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let diameter = |s: &[([f64; 2], f64)]| {
        let mut d = 0.0f64;
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                d = d.max(
                    ((s[i].0[0] - s[j].0[0]).powi(2) + (s[i].0[1] - s[j].0[1]).powi(2)).sqrt(),
                );
            }
        }
        d
    };

    while diameter(&simplex) >= options.diameter_tol
        && evaluations.get() + 2 <= options.max_evaluations
    {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, second, worst) = (simplex[0], simplex[1], simplex[2]);
        let centroid = lerp(best.0, second.0, 0.5);

        let reflected = lerp(centroid, worst.0, -1.0);
        let fr = f(reflected)?;
        if fr < best.1 {
            let expanded = lerp(centroid, worst.0, -2.0);
            let fe = f(expanded)?;
            simplex[2] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < second.1 {
            simplex[2] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let c = lerp(centroid, reflected, 0.5);
            (c, f(c)?)
        } else {
            let c = lerp(centroid, worst.0, 0.5);
            (c, f(c)?)
        };
        if fc < worst.1.min(fr) {
            simplex[2] = (contracted, fc);
            continue;
        }
        // shrink towards the best vertex
        for v in simplex.iter_mut().skip(1) {
            let x = lerp(best.0, v.0, 0.5);
            *v = (x, f(x)?);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex[0];
    let evaluations = evaluations.get();
    Ok(if fx <= f0 {
        Refinement {
            couplings: CouplingPair::new(x[0], x[1]),
            distance: fx,
            evaluations,
        }
    } else {
        Refinement {
            couplings: start,
            distance: f0,
            evaluations,
        }
    })
}

/// Grid search followed by an optional local polish from the grid argmin.
pub fn estimate(
    problem: &FitProblem,
    grid: &GridSpec,
    refine: Option<RefineOptions>,
) -> Result<(DistanceSurface, EstimateResult)> {
    let (surface, mut result) = grid_search(problem, grid)?;
    if let Some(opts) = refine {
        result.refined = Some(refine_local(problem, result.argmin, opts)?);
    }
    Ok((surface, result))
}

/// `t_0 = 1/J12 + 1/J23` (couplings in Hz): the round trip of information
/// from spin 1 to spin 3 and back.
pub fn info_propagation_time(j12_hz: f64, j23_hz: f64) -> Result<f64> {
    if !(j12_hz > 0.0) || !(j23_hz > 0.0) {
        return Err(Error::invalid(format!(
            "couplings must be > 0, got J12={j12_hz}, J23={j23_hz}"
        )));
    }
    Ok(1.0 / j12_hz + 1.0 / j23_hz)
}

/// Extent along each axis of the grid points within `(1 + rel_threshold)`
/// of the minimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValleyWidth {
    pub j12_spread: f64,
    pub j23_spread: f64,
}

pub const DEFAULT_VALLEY_THRESHOLD: f64 = 0.05;

/// Spread above which a window-study row is flagged unreliable (Hz).
pub const UNRELIABLE_SPREAD_HZ: f64 = 5.0;

pub fn valley_width(surface: &DistanceSurface, rel_threshold: f64) -> ValleyWidth {
    let (_, min) = surface.argmin();
    let cutoff = (1.0 + rel_threshold) * min;
    let (mut lo12, mut hi12, mut lo23, mut hi23) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (i, &a) in surface.j12_values.iter().enumerate() {
        for (j, &b) in surface.j23_values.iter().enumerate() {
            if surface.value(i, j) <= cutoff {
                lo12 = lo12.min(a);
                hi12 = hi12.max(a);
                lo23 = lo23.min(b);
                hi23 = hi23.max(b);
            }
        }
    }
    ValleyWidth {
        j12_spread: hi12 - lo12,
        j23_spread: hi23 - lo23,
    }
}

/// One line of a window study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub components: Vec<Axis>,
    pub t_w_s: f64,
    pub j12_hz: f64,
    pub j23_hz: f64,
    pub min_distance: f64,
    pub j12_spread_hz: f64,
    pub j23_spread_hz: f64,
    pub unreliable: bool,
}

/// Estimates per fitting window and component set, next to the known values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStudy {
    pub scenario: String,
    pub known_j12_hz: f64,
    pub known_j23_hz: f64,
    pub rows: Vec<WindowRow>,
}

impl WindowStudy {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text table: known values, then one block per component set.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14}{:>8}{:>14}{:>14}\n",
            self.scenario, "t_w [s]", "J12/2pi [Hz]", "J23/2pi [Hz]"
        ));
        out.push_str(&format!(
            "{:<14}{:>8}{:>14}{:>14}\n",
            "Known values", "", self.known_j12_hz, self.known_j23_hz
        ));
        let mut last: Option<&[Axis]> = None;
        for row in &self.rows {
            let label = if last == Some(row.components.as_slice()) {
                String::new()
            } else {
                format!("D_{}", components_label(&row.components))
            };
            last = Some(&row.components);
            let flag = if row.unreliable { "  (unreliable)" } else { "" };
            out.push_str(&format!(
                "{:<14}{:>8}{:>14}{:>14}{}\n",
                label, row.t_w_s, row.j12_hz, row.j23_hz, flag
            ));
        }
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::workbench::io::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }
}

/// Grid estimate for each component set and each window, in that order.
#[allow(clippy::too_many_arguments)]
pub fn window_study(
    scenario: &str,
    data: &Trajectory,
    config: &ChainConfig,
    rho0: &DensityMatrix,
    component_sets: &[Vec<Axis>],
    grid: &GridSpec,
    windows: &[FitWindow],
    options: SimOptions,
) -> Result<WindowStudy> {
    if windows.is_empty() {
        return Err(Error::invalid("window study needs at least one window"));
    }
    if component_sets.is_empty() {
        return Err(Error::invalid(
            "window study needs at least one component set",
        ));
    }
    let mut rows = Vec::with_capacity(windows.len() * component_sets.len());
    for components in component_sets {
        for &window in windows {
            let problem = FitProblem::new(data, config, rho0, components, window, options)?;
            let (surface, result) = grid_search(&problem, grid)?;
            let width = valley_width(&surface, DEFAULT_VALLEY_THRESHOLD);
            rows.push(WindowRow {
                components: result.components.clone(),
                t_w_s: window.t_w,
                j12_hz: result.argmin.j12,
                j23_hz: result.argmin.j23,
                min_distance: result.min_distance,
                j12_spread_hz: width.j12_spread,
                j23_spread_hz: width.j23_spread,
                unreliable: width.j12_spread > UNRELIABLE_SPREAD_HZ
                    || width.j23_spread > UNRELIABLE_SPREAD_HZ,
            });
        }
    }
    Ok(WindowStudy {
        scenario: scenario.to_string(),
        known_j12_hz: config.couplings.j12,
        known_j23_hz: config.couplings.j23,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::sample_times;
    use crate::spin::thermal_state;
    use proptest::prelude::*;

    fn traj(times: &[f64], y: &[f64]) -> Trajectory {
        let z = vec![0.0; times.len()];
        Trajectory::new(times.to_vec(), z.clone(), y.to_vec(), z).unwrap()
    }

    #[test]
    fn distance_examples() {
        let t = [0.0, 0.002, 0.004];
        let a = traj(&t, &[0.1, 0.2, 0.3]);
        let w = FitWindow::new(0.004).unwrap();
        assert_eq!(distance(&a, &a, Axis::Y, w).unwrap(), 0.0);

        let b = traj(&t, &[0.1, 0.2 + 0.125, 0.3]);
        assert!((distance(&a, &b, Axis::Y, w).unwrap() - 0.125).abs() < 1e-15);

        let c = traj(&t, &[0.1 + 0.3, 0.2 + 0.4, 0.3]);
        assert!(
            (distance(&a, &c, Axis::Y, FitWindow::new(0.002).unwrap()).unwrap() - 0.5).abs()
                < 1e-15
        );
    }

    #[test]
    fn distance_window_is_inclusive() {
        let t = [0.0, 0.05, 0.1];
        let a = traj(&t, &[0.0, 0.0, 0.0]);
        let b = traj(&t, &[0.0, 1.0, 5.0]);
        assert_eq!(
            distance(&a, &b, Axis::Y, FitWindow::new(0.05).unwrap()).unwrap(),
            1.0
        );
    }

    #[test]
    fn distance_errors() {
        let a = traj(&[0.0, 0.002], &[0.0, 0.0]);
        let b = traj(&[0.0, 0.003], &[0.0, 0.0]);
        assert!(distance(&a, &b, Axis::Y, FitWindow::new(0.002).unwrap()).is_err());
        assert!(distance(&a, &a, Axis::Y, FitWindow::new(0.01).unwrap()).is_err());
        let late = traj(&[0.01, 0.02], &[0.0, 0.0]);
        assert!(distance(&late, &late, Axis::Y, FitWindow::new(0.005).unwrap()).is_err());
        assert!(FitWindow::new(0.0).is_err());
    }

    #[test]
    fn grid_parsing_and_points() {
        let g: GridSpec = "40:70:0.1,20:50:0.1".parse().unwrap();
        let j12 = g.j12_values().unwrap();
        assert_eq!(j12.len(), 301);
        assert_eq!(j12[138], 53.8);
        assert_eq!(g.j23_values().unwrap()[148], 34.8);
        assert!("40:70:0.7,20:50:0.5".parse::<GridSpec>().is_err());
        assert!("70:40:0.5,20:50:0.5".parse::<GridSpec>().is_err());
        assert!("40:70,20:50:0.5".parse::<GridSpec>().is_err());
        assert!("40:70:0.5".parse::<GridSpec>().is_err());
        assert!("40:70:0,20:50:0.5".parse::<GridSpec>().is_err());
    }

    #[test]
    fn t0_arithmetic() {
        assert!((info_propagation_time(53.8, 34.8).unwrap() - 0.04732).abs() < 1e-5);
        assert!((info_propagation_time(100.0, 100.0).unwrap() - 0.02).abs() < 1e-15);
        assert!((info_propagation_time(1e9, 53.8).unwrap() - 1.0 / 53.8).abs() < 1e-8);
        assert!(info_propagation_time(0.0, 10.0).is_err());
        assert!(info_propagation_time(10.0, -1.0).is_err());
    }

    #[test]
    fn constant_surface_spans_grid() {
        let grid = GridSpec::uniform((40.0, 42.0), (20.0, 23.0), 0.5);
        let n = 5 * 7;
        let s = DistanceSurface::new(grid, vec![Axis::Y], vec![0.3; n]).unwrap();
        let w = valley_width(&s, 0.05);
        assert_eq!(w.j12_spread, 2.0);
        assert_eq!(w.j23_spread, 3.0);
        // tie-break: lowest J12 then lowest J23
        assert_eq!(s.argmin().0, CouplingPair::new(40.0, 20.0));
    }

    #[test]
    fn surface_rejects_bad_values() {
        let grid = GridSpec::uniform((40.0, 41.0), (20.0, 21.0), 1.0);
        assert!(DistanceSurface::new(grid, vec![Axis::Y], vec![0.0; 3]).is_err());
        assert!(DistanceSurface::new(grid, vec![Axis::Y], vec![0.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn surface_csv_layout() {
        let grid = GridSpec::uniform((40.0, 41.0), (20.0, 21.0), 1.0);
        let s = DistanceSurface::new(grid, vec![Axis::Y], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j12_hz,j23_hz,distance");
        assert!(lines[1].starts_with("40,20,1.0"));
        assert!(lines[2].starts_with("40,21,2.0"));
        assert!(lines[3].starts_with("41,20,3.0"));
    }

    #[test]
    fn result_json_fields() {
        let r = EstimateResult {
            argmin: CouplingPair::new(53.8, 34.8),
            min_distance: 0.0,
            window: FitWindow::new(0.05).unwrap(),
            components: vec![Axis::Y],
            refined: None,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "argmin_j12_hz",
            "argmin_j23_hz",
            "min_distance",
            "t_w_s",
            "components",
            "refined",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["refined"].is_null());
        assert_eq!(v["components"][0], "y");
        assert_eq!(EstimateResult::from_json(&r.to_json()).unwrap(), r);
    }

    fn small_problem(
        data_at: CouplingPair,
        components: &[Axis],
        t_w: f64,
    ) -> (Trajectory, FitProblem) {
        let cfg = ChainConfig::default();
        let rho0 = thermal_state(1.0).unwrap();
        let times = sample_times(0.1, 0.002).unwrap();
        let data = Ensemble::new(QuadratureSpec { n_nodes: 7 }, cfg.sigma_rel)
            .unwrap()
            .simulate(&cfg, data_at, &rho0, &times)
            .unwrap();
        let opts = SimOptions {
            quadrature: QuadratureSpec { n_nodes: 7 },
            ..SimOptions::default()
        };
        let p = FitProblem::new(
            &data,
            &cfg,
            &rho0,
            components,
            FitWindow::new(t_w).unwrap(),
            opts,
        )
        .unwrap();
        (data, p)
    }

    #[test]
    fn self_consistent_grid_recovers_generator() {
        let truth = CouplingPair::new(53.8, 34.8);
        let (_, p) = small_problem(truth, &[Axis::Y], 0.05);
        let grid = GridSpec::uniform((52.0, 56.0), (33.0, 37.0), 0.2);
        let (surface, result) = grid_search(&p, &grid).unwrap();
        assert!(result.argmin.max_abs_diff(&truth) < 1e-9);
        assert!(result.min_distance < 1e-12);
        // unique zero
        let zeros = surface.values.iter().filter(|&&v| v < 1e-9).count();
        assert_eq!(zeros, 1);
        assert_eq!(surface.argmin().1, result.min_distance);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let truth = CouplingPair::new(53.8, 34.8);
        let (data, p) = small_problem(truth, &[Axis::Y, Axis::Z], 0.05);
        let cfg = ChainConfig::default();
        let rho0 = thermal_state(1.0).unwrap();
        let serial = FitProblem::new(
            &data,
            &cfg,
            &rho0,
            &[Axis::Y, Axis::Z],
            FitWindow::new(0.05).unwrap(),
            SimOptions {
                quadrature: QuadratureSpec { n_nodes: 7 },
                parallel: false,
                ..SimOptions::default()
            },
        )
        .unwrap();
        let grid = GridSpec::uniform((50.0, 56.0), (30.0, 36.0), 1.0);
        let a = grid_search(&p, &grid).unwrap();
        let b = grid_search(&serial, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_data_yields_model_norm() {
        let cfg = ChainConfig::default();
        let rho0 = thermal_state(1.0).unwrap();
        let times = sample_times(0.05, 0.002).unwrap();
        let zero =
            Trajectory::new(times.clone(), vec![0.0; 26], vec![0.0; 26], vec![0.0; 26]).unwrap();
        let opts = SimOptions {
            quadrature: QuadratureSpec { n_nodes: 5 },
            ..SimOptions::default()
        };
        let p = FitProblem::new(
            &zero,
            &cfg,
            &rho0,
            &[Axis::Z],
            FitWindow::new(0.05).unwrap(),
            opts,
        )
        .unwrap();
        let grid = GridSpec::uniform((50.0, 52.0), (30.0, 32.0), 1.0);
        let (_, r) = grid_search(&p, &grid).unwrap();
        let model = p.model(r.argmin).unwrap();
        let norm = model.mz.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r.min_distance - norm).abs() < 1e-14);
    }

    #[test]
    fn amplitude_fit_absorbs_scale() {
        let truth = CouplingPair::new(53.8, 34.8);
        let (data, _) = small_problem(truth, &[Axis::Y], 0.05);
        let cfg = ChainConfig::default();
        let rho0 = thermal_state(1.0).unwrap();
        let opts = SimOptions {
            quadrature: QuadratureSpec { n_nodes: 7 },
            amplitude_fit: true,
            ..SimOptions::default()
        };
        let p = FitProblem::new(
            &data.scaled(0.37),
            &cfg,
            &rho0,
            &[Axis::Y],
            FitWindow::new(0.05).unwrap(),
            opts,
        )
        .unwrap();
        assert!(p.objective(truth).unwrap() < 1e-12);
    }

    #[test]
    fn refine_from_optimum_stays_put() {
        let truth = CouplingPair::new(53.8, 34.8);
        let (_, p) = small_problem(truth, &[Axis::Y], 0.05);
        let r = refine_local(&p, truth, RefineOptions::default()).unwrap();
        assert!(r.couplings.max_abs_diff(&truth) < 0.01);
        assert!(r.distance <= p.objective(truth).unwrap());
        assert!(r.evaluations <= 500);
    }

    #[test]
    fn refine_never_worsens_and_respects_budget() {
        let truth = CouplingPair::new(53.83, 34.77);
        let (_, p) = small_problem(truth, &[Axis::Y], 0.1);
        let start = CouplingPair::new(54.5, 34.0);
        let opts = RefineOptions {
            max_evaluations: 12,
            ..RefineOptions::default()
        };
        let r = refine_local(&p, start, opts).unwrap();
        assert!(r.evaluations <= 12);
        assert!(r.distance <= p.objective(start).unwrap());
    }

    #[test]
    fn window_study_shape() {
        let truth = CouplingPair::new(53.8, 34.8);
        let (data, _) = small_problem(truth, &[Axis::Y], 0.05);
        let cfg = ChainConfig::default();
        let rho0 = thermal_state(1.0).unwrap();
        let windows: Vec<FitWindow> = [0.05, 0.06, 0.08]
            .iter()
            .map(|&t| FitWindow::new(t).unwrap())
            .collect();
        let sets = vec![vec![Axis::Y], vec![Axis::Z]];
        let opts = SimOptions {
            quadrature: QuadratureSpec { n_nodes: 5 },
            ..SimOptions::default()
        };
        let grid = GridSpec::uniform((52.0, 55.0), (33.0, 36.0), 0.2);
        let study =
            window_study("Case 1", &data, &cfg, &rho0, &sets, &grid, &windows, opts).unwrap();
        assert_eq!(study.rows.len(), 6);
        assert_eq!((study.known_j12_hz, study.known_j23_hz), (53.8, 34.8));
        let table = study.to_table();
        assert!(table.contains("Known values"));
        assert!(table.contains("D_y") && table.contains("D_z"));
        assert_eq!(WindowStudy::from_json(&study.to_json()).unwrap(), study);
        assert!(window_study("x", &data, &cfg, &rho0, &sets, &grid, &[], opts).is_err());
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_monotone(
            a in proptest::collection::vec(-0.5f64..0.5, 20),
            b in proptest::collection::vec(-0.5f64..0.5, 20),
            k in 1usize..19,
        ) {
            let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.002).collect();
            let ta = traj(&t, &a);
            let tb = traj(&t, &b);
            let w_small = FitWindow::new(t[k]).unwrap();
            let w_large = FitWindow::new(t[k + 1]).unwrap();
            let ab = distance(&ta, &tb, Axis::Y, w_small).unwrap();
            prop_assert_eq!(ab, distance(&tb, &ta, Axis::Y, w_small).unwrap());
            prop_assert!(ab <= distance(&ta, &tb, Axis::Y, w_large).unwrap());
            prop_assert!(ab >= 0.0);
        }
    }
}
