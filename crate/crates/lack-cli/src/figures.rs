//! Analytic curve datasets behind the numbered figures.
//!
//! Each dataset is a CSV with a fixed, documented header, tabulated on a
//! one-second (or 100-bit) grid, so the plots can be reproduced with any
//! external tool. The curves come straight from the library's closed forms;
//! nothing is simulated here.
//!
//! | id    | file(s)                         | contents                                             |
//! |-------|---------------------------------|------------------------------------------------------|
//! | 2     | fig2.csv                        | total loss vs covert loss, one column per network loss|
//! | 4     | fig4.csv                        | MOS vs network loss, one column per covert loss       |
//! | 9     | fig9.csv                        | E(D given D > t), five shapes plus the empirical fit  |
//! | 10    | fig10.csv                       | residual-mean IR(t), five shapes, S = 1000 bits       |
//! | 16-18 | fig{n}.csv                      | quantile IR(t) at xi = 0.8 / 0.9 / 0.95, three shapes |
//! | 19-21 | fig{n}.csv                      | survival horizon T_xi(t), same xi ladder and shapes   |
//! | 22-23 | fig{n}.csv                      | IR vs payload size at t = 60 / 180 s, xi = 0.9        |
//! | 24    | fig24.csv                       | IR vs payload size at several call moments, cv = 0.32 |
//! | 25-27 | fig{n}.csv, fig{n}_crossings.csv| both controllers per xi, with crossing times          |

use std::error::Error;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use lack_core::control::{
    analytic_schedule, compare_controllers, ControllerMode, DenominatorMode,
};
use lack_core::duration::{
    calibrate_scale, EmpiricalDensity, WeibullModel, REFERENCE_MEAN_CALL_SECONDS,
    REFERENCE_SHAPES,
};
use lack_core::quality::{mos_from_loss, MosParams};

/// Figure ids with a defined dataset.
pub const SUPPORTED: [u8; 16] = [2, 4, 9, 10, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27];

pub fn is_supported(id: u8) -> bool {
    SUPPORTED.contains(&id)
}

#[derive(Debug)]
pub struct UnknownFigure(pub u8);

impl fmt::Display for UnknownFigure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no dataset defined for figure {}; supported ids: {SUPPORTED:?}", self.0)
    }
}

impl Error for UnknownFigure {}

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Time-axis datasets: one row per second.
const HORIZON_S: usize = 600;
/// Payload assumed by the schedule figures.
const PAYLOAD_BITS: f64 = 1000.0;
/// Euler step behind the controller-comparison curves.
const COMPARE_DT_S: f64 = 0.05;
/// Survival level assumed by the payload-size figures.
const SIZE_FIGURE_XI: f64 = 0.9;

/// Labels for the full shape ladder, by convention rounded as in the
/// calibration table.
const CV_LABELS: [&str; 5] = ["cv_0.32", "cv_0.52", "cv_0.84", "cv_1", "cv_2.23"];
/// Shapes and labels for the three-curve figures (low, unit, high dispersion).
const TRIO_SHAPES: [f64; 3] = [3.4, 1.0, 0.5];
const TRIO_LABELS: [&str; 3] = ["cv_0.32", "cv_1", "cv_2.23"];

/// Writes the dataset(s) for one figure id and returns the created paths.
pub fn write_figure(id: u8, out_dir: &Path) -> Result<Vec<PathBuf>> {
    match id {
        2 => fig2(out_dir),
        4 => fig4(out_dir),
        9 => fig9(out_dir),
        10 => fig10(out_dir),
        16 | 17 | 18 => quantile_rate_fig(id, out_dir),
        19 | 20 | 21 => horizon_fig(id, out_dir),
        22 | 23 => size_fig(id, out_dir),
        24 => fig24(out_dir),
        25 | 26 | 27 => comparison_fig(id, out_dir),
        _ => Err(Box::new(UnknownFigure(id))),
    }
}

fn write_table(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn header(first: &str, rest: &[&str]) -> Vec<String> {
    std::iter::once(first.to_string()).chain(rest.iter().map(|s| s.to_string())).collect()
}

fn models(shapes: &[f64]) -> Result<Vec<WeibullModel>> {
    shapes
        .iter()
        .map(|&k| calibrate_scale(k, REFERENCE_MEAN_CALL_SECONDS).map_err(Into::into))
        .collect()
}

/// Total loss seen at the receiver against the covert loss spent on the
/// channel, one curve per underlying network loss level.
fn fig2(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let p_ns = [0.0, 0.01, 0.02, 0.05, 0.1];
    let cols: Vec<String> = p_ns.iter().map(|p| format!("p_t_at_p_n_{p}")).collect();
    let head: Vec<String> =
        std::iter::once("p_l".to_string()).chain(cols.iter().cloned()).collect();
    let rows = (0..=100).map(|i| {
        let p_l = i as f64 / 1000.0;
        let mut row = vec![p_l.to_string()];
        for &p_n in &p_ns {
            // expanded form of 1 - (1 - p_n)(1 - p_l); exact on both axes
            let p_t = p_n + p_l - p_n * p_l;
            row.push(p_t.to_string());
        }
        row
    });
    let path = out_dir.join("fig2.csv");
    write_table(&path, &head, rows)?;
    Ok(vec![path])
}

/// Voice quality against network loss, one curve per added covert loss.
fn fig4(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let params = MosParams::default();
    let p_ls = [0.0, 0.005, 0.01, 0.02, 0.05];
    let cols: Vec<String> = p_ls.iter().map(|p| format!("mos_at_p_l_{p}")).collect();
    let head: Vec<String> =
        std::iter::once("p_n".to_string()).chain(cols.iter().cloned()).collect();
    let mut rows = Vec::with_capacity(101);
    for i in 0..=100 {
        let p_n = i as f64 / 500.0;
        let mut row = vec![p_n.to_string()];
        for &p_l in &p_ls {
            row.push(mos_from_loss(&params, p_n + p_l)?.to_string());
        }
        rows.push(row);
    }
    let path = out_dir.join("fig4.csv");
    write_table(&path, &head, rows)?;
    Ok(vec![path])
}

/// Expected total call duration conditioned on survival to `t`, for the
/// calibrated shape ladder and the empirical fit. The empirical column is
/// blank once `t` leaves the fit's support.
fn fig9(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let models = models(&REFERENCE_SHAPES)?;
    let empirical = EmpiricalDensity::new();
    let mut rows = Vec::with_capacity(HORIZON_S + 1);
    for t in 0..=HORIZON_S {
        let mut row = vec![t.to_string()];
        for m in &models {
            row.push(m.conditional_mean_remaining(t as f64)?.to_string());
        }
        row.push(
            empirical
                .conditional_mean_remaining(t as f64)
                .map(|v| v.to_string())
                .unwrap_or_default(),
        );
        rows.push(row);
    }
    let mut head = header("t_s", &CV_LABELS);
    head.push("experimental".to_string());
    let path = out_dir.join("fig9.csv");
    write_table(&path, &head, rows)?;
    Ok(vec![path])
}

/// Tabulates one depleting schedule per model and zips them into rows of
/// `t` plus one rate column per model.
fn schedule_rows(mode: &ControllerMode, models: &[WeibullModel]) -> Result<Vec<Vec<String>>> {
    let mut curves = Vec::with_capacity(models.len());
    for m in models {
        curves.push(analytic_schedule(
            mode,
            DenominatorMode::MeanResidual,
            Some(m),
            PAYLOAD_BITS,
            HORIZON_S as f64,
            1.0,
        )?);
    }
    let mut rows = Vec::with_capacity(HORIZON_S + 1);
    for t in 0..=HORIZON_S {
        let mut row = vec![t.to_string()];
        for curve in &curves {
            row.push(curve[t].1.to_string());
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Residual-mean insertion-rate schedules for the full shape ladder.
fn fig10(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let models = models(&REFERENCE_SHAPES)?;
    let rows = schedule_rows(&ControllerMode::ResidualMean, &models)?;
    let path = out_dir.join("fig10.csv");
    write_table(&path, &header("t_s", &CV_LABELS), rows)?;
    Ok(vec![path])
}

const fn xi_for(id: u8) -> f64 {
    match id % 3 {
        1 => 0.8,
        2 => 0.9,
        _ => 0.95,
    }
}

/// Quantile insertion-rate schedules (figures 16 to 18, one xi each).
fn quantile_rate_fig(id: u8, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let xi = xi_for(id);
    let models = models(&TRIO_SHAPES)?;
    let rows = schedule_rows(&ControllerMode::Quantile { xi }, &models)?;
    let path = out_dir.join(format!("fig{id}.csv"));
    write_table(&path, &header("t_s", &TRIO_LABELS), rows)?;
    Ok(vec![path])
}

/// Survival horizons T_xi(t) (figures 19 to 21, one xi each).
fn horizon_fig(id: u8, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let xi = xi_for(id);
    let models = models(&TRIO_SHAPES)?;
    let mut rows = Vec::with_capacity(HORIZON_S + 1);
    for t in 0..=HORIZON_S {
        let mut row = vec![t.to_string()];
        for m in &models {
            row.push(m.quantile_horizon(t as f64, xi)?.to_string());
        }
        rows.push(row);
    }
    let path = out_dir.join(format!("fig{id}.csv"));
    write_table(&path, &header("t_s", &TRIO_LABELS), rows)?;
    Ok(vec![path])
}

/// Rate the quantile schedule plans at time `t` per bit of initial payload.
/// The planned rate is linear in the payload, so IR(S) is `S` times this.
fn unit_rate_at(model: &WeibullModel, xi: f64, t: f64) -> Result<f64> {
    if t == 0.0 {
        let schedule = analytic_schedule(
            &ControllerMode::Quantile { xi },
            DenominatorMode::MeanResidual,
            Some(model),
            1.0,
            1.0,
            1.0,
        )?;
        return Ok(schedule[0].1);
    }
    let schedule = analytic_schedule(
        &ControllerMode::Quantile { xi },
        DenominatorMode::MeanResidual,
        Some(model),
        1.0,
        t,
        1.0,
    )?;
    Ok(schedule.last().expect("non-empty schedule").1)
}

fn size_grid() -> impl Iterator<Item = u64> {
    (0..=50).map(|i| i * 100)
}

/// Insertion rate against payload size at a fixed call moment (figures 22
/// and 23).
fn size_fig(id: u8, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let t = if id == 22 { 60.0 } else { 180.0 };
    let models = models(&TRIO_SHAPES)?;
    let mut slopes = Vec::with_capacity(models.len());
    for m in &models {
        slopes.push(unit_rate_at(m, SIZE_FIGURE_XI, t)?);
    }
    let rows = size_grid().map(|s| {
        let mut row = vec![s.to_string()];
        for &slope in &slopes {
            row.push((s as f64 * slope).to_string());
        }
        row
    });
    let path = out_dir.join(format!("fig{id}.csv"));
    write_table(&path, &header("s_bits", &TRIO_LABELS), rows)?;
    Ok(vec![path])
}

/// Insertion rate against payload size at several call moments for the
/// low-dispersion shape.
fn fig24(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = calibrate_scale(3.4, REFERENCE_MEAN_CALL_SECONDS)?;
    let moments = [0.0, 60.0, 180.0, 300.0];
    let mut slopes = Vec::with_capacity(moments.len());
    for &t in &moments {
        slopes.push(unit_rate_at(&model, SIZE_FIGURE_XI, t)?);
    }
    let labels: Vec<String> = moments.iter().map(|t| format!("t_{t}")).collect();
    let head: Vec<String> =
        std::iter::once("s_bits".to_string()).chain(labels.iter().cloned()).collect();
    let rows = size_grid().map(|s| {
        let mut row = vec![s.to_string()];
        for &slope in &slopes {
            row.push((s as f64 * slope).to_string());
        }
        row
    });
    let path = out_dir.join("fig24.csv");
    write_table(&path, &head, rows)?;
    Ok(vec![path])
}

/// Residual-mean versus quantile schedules from the same payload (figures
/// 25 to 27, one dispersion level each), plus a companion file with the
/// crossing time per xi.
fn comparison_fig(id: u8, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let shape = TRIO_SHAPES[(id - 25) as usize];
    let model = calibrate_scale(shape, REFERENCE_MEAN_CALL_SECONDS)?;
    let xis = [0.8, 0.9, 0.95];
    let per_second = (1.0 / COMPARE_DT_S).round() as usize;

    let mut quantile_curves = Vec::with_capacity(xis.len());
    let mut residual_curve = Vec::new();
    let mut crossings = Vec::with_capacity(xis.len());
    for (i, &xi) in xis.iter().enumerate() {
        let cmp =
            compare_controllers(&model, PAYLOAD_BITS, xi, HORIZON_S as f64, COMPARE_DT_S)?;
        let sampled: Vec<f64> = cmp
            .samples
            .iter()
            .step_by(per_second)
            .map(|s| s.ir_quantile_bps)
            .collect();
        if i == 0 {
            residual_curve = cmp
                .samples
                .iter()
                .step_by(per_second)
                .map(|s| s.ir_residual_bps)
                .collect();
        }
        quantile_curves.push(sampled);
        crossings.push((xi, cmp.crossing_s, cmp.quantile_leads_initially));
    }

    let head = header(
        "t_s",
        &["ir_residual", "ir_quantile_xi_0.8", "ir_quantile_xi_0.9", "ir_quantile_xi_0.95"],
    );
    let rows = (0..=HORIZON_S).map(|t| {
        let mut row = vec![t.to_string(), residual_curve[t].to_string()];
        for curve in &quantile_curves {
            row.push(curve[t].to_string());
        }
        row
    });
    let path = out_dir.join(format!("fig{id}.csv"));
    write_table(&path, &head, rows)?;

    let cross_path = out_dir.join(format!("fig{id}_crossings.csv"));
    let cross_head = header("xi", &["crossing_s", "quantile_leads_initially"]);
    let cross_rows = crossings.into_iter().map(|(xi, crossing, leads)| {
        vec![
            xi.to_string(),
            crossing.map(|c| c.to_string()).unwrap_or_default(),
            leads.to_string(),
        ]
    });
    write_table(&cross_path, &cross_head, cross_rows)?;
    Ok(vec![path, cross_path])
}
