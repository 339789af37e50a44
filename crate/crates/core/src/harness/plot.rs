//! SVG rendering of the harness CSVs.
//!
//! The input kind is recognised from its header. Every input is parsed in
//! full before the first output file is created, so a malformed CSV leaves
//! nothing behind.

use std::path::{Path, PathBuf};

use plotters::coord::ranged1d::SegmentValue;
use plotters::prelude::*;

use super::csvio::{
    self, AggregateRow, RunRow, SnapshotRow, SweepRow, TrainLogCsvRow, AGG_HEADER, RUN_HEADER, SNAPSHOT_HEADER,
    SWEEP_HEADER, TRAIN_LOG_HEADER,
};
use crate::Error;

const SIZE: (u32, u32) = (800, 560);
const COLOR_A: RGBColor = RGBColor(230, 120, 20);
const COLOR_B: RGBColor = RGBColor(40, 40, 40);
const COLOR_MIX: RGBColor = RGBColor(30, 90, 200);

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Plot(format!("{e:?}"))
}

/// One mean curve with an optional min/max band.
pub struct Series {
    pub label: String,
    pub color: RGBColor,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

/// Line chart of several series over a shared x axis.
pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<(), Error> {
    let all_x = series.iter().flat_map(|s| s.x.iter().copied());
    let (x_lo, x_hi) = bounds(all_x);
    let all_y = series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi.iter()).copied());
        s.mean.iter().copied().chain(band)
    });
    let (y_lo, y_hi) = bounds(all_y);
    let y_lo = y_lo.min(0.0);
    let y_hi = if y_hi > y_lo { y_hi * 1.05 } else { y_lo + 1.0 };
    let x_hi = if x_hi > x_lo { x_hi } else { x_lo + 1.0 };

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for s in series {
        if let Some((lo, hi)) = &s.band {
            let outline: Vec<(f64, f64)> = s
                .x
                .iter()
                .zip(hi)
                .map(|(&x, &y)| (x, y))
                .chain(s.x.iter().zip(lo).rev().map(|(&x, &y)| (x, y)))
                .collect();
            chart
                .draw_series(std::iter::once(Polygon::new(outline, s.color.mix(0.2).filled())))
                .map_err(plot_err)?;
        }
        let color = s.color;
        chart
            .draw_series(LineSeries::new(
                s.x.iter().copied().zip(s.mean.iter().copied()),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(s.label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Heatmap over a grid of population sizes; `value(i, j)` is the cell for
/// `xs[i]`, `ys[j]`, or `None` when the pair was not run.
pub fn heatmap(
    path: &Path,
    title: &str,
    xs: &[usize],
    ys: &[usize],
    value: impl Fn(usize, usize) -> Option<f64>,
) -> Result<(), Error> {
    let cells: Vec<(usize, usize, f64)> = (0..xs.len())
        .flat_map(|i| (0..ys.len()).map(move |j| (i, j)))
        .filter_map(|(i, j)| value(i, j).map(|v| (i, j, v)))
        .collect();
    let (lo, hi) = bounds(cells.iter().map(|c| c.2));
    let span = if hi > lo { hi - lo } else { 1.0 };

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let title = format!("{title} (range {lo:.1} to {hi:.1})");
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(
            (0..xs.len() as i32 - 1).into_segmented(),
            (0..ys.len() as i32 - 1).into_segmented(),
        )
        .map_err(plot_err)?;
    let label = |sizes: &[usize], v: &SegmentValue<i32>| match v {
        SegmentValue::CenterOf(i) => sizes.get(*i as usize).map(|s| s.to_string()).unwrap_or_default(),
        _ => String::new(),
    };
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("swarm A size")
        .y_desc("swarm B size")
        .x_labels(xs.len())
        .y_labels(ys.len())
        .x_label_formatter(&|v| label(xs, v))
        .y_label_formatter(&|v| label(ys, v))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(cells.iter().map(|&(i, j, v)| {
            let (i, j) = (i as i32, j as i32);
            Rectangle::new(
                [
                    (SegmentValue::Exact(i), SegmentValue::Exact(j)),
                    (SegmentValue::Exact(i + 1), SegmentValue::Exact(j + 1)),
                ],
                colormap((v - lo) / span).filled(),
            )
        }))
        .map_err(plot_err)?;
    if xs.len() * ys.len() <= 400 {
        chart
            .draw_series(cells.iter().map(|&(i, j, v)| {
                let t = (v - lo) / span;
                let ink = if t < 0.6 { WHITE } else { BLACK };
                Text::new(
                    format!("{v:.1}"),
                    (SegmentValue::CenterOf(i as i32), SegmentValue::CenterOf(j as i32)),
                    ("sans-serif", 12).into_font().color(&ink),
                )
            }))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Dark blue through green to yellow, for `t` in [0, 1].
pub fn colormap(t: f64) -> RGBColor {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - k as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    RGBColor(lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// Scatter of robot positions from a snapshot file, coloured by swarm.
pub fn positions_chart(path: &Path, title: &str, rows: &[SnapshotRow]) -> Result<(), Error> {
    let (x_lo, x_hi) = bounds(rows.iter().map(|r| r.x));
    let (y_lo, y_hi) = bounds(rows.iter().map(|r| r.y));
    let pad = ((x_hi - x_lo).max(y_hi - y_lo) * 0.05).max(1.0);
    let root = SVGBackend::new(path, (640, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((x_lo - pad)..(x_hi + pad), (y_lo - pad)..(y_hi + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("x").y_desc("y").draw().map_err(plot_err)?;
    for (swarm, color) in [("A", COLOR_A), ("B", COLOR_B)] {
        chart
            .draw_series(
                rows.iter()
                    .filter(|r| r.swarm == swarm)
                    .map(|r| Circle::new((r.x, r.y), 4, color.filled())),
            )
            .map_err(plot_err)?
            .label(format!("swarm {swarm}"))
            .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

enum Parsed {
    Run(Vec<RunRow>),
    Agg(Vec<AggregateRow>),
    Sweep(Vec<SweepRow>),
    TrainLog(Vec<TrainLogCsvRow>),
    Snapshot(Vec<SnapshotRow>),
}

fn parse(input: &Path) -> Result<Parsed, Error> {
    let header = csvio::read_header(input)?;
    Ok(match header.as_str() {
        RUN_HEADER => Parsed::Run(csvio::read_csv(input, RUN_HEADER)?),
        AGG_HEADER => Parsed::Agg(csvio::read_csv(input, AGG_HEADER)?),
        SWEEP_HEADER => Parsed::Sweep(csvio::read_csv(input, SWEEP_HEADER)?),
        TRAIN_LOG_HEADER => Parsed::TrainLog(csvio::read_csv(input, TRAIN_LOG_HEADER)?),
        SNAPSHOT_HEADER => Parsed::Snapshot(csvio::read_csv(input, SNAPSHOT_HEADER)?),
        "" => return Err(Error::Parse(format!("{}: empty file", input.display()))),
        other => {
            return Err(Error::Parse(format!(
                "{}: unrecognised header {other:?}",
                input.display()
            )))
        }
    })
}

fn steps_of<T>(rows: &[T], f: impl Fn(&T) -> u64) -> Vec<f64> {
    rows.iter().map(|r| f(r) as f64).collect()
}

fn column<T>(rows: &[T], f: impl Fn(&T) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

/// Renders `input` into `out_dir`, returning the files written:
/// run and aggregate files give `<stem>_coverage.svg` and `<stem>_mixing.svg`;
/// sweep files give `<stem>_coverage_a.svg`, `<stem>_coverage_b.svg` and
/// `<stem>_mixing.svg`; training logs give `<stem>_loss.svg` and
/// `<stem>_return.svg`; snapshots give `<stem>_positions.svg`.
pub fn plot_file(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let parsed = parse(input)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".into());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let target = |suffix: &str| out_dir.join(format!("{stem}_{suffix}.svg"));
    let mut written = Vec::new();
    let result = render(&parsed, &target, &mut written);
    if result.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
    }
    result.map(|_| written)
}

fn render(parsed: &Parsed, target: &dyn Fn(&str) -> PathBuf, written: &mut Vec<PathBuf>) -> Result<(), Error> {
    let mut emit = |suffix: &str, draw: &dyn Fn(&Path) -> Result<(), Error>| {
        let path = target(suffix);
        written.push(path.clone());
        draw(&path)
    };
    match parsed {
        Parsed::Run(rows) => {
            let x = steps_of(rows, |r| r.step);
            let plain = |label: &str, color, mean| Series {
                label: label.into(),
                color,
                x: x.clone(),
                mean,
                band: None,
            };
            let cov = [
                plain("swarm A", COLOR_A, column(rows, |r| r.coverage_a)),
                plain("swarm B", COLOR_B, column(rows, |r| r.coverage_b)),
            ];
            emit("coverage", &|p| line_chart(p, "Coverage", "step", "coverage (%)", &cov))?;
            let mix = [plain("mixing", COLOR_MIX, column(rows, |r| r.mixing))];
            emit("mixing", &|p| line_chart(p, "Mixing ratio", "step", "mixing (%)", &mix))?;
        }
        Parsed::Agg(rows) => {
            let x = steps_of(rows, |r| r.step);
            let banded = |label: &str, color, mean, lo, hi| Series {
                label: label.into(),
                color,
                x: x.clone(),
                mean,
                band: Some((lo, hi)),
            };
            let cov = [
                banded(
                    "swarm A",
                    COLOR_A,
                    column(rows, |r| r.mean_coverage_a),
                    column(rows, |r| r.min_coverage_a),
                    column(rows, |r| r.max_coverage_a),
                ),
                banded(
                    "swarm B",
                    COLOR_B,
                    column(rows, |r| r.mean_coverage_b),
                    column(rows, |r| r.min_coverage_b),
                    column(rows, |r| r.max_coverage_b),
                ),
            ];
            emit("coverage", &|p| line_chart(p, "Coverage (mean and range)", "step", "coverage (%)", &cov))?;
            let mix = [banded(
                "mixing",
                COLOR_MIX,
                column(rows, |r| r.mean_mixing),
                column(rows, |r| r.min_mixing),
                column(rows, |r| r.max_mixing),
            )];
            emit("mixing", &|p| line_chart(p, "Mixing ratio (mean and range)", "step", "mixing (%)", &mix))?;
        }
        Parsed::Sweep(rows) => {
            let mut xs: Vec<usize> = rows.iter().map(|r| r.n_a).collect();
            let mut ys: Vec<usize> = rows.iter().map(|r| r.n_b).collect();
            xs.sort_unstable();
            xs.dedup();
            ys.sort_unstable();
            ys.dedup();
            let lookup = |f: fn(&SweepRow) -> f64| {
                let (xs, ys) = (&xs, &ys);
                move |i: usize, j: usize| rows.iter().find(|r| r.n_a == xs[i] && r.n_b == ys[j]).map(f)
            };
            emit("coverage_a", &|p| heatmap(p, "Swarm A coverage (%)", &xs, &ys, lookup(|r| r.coverage_a)))?;
            emit("coverage_b", &|p| heatmap(p, "Swarm B coverage (%)", &xs, &ys, lookup(|r| r.coverage_b)))?;
            emit("mixing", &|p| heatmap(p, "Mixing ratio (%)", &xs, &ys, lookup(|r| r.mixing)))?;
        }
        Parsed::TrainLog(rows) => {
            let with_loss: Vec<&TrainLogCsvRow> = rows.iter().filter(|r| r.loss.is_some()).collect();
            let loss = [Series {
                label: "loss".into(),
                color: COLOR_MIX,
                x: steps_of(&with_loss, |r| r.step),
                mean: column(&with_loss, |r| r.loss.unwrap_or(0.0) as f64),
                band: None,
            }];
            emit("loss", &|p| line_chart(p, "TD loss", "step", "loss", &loss))?;
            let ret = [Series {
                label: "episode return (mean over robots)".into(),
                color: COLOR_A,
                x: steps_of(rows, |r| r.step),
                mean: column(rows, |r| r.episode_return_mean),
                band: None,
            }];
            emit("return", &|p| line_chart(p, "Episode return", "step", "return", &ret))?;
        }
        Parsed::Snapshot(rows) => {
            emit("positions", &|p| positions_chart(p, "Robot positions", rows))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), RGBColor(68, 1, 84));
        assert_eq!(colormap(1.0), RGBColor(253, 231, 37));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }
}
