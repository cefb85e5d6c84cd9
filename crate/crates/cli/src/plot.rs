//! Learning-curve plot: NLL_oracle (red, synthetic runs) and NLL_div (blue)
//! over pretraining epochs followed by adversarial rounds, with a grey
//! vertical line at the end of pretraining. The plotted points are also
//! written next to the image as CSV.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use catgan::runner::RunPaths;
use image::{Rgb, RgbImage};

const WIDTH: u32 = 900;
const HEIGHT: u32 = 540;
const MARGIN: i64 = 50;
const RED: Rgb<u8> = Rgb([200, 40, 40]);
const BLUE: Rgb<u8> = Rgb([40, 80, 200]);
const GREY: Rgb<u8> = Rgb([150, 150, 150]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug)]
pub enum PlotError {
    NoData(PathBuf),
    Io(PathBuf, std::io::Error),
    Image(image::ImageError),
}

impl fmt::Display for PlotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlotError::NoData(p) => write!(f, "no readable log records in {}", p.display()),
            PlotError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            PlotError::Image(e) => write!(f, "encoding plot: {e}"),
        }
    }
}

impl std::error::Error for PlotError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub step: usize,
    pub phase: &'static str,
    pub index: u64,
    pub nll_oracle: Option<f64>,
    pub nll_div: f64,
}

pub struct PlotSummary {
    pub points: usize,
    pub skipped: usize,
}

/// Reads `key`-indexed records from a JSONL log; corrupt lines are counted.
fn read_log(path: &Path, phase: &'static str, key: &str) -> Result<(Vec<Point>, usize), PlotError> {
    if !path.exists() {
        return Ok((Vec::new(), 0));
    }
    let text = fs::read_to_string(path).map_err(|e| PlotError::Io(path.to_path_buf(), e))?;
    let mut points = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parsed = serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| {
            Some(Point {
                step: 0,
                phase,
                index: v.get(key)?.as_u64()?,
                nll_oracle: v.get("nll_oracle").and_then(|x| x.as_f64()),
                nll_div: v.get("nll_div")?.as_f64()?,
            })
        });
        match parsed {
            Some(p) => points.push(p),
            None => skipped += 1,
        }
    }
    Ok((points, skipped))
}

/// Points of a run in plotting order, plus the count of skipped lines and
/// the step at which pretraining ended.
pub fn collect(paths: &RunPaths) -> Result<(Vec<Point>, usize, Option<usize>), PlotError> {
    let (mut pre, s1) = read_log(&paths.pretrain_log(), "pretrain", "epoch")?;
    let (mut adv, s2) = read_log(&paths.train_log(), "adversarial", "round")?;
    pre.sort_by_key(|p| p.index);
    adv.sort_by_key(|p| p.index);
    let boundary = pre.last().map(|p| p.index as usize);
    let offset = boundary.unwrap_or(0);
    for p in &mut pre {
        p.step = p.index as usize;
    }
    for p in &mut adv {
        p.step = offset + p.index as usize;
    }
    pre.extend(adv);
    Ok((pre, s1 + s2, boundary))
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for (ox, oy) in [(0, 0), (0, 1), (1, 0)] {
            let (px, py) = (x + ox, y + oy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn plot_run(paths: &RunPaths, out: &Path) -> Result<PlotSummary, PlotError> {
    let (points, skipped, boundary) = collect(paths)?;
    if points.is_empty() {
        return Err(PlotError::NoData(paths.root.clone()));
    }
    let values = points.iter().flat_map(|p| p.nll_oracle.into_iter().chain([p.nll_div]));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let last = points.last().unwrap().step.max(1) as f64;
    let (w, h) = (i64::from(WIDTH) - 2 * MARGIN, i64::from(HEIGHT) - 2 * MARGIN);
    let px = |step: usize| MARGIN + (step as f64 / last * w as f64).round() as i64;
    let py = |v: f64| MARGIN + h - ((v - lo) / (hi - lo) * h as f64).round() as i64;

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    draw_line(&mut img, (MARGIN, MARGIN + h), (MARGIN + w, MARGIN + h), BLACK);
    draw_line(&mut img, (MARGIN, MARGIN), (MARGIN, MARGIN + h), BLACK);
    if let Some(b) = boundary {
        let x = px(b);
        let mut y = MARGIN;
        while y < MARGIN + h {
            draw_line(&mut img, (x, y), (x, (y + 6).min(MARGIN + h)), GREY);
            y += 12;
        }
    }
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        draw_line(&mut img, (px(a.step), py(a.nll_div)), (px(b.step), py(b.nll_div)), BLUE);
        if let (Some(x), Some(y)) = (a.nll_oracle, b.nll_oracle) {
            draw_line(&mut img, (px(a.step), py(x)), (px(b.step), py(y)), RED);
        }
    }
    img.save(out).map_err(PlotError::Image)?;

    let mut csv = String::from("step,phase,index,nll_oracle,nll_div\n");
    for p in &points {
        let o = p.nll_oracle.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{o},{}\n", p.step, p.phase, p.index, p.nll_div));
    }
    let csv_path = out.with_extension("csv");
    fs::write(&csv_path, csv).map_err(|e| PlotError::Io(csv_path, e))?;
    Ok(PlotSummary {
        points: points.len(),
        skipped,
    })
}
