//! Static plot rendering: loss curves, Dice-versus-iteration, and
//! qualitative side-by-side panels, all drawn into PNG files without any
//! plotting dependency so the bytes are a pure function of the inputs.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::harness::RunLog;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const SERIES: [Rgb<u8>; 6] = [
    Rgb([214, 69, 65]),
    Rgb([31, 119, 180]),
    Rgb([44, 160, 44]),
    Rgb([148, 103, 189]),
    Rgb([255, 127, 14]),
    Rgb([23, 190, 207]),
];

/// 5x7 bitmap glyphs for the handful of characters the plots label with.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        '-' => [0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f],
        'a' => [0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f],
        'b' => [0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x1e],
        'c' => [0x00, 0x00, 0x0e, 0x11, 0x10, 0x11, 0x0e],
        'd' => [0x01, 0x01, 0x0f, 0x11, 0x11, 0x11, 0x0f],
        'e' => [0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e],
        'f' => [0x06, 0x08, 0x1c, 0x08, 0x08, 0x08, 0x08],
        'g' => [0x00, 0x0f, 0x11, 0x0f, 0x01, 0x11, 0x0e],
        'i' => [0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e],
        'l' => [0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e],
        'm' => [0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'o' => [0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e],
        'p' => [0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10, 0x10],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        's' => [0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e],
        't' => [0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06],
        'u' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d],
        'v' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04],
        'x' => [0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11],
        'y' => [0x00, 0x11, 0x11, 0x0f, 0x01, 0x11, 0x0e],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str, color: Rgb<u8>) {
    let mut x = x0;
    for c in text.chars() {
        let rows = glyph(c);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..5u32 {
                if row & (1 << (4 - dx)) != 0 {
                    let (px, py) = (x + dx, y0 + dy as u32);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, color);
                    }
                }
            }
        }
        x += 6;
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round();
        let y = (y0 + t * (y1 - y0)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Multi-series line chart.
fn line_chart(
    series: &[(&str, Vec<(f64, f64)>)],
    title: &str,
    path: &Path,
) -> Result<()> {
    let (w, h) = (640u32, 400u32);
    let (ml, mr, mt, mb) = (56f64, 12f64, 24f64, 32f64);
    let mut img = RgbImage::from_pixel(w, h, BG);
    let mut x_max = f64::MIN;
    let mut x_min = f64::MAX;
    let mut y_max = f64::MIN;
    let mut y_min = f64::MAX;
    for (_, pts) in series {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !(x_min.is_finite() && x_max.is_finite() && y_min.is_finite() && y_max.is_finite()) {
        return Err(Error::data("no finite points to plot".to_string()));
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| ml + (x - x_min) / (x_max - x_min) * (w as f64 - ml - mr);
    let sy = |y: f64| (h as f64 - mb) - (y - y_min) / (y_max - y_min) * (h as f64 - mt - mb);

    draw_line(&mut img, ml, mt, ml, h as f64 - mb, AXIS);
    draw_line(&mut img, ml, h as f64 - mb, w as f64 - mr, h as f64 - mb, AXIS);
    draw_text(&mut img, 8, 8, title, AXIS);
    draw_text(&mut img, 4, (sy(y_max) as u32).saturating_sub(3), &fmt_num(y_max), AXIS);
    draw_text(&mut img, 4, (sy(y_min) as u32).saturating_sub(3), &fmt_num(y_min), AXIS);
    draw_text(&mut img, ml as u32, h - 12, &fmt_num(x_min), AXIS);
    let xr = fmt_num(x_max);
    draw_text(&mut img, w - mr as u32 - 6 * xr.len() as u32, h - 12, &xr, AXIS);

    for (si, (name, pts)) in series.iter().enumerate() {
        let color = SERIES[si % SERIES.len()];
        for pair in pts.windows(2) {
            draw_line(
                &mut img,
                sx(pair[0].0),
                sy(pair[0].1),
                sx(pair[1].0),
                sy(pair[1].1),
                color,
            );
        }
        let ly = (mt as u32) + 12 * si as u32;
        for dx in 0..10 {
            img.put_pixel(w - 150 + dx, ly + 3, color);
        }
        draw_text(&mut img, w - 136, ly, name, AXIS);
    }
    img.save(path)
        .map_err(|e| Error::data(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn gray_to_rgb(v: f32) -> Rgb<u8> {
    let g = (((v as f64 + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0) as u8;
    Rgb([g, g, g])
}

fn class_to_rgb(c: u8) -> Rgb<u8> {
    match c {
        0 => Rgb([12, 12, 12]),
        1 => Rgb([230, 140, 30]),
        2 => Rgb([60, 180, 220]),
        3 => Rgb([170, 90, 200]),
        _ => Rgb([200, 40, 40]),
    }
}

/// One row of tiles separated by thin gutters.
fn panel_image(tiles: &[PanelTile]) -> RgbImage {
    let side = tiles
        .iter()
        .map(|t| match t {
            PanelTile::Gray(a) => a.nrows(),
            PanelTile::Classes(a) => a.nrows(),
        })
        .max()
        .unwrap_or(1) as u32;
    let gutter = 3u32;
    let w = tiles.len() as u32 * (side + gutter) - gutter;
    let mut img = RgbImage::from_pixel(w, side, Rgb([230, 230, 230]));
    for (i, tile) in tiles.iter().enumerate() {
        let x0 = i as u32 * (side + gutter);
        match tile {
            PanelTile::Gray(a) => {
                for ((y, x), &v) in a.indexed_iter() {
                    img.put_pixel(x0 + x as u32, y as u32, gray_to_rgb(v));
                }
            }
            PanelTile::Classes(a) => {
                for ((y, x), &v) in a.indexed_iter() {
                    img.put_pixel(x0 + x as u32, y as u32, class_to_rgb(v));
                }
            }
        }
    }
    img
}

pub enum PanelTile {
    Gray(Array2<f32>),
    Classes(Array2<u8>),
}

/// Render every artifact of a run directory (written by `train`) into
/// `out_dir`: loss curves, the Dice trajectory, and one panel per dumped
/// evaluation snapshot. Fails without writing anything when the run log
/// holds no data.
pub fn plot_run(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let runlog = RunLog::load(&run_dir.join("runlog.json"))?;
    if runlog.iters.is_empty() && runlog.evals.is_empty() {
        return Err(Error::data("run log holds no iterations or evaluations".to_string()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    if !runlog.iters.is_empty() {
        let take = |f: fn(&crate::harness::IterLog) -> f64| -> Vec<(f64, f64)> {
            runlog
                .iters
                .iter()
                .map(|l| (l.iteration as f64, f(l)))
                .collect()
        };
        let series: Vec<(&str, Vec<(f64, f64)>)> = vec![
            ("gen adv", take(|l| l.l_gen_adv)),
            ("cycle", take(|l| l.l_cyc)),
            ("mix adv", take(|l| l.l_mix_adv)),
            ("cls", take(|l| l.l_cls)),
            ("seg", take(|l| l.l_seg)),
            ("total", take(|l| l.total)),
        ];
        let path = out_dir.join("loss_curves.png");
        line_chart(&series, "loss vs iteration", &path)?;
        written.push(path);
    }

    if !runlog.evals.is_empty() {
        let pts: Vec<(f64, f64)> = runlog
            .evals
            .iter()
            .map(|e| (e.iteration as f64, e.report.dice_avg))
            .collect();
        let path = out_dir.join("dice_vs_iteration.png");
        line_chart(&[("dice avg", pts)], "dice vs iteration", &path)?;
        written.push(path);
    }

    // Panels dumped by the trainer.
    let panels_root = run_dir.join("panels");
    if panels_root.is_dir() {
        let mut iters: Vec<PathBuf> = fs::read_dir(&panels_root)
            .map_err(|e| Error::io(&panels_root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        iters.sort();
        for iter_dir in iters {
            let stem = iter_dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut case = 0usize;
            loop {
                let base = iter_dir.join(format!("case{case}"));
                let input = base.with_extension("input.f32");
                if !input.exists() {
                    break;
                }
                let side = infer_side(&input)?;
                let tiles = vec![
                    PanelTile::Gray(read_f32(&input, side)?),
                    PanelTile::Gray(read_f32(&base.with_extension("translation.f32"), side)?),
                    PanelTile::Classes(read_u8(&base.with_extension("prediction.u8"), side)?),
                    PanelTile::Classes(read_u8(&base.with_extension("gt.u8"), side)?),
                ];
                let img = panel_image(&tiles);
                let path = out_dir.join(format!("panel_{stem}_case{case}.png"));
                img.save(&path)
                    .map_err(|e| Error::data(format!("writing {}: {e}", path.display())))?;
                written.push(path);
                case += 1;
            }
        }
    }
    Ok(written)
}

fn infer_side(path: &Path) -> Result<usize> {
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    let n = len / 4;
    let side = (n as f64).sqrt() as usize;
    if side * side != n {
        return Err(Error::data(format!("{} is not square", path.display())));
    }
    Ok(side)
}

fn read_f32(path: &Path, side: usize) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    crate::dataio::image_from_bytes(&bytes, side)
}

fn read_u8(path: &Path, side: usize) -> Result<Array2<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != side * side {
        return Err(Error::data(format!("{} has the wrong size", path.display())));
    }
    Ok(Array2::from_shape_vec((side, side), bytes).unwrap())
}
