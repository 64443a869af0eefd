use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use crate::repertoire::{fmt3, Archive, BinIndex};

/// `grid_psi_<lo>_<hi>.csv` for a yaw interval in degrees.
pub fn grid_file_name(lo: f64, hi: f64) -> String {
    format!("grid_psi_{lo}_{hi}.csv")
}

/// One CSV per yaw bin. Each file has `ny` lines of `nx` comma-separated
/// cells: line `iy` (counting from 0, i.e. the most negative dy first),
/// column `ix`. A cell holds the elite's fitness to three decimals, or
/// nothing when the bin is empty.
pub fn emit_rotation_grids(archive: &Archive, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let g = archive.geometry();
    let mut paths = Vec::with_capacity(g.npsi);
    for ipsi in 0..g.npsi {
        let (lo, hi) = g.bin_intervals(BinIndex::new(0, 0, ipsi))[2];
        let mut text = String::new();
        for iy in 0..g.ny {
            let cells: Vec<String> = (0..g.nx)
                .map(|ix| archive.get(&BinIndex::new(ix, iy, ipsi)).map(|e| format!("{:.3}", e.fitness)).unwrap_or_default())
                .collect();
            text += &cells.join(",");
            text.push('\n');
        }
        let path = dir.join(grid_file_name(lo, hi));
        fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Parse a grid file back into rows of optional fitness values.
pub fn read_grid<R: Read>(mut input: R) -> io::Result<Vec<Vec<Option<f64>>>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("cell `{c}`: {e}")))
                    }
                })
                .collect()
        })
        .collect()
}

const VIEW: f64 = 400.0;
const ARROW_MM: f64 = 30.0;

/// Top-down map of the elites: `topdown.csv` with one
/// `dx_mm,dy_mm,dpsi_deg,fitness` row per elite, and `topdown.svg` with one
/// arrow per elite placed at (dx, dy) and pointing along the final heading.
/// Arrow color goes from pale to dark green with fitness.
pub fn emit_topdown_arrows(archive: &Archive, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
    let g = archive.geometry();
    let (xl, xh) = g.x_bounds;
    let (yl, yh) = g.y_bounds;

    let mut csv = String::from("dx_mm,dy_mm,dpsi_deg,fitness\n");
    for e in archive.elites() {
        let b = e.behavior;
        writeln!(csv, "{},{},{},{:.6}", fmt3(b.dx), fmt3(b.dy), fmt3(b.dpsi), e.fitness).expect("string write");
    }

    let mut svg = String::new();
    let view = VIEW.max(xl.abs()).max(xh.abs()).max(yl.abs()).max(yh.abs()) + 40.0;
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="800" height="800">"#,
        -view,
        -view,
        2.0 * view,
        2.0 * view
    )
    .expect("string write");
    svg += "<rect x=\"-10000\" y=\"-10000\" width=\"20000\" height=\"20000\" fill=\"white\"/>\n";
    // world y points up; SVG y points down
    svg += "<g transform=\"scale(1,-1)\">\n";
    writeln!(
        svg,
        r#"<rect class="bounds" x="{xl}" y="{yl}" width="{}" height="{}" fill="none" stroke="black" stroke-width="1"/>"#,
        xh - xl,
        yh - yl
    )
    .expect("string write");
    writeln!(svg, r#"<line class="axis" x1="{xl}" y1="0" x2="{xh}" y2="0" stroke="gray" stroke-width="0.8"/>"#).expect("string write");
    writeln!(svg, r#"<line class="axis" x1="0" y1="{yl}" x2="0" y2="{yh}" stroke="gray" stroke-width="0.8"/>"#).expect("string write");
    for e in archive.elites() {
        let b = e.behavior;
        let t = e.fitness.clamp(0.0, 3.0) / 3.0;
        let green = (200.0 - 120.0 * t).round() as u8;
        let red_blue = (190.0 * (1.0 - t)).round() as u8;
        writeln!(
            svg,
            "<g class=\"arrow\" transform=\"translate({:.3},{:.3}) rotate({:.3})\" stroke=\"#{red_blue:02x}{green:02x}{red_blue:02x}\" fill=\"#{red_blue:02x}{green:02x}{red_blue:02x}\"><line x1=\"0\" y1=\"0\" x2=\"{ARROW_MM}\" y2=\"0\" stroke-width=\"2\"/><polygon points=\"{ARROW_MM},0 {},5 {},-5\"/></g>",
            b.dx,
            b.dy,
            b.dpsi,
            ARROW_MM - 8.0,
            ARROW_MM - 8.0
        )
        .expect("string write");
    }
    svg += "</g>\n";
    writeln!(svg, r#"<text x="{}" y="{}" font-size="14" text-anchor="end">dx (mm)</text>"#, xh, 18.0).expect("string write");
    writeln!(svg, r#"<text x="6" y="{}" font-size="14">dy (mm)</text>"#, -yh + 14.0).expect("string write");
    writeln!(svg, r#"<text x="{xl}" y="{}" font-size="12">{xl}</text>"#, 16.0).expect("string write");
    writeln!(svg, r#"<text x="6" y="{}" font-size="12">{yh}</text>"#, -yh - 4.0).expect("string write");
    svg += "</svg>\n";

    let csv_path = dir.join("topdown.csv");
    let svg_path = dir.join("topdown.svg");
    fs::write(&csv_path, csv)?;
    fs::write(&svg_path, svg)?;
    Ok((svg_path, csv_path))
}
