use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::smagg::AggregationResult;
use crate::tspp::PointPrompts;

/// `x,y,prob` per point, image coordinates of the cell centers.
pub fn points_csv(points: &PointPrompts) -> String {
    let mut s = String::from("x,y,prob\n");
    for p in &points.points {
        writeln!(s, "{},{},{}", p.x, p.y, p.prob).unwrap();
    }
    s
}

/// `output_index,class,source_indices` per output mask; pass-through masks
/// have an empty class and sources are `;`-separated.
pub fn merge_csv<T>(r: &AggregationResult<T>) -> String {
    let mut s = String::from("output_index,class,source_indices\n");
    for (i, (class, src)) in r.class_of.iter().zip(&r.provenance).enumerate() {
        let class = class.map(|c| c.to_string()).unwrap_or_default();
        let src: Vec<String> = src.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{i},{class},{}", src.join(";")).unwrap();
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}
