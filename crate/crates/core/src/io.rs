//! Instance output files and colored PLY export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grouping::{Aabb, InstanceInfo, InstanceResult};
use crate::pointset::PointCloud;
use crate::util::{content_lines, mix64};

/// Text instance format: `SIN1 <n_points> <n_instances>`, one id per point,
/// then `inst <id> class <c> count <n> conf <f> box <min xyz> <max xyz>`.
pub fn format_sin1(result: &InstanceResult, boxes: &[Aabb]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "SIN1 {} {}", result.n_points(), result.instances.len());
    for id in &result.point_instance {
        let _ = writeln!(s, "{id}");
    }
    for (k, (info, b)) in result.instances.iter().zip(boxes).enumerate() {
        let _ = writeln!(
            s,
            "inst {k} class {} count {} conf {} box {} {} {} {} {} {}",
            info.class, info.count, info.confidence, b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
        );
    }
    s
}

pub fn write_sin1(path: &Path, result: &InstanceResult, boxes: &[Aabb]) -> Result<()> {
    fs::write(path, format_sin1(result, boxes)).map_err(|e| Error::io(path, e))
}

pub fn parse_sin1(path: &Path, text: &str) -> Result<(InstanceResult, Vec<Aabb>)> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "SIN1" {
        return Err(Error::parse(path, ln, "expected `SIN1 <n_points> <n_instances>`"));
    }
    let count = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, ln, format!("bad header field `{s}`")));
    let (n, k) = (count(h[1])?, count(h[2])?);
    let mut point_instance = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = lines.next().ok_or_else(|| Error::parse(path, 0, format!("expected {n} point lines")))?;
        let id: i64 = line.parse().map_err(|_| Error::parse(path, ln, format!("bad instance id `{line}`")))?;
        if id < -1 || id >= k as i64 {
            return Err(Error::parse(path, ln, format!("instance id {id} outside -1..{k}")));
        }
        point_instance.push(id);
    }
    let mut instances = Vec::with_capacity(k);
    let mut boxes = Vec::with_capacity(k);
    for expected in 0..k {
        let (ln, line) = lines.next().ok_or_else(|| Error::parse(path, 0, format!("expected {k} instance lines")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let shape_ok = f.len() == 15
            && f[0] == "inst"
            && f[2] == "class"
            && f[4] == "count"
            && f[6] == "conf"
            && f[8] == "box";
        if !shape_ok {
            return Err(Error::parse(path, ln, "expected `inst <id> class <c> count <n> conf <f> box <6 floats>`"));
        }
        let bad = |s: &str| Error::parse(path, ln, format!("bad field `{s}`"));
        if f[1].parse::<usize>().map_err(|_| bad(f[1]))? != expected {
            return Err(Error::parse(path, ln, format!("instances must be listed in id order, expected {expected}")));
        }
        let v: Vec<f64> = f[9..].iter().map(|s| s.parse().map_err(|_| bad(s))).collect::<Result<_>>()?;
        instances.push(InstanceInfo {
            class: f[3].parse().map_err(|_| bad(f[3]))?,
            count: f[5].parse().map_err(|_| bad(f[5]))?,
            confidence: f[7].parse().map_err(|_| bad(f[7]))?,
        });
        boxes.push(Aabb {
            min: [v[0], v[1], v[2]],
            max: [v[3], v[4], v[5]],
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::parse(path, ln, "trailing content"));
    }
    Ok((
        InstanceResult {
            point_instance,
            instances,
            multi_claimed: 0,
        },
        boxes,
    ))
}

pub fn read_sin1(path: &Path) -> Result<(InstanceResult, Vec<Aabb>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sin1(path, &text)
}

pub const UNASSIGNED_COLOR: [u8; 3] = [128, 128, 128];

/// Deterministic color of an instance id; never the unassigned gray.
pub fn instance_color(id: i64) -> [u8; 3] {
    if id < 0 {
        return UNASSIGNED_COLOR;
    }
    let h = mix64(id as u64);
    let c = [(h >> 16) as u8, (h >> 24) as u8, (h >> 32) as u8];
    if c == UNASSIGNED_COLOR {
        [129, 128, 128]
    } else {
        c
    }
}

/// ASCII PLY with `x y z red green blue` vertices colored by instance id.
pub fn format_ply(cloud: &PointCloud, instance: &[i64]) -> Result<String> {
    if instance.len() != cloud.n_points() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} points",
            instance.len(),
            cloud.n_points()
        )));
    }
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.n_points()
    );
    for (i, &id) in instance.iter().enumerate() {
        let p = cloud.xyz(i);
        let c = instance_color(id);
        let _ = writeln!(s, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
    }
    Ok(s)
}

pub fn export_ply(path: &Path, cloud: &PointCloud, instance: &[i64]) -> Result<()> {
    fs::write(path, format_ply(cloud, instance)?).map_err(|e| Error::io(path, e))
}
