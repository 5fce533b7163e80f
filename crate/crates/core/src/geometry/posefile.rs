use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::Pose;
use crate::error::{Error, Result};

/// One camera block of a pose file. Image size is not stored in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseRecord {
    pub name: String,
    pub pose: Pose,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Parses blocks of five lines: image name, three rows of `[r | t]`, then
/// `fx fy cx cy`. Blank lines and `#` comments are skipped.
pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_poses(&text, path)
}

fn parse_poses(text: &str, path: &Path) -> Result<Vec<PoseRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.len() % 5 != 0 {
        let last = lines.last().map_or(0, |l| l.0);
        return Err(err(last, format!("{} content lines is not a multiple of 5", lines.len())));
    }
    let numbers = |(no, line): (usize, &str), want: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(no, format!("{e}")))?;
        if vals.len() != want {
            return Err(err(no, format!("expected {want} numbers, found {}", vals.len())));
        }
        Ok(vals)
    };
    let mut out = Vec::with_capacity(lines.len() / 5);
    for block in lines.chunks(5) {
        let name = block[0].1.to_string();
        let mut r = Matrix3::zeros();
        let mut t = Vector3::zeros();
        for row in 0..3 {
            let v = numbers(block[row + 1], 4)?;
            for col in 0..3 {
                r[(row, col)] = v[col];
            }
            t[row] = v[3];
        }
        let pose = Pose::from_approximate(r, t).map_err(|e| err(block[1].0, e.to_string()))?;
        let k = numbers(block[4], 4)?;
        if !(k[0] > 0.0 && k[1] > 0.0) {
            return Err(err(block[4].0, "focal lengths must be positive".into()));
        }
        out.push(PoseRecord {
            name,
            pose,
            fx: k[0],
            fy: k[1],
            cx: k[2],
            cy: k[3],
        });
    }
    Ok(out)
}

pub fn write_poses(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let mut s = String::new();
    for rec in records {
        let (r, t) = (&rec.pose.r, &rec.pose.t);
        writeln!(s, "{}", rec.name).unwrap();
        for row in 0..3 {
            writeln!(s, "{} {} {} {}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]).unwrap();
        }
        writeln!(s, "{} {} {} {}", rec.fx, rec.fy, rec.cx, rec.cy).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let recs = vec![
            PoseRecord {
                name: "a.png".into(),
                pose: Pose::new(*Rotation3::from_euler_angles(0.1, -0.2, 0.3).matrix(), Vector3::new(1.0, 2.0, -3.5)).unwrap(),
                fx: 50.0,
                fy: 51.0,
                cx: 31.5,
                cy: 23.5,
            },
            PoseRecord {
                name: "b.png".into(),
                pose: Pose::identity(),
                fx: 10.0,
                fy: 10.0,
                cx: 1.0,
                cy: 2.0,
            },
        ];
        write_poses(&path, &recs).unwrap();
        let back = read_poses(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], recs[1]);
        assert!((back[0].pose.r - recs[0].pose.r).abs().max() < 1e-15);
    }

    #[test]
    fn low_precision_rotation_is_snapped() {
        let text = "img.png\n0.707107 -0.707107 0 0\n0.707107 0.707107 0 0\n0 0 1 1\n10 10 5 5\n";
        let recs = parse_poses(text, Path::new("p")).unwrap();
        recs[0].pose.validate().unwrap();
    }

    #[test]
    fn malformed_files_report_lines() {
        let bad = "img.png\n1 0 0 0\n0 1 0 0\n0 0 1\n10 10 5 5\n";
        match parse_poses(bad, Path::new("p")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(parse_poses("img.png\n1 0 0 0\n", Path::new("p")).is_err());
        let not_rot = "img.png\n2 0 0 0\n0 1 0 0\n0 0 1 0\n10 10 5 5\n";
        assert!(parse_poses(not_rot, Path::new("p")).is_err());
    }
}
