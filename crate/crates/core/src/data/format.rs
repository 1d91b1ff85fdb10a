//! On-disk dataset layout.
//!
//! A dataset is a directory holding `manifest.json` (UTF-8, sorted keys) and
//! one file per utterance named `spk{S}_sent{J}.s3d`:
//!
//! ```text
//! b"S3D1" | u32 frame count | u32 point count | f64 x,y,z ... (frame-major)
//! ```
//!
//! all little-endian. A text alternative `spk{S}_sent{J}.csv` with header
//! `frame,point,x,y,z` is accepted on load.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, DatasetManifest, Utterance};
use crate::error::{Error, Result};
use crate::geometry::{FaceCloud, Point};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"S3D1";
const HEADER_LEN: usize = 12;
const MANIFEST: &str = "manifest.json";

/// Raw frame-major coordinates of one utterance file.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBlock {
    pub n_frames: usize,
    pub n_points: usize,
    pub coords: Vec<f64>,
}

impl FrameBlock {
    pub fn from_frames(frames: &[FaceCloud]) -> Self {
        Self {
            n_frames: frames.len(),
            n_points: frames.first().map_or(0, FaceCloud::len),
            coords: frames
                .iter()
                .flat_map(|f| f.points.iter().flat_map(|p| [p.x, p.y, p.z]))
                .collect(),
        }
    }
}

pub fn encode_s3d(block: &FrameBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + block.coords.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(block.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(block.n_points as u32).to_le_bytes());
    for v in &block.coords {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_s3d(bytes: &[u8], path: &Path) -> Result<FrameBlock> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len()),
            format!("file too short for the {HEADER_LEN}-byte header"),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse(path, "byte 0", "bad magic, expected S3D1"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (n_frames, n_points) = (u32_at(4), u32_at(8));
    let expected = n_frames
        .checked_mul(n_points)
        .and_then(|n| n.checked_mul(24))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::parse(path, "byte 4", "frame/point counts overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!(
                "payload length {} does not match {n_frames} frames x {n_points} points (expected {expected} bytes)",
                bytes.len()
            ),
        ));
    }
    let coords = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(FrameBlock {
        n_frames,
        n_points,
        coords,
    })
}

pub fn write_s3d(path: &Path, frames: &[FaceCloud]) -> Result<()> {
    fs::write(path, encode_s3d(&FrameBlock::from_frames(frames))).map_err(|e| Error::io(path, e))
}

pub fn read_s3d(path: &Path) -> Result<FrameBlock> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_s3d(&bytes, path)
}

/// Parses the `frame,point,x,y,z` form. Rows must be frame-major with
/// consecutive indices starting at 0.
pub fn parse_csv(text: &str, path: &Path) -> Result<FrameBlock> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "frame,point,x,y,z" => {}
        _ => return Err(Error::parse(path, "line 1", "expected header `frame,point,x,y,z`")),
    }
    let mut coords = Vec::new();
    let (mut n_frames, mut n_points) = (0usize, None::<usize>);
    let mut expect = (0usize, 0usize);
    for (i, line) in lines {
        let loc = format!("line {}", i + 1);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, loc, format!("expected 5 fields, got {}", fields.len())));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(path, loc.clone(), format!("bad index `{s}`: {e}")))
        };
        let (f, p) = (idx(fields[0])?, idx(fields[1])?);
        if (f, p) != expect {
            // A new frame starts when the point index wraps to 0.
            let wraps = p == 0 && f == expect.0 + 1 && n_points.is_none_or(|n| n == expect.1);
            if !wraps {
                return Err(Error::parse(
                    path,
                    loc,
                    format!("expected frame {} point {}, got frame {f} point {p}", expect.0, expect.1),
                ));
            }
            n_points.get_or_insert(expect.1);
        }
        for s in &fields[2..] {
            let v: f64 = s
                .parse()
                .map_err(|e| Error::parse(path, loc.clone(), format!("bad coordinate `{s}`: {e}")))?;
            coords.push(v);
        }
        n_frames = f + 1;
        expect = (f, p + 1);
    }
    let n_points = n_points.unwrap_or(expect.1);
    if n_frames == 0 || expect.1 != n_points {
        return Err(Error::parse(path, "end of file", "last frame is incomplete or file is empty"));
    }
    Ok(FrameBlock {
        n_frames,
        n_points,
        coords,
    })
}

pub fn to_csv(frames: &[FaceCloud]) -> String {
    let mut s = String::from("frame,point,x,y,z\n");
    for (t, f) in frames.iter().enumerate() {
        for (k, p) in f.points.iter().enumerate() {
            s.push_str(&format!("{t},{k},{:?},{:?},{:?}\n", p.x, p.y, p.z));
        }
    }
    s
}

/// JSON with keys sorted at every level and a trailing newline.
pub fn to_canonical_json<T: serde::Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    let mut s = serde_json::to_string_pretty(&v).expect("json value");
    s.push('\n');
    s
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for u in &ds.utterances {
        u.validate()?;
        if u.frames[0].len() != ds.manifest.point_count {
            return Err(Error::Validation {
                path: dir.join(format!("{}.s3d", Dataset::file_stem(u.speaker_id, u.sentence_id))),
                message: format!(
                    "utterance has {} points but manifest point_count is {}",
                    u.frames[0].len(),
                    ds.manifest.point_count
                ),
            });
        }
    }
    match fs::create_dir(dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && dir.is_dir() => {}
        Err(e) => return Err(Error::io(dir, e)),
    }
    let mpath = manifest_path(dir);
    fs::write(&mpath, to_canonical_json(&ds.manifest)).map_err(|e| Error::io(&mpath, e))?;
    for u in &ds.utterances {
        let p = dir.join(format!("{}.s3d", Dataset::file_stem(u.speaker_id, u.sentence_id)));
        write_s3d(&p, &u.frames)?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let mpath = manifest_path(dir);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    // Check the version before the strict schema so old files get a clear error.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        Error::parse(&mpath, format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let found = raw.get("format_version").and_then(serde_json::Value::as_u64);
    match found {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Version {
                found: v.min(u32::MAX as u64) as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => {
            return Err(Error::Validation {
                path: mpath,
                message: "missing integer field `format_version`".into(),
            })
        }
    }
    serde_json::from_value(raw).map_err(|e| Error::Validation {
        path: mpath,
        message: e.to_string(),
    })
}

fn load_utterance(dir: &Path, m: &DatasetManifest, spk: usize, sent: usize) -> Result<Utterance> {
    let stem = Dataset::file_stem(spk, sent);
    let bin = dir.join(format!("{stem}.s3d"));
    let csv = dir.join(format!("{stem}.csv"));
    let (path, block) = if bin.exists() {
        let b = read_s3d(&bin)?;
        (bin, b)
    } else if csv.exists() {
        let text = fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
        let b = parse_csv(&text, &csv)?;
        (csv, b)
    } else {
        return Err(Error::Validation {
            path: bin,
            message: "utterance listed by the manifest is missing".into(),
        });
    };
    if block.n_points != m.point_count {
        return Err(Error::Validation {
            path,
            message: format!(
                "file has {} points per frame but manifest point_count is {}",
                block.n_points, m.point_count
            ),
        });
    }
    if block.n_frames == 0 {
        return Err(Error::Validation {
            path,
            message: "utterance has no frames".into(),
        });
    }
    let roles = m.landmarks;
    let frames = block
        .coords
        .chunks(block.n_points * 3)
        .enumerate()
        .map(|(t, c)| {
            let points = c.chunks(3).map(|p| Point::new(p[0], p[1], p[2])).collect();
            FaceCloud::new(points, t, roles.corner_left, roles.corner_right, roles.upper_ref)
                .map_err(|e| Error::Validation {
                    path: path.clone(),
                    message: format!("frame {t}: {e}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Utterance {
        speaker_id: spk,
        sentence_id: sent,
        frames,
        fps: m.fps,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let utterances = (0..manifest.n_speakers)
        .flat_map(|s| (0..manifest.n_sentences).map(move |j| (s, j)))
        .filter(|key| !manifest.excluded.contains(key))
        .map(|(s, j)| load_utterance(dir, &manifest, s, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, PoseJitter, SyntheticSpec};

    fn small() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_speakers: 2,
            n_sentences: 3,
            frames_per_utterance: 5,
            pose_jitter: PoseJitter::default(),
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ds = small();
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        save_dataset(&ds, &a).unwrap();
        let loaded = load_dataset(&a).unwrap();
        assert_eq!(loaded, ds);
        save_dataset(&loaded, &b).unwrap();
        assert_eq!(dir_bytes(&a), dir_bytes(&b));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let ds = small();
        let bytes = encode_s3d(&FrameBlock::from_frames(&ds.utterances[0].frames));
        let p = Path::new("x.s3d");
        for cut in [0, 3, 11, 12, 100, bytes.len() - 1] {
            assert!(matches!(decode_s3d(&bytes[..cut], p), Err(Error::Parse { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_s3d(&bad, p), Err(Error::Parse { .. })));
    }

    #[test]
    fn point_count_mismatch_names_file() {
        let ds = small();
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&ds, tmp.path()).unwrap();
        let victim = tmp.path().join("spk1_sent2.s3d");
        write_s3d(&victim, &[FaceCloud::new(vec![Point::zeros(); 3], 0, 0, 1, 2).unwrap()]).unwrap();
        match load_dataset(tmp.path()) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, victim),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let ds = small();
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&ds, tmp.path()).unwrap();
        let mp = tmp.path().join(MANIFEST);
        let text = fs::read_to_string(&mp).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&mp, text).unwrap();
        assert!(matches!(load_dataset(tmp.path()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = small();
        let frames = &ds.utterances[0].frames;
        let p = Path::new("u.csv");
        let block = parse_csv(&to_csv(frames), p).unwrap();
        assert_eq!(block, FrameBlock::from_frames(frames));
        assert!(matches!(parse_csv("frame,point,x,y,z\n0,0,1,2\n", p), Err(Error::Parse { location, .. }) if location == "line 2"));
        assert!(parse_csv("a,b\n", p).is_err());
        assert!(parse_csv("frame,point,x,y,z\n0,0,1,2,3\n0,2,1,2,3\n", p).is_err());
        assert!(parse_csv("frame,point,x,y,z\n0,0,1,2,3\n0,1,1,2,3\n1,0,1,2,3\n", p).is_err());
    }

    #[test]
    fn csv_files_are_loaded() {
        let ds = small();
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&ds, tmp.path()).unwrap();
        let u = &ds.utterances[1];
        let stem = Dataset::file_stem(u.speaker_id, u.sentence_id);
        fs::remove_file(tmp.path().join(format!("{stem}.s3d"))).unwrap();
        fs::write(tmp.path().join(format!("{stem}.csv")), to_csv(&u.frames)).unwrap();
        assert_eq!(load_dataset(tmp.path()).unwrap(), ds);
    }
}
