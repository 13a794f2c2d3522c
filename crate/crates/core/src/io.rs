//! Binary PPM (P6) images and ASCII PLY point clouds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::render::{CloudPoint, Image, PointCloud};
use crate::{Error, Result, Vec3};

pub fn write_ppm<W: Write>(img: &Image, mut out: W) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.rgb)?;
    Ok(())
}

pub fn save_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(img, &mut w)?;
    w.flush()?;
    Ok(())
}

fn next_token<R: BufRead>(input: &mut R) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && token.is_empty() {
            let mut skip = String::new();
            input.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(c);
    }
    if token.is_empty() {
        return Err(Error::Decode("unexpected end of PPM header".into()));
    }
    Ok(token)
}

pub fn read_ppm<R: Read>(input: R) -> Result<Image> {
    let mut input = BufReader::new(input);
    if next_token(&mut input)? != "P6" {
        return Err(Error::Decode("not a binary PPM".into()));
    }
    let mut num = || -> Result<u32> {
        next_token(&mut input)?.parse().map_err(|_| Error::Decode("bad PPM header field".into()))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(Error::Decode(format!("unsupported PPM maxval {maxval}")));
    }
    let mut rgb = vec![0u8; width as usize * height as usize * 3];
    input.read_exact(&mut rgb)?;
    Image::new(width, height, rgb)
}

pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    for p in &cloud.points {
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2]
        )?;
    }
    Ok(())
}

pub fn save_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads back files produced by [`write_ply`].
pub fn read_ply<R: Read>(input: R) -> Result<PointCloud> {
    let bad = |m: &str| Error::Decode(format!("PLY: {m}"));
    let mut lines = BufReader::new(input).lines();
    let mut count = None;
    for line in lines.by_ref() {
        let line = line?;
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad("vertex count"))?);
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("vertex line needs 6 fields"));
        }
        let c = |i: usize| f[i].parse::<f64>().map_err(|_| bad("coordinate"));
        let u = |i: usize| f[i].parse::<u8>().map_err(|_| bad("color"));
        points.push(CloudPoint { position: Vec3::new(c(0)?, c(1)?, c(2)?), color: [u(3)?, u(4)?, u(5)?] });
    }
    if points.len() != count {
        return Err(bad("truncated vertex list"));
    }
    Ok(PointCloud { points })
}
