//! Uncompressed video ingestion and the spatial / temporal resampling
//! primitives shared by the rest of the pipeline.
//!
//! Only the luma plane is kept. Y4M (`C420` family) and headerless planar
//! YUV420 8-bit are supported; chroma bytes are skipped while reading.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Scale exponents accepted by [`spatial_downsample`].
pub const SUPPORTED_SCALES: [u32; 2] = [4, 5];

/// Side of the square patches the entropy model works on.
pub const PATCH_SIZE: usize = 5;

/// A frame rate as a reduced rational number of frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fps {
    num: u32,
    den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Argument(format!("frame rate {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Fps {
            num: num / g,
            den: den / g,
        })
    }

    /// Whole-number frame rate.
    pub fn integer(fps: u32) -> Result<Self> {
        Fps::new(fps, 1)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ord for Fps {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }
}

impl PartialOrd for Fps {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fps {
    type Err = Error;

    /// Accepts `120`, `120/1`, `30000/1001` and `120:1` (the Y4M spelling).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Argument(format!("cannot parse frame rate {s:?}"));
        let (num, den) = match s.split_once(['/', ':']) {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s, "1"),
        };
        let num = num.parse::<u32>().map_err(|_| bad())?;
        let den = den.parse::<u32>().map_err(|_| bad())?;
        Fps::new(num, den)
    }
}

impl Serialize for Fps {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pixel sample stored in a [`PlanarVideo`].
pub trait Sample: Copy + Send + Sync + PartialEq + fmt::Debug + 'static {
    fn to_f64(self) -> f64;
}

impl Sample for u8 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Sample for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// A sequence of luma planes sharing dimensions and frame rate.
///
/// Frames are row-major `width * height` buffers. The struct is immutable
/// once built; every resampling operation returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarVideo<T = f64> {
    width: usize,
    height: usize,
    fps: Fps,
    frames: Vec<Vec<T>>,
}

impl<T: Sample> PlanarVideo<T> {
    pub fn new(width: usize, height: usize, fps: Fps, frames: Vec<Vec<T>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty frame size {width}x{height}")));
        }
        if frames.is_empty() {
            return Err(Error::Argument("a video needs at least one frame".into()));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != width * height) {
            return Err(Error::Dimension(format!(
                "frame {i} has {} samples, expected {width}x{height}",
                f.len()
            )));
        }
        Ok(PlanarVideo {
            width,
            height,
            fps,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> Fps {
        self.fps
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Vec<T>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<Vec<T>> {
        self.frames
    }

    pub fn to_f64(&self) -> PlanarVideo<f64> {
        PlanarVideo {
            width: self.width,
            height: self.height,
            fps: self.fps,
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|s| s.to_f64()).collect())
                .collect(),
        }
    }

    /// Same frames, relabelled frame rate.
    pub fn with_fps(mut self, fps: Fps) -> Self {
        self.fps = fps;
        self
    }

    /// Keeps only the first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.frames.len() {
            return Err(Error::Argument(format!(
                "cannot truncate {} frames to {n}",
                self.frames.len()
            )));
        }
        Ok(PlanarVideo {
            width: self.width,
            height: self.height,
            fps: self.fps,
            frames: self.frames[..n].to_vec(),
        })
    }

    fn select(&self, indices: impl Iterator<Item = usize>, fps: Fps) -> Self {
        PlanarVideo {
            width: self.width,
            height: self.height,
            fps,
            frames: indices.map(|i| self.frames[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixFormat {
    Yuv420p,
}

/// Where to find a video and how to interpret it.
///
/// Y4M files carry their own geometry and frame rate; headerless YUV needs
/// `dims` and `declared_fps`. For Y4M input a declared rate, when present,
/// must agree with the header.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub path: PathBuf,
    pub pix_format: PixFormat,
    pub declared_fps: Option<Fps>,
    pub dims: Option<(usize, usize)>,
}

impl VideoMeta {
    pub fn y4m(path: impl Into<PathBuf>) -> Self {
        VideoMeta {
            path: path.into(),
            pix_format: PixFormat::Yuv420p,
            declared_fps: None,
            dims: None,
        }
    }

    pub fn raw(path: impl Into<PathBuf>, width: usize, height: usize, fps: Fps) -> Self {
        VideoMeta {
            path: path.into(),
            pix_format: PixFormat::Yuv420p,
            declared_fps: Some(fps),
            dims: Some((width, height)),
        }
    }
}

const Y4M_MAGIC: &[u8] = b"YUV4MPEG2";

/// Reads the luma planes of a Y4M or raw YUV420p file.
pub fn read_video(meta: &VideoMeta) -> Result<PlanarVideo<u8>> {
    let bytes = fs::read(&meta.path).map_err(|e| Error::io(&meta.path, e))?;
    if bytes.is_empty() {
        return Err(Error::io(
            &meta.path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "file is empty"),
        ));
    }
    if bytes.starts_with(Y4M_MAGIC) {
        let video = parse_y4m(&bytes)?;
        if let Some(fps) = meta.declared_fps {
            if fps != video.fps {
                return Err(Error::Format(format!(
                    "{}: header frame rate {} disagrees with declared {fps}",
                    meta.path.display(),
                    video.fps
                )));
            }
        }
        Ok(video)
    } else {
        let (width, height) = meta.dims.ok_or_else(|| {
            Error::Argument(format!(
                "{} has no Y4M header; width and height are required",
                meta.path.display()
            ))
        })?;
        let fps = meta.declared_fps.ok_or_else(|| {
            Error::Argument(format!(
                "{} has no Y4M header; a frame rate is required",
                meta.path.display()
            ))
        })?;
        parse_raw_yuv420(&bytes, width, height, fps)
    }
}

fn chroma_len(width: usize, height: usize) -> usize {
    width.div_ceil(2) * height.div_ceil(2)
}

/// Parses a headerless planar YUV420p byte stream.
pub fn parse_raw_yuv420(bytes: &[u8], width: usize, height: usize, fps: Fps) -> Result<PlanarVideo<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("invalid frame size {width}x{height}")));
    }
    let luma = width * height;
    let frame_len = luma + 2 * chroma_len(width, height);
    if !bytes.len().is_multiple_of(frame_len) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {width}x{height} yuv420p frames ({frame_len} bytes each)",
            bytes.len()
        )));
    }
    let frames = bytes.chunks_exact(frame_len).map(|c| c[..luma].to_vec()).collect();
    PlanarVideo::new(width, height, fps, frames)
}

/// Parses a complete Y4M stream held in memory.
pub fn parse_y4m(bytes: &[u8]) -> Result<PlanarVideo<u8>> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("unterminated Y4M header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Format("Y4M header is not ASCII".into()))?;
    let mut tokens = header.split(' ').filter(|t| !t.is_empty());
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(Error::Format("missing YUV4MPEG2 signature".into()));
    }

    let (mut width, mut height, mut fps) = (None, None, None);
    for tok in tokens {
        let (tag, value) = tok.split_at(1);
        match tag {
            "W" => width = Some(parse_dim(value, "W")?),
            "H" => height = Some(parse_dim(value, "H")?),
            "F" => fps = Some(value.parse::<Fps>().map_err(|_| Error::Format(format!("bad F tag {value:?}")))?),
            "C" => match value {
                "420" | "420jpeg" | "420paldv" | "420mpeg2" => {}
                other => return Err(Error::Format(format!("unsupported pixel format C{other}"))),
            },
            // interlacing, aspect ratio and extensions do not affect the payload
            "I" | "A" | "X" => {}
            other => return Err(Error::Format(format!("unknown Y4M header tag {other:?}"))),
        }
    }
    let width = width.ok_or_else(|| Error::Format("Y4M header lacks W".into()))?;
    let height = height.ok_or_else(|| Error::Format("Y4M header lacks H".into()))?;
    let fps = fps.ok_or_else(|| Error::Format("Y4M header lacks F".into()))?;

    let luma = width * height;
    let payload = luma + 2 * chroma_len(width, height);
    let mut frames = Vec::new();
    let mut pos = header_end + 1;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if !rest.starts_with(b"FRAME") {
            return Err(Error::Format(format!("expected FRAME marker at byte {pos}")));
        }
        let line_end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format(format!("unterminated FRAME header at byte {pos}")))?;
        let start = pos + line_end + 1;
        let end = start + payload;
        if end > bytes.len() {
            return Err(Error::Format(format!(
                "frame {} truncated: need {payload} bytes for {width}x{height}, {} available",
                frames.len(),
                bytes.len() - start.min(bytes.len())
            )));
        }
        frames.push(bytes[start..start + luma].to_vec());
        pos = end;
    }
    if frames.is_empty() {
        return Err(Error::Format("Y4M stream contains no frames".into()));
    }
    PlanarVideo::new(width, height, fps, frames)
}

fn parse_dim(value: &str, tag: &str) -> Result<usize> {
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format(format!("bad {tag} tag {value:?}"))),
    }
}

/// Serializes luma planes as a Y4M stream with neutral (128) chroma.
pub fn encode_y4m(video: &PlanarVideo<u8>) -> Vec<u8> {
    let (w, h) = (video.width(), video.height());
    let fps = video.fps();
    let mut out = format!("YUV4MPEG2 W{w} H{h} F{}:{} Ip A1:1 C420jpeg\n", fps.num(), fps.den()).into_bytes();
    let chroma = vec![128u8; 2 * chroma_len(w, h)];
    for frame in video.frames() {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(frame);
        out.extend_from_slice(&chroma);
    }
    out
}

pub fn write_y4m(path: &Path, video: &PlanarVideo<u8>) -> Result<()> {
    fs::write(path, encode_y4m(video)).map_err(|e| Error::io(path, e))
}

/// Average-pools non-overlapping `factor`×`factor` blocks; trailing partial
/// blocks are dropped.
pub fn block_mean_downsample<T: Sample>(v: &PlanarVideo<T>, factor: usize) -> Result<PlanarVideo<f64>> {
    if factor == 0 {
        return Err(Error::Argument("downsampling factor must be positive".into()));
    }
    let (ow, oh) = (v.width / factor, v.height / factor);
    if ow == 0 || oh == 0 {
        return Err(Error::Dimension(format!(
            "{}x{} frame is smaller than one {factor}x{factor} block",
            v.width, v.height
        )));
    }
    let norm = (factor * factor) as f64;
    let frames = v
        .frames
        .iter()
        .map(|frame| {
            let mut out = Vec::with_capacity(ow * oh);
            for by in 0..oh {
                for bx in 0..ow {
                    let mut sum = 0.0;
                    for y in by * factor..(by + 1) * factor {
                        let row = &frame[y * v.width + bx * factor..y * v.width + (bx + 1) * factor];
                        sum += row.iter().map(|s| s.to_f64()).sum::<f64>();
                    }
                    out.push(sum / norm);
                }
            }
            out
        })
        .collect();
    PlanarVideo::new(ow, oh, v.fps, frames)
}

/// Downscales by `2^s` for entropy estimation at scale `s`.
pub fn spatial_downsample<T: Sample>(v: &PlanarVideo<T>, s: u32) -> Result<PlanarVideo<f64>> {
    if !SUPPORTED_SCALES.contains(&s) {
        return Err(Error::Dimension(format!(
            "unsupported scale exponent {s}; expected one of {SUPPORTED_SCALES:?}"
        )));
    }
    let factor = 1usize << s;
    if v.width / factor < PATCH_SIZE || v.height / factor < PATCH_SIZE {
        return Err(Error::Dimension(format!(
            "{}x{} downscaled by {factor} leaves no {PATCH_SIZE}x{PATCH_SIZE} patch",
            v.width, v.height
        )));
    }
    block_mean_downsample(v, factor)
}

// Integer-exact rate conversion helpers. `num/den` is the (possibly
// fractional) source frame position of an output index.

fn resampled_len(n: usize, from: Fps, to: Fps) -> usize {
    let num = n as u128 * to.num as u128 * from.den as u128;
    let den = to.den as u128 * from.num as u128;
    (((2 * num + den) / (2 * den)) as usize).max(1)
}

fn source_position(j: usize, from: Fps, to: Fps) -> (u128, u128) {
    (
        j as u128 * to.den as u128 * from.num as u128,
        to.num as u128 * from.den as u128,
    )
}

/// Raises the frame rate by repeating frames.
///
/// Output frame `j` shows the source frame on screen at time `j / target`,
/// i.e. the latest source frame whose timestamp does not exceed it.
pub fn frame_duplicate_upsample<T: Sample>(v: &PlanarVideo<T>, target: Fps) -> Result<PlanarVideo<T>> {
    if target < v.fps {
        return Err(Error::Argument(format!(
            "cannot upsample {} fps video to lower rate {target}",
            v.fps
        )));
    }
    if target == v.fps {
        return Ok(v.clone());
    }
    let n = v.n_frames();
    let len = resampled_len(n, v.fps, target);
    let last = n - 1;
    let idx = (0..len).map(|j| {
        let (num, den) = source_position(j, v.fps, target);
        ((num / den) as usize).min(last)
    });
    Ok(v.select(idx, target))
}

/// Lowers the frame rate by picking, for every output timestamp, the
/// nearest source frame (ties go to the earlier frame).
pub fn temporal_subsample<T: Sample>(v: &PlanarVideo<T>, target: Fps) -> Result<PlanarVideo<T>> {
    if target > v.fps {
        return Err(Error::Argument(format!(
            "cannot subsample {} fps video to higher rate {target}",
            v.fps
        )));
    }
    if target == v.fps {
        return Ok(v.clone());
    }
    let n = v.n_frames();
    let len = resampled_len(n, v.fps, target);
    let last = n - 1;
    let idx = (0..len).map(|j| {
        let (num, den) = source_position(j, v.fps, target);
        (((2 * num + den - 1) / (2 * den)) as usize).min(last)
    });
    Ok(v.select(idx, target))
}
