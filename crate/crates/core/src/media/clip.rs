use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::media::{DisparityMap, Frame};

/// An ordered, non-empty sequence of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    /// Frames per second; metadata only.
    pub fps: f64,
}

impl VideoClip {
    pub const DEFAULT_FPS: f64 = 30.0;

    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a clip needs at least one frame".into()))?;
        let dims = first.dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::ShapeMismatch(format!(
                "frame {i} is {}x{}, frame 0 is {}x{}",
                f.width(),
                f.height(),
                dims.1,
                dims.0
            )));
        }
        Ok(VideoClip {
            frames,
            fps: Self::DEFAULT_FPS,
        })
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` shared by every frame.
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Applies `f` to every frame.
    pub fn map_frames(&self, f: impl Fn(&Frame) -> Frame) -> Result<VideoClip> {
        Ok(VideoClip::new(self.frames.iter().map(f).collect())?.with_fps(self.fps))
    }
}

/// A rectified left/right pair of clips with matching length and frame size.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoClip {
    pub left: VideoClip,
    pub right: VideoClip,
    pub rectified: bool,
}

impl StereoClip {
    pub fn new(left: VideoClip, right: VideoClip) -> Result<Self> {
        if left.len() != right.len() || left.dims() != right.dims() {
            return Err(Error::ShapeMismatch(format!(
                "stereo clip: left has {} frames of {:?}, right has {} frames of {:?}",
                left.len(),
                left.dims(),
                right.len(),
                right.dims()
            )));
        }
        Ok(StereoClip {
            left,
            right,
            rectified: true,
        })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// Files in `dir` whose stem is all digits and whose extension matches, sorted by index.
fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<(u64, PathBuf)>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let matches_ext = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(ext));
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse::<u64>().ok());
        if let (true, Some(index)) = (matches_ext, index) {
            files.push((index, path));
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyClip(dir.to_path_buf()));
    }
    files.sort();
    Ok(files)
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Frame::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image::save_buffer(
        path,
        &frame.to_rgb8(),
        frame.width() as u32,
        frame.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Unreadable {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Loads a directory of numbered PNG frames (`000.png`, `001.png`, ...).
pub fn load_clip(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let files = numbered_files(dir, "png")?;
    let mut frames: Vec<Frame> = Vec::with_capacity(files.len());
    for (_, path) in &files {
        let frame = load_frame(path)?;
        if let Some(first) = frames.first() {
            if first.dims() != frame.dims() {
                return Err(Error::FrameDimensionMismatch {
                    path: path.clone(),
                    expected_width: first.width(),
                    expected_height: first.height(),
                    found_width: frame.width(),
                    found_height: frame.height(),
                });
            }
        }
        frames.push(frame);
    }
    VideoClip::new(frames)
}

fn frame_name(index: usize, count: usize, ext: &str) -> String {
    if count > 1000 {
        format!("{index:06}.{ext}")
    } else {
        format!("{index:03}.{ext}")
    }
}

/// Writes frames as `%03d.png` (or `%06d.png` beyond 1000 frames), creating `dir`.
pub fn save_clip(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in clip.frames().iter().enumerate() {
        save_frame(f, dir.join(frame_name(i, clip.len(), "png")))?;
    }
    Ok(())
}

/// Loads a directory of numbered PFM disparity maps.
pub fn load_disparity_dir(dir: impl AsRef<Path>) -> Result<Vec<DisparityMap>> {
    numbered_files(dir.as_ref(), "pfm")?
        .iter()
        .map(|(_, p)| DisparityMap::load_pfm(p))
        .collect()
}

pub fn save_disparity_dir(maps: &[DisparityMap], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in maps.iter().enumerate() {
        m.save_pfm(dir.join(frame_name(i, maps.len(), "pfm")))?;
    }
    Ok(())
}

/// Writes boolean masks as 8-bit PNGs (255 = valid).
pub fn save_mask_dir(masks: &[(usize, usize, Vec<bool>)], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (h, w, m)) in masks.iter().enumerate() {
        let bytes: Vec<u8> = m.iter().map(|ok| if *ok { 255 } else { 0 }).collect();
        let path = dir.join(frame_name(i, masks.len(), "png"));
        image::save_buffer(
            &path,
            &bytes,
            *w as u32,
            *h as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Unreadable {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize, k: usize) -> Frame {
        Frame::from_fn(h, w, |u, v| {
            [
                ((u * 17 + k) % 256) as f32 / 255.0,
                ((v * 31) % 256) as f32 / 255.0,
                (((u + v) * 7) % 256) as f32 / 255.0,
            ]
        })
    }

    #[test]
    fn clip_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let clip = VideoClip::new((0..3).map(|k| gradient(6, 9, k)).collect()).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        assert!(dir.path().join("002.png").exists());
        let back = load_clip(dir.path()).unwrap();
        assert_eq!(back.frames(), clip.frames());
        // loading is pure
        assert_eq!(load_clip(dir.path()).unwrap(), back);
    }

    #[test]
    fn single_black_frame() {
        let dir = tempfile::tempdir().unwrap();
        save_frame(&Frame::zeros(4, 4), dir.path().join("0.png")).unwrap();
        let clip = load_clip(dir.path()).unwrap();
        assert_eq!(clip.len(), 1);
        assert!(clip.frames()[0].data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn frames_sorted_by_numeric_index() {
        let dir = tempfile::tempdir().unwrap();
        for (name, k) in [("10.png", 2), ("2.png", 1), ("001.png", 0)] {
            save_frame(&gradient(3, 3, k), dir.path().join(name)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let clip = load_clip(dir.path()).unwrap();
        assert_eq!(clip.frames()[0], gradient(3, 3, 0));
        assert_eq!(clip.frames()[2], gradient(3, 3, 2));
    }

    #[test]
    fn mixed_dimensions_name_the_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        save_frame(&Frame::zeros(8, 8), dir.path().join("000.png")).unwrap();
        save_frame(&Frame::zeros(16, 16), dir.path().join("001.png")).unwrap();
        match load_clip(dir.path()) {
            Err(Error::FrameDimensionMismatch { path, .. }) => {
                assert!(path.ends_with("001.png"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_unreadable() {
        assert!(matches!(
            load_clip("/nonexistent/clip/dir"),
            Err(Error::MissingDirectory(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_clip(dir.path()), Err(Error::EmptyClip(_))));
        fs::write(dir.path().join("000.png"), b"not a png").unwrap();
        match load_clip(dir.path()) {
            Err(Error::Unreadable { path, .. }) => assert!(path.ends_with("000.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stereo_clip_requires_matching_shapes() {
        let a = VideoClip::new(vec![Frame::zeros(4, 4)]).unwrap();
        let b = VideoClip::new(vec![Frame::zeros(4, 4), Frame::zeros(4, 4)]).unwrap();
        assert!(StereoClip::new(a.clone(), b).is_err());
        assert!(StereoClip::new(a.clone(), a).is_ok());
    }
}
