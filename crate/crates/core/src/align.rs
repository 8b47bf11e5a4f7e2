//! Dataset-construction pipeline: flag-frame detection, frame-rate triplet
//! sampling, keypoint matching, robust homography estimation, and alignment
//! warping.
//!
//! Captured screen recordings are synchronized by all-white flag frames at
//! both ends, carry three captured frames per source frame (30 fps capture
//! of a 10 fps display), and are registered to the source frames with a
//! RANSAC-fitted homography over corner matches.

use std::path::Path;

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::SeededStream;
use crate::tensor::{bilinear_taps, Frame, VideoClip};

/// One keypoint correspondence: `src` in the source (displayed) frame,
/// `dst` in the captured frame, plus a match-quality score (higher better).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointMatch {
    pub src: (f64, f64),
    pub dst: (f64, f64),
    pub score: f64,
}

/// 3x3 projective map, normalized so the bottom-right entry is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let pivot = m[2][2];
        if pivot.abs() < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "homography cannot be normalized (h33 ~ 0)".into(),
            ));
        }
        let mut n = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                n[r][c] = m[r][c] / pivot;
            }
        }
        if det3(&n).abs() < 1e-12 {
            return Err(Error::SingularHomography);
        }
        Ok(Self { m: n })
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Map a point through the homography (homogeneous normalize).
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let w = self.m[2][0] * x + self.m[2][1] * y + self.m[2][2];
        (
            (self.m[0][0] * x + self.m[0][1] * y + self.m[0][2]) / w,
            (self.m[1][0] * x + self.m[1][1] * y + self.m[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = inv3(&self.m).ok_or(Error::SingularHomography)?;
        Homography::new(inv)
    }
}

/// Euclidean reprojection error of one match under `h`, in pixels.
pub fn reprojection_error(h: &Homography, m: &KeypointMatch) -> f64 {
    let (px, py) = h.apply(m.src.0, m.src.1);
    ((px - m.dst.0).powi(2) + (py - m.dst.1).powi(2)).sqrt()
}

/// RANSAC settings; seeded and iteration-count-fixed for reproducibility.
#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier reprojection threshold in pixels.
    pub inlier_threshold: f64,
    /// Minimum inliers for a model to be accepted.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold: 3.0,
            min_inliers: 12,
            seed: 0xA11C4,
        }
    }
}

// ---------------------------------------------------------------------------
// 3x3 and symmetric 9x9 linear algebra
// ---------------------------------------------------------------------------

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let d = det3(m);
    if d.abs() < 1e-15 {
        return None;
    }
    let inv_d = 1.0 / d;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d;
    Some(out)
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                out[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric 9x9 matrix. Returns
/// eigenvalues and eigenvectors (as columns).
fn jacobi9(mut a: [[f64; 9]; 9]) -> ([f64; 9], [[f64; 9]; 9]) {
    let mut v = [[0.0; 9]; 9];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..9 {
            for q in (p + 1)..9 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..8 {
            for q in (p + 1)..9 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..9 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..9 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..9 {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut eig = [0.0; 9];
    for i in 0..9 {
        eig[i] = a[i][i];
    }
    (eig, v)
}

// ---------------------------------------------------------------------------
// Flag frames and triplet sampling
// ---------------------------------------------------------------------------

/// Locate the content between the leading and trailing runs of white flag
/// frames: returns `(first_content, last_content)` frame indices.
///
/// A frame belongs to a flag run when its mean intensity reaches
/// `white_threshold` (default 0.9); a run counts only when at least
/// `run_length` frames long (default 2).
pub fn detect_flag_frames(
    clip: &VideoClip,
    white_threshold: f64,
    run_length: usize,
) -> Result<(usize, usize)> {
    let n = clip.len();
    let means: Vec<f64> = clip.frames().iter().map(|f| f.mean()).collect();
    let leading = means.iter().take_while(|&&m| m >= white_threshold).count();
    if leading < run_length {
        return Err(Error::FlagFramesNotFound("leading"));
    }
    let trailing = means
        .iter()
        .rev()
        .take_while(|&&m| m >= white_threshold)
        .count();
    if trailing < run_length {
        return Err(Error::FlagFramesNotFound("trailing"));
    }
    if leading + trailing >= n {
        return Err(Error::InvalidParameter(
            "no content frames between the flag runs".into(),
        ));
    }
    Ok((leading, n - 1 - trailing))
}

/// Keep the middle frame of every group of `ratio` consecutive frames
/// (30 fps capture of a 10 fps display gives ratio 3). The clip length must
/// divide evenly and `ratio` must be odd.
pub fn sample_intermediate(clip: &VideoClip, ratio: usize) -> Result<VideoClip> {
    if ratio == 0 || ratio % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "sampling ratio must be odd and positive, got {ratio}"
        )));
    }
    if clip.len() % ratio != 0 {
        return Err(Error::InvalidParameter(format!(
            "clip length {} not divisible by ratio {ratio}",
            clip.len()
        )));
    }
    if ratio == 1 {
        return Ok(clip.clone());
    }
    let mid = (ratio - 1) / 2;
    let frames = (0..clip.len() / ratio)
        .map(|g| clip.frame(g * ratio + mid).clone())
        .collect();
    VideoClip::new(frames, clip.frame_rate() / ratio as f64)
}

// ---------------------------------------------------------------------------
// Corner detection and matching
// ---------------------------------------------------------------------------

// Radius-3 Bresenham circle, 16 pixels, in ring order.
const RING: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const CORNER_ARC: usize = 9;
const CORNER_CONTRAST: f64 = 0.03;
const MAX_CORNERS: usize = 512;
const MATCH_WINDOW: usize = 15;
const MATCH_MARGIN: usize = MATCH_WINDOW / 2;
const MIN_NCC: f64 = 0.5;

fn grayscale(frame: &Frame) -> Vec<f64> {
    let (h, w, ch) = frame.shape();
    let mut out = vec![0.0; h * w];
    let inv = 1.0 / ch as f64;
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for c in 0..ch {
                sum += frame.get(y, x, c);
            }
            out[y * w + x] = sum * inv;
        }
    }
    out
}

/// Longest circular run of `true` flags, capped at the ring length.
fn max_circular_run(flags: &[bool; 16]) -> usize {
    if flags.iter().all(|&f| f) {
        return 16;
    }
    let mut best = 0;
    let mut run = 0;
    for i in 0..32 {
        if flags[i % 16] {
            run += 1;
            best = best.max(run.min(16));
        } else {
            run = 0;
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Corner {
    x: usize,
    y: usize,
    score: f64,
}

/// Segment-test corner detector: a pixel is a corner when at least
/// [`CORNER_ARC`] contiguous ring pixels are all brighter than `p + t` or
/// all darker than `p - t`. Scores feed 3x3 non-maximum suppression.
fn detect_corners(gray: &[f64], h: usize, w: usize) -> Vec<Corner> {
    if h < 7 || w < 7 {
        return Vec::new();
    }
    let score_rows: Vec<Vec<f64>> = parallel::map_indices(h, |y| {
        let mut row = vec![0.0; w];
        if y < 3 || y >= h - 3 {
            return row;
        }
        for x in 3..w - 3 {
            let p = gray[y * w + x];
            let mut ring = [0.0; 16];
            for (i, (dx, dy)) in RING.iter().enumerate() {
                ring[i] = gray[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            }
            let mut brighter = [false; 16];
            let mut darker = [false; 16];
            for i in 0..16 {
                brighter[i] = ring[i] > p + CORNER_CONTRAST;
                darker[i] = ring[i] < p - CORNER_CONTRAST;
            }
            let is_corner = max_circular_run(&brighter) >= CORNER_ARC
                || max_circular_run(&darker) >= CORNER_ARC;
            if is_corner {
                let mut score = 0.0;
                for i in 0..16 {
                    if brighter[i] || darker[i] {
                        score += (ring[i] - p).abs() - CORNER_CONTRAST;
                    }
                }
                row[x] = score;
            }
        }
        row
    });

    // 3x3 non-maximum suppression, then collect.
    let mut corners = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let s = score_rows[y][x];
            if s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let ny = (y as isize + dy) as usize;
                    let nx = (x as isize + dx) as usize;
                    let other = score_rows[ny][nx];
                    // Strictly-greater neighbours win; ties go to the
                    // first pixel in scan order.
                    if other > s || (other == s && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push(Corner { x, y, score: s });
            }
        }
    }
    corners.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    corners.truncate(MAX_CORNERS);
    corners
}

/// Mean-subtracted match window around a corner, plus its norm.
fn patch_vector(gray: &[f64], w: usize, corner: &Corner) -> (Vec<f64>, f64) {
    let mut patch = Vec::with_capacity(MATCH_WINDOW * MATCH_WINDOW);
    for dy in 0..MATCH_WINDOW {
        for dx in 0..MATCH_WINDOW {
            let y = corner.y + dy - MATCH_MARGIN;
            let x = corner.x + dx - MATCH_MARGIN;
            patch.push(gray[y * w + x]);
        }
    }
    let mean = patch.iter().sum::<f64>() / patch.len() as f64;
    for v in patch.iter_mut() {
        *v -= mean;
    }
    let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
    (patch, norm)
}

/// Detect corners in both frames and match them by normalized
/// cross-correlation over 15x15 windows with mutual-best filtering.
/// Returns at most `max_matches` matches sorted by score descending.
pub fn detect_and_match(
    src: &Frame,
    dst: &Frame,
    max_matches: usize,
) -> Result<Vec<KeypointMatch>> {
    let (sh, sw, _) = src.shape();
    let (dh, dw, _) = dst.shape();
    let gray_src = grayscale(src);
    let gray_dst = grayscale(dst);
    let margin_ok =
        |c: &Corner, h: usize, w: usize| -> bool {
            c.x >= MATCH_MARGIN && c.y >= MATCH_MARGIN && c.x + MATCH_MARGIN < w && c.y + MATCH_MARGIN < h
        };
    let corners_src: Vec<Corner> = detect_corners(&gray_src, sh, sw)
        .into_iter()
        .filter(|c| margin_ok(c, sh, sw))
        .collect();
    let corners_dst: Vec<Corner> = detect_corners(&gray_dst, dh, dw)
        .into_iter()
        .filter(|c| margin_ok(c, dh, dw))
        .collect();
    if corners_src.len() < 4 || corners_dst.len() < 4 {
        return Err(Error::InsufficientMatches {
            found: corners_src.len().min(corners_dst.len()),
            needed: 4,
        });
    }

    let patches_src: Vec<(Vec<f64>, f64)> = corners_src
        .iter()
        .map(|c| patch_vector(&gray_src, sw, c))
        .collect();
    let patches_dst: Vec<(Vec<f64>, f64)> = corners_dst
        .iter()
        .map(|c| patch_vector(&gray_dst, dw, c))
        .collect();

    // Best destination per source corner (and the full score rows for the
    // mutual check).
    let best_for_src: Vec<(usize, f64)> = parallel::map_indices(corners_src.len(), |i| {
        let (pa, na) = &patches_src[i];
        let mut best = (usize::MAX, -1.0);
        for (j, (pb, nb)) in patches_dst.iter().enumerate() {
            if *na < 1e-12 || *nb < 1e-12 {
                continue;
            }
            let dot: f64 = pa.iter().zip(pb).map(|(a, b)| a * b).sum();
            let ncc = dot / (na * nb);
            if ncc > best.1 {
                best = (j, ncc);
            }
        }
        best
    });
    let best_for_dst: Vec<(usize, f64)> = parallel::map_indices(corners_dst.len(), |j| {
        let (pb, nb) = &patches_dst[j];
        let mut best = (usize::MAX, -1.0);
        for (i, (pa, na)) in patches_src.iter().enumerate() {
            if *na < 1e-12 || *nb < 1e-12 {
                continue;
            }
            let dot: f64 = pa.iter().zip(pb).map(|(a, b)| a * b).sum();
            let ncc = dot / (na * nb);
            if ncc > best.1 {
                best = (i, ncc);
            }
        }
        best
    });

    let mut matches = Vec::new();
    for (i, &(j, ncc)) in best_for_src.iter().enumerate() {
        if j == usize::MAX || ncc < MIN_NCC {
            continue;
        }
        if best_for_dst[j].0 == i {
            matches.push(KeypointMatch {
                src: (corners_src[i].x as f64, corners_src[i].y as f64),
                dst: (corners_dst[j].x as f64, corners_dst[j].y as f64),
                score: ncc,
            });
        }
    }
    matches.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.src.partial_cmp(&b.src).unwrap())
    });
    matches.truncate(max_matches);
    if matches.len() < 4 {
        return Err(Error::InsufficientMatches {
            found: matches.len(),
            needed: 4,
        });
    }
    Ok(matches)
}

// ---------------------------------------------------------------------------
// DLT and RANSAC
// ---------------------------------------------------------------------------

/// Hartley normalization: translate the centroid to the origin and scale
/// the mean distance to sqrt(2).
fn normalize_points(points: &[(f64, f64)]) -> Result<([[f64; 3]; 3], Vec<(f64, f64)>)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "all points coincide; cannot normalize".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]];
    let mapped = points
        .iter()
        .map(|p| (s * (p.0 - cx), s * (p.1 - cy)))
        .collect();
    Ok((t, mapped))
}

/// Least-squares projective map via the normalized direct linear transform:
/// Hartley-normalize both point sets, build the 2n x 9 system, take the
/// smallest eigenvector of its normal matrix, and denormalize. Exact for 4
/// perfect correspondences; rank-deficient configurations (e.g. 3 collinear
/// source points) are rejected.
pub fn homography_dlt(matches: &[KeypointMatch]) -> Result<Homography> {
    if matches.len() < 4 {
        return Err(Error::InsufficientMatches {
            found: matches.len(),
            needed: 4,
        });
    }
    let src: Vec<(f64, f64)> = matches.iter().map(|m| m.src).collect();
    let dst: Vec<(f64, f64)> = matches.iter().map(|m| m.dst).collect();
    let (t_src, src_n) = normalize_points(&src)?;
    let (t_dst, dst_n) = normalize_points(&dst)?;

    // Accumulate A^T A over the two rows each correspondence contributes.
    let mut ata = [[0.0f64; 9]; 9];
    for ((x, y), (u, v)) in src_n.iter().zip(&dst_n) {
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, *u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, *v];
        for i in 0..9 {
            for j in i..9 {
                let add = r1[i] * r1[j] + r2[i] * r2[j];
                ata[i][j] += add;
                if i != j {
                    ata[j][i] += add;
                }
            }
        }
    }

    let (eig, vecs) = jacobi9(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig[a].partial_cmp(&eig[b]).unwrap());
    let max_eig = eig[order[8]].abs().max(1e-30);
    // A unique solution leaves exactly one (near-)zero eigenvalue.
    if eig[order[1]].abs() <= 1e-9 * max_eig {
        return Err(Error::DegenerateGeometry(
            "rank-deficient correspondence set".into(),
        ));
    }
    let h_col = order[0];
    let hn = [
        [vecs[0][h_col], vecs[1][h_col], vecs[2][h_col]],
        [vecs[3][h_col], vecs[4][h_col], vecs[5][h_col]],
        [vecs[6][h_col], vecs[7][h_col], vecs[8][h_col]],
    ];
    let t_dst_inv = inv3(&t_dst).ok_or(Error::SingularHomography)?;
    let h = mat3_mul(&t_dst_inv, &mat3_mul(&hn, &t_src));
    Homography::new(h)
}

/// Seeded RANSAC around the 4-point DLT. The best model maximizes the
/// inlier count (ties broken by lower mean inlier error, then iteration
/// index) and is re-fit on all of its inliers before returning. Fails when
/// the best inlier count stays below `cfg.min_inliers`.
pub fn ransac_homography(
    matches: &[KeypointMatch],
    cfg: &RansacConfig,
) -> Result<(Homography, Vec<usize>)> {
    if matches.len() < 4 {
        return Err(Error::InsufficientMatches {
            found: matches.len(),
            needed: 4,
        });
    }
    if cfg.iterations == 0 || cfg.inlier_threshold <= 0.0 {
        return Err(Error::InvalidParameter(
            "ransac needs iterations >= 1 and a positive threshold".into(),
        ));
    }

    struct Candidate {
        count: usize,
        mean_err: f64,
        h: Homography,
    }

    // Each iteration draws its own stream from (seed, iteration).
    let candidates: Vec<Option<Candidate>> = parallel::map_indices(cfg.iterations, |iter| {
        let mut rng = SeededStream::new(cfg.seed, iter as u64);
        let mut picks = [0usize; 4];
        let mut chosen = 0;
        let mut guard = 0;
        while chosen < 4 {
            guard += 1;
            if guard > 1000 {
                return None;
            }
            let idx = rng.next_index(matches.len());
            if picks[..chosen].contains(&idx) {
                continue;
            }
            picks[chosen] = idx;
            chosen += 1;
        }
        let sample = [
            matches[picks[0]],
            matches[picks[1]],
            matches[picks[2]],
            matches[picks[3]],
        ];
        let h = homography_dlt(&sample).ok()?;
        let mut count = 0;
        let mut err_sum = 0.0;
        for m in matches {
            let e = reprojection_error(&h, m);
            if e <= cfg.inlier_threshold {
                count += 1;
                err_sum += e;
            }
        }
        if count < 4 {
            return None;
        }
        Some(Candidate {
            count,
            mean_err: err_sum / count as f64,
            h,
        })
    });

    let mut best: Option<Candidate> = None;
    for cand in candidates.into_iter().flatten() {
        let replace = match &best {
            None => true,
            Some(b) => {
                cand.count > b.count || (cand.count == b.count && cand.mean_err < b.mean_err)
            }
        };
        if replace {
            best = Some(cand);
        }
    }
    let best = best.ok_or(Error::RansacFailed {
        best: 0,
        needed: cfg.min_inliers,
    })?;
    if best.count < cfg.min_inliers {
        return Err(Error::RansacFailed {
            best: best.count,
            needed: cfg.min_inliers,
        });
    }

    let inliers: Vec<usize> = matches
        .iter()
        .enumerate()
        .filter(|(_, m)| reprojection_error(&best.h, m) <= cfg.inlier_threshold)
        .map(|(i, _)| i)
        .collect();
    let inlier_matches: Vec<KeypointMatch> = inliers.iter().map(|&i| matches[i]).collect();
    // Refit on all inliers; fall back to the minimal model if the refit
    // hits a degenerate configuration.
    let refit = homography_dlt(&inlier_matches).unwrap_or(best.h);
    Ok((refit, inliers))
}

/// Inverse-mapping homography warp: each output pixel samples `src` at
/// `h^{-1} (x, y, 1)` with bilinear interpolation and border clamping.
pub fn warp_homography(
    src: &Frame,
    h: &Homography,
    out_height: usize,
    out_width: usize,
) -> Result<Frame> {
    let inv = h.inverse()?;
    let ch = src.channels();
    let mut out = Frame::zeros(out_height, out_width, ch);
    let row_len = out_width * ch;
    parallel::for_each_chunk(out.data_mut(), row_len, |y, row| {
        for x in 0..out_width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let taps = bilinear_taps(src.height(), src.width(), sx, sy);
            for c in 0..ch {
                let mut v = 0.0;
                for t in &taps {
                    v += t.weight * src.get(t.y, t.x, c);
                }
                row[x * ch + c] = v;
            }
        }
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Match-list text format
// ---------------------------------------------------------------------------

/// Read a match list: one `sx sy dx dy score` line per match,
/// whitespace-separated decimals.
pub fn read_match_file(path: &Path) -> Result<Vec<KeypointMatch>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::InvalidParameter(format!("match file line {}: bad number", lineno + 1))
            })?;
        if nums.len() != 5 {
            return Err(Error::InvalidParameter(format!(
                "match file line {}: expected 5 fields, got {}",
                lineno + 1,
                nums.len()
            )));
        }
        out.push(KeypointMatch {
            src: (nums[0], nums[1]),
            dst: (nums[2], nums[3]),
            score: nums[4],
        });
    }
    Ok(out)
}

/// Write a match list in the text format read by [`read_match_file`].
pub fn write_match_file(matches: &[KeypointMatch], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    for m in matches {
        writeln!(file, "{} {} {} {} {}", m.src.0, m.src.1, m.dst.0, m.dst.1, m.score)?;
    }
    Ok(())
}
