//! Score-map providers: precomputed PFM files, a ground-truth mock, and a
//! remote HTTP model service.
//!
//! Remote wire format, request: `POST <endpoint>/score` with body
//! `"<H> <W>\n"` followed by `H*W*3` row-major RGB bytes. Response: two
//! payloads (cyst, then boundary), each an 8-byte little-endian length
//! followed by that many bytes of grayscale PFM.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, RgbGrid, ScoreMap, TileOrigin};
use crate::io::{decode_pfm_prefix, encode_pfm, read_score_map};
use crate::morphology::{boundary_map, DEFAULT_BOUNDARY_RADIUS};
use crate::synthgen::{random_shape, DebrisShape, Placer, MIN_CYST_AREA};
use crate::tiler::crop_reflected;

/// Cyst and boundary head outputs for one tile or image.
#[derive(Clone, PartialEq, Debug)]
pub struct HeadScores {
    pub cyst: ScoreMap,
    pub boundary: ScoreMap,
}

/// One unit of scoring work. `origin` refers to the (possibly padded) image
/// canvas of the tiling plan.
#[derive(Clone, Copy, Debug)]
pub struct TileRequest<'a> {
    pub tile_id: &'a str,
    pub origin: TileOrigin,
    pub height: usize,
    pub width: usize,
    pub rgb: Option<&'a RgbGrid>,
}

pub trait ScoreProvider: Send + Sync {
    fn score_tile(&self, request: &TileRequest<'_>) -> Result<HeadScores>;
}

/// Provider selection as it appears in configuration.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerKind {
    File,
    Mock(MockParams),
    Remote(RemoteParams),
}

/// Stable 64-bit key for seeding per-(seed, id) random streams.
pub fn stream_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, then a splitmix64 finalizer mixed with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(29);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_tile_shape(scores: &HeadScores, request: &TileRequest<'_>) -> Result<()> {
    for map in [&scores.cyst, &scores.boundary] {
        if map.dims() != (request.height, request.width) {
            return Err(Error::DimensionMismatch {
                expected: (request.height, request.width),
                found: map.dims(),
            });
        }
        map.validate_scores()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// FILE

/// Reads `<stem>.cyst.pfm` / `<stem>.boundary.pfm`.
///
/// If image-level maps exist at `base` they are cropped per tile (reflecting
/// past the image edge). Otherwise each tile is read from
/// `<base>.<row>_<col>.{cyst,boundary}.pfm`.
pub struct FileScorer {
    base: PathBuf,
    image_maps: OnceLock<Option<HeadScores>>,
}

pub fn score_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{s}.cyst.pfm")),
        PathBuf::from(format!("{s}.boundary.pfm")),
    )
}

pub fn tile_stem(base: &Path, origin: TileOrigin) -> PathBuf {
    let s = base.as_os_str().to_string_lossy();
    PathBuf::from(format!("{s}.{}_{}", origin.row, origin.col))
}

impl FileScorer {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self {
            base: base.into(),
            image_maps: OnceLock::new(),
        }
    }

    fn load_pair(stem: &Path, tile_id: &str) -> Result<HeadScores> {
        let (cp, bp) = score_paths(stem);
        for p in [&cp, &bp] {
            if !p.exists() {
                return Err(Error::MissingScoreFile {
                    tile_id: tile_id.to_string(),
                    path: p.display().to_string(),
                });
            }
        }
        let cyst = read_score_map(&cp)?;
        let boundary = read_score_map(&bp)?;
        cyst.ensure_same_dims(&boundary)?;
        Ok(HeadScores { cyst, boundary })
    }

    fn image_maps(&self) -> Result<Option<&HeadScores>> {
        if let Some(cached) = self.image_maps.get() {
            return Ok(cached.as_ref());
        }
        let (cp, bp) = score_paths(&self.base);
        let loaded = if cp.exists() && bp.exists() {
            Some(Self::load_pair(&self.base, &self.base.display().to_string())?)
        } else {
            None
        };
        Ok(self.image_maps.get_or_init(|| loaded).as_ref())
    }

    /// Image-level dimensions if image-level maps exist.
    pub fn image_dims(&self) -> Result<Option<(usize, usize)>> {
        Ok(self.image_maps()?.map(|m| m.cyst.dims()))
    }
}

impl ScoreProvider for FileScorer {
    fn score_tile(&self, request: &TileRequest<'_>) -> Result<HeadScores> {
        let scores = match self.image_maps()? {
            Some(maps) => HeadScores {
                cyst: crop_reflected(&maps.cyst, request.origin, request.height, request.width),
                boundary: crop_reflected(
                    &maps.boundary,
                    request.origin,
                    request.height,
                    request.width,
                ),
            },
            None => Self::load_pair(&tile_stem(&self.base, request.origin), request.tile_id)?,
        };
        check_tile_shape(&scores, request)?;
        Ok(scores)
    }
}

// ---------------------------------------------------------------------------
// MOCK

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MockParams {
    pub noise_sigma: f64,
    pub blur_radius: usize,
    pub seed: u64,
    /// Expected number of injected debris blobs per image (Poisson mean).
    pub debris_rate: f64,
    pub debris_axes: (f64, f64),
}

impl Default for MockParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            blur_radius: 0,
            seed: 0,
            debris_rate: 0.0,
            debris_axes: (16.0, 30.0),
        }
    }
}

impl MockParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.debris_rate >= 0.0 && self.debris_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "debris rate must be >= 0, got {}",
                self.debris_rate
            )));
        }
        Ok(())
    }
}

/// Mean over the in-image part of the `(2r+1)²` window.
pub fn box_blur(map: &ScoreMap, radius: usize) -> ScoreMap {
    if radius == 0 {
        return map.clone();
    }
    let (h, w) = map.dims();
    let mut sat = vec![0f64; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut run = 0f64;
        for c in 0..w {
            run += f64::from(*map.get(r, c));
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + run;
        }
    }
    Grid::from_fn(h, w, |r, c| {
        let r0 = r.saturating_sub(radius);
        let c0 = c.saturating_sub(radius);
        let r1 = (r + radius + 1).min(h);
        let c1 = (c + radius + 1).min(w);
        let s = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0]
            + sat[r0 * (w + 1) + c0];
        (s / ((r1 - r0) * (c1 - c0)) as f64) as f32
    })
}

fn clean_maps(instances: &LabelMap, blur_radius: usize) -> HeadScores {
    let cyst = instances.map(|&l| if l != 0 { 1.0f32 } else { 0.0 });
    let boundary = boundary_map(instances, DEFAULT_BOUNDARY_RADIUS).map(|&b| if b { 1.0f32 } else { 0.0 });
    HeadScores {
        cyst: box_blur(&cyst, blur_radius),
        boundary: box_blur(&boundary, blur_radius),
    }
}

fn add_noise(map: &mut ScoreMap, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        for v in map.as_mut_slice() {
            *v = (f64::from(*v) + normal.sample(rng)) as f32;
        }
    }
    for v in map.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Noise-free maps from ground truth, then box blur, seeded Gaussian noise,
/// and clamping to `[0, 1]`.
pub fn mock_from_ground_truth(
    gt: &LabelMap,
    noise_sigma: f64,
    blur_radius: usize,
    seed: u64,
) -> Result<HeadScores> {
    let params = MockParams {
        noise_sigma,
        blur_radius,
        seed,
        ..Default::default()
    };
    params.validate()?;
    let mut maps = clean_maps(gt, blur_radius);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, ""));
    add_noise(&mut maps.cyst, noise_sigma, &mut rng);
    add_noise(&mut maps.boundary, noise_sigma, &mut rng);
    Ok(maps)
}

/// Plays the role of a perfect model for one image: tiles are cut from
/// image-level maps derived from ground truth, optionally with injected
/// debris blobs, then noised per tile.
pub struct MockScorer {
    params: MockParams,
    maps: HeadScores,
    injected: usize,
}

impl MockScorer {
    /// `image_key` identifies the image in the debris random stream.
    pub fn new(gt: &LabelMap, params: MockParams, image_key: &str) -> Result<Self> {
        params.validate()?;
        let (h, w) = gt.dims();
        let mut combined = gt.clone();
        let mut injected = 0;
        if params.debris_rate > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, &format!("{image_key}#debris")));
            let count = Poisson::new(params.debris_rate)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0);
            let mut placer = Placer::new(h, w, 4);
            let occupied: Vec<usize> = gt
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != 0)
                .map(|(i, _)| i)
                .collect();
            placer.occupy(&occupied);
            let mut next = gt.max_label();
            for _ in 0..count {
                for _attempt in 0..200 {
                    let shape = random_shape(&mut rng, DebrisShape::Ellipse, params.debris_axes, h, w);
                    if let Some(px) = placer.try_place(&shape, MIN_CYST_AREA) {
                        next += 1;
                        for p in px {
                            combined.as_mut_slice()[p] = next;
                        }
                        injected += 1;
                        break;
                    }
                }
            }
        }
        Ok(Self {
            params,
            maps: clean_maps(&combined, params.blur_radius),
            injected,
        })
    }

    /// Number of debris blobs painted into the maps.
    pub fn injected_debris(&self) -> usize {
        self.injected
    }

    /// The noise-free image-level maps tiles are cut from.
    pub fn image_maps(&self) -> &HeadScores {
        &self.maps
    }
}

impl ScoreProvider for MockScorer {
    fn score_tile(&self, request: &TileRequest<'_>) -> Result<HeadScores> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.params.seed, request.tile_id));
        let (h, w) = (request.height, request.width);
        let mut cyst = crop_reflected(&self.maps.cyst, request.origin, h, w);
        let mut boundary = crop_reflected(&self.maps.boundary, request.origin, h, w);
        add_noise(&mut cyst, self.params.noise_sigma, &mut rng);
        add_noise(&mut boundary, self.params.noise_sigma, &mut rng);
        Ok(HeadScores { cyst, boundary })
    }
}

// ---------------------------------------------------------------------------
// REMOTE

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteParams {
    pub endpoint: String,
    /// Additional attempts after the first failed one.
    pub retries: usize,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for RemoteParams {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            retries: 2,
            max_in_flight: 4,
            timeout_ms: 60_000,
        }
    }
}

pub fn encode_score_request(rgb: &RgbGrid) -> Vec<u8> {
    let (h, w) = rgb.dims();
    let mut body = format!("{h} {w}\n").into_bytes();
    body.reserve(h * w * 3);
    for px in rgb.as_slice() {
        body.extend_from_slice(px);
    }
    body
}

pub fn decode_score_request(body: &[u8]) -> Result<RgbGrid> {
    let nl = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidParameter("request header missing".into()))?;
    let header = std::str::from_utf8(&body[..nl])
        .map_err(|_| Error::InvalidParameter("request header not UTF-8".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidParameter(format!("bad request header {header:?}")))?;
    let [h, w] = dims[..] else {
        return Err(Error::InvalidParameter(format!("bad request header {header:?}")));
    };
    let raw = &body[nl + 1..];
    if raw.len() != h * w * 3 {
        return Err(Error::InvalidParameter(format!(
            "expected {} RGB bytes, got {}",
            h * w * 3,
            raw.len()
        )));
    }
    let px = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Grid::from_vec(h, w, px)
}

pub fn encode_score_response(scores: &HeadScores) -> Vec<u8> {
    let mut out = Vec::new();
    for map in [&scores.cyst, &scores.boundary] {
        let pfm = encode_pfm(map);
        out.extend_from_slice(&(pfm.len() as u64).to_le_bytes());
        out.extend_from_slice(&pfm);
    }
    out
}

pub fn decode_score_response(body: &[u8]) -> Result<HeadScores> {
    let mut rest = body;
    let mut maps = Vec::with_capacity(2);
    for _ in 0..2 {
        if rest.len() < 8 {
            return Err(Error::Pfm("response truncated before length prefix".into()));
        }
        let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        rest = &rest[8..];
        if rest.len() < len {
            return Err(Error::Pfm(format!(
                "response payload truncated: {} of {len} bytes",
                rest.len()
            )));
        }
        let (map, used) = decode_pfm_prefix(&rest[..len])?;
        if used != len {
            return Err(Error::Pfm("length prefix disagrees with PFM payload".into()));
        }
        maps.push(map);
        rest = &rest[len..];
    }
    if !rest.is_empty() {
        return Err(Error::Pfm(format!("{} trailing response bytes", rest.len())));
    }
    let boundary = maps.pop().expect("two maps");
    let cyst = maps.pop().expect("two maps");
    Ok(HeadScores { cyst, boundary })
}

/// Counting semaphore bounding concurrent remote calls.
struct InFlightLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.available.lock().expect("limit lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("limit lock");
        }
        *n -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlightLimit);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limit lock") += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteScorer {
    url: String,
    retries: usize,
    client: reqwest::blocking::Client,
    limit: Arc<InFlightLimit>,
}

impl RemoteScorer {
    pub fn new(params: &RemoteParams) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(params.timeout_ms))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("http client: {e}")))?;
        Ok(Self {
            url: format!("{}/score", params.endpoint.trim_end_matches('/')),
            retries: params.retries,
            client,
            limit: Arc::new(InFlightLimit::new(params.max_in_flight)),
        })
    }

    fn call_once(&self, body: &[u8]) -> std::result::Result<Vec<u8>, String> {
        let _slot = self.limit.acquire();
        let resp = self
            .client
            .post(&self.url)
            .header("content-type", "application/octet-stream")
            .body(body.to_vec())
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        resp.bytes().map(|b| b.to_vec()).map_err(|e| e.to_string())
    }
}

impl ScoreProvider for RemoteScorer {
    fn score_tile(&self, request: &TileRequest<'_>) -> Result<HeadScores> {
        let rgb = request.rgb.ok_or_else(|| {
            Error::InvalidParameter(format!("remote scoring of {} needs RGB input", request.tile_id))
        })?;
        let body = encode_score_request(rgb);
        let mut last = String::new();
        for attempt in 1..=self.retries + 1 {
            match self.call_once(&body) {
                Ok(bytes) => {
                    let scores = decode_score_response(&bytes)?;
                    check_tile_shape(&scores, request)?;
                    return Ok(scores);
                }
                Err(cause) => {
                    last = cause;
                    if attempt <= self.retries {
                        std::thread::sleep(Duration::from_millis(20 * attempt as u64));
                    }
                }
            }
        }
        Err(Error::Remote {
            tile_id: request.tile_id.to_string(),
            attempts: self.retries + 1,
            cause: last,
        })
    }
}
