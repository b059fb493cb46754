//! Hypothesize-and-verify pose estimation over correspondence candidates.
//!
//! Each iteration draws three candidates with distinct observations and
//! distinct landmarks, solves P3P on (ellipsoid center, box center) pairs,
//! keeps the branch whose projections best overlap the sampled boxes, then
//! scores it against every observation's verification landmarks. The best
//! hypothesis is kept on strict improvement only, so the first of equally
//! scored hypotheses wins.
//!
//! Samplers:
//!
//! - `bf` enumerates every valid triple of the sampling list in
//!   lexicographic order.
//! - `ransac` draws valid triples uniformly.
//! - `prosac` / `b-prosac` draw from a growing prefix of the sorted sampling
//!   list. They differ only in the candidate ordering (see
//!   [`prepare_candidates`]).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{sort_balanced, sort_by_score, AssociationError, CandidateSet, CorrespondenceCandidate};
use crate::geometry::{bbox_to_ellipse, dual_conic_to_ellipse, ellipse_iou, project_dual_quadric, Camera, Ellipse, PoseWC};
use crate::model::{Landmark, ObjectMap, Observation, Query};
use crate::pnp::{select_pose, solve_p3p, Correspondence3D2D, SampledLandmark};

/// Points per minimal sample.
pub const SAMPLE_SIZE: usize = 3;

const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("invalid consensus configuration: {0}")]
    InvalidConfig(String),
    #[error("no triple of candidates with distinct observations and distinct landmarks")]
    InsufficientCandidates,
    #[error("sampling stalled after {MAX_REJECTIONS} rejected draws")]
    SamplingStalled,
    #[error("no pose hypothesis could be computed")]
    NoSolution,
    #[error("candidate list is not in {0} order")]
    UnsortedCandidates(SamplerKind),
    #[error("candidate index out of range: {0}")]
    IndexOutOfRange(String),
    #[error(transparent)]
    Association(#[from] AssociationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "bf")]
    BruteForce,
    #[serde(rename = "ransac")]
    Ransac,
    #[serde(rename = "prosac")]
    Prosac,
    #[serde(rename = "b-prosac")]
    BProsac,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::BruteForce,
        SamplerKind::Ransac,
        SamplerKind::Prosac,
        SamplerKind::BProsac,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::BruteForce => "bf",
            SamplerKind::Ransac => "ransac",
            SamplerKind::Prosac => "prosac",
            SamplerKind::BProsac => "b-prosac",
        }
    }

    /// Whether the sampler needs similarity-scored, sorted candidates.
    pub fn requires_scores(&self) -> bool {
        matches!(self, SamplerKind::Prosac | SamplerKind::BProsac)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bf" => Ok(SamplerKind::BruteForce),
            "ransac" => Ok(SamplerKind::Ransac),
            "prosac" => Ok(SamplerKind::Prosac),
            "b-prosac" => Ok(SamplerKind::BProsac),
            other => Err(format!(
                "unknown algorithm '{other}' (expected bf, ransac, prosac or b-prosac)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusConfig {
    /// Iteration budget N. Ignored by brute force.
    pub iterations: usize,
    /// Minimum IoU for a verification match.
    pub iou_threshold: f64,
    /// PROSAC growth horizon T_N.
    pub prosac_t_n: u64,
    pub seed: u64,
    /// ChaCha stream; callers use one stream per localize call.
    pub stream: u64,
    /// Landmarks whose camera-frame center depth is at most this are skipped
    /// during verification.
    pub min_z: f64,
    /// Makes every sampler enumerate all valid triples like brute force.
    pub exhaustive: bool,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            iou_threshold: 0.2,
            prosac_t_n: 200_000,
            seed: 0,
            stream: 0,
            min_z: 1e-6,
            exhaustive: false,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.iterations == 0 {
            return Err(ConsensusError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(ConsensusError::InvalidConfig(format!(
                "iou_threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        if self.prosac_t_n < self.iterations as u64 {
            return Err(ConsensusError::InvalidConfig(format!(
                "prosac_t_n {} below iteration count {}",
                self.prosac_t_n, self.iterations
            )));
        }
        if !(self.min_z.is_finite() && self.min_z >= 0.0) {
            return Err(ConsensusError::InvalidConfig("min_z must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Sorts the sampling list the way `kind` expects: by score for PROSAC,
/// balanced by neighbor rank for B-PROSAC, untouched otherwise.
pub fn prepare_candidates(kind: SamplerKind, candidates: CandidateSet) -> Result<CandidateSet, ConsensusError> {
    Ok(match kind {
        SamplerKind::Prosac => sort_by_score(candidates)?,
        SamplerKind::BProsac => sort_balanced(candidates)?,
        SamplerKind::BruteForce | SamplerKind::Ransac => candidates,
    })
}

fn check_order(kind: SamplerKind, list: &[CorrespondenceCandidate]) -> Result<(), ConsensusError> {
    let ordered = match kind {
        SamplerKind::Prosac => list.windows(2).all(|w| w[0].score >= w[1].score),
        SamplerKind::BProsac => list
            .windows(2)
            .all(|w| w[0].rank < w[1].rank || (w[0].rank == w[1].rank && w[0].score >= w[1].score)),
        _ => true,
    };
    if ordered {
        Ok(())
    } else {
        Err(ConsensusError::UnsortedCandidates(kind))
    }
}

// ---------------------------------------------------------------------------
// PROSAC schedule

fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// Growth sequence `T'_n` for `n = m..=n_cand`.
///
/// `T_n = T_N · C(n, m) / C(n_cand, m)` (the closed form of the recurrence
/// `T_{n+1} = T_n (n+1) / (n+1-m)`), rounded up. The sequence is
/// non-decreasing and ends at `T_N`.
///
/// # Panics
/// If `m == 0` or `n_cand < m`.
pub fn prosac_growth(m: usize, t_n: u64, n_cand: usize) -> Vec<u64> {
    assert!(m >= 1 && n_cand >= m, "prosac_growth needs n_cand >= m >= 1");
    let (m64, n64) = (m as u64, n_cand as u64);
    let exact = binomial(n64, m64).and_then(|denom| {
        (m64..=n64)
            .map(|n| {
                let num = u128::from(t_n).checked_mul(binomial(n, m64)?)?;
                Some(num.div_ceil(denom) as u64)
            })
            .collect::<Option<Vec<u64>>>()
    });
    exact.unwrap_or_else(|| {
        // huge candidate lists only: evaluate the recurrence in floating point
        let mut t = t_n as f64;
        for i in 0..m {
            t *= (m - i) as f64 / (n_cand - i) as f64;
        }
        let mut out = Vec::with_capacity(n_cand - m + 1);
        for n in m..=n_cand {
            if n > m {
                t *= n as f64 / (n - m) as f64;
            }
            let prev = out.last().copied().unwrap_or(0);
            out.push((t.ceil() as u64).clamp(prev, t_n));
        }
        *out.last_mut().unwrap() = t_n;
        out
    })
}

/// Pool size and forcing rule of PROSAC sampling at each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsacSchedule {
    m: usize,
    n_min: usize,
    growth: Vec<u64>,
}

impl ProsacSchedule {
    /// `n_min` is the smallest admissible pool (at least `m`); smaller pools
    /// are skipped.
    pub fn new(m: usize, t_n: u64, n_cand: usize, n_min: usize) -> Self {
        assert!(n_min >= m && n_min <= n_cand, "n_min must lie in m..=n_cand");
        Self {
            m,
            n_min,
            growth: prosac_growth(m, t_n, n_cand),
        }
    }

    pub fn n_cand(&self) -> usize {
        self.m + self.growth.len() - 1
    }

    pub fn growth(&self) -> &[u64] {
        &self.growth
    }

    /// Prefix length `n(t)` sampled at 1-based iteration `t`.
    pub fn pool_size(&self, t: u64) -> usize {
        let natural = self.m + self.growth.partition_point(|&g| g < t);
        natural.clamp(self.n_min, self.n_cand())
    }

    /// Whether iteration `t` must include the last candidate of its pool.
    /// True until the pool has reached the full list and `t > T'_N`.
    pub fn forced(&self, t: u64) -> bool {
        let n = self.pool_size(t);
        self.growth[n - self.m] >= t
    }
}

// ---------------------------------------------------------------------------
// sampling

fn valid_triple(a: &CorrespondenceCandidate, b: &CorrespondenceCandidate, c: &CorrespondenceCandidate) -> bool {
    a.obs_index != b.obs_index
        && a.obs_index != c.obs_index
        && b.obs_index != c.obs_index
        && a.landmark_index != b.landmark_index
        && a.landmark_index != c.landmark_index
        && b.landmark_index != c.landmark_index
}

/// Smallest prefix length containing a valid triple, if any.
fn min_valid_prefix(list: &[CorrespondenceCandidate]) -> Option<usize> {
    (2..list.len()).find_map(|k| {
        let found = (0..k).any(|i| (i + 1..k).any(|j| valid_triple(&list[i], &list[j], &list[k])));
        found.then_some(k + 1)
    })
}

/// Every valid index triple `i < j < k`, in lexicographic order.
pub fn valid_triples(list: &[CorrespondenceCandidate]) -> impl Iterator<Item = [usize; 3]> + '_ {
    let n = list.len();
    (0..n).flat_map(move |i| {
        (i + 1..n).flat_map(move |j| {
            (j + 1..n)
                .filter(move |&k| valid_triple(&list[i], &list[j], &list[k]))
                .map(move |k| [i, j, k])
        })
    })
}

/// Random triple sampler over a candidate list.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    kind: SamplerKind,
    list: &'a [CorrespondenceCandidate],
    schedule: Option<ProsacSchedule>,
}

impl<'a> Sampler<'a> {
    pub fn new(kind: SamplerKind, list: &'a [CorrespondenceCandidate], prosac_t_n: u64) -> Result<Self, ConsensusError> {
        let n_min = min_valid_prefix(list).ok_or(ConsensusError::InsufficientCandidates)?;
        let schedule = kind
            .requires_scores()
            .then(|| ProsacSchedule::new(SAMPLE_SIZE, prosac_t_n, list.len(), n_min));
        Ok(Self { kind, list, schedule })
    }

    pub fn schedule(&self) -> Option<&ProsacSchedule> {
        self.schedule.as_ref()
    }

    /// Indices into the candidate list of the sample for 1-based iteration
    /// `t`. Brute force draws uniformly like RANSAC here; enumeration is
    /// handled by [`localize`].
    pub fn draw(&self, t: u64, rng: &mut ChaCha8Rng) -> Result<[usize; 3], ConsensusError> {
        let Some(schedule) = &self.schedule else {
            return self.draw_uniform(self.list.len(), rng);
        };
        let n = schedule.pool_size(t);
        if schedule.forced(t) {
            let last = n - 1;
            for _ in 0..MAX_REJECTIONS {
                let pair = index::sample(rng, last, 2);
                let s = [pair.index(0), pair.index(1), last];
                if self.is_valid(&s) {
                    return Ok(s);
                }
            }
        }
        self.draw_uniform(n, rng)
    }

    fn draw_uniform(&self, pool: usize, rng: &mut ChaCha8Rng) -> Result<[usize; 3], ConsensusError> {
        for _ in 0..MAX_REJECTIONS {
            let v = index::sample(rng, pool, 3);
            let s = [v.index(0), v.index(1), v.index(2)];
            if self.is_valid(&s) {
                return Ok(s);
            }
        }
        Err(ConsensusError::SamplingStalled)
    }

    fn is_valid(&self, s: &[usize; 3]) -> bool {
        valid_triple(&self.list[s[0]], &self.list[s[1]], &self.list[s[2]])
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }
}

/// Draws one sample for iteration `t` (1-based).
pub fn draw_sample(
    kind: SamplerKind,
    candidates: &CandidateSet,
    t: u64,
    prosac_t_n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<[CorrespondenceCandidate; 3], ConsensusError> {
    let sampler = Sampler::new(kind, &candidates.sampling, prosac_t_n)?;
    let s = sampler.draw(t, rng)?;
    Ok(s.map(|i| candidates.sampling[i]))
}

// ---------------------------------------------------------------------------
// verification

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifiedMatch {
    pub obs_index: usize,
    pub landmark_index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verification {
    /// Sum of accepted IoUs.
    pub score: f64,
    pub matches: Vec<VerifiedMatch>,
}

/// Scores `pose`: each observation accepts its best-overlapping verification
/// landmark if the IoU exceeds the threshold. A landmark may be accepted by
/// several observations.
pub fn verify_pose(
    pose: &PoseWC,
    landmarks: &[Landmark],
    observations: &[Observation],
    verification: &[Vec<usize>],
    cam: &Camera,
    cfg: &ConsensusConfig,
) -> Verification {
    // projection cache: None = not yet computed, Some(None) = not visible
    let mut projected: Vec<Option<Option<Ellipse>>> = vec![None; landmarks.len()];
    let mut out = Verification::default();
    for (j, (obs, candidates)) in observations.iter().zip(verification).enumerate() {
        let detected = bbox_to_ellipse(&obs.bbox);
        let mut best: Option<(usize, f64)> = None;
        for &l in candidates {
            let ellipse = projected[l].get_or_insert_with(|| {
                let lm = &landmarks[l];
                if pose.transform_point(lm.ellipsoid.center()).z <= cfg.min_z {
                    return None;
                }
                project_dual_quadric(&lm.quadric, pose, cam)
                    .and_then(|c| dual_conic_to_ellipse(&c))
                    .ok()
            });
            let Some(ellipse) = ellipse else { continue };
            let iou = ellipse_iou(&detected, ellipse);
            let better = match best {
                None => true,
                Some((bl, bi)) => iou > bi || (iou == bi && l < bl),
            };
            if better {
                best = Some((l, iou));
            }
        }
        if let Some((l, iou)) = best.filter(|&(_, iou)| iou > cfg.iou_threshold) {
            out.score += iou;
            out.matches.push(VerifiedMatch {
                obs_index: j,
                landmark_index: l,
                iou,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// main loop

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: PoseWC,
    pub score: f64,
    pub correspondences: Vec<VerifiedMatch>,
    /// Iterations executed (valid triples enumerated, for brute force).
    pub iterations_run: usize,
    /// 1-based iteration that produced the returned pose.
    pub best_found_at: usize,
    /// Iterations that produced at least one pose.
    pub hypotheses: usize,
    /// Sample that produced the returned pose.
    pub sample: [CorrespondenceCandidate; 3],
}

/// Runs consensus for one query. See [`localize_with_monitor`].
pub fn localize(
    map: &ObjectMap,
    query: &Query,
    candidates: &CandidateSet,
    kind: SamplerKind,
    cfg: &ConsensusConfig,
    cam: &Camera,
) -> Result<LocalizationResult, ConsensusError> {
    localize_with_monitor(map, query, candidates, kind, cfg, cam, |_, _| {})
}

/// Like [`localize`], calling `monitor(t, best_score)` after every iteration.
/// `best_score` is `-1` until the first hypothesis.
///
/// For PROSAC samplers the sampling list must already be in the matching
/// order (see [`prepare_candidates`]).
pub fn localize_with_monitor(
    map: &ObjectMap,
    query: &Query,
    candidates: &CandidateSet,
    kind: SamplerKind,
    cfg: &ConsensusConfig,
    cam: &Camera,
    mut monitor: impl FnMut(usize, f64),
) -> Result<LocalizationResult, ConsensusError> {
    cfg.validate()?;
    let list = &candidates.sampling;
    check_indices(map, query, candidates)?;
    if kind.requires_scores() {
        if !candidates.is_scored() {
            return Err(AssociationError::UnscoredCandidate.into());
        }
        check_order(kind, list)?;
    }

    let mut best: Option<LocalizationResult> = None;
    let mut best_score = -1.0;
    let mut hypotheses = 0;
    let mut evaluate = |t: usize, s: [usize; 3]| {
        let sample = s.map(|i| list[i]);
        debug_assert!(valid_triple(&sample[0], &sample[1], &sample[2]));
        if let Some((pose, verification)) = hypothesize(map, query, candidates, &sample, cfg, cam) {
            hypotheses += 1;
            if verification.score > best_score {
                best_score = verification.score;
                best = Some(LocalizationResult {
                    pose,
                    score: verification.score,
                    correspondences: verification.matches,
                    iterations_run: 0,
                    best_found_at: t,
                    hypotheses: 0,
                    sample,
                });
            }
        }
        monitor(t, best_score);
    };

    let iterations_run = if kind == SamplerKind::BruteForce || cfg.exhaustive {
        let mut t = 0;
        for s in valid_triples(list) {
            t += 1;
            evaluate(t, s);
        }
        if t == 0 {
            return Err(ConsensusError::InsufficientCandidates);
        }
        t
    } else {
        let sampler = Sampler::new(kind, list, cfg.prosac_t_n)?;
        let mut rng = cfg.rng();
        for t in 1..=cfg.iterations {
            let s = sampler.draw(t as u64, &mut rng)?;
            evaluate(t, s);
        }
        cfg.iterations
    };

    let mut result = best.ok_or(ConsensusError::NoSolution)?;
    result.iterations_run = iterations_run;
    result.hypotheses = hypotheses;
    Ok(result)
}

fn check_indices(map: &ObjectMap, query: &Query, c: &CandidateSet) -> Result<(), ConsensusError> {
    let n_obs = query.observations.len();
    let n_lm = map.landmarks.len();
    if c.verification.len() != n_obs {
        return Err(ConsensusError::IndexOutOfRange(format!(
            "{} verification lists for {n_obs} observations",
            c.verification.len()
        )));
    }
    let bad_sample = c.sampling.iter().any(|s| s.obs_index >= n_obs || s.landmark_index >= n_lm);
    let bad_verify = c.verification.iter().flatten().any(|&l| l >= n_lm);
    if bad_sample || bad_verify {
        return Err(ConsensusError::IndexOutOfRange(format!(
            "candidates refer past {n_obs} observations / {n_lm} landmarks"
        )));
    }
    Ok(())
}

fn hypothesize(
    map: &ObjectMap,
    query: &Query,
    candidates: &CandidateSet,
    sample: &[CorrespondenceCandidate; 3],
    cfg: &ConsensusConfig,
    cam: &Camera,
) -> Option<(PoseWC, Verification)> {
    // canonical order makes the hypothesis independent of draw order
    let mut sample = *sample;
    sample.sort_by_key(|c| (c.obs_index, c.landmark_index));
    let corr = sample.map(|c| {
        Correspondence3D2D::new(
            *map.landmarks[c.landmark_index].ellipsoid.center(),
            query.observations[c.obs_index].bbox.center(),
        )
    });
    let poses = solve_p3p(&corr, cam).ok().filter(|p| !p.is_empty())?;
    let sampled = sample.map(|c| SampledLandmark {
        quadric: &map.landmarks[c.landmark_index].quadric,
        bbox: &query.observations[c.obs_index].bbox,
    });
    let pose = poses[select_pose(&poses, &sampled, cam)];
    let verification = verify_pose(
        &pose,
        &map.landmarks,
        &query.observations,
        &candidates.verification,
        cam,
        cfg,
    );
    Some((pose, verification))
}
