//! Quantities derived from relaxed states and snapshot series.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, RealField};
use crate::solver::{SnapshotSeries, Species};

/// A labelled time series.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObservableSeries {
    pub fn new(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("times must be strictly increasing".into()));
        }
        Ok(Self {
            label: label.into(),
            times,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// `n_with - n_without`, pointwise.
pub fn depleted_density(n_with: &RealField, n_without: &RealField) -> Result<RealField> {
    if !n_with.same_grid(n_without) {
        return Err(Error::GridMismatch);
    }
    let values = n_with
        .values()
        .iter()
        .zip(n_without.values())
        .map(|(a, b)| a - b)
        .collect();
    RealField::from_values(std::sync::Arc::clone(n_with.grid()), values)
}

/// `m_eff / m_I = alpha^2 / (2 sigma^2)` with sigma the standard deviation of
/// the impurity density in condensate oscillator units.
pub fn effective_mass_ratio(psi_i: &ComplexField, alpha: f64) -> Result<f64> {
    let norm = psi_i.norm2();
    if norm <= 0.0 {
        return Err(Error::Degenerate("impurity field is zero".into()));
    }
    let m1 = psi_i.moment(1) / norm;
    let m2 = psi_i.moment(2) / norm;
    let var = m2 - m1 * m1;
    if !(var > 0.0) {
        return Err(Error::Degenerate("impurity has zero spatial spread".into()));
    }
    Ok(alpha * alpha / (2.0 * var))
}

/// RMS width `sqrt(<z^2>)` of one species per snapshot.
pub fn width_series(series: &SnapshotSeries, species: Species) -> Result<ObservableSeries> {
    if series.is_empty() {
        return Err(Error::SeriesTooShort("no snapshots".into()));
    }
    let values = series
        .fields(species)
        .iter()
        .map(|f| (f.moment(2) / f.norm2()).sqrt())
        .collect();
    ObservableSeries::new(format!("width_{}", species.as_str()), series.times.clone(), values)
}

/// Frequency oversampling of the periodogram ladder relative to `2 pi / T`.
const PERIODOGRAM_OVERSAMPLE: f64 = 20.0;

/// Least-squares spectral power of `y ~ a cos(wt) + b sin(wt) + c`,
/// expressed as the fraction of variance explained.
fn sinusoid_power(times: &[f64], y: &[f64], omega: f64, total: f64) -> f64 {
    let (mut scc, mut sss, mut scs, mut sc, mut ss) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut syc, mut sys, mut sy) = (0.0, 0.0, 0.0);
    for (&t, &v) in times.iter().zip(y) {
        let (s, c) = (omega * t).sin_cos();
        scc += c * c;
        sss += s * s;
        scs += c * s;
        sc += c;
        ss += s;
        syc += v * c;
        sys += v * s;
        sy += v;
    }
    let n = times.len() as f64;
    let m = [[scc, scs, sc], [scs, sss, ss], [sc, ss, n]];
    let rhs = [syc, sys, sy];
    match solve3(m, rhs) {
        Some(x) => (x[0] * syc + x[1] * sys + x[2] * sy - sy * sy / n) / total,
        None => 0.0,
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Angular frequency of the strongest oscillation in a series.
///
/// The mean-subtracted series is projected onto sinusoids on a frequency
/// ladder oversampled 20x relative to `2 pi / T`, up to the Nyquist limit of
/// the median sample spacing; the peak bin is refined by quadratic
/// interpolation.
pub fn dominant_frequency(series: &ObservableSeries) -> Result<f64> {
    let n = series.len();
    if n < 8 {
        return Err(Error::SeriesTooShort(format!("{n} samples")));
    }
    let mean = series.values.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = series.values.iter().map(|v| v - mean).collect();
    let total: f64 = y.iter().map(|v| v * v).sum();
    let scale = mean
        .abs()
        .max(series.values.iter().map(|v| v.abs()).fold(0.0, f64::max));
    if total <= (1e-12 * scale.max(1e-300)).powi(2) * n as f64 {
        return Err(Error::Degenerate("series does not oscillate".into()));
    }
    let span = series.duration();
    let mut gaps: Vec<f64> = series.times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let nyquist = PI / gaps[gaps.len() / 2];
    let base = 2.0 * PI / span;
    let step = base / PERIODOGRAM_OVERSAMPLE;
    let count = ((nyquist - base) / step).floor() as usize + 1;
    let omegas: Vec<f64> = (0..count).map(|i| base + i as f64 * step).collect();
    let power: Vec<f64> = omegas
        .iter()
        .map(|&w| sinusoid_power(&series.times, &y, w, total))
        .collect();
    let (best, _) = power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty ladder");
    let mut omega = omegas[best];
    if best > 0 && best + 1 < power.len() {
        let (pm, p0, pp) = (power[best - 1], power[best], power[best + 1]);
        let denom = pm - 2.0 * p0 + pp;
        if denom < 0.0 {
            omega += 0.5 * step * (pm - pp) / denom;
        }
    }
    if omega * span / (2.0 * PI) < 1.5 {
        return Err(Error::SeriesTooShort(format!(
            "only {:.2} periods of the dominant frequency sampled",
            omega * span / (2.0 * PI)
        )));
    }
    Ok(omega)
}

/// Count of local maxima above 1% of the peak density.
pub fn count_fringes(density: &[f64]) -> usize {
    let peak = density.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || density.len() < 3 {
        return 0;
    }
    let thr = 0.01 * peak;
    (1..density.len() - 1)
        .filter(|&j| density[j] > thr && density[j] >= density[j - 1] && density[j] > density[j + 1])
        .count()
}

/// Moving median with half-width `half` samples (window clipped at the ends).
pub fn moving_median(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    let mut window = Vec::with_capacity(2 * half + 1);
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(n);
            window.clear();
            window.extend_from_slice(&values[lo..hi]);
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            *m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    /// Search window as a fraction of the instantaneous cloud radius.
    pub window_fraction: f64,
    /// The cloud radius is where the envelope falls to this fraction of its peak.
    pub edge_fraction: f64,
    /// A minimum must dip to at most this fraction of the local envelope.
    pub depth_threshold: f64,
    /// Half-width of the moving-median envelope, in length units.
    pub envelope_half_width: f64,
    /// Frames a track may go unmatched before it is terminated.
    pub max_gap: usize,
    /// Allowed deviation from the extrapolated position, per unit time.
    pub prediction_speed: f64,
    /// Fastest admissible motion of a minimum seen only once so far.
    pub seed_speed: f64,
    /// Minima closer than this are merged, keeping the deepest.
    pub min_separation: f64,
    /// Two tracks approaching closer than this are treated as colliding.
    pub collision_distance: f64,
    /// Weight (a time) converting a velocity mismatch into a distance.
    pub velocity_weight: f64,
    /// Largest combined mismatch accepted when joining track pieces.
    pub join_cost: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            window_fraction: 0.9,
            edge_fraction: 0.25,
            depth_threshold: 0.8,
            envelope_half_width: 0.5,
            max_gap: 3,
            prediction_speed: 3.0,
            seed_speed: 8.0,
            min_separation: 0.25,
            collision_distance: 0.5,
            velocity_weight: 0.2,
            join_cost: 0.6,
        }
    }
}

/// One tracked density minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SolitonTrack {
    pub positions: ObservableSeries,
    /// Terminated by a gap before the last frame.
    pub lost: bool,
}

/// Half-extent of the region where `envelope` stays above `fraction` of its peak.
pub fn cloud_radius(envelope: &[f64], nodes: &[f64], fraction: f64) -> f64 {
    let peak = envelope.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return 0.0;
    }
    let thr = fraction * peak;
    let first = envelope.iter().position(|&v| v >= thr).unwrap_or(0);
    let last = envelope.iter().rposition(|&v| v >= thr).unwrap_or(0);
    nodes[first].abs().max(nodes[last].abs())
}

/// Dark minima of one condensate density frame: positions refined to
/// sub-grid accuracy, with their density values.
///
/// With `radius = None` the window follows the instantaneous cloud radius.
pub fn find_dark_minima(density: &[f64], nodes: &[f64], radius: Option<f64>, opts: &TrackOptions) -> Vec<(f64, f64)> {
    let dz = nodes[1] - nodes[0];
    let half = (opts.envelope_half_width / dz).round().max(1.0) as usize;
    let envelope = moving_median(density, half);
    let radius = radius.unwrap_or_else(|| cloud_radius(&envelope, nodes, opts.edge_fraction));
    let limit = opts.window_fraction * radius;
    let mut found: Vec<(f64, f64)> = Vec::new();
    for j in 1..density.len() - 1 {
        let (a, b, c) = (density[j - 1], density[j], density[j + 1]);
        if !(b < a && b <= c) || nodes[j].abs() >= limit || b > opts.depth_threshold * envelope[j] {
            continue;
        }
        let curv = a - 2.0 * b + c;
        let shift = if curv > 0.0 { 0.5 * (a - c) / curv } else { 0.0 };
        found.push((nodes[j] + shift.clamp(-0.5, 0.5) * dz, b));
    }
    // merge clusters, keeping the deepest; exact ties (a symmetric pair)
    // collapse to their mean so mirrored input gives mirrored output
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut start = 0;
    for k in 1..=found.len() {
        if k < found.len() && found[k].0 - found[k - 1].0 < opts.min_separation {
            continue;
        }
        let cluster = &found[start..k];
        let depth = cluster.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        let deepest: Vec<f64> = cluster
            .iter()
            .filter(|m| m.1 <= depth * (1.0 + 1e-12))
            .map(|m| m.0)
            .collect();
        merged.push((deepest.iter().sum::<f64>() / deepest.len() as f64, depth));
        start = k;
    }
    merged
}

/// Least-squares slope of `x` against `t`.
fn slope(t: &[f64], x: &[f64]) -> f64 {
    let n = t.len() as f64;
    if t.len() < 2 {
        return 0.0;
    }
    let tm = t.iter().sum::<f64>() / n;
    let xm = x.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in t.iter().zip(x) {
        num += (a - tm) * (b - xm);
        den += (a - tm) * (a - tm);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// A run of consecutive frames followed without a miss.
#[derive(Debug, Clone)]
struct Piece {
    frames: Vec<usize>,
    positions: Vec<f64>,
    velocity: f64,
}

impl Piece {
    fn new(frame: usize, z: f64) -> Self {
        Self {
            frames: vec![frame],
            positions: vec![z],
            velocity: 0.0,
        }
    }

    fn last_frame(&self) -> usize {
        *self.frames.last().expect("pieces are never empty")
    }

    fn predict(&self, times: &[f64], frame: usize) -> f64 {
        let last = self.last_frame();
        self.positions[self.positions.len() - 1] + self.velocity * (times[frame] - times[last])
    }

    fn push(&mut self, times: &[f64], frame: usize, z: f64) {
        self.frames.push(frame);
        self.positions.push(z);
        let k = self.frames.len().saturating_sub(4);
        let t: Vec<f64> = self.frames[k..].iter().map(|&f| times[f]).collect();
        self.velocity = slope(&t, &self.positions[k..]);
    }

    /// Velocities near the end and the start, skipping the frames closest
    /// to the break where collisions distort the motion.
    fn end_velocities(&self, times: &[f64]) -> (f64, f64) {
        let t: Vec<f64> = self.frames.iter().map(|&f| times[f]).collect();
        let n = t.len();
        if n >= 8 {
            (
                slope(&t[n - 8..n - 3], &self.positions[n - 8..n - 3]),
                slope(&t[3..8], &self.positions[3..8]),
            )
        } else {
            let v = slope(&t, &self.positions);
            (v, v)
        }
    }
}

/// Frame-to-frame association without gaps.
fn link_pieces(frames: &[Vec<(f64, f64)>], times: &[f64], opts: &TrackOptions) -> Vec<Piece> {
    let mut active: Vec<Piece> = Vec::new();
    let mut done: Vec<Piece> = Vec::new();
    for (frame, minima) in frames.iter().enumerate() {
        let step = if frame > 0 {
            times[frame] - times[frame - 1]
        } else {
            0.0
        };
        let mut pairs: Vec<(usize, f64, usize, usize)> = Vec::new();
        for (pi, piece) in active.iter().enumerate() {
            let p = piece.predict(times, frame);
            let gate = if piece.frames.len() > 1 {
                opts.prediction_speed
            } else {
                opts.seed_speed
            } * step;
            for (mi, m) in minima.iter().enumerate() {
                let d = (m.0 - p).abs();
                if d <= gate {
                    // established pieces choose first
                    pairs.push((usize::MAX - piece.frames.len().min(10), d, pi, mi));
                }
            }
        }
        // a piece equally close to two minima (a mirror pair) ends here
        let mut nearest = vec![(f64::INFINITY, f64::INFINITY, usize::MAX); active.len()];
        for &(_, d, pi, mi) in &pairs {
            let n = &mut nearest[pi];
            if d < n.0 {
                *n = (d, n.0, mi);
            } else if d < n.1 {
                n.1 = d;
            }
        }
        let decided = |n: &(f64, f64, usize)| n.1 - n.0 > 1e-9 * (1.0 + n.0);
        // a minimum that is the first choice of two pieces is a merger; it
        // starts a piece of its own and the join step sorts out identities
        let mut claims = vec![0usize; minima.len()];
        for n in nearest.iter().filter(|n| n.2 != usize::MAX && decided(n)) {
            claims[n.2] += 1;
        }
        pairs.retain(|&(_, _, pi, _)| decided(&nearest[pi]));
        pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut taken = vec![None; active.len()];
        let mut stuck = vec![false; active.len()];
        let mut used: Vec<bool> = claims.iter().map(|&c| c > 1).collect();
        let mut contested = used.clone();
        // equally ranked pairs are settled together: a tie for a minimum or
        // for a piece is left unresolved rather than broken by index
        let mut g = 0;
        while g < pairs.len() {
            let (key, d) = (pairs[g].0, pairs[g].1);
            let mut h = g + 1;
            while h < pairs.len() && pairs[h].0 == key && pairs[h].1 - d <= 1e-9 * (1.0 + d) {
                h += 1;
            }
            let open: Vec<(usize, usize)> = pairs[g..h]
                .iter()
                .filter(|p| taken[p.2].is_none() && !stuck[p.2] && !used[p.3])
                .map(|p| (p.2, p.3))
                .collect();
            for &(pi, mi) in &open {
                let rivals = open.iter().filter(|o| o.1 == mi).count();
                let options = open.iter().filter(|o| o.0 == pi).count();
                if options > 1 {
                    stuck[pi] = true;
                } else if rivals > 1 {
                    used[mi] = true;
                    contested[mi] = true;
                } else {
                    taken[pi] = Some(mi);
                    used[mi] = true;
                }
            }
            g = h;
        }
        let mut still = Vec::with_capacity(active.len());
        for (mut piece, hit) in active.into_iter().zip(taken) {
            match hit {
                Some(mi) => {
                    piece.push(times, frame, minima[mi].0);
                    still.push(piece);
                }
                None => done.push(piece),
            }
        }
        active = still;
        for (mi, m) in minima.iter().enumerate() {
            if !used[mi] || contested[mi] {
                active.push(Piece::new(frame, m.0));
            }
        }
    }
    done.extend(active);
    done
}

/// Cuts pieces at every close approach so that collisions can be
/// resolved by the join step.
fn split_at_collisions(pieces: Vec<Piece>, collision_distance: f64) -> Vec<Piece> {
    let mut cuts: Vec<Vec<usize>> = vec![Vec::new(); pieces.len()];
    for i in 0..pieces.len() {
        for j in i + 1..pieces.len() {
            let (a, b) = (&pieces[i], &pieces[j]);
            let lo = a.frames[0].max(b.frames[0]);
            let hi = a.last_frame().min(b.last_frame());
            if hi < lo + 2 {
                continue;
            }
            let sep: Vec<f64> = (lo..=hi)
                .map(|f| (a.positions[f - a.frames[0]] - b.positions[f - b.frames[0]]).abs())
                .collect();
            for k in 1..sep.len() - 1 {
                if sep[k] <= collision_distance && sep[k] <= sep[k - 1] && sep[k] < sep[k + 1] {
                    cuts[i].push(lo + k);
                    cuts[j].push(lo + k);
                }
            }
        }
    }
    let mut out = Vec::new();
    for (piece, mut cut) in pieces.into_iter().zip(cuts) {
        cut.sort_unstable();
        cut.dedup();
        let first = piece.frames[0];
        let mut start = 0;
        for c in cut {
            let end = c - first + 1;
            out.push(Piece {
                frames: piece.frames[start..end].to_vec(),
                positions: piece.positions[start..end].to_vec(),
                velocity: 0.0,
            });
            start = end;
        }
        if start < piece.frames.len() {
            out.push(Piece {
                frames: piece.frames[start..].to_vec(),
                positions: piece.positions[start..].to_vec(),
                velocity: 0.0,
            });
        }
    }
    out
}

/// Follows dark minima of the condensate density across snapshots.
///
/// Minima are first linked frame to frame against the velocity-extrapolated
/// position. Links are then cut wherever two minima approach each other and
/// the pieces are rejoined across cuts and gaps of up to `max_gap` frames by
/// continuity of position and velocity, so colliding solitons pass through
/// each other and keep their identities.
pub fn track_minima(series: &SnapshotSeries, opts: &TrackOptions) -> Vec<SolitonTrack> {
    let densities: Vec<Vec<f64>> = series.psi_b.iter().map(|f| f.density().into_values()).collect();
    track_density_minima(&densities, series.grid.nodes(), &series.times, opts)
}

/// [`track_minima`] on plain density rows sampled at `nodes` and `times`.
pub fn track_density_minima(
    densities: &[Vec<f64>],
    nodes: &[f64],
    times: &[f64],
    opts: &TrackOptions,
) -> Vec<SolitonTrack> {
    let frames: Vec<Vec<(f64, f64)>> = densities
        .iter()
        .map(|n| find_dark_minima(n, nodes, None, opts))
        .collect();
    let pieces = split_at_collisions(link_pieces(&frames, times, opts), opts.collision_distance);

    let ends: Vec<(f64, f64)> = pieces.iter().map(|p| p.end_velocities(times)).collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (a, pa) in pieces.iter().enumerate() {
        let fa = pa.last_frame();
        for (b, pb) in pieces.iter().enumerate() {
            let fb = pb.frames[0];
            if fb <= fa || fb - fa > opts.max_gap + 1 {
                continue;
            }
            let predicted = pa.positions[pa.positions.len() - 1] + ends[a].0 * (times[fb] - times[fa]);
            let cost = (predicted - pb.positions[0]).abs() + opts.velocity_weight * (ends[a].0 - ends[b].1).abs();
            if cost <= opts.join_cost {
                candidates.push((cost, a, b));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut next = vec![None; pieces.len()];
    let mut has_prev = vec![false; pieces.len()];
    let mut blocked = vec![false; pieces.len()];
    for (i, &(cost, a, b)) in candidates.iter().enumerate() {
        if next[a].is_some() || has_prev[b] || blocked[a] || blocked[b] {
            continue;
        }
        // an equally good rival claim leaves the choice undecided
        let tie = candidates[i + 1..]
            .iter()
            .take_while(|c| c.0 - cost <= 1e-9 * (1.0 + cost))
            .find(|c| (c.1 == a) != (c.2 == b) && next[c.1].is_none() && !has_prev[c.2]);
        if let Some(&(_, a2, b2)) = tie {
            if a2 == a {
                blocked[a] = true;
            } else if b2 == b {
                blocked[b] = true;
            }
            continue;
        }
        next[a] = Some(b);
        has_prev[b] = true;
    }

    let last_frame = times.len().saturating_sub(1);
    let mut tracks: Vec<SolitonTrack> = Vec::new();
    for start in (0..pieces.len()).filter(|&p| !has_prev[p]) {
        let (mut t, mut z) = (Vec::new(), Vec::new());
        let mut cur = Some(start);
        let mut end = 0;
        while let Some(p) = cur {
            t.extend(pieces[p].frames.iter().map(|&f| times[f]));
            z.extend_from_slice(&pieces[p].positions);
            end = pieces[p].last_frame();
            cur = next[p];
        }
        tracks.push(SolitonTrack {
            positions: ObservableSeries {
                label: "soliton_position".into(),
                times: t,
                values: z,
            },
            lost: end < last_frame,
        });
    }
    tracks.sort_by(|a, b| {
        a.positions.times[0]
            .total_cmp(&b.positions.times[0])
            .then(a.positions.values[0].total_cmp(&b.positions.values[0]))
    });
    tracks
}

/// Tracks spanning at least `min_duration`.
pub fn persistent_tracks(tracks: &[SolitonTrack], min_duration: f64) -> Vec<&SolitonTrack> {
    tracks
        .iter()
        .filter(|t| t.positions.duration() >= min_duration)
        .collect()
}

/// Width dynamics of the breathing excited impurity.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalWidth {
    pub a0: f64,
    pub alpha: f64,
    pub closed_form: ObservableSeries,
    pub integrated: ObservableSeries,
    pub max_discrepancy: f64,
}

/// `A(t) = sqrt([alpha^4 + (A0^4 - alpha^4) cos 2t + A0^4] / (2 A0^2))`.
pub fn closed_form_width(a0: f64, alpha: f64, t: f64) -> f64 {
    let a04 = a0.powi(4);
    let al4 = alpha.powi(4);
    ((al4 + (a04 - al4) * (2.0 * t).cos() + a04) / (2.0 * a0 * a0)).sqrt()
}

/// Largest internal step of the width integrator.
const WIDTH_ODE_STEP: f64 = 1e-3;

fn width_rhs(alpha4: f64, a: f64, v: f64) -> (f64, f64) {
    (v, alpha4 / (a * a * a) - a)
}

/// Closed form and RK4 integration of `A'' - alpha^4/A^3 + A = 0` with
/// `A(0) = A0`, `A'(0) = 0`, sampled on `t_grid` (non-decreasing, >= 0).
pub fn variational_width(a0: f64, alpha: f64, t_grid: &[f64]) -> Result<VariationalWidth> {
    if !(a0 > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidParameter("widths must be positive".into()));
    }
    if t_grid.iter().any(|&t| t < 0.0) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "t_grid must be increasing and non-negative".into(),
        ));
    }
    let alpha4 = alpha.powi(4);
    let closed: Vec<f64> = t_grid.iter().map(|&t| closed_form_width(a0, alpha, t)).collect();

    let (mut t, mut a, mut v) = (0.0f64, a0, 0.0f64);
    let mut integrated = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let span = target - t;
        let n = (span / WIDTH_ODE_STEP).ceil().max(0.0) as usize;
        if n > 0 {
            let h = span / n as f64;
            for _ in 0..n {
                let (k1a, k1v) = width_rhs(alpha4, a, v);
                let (k2a, k2v) = width_rhs(alpha4, a + 0.5 * h * k1a, v + 0.5 * h * k1v);
                let (k3a, k3v) = width_rhs(alpha4, a + 0.5 * h * k2a, v + 0.5 * h * k2v);
                let (k4a, k4v) = width_rhs(alpha4, a + h * k3a, v + h * k3v);
                a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
                v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            }
        }
        t = target;
        integrated.push(a);
    }
    let max_discrepancy = closed
        .iter()
        .zip(&integrated)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(VariationalWidth {
        a0,
        alpha,
        closed_form: ObservableSeries::new("width_closed_form", t_grid.to_vec(), closed)?,
        integrated: ObservableSeries::new("width_integrated", t_grid.to_vec(), integrated)?,
        max_discrepancy,
    })
}

/// Largest `|dn/dz|` by central differences.
pub fn max_density_gradient(density: &[f64], dz: f64) -> f64 {
    density
        .windows(3)
        .map(|w| ((w[2] - w[0]) / (2.0 * dz)).abs())
        .fold(0.0, f64::max)
}

/// Steep-gradient classification of an attractive-imprint release.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockReport {
    /// Largest gradient of the reference (uncoupled) equilibrium.
    pub reference_gradient: f64,
    pub factor: f64,
    pub window: f64,
    /// Largest gradient seen inside the window.
    pub peak_gradient: f64,
    /// First time inside the window at which the factor was exceeded.
    pub trip_time: Option<f64>,
}

impl ShockReport {
    pub fn tripped(&self) -> bool {
        self.trip_time.is_some()
    }
}

/// Trips when `max |dn/dz|` exceeds `factor` times the reference gradient at
/// some `0 < t < window`. `gradients` holds `(t, max |dn/dz|)` samples.
pub fn detect_shock(gradients: &[(f64, f64)], reference_gradient: f64, factor: f64, window: f64) -> ShockReport {
    let inside = gradients.iter().filter(|(t, _)| *t > 0.0 && *t < window);
    let peak_gradient = inside.clone().map(|(_, g)| *g).fold(0.0, f64::max);
    let trip_time = inside
        .clone()
        .find(|(_, g)| *g > factor * reference_gradient)
        .map(|(t, _)| *t);
    ShockReport {
        reference_gradient,
        factor,
        window,
        peak_gradient,
        trip_time,
    }
}

/// Centroid of `|n - n_ref|` over `z > 0`: where the right-moving disturbance
/// sits.
pub fn disturbance_centroid(density: &[f64], reference: &[f64], nodes: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((&n, &r), &z) in density.iter().zip(reference).zip(nodes) {
        if z > 0.0 {
            let w = (n - r).abs();
            num += w * z;
            den += w;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// The disturbance first moves out to at least twice its starting distance
/// and later falls back more than halfway from its furthest point toward
/// the start. The centroid never returns fully since some disturbance
/// stays behind in the bulk.
pub fn reflects_and_recollides(centroid: &ObservableSeries) -> bool {
    let Some(&start) = centroid.values.first() else {
        return false;
    };
    let Some(out) = centroid.values.iter().position(|&c| c >= 2.0 * start) else {
        return false;
    };
    let mut peak = start;
    for &c in &centroid.values[out..] {
        peak = peak.max(c);
        if c < 0.5 * (start + peak) {
            return true;
        }
    }
    false
}

/// Least-squares `y = c0 + c1 x + c2 x^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub r_squared: f64,
}

pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Result<QuadraticFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::SeriesTooShort("quadratic fit needs at least 3 points".into()));
    }
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let p = [1.0, xi, xi * xi];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += p[r] * p[c];
            }
            rhs[r] += p[r] * yi;
        }
    }
    let c = solve3(m, rhs).ok_or_else(|| Error::Degenerate("singular quadratic fit".into()))?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let f = c[0] + c[1] * xi + c[2] * xi * xi;
        ss_res += (yi - f).powi(2);
        ss_tot += (yi - mean).powi(2);
    }
    Ok(QuadraticFit {
        c0: c[0],
        c1: c[1],
        c2: c[2],
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

/// Least-squares `y = c x^2` through the origin; returns `(c, R^2)`.
pub fn fit_pure_quadratic(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::SeriesTooShort("fit needs at least 2 points".into()));
    }
    let sx4: f64 = x.iter().map(|v| v.powi(4)).sum();
    if sx4 <= 0.0 {
        return Err(Error::Degenerate("all abscissae zero".into()));
    }
    let c = x.iter().zip(y).map(|(a, b)| a * a * b).sum::<f64>() / sx4;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - c * a * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| b * b).sum();
    Ok((c, if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 }))
}
