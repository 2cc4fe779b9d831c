//! Stream-level odometry fusion and drift metrics.
//!
//! [`fuse_pose`](super::fuse_pose) blends two poses at one instant. On a
//! stream, the kinematic side of the blend must be the *propagated* fused
//! estimate (previous fused pose advanced by the kinematic increment), not
//! the raw drifting kinematic pose; that is what keeps the filter
//! complementary: kinematic increments supply the high frequencies, LIO
//! samples pin the low ones. On the robot this falls out of feeding the
//! fused pose back into the kinematic filter; here it is explicit.

use std::io::Write;

use super::{fuse_pose, EstimatorError, FusionParams, OdomSample, OdomSource};

/// Sequential fuser over interleaved kinematic / LIO samples.
///
/// A single writer advances it; reads return immutable snapshots. LIO
/// samples must arrive with non-decreasing stamps; late ones are dropped and
/// counted.
#[derive(Debug, Clone)]
pub struct StreamFuser {
    params: FusionParams,
    fused: Option<OdomSample>,
    last_kinematic: Option<OdomSample>,
    last_lio_stamp: Option<f64>,
    late_drops: u64,
}

impl StreamFuser {
    pub fn new(params: FusionParams) -> Self {
        Self {
            params,
            fused: None,
            last_kinematic: None,
            last_lio_stamp: None,
            late_drops: 0,
        }
    }

    /// Current fused estimate.
    pub fn fused(&self) -> Option<OdomSample> {
        self.fused
    }

    /// LIO samples dropped for arriving out of order.
    pub fn late_drops(&self) -> u64 {
        self.late_drops
    }

    /// Advance the fused pose by the increment between consecutive
    /// kinematic samples.
    pub fn push_kinematic(&mut self, sample: &OdomSample) -> Result<(), EstimatorError> {
        if let Some(prev) = &self.last_kinematic {
            if sample.stamp < prev.stamp {
                return Err(EstimatorError::NonMonotonicStamps(OdomSource::Kinematic));
            }
            let delta = prev.pose.inverse().compose(&sample.pose);
            let propagated = match &self.fused {
                Some(f) => f.pose.compose(&delta),
                None => sample.pose,
            };
            self.fused = Some(OdomSample::new(sample.stamp, OdomSource::Fused, propagated));
        } else {
            self.fused = Some(OdomSample::new(
                sample.stamp,
                OdomSource::Fused,
                sample.pose,
            ));
        }
        self.last_kinematic = Some(*sample);
        Ok(())
    }

    /// Blend a LIO sample into the propagated estimate.
    pub fn push_lio(&mut self, sample: &OdomSample) -> Result<(), EstimatorError> {
        if let Some(last) = self.last_lio_stamp {
            if sample.stamp < last {
                self.late_drops += 1;
                return Ok(());
            }
        }
        let fused = match &self.fused {
            Some(f) => {
                // dt is the spacing of LIO blends; before the second LIO
                // sample the elapsed stream time is the best stand-in.
                let dt = match self.last_lio_stamp {
                    Some(last) => (sample.stamp - last).max(1e-6),
                    None => (sample.stamp - f.stamp).abs().max(1e-3),
                };
                fuse_pose(&f.pose, &sample.pose, &self.params, dt)?
            }
            None => sample.pose,
        };
        self.fused = Some(OdomSample::new(sample.stamp, OdomSource::Fused, fused));
        self.last_lio_stamp = Some(sample.stamp);
        Ok(())
    }
}

/// Replay a recorded mixed stream (kinematic + LIO samples, interleaved by
/// stamp) and return the fused stream, one sample per kinematic input.
pub fn replay_streams(
    samples: &[OdomSample],
    params: FusionParams,
) -> Result<Vec<OdomSample>, EstimatorError> {
    let mut ordered: Vec<&OdomSample> = samples
        .iter()
        .filter(|s| s.source != OdomSource::Fused)
        .collect();
    ordered.sort_by(|a, b| a.stamp.partial_cmp(&b.stamp).unwrap());

    let mut fuser = StreamFuser::new(params);
    let mut out = Vec::new();
    for s in ordered {
        match s.source {
            OdomSource::Kinematic => {
                fuser.push_kinematic(s)?;
                if let Some(f) = fuser.fused() {
                    out.push(f);
                }
            }
            OdomSource::Lio => fuser.push_lio(s)?,
            OdomSource::Fused => unreachable!(),
        }
    }
    Ok(out)
}

/// Mean squared power of the component of `series` above `cutoff_hz`,
/// isolated by differencing against a centered moving average one cutoff
/// period wide. `fs` is the sample rate of the series.
pub fn highpass_power(series: &[f64], fs: f64, cutoff_hz: f64) -> f64 {
    let window = ((fs / cutoff_hz).round() as usize).max(2);
    let half = window / 2;
    if series.len() < window + 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in half..series.len() - half {
        let mean: f64 =
            series[i - half..=i + half].iter().sum::<f64>() / (2 * half + 1) as f64;
        let hp = series[i] - mean;
        acc += hp * hp;
        n += 1;
    }
    acc / n as f64
}

/// Per-sample position errors of the kinematic / LIO / fused streams against
/// a ground-truth stream, written as CSV with columns
/// `t, kin_ex, kin_ey, kin_ez, lio_ex, lio_ey, lio_ez, fused_ex, fused_ey, fused_ez`.
///
/// Rows are emitted at the truth stamps; each stream contributes its sample
/// with the nearest stamp. Streams with no samples yield empty columns.
pub fn write_drift_csv<W: Write>(
    mut w: W,
    truth: &[OdomSample],
    kinematic: &[OdomSample],
    lio: &[OdomSample],
    fused: &[OdomSample],
) -> std::io::Result<()> {
    writeln!(
        w,
        "t,kin_ex,kin_ey,kin_ez,lio_ex,lio_ey,lio_ez,fused_ex,fused_ey,fused_ez"
    )?;
    for t in truth {
        write!(w, "{}", t.stamp)?;
        for stream in [kinematic, lio, fused] {
            match nearest(stream, t.stamp) {
                Some(s) => {
                    let e = s.pose.translation - t.pose.translation;
                    write!(w, ",{},{},{}", e.x, e.y, e.z)?;
                }
                None => write!(w, ",,,")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Sample with the stamp nearest to `stamp` (streams are stamp-sorted).
pub fn nearest(stream: &[OdomSample], stamp: f64) -> Option<&OdomSample> {
    if stream.is_empty() {
        return None;
    }
    let idx = stream.partition_point(|s| s.stamp < stamp);
    let candidates = [idx.checked_sub(1), Some(idx)];
    candidates
        .iter()
        .flatten()
        .filter_map(|&i| stream.get(i))
        .min_by(|a, b| {
            (a.stamp - stamp)
                .abs()
                .partial_cmp(&(b.stamp - stamp).abs())
                .unwrap()
        })
}
