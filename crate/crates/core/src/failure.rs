//! Power-failure injection and recovery checking.
//!
//! A crash point is a count of dispatched events. The run is replayed from
//! scratch up to that point, the persistent image is taken, and a fresh
//! platform recovers from it. The recovered logical view of every touched
//! page is then compared with the acknowledged-writes oracle.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::system::{CrashImage, Platform, PlatformError};
use crate::workload::trace::TraceRecord;

/// Hook to seed a platform (preloads) before it runs.
pub type Setup = dyn Fn(&mut Platform) + Sync;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrashPlan {
    pub after_events: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersistencyVerdict {
    pub crash_after: u64,
    pub at_ps: u64,
    pub journaled: Vec<u16>,
    pub replayed: Vec<u16>,
    pub acked_stores: u64,
    /// Pages holding a superseded acknowledged version.
    pub lost: Vec<u64>,
    /// Pages holding content no acknowledgement accounts for.
    pub spurious: Vec<u64>,
    /// Sets left busy or queue state inconsistent after recovery.
    pub residue: Option<String>,
}

impl PersistencyVerdict {
    pub fn ok(&self) -> bool {
        self.lost.is_empty() && self.spurious.is_empty() && self.residue.is_none()
    }
}

fn fresh(cfg: &SystemConfig, trace: &[TraceRecord], setup: &Setup) -> Result<Platform, PlatformError> {
    let mut p = Platform::new(cfg, trace.to_vec())?;
    setup(&mut p);
    Ok(p)
}

/// Events dispatched by an uninterrupted run.
pub fn total_events(cfg: &SystemConfig, trace: &[TraceRecord], setup: &Setup) -> Result<u64, PlatformError> {
    let mut p = fresh(cfg, trace, setup)?;
    p.run()?;
    Ok(p.events_dispatched())
}

/// Runs until the crash point and returns the surviving image.
pub fn inject(
    cfg: &SystemConfig,
    trace: &[TraceRecord],
    setup: &Setup,
    plan: CrashPlan,
) -> Result<CrashImage, PlatformError> {
    let mut p = fresh(cfg, trace, setup)?;
    p.run_events(plan.after_events)?;
    Ok(p.crash_image())
}

/// Power-up: replays the journaled commands to completion.
pub fn restore_and_recover(
    cfg: &SystemConfig,
    image: CrashImage,
) -> Result<(Platform, Vec<u16>), PlatformError> {
    let (mut p, replay) = Platform::recover(cfg, image)?;
    while p.step()? {}
    p.finish_recovery()?;
    Ok((p, replay.iter().map(|c| c.cid).collect()))
}

/// Compares the recovered logical state with the oracle carried in the image.
pub fn judge(p: &Platform, crash_after: u64, at_ps: u64, journaled: Vec<u16>, replayed: Vec<u16>) -> PersistencyVerdict {
    let oracle = p.oracle();
    let mut lost = Vec::new();
    let mut spurious = Vec::new();
    for page in oracle.pages() {
        let got = p.logical_content(page);
        if got != oracle.expected(page) {
            if oracle.is_older_version(page, got) {
                lost.push(page);
            } else {
                spurious.push(page);
            }
        }
    }
    let residue = if let Some(set) = p.nv.tags().iter().position(|e| e.busy) {
        Some(format!("set {set} busy after recovery"))
    } else if p.eng.outstanding() != 0 {
        Some(format!("{} commands outstanding after recovery", p.eng.outstanding()))
    } else {
        None
    };
    PersistencyVerdict {
        crash_after,
        at_ps,
        journaled,
        replayed,
        acked_stores: oracle.acked_stores(),
        lost,
        spurious,
        residue,
    }
}

/// One full inject, recover, judge cycle.
pub fn crash_at(
    cfg: &SystemConfig,
    trace: &[TraceRecord],
    setup: &Setup,
    plan: CrashPlan,
) -> Result<PersistencyVerdict, PlatformError> {
    let image = inject(cfg, trace, setup, plan)?;
    let (at, journaled) = (image.at.as_ps(), image.journaled.clone());
    let (p, replayed) = restore_and_recover(cfg, image)?;
    Ok(judge(&p, plan.after_events, at, journaled, replayed))
}

/// Crash points run in parallel; the result is ordered like `points`.
pub fn sweep(
    cfg: &SystemConfig,
    trace: &[TraceRecord],
    setup: &Setup,
    points: &[u64],
) -> Result<Vec<PersistencyVerdict>, PlatformError> {
    points
        .par_iter()
        .map(|&k| crash_at(cfg, trace, setup, CrashPlan { after_events: k }))
        .collect()
}

/// Every-event enumeration: a crash after each dispatched event, and one
/// before the first.
pub fn sweep_all(
    cfg: &SystemConfig,
    trace: &[TraceRecord],
    setup: &Setup,
) -> Result<Vec<PersistencyVerdict>, PlatformError> {
    let total = total_events(cfg, trace, setup)?;
    let points: Vec<u64> = (0..=total).collect();
    sweep(cfg, trace, setup, &points)
}

/// `n` distinct crash points drawn uniformly from `0..=total`, sorted.
pub fn sample_points(total: u64, n: usize, seed: u64) -> Vec<u64> {
    let len = (total + 1) as usize;
    if n >= len {
        return (0..=total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<u64> = sample(&mut rng, len, n).into_iter().map(|i| i as u64).collect();
    v.sort_unstable();
    v
}

/// CSV with columns crash_after, at_ps, journaled, replayed, acked_stores,
/// lost, spurious, ok. Id and page lists are `;`-separated.
pub fn verdicts_to_csv(verdicts: &[PersistencyVerdict]) -> String {
    let list = |v: &[u64]| {
        let mut s = String::new();
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            write!(s, "{x}").ok();
        }
        s
    };
    let cids = |v: &[u16]| list(&v.iter().map(|&c| c as u64).collect::<Vec<_>>());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["crash_after", "at_ps", "journaled", "replayed", "acked_stores", "lost", "spurious", "ok"])
        .expect("in-memory csv");
    for v in verdicts {
        w.write_record([
            v.crash_after.to_string(),
            v.at_ps.to_string(),
            cids(&v.journaled),
            cids(&v.replayed),
            v.acked_stores.to_string(),
            list(&v.lost),
            list(&v.spurious),
            v.ok().to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
