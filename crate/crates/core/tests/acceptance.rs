//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! fails if any criterion fails. Expected values come from oracles written
//! here, not from the library's own formulas.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use hams_sim::bench::sequential_read_throughput;
use hams_sim::config::{PlatformKind, SystemConfig};
use hams_sim::controller::AccessKind;
use hams_sim::failure::{crash_at, sweep_all, CrashPlan};
use hams_sim::flash::{FlashGeometry, UllFlash};
use hams_sim::mos::{MosAddress, PageContent, KIB, MIB};
use hams_sim::nvme::{NvmeCommand, NvmeEngine, Opcode};
use hams_sim::nvdimm::PinnedRegion;
use hams_sim::sim::SimTime;
use hams_sim::system::Platform;
use hams_sim::workload::generate::{generate, GenSpec, WorkloadKind};
use hams_sim::workload::metrics::{records_to_csv, reports_to_csv, MetricsReport};
use hams_sim::workload::mmap::mmap_baseline;
use hams_sim::workload::run;
use hams_sim::workload::trace::TraceRecord;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 4 KiB pages, `sets` cache sets, 64 MiB of flash.
fn small(kind: PlatformKind, sets: u64) -> SystemConfig {
    let mut cfg = SystemConfig::default().with_platform(kind);
    cfg.mos.page_size_bytes = 4 * KIB;
    cfg.mos.pinned_bytes = 2 * MIB;
    cfg.mos.nvdimm_bytes = 2 * MIB + sets * 4 * KIB;
    cfg.mos.flash_bytes = 64 * MIB;
    cfg.validate().expect("small config");
    cfg
}

fn miss_trace(cfg: &SystemConfig, n: usize, seed: u64) -> Vec<TraceRecord> {
    // random 4 KiB reads over a footprint far beyond the cache
    let spec = GenSpec::new(WorkloadKind::RndRd, cfg.mos.flash_bytes / 2, n, seed);
    generate(&spec)
}

// ---- independent timing oracles ----

fn ddr4_ps(bytes: u64) -> u64 {
    // tCL 14 ns plus 3.33 ns per 64-byte beat
    14_000 + bytes.div_ceil(64) * 3_330
}

fn pcie_ps(bytes: u64) -> u64 {
    // 200 ns per 4 KiB TLP plus 4 GB/s serialisation
    bytes.div_ceil(4096) * 200_000 + bytes * 1000 / 4
}

fn c1() -> Outcome {
    let mut detail = Vec::new();
    let mut bad = 0usize;
    for kind in PlatformKind::ALL {
        let cfg = small(kind, 8);
        let spec = GenSpec {
            access_bytes: 64,
            read_ratio: 0.5,
            ..GenSpec::new(WorkloadKind::Mixed, 48 * 4 * KIB, 200, 11)
        };
        let trace = generate(&spec);
        let verdicts = sweep_all(&cfg, &trace, &|_| {}).map_err(|e| format!("{kind}: {e}"))?;
        let unsound = verdicts.iter().filter(|v| !v.ok()).count();
        let max_replay = verdicts.iter().map(|v| v.replayed.len()).max().unwrap_or(0);
        let acked = verdicts.last().map(|v| v.acked_stores).unwrap_or(0);
        if kind.mode() == hams_sim::controller::Mode::Persist && max_replay > 1 {
            bad += 1;
            detail.push(format!("{kind}: persist replayed {max_replay} commands"));
        }
        bad += unsound;
        detail.push(format!(
            "{kind}: {} points, {unsound} unsound, {acked} acked stores, max replay {max_replay}",
            verdicts.len()
        ));
    }
    check(bad == 0, detail.join("; "))
}

fn c2() -> Outcome {
    // engine level: four staged commands, the second never completes
    let mos = small(PlatformKind::AdvancedExtend, 8).mos;
    let mut pinned = PinnedRegion::new(&mos, 16, 32, 64).map_err(|e| e.to_string())?;
    let mut eng = NvmeEngine::new(16);
    let mut cids = Vec::new();
    for (i, op) in [Opcode::Read, Opcode::Write, Opcode::Read, Opcode::Read].into_iter().enumerate() {
        let cmd = eng.compose(op, 0, i as u64, 4096).map_err(|e| e.to_string())?;
        eng.submit(&mut pinned, cmd).map_err(|e| e.to_string())?;
        cids.push(cmd.cid);
    }
    while hams_sim::nvme::device_fetch(&mut pinned).is_some() {}
    for &c in [cids[0], cids[2], cids[3]].iter() {
        hams_sim::nvme::device_post(&mut pinned, c);
    }
    // the host consumes completions in CQ order
    for _ in 0..3 {
        eng.on_msi(&mut pinned).map_err(|e| e.to_string())?;
    }
    let tags: Vec<u8> = pinned.sq[..4].iter().map(|s| s[8] & 1).collect();
    let replay: Vec<u16> = eng.recover(&mut pinned).map_err(|e| e.to_string())?.iter().map(|c| c.cid).collect();
    let engine_ok = tags == [0, 1, 0, 0] && replay == vec![cids[1]];

    // platform level: CMD1 fill, CMD2 slow evict write, CMD3 fill, CMD4 fill
    let cfg = {
        let mut c = small(PlatformKind::AdvancedExtend, 8);
        c.driver.max_outstanding = 4;
        c
    };
    let page = cfg.mos.page_size_bytes;
    let sets = cfg.mos.num_sets();
    let dirty_page = sets + 1; // resident in set 1, not yet on flash
    let old = PageContent(0xD1);
    let at = |p: u64| TraceRecord {
        tick: SimTime::ZERO,
        op: AccessKind::Load,
        addr: MosAddress(p * page),
        size: 64,
    };
    let trace = vec![at(0), at(2 * sets + 1), at(2)];
    let setup = move |p: &mut Platform| p.preload_dirty(dirty_page, old);
    let total = hams_sim::failure::total_events(&cfg, &trace, &setup).map_err(|e| e.to_string())?;
    let mut found = None;
    for k in 0..=total {
        let image = hams_sim::failure::inject(&cfg, &trace, &setup, CrashPlan { after_events: k })
            .map_err(|e| e.to_string())?;
        let pattern: Vec<u8> = image.nvdimm.pinned.sq[..4].iter().map(|s| s[8] & 1).collect();
        if pattern == [0, 1, 0, 0] {
            found = Some(k);
            break;
        }
    }
    let Some(k) = found else {
        return Err(format!("engine ok {engine_ok}; no crash point with tags 0,1,0,0"));
    };
    let v = crash_at(&cfg, &trace, &setup, CrashPlan { after_events: k }).map_err(|e| e.to_string())?;
    let platform_ok = v.ok() && v.replayed.len() == 1 && v.replayed == v.journaled;
    check(
        engine_ok && platform_ok,
        format!(
            "engine replay {replay:?} of {cids:?}; platform crash after {k} events replays {:?}, verdict ok {}",
            v.replayed,
            v.ok()
        ),
    )
}

/// Direct-mapped reference cache over page numbers.
struct RefCache {
    sets: u64,
    lines: HashMap<u64, (u64, bool)>,
}

impl RefCache {
    fn new(sets: u64) -> Self {
        RefCache {
            sets,
            lines: HashMap::new(),
        }
    }

    /// Returns hit.
    fn access(&mut self, page: u64, store: bool) -> bool {
        let (tag, set) = (page / self.sets, page % self.sets);
        let hit = self.lines.get(&set).is_some_and(|l| l.0 == tag);
        let line = self.lines.entry(set).or_insert((tag, false));
        if !hit {
            *line = (tag, false);
        }
        line.1 |= store;
        hit
    }
}

fn c3() -> Outcome {
    let cfg = small(PlatformKind::AdvancedExtend, 64);
    let sets = cfg.mos.num_sets();
    let page = cfg.mos.page_size_bytes;
    let spec = GenSpec {
        access_bytes: 64,
        read_ratio: 0.4,
        ..GenSpec::new(WorkloadKind::Mixed, 4 * 8 * page, 10_000, 3)
    };
    // fold every address onto sets 0..4: page k*sets + s
    let trace: Vec<TraceRecord> = generate(&spec)
        .into_iter()
        .map(|mut r| {
            let p = r.addr.0 / page;
            let (s, k) = (p % 4, p / 4);
            r.addr = MosAddress((k * sets + s) * page + r.addr.0 % page);
            r
        })
        .collect();
    let mut p = Platform::new(&cfg, trace.clone()).map_err(|e| e.to_string())?;
    p.enable_audit();
    p.run().map_err(|e| e.to_string())?;
    let audit = &p.ctrl.audit;

    // sequential reference in acknowledgement order
    let mut reference = RefCache::new(sets);
    let mut content: HashMap<u64, PageContent> = HashMap::new();
    let mut hit_mismatch = 0;
    for r in p.records() {
        let pg = r.addr / page;
        let store = r.kind == AccessKind::Store;
        if reference.access(pg, store) != r.hit {
            hit_mismatch += 1;
        }
        if store {
            let c = content.entry(pg).or_default();
            *c = c.apply_store(r.req_id, r.addr % page, trace[r.req_id as usize].size as u64);
        }
    }
    let mut state_mismatch = 0;
    for (&pg, &c) in &content {
        if p.logical_content(pg) != c {
            state_mismatch += 1;
        }
    }
    for s in 0..sets {
        let e = p.nv.tag(s);
        let want = reference.lines.get(&s).copied();
        let got = e.valid.then_some((e.tag, e.dirty));
        if want != got {
            state_mismatch += 1;
        }
    }
    let bus_ok = hams_sim::timeline::non_overlapping(p.bus.occupancy_log());
    let ok = audit.redundant_evictions == 0
        && audit.hazard_violations == 0
        && audit.busy_victims == 0
        && hit_mismatch == 0
        && state_mismatch == 0
        && bus_ok;
    check(
        ok,
        format!(
            "redundant evictions {}, hazards {}, busy victims {}, hit mismatches {hit_mismatch}, state mismatches {state_mismatch}, waits {}, bus overlap-free {bus_ok}",
            audit.redundant_evictions, audit.hazard_violations, audit.busy_victims, p.ctrl.stats.waits
        ),
    )
}

fn c4() -> Outcome {
    let mut cfg = small(PlatformKind::AdvancedExtend, 1024);
    cfg.driver.max_outstanding = 1;
    let sets = cfg.mos.num_sets();
    let page = cfg.mos.page_size_bytes;
    let spec = GenSpec {
        access_bytes: 64,
        read_ratio: 0.7,
        ..GenSpec::new(WorkloadKind::Mixed, 2 * sets * page, 100_000, 5)
    };
    let trace = generate(&spec);
    let mut p = Platform::new(&cfg, trace.clone()).map_err(|e| e.to_string())?;
    p.run().map_err(|e| e.to_string())?;
    let mut flat: HashMap<u64, u64> = HashMap::new();
    let mut mismatches = 0;
    let mut hits = 0;
    for (r, t) in p.records().iter().zip(&trace) {
        let pg = t.addr.0 / page;
        let hit = flat.get(&(pg % sets)) == Some(&(pg / sets));
        flat.insert(pg % sets, pg / sets);
        hits += hit as u64;
        if r.hit != hit || r.addr != t.addr.0 {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0 && p.records().len() == trace.len(),
        format!("{} requests, {hits} oracle hits, {mismatches} mismatches", trace.len()),
    )
}

fn miss_reports(n: usize) -> Result<HashMap<PlatformKind, MetricsReport>, String> {
    let cfg = SystemConfig::default();
    let trace = miss_trace(&cfg, n, 21);
    let mut out = HashMap::new();
    for k in PlatformKind::ALL {
        let r = run(&cfg.clone().with_platform(k), &trace, "rndRd").map_err(|e| e.to_string())?;
        if r.misses() != n as u64 {
            return Err(format!("{k}: expected {n} misses, got {}", r.misses()));
        }
        out.insert(k, r);
    }
    Ok(out)
}

fn c5(r: &HashMap<PlatformKind, MetricsReport>) -> Outcome {
    use PlatformKind::*;
    let mut lines = Vec::new();
    let mut ok = true;
    for (adv, base) in [(AdvancedExtend, BaselineExtend), (AdvancedPersist, BaselinePersist)] {
        let (a, b) = (r[&adv].total_latency().as_ps() as f64, r[&base].total_latency().as_ps() as f64);
        let cut = 1.0 - a / b;
        ok &= cut >= 0.10;
        lines.push(format!("{adv} stall {:.1}% below {base}", 100.0 * cut));
    }
    check(ok, lines.join("; "))
}

fn c6(r: &HashMap<PlatformKind, MetricsReport>) -> Outcome {
    use PlatformKind::*;
    let mut lines = Vec::new();
    let mut ok = true;
    for (p, e) in [(BaselinePersist, BaselineExtend), (AdvancedPersist, AdvancedExtend)] {
        let extra = r[&p].total_latency().as_ps() as f64 / r[&e].total_latency().as_ps() as f64 - 1.0;
        ok &= extra >= 0.20;
        lines.push(format!("{p} delay +{:.1}% over {e}", 100.0 * extra));
    }
    check(ok, lines.join("; "))
}

fn c7(r: &HashMap<PlatformKind, MetricsReport>) -> Outcome {
    let rep = &r[&PlatformKind::BaselineExtend];
    let page = SystemConfig::default().mos.page_size_bytes;
    // SQ write, doorbell, fetch, data DMA, completion post
    let per_miss = ddr4_ps(64) + pcie_ps(4) + ddr4_ps(64) + pcie_ps(64) + pcie_ps(page) + ddr4_ps(page) + pcie_ps(16) + ddr4_ps(16);
    let predicted = per_miss as f64 * rep.misses() as f64;
    let measured = rep.classes.interface.as_ps() as f64;
    let err = (measured - predicted).abs() / predicted;
    check(
        err <= 0.01,
        format!(
            "interface {:.1} ns/miss vs closed form {:.1} ns/miss, error {:.4}%",
            measured / rep.misses() as f64 / 1e3,
            per_miss as f64 / 1e3,
            100.0 * err
        ),
    )
}

fn c8() -> Outcome {
    let idle_read = |stripe: u32| -> Result<SimTime, String> {
        let geom = FlashGeometry {
            channel_stripe: stripe,
            ..FlashGeometry::default()
        };
        let mut dev = UllFlash::new(geom, 4096, 1 << 30, None).map_err(|e| e.to_string())?;
        let cmd = NvmeCommand::new(0, Opcode::Read, 0, 0, 4096, false);
        Ok(dev.plan_read(SimTime::ZERO, &cmd).map_err(|e| e.to_string())?.ready_at)
    };
    let (one, two) = (idle_read(1)?, idle_read(2)?);
    // half a 4 KiB page over an 800 MB/s channel
    let half_page_dma = 2048 * 1_000_000 / 800;
    let diff = one.as_ps() - two.as_ps();
    check(
        diff == half_page_dma,
        format!(
            "stripe 1 {:.2} us, stripe 2 {:.2} us, difference {diff} ps (expected {half_page_dma})",
            one.as_us_f64(),
            two.as_us_f64()
        ),
    )
}

fn c9() -> Outcome {
    let cfg = SystemConfig::default();
    let page = cfg.mos.page_size_bytes;
    let ratio = |bytes: u64| -> Result<f64, String> {
        let q4 = sequential_read_throughput(&cfg, 4, bytes, 4000).map_err(|e| e.to_string())?;
        let q32 = sequential_read_throughput(&cfg, 32, bytes, 4000).map_err(|e| e.to_string())?;
        Ok(q4.bytes_per_s / q32.bytes_per_s)
    };
    let at_page = ratio(page)?;
    let at_4k = ratio(4096)?;
    check(
        at_page >= 0.95,
        format!(
            "{} KiB commands: QD4 reaches {:.1}% of QD32 (4 KiB commands, informational: {:.1}%)",
            page / 1024,
            100.0 * at_page,
            100.0 * at_4k
        ),
    )
}

fn c10() -> Outcome {
    let cfg = SystemConfig::default().with_platform(PlatformKind::AdvancedExtend);
    let page = cfg.mos.page_size_bytes;
    // 10^4 distinct pages, each touched once
    let trace: Vec<TraceRecord> = (0..10_000u64)
        .map(|i| TraceRecord {
            tick: SimTime::ZERO,
            op: AccessKind::Load,
            addr: MosAddress(i * page),
            size: 64,
        })
        .collect();
    let hams = run(&cfg, &trace, "cold").map_err(|e| e.to_string())?;
    let mut lines = vec![format!("hams {:.0} faults/s", hams.throughput())];
    let mut ok = hams.misses() == 10_000;
    for overhead in [15.0, 17.5, 20.0] {
        let m = mmap_baseline(&cfg, &trace, overhead, "cold");
        let speedup = hams.throughput() / m.throughput();
        ok &= speedup >= 2.0 && m.hits == 0;
        lines.push(format!("{overhead} us: mmap {:.0}/s, speedup {speedup:.2}x", m.throughput()));
    }
    check(ok, lines.join("; "))
}

fn c11() -> Outcome {
    let cfg = small(PlatformKind::BaselineExtend, 256);
    let spec = GenSpec {
        access_bytes: 64,
        ..GenSpec::new(WorkloadKind::Mixed, 4 * MIB, 5_000, 99)
    };
    let once = || -> Result<String, String> {
        let mut p = Platform::new(&cfg, generate(&spec)).map_err(|e| e.to_string())?;
        p.run().map_err(|e| e.to_string())?;
        Ok(reports_to_csv(&[p.report("mixed")]) + &records_to_csv(p.records()))
    };
    let (a, b) = (once()?, once()?);

    // and through the command-line front end
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("t.trace");
    let bin = env!("CARGO_BIN_EXE_hams");
    let gen = std::process::Command::new(bin)
        .args(["generate", "--kind", "mixed", "--count", "2000", "--footprint", "67108864", "--access-bytes", "64"])
        .arg("--trace")
        .arg(&trace)
        .output()
        .map_err(|e| e.to_string())?
        .status;
    let mut outputs = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let st = std::process::Command::new(bin)
            .args(["compare", "--seed", "7"])
            .arg("--trace")
            .arg(&trace)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(String::from_utf8_lossy(&st.stderr).into_owned());
        }
        outputs.push(std::fs::read(out.join("compare.csv")).map_err(|e| e.to_string())?);
    }
    check(
        a == b && gen.success() && outputs[0] == outputs[1],
        format!(
            "library CSV {} bytes identical {}; CLI compare CSV {} bytes identical {}",
            a.len(),
            a == b,
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, what: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{name} PASS  {what}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("{name} FAIL  {what}: {d} [{secs:.1}s]")
            }
        }
    };
    report("C1", "crash-recovery soundness", &mut c1);
    report("C2", "single unfinished command replay", &mut c2);
    report("C3", "hazard freedom on 4 hot sets", &mut c3);
    report("C4", "hit/miss sequence vs flat-map cache", &mut c4);
    let misses = miss_reports(2000);
    let with = |f: fn(&HashMap<PlatformKind, MetricsReport>) -> Outcome| {
        let m = misses.clone();
        move || m.clone().and_then(|m| f(&m))
    };
    report("C5", "advanced datapath cuts memory stall", &mut with(c5));
    report("C6", "persist mode costs more delay than extend", &mut with(c6));
    report("C7", "interface class matches closed form", &mut with(c7));
    report("C8", "channel striping halves the DMA", &mut c8);
    report("C9", "saturation knee at queue depth 4", &mut c9);
    report("C10", "hams vs mmap on cold faults", &mut c10);
    report("C11", "byte-identical reports", &mut c11);
    if failed == 0 {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria fail");
        ExitCode::FAILURE
    }
}
