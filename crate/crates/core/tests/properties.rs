use std::collections::HashMap;

use hams_sim::config::{PlatformKind, SystemConfig};
use hams_sim::controller::AccessKind;
use hams_sim::mos::{MosAddress, KIB, MIB};
use hams_sim::nvdimm::PinnedRegion;
use hams_sim::nvme::{device_fetch, device_post, NvmeEngine, Opcode};
use hams_sim::sim::SimTime;
use hams_sim::system::Platform;
use hams_sim::workload::energy::{EnergyCounters, EnergyModel};
use hams_sim::workload::generate::{generate, GenSpec, WorkloadKind};
use hams_sim::workload::run;
use hams_sim::workload::trace::{parse_trace_str, serialize_trace, TraceRecord};
use proptest::prelude::*;

fn small(kind: PlatformKind, sets: u64) -> SystemConfig {
    let mut cfg = SystemConfig::default().with_platform(kind);
    cfg.mos.page_size_bytes = 4 * KIB;
    cfg.mos.pinned_bytes = 2 * MIB;
    cfg.mos.nvdimm_bytes = 2 * MIB + sets * 4 * KIB;
    cfg.mos.flash_bytes = 64 * MIB;
    cfg.validate().unwrap();
    cfg
}

fn any_platform() -> impl Strategy<Value = PlatformKind> {
    prop::sample::select(PlatformKind::ALL.to_vec())
}

fn page_trace(max_page: u64) -> impl Strategy<Value = Vec<TraceRecord>> {
    prop::collection::vec((0..max_page, any::<bool>(), 0u64..4096 / 64, 0u64..2_000_000), 1..150).prop_map(
        |v| {
            let mut tick = 0;
            v.into_iter()
                .map(|(page, store, line, gap)| {
                    tick += gap;
                    TraceRecord {
                        tick: SimTime::from_ps(tick),
                        op: if store { AccessKind::Store } else { AccessKind::Load },
                        addr: MosAddress(page * 4096 + line * 64),
                        size: 64,
                    }
                })
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn classes_conserve_latency(kind in any_platform(), trace in page_trace(96)) {
        let cfg = small(kind, 16);
        let mut p = Platform::new(&cfg, trace.clone()).unwrap();
        p.run().unwrap();
        prop_assert_eq!(p.records().len(), trace.len());
        for r in p.records() {
            prop_assert_eq!(r.classes.total(), r.latency());
            if r.hit {
                prop_assert_eq!(r.classes.flash_array, SimTime::ZERO);
            }
        }
    }

    #[test]
    fn acked_contents_survive_a_clean_run(kind in any_platform(), trace in page_trace(64)) {
        let cfg = small(kind, 8);
        let mut p = Platform::new(&cfg, trace).unwrap();
        p.run().unwrap();
        let oracle = p.oracle();
        for page in oracle.pages() {
            prop_assert_eq!(p.logical_content(page), oracle.expected(page));
        }
    }

    #[test]
    fn persist_never_beats_extend(trace in page_trace(128), advanced in any::<bool>()) {
        let (persist, extend) = if advanced {
            (PlatformKind::AdvancedPersist, PlatformKind::AdvancedExtend)
        } else {
            (PlatformKind::BaselinePersist, PlatformKind::BaselineExtend)
        };
        let a = run(&small(persist, 16), &trace, "p").unwrap();
        let b = run(&small(extend, 16), &trace, "p").unwrap();
        prop_assert!(a.total_latency() >= b.total_latency());
    }

    #[test]
    fn trace_text_roundtrips(trace in page_trace(1 << 20)) {
        let text = serialize_trace(&trace);
        prop_assert_eq!(parse_trace_str(&text).unwrap(), trace);
    }

    #[test]
    fn energy_ignores_counter_order(parts in prop::collection::vec((0u64..1 << 20, 0u64..1 << 20, 0u64..64, 0u64..64, 0u64..1000), 1..20), buffered in any::<bool>()) {
        let m = EnergyModel::default();
        let span = SimTime::from_us(100);
        let sum = |order: &mut dyn Iterator<Item = &(u64, u64, u64, u64, u64)>| {
            let mut c = EnergyCounters::default();
            for &(r, w, fr, fp, cmds) in order {
                c.nvdimm_read_bytes += r;
                c.nvdimm_write_bytes += w;
                c.flash_page_reads += fr;
                c.flash_page_programs += fp;
                c.commands += cmds;
                c.pcie_bytes += r;
            }
            m.account(&c, span, buffered)
        };
        prop_assert_eq!(sum(&mut parts.iter()), sum(&mut parts.iter().rev()));
    }

    /// Free SQ room equals the number of submits that then succeed.
    #[test]
    fn room_matches_successful_submits(ops in prop::collection::vec(0u8..3, 0..120), persist in any::<bool>()) {
        let mos = small(PlatformKind::AdvancedExtend, 8).mos;
        let depth = 8;
        let mut pinned = PinnedRegion::new(&mos, depth, 2 * depth, 16).unwrap();
        let mut eng = NvmeEngine::new(depth);
        eng.set_persist(persist);
        let mut fetched = Vec::new();
        for op in ops {
            match op {
                0 => {
                    let room = eng.room(&pinned);
                    let mut ok = 0;
                    while let Ok(cmd) = eng.compose(Opcode::Read, 0, 0, 4096) {
                        if eng.submit(&mut pinned, cmd).is_err() {
                            eng.discard(&cmd);
                            break;
                        }
                        ok += 1;
                    }
                    prop_assert_eq!(room, ok);
                }
                1 => {
                    while let Some(cmd) = device_fetch(&mut pinned) {
                        fetched.push(cmd.unwrap().cid);
                    }
                }
                _ => {
                    if !fetched.is_empty() {
                        let cid = fetched.remove(0);
                        device_post(&mut pinned, cid);
                        eng.on_msi(&mut pinned).unwrap();
                    }
                }
            }
            prop_assert!(eng.check_consistency(&pinned).is_ok());
        }
    }
}

#[test]
fn random_reads_at_twice_the_cache_hit_half_the_time() {
    let cfg = small(PlatformKind::AdvancedExtend, 256);
    let spec = GenSpec {
        access_bytes: 64,
        ..GenSpec::new(WorkloadKind::RndRd, 2 * 256 * 4 * KIB, 40_000, 8)
    };
    let report = run(&cfg, &generate(&spec), "rndRd").unwrap();
    assert!((report.hit_rate() - 0.5).abs() <= 0.02, "hit rate {}", report.hit_rate());
}

#[test]
fn sequential_stream_misses_once_per_page() {
    let cfg = small(PlatformKind::BaselineExtend, 64);
    let spec = GenSpec {
        access_bytes: 64,
        ..GenSpec::new(WorkloadKind::SeqRd, 4 * MIB, 20_000, 1)
    };
    let trace = generate(&spec);
    let mut pages: HashMap<u64, ()> = HashMap::new();
    for r in &trace {
        pages.insert(r.addr.0 / 4096, ());
    }
    let report = run(&cfg, &trace, "seqRd").unwrap();
    assert_eq!(report.misses(), pages.len() as u64);
}
