//! Stages four commands in the pinned submission queue, completes all but
//! the second, then recovers: only the unfinished command is replayed.
//!
//!     cargo run --example journal_replay

use hams_sim::mos::MosConfig;
use hams_sim::nvdimm::PinnedRegion;
use hams_sim::nvme::{device_fetch, device_post, NvmeEngine, Opcode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mos = MosConfig::default();
    let mut pinned = PinnedRegion::new(&mos, 16, 32, 64)?;
    let mut eng = NvmeEngine::new(16);

    let mut cids = Vec::new();
    for (lba, op) in [Opcode::Read, Opcode::Write, Opcode::Read, Opcode::Read].into_iter().enumerate() {
        let cmd = eng.compose(op, 0, lba as u64, 4096)?;
        eng.submit(&mut pinned, cmd)?;
        cids.push(cmd.cid);
    }
    while let Some(cmd) = device_fetch(&mut pinned) {
        println!("device fetched cid {}", cmd?.cid);
    }
    for &cid in [cids[0], cids[2], cids[3]].iter() {
        device_post(&mut pinned, cid);
        let done = eng.on_msi(&mut pinned)?;
        println!("completed cid {}", done.cid);
    }

    let tags: Vec<_> = eng.journaled(&pinned);
    println!("journaled before power loss: {tags:?}");

    // a fresh engine sees only what the NVDIMM kept
    let mut after = NvmeEngine::new(16);
    for cmd in after.recover(&mut pinned)? {
        println!("replay cid {} {:?} lba {}", cmd.cid, cmd.opcode, cmd.lba);
    }
    Ok(())
}
