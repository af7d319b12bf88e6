//! Binary training-pair shards.
//!
//! ```text
//! magic    8 bytes  "FMPPIPRS"
//! version  u32
//! horizon  u32
//! history  u32
//! count    u64
//! per pair:
//!   controls  2*horizon f64
//!   robot_pos 2 f64, goal 2 f64
//!   history   2*history f64
//!   mask      history u8 (0 or 1)
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::dynamics::Vec2;
use crate::error::{Error, Result};
use crate::flow::{Condition, TrainingPair};

pub const PAIRS_MAGIC: &[u8; 8] = b"FMPPIPRS";
pub const PAIRS_VERSION: u32 = 1;

pub fn write_pairs<W: Write>(mut w: W, pairs: &[TrainingPair]) -> Result<()> {
    let (t, h) = pairs
        .first()
        .map_or((0, 0), |p| (p.controls.len(), p.condition.history.len()));
    w.write_all(PAIRS_MAGIC)?;
    w.write_u32::<LE>(PAIRS_VERSION)?;
    w.write_u32::<LE>(t as u32)?;
    w.write_u32::<LE>(h as u32)?;
    w.write_u64::<LE>(pairs.len() as u64)?;
    for p in pairs {
        if p.controls.len() != t || p.condition.history.len() != h || p.condition.mask.len() != h {
            return Err(Error::Shape {
                op: "write_pairs",
                lhs: vec![p.controls.len(), p.condition.history.len()],
                rhs: vec![t, h],
            });
        }
        let c = &p.condition;
        for v in p.controls.iter().chain([&c.robot_pos, &c.goal]).chain(&c.history) {
            w.write_f64::<LE>(v.x)?;
            w.write_f64::<LE>(v.y)?;
        }
        for m in &c.mask {
            w.write_u8(*m as u8)?;
        }
    }
    Ok(())
}

pub fn read_pairs<R: Read>(mut r: R) -> Result<Vec<TrainingPair>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PAIRS_MAGIC {
        return Err(Error::Checkpoint("not a training-pair shard (bad magic)".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != PAIRS_VERSION {
        return Err(Error::Checkpoint(format!("unsupported shard version {version}")));
    }
    let t = r.read_u32::<LE>()? as usize;
    let h = r.read_u32::<LE>()? as usize;
    let n = r.read_u64::<LE>()?;
    let vec2 = |r: &mut R| -> Result<Vec2> { Ok(Vec2::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?)) };
    let mut out = Vec::new();
    for _ in 0..n {
        let controls = (0..t).map(|_| vec2(&mut r)).collect::<Result<Vec<_>>>()?;
        let robot_pos = vec2(&mut r)?;
        let goal = vec2(&mut r)?;
        let history = (0..h).map(|_| vec2(&mut r)).collect::<Result<Vec<_>>>()?;
        let mask = (0..h)
            .map(|_| match r.read_u8()? {
                0 => Ok(false),
                1 => Ok(true),
                b => Err(Error::Checkpoint(format!("invalid mask byte {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(TrainingPair {
            controls,
            condition: Condition {
                robot_pos,
                goal,
                history,
                mask,
            },
        });
    }
    Ok(out)
}
