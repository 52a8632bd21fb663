//! Propagates the object box through a synthetic video with exact flow and oracle
//! masks, printing the IoU against the padded ground-truth box.

use objtrack::segmask::{padded_bbox, track_boxes, BoxPadding, OracleFlow, OracleMaskRefiner, SegmaskConfig};
use objtrack::synth::{generate_sequence, Protocol, SequenceSpec, SynthConfig};

fn main() -> objtrack::Result<()> {
    let spec = SequenceSpec {
        length: 40,
        ..SequenceSpec::new(Protocol::ShapenetVideo, 3)
    };
    let seq = generate_sequence(&spec, &SynthConfig::default())?;
    let cfg = SegmaskConfig::default();
    let b0 = padded_bbox(&seq.frames[0].mask, BoxPadding::default())?;
    let tracked = track_boxes(
        &seq.images(),
        b0,
        &OracleFlow { flows: seq.flows() },
        &OracleMaskRefiner { masks: seq.masks() },
        &cfg,
    )?;
    for (t, (bbox, _)) in tracked.iter().enumerate().step_by(5) {
        let gt = padded_bbox(&seq.frames[t].mask, cfg.padding)?;
        println!("frame {t:>3}: {bbox:?}  IoU {:.3}", bbox.iou(&gt));
    }
    Ok(())
}
