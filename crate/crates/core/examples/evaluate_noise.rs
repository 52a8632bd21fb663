//! Tracks with a noisy ground-truth predictor and reports the pose metrics, with and
//! without ground-truth re-initialization every 15 frames.

use nalgebra::Vector3;
use objtrack::metrics::{evaluate, MetricsConfig};
use objtrack::segmask::{BoxPadding, OracleFlow, OracleMaskRefiner};
use objtrack::synth::{generate_sequence, Protocol, SequenceSpec, SynthConfig};
use objtrack::tracker::{track_sequence, NoisyOraclePredictor, OraclePredictor, Reinit, TrackerConfig, TrackerInit};

fn main() -> objtrack::Result<()> {
    let spec = SequenceSpec {
        length: 60,
        ..SequenceSpec::new(Protocol::ShapenetVideo, 5)
    };
    let seq = generate_sequence(&spec, &SynthConfig::default())?;
    let k = seq.spec.intrinsics;
    let gt = seq.poses();
    let inits: Vec<TrackerInit> = seq
        .frames
        .iter()
        .map(|f| TrackerInit::from_ground_truth(&f.pose, &f.mask, &k, BoxPadding::default()))
        .collect::<objtrack::Result<_>>()?;
    let points: Vec<Vector3<f64>> = seq.object.points.iter().map(|p| Vector3::from(*p)).collect();

    for reinit in [None, Some(15)] {
        let mut pred = NoisyOraclePredictor::new(
            OraclePredictor {
                intrinsics: k,
                poses: gt.clone(),
                input_size: 32,
            },
            0.02,
            0.01,
            1,
        );
        let traj = track_sequence(
            &seq.images(),
            &k,
            &inits[0],
            &mut pred,
            &OracleFlow { flows: seq.flows() },
            &OracleMaskRefiner { masks: seq.masks() },
            &TrackerConfig::default(),
            reinit.map(|every| Reinit { every, inits: &inits }),
        )?;
        let mut report = evaluate(&traj.poses(), &gt, &points, &k, &MetricsConfig::default())?;
        report.label = Some(match reinit {
            Some(n) => format!("reinit/{n}"),
            None => "free".into(),
        });
        println!("{}", report.table());
    }
    Ok(())
}
