use super::{EventStream, SliceSequence};

/// Collapse an event stream into `steps` binary slices of `alpha_dt` microseconds each.
///
/// An event at `t_us` lands in slice `t_us / alpha_dt`; a pixel is set when at least one
/// event falls in its window. Events past `steps * alpha_dt` are dropped.
pub fn collapse(stream: &EventStream, alpha_dt: u32, steps: usize) -> SliceSequence {
    assert!(alpha_dt >= 1, "alpha_dt must be positive");
    assert!(steps >= 1, "at least one slice is required");
    let mut seq = SliceSequence::zeros(
        steps,
        stream.sensor_height as usize,
        stream.sensor_width as usize,
        alpha_dt,
    );
    for e in &stream.events {
        let t = (e.t_us / alpha_dt as u64) as usize;
        if t >= steps {
            continue;
        }
        seq.set(t, e.polarity as usize, e.y as usize, e.x as usize);
    }
    seq.label = stream.label;
    seq
}

/// Fraction of set elements.
pub fn spike_rate(seq: &SliceSequence) -> f64 {
    if seq.data().is_empty() {
        return 0.0;
    }
    let on = seq.data().iter().filter(|&&v| v != 0).count();
    on as f64 / seq.data().len() as f64
}
