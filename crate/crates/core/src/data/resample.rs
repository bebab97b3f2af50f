/// Tolerance on timestamps, in seconds, below which a stream counts as
/// already uniform.
const GRID_TOLERANCE_S: f64 = 1e-9;

/// True when `times[i] == times[0] + i / rate` for every row (to 1 ns).
pub fn is_uniform(times: &[f64], rate_hz: f64) -> bool {
    let Some(&t0) = times.first() else {
        return true;
    };
    times
        .iter()
        .enumerate()
        .all(|(i, &t)| (t - (t0 + i as f64 / rate_hz)).abs() <= GRID_TOLERANCE_S)
}

/// Linearly interpolates a nondecreasing timestamped stream onto the grid
/// `t0 + k / rate` for every grid point inside `[t0, t_last]`.
///
/// Streams that already sit on the grid are returned unchanged.
pub fn resample_uniform(times: &[f64], values: &[[f64; 3]], rate_hz: f64) -> Vec<[f64; 3]> {
    assert_eq!(times.len(), values.len());
    if times.len() < 2 || is_uniform(times, rate_hz) {
        return values.to_vec();
    }
    let t0 = times[0];
    let t_last = times[times.len() - 1];
    let count = ((t_last - t0) * rate_hz + GRID_TOLERANCE_S).floor() as usize + 1;

    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let t = t0 + k as f64 / rate_hz;
        // advance to the segment [times[j], times[j+1]] containing t
        while j + 2 < times.len() && times[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (times[j], times[j + 1]);
        let (va, vb) = (values[j], values[j + 1]);
        if tb <= ta || t <= ta {
            out.push(va);
        } else if t >= tb {
            out.push(vb);
        } else {
            let w = (t - ta) / (tb - ta);
            out.push([
                va[0] + (vb[0] - va[0]) * w,
                va[1] + (vb[1] - va[1]) * w,
                va[2] + (vb[2] - va[2]) * w,
            ]);
        }
    }
    out
}
