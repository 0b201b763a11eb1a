use nalgebra::Point3;

/// Uniform Catmull-Rom spline through the given control points (endpoint
/// tangents from duplicated end controls), sampled into a dense polyline with
/// an accurate arc-length table.
pub(crate) struct SampledSpline {
    pub points: Vec<Point3<f64>>,
    /// Cumulative arc length per point, starting at 0.
    pub arc: Vec<f64>,
}

fn catmull_rom(
    p0: &Point3<f64>,
    p1: &Point3<f64>,
    p2: &Point3<f64>,
    p3: &Point3<f64>,
    t: f64,
) -> Point3<f64> {
    let t2 = t * t;
    let t3 = t2 * t;
    let w0 = -0.5 * t3 + t2 - 0.5 * t;
    let w1 = 1.5 * t3 - 2.5 * t2 + 1.0;
    let w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
    let w3 = 0.5 * t3 - 0.5 * t2;
    Point3::new(
        w0 * p0.x + w1 * p1.x + w2 * p2.x + w3 * p3.x,
        w0 * p0.y + w1 * p1.y + w2 * p2.y + w3 * p3.y,
        w0 * p0.z + w1 * p1.z + w2 * p2.z + w3 * p3.z,
    )
}

/// Sample the spline finely enough that chords deviate from the curve far
/// less than `chord_tolerance`.
pub(crate) fn sample_spline(controls: &[Point3<f64>], chord_tolerance: f64) -> SampledSpline {
    assert!(controls.len() >= 2, "need at least two control points");
    let get = |i: isize| -> Point3<f64> {
        let idx = i.clamp(0, controls.len() as isize - 1) as usize;
        controls[idx]
    };

    let mut points = Vec::new();
    points.push(controls[0]);
    for seg in 0..controls.len() - 1 {
        let (p0, p1, p2, p3) = (
            get(seg as isize - 1),
            get(seg as isize),
            get(seg as isize + 1),
            get(seg as isize + 2),
        );
        let chord = (p2 - p1).norm();
        let steps = ((chord / chord_tolerance).ceil() as usize).clamp(8, 4096);
        for k in 1..=steps {
            points.push(catmull_rom(&p0, &p1, &p2, &p3, k as f64 / steps as f64));
        }
    }

    let mut arc = Vec::with_capacity(points.len());
    arc.push(0.0);
    for w in points.windows(2) {
        arc.push(arc.last().unwrap() + (w[1] - w[0]).norm());
    }
    SampledSpline { points, arc }
}

impl SampledSpline {
    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Position at arc parameter `t`, clamped.
    pub fn position(&self, t: f64) -> Point3<f64> {
        let t = t.clamp(0.0, self.length());
        let idx = match self.arc.binary_search_by(|a| a.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg = self.arc[idx + 1] - self.arc[idx];
        let f = if seg > 0.0 { (t - self.arc[idx]) / seg } else { 0.0 };
        self.points[idx] + (self.points[idx + 1] - self.points[idx]) * f
    }

    /// Emit points spaced `step` apart along the arc (endpoints included).
    pub fn emit(&self, step: f64) -> Vec<(f64, Point3<f64>)> {
        let n = ((self.length() / step).ceil() as usize).max(1);
        (0..=n)
            .map(|k| {
                let t = self.length() * k as f64 / n as f64;
                (t, self.position(t))
            })
            .collect()
    }
}
