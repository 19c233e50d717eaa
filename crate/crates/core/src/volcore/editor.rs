//! Sparse control-point description of a transfer function, as edited in a
//! UI, and its expansion into a dense table.

use serde::{Deserialize, Serialize};

use super::TransferFunction;
use crate::{Error, Result};

/// Smallest distance kept between neighboring control points.
pub const MIN_GAP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpacityPoint {
    pub position: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStop {
    pub position: f64,
    pub rgb: [f64; 3],
}

/// Opacity points and color stops, each strictly increasing in position with
/// the first pinned at 0 and the last at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfEditor {
    opacity: Vec<OpacityPoint>,
    colors: Vec<ColorStop>,
}

impl Default for TfEditor {
    /// Transparent, black to white.
    fn default() -> Self {
        Self {
            opacity: vec![OpacityPoint { position: 0.0, alpha: 0.0 }, OpacityPoint { position: 1.0, alpha: 0.0 }],
            colors: vec![ColorStop { position: 0.0, rgb: [0.0; 3] }, ColorStop { position: 1.0, rgb: [1.0; 3] }],
        }
    }
}

fn unit(v: f64, what: &str) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::InvalidConfig(format!("{what} {v} not in [0, 1]")))
    }
}

trait Point: Copy {
    fn position(&self) -> f64;
    fn set_position(&mut self, p: f64);
}

impl Point for OpacityPoint {
    fn position(&self) -> f64 {
        self.position
    }
    fn set_position(&mut self, p: f64) {
        self.position = p;
    }
}

impl Point for ColorStop {
    fn position(&self) -> f64 {
        self.position
    }
    fn set_position(&mut self, p: f64) {
        self.position = p;
    }
}

fn check_points<P: Point>(pts: &[P], what: &str) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidConfig(format!("{what}: {m}")));
    if pts.len() < 2 {
        return bad("need at least two points".into());
    }
    if pts[0].position() != 0.0 || pts[pts.len() - 1].position() != 1.0 {
        return bad("first point must sit at 0 and last at 1".into());
    }
    if let Some(w) = pts.windows(2).find(|w| !(w[1].position() > w[0].position())) {
        return bad(format!("positions not increasing at {}", w[1].position()));
    }
    Ok(())
}

/// Inserts at `p`, or returns the index of the point already within `MIN_GAP`.
fn insert<P: Point>(pts: &mut Vec<P>, point: P) -> (usize, bool) {
    let p = point.position();
    if let Some(i) = pts.iter().position(|q| (q.position() - p).abs() < MIN_GAP) {
        return (i, false);
    }
    let i = pts.iter().position(|q| q.position() > p).unwrap_or(pts.len());
    pts.insert(i, point);
    (i, true)
}

fn move_to<P: Point>(pts: &mut [P], i: usize, p: f64) -> Result<()> {
    if i >= pts.len() {
        return Err(Error::InvalidConfig(format!("no control point {i}")));
    }
    let last = pts.len() - 1;
    let p = if i == 0 || i == last {
        pts[i].position()
    } else {
        p.clamp(pts[i - 1].position() + MIN_GAP, pts[i + 1].position() - MIN_GAP)
    };
    pts[i].set_position(p);
    Ok(())
}

fn remove<P: Point>(pts: &mut Vec<P>, i: usize) -> Result<()> {
    if i >= pts.len() {
        return Err(Error::InvalidConfig(format!("no control point {i}")));
    }
    if i == 0 || i == pts.len() - 1 {
        return Err(Error::InvalidConfig("endpoints cannot be deleted".into()));
    }
    pts.remove(i);
    Ok(())
}

/// Piecewise-linear interpolation over sorted points.
fn interpolate<P: Point, const N: usize>(pts: &[P], t: f64, value: impl Fn(&P) -> [f64; N]) -> [f64; N] {
    let k = pts.partition_point(|q| q.position() <= t).clamp(1, pts.len() - 1);
    let (a, b) = (&pts[k - 1], &pts[k]);
    let w = ((t - a.position()) / (b.position() - a.position())).clamp(0.0, 1.0);
    let (va, vb) = (value(a), value(b));
    std::array::from_fn(|c| (1.0 - w) * va[c] + w * vb[c])
}

impl TfEditor {
    pub fn new(opacity: Vec<OpacityPoint>, colors: Vec<ColorStop>) -> Result<Self> {
        check_points(&opacity, "opacity")?;
        check_points(&colors, "colors")?;
        for o in &opacity {
            unit(o.alpha, "alpha")?;
        }
        for c in &colors {
            for v in c.rgb {
                unit(v, "color")?;
            }
        }
        Ok(Self { opacity, colors })
    }

    pub fn opacity(&self) -> &[OpacityPoint] {
        &self.opacity
    }

    pub fn colors(&self) -> &[ColorStop] {
        &self.colors
    }

    /// Adds an opacity point; a point already at (nearly) the same position
    /// takes the new alpha instead. Returns the point's index.
    pub fn add_opacity(&mut self, position: f64, alpha: f64) -> Result<usize> {
        let point = OpacityPoint { position: unit(position, "position")?, alpha: unit(alpha, "alpha")? };
        let (i, inserted) = insert(&mut self.opacity, point);
        if !inserted {
            self.opacity[i].alpha = alpha;
        }
        Ok(i)
    }

    /// Moves point `i`, clamped to stay `MIN_GAP` away from its neighbors.
    /// Endpoints keep their position and only change alpha.
    pub fn move_opacity(&mut self, i: usize, position: f64, alpha: f64) -> Result<()> {
        unit(alpha, "alpha")?;
        move_to(&mut self.opacity, i, position)?;
        self.opacity[i].alpha = alpha;
        Ok(())
    }

    pub fn delete_opacity(&mut self, i: usize) -> Result<()> {
        remove(&mut self.opacity, i)
    }

    pub fn add_color(&mut self, position: f64, rgb: [f64; 3]) -> Result<usize> {
        for v in rgb {
            unit(v, "color")?;
        }
        let stop = ColorStop { position: unit(position, "position")?, rgb };
        let (i, inserted) = insert(&mut self.colors, stop);
        if !inserted {
            self.colors[i].rgb = rgb;
        }
        Ok(i)
    }

    pub fn move_color(&mut self, i: usize, position: f64) -> Result<()> {
        move_to(&mut self.colors, i, position)
    }

    pub fn delete_color(&mut self, i: usize) -> Result<()> {
        remove(&mut self.colors, i)
    }

    /// Dense table sampled at the entry positions `k / (n_t - 1)`.
    pub fn derive(&self, n_t: usize) -> Result<TransferFunction> {
        if n_t < 2 {
            return Err(Error::InvalidConfig(format!("n_t must be >= 2, got {n_t}")));
        }
        TransferFunction::new(
            (0..n_t)
                .map(|k| {
                    let t = k as f64 / (n_t - 1) as f64;
                    let [r, g, b] = interpolate(&self.colors, t, |c| c.rgb);
                    let [a] = interpolate(&self.opacity, t, |o| [o.alpha]);
                    [r, g, b, a]
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volcore::io::{tf_from_json, tf_to_json};

    #[test]
    fn tent_from_one_point() {
        let mut ed = TfEditor::default();
        ed.add_opacity(0.5, 1.0).unwrap();
        let tf = ed.derive(9).unwrap();
        let alpha: Vec<f64> = tf.entries().iter().map(|e| e[3]).collect();
        assert_eq!(alpha, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn moves_are_clamped_and_endpoints_pinned() {
        let mut ed = TfEditor::default();
        ed.add_opacity(0.3, 0.5).unwrap();
        ed.add_opacity(0.6, 0.5).unwrap();
        ed.move_opacity(1, 0.9, 0.2).unwrap();
        assert!((ed.opacity()[1].position - (0.6 - MIN_GAP)).abs() < 1e-15);
        ed.move_opacity(0, 0.4, 0.7).unwrap();
        assert_eq!(ed.opacity()[0], OpacityPoint { position: 0.0, alpha: 0.7 });
        assert!(ed.delete_opacity(0).is_err());
        assert!(ed.delete_opacity(3).is_err());
        ed.delete_opacity(2).unwrap();
        assert_eq!(ed.opacity().len(), 3);
    }

    #[test]
    fn duplicate_position_updates_in_place() {
        let mut ed = TfEditor::default();
        assert_eq!(ed.add_opacity(1.0, 0.4).unwrap(), 1);
        assert_eq!(ed.opacity().len(), 2);
        assert_eq!(ed.opacity()[1].alpha, 0.4);
    }

    #[test]
    fn colors_interpolate() {
        let mut ed = TfEditor::default();
        ed.add_color(0.5, [1.0, 0.0, 0.0]).unwrap();
        let tf = ed.derive(5).unwrap();
        assert_eq!(tf.entries()[2][..3], [1.0, 0.0, 0.0]);
        assert_eq!(tf.entries()[1][..3], [0.5, 0.0, 0.0]);
        assert_eq!(tf.entries()[4][..3], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn derived_table_round_trips_through_the_loader() {
        let mut ed = TfEditor::default();
        ed.add_opacity(0.2, 0.9).unwrap();
        ed.add_opacity(0.7, 0.1).unwrap();
        ed.add_color(0.4, [0.2, 0.8, 0.3]).unwrap();
        let tf = ed.derive(256).unwrap();
        let back = tf_from_json(&tf_to_json(&tf)).unwrap();
        assert_eq!(back.entries(), tf.entries());
    }

    #[test]
    fn invalid_layouts_are_rejected() {
        let o = |p, a| OpacityPoint { position: p, alpha: a };
        let c = ColorStop { position: 0.0, rgb: [0.0; 3] };
        let c1 = ColorStop { position: 1.0, ..c };
        assert!(TfEditor::new(vec![o(0.0, 0.0), o(0.9, 0.0)], vec![c, c1]).is_err());
        assert!(TfEditor::new(vec![o(0.0, 0.0), o(0.5, 0.0), o(0.5, 1.0), o(1.0, 0.0)], vec![c, c1]).is_err());
        assert!(TfEditor::new(vec![o(0.0, 2.0), o(1.0, 0.0)], vec![c, c1]).is_err());
        assert!(TfEditor::new(vec![o(0.0, 0.0), o(1.0, 0.0)], vec![c, c1]).is_ok());
    }
}
