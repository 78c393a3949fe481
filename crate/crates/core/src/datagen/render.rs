use rand::Rng;

use crate::attrs::{Attrs, Color, Position, Shape};
use crate::error::{Error, Result};
use crate::numerics::{stream_rng, Tensor};

/// Channels of a render: RGB plus coverage.
pub const RENDER_CHANNELS: usize = 4;
/// Half-extent of every shape in pixels.
const HALF: i64 = 3;

fn covers(shape: Shape, dx: i64, dy: i64) -> bool {
    match shape {
        Shape::Square => dx.abs() <= HALF && dy.abs() <= HALF,
        Shape::Circle => dx * dx + dy * dy <= 12,
        // apex up, base on the bottom row
        Shape::Triangle => dy.abs() <= HALF && 2 * dx.abs() <= dy + HALF,
    }
}

fn check_canvas(h: usize, w: usize) -> Result<()> {
    if h < 16 || w < 16 {
        return Err(Error::Config(format!("renders need at least 16x16 pixels, got {h}x{w}")));
    }
    Ok(())
}

fn anchor(position: Position, w: usize) -> i64 {
    let w = w as i64;
    match position {
        Position::Left => w / 4,
        Position::Center => w / 2,
        Position::Right => 3 * w / 4,
    }
}

/// Renders `attrs` on an `[4, h, w]` canvas in `[0, 1]`. The seed jitters
/// the centre by at most one pixel per axis.
pub fn render(attrs: Attrs, h: usize, w: usize, seed: u64) -> Result<Tensor> {
    check_canvas(h, w)?;
    let mut rng = stream_rng(seed, &[attrs.index() as u64]);
    let cx = anchor(attrs.position, w) + rng.gen_range(-1..=1);
    let cy = (h / 2) as i64 + rng.gen_range(-1..=1);
    let rgb = attrs.color.rgb();
    let mut data = vec![0.0; RENDER_CHANNELS * h * w];
    for y in 0..h {
        for x in 0..w {
            if covers(attrs.shape, x as i64 - cx, y as i64 - cy) {
                let at = y * w + x;
                for (c, v) in rgb.iter().enumerate() {
                    data[c * h * w + at] = *v;
                }
                data[3 * h * w + at] = 1.0;
            }
        }
    }
    Tensor::new(&[RENDER_CHANNELS, h, w], data)
}

fn iou(mask: &[bool], h: usize, w: usize, shape: Shape, cx: i64, cy: i64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let a = mask[y * w + x];
            let b = covers(shape, x as i64 - cx, y as i64 - cy);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Reads the attributes back off a render. `None` when no pixel is covered.
///
/// Coverage is the fourth channel thresholded at 0.5; colour is the largest
/// mean RGB channel over covered pixels; position comes from the coverage
/// centroid; shape is the template with the best overlap near the centroid.
pub fn classify(raw: &Tensor) -> Result<Option<Attrs>> {
    let [c, h, w] = match raw.shape() {
        &[c, h, w] => [c, h, w],
        s => return Err(Error::dim(format!("render must be [C, H, W], got {s:?}"))),
    };
    if c != RENDER_CHANNELS {
        return Err(Error::dim(format!("render needs {RENDER_CHANNELS} channels, got {c}")));
    }
    check_canvas(h, w)?;
    let d = raw.data();
    let plane = h * w;
    let mask: Vec<bool> = (0..plane).map(|i| d[3 * plane + i] > 0.5).collect();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(None);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut rgb = [0.0; 3];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sx += (i % w) as f64;
        sy += (i / w) as f64;
        for (ch, acc) in rgb.iter_mut().enumerate() {
            *acc += d[ch * plane + i];
        }
    }
    let (mx, my) = (sx / count as f64, sy / count as f64);
    let color = Color::ALL[(0..3).fold(0, |best, i| if rgb[i] > rgb[best] { i } else { best })];
    let position = *Position::ALL
        .iter()
        .min_by(|a, b| {
            let da = (mx - anchor(**a, w) as f64).abs();
            let db = (mx - anchor(**b, w) as f64).abs();
            da.total_cmp(&db)
        })
        .expect("three positions");
    // the triangle's centroid sits below its box centre
    let (rx, ry) = (mx.round() as i64, my.round() as i64);
    let mut best = (Shape::Circle, -1.0);
    for shape in Shape::ALL {
        for oy in -2..=2 {
            for ox in -1..=1 {
                let score = iou(&mask, h, w, shape, rx + ox, ry + oy);
                if score > best.1 {
                    best = (shape, score);
                }
            }
        }
    }
    Ok(Some(Attrs::new(best.0, color, position)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn areas_and_determinism() {
        let area = |s| {
            let r = render(Attrs::new(s, Color::Red, Position::Center), 16, 16, 1).unwrap();
            r.data()[3 * 256..].iter().sum::<f64>() as usize
        };
        assert_eq!(area(Shape::Square), 49);
        assert_eq!(area(Shape::Circle), 37);
        assert_eq!(area(Shape::Triangle), 25);
        let a = Attrs::from_index(7);
        assert!(render(a, 16, 16, 3).unwrap().bit_eq(&render(a, 16, 16, 3).unwrap()));
        assert!(render(a, 8, 8, 3).is_err());
    }

    #[test]
    fn classifier_inverts_every_render() {
        for a in Attrs::all() {
            for seed in 0..12 {
                let r = render(a, 16, 16, seed).unwrap();
                assert_eq!(classify(&r).unwrap(), Some(a), "seed {seed}");
            }
        }
        assert_eq!(classify(&Tensor::zeros(&[4, 16, 16])).unwrap(), None);
    }

    #[test]
    fn classifier_tolerates_mild_noise() {
        let mut rng = stream_rng(5, &[]);
        let mut hits = 0;
        for a in Attrs::all() {
            let r = render(a, 16, 16, 2).unwrap();
            let data = r.data().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
            let noisy = Tensor::new(r.shape(), data).unwrap();
            hits += (classify(&noisy).unwrap() == Some(a)) as usize;
        }
        assert_eq!(hits, 27);
    }
}
