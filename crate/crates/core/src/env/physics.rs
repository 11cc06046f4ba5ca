//! Quasi-static planar contact helpers.

pub type P2 = [f64; 2];

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: P2, b: P2) -> P2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: P2, k: f64) -> P2 {
    [a[0] * k, a[1] * k]
}

pub fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: P2, b: P2) -> f64 {
    norm(sub(a, b))
}

/// Axis-aligned rectangle centred on the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table {
    pub half_w: f64,
    pub half_h: f64,
}

impl Table {
    /// Clamps a disc of `radius` so it lies fully on the table.
    pub fn clamp(&self, p: P2, radius: f64) -> P2 {
        [
            p[0].clamp(-self.half_w + radius, self.half_w - radius),
            p[1].clamp(-self.half_h + radius, self.half_h - radius),
        ]
    }

    pub fn contains(&self, p: P2, radius: f64) -> bool {
        p[0].abs() <= self.half_w - radius + 1e-12 && p[1].abs() <= self.half_h - radius + 1e-12
    }
}

/// Moves `disc` out of `pusher` along the centre-to-centre normal when the
/// two overlap. Returns whether a contact was resolved.
pub fn push_out(pusher: P2, disc: &mut P2, min_dist: f64, fallback_dir: P2) -> bool {
    let d = sub(*disc, pusher);
    let n = norm(d);
    if n >= min_dist {
        return false;
    }
    let dir = if n > 1e-12 {
        scale(d, 1.0 / n)
    } else {
        let f = norm(fallback_dir);
        if f > 1e-12 {
            scale(fallback_dir, 1.0 / f)
        } else {
            [1.0, 0.0]
        }
    };
    *disc = add(pusher, scale(dir, min_dist));
    true
}

/// Separates two overlapping discs symmetrically.
pub fn separate(a: &mut P2, b: &mut P2, min_dist: f64) -> bool {
    let d = sub(*b, *a);
    let n = norm(d);
    if n >= min_dist {
        return false;
    }
    let dir = if n > 1e-12 { scale(d, 1.0 / n) } else { [1.0, 0.0] };
    let corr = 0.5 * (min_dist - n);
    *a = sub(*a, scale(dir, corr));
    *b = add(*b, scale(dir, corr));
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_out_along_normal() {
        let mut disc = [0.05, 0.0];
        assert!(push_out([0.03, 0.0], &mut disc, 0.045, [1.0, 0.0]));
        assert!((disc[0] - 0.075).abs() < 1e-15 && disc[1] == 0.0);
        assert!(!push_out([0.0, 0.0], &mut disc, 0.045, [1.0, 0.0]));
    }

    #[test]
    fn separate_is_symmetric() {
        let (mut a, mut b) = ([0.0, 0.0], [0.03, 0.0]);
        assert!(separate(&mut a, &mut b, 0.05));
        assert!((a[0] + 0.01).abs() < 1e-15 && (b[0] - 0.04).abs() < 1e-15);
    }
}
