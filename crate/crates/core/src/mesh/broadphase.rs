use crate::math::Aabb;

/// Body count above which sweep-and-prune replaces the all-pairs test.
pub const SAP_THRESHOLD: usize = 64;

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Reference all-pairs overlap test.
pub fn broadphase_pairs_brute_force(bodies: &[(Aabb, usize)], margin: f64) -> Vec<(usize, usize)> {
    let boxes: Vec<Aabb> = bodies.iter().map(|(b, _)| b.inflate(margin)).collect();
    let mut out = Vec::new();
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            if boxes[i].overlaps(&boxes[j]) {
                out.push(ordered(bodies[i].1, bodies[j].1));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Pairs whose margin-inflated boxes overlap, each unordered pair once, sorted by id.
pub fn broadphase_pairs(bodies: &[(Aabb, usize)], margin: f64) -> Vec<(usize, usize)> {
    if bodies.len() <= SAP_THRESHOLD {
        return broadphase_pairs_brute_force(bodies, margin);
    }
    let boxes: Vec<Aabb> = bodies.iter().map(|(b, _)| b.inflate(margin)).collect();
    // Sweep along the axis of largest spread of box centres.
    let axis = {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for b in &boxes {
            let c = b.center();
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0)
    };
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[a].min[axis].total_cmp(&boxes[b].min[axis]).then(a.cmp(&b)));
    let mut active: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for &i in &order {
        let start = boxes[i].min[axis];
        active.retain(|&j| boxes[j].max[axis] >= start);
        for &j in &active {
            if boxes[i].overlaps(&boxes[j]) {
                out.push(ordered(bodies[i].1, bodies[j].1));
            }
        }
        active.push(i);
    }
    out.sort_unstable();
    out
}
