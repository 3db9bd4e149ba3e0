//! Hard NMS by repeated global search, in exact arithmetic.

use crate::{q, IBox, Q};
use num_traits::Zero;

pub fn iou(a: &IBox, b: &IBox) -> Q {
    let i = a.inter(b);
    let u = a.area() + b.area() - i;
    if u == 0 {
        Q::zero()
    } else {
        q(i, u)
    }
}

/// Clusters in the order they are formed; each starts with its kept box.
/// Each round takes the highest score left (lowest index on ties) and
/// removes everything overlapping it by more than `nt`.
pub fn clusters(boxes: &[(IBox, i64)], nt: &Q) -> Vec<Vec<usize>> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut out = Vec::new();
    while !alive.is_empty() {
        let mut top = alive[0];
        for &i in &alive {
            if boxes[i].1 > boxes[top].1 || (boxes[i].1 == boxes[top].1 && i < top) {
                top = i;
            }
        }
        let mut members = vec![top];
        alive.retain(|&i| {
            if i == top {
                return false;
            }
            let gone = iou(&boxes[i].0, &boxes[top].0) > *nt;
            if gone {
                members.push(i);
            }
            !gone
        });
        out.push(members);
    }
    out
}

/// Indices kept, best first.
pub fn hard_nms(boxes: &[(IBox, i64)], nt: &Q) -> Vec<usize> {
    clusters(boxes, nt).into_iter().map(|c| c[0]).collect()
}
