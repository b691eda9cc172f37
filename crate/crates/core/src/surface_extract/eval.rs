use super::SegmentedArm;
use crate::arm_scene::{ArmTemplate, PixelIndex, Rendered, Segment};
use crate::geom::{KdTree, PointCloud};
use crate::PointCloud3;

/// Arm surface samples seen by the camera between shoulder and wrist.
#[derive(Debug, Clone)]
pub struct GroundTruthSurface {
    pub cloud: PointCloud3,
    pub labels: Vec<Segment>,
}

pub fn visible_ground_truth(rendered: &Rendered, posed: &ArmTemplate) -> GroundTruthSurface {
    let (lo, hi) = (posed.params.x_shoulder(), posed.params.x_wrist());
    let mut owners: Vec<u32> = rendered.owner.iter().copied().filter(|&o| o != u32::MAX).collect();
    owners.sort_unstable();
    owners.dedup();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for o in owners {
        let ax = posed.surface_axial[o as usize];
        if (lo..=hi).contains(&ax) {
            pts.push(posed.surface.points[o as usize]);
            labels.push(posed.segment_of_axial(ax));
        }
    }
    GroundTruthSurface {
        cloud: PointCloud::new(pts),
        labels,
    }
}

/// Fraction of extracted arm pixels whose segment matches the label of the
/// surface sample that rendered them.
pub fn label_accuracy(arm: &SegmentedArm, rendered: &Rendered, posed: &ArmTemplate) -> f64 {
    let w = rendered.image.width;
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut tally = |px: &[PixelIndex], want: Segment| {
        for &(r, c) in px {
            let o = rendered.owner[r * w + c];
            if o == u32::MAX {
                continue;
            }
            total += 1;
            if posed.segment_of_axial(posed.surface_axial[o as usize]) == want {
                hits += 1;
            }
        }
    };
    tally(&arm.forearm_pixels, Segment::Forearm);
    tally(&arm.upperarm_pixels, Segment::UpperArm);
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Average symmetric surface distance: the mean of the two directed mean
/// closest-point distances.
pub fn surface_distance(a: &PointCloud3, b: &PointCloud3) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let directed = |from: &PointCloud3, to: &PointCloud3| {
        let tree = KdTree::from_cloud(to);
        from.points.iter().map(|p| tree.nearest(p).unwrap().distance).sum::<f64>() / from.len() as f64
    };
    Some(0.5 * (directed(a, b) + directed(b, a)))
}
