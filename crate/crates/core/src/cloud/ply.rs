//! ASCII PLY export of sampled clouds for external viewers.

use std::io::Write;
use std::path::Path;

use crate::cloud::{KeyPointSet, SampledCloud};
use crate::error::{Error, Result};

/// Writes the cloud as ASCII PLY: one vertex per sample point carrying the
/// position, the density vector (nx/ny/nz), and a `key` property holding
/// the point's cluster id (−1 when unlabeled/noise). Keypoint centers are
/// listed as header comments so the vertex count stays equal to the cloud
/// size.
pub fn write_cloud_ply(
    path: impl AsRef<Path>,
    cloud: &SampledCloud,
    labels: Option<&[i32]>,
    keypoints: Option<&KeyPointSet>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(labels) = labels {
        if labels.len() != cloud.len() {
            return Err(Error::InvalidConfig(format!(
                "{} labels for {} points",
                labels.len(),
                cloud.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!(
        "comment sampling_interval {}\n",
        cloud.sampling_interval
    ));
    out.push_str(&format!("comment source_contour {}\n", cloud.source_contour));
    if let Some(kps) = keypoints {
        for (p, c) in kps.positions.iter().zip(&kps.member_counts) {
            out.push_str(&format!("comment keypoint {} {} {} {}\n", p.x, p.y, p.z, c));
        }
    }
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    out.push_str("property int key\nend_header\n");
    for i in 0..cloud.len() {
        let p = &cloud.points[i];
        let v = &cloud.vectors[i];
        let label = labels.map(|l| l[i]).unwrap_or(-1);
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            p.x, p.y, p.z, v.x, v.y, v.z, label
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
