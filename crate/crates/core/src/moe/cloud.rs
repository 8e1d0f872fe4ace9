use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub part_id: String,
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(part_id: &str, points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(format!("point cloud of part {part_id} is empty")));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "point cloud of part {part_id} has non-finite coordinates"
            )));
        }
        Ok(Self {
            part_id: part_id.into(),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points in lexicographic coordinate order, so that anything derived
    /// from the cloud ignores the order it was stored in.
    pub fn canonical(&self) -> Vec<[f64; 3]> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    UpSample,
    #[default]
    DownSample,
}

/// Exactly `k` points of `cloud`. Down-sampling draws without replacement;
/// up-sampling first doubles the cloud until it has at least `k` points.
pub fn resample(cloud: &PointCloud, k: usize, mode: ResampleMode, seed: u64) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::InvalidArgument("resample size must be at least 1".into()));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidArgument(format!("point cloud of part {} is empty", cloud.part_id)));
    }
    let mut pool = cloud.canonical();
    match mode {
        ResampleMode::DownSample if pool.len() < k => {
            return Err(Error::InvalidArgument(format!(
                "cannot down-sample part {} from {} to {k} points",
                cloud.part_id,
                pool.len()
            )))
        }
        ResampleMode::DownSample => {}
        ResampleMode::UpSample => {
            while pool.len() < k {
                pool.extend_from_within(..);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, pool.len(), k);
    Ok(PointCloud {
        part_id: cloud.part_id.clone(),
        points: picked.iter().map(|i| pool[i]).collect(),
    })
}

/// Resample size: the smallest cloud when down-sampling, the largest when
/// up-sampling.
pub fn choose_k_emb(clouds: &[PointCloud], mode: ResampleMode) -> Result<usize> {
    let sizes = clouds.iter().map(PointCloud::len);
    match mode {
        ResampleMode::DownSample => sizes.min(),
        ResampleMode::UpSample => sizes.max(),
    }
    .ok_or_else(|| Error::InvalidArgument("no point clouds".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cloud(n: usize) -> PointCloud {
        PointCloud::new("a", (0..n).map(|i| [i as f64, 0.5 * i as f64, 1.0]).collect()).unwrap()
    }

    fn count(c: &PointCloud, p: &[f64; 3]) -> usize {
        c.points.iter().filter(|q| *q == p).count()
    }

    #[test]
    fn down_sampling_draws_distinct_points() {
        let src = cloud(7);
        let out = resample(&src, 5, ResampleMode::DownSample, 1).unwrap();
        assert_eq!(out.len(), 5);
        for p in &out.points {
            assert_eq!(count(&out, p), 1);
            assert!(src.points.contains(p));
        }
    }

    #[test]
    fn up_sampling_doubles_then_draws() {
        let src = cloud(3);
        for seed in 0..20 {
            let out = resample(&src, 5, ResampleMode::UpSample, seed).unwrap();
            assert_eq!(out.len(), 5);
            for p in &src.points {
                let c = count(&out, p);
                assert!((1..=2).contains(&c));
            }
        }
    }

    #[test]
    fn full_down_sample_is_a_permutation() {
        let src = cloud(6);
        let mut out = resample(&src, 6, ResampleMode::DownSample, 3).unwrap().points;
        out.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(out, src.points);
    }

    #[test]
    fn too_small_for_down_sampling() {
        assert!(resample(&cloud(3), 5, ResampleMode::DownSample, 0).is_err());
    }

    #[test]
    fn resampling_ignores_point_order() {
        let src = cloud(9);
        let mut shuffled = src.clone();
        shuffled.points.reverse();
        shuffled.points.swap(0, 4);
        for mode in [ResampleMode::DownSample, ResampleMode::UpSample] {
            assert_eq!(resample(&src, 6, mode, 2).unwrap(), resample(&shuffled, 6, mode, 2).unwrap());
        }
    }

    #[test]
    fn k_emb_choice() {
        let clouds = vec![cloud(5000), cloud(7236), cloud(12000)];
        assert_eq!(choose_k_emb(&clouds, ResampleMode::DownSample).unwrap(), 5000);
        assert_eq!(choose_k_emb(&clouds, ResampleMode::UpSample).unwrap(), 12000);
        for mode in [ResampleMode::DownSample, ResampleMode::UpSample] {
            assert_eq!(choose_k_emb(&[cloud(9)], mode).unwrap(), 9);
        }
        assert!(choose_k_emb(&[], ResampleMode::UpSample).is_err());
    }

    #[test]
    fn invalid_clouds_are_rejected() {
        assert!(PointCloud::new("x", vec![]).is_err());
        assert!(PointCloud::new("x", vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }
}
