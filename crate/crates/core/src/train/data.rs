use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SceneSource;
use crate::error::{Error, Result};
use crate::math::Mat3;
use crate::real::Real;
use crate::render::Image;
use crate::scene::{init_gaussians, load_ply, ply::write_points_ascii, synth_scene_with, Camera, GaussianSet, InitConfig};

/// Training views plus the initial Gaussians.
pub struct Dataset<T> {
    pub init: GaussianSet<T>,
    pub cameras: Vec<Camera<T>>,
    pub images: Vec<Image<T>>,
    /// Known for synthetic scenes only.
    pub truth: Option<GaussianSet<T>>,
}

impl<T: Real> Dataset<T> {
    /// `1.1 ×` the largest camera distance from the mean camera center.
    pub fn scene_extent(&self) -> f64 {
        let centers: Vec<[f64; 3]> = self.cameras.iter().map(|c| c.center().map(|x| x.f64())).collect();
        let n = centers.len().max(1) as f64;
        let mean: [f64; 3] = std::array::from_fn(|a| centers.iter().map(|c| c[a]).sum::<f64>() / n);
        let r = centers
            .iter()
            .map(|c| (0..3).map(|a| (c[a] - mean[a]).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        1.1 * r.max(1e-6)
    }

    /// Indices of training and held-out views; every `every`-th view is held out.
    pub fn holdout(&self, every: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.cameras.len()).partition(|i| i % every != every - 1)
    }
}

/// One camera of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub rot: Mat3<f64>,
    pub trans: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    /// Image file relative to the dataset directory.
    pub image: String,
}

fn default_near() -> f64 {
    0.01
}

fn default_far() -> f64 {
    100.0
}

pub fn load_dataset<T: Real>(source: &SceneSource, sh_degree: u8) -> Result<Dataset<T>> {
    match source {
        SceneSource::Synth(cfg) => {
            let mut cfg = cfg.clone();
            cfg.init.sh_degree = sh_degree;
            let s = synth_scene_with::<T>(&cfg);
            Ok(Dataset {
                init: s.init,
                cameras: s.cameras,
                images: s.images,
                truth: Some(s.truth),
            })
        }
        SceneSource::Dataset(dir) => load_dir(dir, sh_degree),
    }
}

fn load_dir<T: Real>(dir: &Path, sh_degree: u8) -> Result<Dataset<T>> {
    let cam_path = dir.join("cameras.json");
    let text = std::fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?;
    let records: Vec<CameraRecord> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", cam_path.display())))?;
    let mut cameras = Vec::with_capacity(records.len());
    let mut images = Vec::with_capacity(records.len());
    for r in &records {
        let f = T::c;
        let cam = Camera::new(
            r.rot.map(|row| row.map(f)),
            r.trans.map(f),
            f(r.fx),
            f(r.fy),
            f(r.cx),
            f(r.cy),
            r.width,
            r.height,
            f(r.near),
            f(r.far),
        )?;
        let img = Image::<T>::load_png(&dir.join(&r.image))?;
        if (img.width, img.height) != (r.width, r.height) {
            return Err(Error::Config(format!(
                "{} is {}x{}, camera says {}x{}",
                r.image, img.width, img.height, r.width, r.height
            )));
        }
        cameras.push(cam);
        images.push(img);
    }
    let points = load_ply(dir.join("points.ply"))?;
    let init = init_gaussians(
        &points,
        &InitConfig {
            sh_degree,
            ..InitConfig::default()
        },
    );
    Ok(Dataset {
        init,
        cameras,
        images,
        truth: None,
    })
}

/// Writes a dataset directory readable by [`load_dataset`]. Points are the
/// initial Gaussian means.
pub fn write_dataset<T: Real>(dir: &Path, data: &Dataset<T>, points: &crate::scene::PointCloud) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(data.cameras.len());
    for (i, (c, img)) in data.cameras.iter().zip(&data.images).enumerate() {
        let name = format!("view_{i:04}.png");
        img.save_png(&dir.join(&name))?;
        let f = |x: T| x.f64();
        records.push(CameraRecord {
            rot: c.rot.map(|r| r.map(f)),
            trans: c.trans.map(f),
            fx: f(c.fx),
            fy: f(c.fy),
            cx: f(c.cx),
            cy: f(c.cy),
            width: c.width,
            height: c.height,
            near: f(c.near),
            far: f(c.far),
            image: name,
        });
    }
    let p = dir.join("cameras.json");
    std::fs::write(&p, serde_json::to_string_pretty(&records)?).map_err(|e| Error::io(&p, e))?;
    write_points_ascii(dir.join("points.ply"), points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_scene_with, SynthConfig};

    #[test]
    fn holdout_takes_every_eighth_view() {
        let d = load_dataset::<f32>(
            &SceneSource::Synth(SynthConfig {
                gaussians: 50,
                cameras: 16,
                width: 8,
                height: 8,
                ..Default::default()
            }),
            1,
        )
        .unwrap();
        let (train, test) = d.holdout(8);
        assert_eq!(test, vec![7, 15]);
        assert_eq!(train.len(), 14);
        assert!(d.scene_extent() > 0.0);
    }

    #[test]
    fn dataset_directory_round_trip() {
        let cfg = SynthConfig {
            gaussians: 60,
            cameras: 3,
            width: 16,
            height: 12,
            ..Default::default()
        };
        let s = synth_scene_with::<f32>(&cfg);
        let data = Dataset {
            init: s.init.clone(),
            cameras: s.cameras.clone(),
            images: s.images.clone(),
            truth: None,
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data, &s.points).unwrap();
        let back = load_dataset::<f32>(&SceneSource::Dataset(dir.path().to_path_buf()), 1).unwrap();
        assert_eq!(back.cameras.len(), 3);
        assert_eq!(back.init.len(), 60);
        for (a, b) in back.cameras.iter().zip(&s.cameras) {
            assert!((a.fx - b.fx).abs() < 1e-4 && a.width == b.width);
        }
        for (a, b) in back.images.iter().zip(&s.images) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
}
