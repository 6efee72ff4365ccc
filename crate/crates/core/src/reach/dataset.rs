use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::sim::ReachScene;
use crate::error::{Error, Result};
use crate::model::{LatentPoint, PriorBox};
use crate::seed;
use crate::surrogate::Dataset;

pub const FORMAT_VERSION: u32 = 1;

/// Goals with their recorded trajectories, plus key=value metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReachDataset {
    pub goals: Vec<LatentPoint>,
    /// Flattened `x y z` samples, one vector per goal.
    pub trajectories: Vec<Vec<f64>>,
    pub meta: Vec<(String, String)>,
}

impl ReachDataset {
    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Training pairs for the surrogate.
    pub fn to_training(&self) -> Result<Dataset> {
        Dataset::new(self.goals.clone(), self.trajectories.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let m = self.trajectories.first().map_or(0, |t| t.len());
        let mut out = String::with_capacity(self.len() * (m + 2) * 22 + 64);
        out.push_str("# goal_x[m] goal_y[m]");
        for i in 0..m / 3 {
            let _ = write!(out, " x{i}[m] y{i}[m] z{i}[m]");
        }
        out.push('\n');
        for (g, t) in self.goals.iter().zip(&self.trajectories) {
            let mut first = true;
            for v in g.iter().chain(t) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let meta_path = meta_path(path);
        let mut meta = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(meta, "{k}={v}");
        }
        fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
    }

    /// Reads a dataset file; the metadata sidecar is optional.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ds = ReachDataset::default();
        let mut width = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() < 5 || (vals.len() - 2) % 3 != 0 {
                return Err(parse_err(format!("{} fields; expected 2 + 3k", vals.len())));
            }
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(parse_err(format!("{} fields; previous lines have {}", vals.len(), width.unwrap())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite value".into()));
            }
            ds.goals.push(vals[..2].to_vec().into());
            ds.trajectories.push(vals[2..].to_vec());
        }
        let mp = meta_path(path);
        if mp.exists() {
            let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    path: mp.clone(),
                    line: i + 1,
                    msg: "expected key=value".into(),
                })?;
                ds.meta.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        Ok(ds)
    }
}

/// Sidecar path: the dataset path with `.meta` appended.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

/// Simulates `n` trajectories to goals drawn uniformly from `bounds`,
/// discarding goals outside the reach annulus. Aborts once more than half of
/// the draws are unreachable.
pub fn generate_dataset(
    scene: &ReachScene,
    n: usize,
    bounds: &PriorBox,
    sigma_obs: f64,
    seed: u64,
) -> Result<ReachDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    if bounds.dim() != 2 {
        return Err(Error::invalid("goal bounds must be two-dimensional"));
    }
    scene.validate()?;
    let mut goal_rng = seed::rng_for(seed, 0);
    let mut ds = ReachDataset::default();
    let mut unreachable = 0usize;
    while ds.len() < n {
        let g = bounds.sample(&mut goal_rng);
        if !scene.is_reachable(&g) {
            unreachable += 1;
            if unreachable > n {
                return Err(Error::UnreachableBounds {
                    unreachable,
                    drawn: unreachable + ds.len(),
                    inner: scene.reach_inner,
                    outer: scene.reach_outer,
                });
            }
            continue;
        }
        let traj = scene.simulate(&g, sigma_obs, seed::derive(seed, 1 + ds.len() as u64))?;
        ds.trajectories.push(traj.flat());
        ds.goals.push(g);
    }
    ds.meta = scene_meta(scene);
    ds.meta.extend([
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("n".to_string(), n.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("sigma_obs".to_string(), sigma_obs.to_string()),
        (
            "goal_bounds".to_string(),
            format!("center={:?} radius={:?}", bounds.center(), bounds.radius()),
        ),
        ("unreachable_rejected".to_string(), unreachable.to_string()),
    ]);
    Ok(ds)
}

/// Key=value description of the arm, controller and protocol.
pub fn scene_meta(scene: &ReachScene) -> Vec<(String, String)> {
    let g = &scene.gains;
    let joints: Vec<String> = scene
        .arm
        .joints
        .iter()
        .map(|j| {
            format!(
                "{:?}:axis={:?}:offset={:?}:limits={:?}",
                j.kind,
                j.axis.as_slice(),
                j.offset.as_slice(),
                j.limits
            )
        })
        .collect();
    vec![
        ("arm_joints".into(), joints.join(";")),
        ("arm_tool".into(), format!("{:?}", scene.arm.tool.as_slice())),
        ("arm_theta_sec".into(), format!("{:?}", scene.arm.theta_sec)),
        ("init_theta".into(), format!("{:?}", scene.init_theta)),
        ("kp".into(), g.kp.to_string()),
        ("ki".into(), g.ki.to_string()),
        ("kd".into(), g.kd.to_string()),
        ("k_rep".into(), g.k_rep.to_string()),
        ("nullspace_gain".into(), g.nullspace_gain.to_string()),
        ("repulsion".into(), format!("{:?}", g.repulsion)),
        ("damping".into(), g.damping.to_string()),
        ("v_max".into(), g.v_max.to_string()),
        ("samples".into(), scene.sim.samples.to_string()),
        ("rate_hz".into(), scene.sim.rate_hz.to_string()),
        ("substeps".into(), scene.sim.substeps.to_string()),
        ("converge_tol".into(), scene.sim.converge_tol.to_string()),
        ("table_height".into(), scene.table_height.to_string()),
        ("reach_inner".into(), scene.reach_inner.to_string()),
        ("reach_outer".into(), scene.reach_outer.to_string()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_round_trip() {
        let scene = ReachScene::default();
        let ds = generate_dataset(&scene, 1, &scene.table, 0.0, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        ds.save(&path).unwrap();
        let back = ReachDataset::load(&path).unwrap();
        assert_eq!(back, ds);
        let t = scene.simulate(&back.goals[0], 0.0, 0).unwrap();
        assert_eq!(t.flat(), back.trajectories[0]);
        assert_eq!(back.meta_value("format_version"), Some("1"));
    }

    #[test]
    fn seeds_change_goals() {
        let scene = ReachScene::default();
        let a = generate_dataset(&scene, 3, &scene.table, 0.0, 1).unwrap();
        let b = generate_dataset(&scene, 3, &scene.table, 0.0, 2).unwrap();
        assert_ne!(a.goals, b.goals);
        assert_eq!(a, generate_dataset(&scene, 3, &scene.table, 0.0, 1).unwrap());
    }

    #[test]
    fn unreachable_bounds_abort() {
        let scene = ReachScene::default();
        let far = PriorBox::cube(vec![10.0, 10.0], 1.0).unwrap();
        assert!(matches!(
            generate_dataset(&scene, 5, &far, 0.0, 0),
            Err(Error::UnreachableBounds { .. })
        ));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "# header\n1 2 3 4 5\n1 2 3 x 5\n").unwrap();
        match ReachDataset::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "1 2 3 4 5\n1 2 3\n").unwrap();
        assert!(matches!(ReachDataset::load(&path), Err(Error::Parse { line: 2, .. })));
    }
}
