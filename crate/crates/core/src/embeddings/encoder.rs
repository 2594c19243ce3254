//! Synthetic eye-in-hand scene encoder. Renders a grid of local patch
//! descriptors (visible object class and coarse image region, viewing
//! distance, occlusion) and maps them through a fixed random projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::SceneObject;
use super::{Observation, SceneState, SourceMeta};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EncoderConfig {
    /// Patch grid side; the frame has `grid * grid` patches.
    pub grid: usize,
    pub dim: usize,
    pub heads: usize,
    /// Per-component noise std on unit-normalized patch vectors.
    pub noise_sigma: f64,
    /// Full field of view, degrees.
    pub fov_deg: f64,
    /// Coarse region grid side folded into each descriptor.
    pub regions: usize,
    pub projection_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            grid: 16,
            dim: 384,
            heads: 6,
            noise_sigma: 0.05,
            fov_deg: 60.0,
            regions: 4,
            projection_seed: 0x5EED_CAFE,
        }
    }
}

impl EncoderConfig {
    pub fn patches(&self) -> usize {
        self.grid * self.grid
    }
}

const KNOWN_LABELS: &[&str] =
    &["background", "door:open", "door:closed", "peg", "probe", "bowl", "cable_post", "cable_end"];
const VOCAB: usize = 16;
const DISTANCE_WEIGHT: f32 = 0.3;
const OCCLUSION_WEIGHT: f32 = 0.5;
const NO_HIT_DISTANCE: f64 = 2.0;

fn label_slot(label: &str) -> usize {
    if let Some(i) = KNOWN_LABELS.iter().position(|l| *l == label) {
        return i;
    }
    let h = label.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    KNOWN_LABELS.len() + (h as usize) % (VOCAB - KNOWN_LABELS.len())
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn mix_seed(seed: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    words.into_iter().fold(splitmix(seed), |acc, w| splitmix(acc ^ w))
}

/// Descriptor of one patch after ray casting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PatchHit {
    pub slot: usize,
    pub distance: f64,
    pub occluded: bool,
    pub object: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    config: EncoderConfig,
    /// Row-major `descriptor_dim × dim`.
    projection: Vec<f32>,
}

impl SyntheticEncoder {
    pub fn new(config: EncoderConfig) -> Self {
        let desc = Self::descriptor_dim_for(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.projection_seed);
        let scale = 1.0 / (config.dim as f32).sqrt();
        let projection = (0..desc * config.dim)
            .map(|_| {
                let z: f32 = rng.sample(StandardNormal);
                z * scale
            })
            .collect();
        Self { config, projection }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn descriptor_dim_for(config: &EncoderConfig) -> usize {
        VOCAB * config.regions * config.regions + 2
    }

    fn column(&self, row: usize) -> &[f32] {
        &self.projection[row * self.config.dim..(row + 1) * self.config.dim]
    }

    /// Ray-casts every patch centre from the camera onto the horizontal
    /// object discs and the table plane.
    pub(crate) fn render(&self, scene: &SceneState, camera: &Pose) -> Vec<PatchHit> {
        let g = self.config.grid;
        let half = (self.config.fov_deg.to_radians() / 2.0).tan();
        let objects: Vec<(SceneObject, usize)> = scene
            .objects()
            .into_iter()
            .map(|o| {
                let s = label_slot(&o.label);
                (o, s)
            })
            .collect();
        let mut hits = Vec::with_capacity(g * g);
        for i in 0..g {
            for j in 0..g {
                let u = ((j as f64 + 0.5) / g as f64) * 2.0 - 1.0;
                let v = ((i as f64 + 0.5) / g as f64) * 2.0 - 1.0;
                let dir = camera.rotate(&[u * half, v * half, 1.0]);
                let o = camera.position;
                let mut nearest: Option<(f64, usize)> = None;
                let mut count = 0;
                if dir[2].abs() > 1e-12 {
                    for (obj, slot) in &objects {
                        let s = (obj.pose.position[2] - o[2]) / dir[2];
                        if s <= 0.0 {
                            continue;
                        }
                        let px = o[0] + s * dir[0] - obj.pose.position[0];
                        let py = o[1] + s * dir[1] - obj.pose.position[1];
                        if px * px + py * py <= obj.radius * obj.radius {
                            count += 1;
                            if nearest.is_none_or(|(best, _)| s < best) {
                                nearest = Some((s, *slot));
                            }
                        }
                    }
                }
                let len = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
                let hit = match nearest {
                    Some((s, slot)) => PatchHit { slot, distance: s * len, occluded: count > 1, object: true },
                    None => {
                        let s = if dir[2] < -1e-12 { -o[2] / dir[2] } else { f64::INFINITY };
                        let distance =
                            if s.is_finite() && s > 0.0 { (s * len).min(NO_HIT_DISTANCE) } else { NO_HIT_DISTANCE };
                        PatchHit { slot: 0, distance, occluded: false, object: false }
                    }
                };
                hits.push(hit);
            }
        }
        hits
    }

    /// Renders the scene from `camera`. Deterministic in (scene, camera, seed).
    pub fn encode_scene(&self, scene: &SceneState, camera: &Pose) -> Observation {
        let cfg = &self.config;
        let (g, dim, r) = (cfg.grid, cfg.dim, cfg.regions);
        let hits = self.render(scene, camera);
        let words = camera.position.iter().chain(camera.orientation.iter()).map(|v| v.to_bits());
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scene.seed, words));
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");

        let base = VOCAB * r * r;
        let mut embeddings = Vec::with_capacity(g * g * dim);
        let mut patch = vec![0f32; dim];
        for (k, hit) in hits.iter().enumerate() {
            let region = ((k / g) * r / g) * r + (k % g) * r / g;
            patch.copy_from_slice(self.column(hit.slot * r * r + region));
            let d = (hit.distance / NO_HIT_DISTANCE) as f32 * DISTANCE_WEIGHT;
            for (p, c) in patch.iter_mut().zip(self.column(base)) {
                *p += d * c;
            }
            if hit.occluded {
                for (p, c) in patch.iter_mut().zip(self.column(base + 1)) {
                    *p += OCCLUSION_WEIGHT * c;
                }
            }
            let n = patch.iter().map(|v| v * v).sum::<f32>().sqrt();
            for p in patch.iter_mut() {
                *p = *p / n + noise.sample(&mut rng) as f32;
            }
            embeddings.extend_from_slice(&patch);
        }

        let attention = (cfg.heads > 0).then(|| {
            let mut rows = Vec::with_capacity(cfg.heads * hits.len());
            for h in 0..cfg.heads {
                let beta = 1.5 + 0.5 * h as f64;
                let mut row: Vec<f64> = hits
                    .iter()
                    .map(|hit| {
                        let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * 0.1;
                        (beta * if hit.object { 1.0 } else { 0.0 } + jitter).exp()
                    })
                    .collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|a| *a /= sum);
                rows.extend(row.into_iter().map(|a| a as f32));
            }
            (cfg.heads, rows)
        });
        Observation::new(g * g, dim, embeddings, attention, SourceMeta { provider: "synthetic".into(), key: None })
            .expect("encoder emits well-formed observations")
    }

    /// Label of the object each patch ray hits first, row-major; empty for
    /// the table.
    pub fn patch_labels(&self, scene: &SceneState, camera: &Pose) -> Vec<String> {
        let objects = scene.objects();
        self.render(scene, camera)
            .iter()
            .map(|h| match h.object {
                true => {
                    objects.iter().find(|o| label_slot(&o.label) == h.slot).map(|o| o.label.clone()).unwrap_or_default()
                }
                false => String::new(),
            })
            .collect()
    }

    /// True when any patch ray hits the named object.
    pub fn sees(&self, scene: &SceneState, camera: &Pose, object: &str) -> bool {
        let Some(obj) = scene.objects().into_iter().find(|o| o.name == object) else {
            return false;
        };
        let slot = label_slot(&obj.label);
        // Render just this object so that occluders do not hide it.
        let mut only = scene.clone();
        only.object_poses.retain(|name, _| name == object);
        self.render(&only, camera).iter().any(|h| h.object && h.slot == slot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{cosine, pool, PoolMode};

    fn small() -> SyntheticEncoder {
        SyntheticEncoder::new(EncoderConfig { grid: 8, dim: 64, heads: 2, ..EncoderConfig::default() })
    }

    fn camera() -> Pose {
        Pose::looking_down([0.0, 0.0, 0.45])
    }

    #[test]
    fn deterministic_bitwise() {
        let enc = small();
        let s = SceneState::taskboard(&[("peg", "A"), ("door", "open")], 7).unwrap();
        let a = enc.encode_scene(&s, &camera());
        let b = enc.encode_scene(&s, &camera());
        assert_eq!(a, b);
        assert_eq!(a.patches(), 64);
        assert_eq!(a.heads(), 2);
        let c = enc.encode_scene(&s.with_seed(8), &camera());
        assert_ne!(a.embeddings(), c.embeddings());
    }

    #[test]
    fn patch_labels_follow_visibility() {
        let enc = small();
        let s = SceneState::taskboard(&[("peg", "A"), ("door", "open")], 7).unwrap();
        let labels = enc.patch_labels(&s, &camera());
        assert_eq!(labels.len(), 64);
        assert_eq!(labels.iter().any(|l| l == "door:open"), enc.sees(&s, &camera(), "door"));
        assert!(labels.iter().any(|l| l.is_empty()));
    }

    #[test]
    fn out_of_frustum_objects_render_nothing() {
        let enc = small();
        let mut far = SceneState::taskboard(&[("door", "open")], 1).unwrap();
        far.object_poses.get_mut("door").unwrap().position = [0.7, 0.7, 0.02];
        let mut closed = far.clone();
        closed.set_factor("door", "closed").unwrap();
        assert!(!enc.sees(&far, &camera(), "door"));
        // identical descriptors, identical noise: bitwise identical frames
        assert_eq!(enc.encode_scene(&far, &camera()), enc.encode_scene(&closed, &camera()));
        let near = SceneState::taskboard(&[("door", "open")], 1).unwrap();
        assert!(enc.sees(&near, &camera(), "door"));
    }

    #[test]
    fn attention_concentrates_on_objects() {
        let enc = small();
        let s = SceneState::taskboard(&[("peg", "A"), ("door", "open"), ("probe", "B")], 3).unwrap();
        let obs = enc.encode_scene(&s, &camera());
        let hits = enc.render(&s, &camera());
        let row = obs.attention_row(1).unwrap();
        let on: f32 = row.iter().zip(&hits).filter(|(_, h)| h.object).map(|(a, _)| a).sum();
        let n_on = hits.iter().filter(|h| h.object).count();
        assert!(n_on > 0);
        assert!(on > n_on as f32 / hits.len() as f32 * 2.0, "object mass {on}");
        let sum: f32 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn visible_factor_changes_pooled_embedding() {
        let enc = small();
        let a = SceneState::taskboard(&[("peg", "A")], 0).unwrap();
        let b = SceneState::taskboard(&[("peg", "absent")], 0).unwrap();
        let pa = pool(&enc.encode_scene(&a, &camera()), PoolMode::Mean);
        let pa2 = pool(&enc.encode_scene(&a.with_seed(1), &camera()), PoolMode::Mean);
        let pb = pool(&enc.encode_scene(&b.with_seed(2), &camera()), PoolMode::Mean);
        assert!(cosine(&pa, &pa2).unwrap() > cosine(&pa, &pb).unwrap());
    }
}
